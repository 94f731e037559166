use std::fs;
use std::path::{Path, PathBuf};

use svgp_core::data::{self, FilterThresholds, Orientation};
use svgp_core::diagnostics::{self, WeightMatrix, WeightScheme};
use svgp_core::inference::{self, SelectionRule};
use svgp_core::mcmc::{self, LambdaProposal, LengthScalePrior, Likelihood};
use svgp_core::rng::chain_seed;
use svgp_core::simulate::{self, PatternSpec, SimConfig};
use svgp_core::{
    ChainTrace, CountMatrix, DesignMatrix, Error, Hyperparameters, Model, Result, SamplerConfig, SizeFactors,
    SpatialCoords,
};

use crate::settings::{parse_config, Settings, RUN_KEYS};

pub const MANIFEST: &str = "manifest.txt";
pub const RESULTS: &str = "results.tsv";
pub const TRACE_DIR: &str = "traces";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io(path))
}

fn out_dir(s: &Settings) -> Result<PathBuf> {
    let out = PathBuf::from(s.required("out")?);
    fs::create_dir_all(&out).map_err(io(&out))?;
    Ok(out)
}

fn absolute(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).map_err(io(path))
}

fn version_line(command: &str) -> String {
    format!("svgp {} {command}", env!("CARGO_PKG_VERSION"))
}

/// Counts and coordinates after alignment and filtering, with size factors.
struct Prepared {
    counts: CountMatrix,
    coords: SpatialCoords,
    s: SizeFactors,
}

fn prepare(s: &Settings, counts_path: &Path, coords_path: &Path) -> Result<Prepared> {
    let orientation = if s.bool("genes-in-rows")? {
        Orientation::GenesInRows
    } else {
        Orientation::GenesInColumns
    };
    let counts = data::load_counts(counts_path, orientation, None)?;
    let coords = data::load_coords(coords_path)?.aligned_to(counts.spot_ids())?;
    let thresholds = FilterThresholds {
        min_spot_total: s.u64("min-spot-total")?,
        min_gene_nonzero_frac: s.f64("min-gene-frac")?,
    };
    let (counts, coords) = data::filter(&counts, &coords, thresholds)?;
    let sf = if s.bool("set-size-factors-one")? {
        SizeFactors::ones(counts.n_spots())
    } else {
        data::compute_size_factors(&counts)?
    };
    Ok(Prepared { counts, coords, s: sf })
}

fn hyperparameters(s: &Settings) -> Result<Hyperparameters> {
    let l_prior = match s.choice("l-prior", &["uniform", "gamma"])? {
        "uniform" => LengthScalePrior::Uniform,
        _ => LengthScalePrior::Gamma {
            shape: s.f64("l-prior-shape")?,
            rate: s.f64("l-prior-rate")?,
        },
    };
    let hp = Hyperparameters {
        a_pi: s.f64("a-pi")?,
        b_pi: s.f64("b-pi")?,
        a_phi: s.f64("a-phi")?,
        b_phi: s.f64("b-phi")?,
        a_omega: s.f64("a-omega")?,
        b_omega: s.f64("b-omega")?,
        a_sigma: s.f64("a-sigma")?,
        b_sigma: s.f64("b-sigma")?,
        h: s.f64("h")?,
        tau_phi: s.f64("tau-phi")?,
        tau_lambda: s.auto_f64("tau-lambda")?,
        tau_l: s.auto_f64("tau-l")?,
        l_prior,
        vague_omega: s.bool("vague-omega")?,
    };
    hp.validate()?;
    Ok(hp)
}

fn sampler_config(s: &Settings) -> Result<SamplerConfig> {
    let cfg = SamplerConfig {
        n_iter: s.usize("iters")?,
        burn_in_frac: s.f64("burn-in")?,
        thin: s.usize("thin")?,
        lambda_proposal: match s.choice("lambda-proposal", &["natural", "log"])? {
            "natural" => LambdaProposal::Natural,
            _ => LambdaProposal::Log,
        },
        likelihood: if s.bool("prior-only")? {
            Likelihood::PriorOnly
        } else {
            Likelihood::Full
        },
        bf_reference_l: s.auto_f64("bf-reference-l")?,
        cache_capacity: s.usize("cache-capacity")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn selection_rule(s: &Settings) -> Result<SelectionRule> {
    let rule = SelectionRule {
        alpha: s.f64("alpha")?,
        ppi_cutoff: s.f64("ppi-cutoff")?,
    };
    if !(rule.alpha > 0.0 && rule.alpha < 1.0) || !(0.0..=1.0).contains(&rule.ppi_cutoff) {
        return Err(Error::Validation("alpha must be in (0, 1) and the PPI cutoff in [0, 1]".into()));
    }
    Ok(rule)
}

pub fn configure_threads(s: &Settings) -> Result<()> {
    let threads = s.usize("threads")?;
    if threads > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok(())
}

pub fn run(mut s: Settings) -> Result<()> {
    let counts_path = absolute(Path::new(s.required("counts")?))?;
    let coords_path = absolute(Path::new(s.required("coords")?))?;
    s.set("counts", counts_path.display().to_string());
    s.set("coords", coords_path.display().to_string());
    let design_path = match s.path("design") {
        Some(p) => {
            let p = absolute(&p)?;
            s.set("design", p.display().to_string());
            Some(p)
        }
        None => None,
    };
    let hp = hyperparameters(&s)?;
    let cfg = sampler_config(&s)?;
    let rule = selection_rule(&s)?;
    let n_chains = s.usize("chains")?;
    if n_chains == 0 {
        return Err(Error::Validation("--chains must be at least 1".into()));
    }
    let base_seed = s.u64("seed")?;
    let write_traces = s.bool("write-traces")?;
    configure_threads(&s)?;
    let out = out_dir(&s)?;

    let seeds: Vec<u64> = (0..n_chains).map(|k| chain_seed(base_seed, k)).collect();
    let header = vec![
        version_line("run"),
        format!(
            "chain seeds: {}",
            seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(", ")
        ),
    ];
    write_text(&out.join(MANIFEST), &s.to_config(&header))?;

    let data = prepare(&s, &counts_path, &coords_path)?;
    log::info!(
        "{} spots and {} genes after filtering",
        data.counts.n_spots(),
        data.counts.n_genes()
    );
    let design = match &design_path {
        Some(p) => data::load_design(p, data.counts.spot_ids())?,
        None => DesignMatrix::intercept(data.counts.n_spots()),
    };
    let model = Model::new(&data.counts, &data.coords, design, &data.s, hp, cfg.cache_capacity)?;
    let traces = mcmc::run_multichain(&model, &cfg, &seeds)?;
    let rows = inference::summarize(&traces, rule)?;
    inference::write_results(out.join(RESULTS), &rows)?;
    if write_traces {
        let dir = out.join(TRACE_DIR);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        for t in &traces {
            mcmc::write_trace(dir.join(format!("chain{}.trace", t.chain)), t)?;
        }
    }
    let selected = rows.iter().filter(|r| r.selected).count();
    println!("selected {selected} of {} genes", rows.len());
    Ok(())
}

fn load_mask(path: &Path, n: usize) -> Result<Vec<bool>> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let mut mask = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let label = line.trim();
        if label.is_empty() {
            continue;
        }
        mask.push(match label.to_ascii_lowercase().as_str() {
            "high" | "1" | "true" => true,
            "low" | "0" | "false" => false,
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: k + 1,
                    column: 1,
                    message: format!("'{label}' is not a high/low label"),
                })
            }
        });
    }
    if mask.len() != n {
        return Err(Error::Validation(format!("mask has {} labels for {n} spots", mask.len())));
    }
    Ok(mask)
}

pub fn simulate(mut s: Settings) -> Result<()> {
    let pattern = s.choice("pattern", &["spot", "linear", "binary-mask"])?;
    let mut spec = match pattern {
        "spot" => PatternSpec::spot(),
        "linear" => PatternSpec::linear(),
        _ => {
            let coords_path = absolute(Path::new(s.required("coords")?))?;
            let mask_path = absolute(Path::new(s.required("mask")?))?;
            s.set("coords", coords_path.display().to_string());
            s.set("mask", mask_path.display().to_string());
            let coords = data::load_coords(&coords_path)?;
            let mask = load_mask(&mask_path, coords.len())?;
            PatternSpec::binary_mask(coords, mask)
        }
    };
    if let Some(fc) = s.auto_f64("fold-change")? {
        spec.fold_change = fc;
    }
    spec.radius = s.f64("radius")?;
    spec.side = s.usize("side")?;
    if spec.side < 2 {
        return Err(Error::Validation("--side must be at least 2".into()));
    }
    let cfg = SimConfig {
        n_genes: s.usize("genes")?,
        n_sv: s.usize("sv-genes")?,
        beta_baseline: s.f64("baseline")?,
        noise_sd: s.f64("noise-sd")?,
        size_factor_sd: s.f64("size-factor-sd")?,
        dispersion_mean: s.f64("dispersion-mean")?,
        false_zero_frac: s.f64("false-zero")?,
        seed: s.u64("seed")?,
    };
    let out = out_dir(&s)?;
    let ds = simulate::generate_dataset(&spec, &cfg)?;
    data::write_counts(out.join("counts.tsv"), &ds.counts)?;
    data::write_coords(out.join("coords.tsv"), &ds.coords)?;
    let mut truth = String::from("gene_id\tis_sv\n");
    for (g, t) in ds.counts.gene_ids().iter().zip(&ds.truth) {
        truth.push_str(&format!("{g}\t{}\n", *t as u8));
    }
    write_text(&out.join("truth.tsv"), &truth)?;
    write_text(&out.join(MANIFEST), &s.to_config(&[version_line("simulate")]))?;
    println!(
        "wrote {} spots x {} genes ({} SV) to {}",
        ds.counts.n_spots(),
        ds.counts.n_genes(),
        cfg.n_sv,
        out.display()
    );
    Ok(())
}

fn load_traces(run_dir: &Path) -> Result<Vec<ChainTrace>> {
    let dir = run_dir.join(TRACE_DIR);
    let mut paths: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "trace"))
            .collect(),
        Err(_) => Vec::new(),
    };
    if paths.is_empty() {
        return Err(Error::Validation(format!("no trace files in {}", dir.display())));
    }
    paths.sort();
    let mut traces = paths.iter().map(mcmc::read_trace).collect::<Result<Vec<_>>>()?;
    traces.sort_by_key(|t| t.chain);
    Ok(traces)
}

/// Posterior-mean log expression pooled over chains, gene-major.
fn pooled_mean_log_lambda(traces: &[ChainTrace]) -> Result<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut total = 0.0;
    for t in traces {
        let Some(mean) = t.mean_log_lambda() else { continue };
        let w = t.snapshots.len() as f64;
        let a = acc.get_or_insert_with(|| vec![0.0; mean.len()]);
        for (x, m) in a.iter_mut().zip(&mean) {
            *x += w * m;
        }
        total += w;
    }
    let mut acc = acc.ok_or_else(|| Error::Validation("traces hold no expression snapshots".into()))?;
    acc.iter_mut().for_each(|x| *x /= total);
    Ok(acc)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("NA".to_string(), |x| x.to_string())
}

pub fn diagnose(s: Settings) -> Result<()> {
    let run_dir = PathBuf::from(s.required("run")?);
    let traces = load_traces(&run_dir)?;
    let manifest_path = run_dir.join(MANIFEST);
    let manifest_text = fs::read_to_string(&manifest_path).map_err(io(&manifest_path))?;
    let run = Settings::from_map(RUN_KEYS, parse_config(&manifest_text, RUN_KEYS, &manifest_path)?);
    let from_run = |key: &str| -> Result<PathBuf> {
        match s.get(key) {
            Some("auto") | None => Ok(PathBuf::from(run.required(key)?)),
            Some(p) => Ok(PathBuf::from(p)),
        }
    };
    let out = match s.get("out") {
        Some("auto") | None => run_dir.clone(),
        Some(p) => PathBuf::from(p),
    };
    fs::create_dir_all(&out).map_err(io(&out))?;

    let first = &traces[0];
    let (n, p) = (first.n_spots(), first.n_genes());
    let coords = data::load_coords(from_run("coords")?)?.aligned_to(&first.spot_ids)?;
    let scheme = match s.choice("weights", &["gaussian", "knn"])? {
        "gaussian" => WeightScheme::Gaussian {
            bandwidth: s.auto_f64("bandwidth")?,
        },
        _ => WeightScheme::Knn(s.usize("knn")?),
    };
    let w = WeightMatrix::build(&coords, scheme)?;
    let values: Vec<f64> = match s.choice("values", &["posterior", "raw"])? {
        "posterior" => pooled_mean_log_lambda(&traces)?,
        _ => {
            let data = prepare(&run, &from_run("counts")?, &from_run("coords")?)?;
            let mut v = Vec::with_capacity(n * p);
            for gene in &first.gene_ids {
                let j = data
                    .counts
                    .gene_ids()
                    .iter()
                    .position(|g| g == gene)
                    .ok_or_else(|| Error::Validation(format!("gene {gene} is not in the filtered counts")))?;
                let col = data.counts.gene_column(j);
                v.extend(col.iter().zip(data.s.as_slice()).map(|(&y, s)| (y as f64 / s).ln_1p()));
            }
            v
        }
    };
    if values.len() != n * p {
        return Err(Error::Validation("trace dimensions do not match the data".into()));
    }
    let mut table = String::from("gene_id\tmorans_i\n");
    for (j, gene) in first.gene_ids.iter().enumerate() {
        let i = match diagnostics::morans_i(&values[j * n..(j + 1) * n], &w) {
            Ok(i) => Some(i),
            Err(Error::Undefined(_)) => None,
            Err(e) => return Err(e),
        };
        table.push_str(&format!("{gene}\t{}\n", fmt_opt(i)));
    }
    write_text(&out.join("morans_i.tsv"), &table)?;

    let mut acc = String::from("chain\tmove\tproposed\taccepted\trate\n");
    for t in &traces {
        for (name, m) in t.acceptance.named() {
            acc.push_str(&format!("{}\t{name}\t{}\t{}\t{}\n", t.chain, m.proposed, m.accepted, fmt_opt(m.rate())));
        }
    }
    write_text(&out.join("acceptance.tsv"), &acc)?;

    if traces.len() < 2 {
        log::warn!("chain health needs at least two chains; skipped");
    } else {
        let health = diagnostics::chain_health(&traces, s.f64("sd-threshold")?)?;
        let mut t = String::from("gene_id");
        for c in 0..traces.len() {
            t.push_str(&format!("\tppi_chain{c}"));
        }
        t.push_str("\tppi_sd\tflagged\n");
        for (j, gene) in health.gene_ids.iter().enumerate() {
            t.push_str(gene);
            for c in &health.chain_ppi {
                t.push_str(&format!("\t{}", c[j]));
            }
            t.push_str(&format!("\t{}\t{}\n", health.ppi_sd[j], health.flagged.contains(&j)));
        }
        write_text(&out.join("chain_health.tsv"), &t)?;
        println!("{} of {p} genes flagged for across-chain disagreement", health.flagged.len());
    }
    Ok(())
}
