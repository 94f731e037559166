//! Stored chain output and its on-disk format.
//!
//! A trace file starts with the text line `svgp-trace\t<version>`, followed by
//! one line of JSON metadata, followed by little-endian binary records. Each
//! iteration record holds, for every gene in order: `gamma` as one byte, then
//! `l`, `phi`, the spatial and the non-spatial log-density as `f64` arrays of
//! length `p`, then the three `f64` totals (log-likelihood, log prior of `Λ`,
//! log prior of `γ`). Snapshots follow, each a `u64` iteration index and `p*n`
//! `f64` log expression values in gene-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_VERSION: u32 = 1;
const MAGIC: &str = "svgp-trace";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl MoveStats {
    pub fn accepted() -> Self {
        MoveStats {
            proposed: 1,
            accepted: 1,
        }
    }

    pub fn rejected() -> Self {
        MoveStats {
            proposed: 1,
            accepted: 0,
        }
    }

    pub fn merge(self, other: Self) -> Self {
        MoveStats {
            proposed: self.proposed + other.proposed,
            accepted: self.accepted + other.accepted,
        }
    }

    /// `None` when nothing was proposed.
    pub fn rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceCounters {
    /// Indicator flips; `proposed` counts every Gibbs update.
    pub eta: MoveStats,
    pub phi: MoveStats,
    pub lambda: MoveStats,
    pub add: MoveStats,
    pub delete: MoveStats,
    pub l_within: MoveStats,
}

impl AcceptanceCounters {
    pub fn merge(self, o: Self) -> Self {
        AcceptanceCounters {
            eta: self.eta.merge(o.eta),
            phi: self.phi.merge(o.phi),
            lambda: self.lambda.merge(o.lambda),
            add: self.add.merge(o.add),
            delete: self.delete.merge(o.delete),
            l_within: self.l_within.merge(o.l_within),
        }
    }

    pub fn named(&self) -> [(&'static str, MoveStats); 6] {
        [
            ("eta", self.eta),
            ("phi", self.phi),
            ("lambda", self.lambda),
            ("add", self.add),
            ("delete", self.delete),
            ("l_within", self.l_within),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: usize,
    /// Gene-major `p x n` log expression.
    pub log_lambda: Vec<f64>,
}

/// Everything one chain records.
///
/// Per-gene arrays are iteration-major with stride `p`: the value for gene
/// `j` at iteration `u` sits at `u * p + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub chain: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub thin: usize,
    pub gene_ids: Vec<String>,
    pub spot_ids: Vec<String>,
    pub gamma: Vec<bool>,
    /// `NaN` where the gene is non-spatial.
    pub l: Vec<f64>,
    pub phi: Vec<f64>,
    pub log_mvt_spatial: Vec<f64>,
    pub log_mvt_nonspatial: Vec<f64>,
    pub log_likelihood: Vec<f64>,
    pub log_prior_lambda: Vec<f64>,
    pub log_prior_gamma: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub acceptance: AcceptanceCounters,
}

#[derive(Serialize, Deserialize)]
struct Header {
    chain: usize,
    seed: u64,
    n_iter: usize,
    burn_in: usize,
    thin: usize,
    gene_ids: Vec<String>,
    spot_ids: Vec<String>,
    n_snapshots: usize,
    acceptance: AcceptanceCounters,
}

impl ChainTrace {
    pub fn new(chain: usize, seed: u64, burn_in: usize, thin: usize, gene_ids: Vec<String>, spot_ids: Vec<String>) -> Self {
        ChainTrace {
            chain,
            seed,
            burn_in,
            thin,
            gene_ids,
            spot_ids,
            gamma: Vec::new(),
            l: Vec::new(),
            phi: Vec::new(),
            log_mvt_spatial: Vec::new(),
            log_mvt_nonspatial: Vec::new(),
            log_likelihood: Vec::new(),
            log_prior_lambda: Vec::new(),
            log_prior_gamma: Vec::new(),
            snapshots: Vec::new(),
            acceptance: AcceptanceCounters::default(),
        }
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn n_spots(&self) -> usize {
        self.spot_ids.len()
    }

    pub fn n_iter(&self) -> usize {
        self.log_likelihood.len()
    }

    pub fn post_burn_in(&self) -> Range<usize> {
        self.burn_in.min(self.n_iter())..self.n_iter()
    }

    #[inline]
    pub fn idx(&self, iteration: usize, gene: usize) -> usize {
        iteration * self.n_genes() + gene
    }

    /// Unnormalized joint log posterior at `iteration`.
    pub fn log_posterior(&self, iteration: usize) -> f64 {
        self.log_likelihood[iteration] + self.log_prior_lambda[iteration] + self.log_prior_gamma[iteration]
    }

    /// Posterior-mean log expression over the stored snapshots, gene-major.
    pub fn mean_log_lambda(&self) -> Option<Vec<f64>> {
        let first = self.snapshots.first()?;
        let mut acc = vec![0.0; first.log_lambda.len()];
        for s in &self.snapshots {
            for (a, v) in acc.iter_mut().zip(&s.log_lambda) {
                *a += v;
            }
        }
        let k = self.snapshots.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        Some(acc)
    }

    fn check_shape(&self) -> Result<()> {
        let (u, p) = (self.n_iter(), self.n_genes());
        let per_gene = [&self.l, &self.phi, &self.log_mvt_spatial, &self.log_mvt_nonspatial];
        if self.gamma.len() != u * p
            || per_gene.iter().any(|v| v.len() != u * p)
            || self.log_prior_lambda.len() != u
            || self.log_prior_gamma.len() != u
        {
            return Err(Error::Validation("trace arrays have inconsistent lengths".into()));
        }
        let np = self.n_spots() * p;
        if self.snapshots.iter().any(|s| s.log_lambda.len() != np) {
            return Err(Error::Validation("trace snapshot has the wrong size".into()));
        }
        Ok(())
    }
}

fn put_f64s(w: &mut impl Write, xs: &[f64]) -> std::io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn get_f64s(r: &mut impl Read, out: &mut Vec<f64>, count: usize) -> std::io::Result<()> {
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(())
}

pub fn write_trace(path: impl AsRef<Path>, trace: &ChainTrace) -> Result<()> {
    let path = path.as_ref();
    trace.check_shape()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        chain: trace.chain,
        seed: trace.seed,
        n_iter: trace.n_iter(),
        burn_in: trace.burn_in,
        thin: trace.thin,
        gene_ids: trace.gene_ids.clone(),
        spot_ids: trace.spot_ids.clone(),
        n_snapshots: trace.snapshots.len(),
        acceptance: trace.acceptance,
    };
    let json = serde_json::to_string(&header).map_err(|e| Error::Validation(e.to_string()))?;
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "{MAGIC}\t{TRACE_VERSION}")?;
        writeln!(w, "{json}")?;
        let p = trace.n_genes();
        for u in 0..trace.n_iter() {
            let r = u * p..(u + 1) * p;
            let bytes: Vec<u8> = trace.gamma[r.clone()].iter().map(|&g| g as u8).collect();
            w.write_all(&bytes)?;
            put_f64s(&mut w, &trace.l[r.clone()])?;
            put_f64s(&mut w, &trace.phi[r.clone()])?;
            put_f64s(&mut w, &trace.log_mvt_spatial[r.clone()])?;
            put_f64s(&mut w, &trace.log_mvt_nonspatial[r])?;
            put_f64s(
                &mut w,
                &[trace.log_likelihood[u], trace.log_prior_lambda[u], trace.log_prior_gamma[u]],
            )?;
        }
        for s in &trace.snapshots {
            w.write_all(&(s.iteration as u64).to_le_bytes())?;
            put_f64s(&mut w, &s.log_lambda)?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<ChainTrace> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let (magic, version) = line.trim_end().split_once('\t').unwrap_or(("", ""));
    if magic != MAGIC {
        return Err(Error::Validation(format!("{} is not a trace file", path.display())));
    }
    if version != TRACE_VERSION.to_string() {
        return Err(Error::Validation(format!(
            "{} has trace version {version:?}, expected {TRACE_VERSION}",
            path.display()
        )));
    }
    line.clear();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let h: Header = serde_json::from_str(&line)
        .map_err(|e| Error::Validation(format!("{}: bad trace header: {e}", path.display())))?;
    let mut t = ChainTrace::new(h.chain, h.seed, h.burn_in, h.thin, h.gene_ids, h.spot_ids);
    t.acceptance = h.acceptance;
    let (p, n) = (t.n_genes(), t.n_spots());
    let mut body = |t: &mut ChainTrace| -> std::io::Result<()> {
        let mut bytes = vec![0u8; p];
        let mut totals = Vec::with_capacity(3);
        for _ in 0..h.n_iter {
            r.read_exact(&mut bytes)?;
            t.gamma.extend(bytes.iter().map(|&b| b != 0));
            get_f64s(&mut r, &mut t.l, p)?;
            get_f64s(&mut r, &mut t.phi, p)?;
            get_f64s(&mut r, &mut t.log_mvt_spatial, p)?;
            get_f64s(&mut r, &mut t.log_mvt_nonspatial, p)?;
            totals.clear();
            get_f64s(&mut r, &mut totals, 3)?;
            t.log_likelihood.push(totals[0]);
            t.log_prior_lambda.push(totals[1]);
            t.log_prior_gamma.push(totals[2]);
        }
        for _ in 0..h.n_snapshots {
            let mut it = [0u8; 8];
            r.read_exact(&mut it)?;
            let mut log_lambda = Vec::with_capacity(n * p);
            get_f64s(&mut r, &mut log_lambda, n * p)?;
            t.snapshots.push(Snapshot {
                iteration: u64::from_le_bytes(it) as usize,
                log_lambda,
            });
        }
        Ok(())
    };
    body(&mut t).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            Error::Validation(format!("{} is truncated", path.display()))
        }
        _ => Error::io(path, e),
    })?;
    Ok(t)
}
