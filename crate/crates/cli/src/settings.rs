//! Flag table, key-value config files and resolved settings.
//!
//! Every option has one name used for both the long flag (`--iters`) and the
//! config key (`iters = 2000`). Values resolve as flag, then config file, then
//! the built-in default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};
use svgp_core::Error;

#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub default: Option<&'static str>,
    pub switch: bool,
    pub help: &'static str,
}

const fn opt(name: &'static str, default: Option<&'static str>, help: &'static str) -> Key {
    Key {
        name,
        default,
        switch: false,
        help,
    }
}

const fn switch(name: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default: Some("false"),
        switch: true,
        help,
    }
}

const INPUT_KEYS: &[Key] = &[
    opt("counts", None, "Count table (spots x genes unless --genes-in-rows)"),
    opt("coords", None, "Spot coordinates: spot id, x, y"),
    switch("genes-in-rows", "The count table has one row per gene"),
    opt("min-spot-total", Some("10"), "Drop spots with fewer total reads"),
    opt("min-gene-frac", Some("0.1"), "Drop genes detected in a smaller fraction of spots"),
    switch("set-size-factors-one", "Use s_i = 1 instead of library-size factors"),
];

pub const RUN_KEYS: &[Key] = &[
    INPUT_KEYS[0],
    INPUT_KEYS[1],
    opt("design", None, "Covariate table: spot id, then one column per covariate"),
    INPUT_KEYS[2],
    INPUT_KEYS[3],
    INPUT_KEYS[4],
    INPUT_KEYS[5],
    opt("out", None, "Output directory"),
    opt("iters", Some("2000"), "MCMC iterations per chain"),
    opt("burn-in", Some("0.5"), "Fraction of iterations discarded as burn-in"),
    opt("thin", Some("10"), "Keep a log-expression snapshot every this many post-burn-in iterations"),
    opt("chains", Some("4"), "Number of independent chains"),
    opt("seed", Some("1"), "Base seed; chain k uses a seed derived from it"),
    opt("alpha", Some("0.05"), "Significance level for BH-adjusted p-values"),
    opt("ppi-cutoff", Some("0.5"), "Minimum posterior probability of inclusion"),
    opt("l-prior", Some("uniform"), "Length-scale prior: uniform or gamma"),
    opt("l-prior-shape", Some("0.001"), "Shape of the gamma length-scale prior"),
    opt("l-prior-rate", Some("0.001"), "Rate of the gamma length-scale prior"),
    opt("a-pi", Some("1"), "Extra-zero beta prior, first shape"),
    opt("b-pi", Some("1"), "Extra-zero beta prior, second shape"),
    opt("a-phi", Some("0.001"), "Dispersion gamma prior shape"),
    opt("b-phi", Some("0.001"), "Dispersion gamma prior rate"),
    opt("a-omega", Some("0.1"), "SV-proportion beta prior, first shape"),
    opt("b-omega", Some("1.9"), "SV-proportion beta prior, second shape"),
    opt("vague-omega", Some("true"), "Require a-omega + b-omega = 2"),
    opt("a-sigma", Some("3"), "Variance inverse-gamma prior shape"),
    opt("b-sigma", Some("1"), "Variance inverse-gamma prior scale"),
    opt("h", Some("10"), "Coefficient prior scale"),
    opt("tau-phi", Some("1"), "Step of the log-dispersion random walk"),
    opt("tau-lambda", Some("auto"), "Step of the expression random walk; auto scales per gene"),
    opt("tau-l", Some("auto"), "Step of the log length-scale random walk; auto is 2% of the log length-scale range"),
    opt("lambda-proposal", Some("natural"), "Expression proposal scale: natural or log"),
    switch("prior-only", "Ignore the counts and sample from the prior"),
    opt("bf-reference-l", Some("auto"), "Length-scale for the spatial density while a gene is non-spatial"),
    opt("cache-capacity", Some("64"), "Kernel factorizations kept in memory"),
    opt("write-traces", Some("true"), "Write per-chain trace files"),
    opt("threads", Some("0"), "Worker threads; 0 uses every core"),
];

pub const SIMULATE_KEYS: &[Key] = &[
    opt("pattern", Some("spot"), "spot, linear or binary-mask"),
    opt("out", None, "Output directory"),
    opt("genes", Some("100"), "Number of genes"),
    opt("sv-genes", Some("15"), "Number of spatially variable genes"),
    opt("baseline", Some("2"), "Baseline log expression"),
    opt("noise-sd", Some("0.3"), "Standard deviation of the log-expression noise"),
    opt("size-factor-sd", Some("0.2"), "Standard deviation of the log size factors"),
    opt("dispersion-mean", Some("10"), "Mean of the exponential dispersion distribution"),
    opt("false-zero", Some("0"), "Fraction of spots per gene forced to zero"),
    opt("fold-change", Some("auto"), "Peak fold change of SV genes; auto is 6 (3 for binary-mask)"),
    opt("radius", Some("5"), "Decay radius of the spot pattern"),
    opt("side", Some("16"), "Lattice side for spot and linear patterns"),
    opt("coords", None, "Spot coordinates for binary-mask"),
    opt("mask", None, "Binary mask, one high/low label per spot line"),
    opt("seed", Some("1"), "Seed"),
];

pub const DIAGNOSE_KEYS: &[Key] = &[
    opt("run", None, "Output directory of a previous run"),
    opt("out", Some("auto"), "Where to write the tables; auto uses the run directory"),
    opt("values", Some("posterior"), "Moran's I input: posterior (mean log expression) or raw (log(1 + y/s))"),
    opt("weights", Some("gaussian"), "Spatial weights: gaussian or knn"),
    opt("bandwidth", Some("auto"), "Gaussian bandwidth; auto is the median pairwise distance"),
    opt("knn", Some("5"), "Neighbours for knn weights"),
    opt("sd-threshold", Some("0.25"), "Flag genes whose across-chain PPI standard deviation exceeds this"),
    opt("counts", Some("auto"), "Count table; auto takes it from the run manifest"),
    opt("coords", Some("auto"), "Coordinates; auto takes them from the run manifest"),
];

pub fn command(name: &'static str, about: &'static str, keys: &'static [Key]) -> Command {
    let mut cmd = Command::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("Key-value config file; flags take precedence"),
    );
    for k in keys {
        let mut arg = Arg::new(k.name).long(k.name).help(k.help);
        arg = if k.switch {
            arg.action(ArgAction::SetTrue)
        } else {
            arg.value_name("VALUE").action(ArgAction::Set)
        };
        if let Some(d) = k.default.filter(|_| !k.switch) {
            arg = arg.long_help(format!("{} [default: {d}]", k.help));
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str, keys: &[Key], origin: &Path) -> Result<BTreeMap<String, String>, Error> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Validation(format!("{}:{}: expected 'key = value'", origin.display(), lineno + 1))
        })?;
        let key = key.trim().trim_start_matches("--");
        if !keys.iter().any(|k| k.name == key) {
            return Err(Error::Validation(format!(
                "{}:{}: unknown key '{key}'",
                origin.display(),
                lineno + 1
            )));
        }
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Settings {
    keys: &'static [Key],
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    pub fn resolve(keys: &'static [Key], matches: &ArgMatches) -> Result<Self, Error> {
        let mut values: BTreeMap<&'static str, String> = keys
            .iter()
            .filter_map(|k| k.default.map(|d| (k.name, d.to_string())))
            .collect();
        if let Some(path) = matches.get_one::<String>("config") {
            let path = PathBuf::from(path);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            for (k, v) in parse_config(&text, keys, &path)? {
                let key = keys.iter().find(|key| key.name == k).expect("checked by parse_config");
                values.insert(key.name, v);
            }
        }
        for k in keys {
            if matches.value_source(k.name) != Some(ValueSource::CommandLine) {
                continue;
            }
            let v = if k.switch {
                "true".to_string()
            } else {
                matches.get_one::<String>(k.name).expect("value present").clone()
            };
            values.insert(k.name, v);
        }
        Ok(Settings { keys, values })
    }

    pub fn from_map(keys: &'static [Key], map: BTreeMap<String, String>) -> Self {
        let mut values: BTreeMap<&'static str, String> = keys
            .iter()
            .filter_map(|k| k.default.map(|d| (k.name, d.to_string())))
            .collect();
        for k in keys {
            if let Some(v) = map.get(k.name) {
                values.insert(k.name, v.clone());
            }
        }
        Settings { keys, values }
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(String::as_str)
    }

    pub fn set(&mut self, name: &'static str, value: String) {
        self.values.insert(name, value);
    }

    pub fn required(&self, name: &str) -> Result<&str, Error> {
        self.get(name)
            .ok_or_else(|| Error::Validation(format!("--{name} is required")))
    }

    pub fn path(&self, name: &str) -> Option<PathBuf> {
        self.get(name).map(PathBuf::from)
    }

    fn parsed<T: std::str::FromStr>(&self, name: &str, what: &str) -> Result<T, Error> {
        let raw = self.required(name)?;
        raw.parse()
            .map_err(|_| Error::Validation(format!("--{name}: '{raw}' is not {what}")))
    }

    pub fn f64(&self, name: &str) -> Result<f64, Error> {
        let v: f64 = self.parsed(name, "a number")?;
        if !v.is_finite() {
            return Err(Error::Validation(format!("--{name} must be finite")));
        }
        Ok(v)
    }

    /// `None` for the literal `auto`.
    pub fn auto_f64(&self, name: &str) -> Result<Option<f64>, Error> {
        if self.get(name) == Some("auto") {
            Ok(None)
        } else {
            self.f64(name).map(Some)
        }
    }

    pub fn usize(&self, name: &str) -> Result<usize, Error> {
        self.parsed(name, "a non-negative integer")
    }

    pub fn u64(&self, name: &str) -> Result<u64, Error> {
        self.parsed(name, "a non-negative integer")
    }

    pub fn bool(&self, name: &str) -> Result<bool, Error> {
        self.parsed(name, "true or false")
    }

    pub fn choice<'a>(&self, name: &str, allowed: &[&'a str]) -> Result<&'a str, Error> {
        let raw = self.required(name)?;
        allowed.iter().copied().find(|a| *a == raw).ok_or_else(|| {
            Error::Validation(format!("--{name}: '{raw}' is not one of {}", allowed.join(", ")))
        })
    }

    /// The resolved configuration as a config file.
    pub fn to_config(&self, header: &[String]) -> String {
        let mut out = String::new();
        for line in header {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        for k in self.keys {
            if let Some(v) = self.values.get(k.name) {
                out.push_str(&format!("{} = {v}\n", k.name));
            }
        }
        out
    }
}
