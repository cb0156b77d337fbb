//! Flat `key = value` experiment configuration. Blank lines and `#`
//! comments are ignored; later assignments win.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::ExperimentConfig;

/// Every recognised key.
pub const KEYS: &[&str] = &[
    "m1",
    "m2",
    "rank",
    "sigma2",
    "eta2",
    "n_ini",
    "n_seq",
    "r_ini",
    "init_method",
    "trials",
    "seed",
    "batch_size",
    "random_fraction",
    "saturation",
    "eval_stride",
    "pca_oracle",
    "estimate_sigma2",
    "lambda",
    "lambda_scale",
    "alpha",
    "max_iters",
    "rel_tol",
    "rank_threshold",
    "continuation",
    "continuation_gain",
    "continuation_steps",
];

fn canonical(key: &str) -> String {
    match key.trim() {
        "R" => "rank".into(),
        "R_ini" => "r_ini".into(),
        k => k.replace('-', "_"),
    }
}

pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key = value, got '{line}'", lineno + 1)))?;
        out.push((canonical(k), v.trim().to_string()));
    }
    Ok(out)
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse(format!("bad value '{v}' for {key}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Parse(format!("bad boolean '{v}' for {key}"))),
    }
}

impl ExperimentConfig {
    /// Sets one field by key name.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let key = canonical(key);
        let r = &mut self.recovery;
        match key.as_str() {
            "m1" => self.m1 = value(&key, v)?,
            "m2" => self.m2 = value(&key, v)?,
            "rank" => self.rank = value(&key, v)?,
            "sigma2" => self.sigma2 = value(&key, v)?,
            "eta2" => self.eta2 = value(&key, v)?,
            "n_ini" => self.n_ini = value(&key, v)?,
            "n_seq" => self.n_seq = value(&key, v)?,
            "r_ini" => self.r_ini = value(&key, v)?,
            "init_method" => self.init_method = v.parse()?,
            "trials" => self.trials = value(&key, v)?,
            "seed" => self.seed = value(&key, v)?,
            "batch_size" => self.batch_size = value(&key, v)?,
            "random_fraction" => self.random_fraction = value(&key, v)?,
            "saturation" => self.saturation = value(&key, v)?,
            "eval_stride" => self.eval_stride = value(&key, v)?,
            "pca_oracle" => self.pca_oracle = flag(&key, v)?,
            "estimate_sigma2" => self.estimate_sigma2 = flag(&key, v)?,
            "lambda" => {
                r.lambda = match v.to_ascii_lowercase().as_str() {
                    "auto" | "" => None,
                    _ => Some(value(&key, v)?),
                }
            }
            "lambda_scale" => r.lambda_scale = value(&key, v)?,
            "alpha" => r.alpha = value(&key, v)?,
            "max_iters" => r.max_iters = value(&key, v)?,
            "rel_tol" => r.rel_tol = value(&key, v)?,
            "rank_threshold" => r.rank_threshold = value(&key, v)?,
            "continuation" => r.continuation = flag(&key, v)?,
            "continuation_gain" => r.continuation_gain = value(&key, v)?,
            "continuation_steps" => r.continuation_steps = value(&key, v)?,
            _ => return Err(Error::Parse(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Defaults overridden by `text`, then by `overrides`. Not validated.
    pub fn from_text(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_pairs(text)?.iter().chain(overrides) {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, overrides)
    }

    /// All fields in the file format, one per line in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let r = &self.recovery;
        let lambda = r.lambda.map_or("auto".to_string(), |l| l.to_string());
        let vals: [String; 26] = [
            self.m1.to_string(),
            self.m2.to_string(),
            self.rank.to_string(),
            self.sigma2.to_string(),
            self.eta2.to_string(),
            self.n_ini.to_string(),
            self.n_seq.to_string(),
            self.r_ini.to_string(),
            self.init_method.to_string(),
            self.trials.to_string(),
            self.seed.to_string(),
            self.batch_size.to_string(),
            self.random_fraction.to_string(),
            self.saturation.to_string(),
            self.eval_stride.to_string(),
            self.pca_oracle.to_string(),
            self.estimate_sigma2.to_string(),
            lambda,
            r.lambda_scale.to_string(),
            r.alpha.to_string(),
            r.max_iters.to_string(),
            r.rel_tol.to_string(),
            r.rank_threshold.to_string(),
            r.continuation.to_string(),
            r.continuation_gain.to_string(),
            r.continuation_steps.to_string(),
        ];
        KEYS.iter().zip(vals).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
