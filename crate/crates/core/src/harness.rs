//! The adaptive MaxEnt loop, the random and PCA baselines, and replicated
//! experiments with per-trial derived seeds.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::initial;
use crate::linalg::{self, derive_seed};
use crate::recovery::{self, RecoveryOptions};
use crate::sequential;
use crate::smg::{self, Mask, MeasurementRecord, SmgModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMethod {
    Flip,
    Kk,
    Random,
}

impl InitMethod {
    pub fn label(self) -> &'static str {
        match self {
            InitMethod::Flip => "flip",
            InitMethod::Kk => "kk",
            InitMethod::Random => "random",
        }
    }
}

impl fmt::Display for InitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for InitMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "flip" | "ini.flip" => Ok(InitMethod::Flip),
            "kk" | "ini.kk" => Ok(InitMethod::Kk),
            "random" => Ok(InitMethod::Random),
            other => Err(Error::Parse(format!("unknown init method '{other}' (flip, kk, random)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub m1: usize,
    pub m2: usize,
    pub rank: usize,
    pub sigma2: f64,
    pub eta2: f64,
    pub n_ini: usize,
    pub n_seq: usize,
    pub r_ini: usize,
    pub init_method: InitMethod,
    pub trials: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Share of each sequential batch filled with random masks.
    pub random_fraction: f64,
    /// Grow the subspace estimate while the best designed mask's objective
    /// is below this value; `0` disables.
    pub saturation: f64,
    /// `0` picks every sample up to 200 total, otherwise about 40
    /// log-spaced points.
    pub eval_stride: usize,
    pub pca_oracle: bool,
    /// Re-estimate `σ²` from the data at each step instead of using the
    /// configured value.
    pub estimate_sigma2: bool,
    pub recovery: RecoveryOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            m1: 7,
            m2: 7,
            rank: 4,
            sigma2: 1.0,
            eta2: 1e-4,
            n_ini: 7,
            n_seq: 23,
            r_ini: 2,
            init_method: InitMethod::Flip,
            trials: 10,
            seed: 0,
            batch_size: 1,
            random_fraction: 0.0,
            saturation: 0.0,
            eval_stride: 0,
            pca_oracle: false,
            estimate_sigma2: false,
            recovery: RecoveryOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn total(&self) -> usize {
        self.n_ini + self.n_seq
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::InvalidArgument(s));
        if self.m1 == 0 || self.m2 == 0 {
            return bad("m1 and m2 must be positive".into());
        }
        if self.n_ini == 0 {
            return bad("n_ini must be at least 1".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.random_fraction) {
            return bad(format!("random_fraction must lie in [0, 1], got {}", self.random_fraction));
        }
        if !(0.0..=1.0).contains(&self.saturation) {
            return bad(format!("saturation must lie in [0, 1], got {}", self.saturation));
        }
        if self.r_ini == 0 || self.r_ini > self.m1.min(self.m2) {
            return bad(format!("r_ini must lie in 1..={}", self.m1.min(self.m2)));
        }
        if self.rank == 0 || self.rank >= self.m1.min(self.m2) {
            return bad(format!("rank must lie in 1..{}", self.m1.min(self.m2)));
        }
        if !(self.sigma2 > 0.0) || !(self.eta2 >= 0.0) {
            return bad("sigma2 must be positive and eta2 nonnegative".into());
        }
        if self.init_method == InitMethod::Kk
            && initial::kerdock_geometry(self.m1, self.m2, self.r_ini, self.n_ini).is_none()
        {
            return Err(Error::UnsupportedGeometry(format!(
                "kk initial design needs m = 2^(k+1) r_ini with k odd and n_ini small enough; got ({}, {}, {}, {})",
                self.m1, self.m2, self.r_ini, self.n_ini
            )));
        }
        self.recovery.validate()
    }

    /// Sample sizes at which errors are recorded, from `n_ini` to the total.
    pub fn sample_sizes(&self) -> Vec<usize> {
        sample_grid(self.n_ini, self.total(), self.eval_stride)
    }

    fn gamma2(&self) -> f64 {
        self.eta2 / self.sigma2
    }
}

fn sample_grid(start: usize, end: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = if stride > 0 {
        (start..=end).step_by(stride).collect()
    } else if end <= 200 {
        (start..=end).collect()
    } else {
        let points = 40;
        let (a, b) = ((start as f64).ln(), (end as f64).ln());
        (0..=points)
            .map(|i| (a + (b - a) * i as f64 / points as f64).exp().round() as usize)
            .collect()
    };
    out.push(end);
    out.sort_unstable();
    out.dedup();
    out
}

/// Normalized errors of one method on one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryTrace {
    pub method: String,
    pub trial: usize,
    pub sample_sizes: Vec<usize>,
    pub errors: Vec<f64>,
    /// Recoveries that hit `max_iters` before converging.
    pub nonconverged: usize,
}

impl RecoveryTrace {
    fn new(method: &str, trial: usize) -> Self {
        Self { method: method.to_string(), trial, sample_sizes: Vec::new(), errors: Vec::new(), nonconverged: 0 }
    }

    pub fn final_error(&self) -> Option<f64> {
        self.errors.last().copied()
    }

    pub fn error_at(&self, n: usize) -> Option<f64> {
        self.sample_sizes.iter().position(|&s| s == n).map(|i| self.errors[i])
    }
}

/// Seeds for one trial. The ground truth depends only on the master seed and
/// the trial index, so every method sees the same `X`.
#[derive(Clone, Copy, Debug)]
pub struct TrialSeeds {
    pub truth: u64,
    pub trial: usize,
    master: u64,
}

impl TrialSeeds {
    pub fn new(master: u64, trial: usize) -> Self {
        let t = trial.to_string();
        Self { truth: derive_seed(master, &["trial", &t, "truth"]), trial, master }
    }

    pub fn method(&self, label: &str) -> u64 {
        derive_seed(self.master, &["trial", &self.trial.to_string(), label])
    }
}

/// Records observations and recovers as masks arrive.
struct Session<'a> {
    cfg: &'a ExperimentConfig,
    x: &'a DMatrix<f64>,
    seed: u64,
    record: MeasurementRecord,
    xhat: Option<DMatrix<f64>>,
    trace: RecoveryTrace,
}

impl<'a> Session<'a> {
    fn new(cfg: &'a ExperimentConfig, x: &'a DMatrix<f64>, seed: u64, method: &str, trial: usize) -> Self {
        Self { cfg, x, seed, record: MeasurementRecord::default(), xhat: None, trace: RecoveryTrace::new(method, trial) }
    }

    fn observe(&mut self, mask: Mask) -> Result<()> {
        assert!(mask.norm() <= 1.0 + smg::TOLERANCES.mask_norm, "mask exceeds unit power");
        let i = self.record.len().to_string();
        let y = smg::measure(self.x, std::slice::from_ref(&mask), self.cfg.eta2, derive_seed(self.seed, &["noise", &i]))?[0];
        self.record.push(mask, y)
    }

    fn recover(&mut self) -> Result<&DMatrix<f64>> {
        let out = recovery::recover_from(&self.record, self.cfg.eta2, &self.cfg.recovery, self.xhat.as_ref())?;
        if !out.converged {
            self.trace.nonconverged += 1;
        }
        self.xhat = Some(out.x);
        Ok(self.xhat.as_ref().expect("just set"))
    }

    fn record_error(&mut self) {
        let xhat = self.xhat.as_ref().expect("recover before recording");
        self.trace.sample_sizes.push(self.record.len());
        self.trace.errors.push(recovery::normalized_error(xhat, self.x));
    }
}

fn initial_masks(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Mask>> {
    match cfg.init_method {
        InitMethod::Flip => initial::ini_flip(cfg.m1, cfg.m2, cfg.n_ini, cfg.r_ini, seed),
        InitMethod::Kk => initial::ini_kk(cfg.m1, cfg.m2, cfg.n_ini, cfg.r_ini, seed),
        InitMethod::Random => {
            let mut rng = linalg::rng(seed);
            Ok((0..cfg.n_ini).map(|_| Mask::random_unit(&mut rng, cfg.m1, cfg.m2)).collect())
        }
    }
}

pub fn maxent_label(cfg: &ExperimentConfig) -> String {
    format!("maxent-{}", cfg.init_method)
}

fn check_truth(cfg: &ExperimentConfig, x: &DMatrix<f64>) -> Result<()> {
    if x.shape() != (cfg.m1, cfg.m2) {
        return Err(Error::dims((cfg.m1, cfg.m2), x.shape()));
    }
    if x.norm() == 0.0 {
        return Err(Error::ZeroMatrix("ground truth is zero, normalized error undefined".into()));
    }
    Ok(())
}

/// Initial design, then alternate recovery, subspace estimation and
/// closed-form next masks until `n_ini + n_seq` samples are taken.
pub fn run_maxent(cfg: &ExperimentConfig, x: &DMatrix<f64>, seeds: &TrialSeeds) -> Result<RecoveryTrace> {
    cfg.validate()?;
    check_truth(cfg, x)?;
    let label = maxent_label(cfg);
    let seed = seeds.method(&label);
    let grid = cfg.sample_sizes();
    let mut s = Session::new(cfg, x, seed, &label, seeds.trial);
    for m in initial_masks(cfg, derive_seed(seed, &["initial"]))? {
        s.observe(m)?;
    }
    let mut extra = linalg::rng(derive_seed(seed, &["supplement"]));
    loop {
        let n = s.record.len();
        let xhat = s.recover()?.clone();
        if grid.contains(&n) {
            s.record_error();
        }
        if n >= cfg.total() {
            break;
        }
        let remaining = cfg.total() - n;
        let batch = match recovery::estimate_subspaces(&xhat, cfg.recovery.rank_threshold) {
            Ok(est) => {
                let k = cfg.batch_size.min(remaining);
                let gamma2 = if cfg.estimate_sigma2 {
                    let s2 = sequential::estimate_sigma2(&est, s.record.masks(), s.record.y(), cfg.eta2)?;
                    cfg.eta2 / s2
                } else {
                    cfg.gamma2()
                };
                let designed = sequential::next_mask_growing(
                    &xhat,
                    est.rank(),
                    s.record.masks(),
                    gamma2.max(1e-12),
                    k,
                    cfg.saturation,
                )?
                .masks;
                let k = designed.len();
                let n_random = (cfg.random_fraction * k as f64).round() as usize;
                let k_designed = (k - n_random).max(1);
                let mut out = designed;
                out.truncate(k_designed);
                out.extend((0..k - k_designed).map(|_| Mask::random_unit(&mut extra, cfg.m1, cfg.m2)));
                out
            }
            // nothing recovered yet: no subspace information to design with
            Err(Error::ZeroMatrix(_)) => vec![Mask::random_unit(&mut extra, cfg.m1, cfg.m2)],
            Err(e) => return Err(e),
        };
        for m in batch {
            s.observe(m)?;
        }
    }
    Ok(s.trace)
}

/// Same pipeline with i.i.d. masks uniform on the unit Frobenius sphere.
pub fn run_random_baseline(cfg: &ExperimentConfig, x: &DMatrix<f64>, seeds: &TrialSeeds) -> Result<RecoveryTrace> {
    cfg.validate()?;
    check_truth(cfg, x)?;
    let seed = seeds.method("random");
    let mut rng = linalg::rng(derive_seed(seed, &["masks"]));
    let mut s = Session::new(cfg, x, seed, "random", seeds.trial);
    for n in cfg.sample_sizes() {
        while s.record.len() < n {
            s.observe(Mask::random_unit(&mut rng, cfg.m1, cfg.m2))?;
        }
        s.recover()?;
        s.record_error();
    }
    Ok(s.trace)
}

/// Oracle that measures along `u_k v_lᵀ` of the true subspaces, recorded at
/// the shared sample sizes up to `R²` and at `R²` itself.
pub fn run_pca_oracle(cfg: &ExperimentConfig, model: &SmgModel, x: &DMatrix<f64>, seeds: &TrialSeeds) -> Result<RecoveryTrace> {
    check_truth(cfg, x)?;
    let r2 = model.rank() * model.rank();
    let mut sizes: Vec<usize> = cfg.sample_sizes().into_iter().filter(|&n| n <= r2).collect();
    if r2 <= cfg.total() && !sizes.contains(&r2) {
        sizes.push(r2);
    }
    sizes.sort_unstable();
    let masks = sequential::pca_masks(model, r2)?;
    let mut s = Session::new(cfg, x, seeds.method("pca"), "pca", seeds.trial);
    let mut it = masks.into_iter();
    for n in sizes {
        while s.record.len() < n {
            s.observe(it.next().expect("n <= R^2"))?;
        }
        s.recover()?;
        s.record_error();
    }
    Ok(s.trace)
}

/// Quantiles of one method at one sample size across trials.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub sample_size: usize,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub traces: Vec<RecoveryTrace>,
    pub summary: Vec<SummaryRow>,
}

/// Linear-interpolation quantile of unsorted data; NaN when empty.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Per-method, per-sample-size quartiles, in order of first appearance.
pub fn summarize(traces: &[RecoveryTrace]) -> Vec<SummaryRow> {
    let mut methods: Vec<&str> = Vec::new();
    for t in traces {
        if !methods.contains(&t.method.as_str()) {
            methods.push(&t.method);
        }
    }
    let mut rows = Vec::new();
    for m in methods {
        let mine: Vec<&RecoveryTrace> = traces.iter().filter(|t| t.method == m).collect();
        let mut sizes: Vec<usize> = mine.iter().flat_map(|t| t.sample_sizes.iter().copied()).collect();
        sizes.sort_unstable();
        sizes.dedup();
        for n in sizes {
            let errs: Vec<f64> = mine.iter().filter_map(|t| t.error_at(n)).collect();
            rows.push(SummaryRow {
                method: m.to_string(),
                sample_size: n,
                q25: quantile(&errs, 0.25),
                median: quantile(&errs, 0.5),
                q75: quantile(&errs, 0.75),
            });
        }
    }
    rows
}

/// Ground truth for a trial drawn from the SMG model, plus the model.
pub fn trial_truth(cfg: &ExperimentConfig, seeds: &TrialSeeds) -> Result<(SmgModel, DMatrix<f64>)> {
    let model = SmgModel::random(cfg.m1, cfg.m2, cfg.rank, cfg.sigma2, cfg.eta2, derive_seed(seeds.truth, &["model"]))?;
    let x = smg::sample_smg(&model, derive_seed(seeds.truth, &["sample"]));
    Ok((model, x))
}

/// Replicates MaxEnt and the random baseline (and the PCA oracle when
/// enabled) over `trials` simulated ground truths. Trials run in parallel;
/// output order is by trial, then method.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_trials(cfg, None)
}

/// [`run_experiment`] with the same fixed ground truth in every trial; the
/// PCA oracle is unavailable.
pub fn run_experiment_fixed(cfg: &ExperimentConfig, x: &DMatrix<f64>) -> Result<ExperimentResult> {
    run_trials(cfg, Some(x))
}

fn run_trials(cfg: &ExperimentConfig, fixed: Option<&DMatrix<f64>>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let per_trial: Vec<Result<Vec<RecoveryTrace>>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let seeds = TrialSeeds::new(cfg.seed, t);
            let mut out = Vec::new();
            let (model, x) = match fixed {
                Some(x) => (None, x.clone()),
                None => {
                    let (m, x) = trial_truth(cfg, &seeds)?;
                    (Some(m), x)
                }
            };
            out.push(run_maxent(cfg, &x, &seeds)?);
            out.push(run_random_baseline(cfg, &x, &seeds)?);
            if let (true, Some(model)) = (cfg.pca_oracle, model.as_ref()) {
                out.push(run_pca_oracle(cfg, model, &x, &seeds)?);
            }
            Ok(out)
        })
        .collect();
    let mut traces = Vec::new();
    for r in per_trial {
        traces.extend(r?);
    }
    let summary = summarize(&traces);
    Ok(ExperimentResult { traces, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig { m1: 6, m2: 6, rank: 2, n_ini: 6, n_seq: 6, trials: 2, ..Default::default() }
    }

    #[test]
    fn grid_includes_endpoints() {
        assert_eq!(sample_grid(7, 30, 0).len(), 24);
        assert_eq!(sample_grid(7, 30, 10), vec![7, 17, 27, 30]);
        let g = sample_grid(10, 1000, 0);
        assert_eq!((g[0], *g.last().unwrap()), (10, 1000));
        assert!(g.len() <= 41);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&[2.0, 4.0], 0.25), 2.5);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
    }

    #[test]
    fn no_sequential_steps_is_initial_recovery() {
        let cfg = ExperimentConfig { n_seq: 0, ..small() };
        let seeds = TrialSeeds::new(3, 0);
        let (_, x) = trial_truth(&cfg, &seeds).unwrap();
        let trace = run_maxent(&cfg, &x, &seeds).unwrap();
        assert_eq!(trace.sample_sizes, vec![6]);
        let masks = initial_masks(&cfg, derive_seed(seeds.method("maxent-flip"), &["initial"])).unwrap();
        assert_eq!(masks.len(), 6);
    }

    #[test]
    fn traces_share_sample_sizes() {
        let cfg = small();
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.traces.len(), 4);
        for t in &res.traces {
            assert_eq!(t.sample_sizes, cfg.sample_sizes());
            assert!(t.errors.iter().all(|e| *e >= 0.0));
        }
    }

    #[test]
    fn single_trial_quantiles_coincide() {
        let cfg = ExperimentConfig { trials: 1, ..small() };
        let res = run_experiment(&cfg).unwrap();
        for row in &res.summary {
            assert_eq!(row.q25, row.median);
            assert_eq!(row.q75, row.median);
        }
    }

    #[test]
    fn summary_ignores_trial_order() {
        let res = run_experiment(&small()).unwrap();
        let mut rev = res.traces.clone();
        rev.reverse();
        let mut a = summarize(&res.traces);
        let mut b = summarize(&rev);
        a.sort_by_key(|x| (x.method.clone(), x.sample_size));
        b.sort_by_key(|x| (x.method.clone(), x.sample_size));
        assert_eq!(a, b);
    }

    #[test]
    fn kk_requires_table_geometry() {
        let cfg = ExperimentConfig { init_method: InitMethod::Kk, ..small() };
        assert!(matches!(cfg.validate(), Err(Error::UnsupportedGeometry(_))));
        let ok = ExperimentConfig { m1: 8, m2: 8, r_ini: 2, n_ini: 8, init_method: InitMethod::Kk, ..small() };
        ok.validate().unwrap();
    }

    #[test]
    fn init_method_parses() {
        assert_eq!("ini.kk".parse::<InitMethod>().unwrap(), InitMethod::Kk);
        assert_eq!("FLIP".parse::<InitMethod>().unwrap(), InitMethod::Flip);
        assert!("kerdock".parse::<InitMethod>().is_err());
    }
}
