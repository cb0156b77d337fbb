//! Low-rank recovery from linear measurements:
//! `min ‖y − 𝒜(X)‖² + λ(α‖X‖_* + (1−α)‖X‖_F²)` by monotone accelerated
//! proximal gradient with singular-value soft-thresholding.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::sequential::SubspaceEstimate;
use crate::smg::MeasurementRecord;

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryOptions {
    /// Regularization weight `λ`. `None` picks `lambda_scale · η · √n`.
    pub lambda: Option<f64>,
    /// Multiplier `c` in the default `λ = c η √n`.
    pub lambda_scale: f64,
    /// Elastic-net mix `α ∈ (0, 1]`; `1` is pure nuclear norm.
    pub alpha: f64,
    pub max_iters: usize,
    /// Stop when the proximal-gradient step is below `rel_tol · max(‖X‖_F, 1)`.
    pub rel_tol: f64,
    /// Singular values below this fraction of the largest are dropped by
    /// [`estimate_subspaces`].
    pub rank_threshold: f64,
    /// After solving at `λ`, keep halving it while the relative residual
    /// improves by more than `continuation_gain`.
    pub continuation: bool,
    pub continuation_gain: f64,
    /// Upper bound on continuation halvings.
    pub continuation_steps: usize,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            lambda: None,
            lambda_scale: 1.0,
            alpha: 1.0,
            max_iters: 5000,
            rel_tol: 1e-7,
            rank_threshold: 0.05,
            continuation: false,
            continuation_gain: 0.01,
            continuation_steps: 20,
        }
    }
}

impl RecoveryOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return bad("lambda must be positive");
            }
        }
        if !(self.lambda_scale > 0.0 && self.lambda_scale.is_finite()) {
            return bad("lambda_scale must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.rel_tol > 0.0) {
            return bad("rel_tol must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.rank_threshold > 0.0 && self.rank_threshold <= 1.0) {
            return bad("rank_threshold must lie in (0, 1]");
        }
        if !(self.continuation_gain >= 0.0) {
            return bad("continuation_gain must be nonnegative");
        }
        Ok(())
    }

    /// `λ` used for `n` observations at noise variance `eta2`.
    pub fn effective_lambda(&self, n: usize, eta2: f64) -> f64 {
        self.lambda
            .unwrap_or_else(|| (self.lambda_scale * eta2.sqrt() * (n as f64).sqrt()).max(1e-8))
    }
}

/// Result of [`recover`].
#[derive(Clone, Debug)]
pub struct Recovery {
    pub x: DMatrix<f64>,
    /// `λ` of the returned solution (differs from the initial one only
    /// under continuation).
    pub lambda: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective of every accepted iterate, starting from the initial point.
    pub objective_history: Vec<f64>,
}

/// The measurement operator `𝒜` as an `n x (m1 m2)` matrix acting on
/// column-major `vec(X)`.
#[derive(Clone, Debug)]
pub struct Operator {
    rows: DMatrix<f64>,
    dims: (usize, usize),
}

impl Operator {
    pub fn new(record: &MeasurementRecord) -> Result<Self> {
        let dims = record.dims().ok_or_else(|| Error::InvalidArgument("measurement record is empty".into()))?;
        let n = record.len();
        let mut rows = DMatrix::zeros(n, dims.0 * dims.1);
        for (i, m) in record.masks().iter().enumerate() {
            rows.row_mut(i).copy_from_slice(m.entries().as_slice());
        }
        Ok(Self { rows, dims })
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DVector<f64> {
        &self.rows * DVector::from_column_slice(x.as_slice())
    }

    pub fn adjoint(&self, r: &DVector<f64>) -> DMatrix<f64> {
        let v = self.rows.transpose() * r;
        DMatrix::from_column_slice(self.dims.0, self.dims.1, v.as_slice())
    }

    /// Largest eigenvalue of `𝒜𝒜*` by power iteration.
    pub fn norm_squared(&self) -> f64 {
        let g = &self.rows * self.rows.transpose();
        let n = g.nrows();
        let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        let mut est = 0.0;
        for _ in 0..1000 {
            let w = &g * &v;
            let nw = w.norm();
            if nw == 0.0 {
                return 0.0;
            }
            let next = v.dot(&w);
            v = w / nw;
            if (next - est).abs() <= 1e-12 * next.abs() {
                return next.max(nw);
            }
            est = next;
        }
        est
    }
}

fn svt(z: &DMatrix<f64>, tau: f64, shrink: f64) -> DMatrix<f64> {
    let svd = z.clone().svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let s = svd.singular_values.map(|s| (s - tau).max(0.0) * shrink);
    u * DMatrix::from_diagonal(&s) * vt
}

pub fn nuclear_norm(x: &DMatrix<f64>) -> f64 {
    x.singular_values().sum()
}

/// `‖y − 𝒜X‖² + λ(α‖X‖_* + (1−α)‖X‖_F²)`.
pub fn objective(op: &Operator, y: &DVector<f64>, x: &DMatrix<f64>, lambda: f64, alpha: f64) -> f64 {
    let res = (op.apply(x) - y).norm_squared();
    res + lambda * (alpha * nuclear_norm(x) + (1.0 - alpha) * x.norm_squared())
}

/// MAP objective `‖y − 𝒜X‖²/η² + log(2πσ²) rank(X)² + ‖X‖_F²/σ²`, with
/// rank counted above `rank_tol` times the largest singular value.
/// Evaluation only; the rank term makes it unsuitable as a solver target.
pub fn map_objective(record: &MeasurementRecord, x: &DMatrix<f64>, sigma2: f64, eta2: f64, rank_tol: f64) -> Result<f64> {
    if !(sigma2 > 0.0 && eta2 > 0.0) {
        return Err(Error::InvalidArgument("MAP objective needs positive sigma2 and eta2".into()));
    }
    let op = Operator::new(record)?;
    if x.shape() != op.dims {
        return Err(Error::dims(op.dims, x.shape()));
    }
    let y = DVector::from_column_slice(record.y());
    let s = x.singular_values();
    let top = s.max();
    let rank = s.iter().filter(|&&v| top > 0.0 && v > rank_tol * top).count() as f64;
    Ok((op.apply(x) - y).norm_squared() / eta2
        + (2.0 * std::f64::consts::PI * sigma2).ln() * rank * rank
        + x.norm_squared() / sigma2)
}

struct Solve {
    x: DMatrix<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

fn solve(op: &Operator, y: &DVector<f64>, x0: DMatrix<f64>, lambda: f64, opts: &RecoveryOptions, l0: f64) -> Solve {
    let alpha = opts.alpha;
    let smooth = |x: &DMatrix<f64>| (op.apply(x) - y).norm_squared();
    let full = |x: &DMatrix<f64>| objective(op, y, x, lambda, alpha);

    // gradient of ‖y − 𝒜X‖² is 2𝒜*(𝒜X − y), Lipschitz with constant 2L
    let mut lip = (2.0 * l0).max(1e-12);
    let mut x = x0;
    let mut fx = full(&x);
    let mut history = vec![fx];
    let mut z = x.clone();
    let mut theta = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;
        let rz = op.apply(&z) - y;
        let fz = rz.norm_squared();
        let grad = op.adjoint(&rz) * 2.0;
        let p = loop {
            let t = 1.0 / lip;
            let p = svt(&(&z - &grad * t), t * lambda * alpha, 1.0 / (1.0 + 2.0 * t * lambda * (1.0 - alpha)));
            let d = &p - &z;
            let bound = fz + linalg::frob_inner(&grad, &d) + 0.5 * lip * d.norm_squared();
            if smooth(&p) <= bound + 1e-12 * bound.abs().max(1.0) {
                break p;
            }
            lip *= 2.0;
        };
        let fp = full(&p);
        let step = (&p - &z).norm();
        if fp <= fx {
            let x_prev = std::mem::replace(&mut x, p);
            fx = fp;
            let theta_next = (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0;
            z = &x + (&x - &x_prev) * ((theta - 1.0) / theta_next);
            theta = theta_next;
        } else {
            // momentum overshot: restart from the best point
            z = x.clone();
            theta = 1.0;
        }
        history.push(fx);
        if step <= opts.rel_tol * x.norm().max(1.0) {
            converged = true;
            break;
        }
    }
    debug_assert!(history.windows(2).all(|w| w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0)));
    Solve { x, objective: fx, iterations, converged, history }
}

/// Recovers `X̂` from a measurement record. `eta2` only enters through the
/// default `λ`.
///
/// Returns the best iterate even when `max_iters` is hit; check
/// [`Recovery::converged`].
pub fn recover(record: &MeasurementRecord, eta2: f64, opts: &RecoveryOptions) -> Result<Recovery> {
    recover_from(record, eta2, opts, None)
}

/// [`recover`] warm-started at `x0`.
pub fn recover_from(record: &MeasurementRecord, eta2: f64, opts: &RecoveryOptions, x0: Option<&DMatrix<f64>>) -> Result<Recovery> {
    opts.validate()?;
    let op = Operator::new(record)?;
    let (m1, m2) = op.dims;
    let x0 = match x0 {
        Some(x) if x.shape() != (m1, m2) => return Err(Error::dims((m1, m2), x.shape())),
        Some(x) => x.clone(),
        None => DMatrix::zeros(m1, m2),
    };
    let y = DVector::from_column_slice(record.y());
    let l0 = op.norm_squared();
    let mut lambda = opts.effective_lambda(record.len(), eta2);
    let mut s = solve(&op, &y, x0, lambda, opts, l0);

    if opts.continuation {
        let y_norm = y.norm().max(f64::MIN_POSITIVE);
        let rel_res = |x: &DMatrix<f64>| (op.apply(x) - &y).norm() / y_norm;
        let mut best_res = rel_res(&s.x);
        for _ in 0..opts.continuation_steps {
            let next_lambda = lambda * 0.5;
            let next = solve(&op, &y, s.x.clone(), next_lambda, opts, l0);
            let res = rel_res(&next.x);
            if res >= best_res * (1.0 - opts.continuation_gain) {
                break;
            }
            best_res = res;
            lambda = next_lambda;
            s = next;
        }
    }

    Ok(Recovery {
        x: s.x,
        lambda,
        objective: s.objective,
        iterations: s.iterations,
        converged: s.converged,
        objective_history: s.history,
    })
}

/// Row and column spaces from the SVD of `X̂`, keeping singular values at
/// least `rank_threshold` times the largest (always at least one).
pub fn estimate_subspaces(xhat: &DMatrix<f64>, rank_threshold: f64) -> Result<SubspaceEstimate> {
    let (u, s, v) = linalg::svd_sorted(xhat);
    if s.is_empty() || !(s[0] > 0.0) {
        return Err(Error::ZeroMatrix("cannot estimate subspaces of a zero matrix".into()));
    }
    let r = s.iter().filter(|&&v| v >= rank_threshold * s[0]).count().max(1);
    SubspaceEstimate::new(u.columns(0, r).into_owned(), v.columns(0, r).into_owned())
}

/// `‖X̂ − X‖_F² / ‖X‖_F²`.
pub fn normalized_error(xhat: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    (xhat - x).norm_squared() / x.norm_squared()
}
