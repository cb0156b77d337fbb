//! Singular matrix-variate Gaussian (SMG) model: sampling, noisy linear
//! measurements and the closed-form moment and entropy algebra.
//!
//! A draw is `X = P_U Z P_V` with `Z` i.i.d. `N(0, sigma2)` and `P_U = UUᵀ`,
//! `P_V = VVᵀ`. A measurement with mask `A` is `y = <A, X>_F + eps`,
//! `eps ~ N(0, eta2)`. Every second moment of such observations reduces to
//! Frobenius inner products of projected masks `P_U A P_V`, which in the
//! `(U, V)` coordinates are inner products of the `R x R` power matrices
//! `UᵀAV`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, frob_inner};

/// Numerical tolerances used across the crate, at double-precision noise
/// floor scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// `UᵀU = I` and frame orthonormality.
    pub orthonormality: f64,
    /// Slack on the unit power constraint `‖A‖_F ≤ 1`.
    pub mask_norm: f64,
    /// Symmetry / PSD slack on conditional covariances.
    pub covariance: f64,
    /// Projection idempotence and invariance checks.
    pub projection: f64,
    /// Below this `gamma2` the conditioning system is jittered.
    pub gamma2_floor: f64,
    /// Jitter added as `jitter_scale * trace(R_n) / n`.
    pub jitter_scale: f64,
}

pub const TOLERANCES: Tolerances = Tolerances {
    orthonormality: 1e-10,
    mask_norm: 1e-10,
    covariance: 1e-8,
    projection: 1e-12,
    gamma2_floor: 1e-12,
    jitter_scale: 1e-10,
};

impl Default for Tolerances {
    fn default() -> Self {
        TOLERANCES
    }
}

/// Ground-truth generative model for a rank-`R` matrix.
#[derive(Clone, Debug)]
pub struct SmgModel {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    sigma2: f64,
    eta2: f64,
}

impl SmgModel {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>, sigma2: f64, eta2: f64) -> Result<Self> {
        if u.ncols() != v.ncols() {
            return Err(Error::InvalidModel(format!(
                "U has {} columns but V has {}",
                u.ncols(),
                v.ncols()
            )));
        }
        let r = u.ncols();
        if r == 0 {
            return Err(Error::InvalidModel("rank must be positive".into()));
        }
        if r >= u.nrows().min(v.nrows()) {
            return Err(Error::InvalidModel(format!(
                "rank {r} must be below min(m1, m2) = {}",
                u.nrows().min(v.nrows())
            )));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidModel(format!("sigma2 must be positive, got {sigma2}")));
        }
        if !(eta2 >= 0.0) || !eta2.is_finite() {
            return Err(Error::InvalidModel(format!("eta2 must be nonnegative, got {eta2}")));
        }
        let tol = TOLERANCES.orthonormality;
        if linalg::orthonormality_error(&u) > tol || linalg::orthonormality_error(&v) > tol {
            return Err(Error::InvalidModel("U and V must have orthonormal columns".into()));
        }
        Ok(Self { u, v, sigma2, eta2 })
    }

    /// Model with Haar-uniform row and column subspaces.
    pub fn random(m1: usize, m2: usize, rank: usize, sigma2: f64, eta2: f64, seed: u64) -> Result<Self> {
        if rank == 0 || rank >= m1.min(m2) {
            return Err(Error::InvalidModel(format!(
                "rank {rank} must satisfy 0 < R < min({m1}, {m2})"
            )));
        }
        let mut rng = linalg::rng(seed);
        let u = linalg::haar_frame(&mut rng, m1, rank);
        let v = linalg::haar_frame(&mut rng, m2, rank);
        Self::new(u, v, sigma2, eta2)
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
    pub fn eta2(&self) -> f64 {
        self.eta2
    }
    pub fn rank(&self) -> usize {
        self.u.ncols()
    }
    pub fn dims(&self) -> (usize, usize) {
        (self.u.nrows(), self.v.nrows())
    }
    /// `gamma2 = eta2 / sigma2`.
    pub fn gamma2(&self) -> f64 {
        self.eta2 / self.sigma2
    }
    pub fn proj_u(&self) -> DMatrix<f64> {
        &self.u * self.u.transpose()
    }
    pub fn proj_v(&self) -> DMatrix<f64> {
        &self.v * self.v.transpose()
    }

    fn check_dims(&self, m: &DMatrix<f64>) -> Result<()> {
        let want = self.dims();
        if m.shape() != want {
            return Err(Error::dims(want, m.shape()));
        }
        Ok(())
    }
}

/// One `m1 x m2` measurement mask under the unit power constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask(DMatrix<f64>);

impl Mask {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let norm = entries.norm();
        if !norm.is_finite() || norm > 1.0 + TOLERANCES.mask_norm {
            return Err(Error::InvalidArgument(format!(
                "mask Frobenius norm {norm} violates the unit power constraint"
            )));
        }
        Ok(Self(entries))
    }

    /// Rescales `entries` to unit Frobenius norm.
    pub fn normalized(entries: DMatrix<f64>) -> Result<Self> {
        let norm = entries.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidArgument("cannot normalize a zero mask".into()));
        }
        Ok(Self(entries / norm))
    }

    /// Uniform on the unit Frobenius sphere.
    pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, m1: usize, m2: usize) -> Self {
        loop {
            let g = linalg::gaussian_matrix(rng, m1, m2, 1.0);
            let n = g.norm();
            if n > 0.0 {
                return Self(g / n);
            }
        }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.0
    }
    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
    pub fn dims(&self) -> (usize, usize) {
        self.0.shape()
    }
    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

impl AsRef<DMatrix<f64>> for Mask {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Masks applied so far and the noisy scalar observations they produced.
#[derive(Clone, Debug, Default)]
pub struct MeasurementRecord {
    masks: Vec<Mask>,
    y: Vec<f64>,
}

impl MeasurementRecord {
    pub fn new(masks: Vec<Mask>, y: Vec<f64>) -> Result<Self> {
        if masks.len() != y.len() {
            return Err(Error::InvalidArgument(format!(
                "{} masks but {} observations",
                masks.len(),
                y.len()
            )));
        }
        if let Some(first) = masks.first() {
            let d = first.dims();
            if let Some(bad) = masks.iter().find(|m| m.dims() != d) {
                return Err(Error::dims(d, bad.dims()));
            }
        }
        Ok(Self { masks, y })
    }

    pub fn push(&mut self, mask: Mask, y: f64) -> Result<()> {
        if let Some(first) = self.masks.first() {
            if first.dims() != mask.dims() {
                return Err(Error::dims(first.dims(), mask.dims()));
            }
        }
        self.masks.push(mask);
        self.y.push(y);
        Ok(())
    }

    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn len(&self) -> usize {
        self.y.len()
    }
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.masks.first().map(Mask::dims)
    }
}

/// Draws `X = P_U Z P_V` with `Z_ij ~ N(0, sigma2)`.
pub fn sample_smg(model: &SmgModel, seed: u64) -> DMatrix<f64> {
    let (m1, m2) = model.dims();
    let mut rng = linalg::rng(seed);
    let z = linalg::gaussian_matrix(&mut rng, m1, m2, model.sigma2.sqrt());
    project_onto(&model.u, &model.v, &z)
}

/// `y_i = <A_i, X>_F + eps_i` with `eps_i ~ N(0, eta2)` i.i.d.
pub fn measure(x: &DMatrix<f64>, masks: &[Mask], eta2: f64, seed: u64) -> Result<Vec<f64>> {
    if !(eta2 >= 0.0) {
        return Err(Error::InvalidArgument(format!("eta2 must be nonnegative, got {eta2}")));
    }
    if let Some(bad) = masks.iter().find(|m| m.dims() != x.shape()) {
        return Err(Error::dims(x.shape(), bad.dims()));
    }
    let mut rng = linalg::rng(seed);
    let sd = eta2.sqrt();
    Ok(masks
        .iter()
        .map(|m| {
            let noise: f64 = rng.sample(StandardNormal);
            frob_inner(m.entries(), x) + sd * noise
        })
        .collect())
}

/// `U (UᵀAV) Vᵀ`, the Frobenius-orthogonal projection onto `T_{U,V}`.
pub fn project_onto(u: &DMatrix<f64>, v: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    u * (u.transpose() * a * v) * v.transpose()
}

/// `P_U A P_V` under the model's subspaces.
pub fn project_mask(model: &SmgModel, a: &Mask) -> Result<DMatrix<f64>> {
    model.check_dims(a.entries())?;
    Ok(project_onto(&model.u, &model.v, a.entries()))
}

/// Power matrices `UᵀA_iV`. Their Frobenius inner products equal those of
/// the projected masks.
pub fn power_matrices<'a, I>(u: &DMatrix<f64>, v: &DMatrix<f64>, masks: I) -> Vec<DMatrix<f64>>
where
    I: IntoIterator<Item = &'a Mask>,
{
    let ut = u.transpose();
    masks.into_iter().map(|m| &ut * m.entries() * v).collect()
}

/// `R_n(A_{1:n})`: inner products of projected masks.
pub fn correlation_matrix(u: &DMatrix<f64>, v: &DMatrix<f64>, masks: &[Mask]) -> DMatrix<f64> {
    linalg::gram(&power_matrices(u, v, masks))
}

/// Covariance of the observations taken with masks `a` and `b`.
///
/// `sigma2 <P_U A P_V, P_U B P_V>_F`, plus `eta2` when the two masks are
/// entrywise equal (the pair is then one observation and this is its
/// variance).
pub fn unconditional_cov(model: &SmgModel, a: &Mask, b: &Mask) -> Result<f64> {
    model.check_dims(a.entries())?;
    model.check_dims(b.entries())?;
    let pm = power_matrices(&model.u, &model.v, [a, b]);
    let mut c = model.sigma2 * frob_inner(&pm[0], &pm[1]);
    if a == b {
        c += model.eta2;
    }
    Ok(c)
}

/// `Var(y_A) = sigma2 ‖P_U A P_V‖_F² + eta2`.
pub fn unconditional_var(model: &SmgModel, a: &Mask) -> Result<f64> {
    unconditional_cov(model, a, a)
}

/// Moments of new observations conditional on a measurement record.
#[derive(Clone, Debug)]
pub struct ConditionalMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Diagonal jitter added to `R_n + gamma2 I` when `gamma2` is below the
    /// floor, `None` otherwise.
    pub jitter: Option<f64>,
}

/// Factorizes `R_n + gamma2 I`, jittering when `gamma2` is numerically zero.
pub(crate) fn regularized_cholesky(
    rn: &DMatrix<f64>,
    gamma2: f64,
) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, Option<f64>)> {
    let n = rn.nrows();
    let mut k = rn.clone();
    let mut jitter = None;
    let shift = if gamma2 < TOLERANCES.gamma2_floor {
        let tr = rn.trace();
        let j = TOLERANCES.jitter_scale * if tr > 0.0 { tr / n as f64 } else { 1.0 };
        jitter = Some(j);
        gamma2 + j
    } else {
        gamma2
    };
    for i in 0..n {
        k[(i, i)] += shift;
    }
    match k.cholesky() {
        Some(c) => Ok((c, jitter)),
        None => Err(Error::IllConditioned(format!(
            "R_n + gamma2 I is not positive definite (gamma2 = {gamma2}, jitter = {jitter:?})"
        ))),
    }
}

/// Joint Gaussian moments of observations from `new_masks` given `record`.
///
/// `E(y_i | y) = r_n(A_i)ᵀ [R_n + γ²I]⁻¹ y` and
/// `Cov(y_i, y_j | y) = Cov(y_i, y_j) − σ² r_n(A_i)ᵀ [R_n + γ²I]⁻¹ r_n(A_j)`,
/// where each new mask is a separate observation with its own noise.
pub fn conditional_moments(
    model: &SmgModel,
    record: &MeasurementRecord,
    new_masks: &[Mask],
) -> Result<ConditionalMoments> {
    if record.is_empty() {
        return Err(Error::InvalidArgument("measurement record is empty".into()));
    }
    for m in record.masks().iter().chain(new_masks) {
        model.check_dims(m.entries())?;
    }
    let n = record.len();
    let k = new_masks.len();
    let old = power_matrices(&model.u, &model.v, record.masks());
    let new = power_matrices(&model.u, &model.v, new_masks);
    let rn = linalg::gram(&old);
    let (chol, jitter) = regularized_cholesky(&rn, model.gamma2())?;

    let r = DMatrix::from_fn(n, k, |i, j| frob_inner(&old[i], &new[j]));
    let y = DVector::from_column_slice(record.y());
    let solved_y = chol.solve(&y);
    let solved_r = chol.solve(&r);
    let mean = r.transpose() * solved_y;

    let g_new = linalg::gram(&new);
    let reduction = r.transpose() * solved_r;
    let mut cov = (g_new - reduction) * model.sigma2;
    for i in 0..k {
        cov[(i, i)] += model.eta2;
    }
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(ConditionalMoments { mean, cov, jitter })
}

/// Exp-entropy of observations from `masks`: `det(sigma2 R_n + eta2 I)`,
/// with the proportionality constant fixed to one.
pub fn exp_entropy(model: &SmgModel, masks: &[Mask]) -> Result<f64> {
    for m in masks {
        model.check_dims(m.entries())?;
    }
    let n = masks.len();
    let mut k = correlation_matrix(&model.u, &model.v, masks) * model.sigma2;
    for i in 0..n {
        k[(i, i)] += model.eta2;
    }
    Ok(k.determinant())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::haar_frame;

    fn model7() -> SmgModel {
        SmgModel::random(7, 7, 4, 1.3, 0.2, 11).unwrap()
    }

    fn random_masks(seed: u64, n: usize, m1: usize, m2: usize) -> Vec<Mask> {
        let mut rng = linalg::rng(seed);
        (0..n).map(|_| Mask::random_unit(&mut rng, m1, m2)).collect()
    }

    #[test]
    fn model_rejects_full_rank() {
        assert!(SmgModel::random(4, 4, 4, 1.0, 0.0, 0).is_err());
        assert!(SmgModel::random(4, 5, 0, 1.0, 0.0, 0).is_err());
        assert!(SmgModel::random(4, 5, 2, 0.0, 0.0, 0).is_err());
    }

    #[test]
    fn model_rejects_non_orthonormal() {
        let u = DMatrix::from_element(5, 2, 1.0);
        let v = haar_frame(&mut linalg::rng(1), 5, 2);
        assert!(matches!(SmgModel::new(u, v, 1.0, 0.0), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn sample_lies_in_model_subspaces() {
        let m = model7();
        let x = sample_smg(&m, 5);
        let resid_u = (DMatrix::identity(7, 7) - m.proj_u()) * &x;
        let resid_v = &x * (DMatrix::identity(7, 7) - m.proj_v());
        assert!(resid_u.norm() < 1e-10);
        assert!(resid_v.norm() < 1e-10);
        let sv = x.singular_values();
        let big = sv.iter().filter(|s| **s > 1e-9 * sv.max()).count();
        assert!(big <= m.rank());
        assert_eq!(x, sample_smg(&m, 5));
    }

    #[test]
    fn mask_constraint() {
        assert!(Mask::new(DMatrix::from_element(2, 2, 0.5)).is_ok());
        assert!(Mask::new(DMatrix::from_element(2, 2, 0.6)).is_err());
        assert!(Mask::normalized(DMatrix::zeros(2, 2)).is_err());
        let m = Mask::normalized(DMatrix::from_element(3, 2, 4.0)).unwrap();
        assert!((m.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn record_length_mismatch() {
        let masks = random_masks(1, 2, 3, 3);
        assert!(MeasurementRecord::new(masks, vec![1.0]).is_err());
    }

    #[test]
    fn measure_self_inner_product() {
        let x = sample_smg(&model7(), 2);
        let a = Mask::normalized(x.clone()).unwrap();
        let y = measure(&x, &[a], 0.0, 0).unwrap();
        assert!((y[0] - x.norm()).abs() < 1e-12);
    }

    #[test]
    fn measure_orthogonal_mask_is_zero() {
        let mut x = DMatrix::zeros(3, 3);
        x[(0, 0)] = 2.0;
        let mut a = DMatrix::zeros(3, 3);
        a[(1, 2)] = 1.0;
        let y = measure(&x, &[Mask::new(a).unwrap()], 0.0, 4).unwrap();
        assert_eq!(y[0], 0.0);
    }

    #[test]
    fn measure_dimension_mismatch() {
        let x = DMatrix::zeros(3, 3);
        let a = Mask::normalized(DMatrix::from_element(3, 4, 1.0)).unwrap();
        assert!(matches!(measure(&x, &[a], 0.0, 0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn cov_of_mask_outside_column_space_is_noise_only() {
        let m = model7();
        // rows of A in the orthogonal complement of span(U)
        let perp = DMatrix::identity(7, 7) - m.proj_u();
        let a = Mask::normalized(perp * linalg::gaussian_matrix(&mut linalg::rng(3), 7, 7, 1.0)).unwrap();
        let b = random_masks(4, 1, 7, 7).remove(0);
        assert!(unconditional_cov(&m, &a, &b).unwrap().abs() < 1e-12);
        assert!((unconditional_var(&m, &a).unwrap() - m.eta2()).abs() < 1e-12);
    }

    #[test]
    fn rank_one_mask_in_tangent_space_has_full_variance() {
        let m = model7();
        let u1 = m.u().column(0).into_owned();
        let v1 = m.v().column(0).into_owned();
        let a = Mask::new(&u1 * v1.transpose()).unwrap();
        let var = unconditional_var(&m, &a).unwrap();
        assert!((var - (m.sigma2() + m.eta2())).abs() < 1e-12);
    }

    #[test]
    fn projection_properties() {
        let m = model7();
        let masks = random_masks(7, 2, 7, 7);
        let pa = project_mask(&m, &masks[0]).unwrap();
        let ppa = project_onto(m.u(), m.v(), &pa);
        assert!((&ppa - &pa).amax() < 1e-12);
        let b = masks[1].entries();
        let pb = project_onto(m.u(), m.v(), b);
        assert!(frob_inner(&pa, &(b - &pb)).abs() < 1e-12);
        assert!(pa.norm() <= masks[0].norm() + 1e-12);
        // already in T
        let sigma = linalg::gaussian_matrix(&mut linalg::rng(1), 4, 4, 1.0);
        let in_t = m.u() * sigma * m.v().transpose();
        let in_t = in_t.clone() / in_t.norm();
        let p = project_mask(&m, &Mask::new(in_t.clone()).unwrap()).unwrap();
        assert!((p - in_t).amax() < 1e-12);
    }

    #[test]
    fn exp_entropy_single_and_duplicate() {
        let m = model7();
        let masks = random_masks(8, 1, 7, 7);
        let e = exp_entropy(&m, &masks).unwrap();
        assert!((e - unconditional_var(&m, &masks[0]).unwrap()).abs() < 1e-12);

        let noiseless = SmgModel::new(m.u().clone(), m.v().clone(), 1.0, 0.0).unwrap();
        let dup = vec![masks[0].clone(), masks[0].clone()];
        assert!(exp_entropy(&noiseless, &dup).unwrap().abs() < 1e-12);
    }

    #[test]
    fn exp_entropy_permutation_invariant() {
        let m = model7();
        let mut masks = random_masks(12, 5, 7, 7);
        let e1 = exp_entropy(&m, &masks).unwrap();
        masks.reverse();
        masks.swap(0, 2);
        let e2 = exp_entropy(&m, &masks).unwrap();
        assert!((e1 - e2).abs() <= 1e-12 * e1.abs().max(1.0));
    }

    #[test]
    fn exp_entropy_schur_update() {
        let m = model7();
        let masks = random_masks(13, 5, 7, 7);
        let (prefix, last) = masks.split_at(4);
        let record = MeasurementRecord::new(prefix.to_vec(), vec![0.0; 4]).unwrap();
        let cm = conditional_moments(&m, &record, last).unwrap();
        let lhs = exp_entropy(&m, &masks).unwrap();
        let rhs = exp_entropy(&m, prefix).unwrap() * cm.cov[(0, 0)];
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs());
    }

    #[test]
    fn conditional_uncorrelated_mask() {
        let m = model7();
        let perp = DMatrix::identity(7, 7) - m.proj_u();
        let a = Mask::normalized(perp * linalg::gaussian_matrix(&mut linalg::rng(5), 7, 7, 1.0)).unwrap();
        let masks = random_masks(14, 3, 7, 7);
        let record = MeasurementRecord::new(masks, vec![0.3, -1.0, 2.0]).unwrap();
        let cm = conditional_moments(&m, &record, &[a]).unwrap();
        assert!(cm.mean[0].abs() < 1e-12);
        assert!((cm.cov[(0, 0)] - m.eta2()).abs() < 1e-12);
        assert!(cm.jitter.is_none());
    }

    #[test]
    fn conditional_repeat_mask_small_noise() {
        let base = model7();
        let masks = random_masks(15, 3, 7, 7);
        let mut prev = f64::INFINITY;
        for eta2 in [1e-2, 1e-4, 1e-6, 1e-8] {
            let m = SmgModel::new(base.u().clone(), base.v().clone(), 1.0, eta2).unwrap();
            let record = MeasurementRecord::new(masks.clone(), vec![1.0, 2.0, 3.0]).unwrap();
            let cm = conditional_moments(&m, &record, &masks[..1]).unwrap();
            let v = cm.cov[(0, 0)];
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-7);
    }

    #[test]
    fn conditional_noiseless_reports_jitter() {
        let base = model7();
        let m = SmgModel::new(base.u().clone(), base.v().clone(), 1.0, 0.0).unwrap();
        let masks = random_masks(16, 3, 7, 7);
        let record = MeasurementRecord::new(masks.clone(), vec![1.0, 2.0, 3.0]).unwrap();
        let cm = conditional_moments(&m, &record, &masks[..1]).unwrap();
        assert!(cm.jitter.is_some());
        assert!(cm.cov[(0, 0)].abs() < 1e-8);
    }

    #[test]
    fn conditional_empty_record_is_error() {
        let m = model7();
        let r = MeasurementRecord::default();
        assert!(conditional_moments(&m, &r, &random_masks(1, 1, 7, 7)).is_err());
    }
}
