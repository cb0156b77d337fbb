//! Closed-form sequential mask design from plug-in subspace estimates, and
//! the PCA-style oracle that knows the true subspaces.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, frob_inner};
use crate::smg::{self, Mask, SmgModel, TOLERANCES};

/// Plug-in row and column subspaces `(Û, V̂)` of estimated rank `R̂`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceEstimate {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl SubspaceEstimate {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        let r = u.ncols();
        if r == 0 || v.ncols() != r {
            return Err(Error::InvalidArgument(format!(
                "subspace bases need equal positive rank, got {} and {}",
                u.ncols(),
                v.ncols()
            )));
        }
        if u.nrows() < r || v.nrows() < r {
            return Err(Error::InvalidArgument(format!(
                "rank {r} exceeds ambient dimensions {}x{}",
                u.nrows(),
                v.nrows()
            )));
        }
        if linalg::orthonormality_error(&u) > TOLERANCES.orthonormality
            || linalg::orthonormality_error(&v) > TOLERANCES.orthonormality
        {
            return Err(Error::InvalidArgument("subspace bases must be orthonormal".into()));
        }
        Ok(Self { u, v })
    }

    /// The true subspaces of a model.
    pub fn from_model(model: &SmgModel) -> Self {
        Self { u: model.u().clone(), v: model.v().clone() }
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }
    pub fn rank(&self) -> usize {
        self.u.ncols()
    }
    pub fn dims(&self) -> (usize, usize) {
        (self.u.nrows(), self.v.nrows())
    }

    fn check(&self, m: &Mask) -> Result<()> {
        if m.dims() != self.dims() {
            return Err(Error::dims(self.dims(), m.dims()));
        }
        Ok(())
    }
}

fn check_gamma2(gamma2: f64) -> Result<()> {
    if !(gamma2 > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma2 must be positive, got {gamma2}")));
    }
    Ok(())
}

/// `‖P_Û A P_V̂‖_F² − r̂ᵀ [R̂ + γ²I]⁻¹ r̂`: the conditional variance of an
/// observation with mask `a` in units of `σ²`, less `γ²`.
pub fn seq_objective(est: &SubspaceEstimate, masks: &[Mask], gamma2: f64, a: &Mask) -> Result<f64> {
    check_gamma2(gamma2)?;
    est.check(a)?;
    for m in masks {
        est.check(m)?;
    }
    let sa = &smg::power_matrices(&est.u, &est.v, [a])[0];
    let own = sa.norm_squared();
    if masks.is_empty() {
        return Ok(own);
    }
    let old = smg::power_matrices(&est.u, &est.v, masks);
    let rn = linalg::gram(&old);
    let (chol, _) = smg::regularized_cholesky(&rn, gamma2)?;
    let r = DVector::from_iterator(old.len(), old.iter().map(|s| frob_inner(s, sa)));
    Ok(own - r.dot(&chol.solve(&r)))
}

/// Output of [`next_mask`].
#[derive(Clone, Debug)]
pub struct NextMasks {
    pub masks: Vec<Mask>,
    /// Eigenvalues of `Dᵀ[R̂ + γ²I]⁻¹D` used for the returned masks, ascending.
    pub eigenvalues: Vec<f64>,
    /// Every eigenvalue equal, so any unit `Σ` is optimal.
    pub degenerate: bool,
}

/// `Dᵀ [R̂ + γ²I]⁻¹ D` where row `i` of `D` is `vec(ÛᵀA_iV̂)` (column-major).
pub fn information_matrix(est: &SubspaceEstimate, masks: &[Mask], gamma2: f64) -> Result<DMatrix<f64>> {
    check_gamma2(gamma2)?;
    let r = est.rank();
    if masks.is_empty() {
        return Ok(DMatrix::zeros(r * r, r * r));
    }
    for m in masks {
        est.check(m)?;
    }
    let sig = smg::power_matrices(&est.u, &est.v, masks);
    let d = DMatrix::from_fn(sig.len(), r * r, |i, j| sig[i].as_slice()[j]);
    let rn = &d * d.transpose();
    let (chol, _) = smg::regularized_cholesky(&rn, gamma2)?;
    let m = d.transpose() * chol.solve(&d);
    Ok((&m + m.transpose()) * 0.5)
}

/// The `k` masks `Û Σ V̂ᵀ` with `vec(Σ)` running over the eigenvectors of
/// the `k` smallest eigenvalues of [`information_matrix`]. For `k = 1` this
/// maximises [`seq_objective`] over the unit Frobenius ball.
///
/// With no prior masks the problem is degenerate and the result is
/// `Û e₁e₁ᵀ V̂ᵀ`, `Û e₂e₁ᵀ V̂ᵀ`, … in column-major order of `Σ`.
pub fn next_mask(est: &SubspaceEstimate, masks: &[Mask], gamma2: f64, k: usize) -> Result<NextMasks> {
    let r = est.rank();
    if k == 0 || k > r * r {
        return Err(Error::InvalidArgument(format!(
            "batch size must lie in 1..={} for estimated rank {r}, got {k}",
            r * r
        )));
    }
    let info = information_matrix(est, masks, gamma2)?;
    let (vals, vecs) = if masks.is_empty() {
        (DVector::zeros(r * r), DMatrix::identity(r * r, r * r))
    } else {
        linalg::sym_eigen_ascending(&info)
    };
    let spread = vals[vals.len() - 1] - vals[0];
    let degenerate = spread <= 1e-12 * vals[vals.len() - 1].abs().max(1.0);
    let out = (0..k)
        .map(|c| {
            let sigma = DMatrix::from_column_slice(r, r, vecs.column(c).as_slice());
            Mask::normalized(&est.u * sigma * est.v.transpose())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NextMasks { masks: out, eigenvalues: vals.iter().take(k).copied().collect(), degenerate })
}

/// [`next_mask`] on the leading `rank` singular pairs of `xhat`, adding one
/// pair at a time while the best mask's objective `1 − λ_min` stays below
/// `saturation`. `saturation = 0` is plain [`next_mask`]. The batch size is
/// capped at `R̂²` for the rank finally used.
pub fn next_mask_growing(
    xhat: &DMatrix<f64>,
    rank: usize,
    masks: &[Mask],
    gamma2: f64,
    k: usize,
    saturation: f64,
) -> Result<NextMasks> {
    let (u, _, v) = linalg::svd_sorted(xhat);
    let max_rank = u.ncols().min(v.ncols());
    if rank == 0 || rank > max_rank {
        return Err(Error::InvalidArgument(format!("rank must lie in 1..={max_rank}, got {rank}")));
    }
    let mut r = rank;
    loop {
        let est = SubspaceEstimate::new(u.columns(0, r).into_owned(), v.columns(0, r).into_owned())?;
        let out = next_mask(&est, masks, gamma2, k.min(r * r))?;
        if r == max_rank || 1.0 - out.eigenvalues[0] >= saturation {
            return Ok(out);
        }
        r += 1;
    }
}

/// The first `n` of the masks `u_k v_lᵀ` (row-major over `(k, l)`), an
/// orthonormal basis of `T_{U,V}` whose observations are mutually
/// uncorrelated with variance `σ² + η²`.
pub fn pca_masks(model: &SmgModel, n: usize) -> Result<Vec<Mask>> {
    let r = model.rank();
    if n > r * r {
        return Err(Error::InvalidArgument(format!(
            "only {} uncorrelated directions exist at rank {r}, asked for {n}",
            r * r
        )));
    }
    (0..n)
        .map(|i| {
            let (k, l) = (i / r, i % r);
            Mask::new(model.u().column(k) * model.v().column(l).transpose())
        })
        .collect()
}

/// Method-of-moments `σ̂²` from `E y_i² = σ² ‖ÛᵀA_iV̂‖_F² + η²`, floored at
/// a tiny positive value.
pub fn estimate_sigma2(est: &SubspaceEstimate, masks: &[Mask], y: &[f64], eta2: f64) -> Result<f64> {
    if masks.len() != y.len() || masks.is_empty() {
        return Err(Error::InvalidArgument("need equally many masks and observations, at least one".into()));
    }
    for m in masks {
        est.check(m)?;
    }
    let power: f64 = smg::power_matrices(&est.u, &est.v, masks).iter().map(|s| s.norm_squared()).sum();
    let energy: f64 = y.iter().map(|v| v * v).sum::<f64>() - eta2 * y.len() as f64;
    Ok((energy / power.max(f64::MIN_POSITIVE)).max(1e-12))
}
