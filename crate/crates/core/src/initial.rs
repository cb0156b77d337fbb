//! Initial mask designs built from well-packed row and column frames, and
//! the Gershgorin-type lower bound on exp-entropy they are designed for.
//!
//! Each mask has the equal-weight SVD form `A_i = R_ini^{-1/2} R_i S_iᵀ` with
//! `R_i`, `S_i` orthonormal `m1 x R_ini` and `m2 x R_ini` frames, so
//! `‖A_i‖_F = 1` exactly.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::frames::{self, FrameSet};
use crate::kerdock;
use crate::linalg::{self, derive_seed, spectral_norm};
use crate::smg::{self, Mask, SmgModel};

/// Masks together with the frames that generated them.
#[derive(Clone, Debug)]
pub struct InitialDesign {
    pub masks: Vec<Mask>,
    /// Row frames after flipping.
    pub rows: FrameSet,
    /// Column frames after flipping.
    pub cols: FrameSet,
    /// Row frames before flipping.
    pub raw_rows: FrameSet,
    /// Column frames before flipping.
    pub raw_cols: FrameSet,
}

/// Equal-weight masks `R_i S_iᵀ / √R` from paired frames.
pub fn masks_from_frames(rows: &FrameSet, cols: &FrameSet) -> Result<Vec<Mask>> {
    if rows.len() != cols.len() {
        return Err(Error::InvalidArgument(format!(
            "{} row frames but {} column frames",
            rows.len(),
            cols.len()
        )));
    }
    if rows.rank() != cols.rank() {
        return Err(Error::InvalidArgument(format!(
            "row frames have rank {} but column frames rank {}",
            rows.rank(),
            cols.rank()
        )));
    }
    let scale = 1.0 / (rows.rank() as f64).sqrt();
    rows.blocks()
        .iter()
        .zip(cols.blocks())
        .map(|(r, s)| Mask::new(r * s.transpose() * scale))
        .collect()
}

fn check_dims(m1: usize, m2: usize, n: usize, r_ini: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("initial design needs n >= 1".into()));
    }
    if r_ini == 0 || r_ini > m1.min(m2) {
        return Err(Error::InvalidArgument(format!(
            "R_ini = {r_ini} must lie in 1..=min({m1}, {m2})"
        )));
    }
    Ok(())
}

/// Flipping construction: Haar-random frames post-processed by `flip`.
pub fn ini_flip_design(m1: usize, m2: usize, n: usize, r_ini: usize, seed: u64) -> Result<InitialDesign> {
    check_dims(m1, m2, n, r_ini)?;
    let raw_rows = frames::random_frames(m1, r_ini, n, derive_seed(seed, &["ini.flip", "rows"]))?;
    let raw_cols = frames::random_frames(m2, r_ini, n, derive_seed(seed, &["ini.flip", "cols"]))?;
    let rows = frames::flip(&raw_rows);
    let cols = frames::flip(&raw_cols);
    let masks = masks_from_frames(&rows, &cols)?;
    Ok(InitialDesign { masks, rows, cols, raw_rows, raw_cols })
}

pub fn ini_flip(m1: usize, m2: usize, n: usize, r_ini: usize, seed: u64) -> Result<Vec<Mask>> {
    Ok(ini_flip_design(m1, m2, n, r_ini, seed)?.masks)
}

/// Kerdock degrees `(k1, k2)` when `(m1, m2, R_ini, n)` admits the
/// Kerdock-Kronecker construction.
///
/// Requires `m = 2^(k+1) R_ini` with `k` odd on both sides and `n` no larger
/// than the number of distinct Kerdock lines on either side, which is
/// `2^(k+1) (2^k + 1)` and never exceeds `2^(2k+2)`.
pub fn kerdock_geometry(m1: usize, m2: usize, r_ini: usize, n: usize) -> Option<(u32, u32)> {
    if r_ini == 0 || n == 0 || !m1.is_multiple_of(r_ini) || !m2.is_multiple_of(r_ini) {
        return None;
    }
    let (d1, d2) = (m1 / r_ini, m2 / r_ini);
    let k1 = kerdock::kerdock_degree(d1)?;
    let k2 = kerdock::kerdock_degree(d2)?;
    (n <= kerdock::system_size(d1).min(kerdock::system_size(d2))).then_some((k1, k2))
}

/// Kerdock-Kronecker construction: `R* = K_R ⊗ Q_R`, `S* = K_S ⊗ Q_S` with
/// Haar-random orthogonal `Q`, then `flip`.
pub fn ini_kk_design(m1: usize, m2: usize, n: usize, r_ini: usize, seed: u64) -> Result<InitialDesign> {
    check_dims(m1, m2, n, r_ini)?;
    if kerdock_geometry(m1, m2, r_ini, n).is_none() {
        return Err(Error::UnsupportedGeometry(format!(
            "(m1, m2, R_ini, n) = ({m1}, {m2}, {r_ini}, {n}) does not admit Kerdock-Kronecker frames"
        )));
    }
    let k_rows = kerdock::kerdock_matrix(m1 / r_ini, n)?;
    let k_cols = kerdock::kerdock_matrix(m2 / r_ini, n)?;
    let mut rng = linalg::rng(derive_seed(seed, &["ini.kk", "unitary"]));
    let q_rows = linalg::haar_orthogonal(&mut rng, r_ini);
    let q_cols = linalg::haar_orthogonal(&mut rng, r_ini);
    let raw_rows = FrameSet::kronecker(&k_rows, &q_rows)?;
    let raw_cols = FrameSet::kronecker(&k_cols, &q_cols)?;
    let rows = frames::flip(&raw_rows);
    let cols = frames::flip(&raw_cols);
    let masks = masks_from_frames(&rows, &cols)?;
    Ok(InitialDesign { masks, rows, cols, raw_rows, raw_cols })
}

pub fn ini_kk(m1: usize, m2: usize, n: usize, r_ini: usize, seed: u64) -> Result<Vec<Mask>> {
    Ok(ini_kk_design(m1, m2, n, r_ini, seed)?.masks)
}

/// `max_{j≠i} ‖(P F_i)ᵀ(P F_j)‖₂²` for each `i`, with `P = WWᵀ`.
fn projected_cross_coherence(w: &DMatrix<f64>, frames: &FrameSet) -> Vec<f64> {
    // (P F_i)ᵀ(P F_j) = (WᵀF_i)ᵀ(WᵀF_j)
    let coords: Vec<DMatrix<f64>> = frames.blocks().iter().map(|f| w.transpose() * f).collect();
    (0..coords.len())
        .map(|i| {
            (0..coords.len())
                .filter(|&j| j != i)
                .map(|j| spectral_norm(&(coords[i].transpose() * &coords[j])).powi(2))
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Lower bound on `exp_entropy^{1/n}` for masks `R_i S_iᵀ / √R`:
/// `min_i [Var(y_i) − σ²(n−1)/2 (ξ_{i,U} + ξ_{i,V})]`. Can be negative, in
/// which case it says nothing.
pub fn entropy_lower_bound(model: &SmgModel, rows: &FrameSet, cols: &FrameSet) -> Result<f64> {
    let (m1, m2) = model.dims();
    if rows.dim() != m1 || cols.dim() != m2 {
        return Err(Error::dims((m1, m2), (rows.dim(), cols.dim())));
    }
    let masks = masks_from_frames(rows, cols)?;
    let n = masks.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no masks".into()));
    }
    let xi_u = projected_cross_coherence(model.u(), rows);
    let xi_v = projected_cross_coherence(model.v(), cols);
    let half = model.sigma2() * (n as f64 - 1.0) / 2.0;
    let mut bound = f64::INFINITY;
    for (i, a) in masks.iter().enumerate() {
        let var = smg::unconditional_var(model, a)?;
        bound = bound.min(var - half * (xi_u[i] + xi_v[i]));
    }
    Ok(bound)
}
