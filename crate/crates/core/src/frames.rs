//! Frame sets (ordered lists of `m x R` orthonormal blocks), their block
//! coherence, and the sign-flipping post-processor.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, spectral_norm};
use crate::smg::TOLERANCES;

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSet {
    blocks: Vec<DMatrix<f64>>,
}

impl FrameSet {
    /// Every block must be `m x R` with `m ≥ R` and orthonormal columns.
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        if let Some(first) = blocks.first() {
            let (m, r) = first.shape();
            if r == 0 || m < r {
                return Err(Error::InvalidArgument(format!("frame blocks must be m x R with m >= R > 0, got {m}x{r}")));
            }
            for (i, b) in blocks.iter().enumerate() {
                if b.shape() != (m, r) {
                    return Err(Error::dims((m, r), b.shape()));
                }
                if linalg::orthonormality_error(b) > TOLERANCES.orthonormality {
                    return Err(Error::InvalidArgument(format!("frame block {i} is not orthonormal")));
                }
            }
        }
        Ok(Self { blocks })
    }

    /// Single-column blocks from the columns of `k` (each column unit norm).
    pub fn from_columns(k: &DMatrix<f64>) -> Result<Self> {
        Self::new(
            k.column_iter()
                .map(|c| DMatrix::from_column_slice(k.nrows(), 1, c.as_slice()))
                .collect(),
        )
    }

    /// Blocks `k_i ⊗ Q` for the columns `k_i` of `k`.
    pub fn kronecker(k: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<Self> {
        Self::new(k.column_iter().map(|c| c.into_owned().kronecker(q)).collect())
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }
    pub fn len(&self) -> usize {
        self.blocks.len()
    }
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
    /// Ambient dimension `m`.
    pub fn dim(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.nrows())
    }
    /// Block rank `R`.
    pub fn rank(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.ncols())
    }

    pub fn negated(&self, signs: &[f64]) -> Self {
        Self {
            blocks: self.blocks.iter().zip(signs).map(|(b, s)| b * *s).collect(),
        }
    }
}

/// `n` independent Haar-uniform `R`-frames in `R^m`.
pub fn random_frames(m: usize, r: usize, n: usize, seed: u64) -> Result<FrameSet> {
    if r == 0 || m < r {
        return Err(Error::InvalidArgument(format!("need m >= R > 0, got m = {m}, R = {r}")));
    }
    let mut rng = linalg::rng(seed);
    FrameSet::new((0..n).map(|_| linalg::haar_frame(&mut rng, m, r)).collect())
}

fn need_pairs(frames: &FrameSet) -> Result<()> {
    if frames.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "block coherence needs at least two blocks, got {}",
            frames.len()
        )));
    }
    Ok(())
}

/// `max_{i≠j} ‖F_iᵀF_j‖₂`.
pub fn worst_case_coherence(frames: &FrameSet) -> Result<f64> {
    need_pairs(frames)?;
    let b = frames.blocks();
    let mut worst = 0.0f64;
    for i in 0..b.len() {
        for j in i + 1..b.len() {
            worst = worst.max(spectral_norm(&(b[i].transpose() * &b[j])));
        }
    }
    Ok(worst)
}

/// `(1/(n−1)) max_i ‖Σ_{j≠i} F_iᵀF_j‖₂`.
pub fn avg_coherence(frames: &FrameSet) -> Result<f64> {
    need_pairs(frames)?;
    let b = frames.blocks();
    let n = b.len();
    let total: DMatrix<f64> = b.iter().fold(DMatrix::zeros(frames.dim(), frames.rank()), |acc, f| acc + f);
    let worst = b
        .iter()
        .map(|f| spectral_norm(&(f.transpose() * (&total - f))))
        .fold(0.0, f64::max);
    Ok(worst / (n - 1) as f64)
}

/// Signs chosen by the flipping pass: keep block `k+1` when
/// `‖F_k + R_{k+1}‖₂ ≤ ‖F_k − R_{k+1}‖₂`, negate it otherwise, where `F_k`
/// is the running sum of the already-signed blocks.
pub fn flip_signs(frames: &FrameSet) -> Vec<f64> {
    let b = frames.blocks();
    let mut signs = Vec::with_capacity(b.len());
    let Some(first) = b.first() else {
        return signs;
    };
    signs.push(1.0);
    let mut running = first.clone();
    for r in &b[1..] {
        let plus = spectral_norm(&(&running + r));
        let minus = spectral_norm(&(&running - r));
        let s = if plus <= minus { 1.0 } else { -1.0 };
        running += r * s;
        signs.push(s);
    }
    signs
}

/// Sign-flipped copy of `frames` with reduced average block coherence.
pub fn flip(frames: &FrameSet) -> FrameSet {
    frames.negated(&flip_signs(frames))
}
