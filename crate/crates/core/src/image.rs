//! Image patching: an `h x w` grid becomes a `p² x (hw/p²)` matrix with one
//! column per `p x p` patch.
//!
//! Patches are taken in row-major patch order; within a patch pixels are
//! read row by row.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const PATCH: usize = 8;

pub fn patch_image(pixels: &DMatrix<f64>, p: usize) -> Result<DMatrix<f64>> {
    let (h, w) = pixels.shape();
    if p == 0 || h % p != 0 || w % p != 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("{h}x{w} image does not split into {p}x{p} patches")));
    }
    let per_row = w / p;
    let mut out = DMatrix::zeros(p * p, (h / p) * per_row);
    for (col, mut dst) in out.column_iter_mut().enumerate() {
        let (br, bc) = (col / per_row, col % per_row);
        for r in 0..p {
            for c in 0..p {
                dst[r * p + c] = pixels[(br * p + r, bc * p + c)];
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patch_image`] for an `h x w` image.
pub fn unpatch_image(m: &DMatrix<f64>, p: usize, h: usize, w: usize) -> Result<DMatrix<f64>> {
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
        return Err(Error::InvalidArgument(format!("{h}x{w} image does not split into {p}x{p} patches")));
    }
    let per_row = w / p;
    if m.shape() != (p * p, (h / p) * per_row) {
        return Err(Error::dims((p * p, (h / p) * per_row), m.shape()));
    }
    let mut out = DMatrix::zeros(h, w);
    for (col, src) in m.column_iter().enumerate() {
        let (br, bc) = (col / per_row, col % per_row);
        for r in 0..p {
            for c in 0..p {
                out[(br * p + r, bc * p + c)] = src[r * p + c];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, rng};

    #[test]
    fn single_patch_is_row_major_vectorization() {
        let img = DMatrix::from_fn(8, 8, |r, c| (r * 8 + c) as f64);
        let m = patch_image(&img, 8).unwrap();
        assert_eq!(m.shape(), (64, 1));
        for i in 0..64 {
            assert_eq!(m[i], i as f64);
        }
    }

    #[test]
    fn round_trip_and_shape() {
        let img = gaussian_matrix(&mut rng(1), 64, 64, 1.0);
        let m = patch_image(&img, PATCH).unwrap();
        assert_eq!(m.shape(), (64, 64));
        assert_eq!(unpatch_image(&m, PATCH, 64, 64).unwrap(), img);
        let wide = gaussian_matrix(&mut rng(2), 16, 24, 1.0);
        let m = patch_image(&wide, PATCH).unwrap();
        assert_eq!(m.shape(), (64, 6));
        // second patch sits to the right of the first
        assert_eq!(m[(0, 1)], wide[(0, 8)]);
        assert_eq!(unpatch_image(&m, PATCH, 16, 24).unwrap(), wide);
    }

    #[test]
    fn rejects_ragged_sizes() {
        assert!(patch_image(&DMatrix::zeros(9, 8), 8).is_err());
        assert!(unpatch_image(&DMatrix::zeros(64, 2), 8, 8, 8).is_err());
    }
}
