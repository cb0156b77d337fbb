//! Small dense linear-algebra and randomness helpers shared by the design
//! and recovery modules.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

pub type Rng64 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent seed from a master seed and a list of labels.
///
/// Stable across platforms and releases: SHA-256 over the little-endian
/// master seed followed by each label, length-prefixed.
pub fn derive_seed(master: u64, labels: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for l in labels {
        h.update((l.len() as u64).to_le_bytes());
        h.update(l.as_bytes());
    }
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

/// Haar-uniform `m x r` matrix with orthonormal columns.
///
/// QR of an i.i.d. Gaussian matrix, with columns re-signed so that the
/// triangular factor has a positive diagonal.
pub fn haar_frame<R: Rng + ?Sized>(rng: &mut R, m: usize, r: usize) -> DMatrix<f64> {
    assert!(r <= m, "frame rank {r} exceeds ambient dimension {m}");
    let g = gaussian_matrix(rng, m, r, 1.0);
    let qr = g.qr();
    let mut q = qr.q();
    let tri = qr.r();
    for j in 0..r {
        if tri[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Haar-uniform orthogonal `r x r` matrix.
pub fn haar_orthogonal<R: Rng + ?Sized>(rng: &mut R, r: usize) -> DMatrix<f64> {
    haar_frame(rng, r, r)
}

pub fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Max-entry deviation of `FᵀF` from the identity.
pub fn orthonormality_error(f: &DMatrix<f64>) -> f64 {
    let g = f.transpose() * f;
    let n = g.nrows();
    (g - DMatrix::<f64>::identity(n, n)).amax()
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
///
/// Ties keep the order produced by the underlying solver, so the output is
/// deterministic for a given input.
pub fn sym_eigen_ascending(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(m.nrows(), order.len());
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Thin SVD with singular values sorted descending.
pub fn svd_sorted(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let k = order.len();
    let mut us = DMatrix::zeros(u.nrows(), k);
    let mut vs = DMatrix::zeros(vt.ncols(), k);
    for (c, &i) in order.iter().enumerate() {
        us.set_column(c, &u.column(i));
        vs.set_column(c, &vt.row(i).transpose());
    }
    let ss = DVector::from_iterator(k, order.iter().map(|&i| s[i]));
    (us, ss, vs)
}

/// Sines of the principal angles between the column spans of two
/// orthonormal frames; all zero when the spans coincide.
pub fn principal_angle_sines(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let c = a.transpose() * b;
    c.singular_values()
        .iter()
        .map(|s| (1.0 - s.min(1.0).powi(2)).max(0.0).sqrt())
        .collect()
}

/// `n x n` matrix of pairwise Frobenius inner products.
pub fn gram(mats: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = mats.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = frob_inner(&mats[i], &mats[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}
