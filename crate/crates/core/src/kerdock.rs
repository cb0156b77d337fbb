//! Real Kerdock frames: mutually unbiased orthonormal bases of `R^N`,
//! `N = 2^(k+1)` with `k` odd.
//!
//! The system is the standard basis together with `2^k` bases indexed by a
//! Kerdock set of alternating binary matrices `{A_a : a ∈ GF(2^k)}` whose
//! pairwise differences are nonsingular over GF(2). Basis `a` consists of the
//! vectors `x ↦ (−1)^(q_a(x) + b·x) / √N` for `b ∈ GF(2)^(k+1)`, where
//! `q_a(x) = Σ_{i<j} (A_a)_ij x_i x_j`. Nonsingular differences make every
//! `q_a + q_a'` a bent function, so vectors from different bases have inner
//! product `±1/√N`.
//!
//! `A_a` extends the symmetric trace form `Q_a(x, y) = Tr(a x y)` on
//! `GF(2^k)` by one coordinate. With `l = diag(Q_a)` (the linear functional
//! `x ↦ Tr(a x²)`), `A_a = [[Q_a + l lᵀ, l], [lᵀ, 0]]`, which has zero
//! diagonal and is therefore alternating.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::frames::FrameSet;

/// Irreducible polynomials (bit masks including the leading term) for the
/// supported odd extension degrees.
const IRREDUCIBLE: &[(u32, u32)] = &[
    (1, 0b11),
    (3, 0b1011),
    (5, 0b100101),
    (7, 0b1000_0011),
    (9, 0b10_0001_0001),
    (11, 0b1000_0000_0101),
];

#[derive(Clone, Copy, Debug)]
struct Gf2k {
    k: u32,
    poly: u32,
}

impl Gf2k {
    fn new(k: u32) -> Option<Self> {
        IRREDUCIBLE.iter().find(|(d, _)| *d == k).map(|&(k, poly)| Self { k, poly })
    }

    fn mul(self, mut a: u32, mut b: u32) -> u32 {
        let mut acc = 0;
        while b != 0 {
            if b & 1 == 1 {
                acc ^= a;
            }
            b >>= 1;
            a <<= 1;
            if a >> self.k & 1 == 1 {
                a ^= self.poly;
            }
        }
        acc
    }

    fn trace(self, a: u32) -> u32 {
        let mut t = 0;
        let mut p = a;
        for _ in 0..self.k {
            t ^= p;
            p = self.mul(p, p);
        }
        debug_assert!(t <= 1, "trace must land in GF(2)");
        t & 1
    }
}

/// `k` such that `m = 2^(k+1)` with `k` odd and supported, if any.
pub fn kerdock_degree(m: usize) -> Option<u32> {
    if m < 4 || !m.is_power_of_two() {
        return None;
    }
    let k = m.trailing_zeros() - 1;
    (k % 2 == 1 && Gf2k::new(k).is_some()).then_some(k)
}

/// Number of distinct lines in the Kerdock system of dimension `m`:
/// `m (m/2 + 1)`.
pub fn system_size(m: usize) -> usize {
    m * (m / 2 + 1)
}

/// Alternating `(k+1) x (k+1)` binary matrix for field element `a`.
pub(crate) fn alternating_form(field_k: u32, a: u32) -> Vec<Vec<u8>> {
    let f = Gf2k::new(field_k).expect("supported degree");
    let k = field_k as usize;
    let q: Vec<Vec<u8>> = (0..k)
        .map(|i| (0..k).map(|j| f.trace(f.mul(a, f.mul(1 << i, 1 << j))) as u8).collect())
        .collect();
    let diag: Vec<u8> = (0..k).map(|i| q[i][i]).collect();
    let mut out = vec![vec![0u8; k + 1]; k + 1];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                out[i][j] = q[i][j] ^ (diag[i] & diag[j]);
            }
        }
        out[i][k] = diag[i];
        out[k][i] = diag[i];
    }
    out
}

/// Rank over GF(2).
#[cfg(test)]
pub(crate) fn gf2_rank(rows: &[Vec<u8>]) -> usize {
    let mut m: Vec<Vec<u8>> = rows.to_vec();
    let ncols = m.first().map_or(0, Vec::len);
    let mut rank = 0;
    for c in 0..ncols {
        let Some(p) = (rank..m.len()).find(|&r| m[r][c] == 1) else {
            continue;
        };
        m.swap(rank, p);
        for r in 0..m.len() {
            if r != rank && m[r][c] == 1 {
                let pivot = m[rank].clone();
                for (x, y) in m[r].iter_mut().zip(pivot) {
                    *x ^= y;
                }
            }
        }
        rank += 1;
    }
    rank
}

fn quadratic_value(form: &[Vec<u8>], x: usize) -> u32 {
    let n = form.len();
    let mut q = 0u32;
    for i in 0..n {
        if x >> i & 1 == 0 {
            continue;
        }
        for j in i + 1..n {
            if x >> j & 1 == 1 {
                q ^= form[i][j] as u32;
            }
        }
    }
    q
}

/// All `m/2 + 1` bases of the system, standard basis first, then the bases
/// for `a = 0, 1, …, 2^k − 1`.
pub fn kerdock_bases(m: usize) -> Result<Vec<DMatrix<f64>>> {
    let k = kerdock_degree(m).ok_or_else(|| {
        Error::UnsupportedGeometry(format!(
            "Kerdock frames need dimension 2^(k+1) with k odd (k <= 11), got {m}"
        ))
    })?;
    let scale = 1.0 / (m as f64).sqrt();
    let mut bases = vec![DMatrix::identity(m, m)];
    for a in 0..(1u32 << k) {
        let form = alternating_form(k, a);
        let q: Vec<u32> = (0..m).map(|x| quadratic_value(&form, x)).collect();
        let basis = DMatrix::from_fn(m, m, |x, b| {
            let parity = q[x] ^ ((x & b).count_ones() & 1);
            if parity == 0 { scale } else { -scale }
        });
        bases.push(basis);
    }
    Ok(bases)
}

/// Picks column signs minimising `max_i |Σ_{j≠i} s_j G_ij|`, the quantity
/// that sets average coherence of unit-vector frames.
fn balance_signs(gram: &DMatrix<f64>) -> Vec<f64> {
    let n = gram.nrows();
    let score = |s: &[f64]| -> (f64, f64) {
        let mut worst = 0.0f64;
        let mut sq = 0.0;
        for i in 0..n {
            let rs: f64 = (0..n).filter(|&j| j != i).map(|j| s[j] * gram[(i, j)]).sum();
            worst = worst.max(rs.abs());
            sq += rs * rs;
        }
        // round away float noise so ties compare equal
        ((worst * 1e9).round() / 1e9, sq)
    };
    let better = |a: (f64, f64), b: (f64, f64)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1 - 1e-12);

    if n <= 1 {
        return vec![1.0; n];
    }
    if n <= 16 {
        // exhaustive with the first sign pinned
        let mut best = vec![1.0; n];
        let mut best_score = score(&best);
        let mut s = vec![1.0; n];
        for mask in 1u32..(1 << (n - 1)) {
            for j in 1..n {
                s[j] = if mask >> (j - 1) & 1 == 1 { -1.0 } else { 1.0 };
            }
            let sc = score(&s);
            if better(sc, best_score) {
                best_score = sc;
                best.copy_from_slice(&s);
            }
        }
        return best;
    }
    let mut s = vec![1.0; n];
    let mut cur = score(&s);
    for _ in 0..4 * n {
        let mut improved = false;
        for j in 1..n {
            s[j] = -s[j];
            let sc = score(&s);
            if better(sc, cur) {
                cur = sc;
                improved = true;
            } else {
                s[j] = -s[j];
            }
        }
        if !improved {
            break;
        }
    }
    s
}

/// `n` unit columns from the Kerdock system in dimension `m`, as a frame set
/// with rank-one blocks.
///
/// Columns fill whole bases in construction order, so as many pairs as
/// possible are orthogonal; column signs are then balanced to keep average
/// coherence low.
pub fn kerdock_frames(m: usize, n: usize) -> Result<FrameSet> {
    FrameSet::from_columns(&kerdock_matrix(m, n)?)
}

/// The `m x n` matrix whose columns are the frames of [`kerdock_frames`].
pub fn kerdock_matrix(m: usize, n: usize) -> Result<DMatrix<f64>> {
    let bases = kerdock_bases(m)?;
    if n == 0 || n > system_size(m) {
        return Err(Error::UnsupportedGeometry(format!(
            "dimension {m} holds between 1 and {} Kerdock lines, asked for {n}",
            system_size(m)
        )));
    }
    let mut cols = DMatrix::zeros(m, n);
    for c in 0..n {
        cols.set_column(c, &bases[c / m].column(c % m));
    }
    let g = cols.transpose() * &cols;
    let signs = balance_signs(&g);
    for (c, s) in signs.iter().enumerate() {
        if *s < 0.0 {
            cols.column_mut(c).neg_mut();
        }
    }
    Ok(cols)
}
