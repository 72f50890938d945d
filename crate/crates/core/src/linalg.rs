//! Small dense helpers shared by the model, design and simulation code.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Singular values below `RANK_RTOL * sigma_max` count as zero.
pub const RANK_RTOL: f64 = 1e-9;

/// Default relative tolerance for eigenvalue multiset comparison.
pub const EIG_RTOL: f64 = 1e-6;

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank with the library-wide relative tolerance.
pub fn rank(m: &DMatrix<f64>) -> usize {
    rank_with(m, RANK_RTOL)
}

pub fn rank_with(m: &DMatrix<f64>, rtol: f64) -> usize {
    let s = singular_values(m);
    let Some(&smax) = s.first() else { return 0 };
    if !(smax > 0.0) {
        return 0;
    }
    s.iter().filter(|&&v| v > rtol * smax).count()
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// Sorts by real part ascending, then imaginary part descending.
pub fn sort_eigenvalues(v: &mut [Complex64]) {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(b.im.total_cmp(&a.im)));
}

/// Minimum-cost perfect assignment on a square cost matrix.
/// Returns `assign[row] = col`.
pub fn min_cost_assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square cost matrix");
    if n == 0 {
        return Vec::new();
    }
    // Potentials-based Hungarian method, 1-indexed internally.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if j1 == 0 {
                // Only reachable with non-finite costs; fall back to the first free column.
                j1 = (1..=n).find(|&j| !used[j]).unwrap_or(1);
                delta = 0.0;
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Matches two eigenvalue multisets by minimum total distance and returns the pairs.
pub fn match_spectra(a: &[Complex64], b: &[Complex64]) -> Vec<(Complex64, Complex64)> {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let cost = DMatrix::from_fn(n, n, |i, j| (a[i] - b[j]).norm());
    min_cost_assignment(&cost)
        .into_iter()
        .enumerate()
        .map(|(i, j)| (a[i], b[j]))
        .collect()
}

/// True when the multisets agree pairwise within `rtol`, relative to each
/// pair's magnitude with a floor tied to the overall spectral scale.
pub fn spectra_match(a: &[Complex64], b: &[Complex64], rtol: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let scale = a
        .iter()
        .chain(b.iter())
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let floor = 1e-12 * scale;
    match_spectra(a, b).into_iter().all(|(x, y)| {
        let d = (x - y).norm();
        d <= rtol * x.norm().max(y.norm()).max(floor)
    })
}

/// Largest pairwise relative deviation after matching.
pub fn spectra_max_rel_dev(a: &[Complex64], b: &[Complex64]) -> f64 {
    match_spectra(a, b)
        .into_iter()
        .map(|(x, y)| (x - y).norm() / x.norm().max(y.norm()).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Zero-order-hold pair `(exp(A h), ∫_0^h exp(A s) ds B)` from one augmented exponential.
pub fn zoh(a: &DMatrix<f64>, b: &DMatrix<f64>, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m = b.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * h));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * h));
    let e = aug.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Relative singular-value cut for the estimation-error subspace.
const ERR_BASIS_RTOL: f64 = 1e-10;

/// Orthonormal basis for the column space of `m`.
pub fn orthonormal_basis(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return Ok(DMatrix::zeros(m.nrows(), 0));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite response matrix".into()));
    }
    let svd = m
        .clone()
        .try_svd(true, false, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Validation("SVD did not converge".into()))?;
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax > 0.0 && svd.singular_values[i] > ERR_BASIS_RTOL * smax)
        .collect();
    Ok(DMatrix::from_fn(m.nrows(), keep.len(), |r, c| {
        u[(r, keep[c])]
    }))
}

/// `d -= Q Q^T d` for orthonormal `Q`.
pub fn project_out(d: &mut DVector<f64>, q: &DMatrix<f64>) {
    if q.ncols() > 0 {
        let c = q.tr_mul(d);
        d.gemv(-1.0, q, &c, 1.0);
    }
}
