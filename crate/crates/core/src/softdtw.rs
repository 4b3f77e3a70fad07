//! Cosine cost matrices and (soft) dynamic time warping.
//!
//! `D[i][j] = d(i, j) + min_γ(D[i-1][j], D[i][j-1], D[i-1][j-1])` with
//! `D[0][0] = 0` and `+inf` on the remaining borders, where `min_γ` is the
//! log-sum-exp relaxation for `γ > 0` and the hard minimum for `γ = 0`.
//! The value is the unnormalized corner `D[T][N]`.

use crate::error::{domain, Error, Result};
use crate::matrix::Matrix;
use crate::types::FeatureSequence;

pub const DEFAULT_GAMMA: f64 = 1.0;

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return domain(format!("gamma must be finite and >= 0, got {gamma}"));
    }
    Ok(())
}

/// `min` for `γ = 0`, otherwise `-γ ln Σ exp(-a_i / γ)` (shifted by the minimum).
pub fn soft_min(values: &[f64], gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if values.is_empty() {
        return domain("soft_min of an empty list");
    }
    Ok(soft_min_unchecked(values, gamma))
}

#[inline]
fn soft_min_unchecked(values: &[f64], gamma: f64) -> f64 {
    let m = values.iter().copied().fold(f64::INFINITY, f64::min);
    if gamma == 0.0 || !m.is_finite() {
        return m;
    }
    let s: f64 = values.iter().map(|&a| (-(a - m) / gamma).exp()).sum();
    m - gamma * s.ln()
}

/// Pairwise cost matrix between two sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub entries: Matrix,
    /// Number of pairs where either vector had zero norm (cost set to 1).
    pub zero_norm_pairs: usize,
}

fn norms(m: &Matrix) -> Vec<f64> {
    m.row_iter()
        .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect()
}

/// `d(i, j) = 1 - cos(a_i, b_j)`, over raw matrices with matching column counts.
pub fn cosine_cost_matrix(a: &Matrix, b: &Matrix) -> Result<CostMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "feature dimensions differ: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    let (na, nb) = (norms(a), norms(b));
    let mut zero = 0;
    let entries = Matrix::from_fn(a.rows(), b.rows(), |i, j| {
        let denom = na[i] * nb[j];
        if denom == 0.0 {
            zero += 1;
            return 1.0;
        }
        let dot: f64 = a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        1.0 - dot / denom
    });
    Ok(CostMatrix {
        entries,
        zero_norm_pairs: zero,
    })
}

pub fn cosine_cost(f1: &FeatureSequence, f2: &FeatureSequence) -> Result<CostMatrix> {
    cosine_cost_matrix(f1.frames(), f2.frames())
}

/// Vector-Jacobian product of [`cosine_cost_matrix`]: given `∂L/∂d`, returns
/// `(∂L/∂a, ∂L/∂b)`. Zero-norm pairs contribute nothing.
pub fn cosine_cost_vjp(a: &Matrix, b: &Matrix, upstream: &Matrix) -> (Matrix, Matrix) {
    let (na, nb) = (norms(a), norms(b));
    let dim = a.cols();
    let mut ga = Matrix::zeros(a.rows(), dim);
    let mut gb = Matrix::zeros(b.rows(), dim);
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let g = upstream[(i, j)];
            let denom = na[i] * nb[j];
            if g == 0.0 || denom == 0.0 {
                continue;
            }
            let (ai, bj) = (a.row(i), b.row(j));
            let cos = ai.iter().zip(bj).map(|(x, y)| x * y).sum::<f64>() / denom;
            // ∂cos/∂a = b/(|a||b|) - cos a/|a|², and d = 1 - cos
            for k in 0..dim {
                ga[(i, k)] -= g * (bj[k] / denom - cos * ai[k] / (na[i] * na[i]));
                gb[(j, k)] -= g * (ai[k] / denom - cos * bj[k] / (nb[j] * nb[j]));
            }
        }
    }
    (ga, gb)
}

/// Accumulated DTW table `(T+1) x (N+1)` including the border row and column.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftDtwTable {
    pub gamma: f64,
    pub acc: Matrix,
}

impl SoftDtwTable {
    pub fn value(&self) -> f64 {
        self.acc[(self.acc.rows() - 1, self.acc.cols() - 1)]
    }
}

pub fn soft_dtw(cost: &Matrix, gamma: f64) -> Result<(f64, SoftDtwTable)> {
    check_gamma(gamma)?;
    let (n, m) = cost.shape();
    if n == 0 || m == 0 {
        return domain("soft-DTW needs a non-empty cost matrix");
    }
    if !cost.is_finite() {
        return domain("cost matrix contains non-finite entries");
    }
    let mut acc = Matrix::filled(n + 1, m + 1, f64::INFINITY);
    acc[(0, 0)] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let prev = [acc[(i - 1, j)], acc[(i, j - 1)], acc[(i - 1, j - 1)]];
            acc[(i, j)] = cost[(i - 1, j - 1)] + soft_min_unchecked(&prev, gamma);
        }
    }
    let table = SoftDtwTable { gamma, acc };
    Ok((table.value(), table))
}

/// `∂D[T][N] / ∂d(i, j)` by the reverse recursion over a stored table.
///
/// For `γ = 0` this is the indicator of the backtraced optimal path, ties
/// broken diagonal first, then `(i-1, j)`, then `(i, j-1)`.
pub fn soft_dtw_grad(cost: &Matrix, table: &SoftDtwTable) -> Result<Matrix> {
    let (n, m) = cost.shape();
    if table.acc.shape() != (n + 1, m + 1) {
        return domain(format!(
            "table shape {:?} does not match cost shape {:?}",
            table.acc.shape(),
            cost.shape()
        ));
    }
    if table.gamma == 0.0 {
        return Ok(hard_path_indicator(&table.acc, n, m));
    }
    let gamma = table.gamma;
    let r = &table.acc;
    // extended (n+2) x (m+2) arrays, 1-based interior
    let mut e = Matrix::zeros(n + 2, m + 2);
    let mut rr = Matrix::filled(n + 2, m + 2, f64::NEG_INFINITY);
    let mut dd = Matrix::zeros(n + 2, m + 2);
    for i in 1..=n {
        for j in 1..=m {
            rr[(i, j)] = r[(i, j)];
            dd[(i, j)] = cost[(i - 1, j - 1)];
        }
    }
    rr[(n + 1, m + 1)] = r[(n, m)];
    e[(n + 1, m + 1)] = 1.0;
    for j in (1..=m).rev() {
        for i in (1..=n).rev() {
            let here = rr[(i, j)];
            let a = ((rr[(i + 1, j)] - here - dd[(i + 1, j)]) / gamma).exp();
            let b = ((rr[(i, j + 1)] - here - dd[(i, j + 1)]) / gamma).exp();
            let c = ((rr[(i + 1, j + 1)] - here - dd[(i + 1, j + 1)]) / gamma).exp();
            e[(i, j)] = e[(i + 1, j)] * a + e[(i, j + 1)] * b + e[(i + 1, j + 1)] * c;
        }
    }
    Ok(Matrix::from_fn(n, m, |i, j| e[(i + 1, j + 1)]))
}

fn hard_path_indicator(acc: &Matrix, n: usize, m: usize) -> Matrix {
    let mut out = Matrix::zeros(n, m);
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        out[(i - 1, j - 1)] = 1.0;
        let diag = acc[(i - 1, j - 1)];
        let up = acc[(i - 1, j)];
        let left = acc[(i, j - 1)];
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    out
}

/// Soft-DTW over cosine costs between two feature sequences.
pub fn soft_dtw_distance(f1: &FeatureSequence, f2: &FeatureSequence, gamma: f64) -> Result<f64> {
    let c = cosine_cost(f1, f2)?;
    Ok(soft_dtw(&c.entries, gamma)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::FeatureRole;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Minimum over all monotone warping paths, by explicit recursion.
    fn brute_min(c: &Matrix, i: usize, j: usize) -> f64 {
        let here = c[(i, j)];
        if i == 0 && j == 0 {
            return here;
        }
        let mut best = f64::INFINITY;
        if i > 0 {
            best = best.min(brute_min(c, i - 1, j));
        }
        if j > 0 {
            best = best.min(brute_min(c, i, j - 1));
        }
        if i > 0 && j > 0 {
            best = best.min(brute_min(c, i - 1, j - 1));
        }
        here + best
    }

    fn random_cost(rng: &mut impl Rng, n: usize, m: usize) -> Matrix {
        Matrix::from_fn(n, m, |_, _| rng.random_range(0.0..2.0))
    }

    #[test]
    fn soft_min_examples() {
        assert_eq!(soft_min(&[3.0, 1.0, 2.0], 0.0).unwrap(), 1.0);
        let v = soft_min(&[0.7, 0.7], 0.3).unwrap();
        assert!((v - (0.7 - 0.3 * 2f64.ln())).abs() < 1e-12);
        assert!(soft_min(&[1.0, 2.0], 0.5).unwrap() <= 1.0);
        assert!(soft_min(&[1.0], -0.1).is_err());
        assert!(soft_min(&[], 1.0).is_err());
    }

    #[test]
    fn cosine_examples() {
        let e = |v: &[&[f64]]| FeatureSequence::from_rows(v, FeatureRole::TextFeature).unwrap();
        let a = e(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let c = cosine_cost(&a, &a).unwrap();
        assert!(c.entries[(0, 0)].abs() < 1e-15 && c.entries[(1, 1)].abs() < 1e-15);
        assert!((c.entries[(0, 1)] - 1.0).abs() < 1e-15);
        let b = e(&[&[-2.0, 0.0]]);
        assert!((cosine_cost(&a, &b).unwrap().entries[(0, 0)] - 2.0).abs() < 1e-15);

        let z = cosine_cost_matrix(&Matrix::zeros(1, 2), a.frames()).unwrap();
        assert_eq!(z.zero_norm_pairs, 2);
        assert_eq!(z.entries.as_slice(), &[1.0, 1.0]);
        assert!(cosine_cost_matrix(&Matrix::zeros(1, 3), a.frames()).is_err());
    }

    #[test]
    fn single_cell_and_identity() {
        let c = Matrix::from_vec(1, 1, vec![0.42]);
        for g in [0.0, 0.5, 2.0] {
            let (v, t) = soft_dtw(&c, g).unwrap();
            assert_eq!(v, 0.42);
            assert_eq!(soft_dtw_grad(&c, &t).unwrap().as_slice(), &[1.0]);
        }
        let f = Matrix::from_rows(&[[1.0, 2.0], [0.5, -1.0], [3.0, 0.1]]).unwrap();
        let c = cosine_cost_matrix(&f, &f).unwrap();
        let (v, _) = soft_dtw(&c.entries, 0.0).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn hard_value_matches_path_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_cost(&mut rng, 5, 6);
        let (v, _) = soft_dtw(&c, 0.0).unwrap();
        assert!((v - brute_min(&c, 4, 5)).abs() < 1e-12);
    }

    #[test]
    fn soft_lower_bounds_hard_and_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (n, m) = (rng.random_range(1..7), rng.random_range(1..7));
            let c = random_cost(&mut rng, n, m);
            let hard = soft_dtw(&c, 0.0).unwrap().0;
            for (g, tol) in [(1e-1, 1.0), (1e-2, 0.1), (1e-3, 0.01)] {
                let soft = soft_dtw(&c, g).unwrap().0;
                assert!(soft <= hard + 1e-12);
                assert!(hard - soft < tol, "gamma {g}: {soft} vs {hard}");
            }
        }
    }

    #[test]
    fn hard_gradient_is_path_indicator() {
        let c = Matrix::from_rows(&[[0.0, 5.0, 5.0], [5.0, 0.0, 5.0], [5.0, 5.0, 0.0]]).unwrap();
        let (_, t) = soft_dtw(&c, 0.0).unwrap();
        let g = soft_dtw_grad(&c, &t).unwrap();
        assert_eq!(g.as_slice(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let bad = soft_dtw(&Matrix::zeros(2, 2), 1.0).unwrap().1;
        assert!(soft_dtw_grad(&c, &bad).is_err());
    }

    #[test]
    fn soft_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        for gamma in [0.1, 1.0] {
            for _ in 0..20 {
                let c = random_cost(&mut rng, 4, 4);
                let (_, t) = soft_dtw(&c, gamma).unwrap();
                let g = soft_dtw_grad(&c, &t).unwrap();
                assert!((g[(0, 0)] - 1.0).abs() < 1e-12 && (g[(3, 3)] - 1.0).abs() < 1e-12);
                for i in 0..4 {
                    for j in 0..4 {
                        assert!((-1e-12..=1.0 + 1e-12).contains(&g[(i, j)]));
                        let mut p = c.clone();
                        p[(i, j)] += h;
                        let mut mm = c.clone();
                        mm[(i, j)] -= h;
                        let fd = (soft_dtw(&p, gamma).unwrap().0 - soft_dtw(&mm, gamma).unwrap().0)
                            / (2.0 * h);
                        let rel = (fd - g[(i, j)]).abs() / fd.abs().max(g[(i, j)].abs()).max(1e-4);
                        assert!(rel < 1e-4, "gamma {gamma} ({i},{j}): {fd} vs {}", g[(i, j)]);
                    }
                }
            }
        }
    }

    #[test]
    fn chain_through_cosine_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-6;
        for _ in 0..5 {
            let a = Matrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
            let b = Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let f = |a: &Matrix| {
                soft_dtw(&cosine_cost_matrix(a, &b).unwrap().entries, 1.0).unwrap().0
            };
            let c = cosine_cost_matrix(&a, &b).unwrap();
            let (_, t) = soft_dtw(&c.entries, 1.0).unwrap();
            let up = soft_dtw_grad(&c.entries, &t).unwrap();
            let (ga, _) = cosine_cost_vjp(&a, &b, &up);
            for i in 0..4 {
                for k in 0..3 {
                    let mut p = a.clone();
                    p[(i, k)] += h;
                    let mut m = a.clone();
                    m[(i, k)] -= h;
                    let fd = (f(&p) - f(&m)) / (2.0 * h);
                    let rel = (fd - ga[(i, k)]).abs() / fd.abs().max(ga[(i, k)].abs()).max(1e-4);
                    assert!(rel < 1e-4);
                }
            }
        }
    }
}
