use super::{can_skip, check_feasible, check_label, expand};
use crate::error::{Error, Result};
use crate::matrix::{log_add, Matrix};
use crate::types::{GlossSequence, LogProbMatrix};

/// Log forward variables, `T x S`.
fn forward(p: &LogProbMatrix, ext: &[usize]) -> Matrix {
    let (t_len, s_len) = (p.steps(), ext.len());
    let mut alpha = Matrix::filled(t_len, s_len, f64::NEG_INFINITY);
    alpha[(0, 0)] = p.get(0, ext[0]);
    if s_len > 1 {
        alpha[(0, 1)] = p.get(0, ext[1]);
    }
    for t in 1..t_len {
        // states that cannot reach the end in time are never needed, but the
        // recursion is cheap enough to run over the whole lattice
        for s in 0..s_len {
            let mut acc = alpha[(t - 1, s)];
            if s >= 1 {
                acc = log_add(acc, alpha[(t - 1, s - 1)]);
            }
            if can_skip(ext, s) {
                acc = log_add(acc, alpha[(t - 1, s - 2)]);
            }
            alpha[(t, s)] = acc + p.get(t, ext[s]);
        }
    }
    alpha
}

/// Log backward variables, `T x S`, including the emission at `t`.
fn backward(p: &LogProbMatrix, ext: &[usize]) -> Matrix {
    let (t_len, s_len) = (p.steps(), ext.len());
    let mut beta = Matrix::filled(t_len, s_len, f64::NEG_INFINITY);
    let last = t_len - 1;
    beta[(last, s_len - 1)] = p.get(last, ext[s_len - 1]);
    if s_len > 1 {
        beta[(last, s_len - 2)] = p.get(last, ext[s_len - 2]);
    }
    for t in (0..last).rev() {
        for s in 0..s_len {
            let mut acc = beta[(t + 1, s)];
            if s + 1 < s_len {
                acc = log_add(acc, beta[(t + 1, s + 1)]);
            }
            if s + 2 < s_len && can_skip(ext, s + 2) {
                acc = log_add(acc, beta[(t + 1, s + 2)]);
            }
            beta[(t, s)] = acc + p.get(t, ext[s]);
        }
    }
    beta
}

fn final_log_prob(alpha: &Matrix) -> f64 {
    let (t_len, s_len) = alpha.shape();
    let mut lp = alpha[(t_len - 1, s_len - 1)];
    if s_len > 1 {
        lp = log_add(lp, alpha[(t_len - 1, s_len - 2)]);
    }
    lp
}

/// `ln p(s | P)`, the log of the summed probability of every path that
/// collapses to `label`. Returns `-inf` when no such path fits in `P`.
pub fn ctc_log_prob(p: &LogProbMatrix, label: &GlossSequence) -> Result<f64> {
    check_label(p, label)?;
    if check_feasible(p, label).is_err() {
        return Ok(f64::NEG_INFINITY);
    }
    let ext = expand(label);
    Ok(final_log_prob(&forward(p, &ext)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtcLoss {
    /// `-ln p(s | P)`.
    pub loss: f64,
    /// Derivative of `loss` with respect to each log-probability entry of `P`,
    /// same `T x (N+1)` layout. Entries equal minus the posterior occupancy.
    pub grad: Matrix,
}

/// Negative log-likelihood and its gradient via forward-backward.
pub fn ctc_loss_and_grad(p: &LogProbMatrix, label: &GlossSequence) -> Result<CtcLoss> {
    check_label(p, label)?;
    check_feasible(p, label)?;
    let ext = expand(label);
    let alpha = forward(p, &ext);
    let beta = backward(p, &ext);
    let log_p = final_log_prob(&alpha);
    if !log_p.is_finite() {
        return Err(Error::Infeasible {
            label_len: label.len(),
            required: label.min_ctc_steps(),
            steps: p.steps(),
        });
    }

    let (t_len, classes) = (p.steps(), p.classes());
    let mut occ = Matrix::filled(t_len, classes, f64::NEG_INFINITY);
    for t in 0..t_len {
        for (s, &k) in ext.iter().enumerate() {
            let ab = alpha[(t, s)] + beta[(t, s)];
            if ab > f64::NEG_INFINITY {
                occ[(t, k)] = log_add(occ[(t, k)], ab);
            }
        }
    }
    let mut grad = Matrix::zeros(t_len, classes);
    for t in 0..t_len {
        for k in 0..classes {
            let lo = occ[(t, k)];
            let ly = p.get(t, k);
            if lo > f64::NEG_INFINITY && ly > f64::NEG_INFINITY {
                // alpha and beta both carry y_t(k), remove one copy
                grad[(t, k)] = -(lo - ly - log_p).exp();
            }
        }
    }
    Ok(CtcLoss { loss: -log_p, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{collapse_path, CtcPath};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_logprobs(rng: &mut impl Rng, t: usize, c: usize) -> LogProbMatrix {
        let logits = Matrix::from_fn(t, c, |_, _| rng.random_range(-2.0..2.0));
        LogProbMatrix::from_logits(&logits).unwrap()
    }

    // Sum over all (N+1)^T paths that collapse to `label`.
    fn brute(p: &LogProbMatrix, label: &GlossSequence) -> f64 {
        let (t, c) = (p.steps(), p.classes());
        let mut total = 0.0;
        for code in 0..c.pow(t as u32) {
            let mut x = code;
            let path: Vec<usize> = (0..t)
                .map(|_| {
                    let k = x % c;
                    x /= c;
                    k
                })
                .collect();
            if collapse_path(&CtcPath(path.clone()), c).unwrap() == *label {
                total += path.iter().enumerate().map(|(i, &k)| p.get(i, k)).sum::<f64>().exp();
            }
        }
        total.ln()
    }

    #[test]
    fn single_step() {
        let p = LogProbMatrix::from_probs(&Matrix::from_rows(&[[0.3, 0.7]]).unwrap()).unwrap();
        let lp = ctc_log_prob(&p, &GlossSequence(vec![1])).unwrap();
        assert!((lp - 0.7f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn two_steps_uniform() {
        let p = LogProbMatrix::uniform(2, 2).unwrap();
        let lp = ctc_log_prob(&p, &GlossSequence(vec![1])).unwrap();
        // AA, A-, -A
        assert!((brute(&p, &GlossSequence(vec![1])) - 0.75f64.ln()).abs() < 1e-12);
        assert!((lp - 0.75f64.ln()).abs() < 1e-12);
        let l = ctc_loss_and_grad(&p, &GlossSequence(vec![1])).unwrap();
        assert!((l.loss + 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_label() {
        let p = LogProbMatrix::uniform(2, 4).unwrap();
        let s = GlossSequence(vec![1, 2, 3]);
        assert_eq!(ctc_log_prob(&p, &s).unwrap(), f64::NEG_INFINITY);
        assert!(matches!(ctc_loss_and_grad(&p, &s), Err(Error::Infeasible { .. })));
        // repeats need separating blanks
        let s = GlossSequence(vec![1, 1]);
        assert_eq!(ctc_log_prob(&p, &s).unwrap(), f64::NEG_INFINITY);
        assert!(ctc_log_prob(&p, &GlossSequence(vec![0])).is_err());
    }

    #[test]
    fn deterministic_path_has_zero_loss() {
        // one-hot rows spelling A A - B
        let rows = [1usize, 1, 0, 2];
        let m = Matrix::from_fn(4, 3, |t, k| if rows[t] == k { 0.0 } else { f64::NEG_INFINITY });
        let p = LogProbMatrix::new(m).unwrap();
        let l = ctc_loss_and_grad(&p, &GlossSequence(vec![1, 2])).unwrap();
        assert_eq!(l.loss, 0.0);
        assert!(l.grad.is_finite());
        for (t, &k) in rows.iter().enumerate() {
            // full occupancy on the path; the logit gradient y - occupancy is 0
            assert!((l.grad[(t, k)] + 1.0).abs() < 1e-12);
            let logit_grad = p.get(t, k).exp() + l.grad[(t, k)];
            assert!(logit_grad.abs() < 1e-12);
        }
    }

    #[test]
    fn matches_brute_force_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..60 {
            let t = rng.random_range(1..=5);
            let c = rng.random_range(2..=4);
            let p = random_logprobs(&mut rng, t, c);
            let len = rng.random_range(0..=3);
            let label = GlossSequence((0..len).map(|_| rng.random_range(1..c)).collect());
            let lp = ctc_log_prob(&p, &label).unwrap();
            let b = brute(&p, &label);
            if b == f64::NEG_INFINITY {
                assert_eq!(lp, f64::NEG_INFINITY);
            } else {
                assert!((lp - b).abs() < 1e-9, "{lp} vs {b}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..20 {
            let t = rng.random_range(3..=7);
            let c = rng.random_range(3..=5);
            let p = random_logprobs(&mut rng, t, c);
            let len = rng.random_range(1..=(t / 2).max(1));
            let label = GlossSequence((0..len).map(|_| rng.random_range(1..c)).collect());
            let Ok(l) = ctc_loss_and_grad(&p, &label) else { continue };
            for i in 0..t {
                for k in 0..c {
                    let mut plus = p.matrix().clone();
                    plus[(i, k)] += h;
                    let mut minus = p.matrix().clone();
                    minus[(i, k)] -= h;
                    let fp = -ctc_log_prob(&LogProbMatrix::new(plus).unwrap(), &label).unwrap();
                    let fm = -ctc_log_prob(&LogProbMatrix::new(minus).unwrap(), &label).unwrap();
                    let fd = (fp - fm) / (2.0 * h);
                    let g = l.grad[(i, k)];
                    let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-3);
                    assert!(rel < 1e-4, "({i},{k}) fd={fd} an={g}");
                }
            }
        }
    }

    #[test]
    fn probability_mass_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_logprobs(&mut rng, 4, 3);
        // all label sequences over {1,2} of length <= 4
        let mut total = 0.0;
        let mut stack = vec![Vec::new()];
        while let Some(s) = stack.pop() {
            total += ctc_log_prob(&p, &GlossSequence(s.clone())).unwrap().exp();
            if s.len() < 4 {
                for g in 1..3 {
                    let mut n = s.clone();
                    n.push(g);
                    stack.push(n);
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-10);
    }
}
