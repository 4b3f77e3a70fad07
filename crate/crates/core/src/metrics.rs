//! Edit-distance alignment, WER, Acc-w and Top-K WER.
//!
//! Corpus figures are micro-averaged: total edit cost over total reference
//! length, which keeps Top-K WER exactly monotone in K.

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{domain, Result};
use crate::types::GlossSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum EditOp {
    Match { r: usize, h: usize },
    Substitution { r: usize, h: usize },
    Deletion { r: usize },
    Insertion { h: usize },
}

/// A minimum-cost script turning the reference into the hypothesis.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditScript {
    pub ops: Vec<EditOp>,
    pub n_sub: usize,
    pub n_del: usize,
    pub n_ins: usize,
    pub hits: usize,
}

impl EditScript {
    pub fn cost(&self) -> usize {
        self.n_sub + self.n_del + self.n_ins
    }
}

/// Unit-cost Levenshtein alignment with a deterministic backtrace.
///
/// Ties prefer the diagonal (match or substitution), then deletion, then insertion.
pub fn edit_alignment(reference: &GlossSequence, hypothesis: &GlossSequence) -> EditScript {
    let r = reference.as_slice();
    let h = hypothesis.as_slice();
    let (n, m) = (r.len(), h.len());
    let w = m + 1;
    let mut dp = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        dp[i * w] = i;
    }
    for (j, cell) in dp.iter_mut().enumerate().take(w) {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = dp[(i - 1) * w + j - 1] + usize::from(r[i - 1] != h[j - 1]);
            let del = dp[(i - 1) * w + j] + 1;
            let ins = dp[i * w + j - 1] + 1;
            dp[i * w + j] = diag.min(del).min(ins);
        }
    }

    let mut script = EditScript::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let same = r[i - 1] == h[j - 1];
            if dp[(i - 1) * w + j - 1] + usize::from(!same) == here {
                i -= 1;
                j -= 1;
                if same {
                    script.hits += 1;
                    script.ops.push(EditOp::Match { r: i, h: j });
                } else {
                    script.n_sub += 1;
                    script.ops.push(EditOp::Substitution { r: i, h: j });
                }
                continue;
            }
        }
        if i > 0 && dp[(i - 1) * w + j] + 1 == here {
            i -= 1;
            script.n_del += 1;
            script.ops.push(EditOp::Deletion { r: i });
        } else {
            j -= 1;
            script.n_ins += 1;
            script.ops.push(EditOp::Insertion { h: j });
        }
    }
    script.ops.reverse();
    script
}

pub fn edit_distance(a: &GlossSequence, b: &GlossSequence) -> usize {
    edit_alignment(a, b).cost()
}

pub fn wer(reference: &GlossSequence, hypothesis: &GlossSequence) -> Result<f64> {
    if reference.is_empty() {
        return domain("WER is undefined for an empty reference");
    }
    Ok(edit_alignment(reference, hypothesis).cost() as f64 / reference.len() as f64)
}

pub fn acc_w(reference: &GlossSequence, hypothesis: &GlossSequence) -> Result<f64> {
    if reference.is_empty() {
        return domain("Acc-w is undefined for an empty reference");
    }
    Ok(edit_alignment(reference, hypothesis).hits as f64 / reference.len() as f64)
}

/// A reference with its decode candidates, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedSample {
    pub reference: GlossSequence,
    pub candidates: Vec<GlossSequence>,
}

fn check_samples(samples: &[RankedSample]) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        if s.reference.is_empty() {
            return domain(format!("sample {i} has an empty reference"));
        }
        if s.candidates.is_empty() {
            return domain(format!("sample {i} has no candidates"));
        }
    }
    Ok(())
}

/// Corpus Top-K WER: per sample the smallest edit cost among the first
/// `min(k, candidates)` hypotheses, summed and divided by total reference length.
pub fn top_k_wer(samples: &[RankedSample], k: usize) -> Result<f64> {
    Ok(top_k_wer_curve(samples, k)?[k - 1])
}

/// Top-K WER for every `K` in `1..=k_max`, sharing one set of alignments.
pub fn top_k_wer_curve(samples: &[RankedSample], k_max: usize) -> Result<Vec<f64>> {
    if k_max < 1 {
        return domain("K must be at least 1");
    }
    check_samples(samples)?;
    let total_ref: usize = samples.iter().map(|s| s.reference.len()).sum();
    if total_ref == 0 {
        return domain("no reference glosses");
    }
    let mut best_costs = vec![0usize; k_max];
    for s in samples {
        let mut best = usize::MAX;
        for (k, slot) in best_costs.iter_mut().enumerate() {
            if let Some(c) = s.candidates.get(k) {
                best = best.min(edit_distance(&s.reference, c));
            }
            *slot += best;
        }
    }
    Ok(best_costs
        .into_iter()
        .map(|c| c as f64 / total_ref as f64)
        .collect())
}

/// Top-K WER keyed by K, serialized as a JSON object in ascending K order.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKWer(pub Vec<f64>);

impl Serialize for TopKWer {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = ser.serialize_map(Some(self.0.len()))?;
        for (k, v) in self.0.iter().enumerate() {
            map.serialize_entry(&(k + 1).to_string(), v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for TopKWer {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = std::collections::BTreeMap::<String, f64>::deserialize(de)?;
        let mut pairs = raw
            .into_iter()
            .map(|(k, v)| k.parse::<usize>().map(|k| (k, v)))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(serde::de::Error::custom)?;
        pairs.sort_by_key(|p| p.0);
        if pairs.iter().enumerate().any(|(i, p)| p.0 != i + 1) {
            return Err(serde::de::Error::custom("top_k_wer keys must be 1..=K"));
        }
        Ok(TopKWer(pairs.into_iter().map(|p| p.1).collect()))
    }
}

/// Corpus metrics for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub wer: f64,
    pub acc_w: f64,
    pub top_k_wer: TopKWer,
    pub n_ins: usize,
    pub n_del: usize,
    pub n_sub: usize,
}

/// WER and Acc-w from the top candidates, plus the Top-K curve.
pub fn corpus_report(samples: &[RankedSample], k_max: usize) -> Result<MetricsReport> {
    let curve = top_k_wer_curve(samples, k_max)?;
    let (mut ins, mut del, mut sub, mut hits, mut total) = (0, 0, 0, 0, 0);
    for s in samples {
        let e = edit_alignment(&s.reference, &s.candidates[0]);
        ins += e.n_ins;
        del += e.n_del;
        sub += e.n_sub;
        hits += e.hits;
        total += s.reference.len();
    }
    let total = total as f64;
    Ok(MetricsReport {
        wer: (ins + del + sub) as f64 / total,
        acc_w: hits as f64 / total,
        top_k_wer: TopKWer(curve),
        n_ins: ins,
        n_del: del,
        n_sub: sub,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[usize]) -> GlossSequence {
        GlossSequence(v.to_vec())
    }

    // Independent oracle: plain recursion over all scripts.
    fn brute(a: &[usize], b: &[usize]) -> usize {
        match (a, b) {
            ([], _) => b.len(),
            (_, []) => a.len(),
            ([x, ar @ ..], [y, br @ ..]) => {
                let d = brute(ar, br) + usize::from(x != y);
                d.min(brute(ar, b) + 1).min(brute(a, br) + 1)
            }
        }
    }

    const A: usize = 1;
    const B: usize = 2;
    const C: usize = 3;
    const X: usize = 4;
    const Y: usize = 5;

    #[test]
    fn alignment_examples() {
        let e = edit_alignment(&s(&[A, B, C]), &s(&[A, B, C]));
        assert_eq!((e.cost(), e.hits), (0, 3));
        let e = edit_alignment(&s(&[A, B, C]), &s(&[]));
        assert_eq!((e.n_del, e.cost()), (3, 3));
        let e = edit_alignment(&s(&[A, B, C]), &s(&[A, X, C, Y]));
        assert_eq!(brute(&[A, B, C], &[A, X, C, Y]), 2);
        assert_eq!((e.n_sub, e.n_ins, e.n_del, e.cost()), (1, 1, 0, 2));
        assert_eq!(
            e.ops,
            vec![
                EditOp::Match { r: 0, h: 0 },
                EditOp::Substitution { r: 1, h: 1 },
                EditOp::Match { r: 2, h: 2 },
                EditOp::Insertion { h: 3 },
            ]
        );
    }

    #[test]
    fn wer_and_acc_examples() {
        assert_eq!(wer(&s(&[A, B, C]), &s(&[A, B, C])).unwrap(), 0.0);
        assert_eq!(brute(&[A], &[B, C]), 2);
        assert_eq!(wer(&s(&[A]), &s(&[B, C])).unwrap(), 2.0);
        assert_eq!(brute(&[A, B, C], &[A, X, C]), 1);
        assert!((wer(&s(&[A, B, C]), &s(&[A, X, C])).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(wer(&s(&[]), &s(&[A])).is_err());

        assert_eq!(acc_w(&s(&[A, B]), &s(&[A, B])).unwrap(), 1.0);
        assert!((acc_w(&s(&[A, B, C]), &s(&[A, X, C])).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(acc_w(&s(&[A, B]), &s(&[])).unwrap(), 0.0);
        assert!(acc_w(&s(&[]), &s(&[])).is_err());
    }

    #[test]
    fn top_k_examples() {
        let samples = vec![
            RankedSample {
                reference: s(&[A, B, C]),
                candidates: vec![s(&[A, X]), s(&[A, B, C])],
            },
            RankedSample {
                reference: s(&[B]),
                candidates: vec![s(&[C]), s(&[C, B]), s(&[B])],
            },
        ];
        // K=1: costs 2 + 1 over 4 reference glosses
        assert!((top_k_wer(&samples, 1).unwrap() - 0.75).abs() < 1e-15);
        assert!((top_k_wer(&samples, 2).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(top_k_wer(&samples, 3).unwrap(), 0.0);
        assert_eq!(top_k_wer(&samples, 50).unwrap(), 0.0);
        assert!(top_k_wer(&samples, 0).is_err());

        let report = corpus_report(&samples, 3).unwrap();
        assert_eq!(report.wer, 0.75);
        assert_eq!(report.top_k_wer.0[0], report.wer);
        let json = serde_json::to_value(&report).unwrap();
        for key in ["wer", "acc_w", "top_k_wer", "n_ins", "n_del", "n_sub"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["top_k_wer"]["3"], 0.0);
        let back: MetricsReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, report);
    }

    fn seq_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..=4, 0..=8)
    }

    proptest! {
        #[test]
        fn matches_brute_force(a in seq_strategy(), b in seq_strategy()) {
            let e = edit_alignment(&s(&a), &s(&b));
            prop_assert_eq!(e.cost(), brute(&a, &b));
            prop_assert_eq!(e.n_sub + e.n_del + e.hits, a.len());
            prop_assert_eq!(e.n_sub + e.n_ins + e.hits, b.len());
        }

        #[test]
        fn metric_axioms(a in seq_strategy(), b in seq_strategy(), c in seq_strategy()) {
            let (a, b, c) = (s(&a), s(&b), s(&c));
            prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
            prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
            prop_assert_eq!(edit_distance(&a, &b) == 0, a == b);
        }

        #[test]
        fn top_k_non_increasing(
            refs in prop::collection::vec(prop::collection::vec(1usize..=3, 1..=5), 1..6),
            cands in prop::collection::vec(prop::collection::vec(prop::collection::vec(1usize..=3, 0..=5), 1..6), 6),
        ) {
            let samples: Vec<_> = refs.iter().zip(&cands).map(|(r, c)| RankedSample {
                reference: s(r),
                candidates: c.iter().map(|x| s(x)).collect(),
            }).collect();
            let curve = top_k_wer_curve(&samples, 8).unwrap();
            prop_assert!(curve.windows(2).all(|w| w[1] <= w[0]));
            let report = corpus_report(&samples, 1).unwrap();
            prop_assert_eq!(curve[0], report.wer);
        }
    }
}
