//! Replication-study evaluation: parameter recovery, DIF detection, and
//! respondent classification.

use serde::{Deserialize, Serialize};

use crate::em::FitResult;
use crate::error::{Error, Result};
use crate::model::Support;
use crate::simulate::{SimDesign, SimTruth};

/// One fitted replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub design: SimDesign,
    pub replication_index: usize,
    pub truth: SimTruth,
    /// BIC-selected refit.
    pub estimate: FitResult,
    /// Posterior class probabilities under `estimate`, row-major `N x (K+1)`.
    pub class_probabilities: Vec<f64>,
}

impl ReplicationRecord {
    pub fn n_classes(&self) -> usize {
        self.estimate.params.n_classes()
    }

    /// Posterior probability of belonging to any focal class.
    pub fn focal_scores(&self) -> Vec<f64> {
        self.class_probabilities
            .chunks(self.n_classes())
            .map(|row| 1.0 - row[0])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasRmse {
    pub bias: f64,
    pub rmse: f64,
}

impl BiasRmse {
    /// From paired estimate and truth samples.
    pub fn from_errors(errors: &[f64]) -> Self {
        let n = errors.len() as f64;
        let bias = errors.iter().sum::<f64>() / n;
        let mse = errors.iter().map(|e| e * e).sum::<f64>() / n;
        BiasRmse { bias, rmse: mse.sqrt() }
    }
}

/// Bias and RMSE of every reported parameter. `d` and `delta` are indexed by
/// item; `delta` refers to focal class 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralErrors {
    pub d: Vec<BiasRmse>,
    pub delta: Vec<BiasRmse>,
    pub pi: BiasRmse,
    pub mu1: BiasRmse,
    pub sigma1: BiasRmse,
}

/// Across replications, aligned by item index. The focal proportion estimate
/// is `nu_1` after classes are ordered by proportion.
pub fn bias_rmse(records: &[ReplicationRecord]) -> Result<StructuralErrors> {
    let first = records
        .first()
        .ok_or_else(|| Error::Config("bias/RMSE needs at least one replication".into()))?;
    let j_n = first.truth.params.n_items();
    for r in records {
        let (est, tru) = (&r.estimate.params, &r.truth.params);
        if est.n_items() != j_n || tru.n_items() != j_n {
            return Err(Error::Dimension(format!(
                "replication {} has {} items, expected {j_n}",
                r.replication_index,
                est.n_items()
            )));
        }
        if est.n_focal() == 0 || tru.n_focal() == 0 {
            return Err(Error::Dimension(format!(
                "replication {} has no focal class to evaluate",
                r.replication_index
            )));
        }
    }
    let collect = |f: &dyn Fn(&ReplicationRecord) -> f64| -> BiasRmse {
        BiasRmse::from_errors(&records.iter().map(f).collect::<Vec<_>>())
    };
    let d = (0..j_n)
        .map(|j| collect(&|r| r.estimate.params.d()[j] - r.truth.params.d()[j]))
        .collect();
    let delta = (0..j_n)
        .map(|j| collect(&|r| r.estimate.params.dif(j, 1) - r.truth.params.dif(j, 1)))
        .collect();
    Ok(StructuralErrors {
        d,
        delta,
        pi: collect(&|r| r.estimate.params.nu()[1] - r.truth.params.nu()[1]),
        mu1: collect(&|r| r.estimate.params.mu()[1] - r.truth.params.mu()[1]),
        sigma1: collect(&|r| r.estimate.params.sigma()[1] - r.truth.params.sigma()[1]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    /// `None` when there is no true DIF.
    pub tpr: Option<f64>,
    /// 0 when every pair carries true DIF.
    pub fpr: f64,
}

/// Detection rates of `estimated` against `truth` among `n_pairs` candidate
/// `(item, class)` pairs.
pub fn dif_confusion(estimated: &Support, truth: &Support, n_pairs: usize) -> Confusion {
    let tpr = (!truth.is_empty()).then(|| estimated.intersection_len(truth) as f64 / truth.len() as f64);
    let negatives = n_pairs.saturating_sub(truth.len());
    let fpr = if negatives == 0 {
        0.0
    } else {
        estimated.difference_len(truth) as f64 / negatives as f64
    };
    Confusion { tpr, fpr }
}

fn argmax_rows(probs: &[f64], n_classes: usize) -> Vec<usize> {
    probs
        .chunks(n_classes)
        .map(|row| {
            let mut best = 0;
            for (k, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// MAP classification error. The reference class is matched to label 0; with
/// more than one focal class the focal labels are matched by the permutation
/// that minimizes the error.
pub fn map_classify(probs: &[f64], n_classes: usize, labels: &[usize]) -> Result<f64> {
    if n_classes == 0 || probs.len() != labels.len() * n_classes {
        return Err(Error::Dimension(format!(
            "posterior has {} entries, expected {} x {n_classes}",
            probs.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Config("no respondents to classify".into()));
    }
    let assigned = argmax_rows(probs, n_classes);
    let n_focal = n_classes - 1;
    let errors = permutations(n_focal)
        .into_iter()
        .map(|perm| {
            assigned
                .iter()
                .zip(labels)
                .filter(|&(&a, &t)| {
                    let mapped = if a == 0 { 0 } else { perm[a - 1] + 1 };
                    mapped != t
                })
                .count()
        })
        .min()
        .expect("at least one permutation");
    Ok(errors as f64 / labels.len() as f64)
}

/// Error of assigning everybody to the more frequent group.
pub fn naive_error(pi: f64) -> f64 {
    pi.min(1.0 - pi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub auc: f64,
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
}

/// Mann-Whitney AUC with mid-ranks for ties, plus the empirical ROC curve.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<Roc> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Domain("scores must be finite".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Config("AUC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // mid-rank sum of positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut k = i;
        while k + 1 < order.len() && scores[order[k + 1]] == scores[order[i]] {
            k += 1;
        }
        let mid = (i + k) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=k].iter().filter(|&&o| labels[o]).count() as f64;
        i = k + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    let auc = (rank_sum - p * (p + 1.0) / 2.0) / (p * n);

    // thresholds sweep from the highest score down
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = order.len();
    while i > 0 {
        let s = scores[order[i - 1]];
        while i > 0 && scores[order[i - 1]] == s {
            if labels[order[i - 1]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i -= 1;
        }
        points.push((fp as f64 / n, tp as f64 / p));
    }
    Ok(Roc { auc, points })
}

/// Summary of one design cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub design: SimDesign,
    pub n_reps: usize,
    pub errors: StructuralErrors,
    /// Mean per-replication rates; `None` without true DIF.
    pub tpr: Option<f64>,
    pub fpr: f64,
    pub classification_error: f64,
    /// Mean per-replication AUC.
    pub auc: f64,
    /// `min(pi_hat, 1 - pi_hat)` averaged over replications.
    pub naive_error: f64,
    /// ROC curve of the scores pooled over replications.
    pub roc: Vec<(f64, f64)>,
}

/// Aggregates replications of one design cell.
pub fn aggregate(records: &[ReplicationRecord]) -> Result<AggregateReport> {
    let errors = bias_rmse(records)?;
    let design = records[0].design.clone();
    let n = records.len() as f64;
    let mut tprs = Vec::new();
    let mut fpr = 0.0;
    let mut cls = 0.0;
    let mut aucs = Vec::new();
    let mut naive = 0.0;
    let mut pooled_scores = Vec::new();
    let mut pooled_labels = Vec::new();
    for r in records {
        let est = &r.estimate.params;
        let conf = dif_confusion(&r.estimate.support, &r.truth.params.support(), est.n_items() * est.n_focal());
        if let Some(t) = conf.tpr {
            tprs.push(t);
        }
        fpr += conf.fpr;
        cls += map_classify(&r.class_probabilities, r.n_classes(), &r.truth.class_labels)?;
        naive += naive_error(est.nu()[1]);
        let scores = r.focal_scores();
        let labels = r.truth.focal_indicator();
        if let Ok(roc) = auc(&scores, &labels) {
            aucs.push(roc.auc);
        }
        pooled_scores.extend(scores);
        pooled_labels.extend(labels);
    }
    let roc = auc(&pooled_scores, &pooled_labels)?;
    Ok(AggregateReport {
        design,
        n_reps: records.len(),
        errors,
        tpr: (!tprs.is_empty()).then(|| tprs.iter().sum::<f64>() / tprs.len() as f64),
        fpr: fpr / n,
        classification_error: cls / n,
        auc: aucs.iter().sum::<f64>() / aucs.len().max(1) as f64,
        naive_error: naive / n,
        roc: roc.points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn support(pairs: &[(usize, usize)]) -> Support {
        pairs.iter().copied().collect()
    }

    #[test]
    fn confusion_cases() {
        let truth = support(&(0..10).map(|j| (j, 1)).collect::<Vec<_>>());
        let c = dif_confusion(&truth, &truth, 25);
        assert_eq!((c.tpr, c.fpr), (Some(1.0), 0.0));
        let c = dif_confusion(&Support::new(), &truth, 25);
        assert_eq!((c.tpr, c.fpr), (Some(0.0), 0.0));
        let c = dif_confusion(&support(&[(3, 1), (20, 1)]), &Support::new(), 25);
        assert_eq!(c.tpr, None);
        assert!((c.fpr - 2.0 / 25.0).abs() < 1e-15);
    }

    #[test]
    fn bias_rmse_single_sample() {
        let e = BiasRmse::from_errors(&[0.2]);
        assert!((e.bias - 0.2).abs() < 1e-15 && (e.rmse - 0.2).abs() < 1e-15);
        let e = BiasRmse::from_errors(&[0.0, 0.0]);
        assert_eq!((e.bias, e.rmse), (0.0, 0.0));
    }

    #[test]
    fn one_hot_posteriors_classify_perfectly() {
        let labels = vec![0, 1, 1, 0];
        let probs: Vec<f64> = labels.iter().flat_map(|&l| if l == 0 { [1.0, 0.0] } else { [0.0, 1.0] }).collect();
        assert_eq!(map_classify(&probs, 2, &labels).unwrap(), 0.0);
    }

    #[test]
    fn uniform_posteriors_are_a_coin_flip() {
        // ties go to the reference class, so a balanced truth is half wrong
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let probs = vec![0.5; 200];
        assert!((map_classify(&probs, 2, &labels).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn focal_labels_matched_by_permutation() {
        let labels = vec![1, 2, 2, 0];
        let assigned = [2, 1, 1, 0];
        let probs: Vec<f64> = assigned
            .iter()
            .flat_map(|&a| (0..3).map(move |k| if k == a { 1.0 } else { 0.0 }))
            .collect();
        assert_eq!(map_classify(&probs, 3, &labels).unwrap(), 0.0);
        assert!(map_classify(&probs, 2, &labels).is_err());
    }

    #[test]
    fn auc_extremes_and_ties() {
        let labels = [false, false, true, true];
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap().auc, 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap().auc, 0.0);
        assert_eq!(auc(&[0.5; 4], &labels).unwrap().auc, 0.5);
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
        let roc = auc(&[0.1, 0.4, 0.35, 0.8], &labels).unwrap();
        assert!((roc.auc - 0.75).abs() < 1e-15);
        assert_eq!(roc.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(roc.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn auc_of_random_scores_is_near_half() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut total = 0.0;
        let draws = 10_000;
        for _ in 0..draws {
            let scores: Vec<f64> = (0..20).map(|_| rng.random()).collect();
            let labels: Vec<bool> = (0..20).map(|i| i < 8).collect();
            total += auc(&scores, &labels).unwrap().auc;
        }
        assert!((total / draws as f64 - 0.5).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn auc_is_rank_invariant(scores in prop::collection::vec(-5.0f64..5.0, 6..40)) {
            let labels: Vec<bool> = (0..scores.len()).map(|i| i % 3 == 0).collect();
            let a = auc(&scores, &labels).unwrap().auc;
            let transformed: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            let b = auc(&transformed, &labels).unwrap().auc;
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn roc_is_a_monotone_staircase(scores in prop::collection::vec(0.0f64..1.0, 4..30)) {
            let labels: Vec<bool> = (0..scores.len()).map(|i| i % 2 == 0).collect();
            let roc = auc(&scores, &labels).unwrap();
            for w in roc.points.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
        }

        #[test]
        fn rmse_decomposes(errs in prop::collection::vec(-2.0f64..2.0, 1..50)) {
            let e = BiasRmse::from_errors(&errs);
            let n = errs.len() as f64;
            let var = errs.iter().map(|x| (x - e.bias).powi(2)).sum::<f64>() / n;
            prop_assert!((e.rmse * e.rmse - (e.bias * e.bias + var)).abs() < 1e-10);
            prop_assert!(e.rmse >= e.bias.abs() - 1e-15);
        }

        #[test]
        fn confusion_is_set_monotone(extra in prop::collection::btree_set(0usize..25, 0..25)) {
            let truth = support(&(0..10).map(|j| (j, 1)).collect::<Vec<_>>());
            let small = support(&[(0, 1), (15, 1)]);
            let mut big = small.clone();
            for j in extra { big.insert(j, 1); }
            let a = dif_confusion(&small, &truth, 25);
            let b = dif_confusion(&big, &truth, 25);
            prop_assert!(b.tpr.unwrap() >= a.tpr.unwrap() && b.fpr >= a.fpr);
            prop_assert!(b.fpr <= 1.0 && b.tpr.unwrap() <= 1.0);
        }
    }
}
