//! Closed-set and open-set attribution decisions, weighted metrics, and the
//! constant-classifier baselines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The per-class probabilities produced by a classifier for one signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilitySet {
    probs: Vec<f32>,
}

impl ProbabilitySet {
    /// Validates each entry in [0, 1] and the sum within 1e-6 of 1.
    pub fn new(probs: Vec<f32>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("empty probability set".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Data("probability outside [0, 1]".into()));
        }
        let sum: f64 = probs.iter().map(|&p| p as f64).sum();
        if (sum - 1.0).abs() > 1e-5 {
            return Err(Error::Data(format!("probabilities sum to {sum}")));
        }
        Ok(ProbabilitySet { probs })
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Index of the maximum probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// The maximum probability `p_m`.
    pub fn p_max(&self) -> f32 {
        self.probs[self.argmax()]
    }
}

/// Ground-truth or predicted class: a known synthesizer index or the
/// distinguished unknown category U.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Known(usize),
    Unknown,
}

/// An attribution decision with its confidence (`p_m`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub label: Label,
    pub confidence: f32,
}

/// Closed-set rule: the class of maximum probability.
pub fn attribute_closed(p: &ProbabilitySet) -> Decision {
    Decision { label: Label::Known(p.argmax()), confidence: p.p_max() }
}

/// Open-set rule: the argmax class when `p_m > threshold`, otherwise U.
/// The comparison is strict, so a tie at exactly `p_m == T` goes to U.
pub fn attribute_open(p: &ProbabilitySet, threshold: f64) -> Result<Decision> {
    if !(0.0..1.0).contains(&threshold) || threshold <= 0.0 {
        return Err(Error::Config(format!("threshold {threshold} outside (0, 1)")));
    }
    let pm = p.p_max();
    let label = if (pm as f64) > threshold { Label::Known(p.argmax()) } else { Label::Unknown };
    Ok(Decision { label, confidence: pm })
}

/// Row = true class, column = predicted class. In open mode the last
/// row/column is the unknown category U.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n_known: usize,
    open: bool,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn size(&self) -> usize {
        self.n_known + usize::from(self.open)
    }

    pub fn n_known(&self) -> usize {
        self.n_known
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.size() + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Per-true-class sample counts.
    pub fn support(&self) -> Vec<u64> {
        self.counts.chunks(self.size()).map(|row| row.iter().sum()).collect()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.size()).map(|r| r.to_vec()).collect()
    }

    fn label_index(&self, label: Label) -> Result<usize> {
        match label {
            Label::Known(i) if i < self.n_known => Ok(i),
            Label::Known(i) => Err(Error::Label(format!(
                "class index {} out of range for {} known classes",
                i, self.n_known
            ))),
            Label::Unknown if self.open => Ok(self.n_known),
            Label::Unknown => {
                Err(Error::Label("unknown label in closed-set evaluation".into()))
            }
        }
    }
}

/// Tally decisions against truths. `open` selects N+1 classes (U last).
pub fn confusion(decisions: &[Decision], truths: &[Label], n_known: usize, open: bool) -> Result<ConfusionMatrix> {
    if decisions.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} decisions vs {} truths",
            decisions.len(),
            truths.len()
        )));
    }
    let mut cm = ConfusionMatrix {
        n_known,
        open,
        counts: vec![0; (n_known + usize::from(open)).pow(2)],
    };
    let k = cm.size();
    for (d, &t) in decisions.iter().zip(truths) {
        let ti = cm.label_index(t)?;
        let pi = cm.label_index(d.label)?;
        cm.counts[ti * k + pi] += 1;
    }
    Ok(cm)
}

/// Accuracy plus support-weighted precision, recall, and F1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Support-weighted metrics from a confusion matrix.
///
/// Per-class precision/recall/F1 substitute 0 for a 0/0; weights are
/// true-class support shares. Weighted recall telescopes to accuracy.
pub fn weighted_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("empty confusion matrix".into()));
    }
    let k = cm.size();
    let support = cm.support();
    let mut col_sums = vec![0u64; k];
    for t in 0..k {
        for p in 0..k {
            col_sums[p] += cm.count(t, p);
        }
    }

    let mut trace = 0u64;
    let mut w_precision = 0.0;
    let mut w_recall = 0.0;
    let mut w_f1 = 0.0;
    for c in 0..k {
        let tp = cm.count(c, c);
        trace += tp;
        let precision = if col_sums[c] > 0 { tp as f64 / col_sums[c] as f64 } else { 0.0 };
        let recall = if support[c] > 0 { tp as f64 / support[c] as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let weight = support[c] as f64 / total as f64;
        w_precision += weight * precision;
        w_recall += weight * recall;
        w_f1 += weight * f1;
    }
    Ok(Metrics {
        accuracy: trace as f64 / total as f64,
        precision: w_precision,
        recall: w_recall,
        f1: w_f1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    /// Always predict the class with the fewest training samples.
    Minority,
    /// Always predict the class with the most training samples.
    Majority,
}

/// Metrics of a theoretical constant classifier that always predicts the
/// training minority (or majority) class. Ties among equal counts go to the
/// lowest class index.
pub fn baseline_constant(
    kind: BaselineKind,
    train_counts: &[u64],
    test_truths: &[Label],
) -> Result<Metrics> {
    if train_counts.is_empty() {
        return Err(Error::Data("no training counts".into()));
    }
    let pick = |better: fn(u64, u64) -> bool| {
        let mut best = 0usize;
        for (i, &c) in train_counts.iter().enumerate().skip(1) {
            if better(c, train_counts[best]) {
                best = i;
            }
        }
        best
    };
    let class = match kind {
        BaselineKind::Minority => pick(|a, b| a < b),
        BaselineKind::Majority => pick(|a, b| a > b),
    };
    let open = test_truths.iter().any(|t| matches!(t, Label::Unknown));
    let decisions: Vec<Decision> = test_truths
        .iter()
        .map(|_| Decision { label: Label::Known(class), confidence: 1.0 })
        .collect();
    let cm = confusion(&decisions, test_truths, train_counts.len(), open)?;
    weighted_metrics(&cm)
}

/// Linear-interpolation percentile of a sample (`q` in [0, 1]); used to tune
/// the open-set threshold from validation confidences.
pub fn percentile(values: &[f32], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Data("percentile of empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("quantile {q} outside [0, 1]")));
    }
    let mut sorted: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] * (1.0 - frac) + sorted[hi] * frac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ps(v: &[f32]) -> ProbabilitySet {
        ProbabilitySet::new(v.to_vec()).unwrap()
    }

    #[test]
    fn closed_attribution_examples() {
        assert_eq!(attribute_closed(&ps(&[0.7, 0.1, 0.1, 0.1])).label, Label::Known(0));
        // uniform: tie broken to lowest index
        assert_eq!(attribute_closed(&ps(&[0.25; 4])).label, Label::Known(0));
    }

    #[test]
    fn closed_attribution_invariant_under_monotone_logit_transforms() {
        // argmax of softmax(f(logits)) equals argmax of softmax(logits) for
        // strictly increasing f.
        let logits = [0.3f64, -1.0, 2.2, 0.9];
        let softmax = |ls: &[f64]| {
            let mx = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = ls.iter().map(|&l| (l - mx).exp()).collect();
            let sum: f64 = exps.iter().sum();
            ProbabilitySet::new(exps.iter().map(|&e| (e / sum) as f32).collect()).unwrap()
        };
        let base = attribute_closed(&softmax(&logits)).label;
        for f in [|x: f64| 2.0 * x + 1.0, |x: f64| x.exp(), |x: f64| x * x * x] {
            let transformed: Vec<f64> = logits.iter().map(|&l| f(l)).collect();
            assert_eq!(attribute_closed(&softmax(&transformed)).label, base);
        }
    }

    #[test]
    fn open_attribution_examples() {
        let p = ps(&[0.2, 0.1, 0.6, 0.1]);
        assert_eq!(attribute_open(&p, 0.5).unwrap().label, Label::Known(2));
        assert_eq!(attribute_open(&p, 0.7).unwrap().label, Label::Unknown);
        // tie at p_m == T goes to U (strict inequality)
        let half = ps(&[0.5, 0.5]);
        assert_eq!(attribute_open(&half, 0.5).unwrap().label, Label::Unknown);
        // out-of-range thresholds rejected
        assert!(attribute_open(&p, 0.0).is_err());
        assert!(attribute_open(&p, 1.0).is_err());
    }

    #[test]
    fn vanishing_threshold_matches_closed_rule() {
        for v in [[0.4f32, 0.3, 0.2, 0.1], [0.25, 0.25, 0.25, 0.25]] {
            let p = ps(&v);
            let open = attribute_open(&p, 1e-9).unwrap();
            assert_eq!(open.label, attribute_closed(&p).label);
        }
    }

    #[test]
    fn confusion_examples() {
        let d = |i: usize| Decision { label: Label::Known(i), confidence: 1.0 };
        // all correct: diagonal
        let cm = confusion(
            &[d(0), d(1), d(2)],
            &[Label::Known(0), Label::Known(1), Label::Known(2)],
            3,
            false,
        )
        .unwrap();
        assert_eq!(cm.total(), 3);
        for i in 0..3 {
            assert_eq!(cm.count(i, i), 1);
        }

        // single sample: one entry
        let cm = confusion(&[d(2)], &[Label::Known(0)], 3, false).unwrap();
        assert_eq!(cm.count(0, 2), 1);
        assert_eq!(cm.total(), 1);

        // unknown truths map to row U in open mode; rejected in closed mode
        let cm = confusion(
            &[Decision { label: Label::Unknown, confidence: 0.3 }],
            &[Label::Unknown],
            2,
            true,
        )
        .unwrap();
        assert_eq!(cm.count(2, 2), 1);
        assert!(confusion(
            &[d(0)],
            &[Label::Unknown],
            2,
            false,
        )
        .is_err());
    }

    #[test]
    fn weighted_metrics_hand_oracle() {
        // cm [[8,2],[3,7]]: accuracy 0.75; oracle values from the per-class
        // formulas: P = (8/11 + 7/9)/2, R = 0.75, F1 = (16/21 + 14/19)/2.
        let cm = ConfusionMatrix { n_known: 2, open: false, counts: vec![8, 2, 3, 7] };
        let m = weighted_metrics(&cm).unwrap();
        assert!((m.accuracy - 0.75).abs() < 1e-12);
        assert!((m.precision - (8.0 / 11.0 + 7.0 / 9.0) / 2.0).abs() < 1e-12);
        assert!((m.recall - 0.75).abs() < 1e-12);
        assert!((m.f1 - (16.0 / 21.0 + 14.0 / 19.0) / 2.0).abs() < 1e-12);

        // perfect predictions
        let cm = ConfusionMatrix { n_known: 2, open: false, counts: vec![5, 0, 0, 9] };
        let m = weighted_metrics(&cm).unwrap();
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.f1),
            (1.0, 1.0, 1.0, 1.0)
        );

        let empty = ConfusionMatrix { n_known: 2, open: false, counts: vec![0; 4] };
        assert!(weighted_metrics(&empty).is_err());
    }

    #[test]
    fn baselines_match_published_dataset_arithmetic() {
        // Known-class training counts and test counts of the experimental
        // corpus structure: 8 known synthesizers, 9,100 closed-set test
        // samples, 900 extra unknown test samples.
        let train = [1000u64, 500, 1000, 1000, 1000, 500, 1000, 1000];
        let test_known = [1500u64, 300, 1500, 1500, 1500, 300, 1500, 1000];
        let mut closed: Vec<Label> = Vec::new();
        for (i, &n) in test_known.iter().enumerate() {
            closed.extend(std::iter::repeat_n(Label::Known(i), n as usize));
        }
        let mut open = closed.clone();
        open.extend(std::iter::repeat_n(Label::Unknown, 900));

        let maj = baseline_constant(BaselineKind::Majority, &train, &closed).unwrap();
        assert!((maj.accuracy - 0.1648).abs() < 1e-4);
        let min = baseline_constant(BaselineKind::Minority, &train, &closed).unwrap();
        assert!((min.accuracy - 0.0330).abs() < 1e-4);

        let maj = baseline_constant(BaselineKind::Majority, &train, &open).unwrap();
        assert!((maj.accuracy - 0.15).abs() < 1e-9);
        let min = baseline_constant(BaselineKind::Minority, &train, &open).unwrap();
        assert!((min.accuracy - 0.03).abs() < 1e-9);
    }

    #[test]
    fn percentile_interpolates() {
        let vals = [0.1f32, 0.2, 0.3, 0.4];
        assert!((percentile(&vals, 0.0).unwrap() - 0.1).abs() < 1e-7);
        assert!((percentile(&vals, 1.0).unwrap() - 0.4).abs() < 1e-7);
        assert!((percentile(&vals, 0.5).unwrap() - 0.25).abs() < 1e-7);
        assert!(percentile(&[], 0.5).is_err());
    }

    proptest! {
        #[test]
        fn low_threshold_never_yields_unknown(
            raw in proptest::collection::vec(0.01f64..1.0, 2..9)
        ) {
            let sum: f64 = raw.iter().sum();
            let probs: Vec<f32> = raw.iter().map(|&v| (v / sum) as f32).collect();
            let n = probs.len();
            let p = ProbabilitySet::new(probs).unwrap();
            // strictly below the minimum possible p_m (1/N)
            let t = 1.0 / n as f64 - 1e-6;
            prop_assume!(t > 0.0);
            prop_assert!(matches!(attribute_open(&p, t).unwrap().label, Label::Known(_)));
        }

        #[test]
        fn decreasing_threshold_is_monotone(
            raw in proptest::collection::vec(0.01f64..1.0, 2..9),
            t1 in 0.05f64..0.95,
            t2 in 0.05f64..0.95,
        ) {
            let sum: f64 = raw.iter().sum();
            let probs: Vec<f32> = raw.iter().map(|&v| (v / sum) as f32).collect();
            let p = ProbabilitySet::new(probs).unwrap();
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let at_hi = attribute_open(&p, hi).unwrap().label;
            let at_lo = attribute_open(&p, lo).unwrap().label;
            // lowering T never moves a sample from known to U
            if matches!(at_hi, Label::Known(_)) {
                prop_assert_eq!(at_lo, at_hi);
            }
        }

        #[test]
        fn weighted_recall_equals_accuracy(
            counts in proptest::collection::vec(0u64..200, 9)
        ) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let cm = ConfusionMatrix { n_known: 3, open: false, counts };
            let m = weighted_metrics(&cm).unwrap();
            prop_assert!((m.recall - m.accuracy).abs() <= 1e-12);
        }

        #[test]
        fn metrics_match_per_sample_recount(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60)
        ) {
            let decisions: Vec<Decision> = pairs
                .iter()
                .map(|&(_, p)| Decision { label: Label::Known(p), confidence: 1.0 })
                .collect();
            let truths: Vec<Label> = pairs.iter().map(|&(t, _)| Label::Known(t)).collect();
            let cm = confusion(&decisions, &truths, 4, false).unwrap();
            let m = weighted_metrics(&cm).unwrap();

            // independent recount straight from the sample pairs
            let n = pairs.len() as f64;
            let correct = pairs.iter().filter(|&&(t, p)| t == p).count() as f64;
            prop_assert!((m.accuracy - correct / n).abs() < 1e-12);
            let mut w_recall = 0.0;
            for c in 0..4 {
                let support = pairs.iter().filter(|&&(t, _)| t == c).count() as f64;
                if support == 0.0 { continue; }
                let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
                w_recall += (support / n) * (tp / support);
            }
            prop_assert!((m.recall - w_recall).abs() < 1e-12);
        }
    }
}
