//! Classification losses: cross entropy, focal, and their poly-1 variants.
//!
//! Each loss is defined on the predicted probability of the true class after
//! softmax. The scalar forms here are the reference route used by reports and
//! tests; [`loss_on_graph`] builds the identical expression on the autodiff
//! tape for training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{s, Graph, Scalar, Var};

/// Probability clamp keeping `-ln` finite.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Cross entropy.
    Ce,
    /// Focal loss.
    Fl,
    /// Poly-1 cross entropy.
    Poly1Ce,
    /// Poly-1 focal loss.
    Poly1Fl,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(v: &str) -> Result<Self> {
        match v {
            "ce" => Ok(LossKind::Ce),
            "fl" => Ok(LossKind::Fl),
            "poly1ce" => Ok(LossKind::Poly1Ce),
            "poly1fl" => Ok(LossKind::Poly1Fl),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            LossKind::Ce => "ce",
            LossKind::Fl => "fl",
            LossKind::Poly1Ce => "poly1ce",
            LossKind::Poly1Fl => "poly1fl",
        };
        f.write_str(name)
    }
}

/// Loss selection plus shaping parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Poly-1 coefficient; defaults to 3.3 for poly-1 CE and 3.0 for poly-1 FL.
    pub epsilon: f64,
    /// Focal modulating factor; defaults to 2.
    pub gamma: f64,
}

impl LossConfig {
    /// Per-kind default shaping parameters.
    pub fn new(kind: LossKind) -> Self {
        let epsilon = match kind {
            LossKind::Poly1Ce => 3.3,
            LossKind::Poly1Fl => 3.0,
            _ => 0.0,
        };
        let gamma = match kind {
            LossKind::Fl | LossKind::Poly1Fl => 2.0,
            _ => 0.0,
        };
        LossConfig { kind, epsilon, gamma }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 {
            return Err(Error::Config(format!("gamma {} must be >= 0", self.gamma)));
        }
        Ok(())
    }

    /// Loss of a single sample given its true-class probability.
    pub fn per_sample(&self, p: f64) -> f64 {
        match self.kind {
            LossKind::Ce => cross_entropy(p),
            LossKind::Fl => focal(p, self.gamma),
            LossKind::Poly1Ce => poly1_ce(p, self.epsilon),
            LossKind::Poly1Fl => poly1_fl(p, self.gamma, self.epsilon),
        }
    }
}

/// `-ln(p)` with `p` clamped at 1e-12.
pub fn cross_entropy(p: f64) -> f64 {
    -p.max(PROB_CLAMP).ln()
}

/// `-(1-p)^gamma * ln(p)`; equals cross entropy at `gamma = 0`.
pub fn focal(p: f64, gamma: f64) -> f64 {
    (1.0 - p).max(0.0).powf(gamma) * cross_entropy(p)
}

/// `cross_entropy(p) + epsilon * (1 - p)`.
pub fn poly1_ce(p: f64, epsilon: f64) -> f64 {
    cross_entropy(p) + epsilon * (1.0 - p)
}

/// `focal(p, gamma) + epsilon * (1 - p)^(gamma + 1)`.
pub fn poly1_fl(p: f64, gamma: f64, epsilon: f64) -> f64 {
    focal(p, gamma) + epsilon * (1.0 - p).max(0.0).powf(gamma + 1.0)
}

/// Mean per-sample loss over a batch of probability sets.
pub fn batch_loss(
    probabilities: &[crate::eval::ProbabilitySet],
    targets: &[usize],
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    if probabilities.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} probability sets vs {} targets",
            probabilities.len(),
            targets.len()
        )));
    }
    if probabilities.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut total = 0.0;
    for (ps, &t) in probabilities.iter().zip(targets) {
        let probs = ps.probs();
        if t >= probs.len() {
            return Err(Error::Label(format!(
                "target {} out of range for {} classes",
                t,
                probs.len()
            )));
        }
        total += cfg.per_sample(probs[t] as f64);
    }
    Ok(total / probabilities.len() as f64)
}

/// Mean per-sample loss on the tape: `probs` is `[B, N]` softmax output,
/// `targets` the true class per row. Gradients flow back through the
/// probabilities into the logits.
pub fn loss_on_graph<S: Scalar>(
    g: &mut Graph<S>,
    probs: Var,
    targets: &[usize],
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    let n_classes = *g
        .value(probs)
        .shape()
        .last()
        .ok_or_else(|| Error::Shape("loss_on_graph: rank-0 probabilities".into()))?;
    if let Some(&bad) = targets.iter().find(|&&t| t >= n_classes) {
        return Err(Error::Label(format!(
            "target {} out of range for {} classes",
            bad, n_classes
        )));
    }
    let p = g.gather_last(probs, targets)?;
    let eps = s::<S>(cfg.epsilon);
    let gamma = s::<S>(cfg.gamma);
    let one_minus_p = g.affine(p, s::<S>(-1.0), S::one());
    let ln_p = g.ln_clamped(p, s::<S>(PROB_CLAMP));
    let neg_ln_p = g.affine(ln_p, s::<S>(-1.0), S::zero());

    let per_sample = match cfg.kind {
        LossKind::Ce => neg_ln_p,
        LossKind::Fl => {
            let mod_factor = g.powf_const(one_minus_p, gamma);
            g.mul(mod_factor, neg_ln_p)?
        }
        LossKind::Poly1Ce => {
            let poly = g.affine(one_minus_p, eps, S::zero());
            g.add(neg_ln_p, poly)?
        }
        LossKind::Poly1Fl => {
            let mod_factor = g.powf_const(one_minus_p, gamma);
            let fl = g.mul(mod_factor, neg_ln_p)?;
            let tail = g.powf_const(one_minus_p, gamma + S::one());
            let poly = g.affine(tail, eps, S::zero());
            g.add(fl, poly)?
        }
    };
    Ok(g.mean(per_sample))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::ProbabilitySet;
    use crate::tensor::{grad_check, Tensor};
    use proptest::prelude::*;

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(1.0), 0.0);
        assert!((cross_entropy(0.5) - 0.6931471805599453).abs() < 1e-12);
        assert!((cross_entropy(1.0 / std::f64::consts::E) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn focal_examples() {
        for p in [0.01, 0.3, 0.77, 1.0] {
            assert!((focal(p, 0.0) - cross_entropy(p)).abs() < 1e-15);
        }
        for gamma in [0.0, 1.0, 2.0, 5.0] {
            assert_eq!(focal(1.0, gamma), 0.0);
        }
        assert!((focal(0.5, 2.0) - 0.25 * 0.6931471805599453).abs() < 1e-12);
    }

    #[test]
    fn poly1_examples() {
        for p in [0.001, 0.4, 1.0] {
            assert!((poly1_ce(p, 0.0) - cross_entropy(p)).abs() < 1e-15);
        }
        for eps in [0.0, 1.0, 3.3] {
            assert_eq!(poly1_ce(1.0, eps), 0.0);
        }
        assert!((poly1_ce(0.5, 3.3) - 2.343147).abs() < 1e-6);

        for p in [0.1, 0.6] {
            assert!((poly1_fl(p, 2.0, 0.0) - focal(p, 2.0)).abs() < 1e-15);
            assert!((poly1_fl(p, 0.0, 1.7) - poly1_ce(p, 1.7)).abs() < 1e-15);
        }
        assert!((poly1_fl(0.5, 2.0, 3.0) - 0.548287).abs() < 1e-6);
    }

    #[test]
    fn poly1_ce_slope_is_ce_slope_minus_epsilon() {
        let h = 1e-6;
        for p in [0.2, 0.5, 0.9] {
            for eps in [0.5, 3.3] {
                let d_poly = (poly1_ce(p + h, eps) - poly1_ce(p - h, eps)) / (2.0 * h);
                let d_ce = (cross_entropy(p + h) - cross_entropy(p - h)) / (2.0 * h);
                assert!((d_poly - (d_ce - eps)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn batch_loss_examples() {
        let one_hot = |i: usize, n: usize| {
            let mut v = vec![0.0f32; n];
            v[i] = 1.0;
            ProbabilitySet::new(v).unwrap()
        };
        let cfgs = [
            LossConfig::new(LossKind::Ce),
            LossConfig::new(LossKind::Fl),
            LossConfig::new(LossKind::Poly1Ce),
            LossConfig::new(LossKind::Poly1Fl),
        ];
        let probs = vec![one_hot(0, 4), one_hot(2, 4)];
        for cfg in &cfgs {
            assert_eq!(batch_loss(&probs, &[0, 2], cfg).unwrap(), 0.0);
        }

        // mean of two per-sample values
        let p1 = ProbabilitySet::new(vec![0.8, 0.2]).unwrap();
        let p2 = ProbabilitySet::new(vec![0.3, 0.7]).unwrap();
        let cfg = LossConfig::new(LossKind::Ce);
        let want = (cross_entropy(0.8) + cross_entropy(0.7)) / 2.0;
        let got = batch_loss(&[p1, p2], &[0, 1], &cfg).unwrap();
        assert!((got - want).abs() < 1e-7);

        // uniform over 8 classes: ln 8
        let uni = ProbabilitySet::new(vec![0.125; 8]).unwrap();
        let got = batch_loss(&[uni], &[3], &cfg).unwrap();
        assert!((got - 2.079442).abs() < 1e-6);

        // out-of-range target
        let uni = ProbabilitySet::new(vec![0.25; 4]).unwrap();
        assert!(matches!(
            batch_loss(&[uni], &[4], &cfg),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn graph_losses_match_scalar_route() {
        let probs_rows = [[0.7f64, 0.2, 0.1], [0.05, 0.15, 0.8]];
        let targets = [0usize, 2];
        for cfg in [
            LossConfig::new(LossKind::Ce),
            LossConfig { kind: LossKind::Fl, epsilon: 0.0, gamma: 2.0 },
            LossConfig { kind: LossKind::Poly1Ce, epsilon: 3.3, gamma: 0.0 },
            LossConfig { kind: LossKind::Poly1Fl, epsilon: 3.0, gamma: 2.0 },
        ] {
            let mut g = Graph::<f64>::new();
            let flat: Vec<f64> = probs_rows.iter().flatten().copied().collect();
            let probs = g.input(Tensor::new(vec![2, 3], flat).unwrap());
            let loss = loss_on_graph(&mut g, probs, &targets, &cfg).unwrap();
            let want = (cfg.per_sample(0.7) + cfg.per_sample(0.8)) / 2.0;
            assert!((g.value(loss).item().unwrap() - want).abs() < 1e-12, "{:?}", cfg.kind);
        }
    }

    #[test]
    fn gradients_through_softmax_pass_grad_check() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let logits = Tensor::<f64>::randn(vec![3, 5], 1.2, &mut rng);
        let targets = [1usize, 4, 0];
        for cfg in [
            LossConfig::new(LossKind::Ce),
            LossConfig { kind: LossKind::Fl, epsilon: 0.0, gamma: 2.0 },
            LossConfig { kind: LossKind::Poly1Ce, epsilon: 3.3, gamma: 0.0 },
            LossConfig { kind: LossKind::Poly1Fl, epsilon: 3.0, gamma: 2.0 },
        ] {
            let err = grad_check(
                |g, v| {
                    let p = g.softmax(v)?;
                    loss_on_graph(g, p, &targets, &cfg)
                },
                &logits,
            )
            .unwrap();
            assert!(err < 1e-6, "{:?}: {err}", cfg.kind);
        }
    }

    proptest! {
        #[test]
        fn losses_nonnegative_and_strictly_decreasing(
            p1 in 1e-6f64..1.0,
            p2 in 1e-6f64..1.0,
            gamma in 0.0f64..4.0,
            eps in 0.0f64..4.0,
        ) {
            let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
            prop_assume!(hi - lo > 1e-9);
            let fns: [Box<dyn Fn(f64) -> f64>; 4] = [
                Box::new(cross_entropy),
                Box::new(move |p| focal(p, gamma)),
                Box::new(move |p| poly1_ce(p, eps)),
                Box::new(move |p| poly1_fl(p, gamma, eps)),
            ];
            for f in &fns {
                prop_assert!(f(lo) >= 0.0);
                prop_assert!(f(hi) >= 0.0);
                prop_assert!(f(lo) > f(hi));
            }
        }

        #[test]
        fn poly1_ce_dominates_cross_entropy(p in 1e-6f64..=1.0, eps in 0.0f64..5.0) {
            let diff = poly1_ce(p, eps) - cross_entropy(p);
            prop_assert!(diff >= 0.0);
            // equality iff p == 1 or eps == 0
            if p < 1.0 - 1e-9 && eps > 1e-9 {
                prop_assert!(diff > 0.0);
            }
        }
    }
}
