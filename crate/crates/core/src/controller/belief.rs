//! Beta-Bernoulli calibration of per-class attack-attempt rates.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::model::ValidatedModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackBelief {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Pseudo-counts the posterior relaxes towards under forgetting.
    pub prior_alpha: Vec<f64>,
    pub prior_beta: Vec<f64>,
    /// The exploratory rate is the posterior quantile at `1 - lcb_quantile`.
    pub lcb_quantile: f64,
    /// Weight kept on past evidence each update; 1 keeps everything.
    pub forgetting: f64,
}

impl AttackBelief {
    /// Uniform `Beta(1, 1)` prior for `n` classes without forgetting.
    pub fn uniform(n: usize, lcb_quantile: f64) -> Self {
        Self {
            alpha: vec![1.0; n],
            beta: vec![1.0; n],
            prior_alpha: vec![1.0; n],
            prior_beta: vec![1.0; n],
            lcb_quantile,
            forgetting: 1.0,
        }
    }

    /// Prior centred on each class's baseline attempt rate.
    pub fn from_model(model: &ValidatedModel) -> Self {
        let w = model.weights();
        let s = w.belief_prior_strength;
        let base: Vec<f64> = model
            .classes()
            .iter()
            .map(|c| c.attack_baseline.clamp(1e-9, 1.0 - 1e-9))
            .collect();
        let alpha: Vec<f64> = base.iter().map(|b| s * b).collect();
        let beta: Vec<f64> = base.iter().map(|b| s * (1.0 - b)).collect();
        Self {
            prior_alpha: alpha.clone(),
            prior_beta: beta.clone(),
            alpha,
            beta,
            lcb_quantile: w.lcb_quantile,
            forgetting: w.belief_forgetting,
        }
    }

    pub fn mean(&self, class: usize) -> f64 {
        self.alpha[class] / (self.alpha[class] + self.beta[class])
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.alpha.len()).map(|i| self.mean(i)).collect()
    }

    /// Upper posterior quantile used to raise protection while exploring.
    pub fn upper(&self, class: usize) -> f64 {
        let q = 1.0 - self.lcb_quantile;
        match Beta::new(self.alpha[class], self.beta[class]) {
            Ok(b) => b.inverse_cdf(q).max(self.mean(class)),
            Err(_) => self.mean(class),
        }
    }

    pub fn uppers(&self) -> Vec<f64> {
        (0..self.alpha.len()).map(|i| self.upper(i)).collect()
    }
}

/// Folds one slot of observations into the posterior and returns the new
/// belief with its posterior means.
///
/// `successes[i]` counts detected attacks on class `i`, `normals[i]` the
/// attack-free observations.
pub fn calibrate_attack(belief: &AttackBelief, successes: &[f64], normals: &[f64]) -> (AttackBelief, Vec<f64>) {
    let mut b = belief.clone();
    let f = b.forgetting;
    for i in 0..b.alpha.len() {
        let (s, n) = (successes[i].max(0.0), normals[i].max(0.0));
        if s == 0.0 && n == 0.0 {
            continue;
        }
        b.alpha[i] = f * b.alpha[i] + (1.0 - f) * b.prior_alpha[i] + s;
        b.beta[i] = f * b.beta[i] + (1.0 - f) * b.prior_beta[i] + n;
    }
    let means = b.means();
    (b, means)
}
