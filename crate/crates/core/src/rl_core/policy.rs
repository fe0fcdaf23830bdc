use rand::Rng;

/// Probabilities and log-probabilities of a categorical distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl Categorical {
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .zip(&self.log_probs)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, lp)| p * lp)
            .sum::<f64>()
    }

    /// Argmax with ties resolved to the lowest index.
    pub fn greedy(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Softmax with the max subtracted first.
pub fn softmax_policy(logits: &[f64]) -> Categorical {
    assert!(!logits.is_empty(), "softmax over empty logits");
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|l| l - max).collect();
    let log_z = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    let log_probs: Vec<f64> = shifted.iter().map(|s| s - log_z).collect();
    let probs = log_probs.iter().map(|lp| lp.exp()).collect();
    Categorical { probs, log_probs }
}

/// Inverse-CDF draw.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` just below 1: fall back to the last supported index.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
