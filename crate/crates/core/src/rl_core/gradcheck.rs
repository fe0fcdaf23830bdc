//! Finite-difference verification of [`MlpParams::backward`].

use rand::Rng;
use serde::Serialize;

use super::{MlpParams, RngStream, StreamId};

/// Denominator floor for the relative error of near-zero gradient entries.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckCase {
    pub topology: Vec<usize>,
    pub seed: u64,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub cases: Vec<GradCheckCase>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.cases
            .iter()
            .map(|c| c.max_relative_error)
            .fold(0.0, f64::max)
    }
}

/// Topologies exercised by default: a small net, the KB Q-network and an
/// agent policy/value network.
pub fn default_topologies() -> Vec<Vec<usize>> {
    vec![
        vec![4, 16, 16, 3],
        MlpParams::standard_topology(10, 13),
        MlpParams::standard_topology(21, 16),
    ]
}

/// Compare the analytic gradient of `dot(c, f(x))` against central differences
/// for every parameter. Returns the maximum relative error.
pub fn check_network(topology: &[usize], seed: u64, step: f64) -> f64 {
    let mut rng = RngStream::new(seed, StreamId::Init);
    let params = MlpParams::xavier(topology, &mut rng);
    let mut rng = RngStream::new(seed, StreamId::Custom(77));
    let input: Vec<f64> = (0..topology[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n_out = *topology.last().expect("topology");
    let coeff: Vec<f64> = (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let objective = |p: &MlpParams| -> f64 {
        p.forward(&input)
            .expect("shape")
            .iter()
            .zip(&coeff)
            .map(|(o, c)| o * c)
            .sum()
    };
    let analytic = params.backward(&input, &coeff).expect("shape");
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + step;
        let plus = objective(&probe);
        probe.values_mut()[i] = orig - step;
        let minus = objective(&probe);
        probe.values_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.values()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(rel);
    }
    worst
}

/// Run [`check_network`] for each topology and each of `seeds` seeds.
pub fn run_gradcheck(topologies: &[Vec<usize>], seeds: u64, step: f64) -> GradCheckReport {
    let mut cases = Vec::new();
    for topology in topologies {
        for seed in 0..seeds {
            cases.push(GradCheckCase {
                topology: topology.clone(),
                seed,
                max_relative_error: check_network(topology, seed, step),
            });
        }
    }
    GradCheckReport { step, cases }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_network_passes() {
        assert!(check_network(&[3, 5, 4, 2], 1, 1e-5) < 1e-4);
    }
}
