use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{softmax_in_place, Tensor};
use crate::nn::{MlpSpec, ParamVector};

/// Softmax policy over a discrete action set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub params: ParamVector,
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, init_scale: f64, rng: &mut R) -> Self {
        Self {
            params: spec.init(init_scale, rng),
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.params.layout
    }

    pub fn n_actions(&self) -> usize {
        self.params.layout.output
    }

    pub fn probs(&self, obs: &[f64]) -> Vec<f64> {
        let mut z = self.params.forward(obs);
        softmax_in_place(&mut z);
        z
    }

    pub fn behavior_probs(&self, obs: &[f64], eps: f64) -> Vec<f64> {
        mix(&self.probs(obs), eps)
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], eps: f64, rng: &mut R) -> usize {
        sample_categorical(&self.behavior_probs(obs, eps), rng)
    }
}

/// `(1 - eps) * p + eps / |A|`.
pub fn mix(p: &[f64], eps: f64) -> Vec<f64> {
    let u = eps / p.len() as f64;
    p.iter().map(|&q| (1.0 - eps) * q + u).collect()
}

pub fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let x: f64 = rng.gen::<f64>() * p.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, &q) in p.iter().enumerate() {
        acc += q;
        if x < acc {
            return i;
        }
    }
    p.len() - 1
}

/// `log pi_eps(a)` and its gradient with respect to the logits.
pub fn mixed_log_prob_dlogits(logits: &[f64], a: usize, eps: f64) -> (f64, Vec<f64>) {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    let k = p.len() as f64;
    let pa = (1.0 - eps) * p[a] + eps / k;
    let c = (1.0 - eps) * p[a] / pa;
    let d = p
        .iter()
        .enumerate()
        .map(|(i, &pi)| c * (if i == a { 1.0 } else { 0.0 } - pi))
        .collect();
    (pa.ln(), d)
}

/// Entropy of `softmax(logits)` and its gradient with respect to the logits.
pub fn entropy_dlogits(logits: &[f64]) -> (f64, Vec<f64>) {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    let logp: Vec<f64> = p
        .iter()
        .map(|&q| if q > 0.0 { q.ln() } else { 0.0 })
        .collect();
    let h: f64 = -p.iter().zip(&logp).map(|(q, l)| q * l).sum::<f64>();
    let d = p.iter().zip(&logp).map(|(&q, &l)| -q * (l + h)).collect();
    (h, d)
}

/// Row `t` is the gradient of `log pi_eps(a_t | o_t)` at `params`.
pub fn score_rows(
    spec: &MlpSpec,
    params: &[f64],
    obs: &Tensor,
    actions: &[usize],
    eps: f64,
) -> Tensor {
    let p = spec.param_count();
    let mut s = Tensor::zeros(obs.rows(), p);
    for (t, &a) in actions.iter().enumerate() {
        let row = &mut s.data_mut()[t * p..(t + 1) * p];
        spec.forward_backward(params, obs.row_slice(t), row, |z| {
            mixed_log_prob_dlogits(z, a, eps).1
        });
    }
    s
}

/// `sum_t w_t grad log pi_eps(a_t | o_t)` without materializing score rows.
pub fn weighted_score(
    spec: &MlpSpec,
    params: &[f64],
    obs: &Tensor,
    actions: &[usize],
    weights: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut g = vec![0.0; spec.param_count()];
    for (t, (&a, &w)) in actions.iter().zip(weights).enumerate() {
        if w == 0.0 {
            continue;
        }
        spec.forward_backward(params, obs.row_slice(t), &mut g, |z| {
            mixed_log_prob_dlogits(z, a, eps)
                .1
                .into_iter()
                .map(|d| d * w)
                .collect()
        });
    }
    g
}

/// `sum_t grad H(pi(. | o_t))`.
pub fn entropy_gradient(spec: &MlpSpec, params: &[f64], obs: &Tensor) -> Vec<f64> {
    let mut g = vec![0.0; spec.param_count()];
    for t in 0..obs.rows() {
        spec.forward_backward(params, obs.row_slice(t), &mut g, |z| entropy_dlogits(z).1);
    }
    g
}

/// Total log-likelihood of `actions` and its gradient.
pub fn log_likelihood(
    spec: &MlpSpec,
    params: &[f64],
    obs: &Tensor,
    actions: &[usize],
    counts: &[f64],
    eps: f64,
) -> (f64, Vec<f64>) {
    let mut g = vec![0.0; spec.param_count()];
    let mut ll = 0.0;
    for (t, (&a, &c)) in actions.iter().zip(counts).enumerate() {
        spec.forward_backward(params, obs.row_slice(t), &mut g, |z| {
            let (lp, d) = mixed_log_prob_dlogits(z, a, eps);
            ll += c * lp;
            d.into_iter().map(|v| v * c).collect()
        });
    }
    (ll, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{central_difference, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mixing_formula() {
        let q = mix(&[1.0, 0.0, 0.0], 0.5);
        assert!((q[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((q[1] - 1.0 / 6.0).abs() < 1e-12);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pol = PolicyNet::new(MlpSpec::new(2, &[4], 3), 2.0, &mut rng);
        let n = 10_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[pol.act(&[1.0, -1.0], 1.0, &mut rng)] += 1;
        }
        let sigma = (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 / 3.0).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn no_exploration_follows_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pol = PolicyNet::new(MlpSpec::new(1, &[], 2).without_bias(), 0.0, &mut rng);
        pol.params.values = vec![30.0, -30.0];
        for _ in 0..1000 {
            assert_eq!(pol.act(&[1.0], 0.0, &mut rng), 0);
        }
        let p = pol.probs(&[0.3]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn log_prob_and_entropy_gradients() {
        let z = [0.3, -1.2, 0.8, 0.1];
        for &eps in &[0.0, 0.1, 0.7] {
            let (_, d) = mixed_log_prob_dlogits(&z, 2, eps);
            let fd = central_difference(|x| mixed_log_prob_dlogits(x, 2, eps).0, &z, 1e-6);
            assert!(relative_error(&d, &fd, 1e-8) < 1e-6);
        }
        let (_, d) = entropy_dlogits(&z);
        let fd = central_difference(|x| entropy_dlogits(x).0, &z, 1e-6);
        assert!(relative_error(&d, &fd, 1e-8) < 1e-6);
    }

    #[test]
    fn score_rows_sum_to_weighted_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = MlpSpec::new(3, &[5], 3);
        let pol = PolicyNet::new(spec.clone(), 0.5, &mut rng);
        let obs = Tensor::new(2, 3, vec![1.0, 0.0, 0.5, 0.0, 1.0, -0.5]);
        let s = score_rows(&spec, &pol.params.values, &obs, &[0, 2], 0.2);
        let w = [1.5, -0.5];
        let g = weighted_score(&spec, &pol.params.values, &obs, &[0, 2], &w, 0.2);
        let n = spec.param_count();
        for k in 0..n {
            let v = w[0] * s.data()[k] + w[1] * s.data()[n + k];
            assert!((v - g[k]).abs() < 1e-12);
        }
    }
}
