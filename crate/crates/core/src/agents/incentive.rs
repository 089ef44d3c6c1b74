use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{sigmoid, Graph, NodeId};
use crate::nn::{MlpSpec, ParamVector};

use super::Trajectory;

/// Bounded incentive function of agent `index`: input is its observation
/// concatenated with the other agents' actions, output `r_max * sigmoid(z)`
/// per agent, with the entry for `index` forced to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncentiveNet {
    pub params: ParamVector,
    pub r_max: f64,
    pub index: usize,
}

impl IncentiveNet {
    pub fn new<R: Rng + ?Sized>(
        spec: MlpSpec,
        r_max: f64,
        index: usize,
        init_scale: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            params: spec.init(init_scale, rng),
            r_max,
            index,
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.params.layout
    }

    pub fn n_agents(&self) -> usize {
        self.params.layout.output
    }

    pub fn incentivize(&self, input: &[f64]) -> Vec<f64> {
        let z = self.params.forward(input);
        z.iter()
            .enumerate()
            .map(|(j, &v)| {
                if j == self.index {
                    0.0
                } else {
                    self.r_max * sigmoid(v)
                }
            })
            .collect()
    }

    /// `T x N` node of unmasked incentive outputs for input rows `x`, as a
    /// function of the parameter node `eta`.
    pub fn graph_outputs(&self, g: &mut Graph, eta: NodeId, x: NodeId) -> NodeId {
        let z = self.spec().graph_forward(g, eta, x);
        let s = g.sigmoid(z);
        g.scale(s, self.r_max)
    }

    /// Discounted l1 mass of incentives on `tau` and its gradient.
    pub fn cost_and_gradient(&self, tau: &Trajectory, gamma: f64) -> (f64, Vec<f64>) {
        let spec = self.spec();
        let mut grad = vec![0.0; spec.param_count()];
        let mut cost = 0.0;
        for (s, t) in tau.steps.iter().zip(tau.time_indices()) {
            let w = gamma.powi(t as i32);
            spec.forward_backward(
                &self.params.values,
                &s.incentive_inputs[self.index],
                &mut grad,
                |z| {
                    z.iter()
                        .enumerate()
                        .map(|(j, &v)| {
                            if j == self.index {
                                return 0.0;
                            }
                            let sg = sigmoid(v);
                            cost += w * self.r_max * sg;
                            w * self.r_max * sg * (1.0 - sg)
                        })
                        .collect()
                },
            );
        }
        (cost, grad)
    }
}

/// Continuous reward-giving head: `u ~ N(f(o), I)`, `a = r_max * sigmoid(u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianRewardHead {
    pub params: ParamVector,
    pub r_max: f64,
}

pub const U_CLAMP: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct RewardSample {
    pub u: Vec<f64>,
    pub rewards: Vec<f64>,
    pub log_density: f64,
}

impl GaussianRewardHead {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, r_max: f64, init_scale: f64, rng: &mut R) -> Self {
        Self {
            params: spec.init(init_scale, rng),
            r_max,
        }
    }

    pub fn mean(&self, obs: &[f64]) -> Vec<f64> {
        self.params.forward(obs)
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> RewardSample {
        let mu = self.mean(obs);
        let u: Vec<f64> = mu
            .iter()
            .map(|&m| {
                let n: f64 = StandardNormal.sample(rng);
                (m + n).clamp(-U_CLAMP, U_CLAMP)
            })
            .collect();
        let rewards = u.iter().map(|&x| self.r_max * sigmoid(x)).collect();
        let log_density = squashed_log_density(&mu, &u, self.r_max);
        RewardSample {
            u,
            rewards,
            log_density,
        }
    }

    /// `sum_t w_t grad log pi(a_r,t | o_t)`; only the Gaussian factor depends
    /// on the parameters.
    pub fn weighted_score(
        &self,
        obs: &[Vec<f64>],
        samples: &[Vec<f64>],
        weights: &[f64],
    ) -> Vec<f64> {
        let spec = &self.params.layout;
        let mut g = vec![0.0; spec.param_count()];
        for ((o, u), &w) in obs.iter().zip(samples).zip(weights) {
            if w == 0.0 {
                continue;
            }
            spec.forward_backward(&self.params.values, o, &mut g, |mu| {
                mu.iter().zip(u).map(|(m, x)| w * (x - m)).collect()
            });
        }
        g
    }
}

/// Log density of `a = r_max * sigmoid(u)` for `u ~ N(mu, I)`, expressed
/// through `u`.
pub fn squashed_log_density(mu: &[f64], u: &[f64], r_max: f64) -> f64 {
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    mu.iter()
        .zip(u)
        .map(|(&m, &x)| {
            let s = sigmoid(x);
            -0.5 * (x - m).powi(2) - half_log_2pi - (r_max * s * (1.0 - s)).ln()
        })
        .sum()
}

/// Log density at a reward value `a in (0, r_max)` (one dimension).
pub fn reward_log_density(mu: f64, a: f64, r_max: f64) -> f64 {
    let q = a / r_max;
    let u = (q / (1.0 - q)).ln();
    squashed_log_density(&[mu], &[u], r_max)
}

/// Discrete action space `A x {noop, give}^(N-1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GiftActions {
    pub n_env_actions: usize,
    pub n_others: usize,
}

impl GiftActions {
    pub fn size(&self) -> usize {
        self.n_env_actions << self.n_others
    }

    pub fn encode(&self, env_action: usize, give: &[bool]) -> usize {
        let bits = give
            .iter()
            .enumerate()
            .fold(0usize, |acc, (k, &b)| acc | ((b as usize) << k));
        (env_action << self.n_others) | bits
    }

    pub fn decode(&self, action: usize) -> (usize, Vec<bool>) {
        let bits = action & ((1 << self.n_others) - 1);
        (
            action >> self.n_others,
            (0..self.n_others).map(|k| bits >> k & 1 == 1).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{central_difference, relative_error};
    use rand::SeedableRng;

    #[test]
    fn self_slot_is_zero_and_bounded() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let net = IncentiveNet::new(MlpSpec::new(4, &[8], 3), 2.0, 1, 3.0, &mut rng);
        for k in 0..20 {
            let x: Vec<f64> = (0..4).map(|i| ((k * 7 + i) as f64).sin() * 5.0).collect();
            let r = net.incentivize(&x);
            assert_eq!(r[1], 0.0);
            assert!(r.iter().all(|&v| (0.0..=2.0).contains(&v)));
        }
    }

    #[test]
    fn zero_weights_give_half_r_max() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let net = IncentiveNet::new(MlpSpec::new(4, &[8], 3), 3.0, 0, 0.0, &mut rng);
        assert_eq!(net.incentivize(&[1.0, 0.0, 1.0, 0.5]), vec![0.0, 1.5, 1.5]);
    }

    #[test]
    fn squash_at_zero_is_half() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let head = GaussianRewardHead::new(MlpSpec::new(2, &[], 1), 2.0, 0.0, &mut rng);
        assert_eq!(head.r_max * sigmoid(0.0), 1.0);
        let s = head.sample(&[0.0, 0.0], &mut rng);
        assert!(s.rewards[0] > 0.0 && s.rewards[0] < 2.0);
        assert!((s.log_density - squashed_log_density(&[0.0], &s.u, 2.0)).abs() < 1e-12);
    }

    #[test]
    fn squashed_density_integrates_to_one() {
        for &(mu, r_max) in &[(0.0, 2.0), (1.3, 2.0), (-2.0, 1.0)] {
            let n = 200_000;
            let h = r_max / n as f64;
            let total: f64 = (0..n)
                .map(|k| reward_log_density(mu, (k as f64 + 0.5) * h, r_max).exp() * h)
                .sum();
            assert!((total - 1.0).abs() < 1e-3, "mu={mu}: {total}");
        }
    }

    #[test]
    fn gaussian_head_score_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let head = GaussianRewardHead::new(MlpSpec::new(3, &[4], 2), 2.0, 0.5, &mut rng);
        let obs = vec![vec![0.2, -0.4, 1.0], vec![1.0, 0.0, 0.3]];
        let u = vec![vec![0.5, -1.0], vec![2.0, 0.1]];
        let w = [1.0, -2.0];
        let g = head.weighted_score(&obs, &u, &w);
        let fd = central_difference(
            |p| {
                let spec = &head.params.layout;
                (0..2)
                    .map(|t| w[t] * squashed_log_density(&spec.forward(p, &obs[t]), &u[t], 2.0))
                    .sum()
            },
            &head.params.values,
            1e-6,
        );
        assert!(relative_error(&g, &fd, 1e-8) < 1e-6);
    }

    #[test]
    fn gift_action_round_trip() {
        let ga = GiftActions {
            n_env_actions: 3,
            n_others: 2,
        };
        assert_eq!(ga.size(), 12);
        for a in 0..ga.size() {
            let (e, g) = ga.decode(a);
            assert_eq!(ga.encode(e, &g), a);
        }
        assert_eq!(
            ga.decode(ga.encode(2, &[true, false])),
            (2, vec![true, false])
        );
    }
}
