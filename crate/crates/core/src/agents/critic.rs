use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{MlpSpec, ParamVector};
use crate::optim::Adam;

use super::Trajectory;

/// State-value network with a Polyak-averaged target copy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticNet {
    pub params: ParamVector,
    pub target: Vec<f64>,
    pub tau: f64,
    pub opt: Adam,
}

impl CriticNet {
    pub fn new<R: Rng + ?Sized>(
        spec: MlpSpec,
        init_scale: f64,
        tau: f64,
        lr: f64,
        rng: &mut R,
    ) -> Self {
        let params = spec.init(init_scale, rng);
        let target = params.values.clone();
        let opt = Adam::new(lr, params.len());
        Self {
            params,
            target,
            tau,
            opt,
        }
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.params.forward(obs)[0]
    }

    pub fn target_value(&self, obs: &[f64]) -> f64 {
        self.params.layout.forward(&self.target, obs)[0]
    }

    /// `target <- tau * params + (1 - tau) * target`.
    pub fn polyak(&mut self) {
        for (t, p) in self.target.iter_mut().zip(&self.params.values) {
            *t = self.tau * p + (1.0 - self.tau) * *t;
        }
    }

    /// Advantages `r_t + gamma V(s'_t) - V_target(s_t)` with no bootstrap
    /// past episode ends.
    pub fn advantages(
        &self,
        tau: &Trajectory,
        agent: usize,
        rewards: &[f64],
        gamma: f64,
    ) -> Vec<f64> {
        tau.steps
            .iter()
            .zip(rewards)
            .map(|(s, &r)| {
                let next = if s.done {
                    0.0
                } else {
                    self.value(&s.next_obs[agent])
                };
                r + gamma * next - self.target_value(&s.obs[agent])
            })
            .collect()
    }

    /// One Adam step on the mean squared TD error against the target
    /// network. Returns the loss before the step.
    pub fn td_step(&mut self, tau: &Trajectory, agent: usize, rewards: &[f64], gamma: f64) -> f64 {
        let spec = self.params.layout.clone();
        let n = rewards.len().max(1) as f64;
        let mut grad = vec![0.0; spec.param_count()];
        let mut loss = 0.0;
        for (s, &r) in tau.steps.iter().zip(rewards) {
            let next = if s.done {
                0.0
            } else {
                self.target_value(&s.next_obs[agent])
            };
            let y = r + gamma * next;
            spec.forward_backward(&self.params.values, &s.obs[agent], &mut grad, |v| {
                let e = v[0] - y;
                loss += e * e / n;
                vec![2.0 * e / n]
            });
        }
        self.opt.descend(&mut self.params.values, &grad);
        loss
    }
}
