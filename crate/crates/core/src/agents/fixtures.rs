//! Randomized two-agent instances for checking incentive gradients: agent 0
//! pays agent 1, agent 1 takes one policy step on the first trajectory, and
//! agent 0's loss is measured on a follow-up trajectory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::MlpSpec;

use super::policy::mixed_log_prob_dlogits;
use super::trajectory::discounted_returns;
use super::{
    policy_step, IncentiveNet, PolicyNet, RecipientUpdate, RecipientView, RewardMap, Step,
    StepSettings, Trajectory,
};

#[derive(Clone, Debug)]
pub struct LioInstance {
    pub net: IncentiveNet,
    pub recipient: PolicyNet,
    pub tau: Trajectory,
    pub tau_hat: Trajectory,
    pub update: RecipientUpdate,
    pub map: RewardMap,
    /// Per-step constants added to the recipient's reward under the identity
    /// map (bootstrapped value minus baseline).
    pub offsets: Vec<f64>,
    pub gamma: f64,
    pub settings: StepSettings,
}

#[derive(Clone, Debug)]
pub struct InstanceSpec {
    pub steps: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
    pub actor_critic: bool,
    pub eps: f64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            steps: 2,
            n_actions: 2,
            obs_dim: 3,
            hidden: vec![4],
            actor_critic: false,
            eps: 0.0,
        }
    }
}

fn random_trajectory(
    rng: &mut ChaCha8Rng,
    id: u64,
    versions: Vec<u64>,
    spec: &InstanceSpec,
    net: Option<&IncentiveNet>,
) -> Trajectory {
    let mut tau = Trajectory::new(id, versions, vec![spec.eps; 2]);
    for t in 0..spec.steps {
        let obs: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                (0..spec.obs_dim)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let actions: Vec<usize> = (0..2).map(|_| rng.gen_range(0..spec.n_actions)).collect();
        let env_rewards: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut input = obs[0].clone();
        input.extend((0..spec.n_actions).map(|k| if k == actions[1] { 1.0 } else { 0.0 }));
        let mut incentives = vec![vec![0.0; 2]; 2];
        if let Some(net) = net {
            incentives[0] = net.incentivize(&input);
        }
        let gifts = vec![vec![0.0; 2]; 2];
        let total_rewards = Step::compute_totals(&env_rewards, &incentives, &gifts);
        tau.steps.push(Step {
            next_obs: obs.clone(),
            obs,
            env_actions: actions.clone(),
            actions,
            env_rewards,
            incentives,
            gifts,
            incentive_inputs: vec![input, Vec::new()],
            reward_samples: vec![Vec::new(); 2],
            total_rewards,
            // an episode boundary in the middle exercises return resets
            done: t + 1 == spec.steps || (spec.steps >= 4 && t == spec.steps / 2 - 1),
            events: vec![Default::default(); 2],
        });
    }
    tau
}

impl LioInstance {
    pub fn random(seed: u64, spec: &InstanceSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = 0.9;
        let net = IncentiveNet::new(
            MlpSpec::new(spec.obs_dim + spec.n_actions, &spec.hidden, 2),
            2.0,
            0,
            0.8,
            &mut rng,
        );
        let recipient = PolicyNet::new(
            MlpSpec::new(spec.obs_dim, &spec.hidden, spec.n_actions),
            0.8,
            &mut rng,
        );
        let tau = random_trajectory(&mut rng, 1, vec![0, 0], spec, Some(&net));
        let tau_hat = random_trajectory(&mut rng, 2, vec![1, 1], spec, None);
        let offsets: Vec<f64> = (0..spec.steps)
            .map(|_| {
                if spec.actor_critic {
                    rng.gen_range(-1.0..1.0)
                } else {
                    0.0
                }
            })
            .collect();
        let map = if spec.actor_critic {
            RewardMap::Identity
        } else {
            RewardMap::Discounted(gamma)
        };
        let settings = StepSettings {
            lr: 0.5,
            entropy_coef: 0.05,
            clip_norm: 1e12,
        };
        let mut inst = Self {
            net,
            recipient,
            tau,
            tau_hat,
            update: RecipientUpdate {
                agent: 1,
                from_version: 0,
                base: Vec::new(),
                scores: crate::diffcore::Tensor::zeros(0, 0),
                weights: Vec::new(),
                dones: Vec::new(),
                map,
                entropy_grad: Vec::new(),
                lr: 0.0,
                clip_scale: 1.0,
                updated: Vec::new(),
            },
            map,
            offsets,
            gamma,
            settings,
        };
        inst.update = inst.recipient_update(&inst.tau.incentives(0, 1));
        inst
    }

    fn recipient_update(&self, incentives: &[f64]) -> RecipientUpdate {
        let rewards: Vec<f64> = self
            .tau
            .env_rewards(1)
            .iter()
            .zip(incentives)
            .map(|(e, u)| e + u)
            .collect();
        let weights = match self.map {
            RewardMap::Discounted(g) => discounted_returns(&rewards, &self.tau.dones(), g),
            RewardMap::Identity => rewards
                .iter()
                .zip(&self.offsets)
                .map(|(r, o)| r + o)
                .collect(),
        };
        policy_step(
            self.recipient.spec(),
            &self.recipient.params.values,
            &self.tau,
            1,
            weights,
            self.map,
            self.settings,
            0,
        )
        .expect("finite update")
    }

    pub fn views(&self) -> Vec<RecipientView<'_>> {
        vec![RecipientView {
            update: &self.update,
            spec: self.recipient.spec(),
        }]
    }

    /// The giver's extrinsic loss recomputed from scratch at incentive
    /// parameters `eta`, with no graph involved.
    pub fn loss_at(&self, eta: &[f64]) -> f64 {
        let mut net = self.net.clone();
        net.params.values = eta.to_vec();
        let u: Vec<f64> = self
            .tau
            .steps
            .iter()
            .map(|s| net.incentivize(&s.incentive_inputs[0])[1])
            .collect();
        let up = self.recipient_update(&u);
        let g_hat = discounted_returns(
            &self.tau_hat.env_rewards(0),
            &self.tau_hat.dones(),
            self.gamma,
        );
        let spec = self.recipient.spec();
        -self
            .tau_hat
            .steps
            .iter()
            .zip(&g_hat)
            .map(|(s, g)| {
                let z = spec.forward(&up.updated, &s.obs[1]);
                mixed_log_prob_dlogits(&z, s.actions[1], self.tau_hat.epsilons[1]).0 * g
            })
            .sum::<f64>()
    }
}
