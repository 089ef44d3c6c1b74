//! Learning rules.
//!
//! A recipient's policy step is written as
//! `theta_hat = theta + lr * s * (w^T S + c_H * grad H)`, where row `t` of `S`
//! is the score `grad log pi(a_t | o_t)`, `w` are per-step weights (discounted
//! returns for policy gradient, advantages for actor-critic) and `s` the
//! norm-clipping factor. The weights depend linearly on the per-step rewards
//! through a fixed map `M` (the discount matrix, or the identity), so the
//! incentives `u` paid by one giver enter as `w = c + M u`. Building that
//! expression in a [`Graph`] keeps `theta_hat` a function of the giver's
//! incentive parameters.

use std::collections::HashMap;

use log::debug;

use crate::diffcore::{Bindings, DiffError, Graph, NodeId, Tensor};
use crate::nn::{clip_global_norm, MlpSpec};
use crate::optim::Adam;

use super::policy::{entropy_gradient, log_likelihood, score_rows, weighted_score};
use super::trajectory::{discount_matrix, discounted_returns};
use super::{AgentError, IncentiveNet, PolicyNet, Trajectory};

/// How per-step rewards turn into per-step update weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RewardMap {
    /// Discounted reward-to-go with discount `gamma`.
    Discounted(f64),
    /// Each step's reward enters only its own weight (one-step advantage).
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSettings {
    pub lr: f64,
    pub entropy_coef: f64,
    pub clip_norm: f64,
}

/// A computed policy step together with everything needed to rebuild it as a
/// graph expression.
#[derive(Clone, Debug)]
pub struct RecipientUpdate {
    pub agent: usize,
    pub from_version: u64,
    pub base: Vec<f64>,
    pub scores: Tensor,
    pub weights: Vec<f64>,
    pub dones: Vec<bool>,
    pub map: RewardMap,
    pub entropy_grad: Vec<f64>,
    pub lr: f64,
    pub clip_scale: f64,
    pub updated: Vec<f64>,
}

impl RecipientUpdate {
    fn reward_matrix(&self) -> Option<Tensor> {
        match self.map {
            RewardMap::Discounted(gamma) => Some(discount_matrix(&self.dones, gamma)),
            RewardMap::Identity => None,
        }
    }

    /// `M u` for a plain vector `u`.
    fn apply_map(&self, u: &[f64]) -> Vec<f64> {
        match self.map {
            RewardMap::Discounted(gamma) => discounted_returns(u, &self.dones, gamma),
            RewardMap::Identity => u.to_vec(),
        }
    }

    /// Graph expression for `theta_hat` in which the incentives `u`
    /// (a `T x 1` node whose current value is `u_val`) remain symbolic.
    pub fn graph_update(&self, g: &mut Graph, u: NodeId, u_val: &[f64]) -> NodeId {
        let mu = self.apply_map(u_val);
        let c: Vec<f64> = self.weights.iter().zip(&mu).map(|(w, m)| w - m).collect();
        let t = c.len();
        let c = g.constant(Tensor::new(t, 1, c));
        let mapped = match self.reward_matrix() {
            Some(m) => {
                let m = g.constant(m);
                g.matmul(m, u)
            }
            None => u,
        };
        let w = g.add(c, mapped);
        let wt = g.transpose(w);
        let s = g.constant(self.scores.clone());
        let step = g.matmul(wt, s);
        let step = g.scale(step, self.lr * self.clip_scale);
        let k = self.lr * self.clip_scale;
        let fixed: Vec<f64> = self
            .base
            .iter()
            .zip(&self.entropy_grad)
            .map(|(b, e)| b + k * e)
            .collect();
        let fixed = g.constant(Tensor::row(fixed));
        let out = g.add(fixed, step);
        g.set_label(out, format!("theta_hat[{}]", self.agent));
        out
    }
}

/// Policy-gradient weights: discounted total-reward returns.
pub fn pg_weights(tau: &Trajectory, agent: usize, gamma: f64) -> Vec<f64> {
    discounted_returns(&tau.total_rewards(agent), &tau.dones(), gamma)
}

/// One clipped ascent step on `sum_t w_t log pi(a_t|o_t) + c_H sum_t H_t`
/// starting from `base` (the agent's own parameters or a model of them).
#[allow(clippy::too_many_arguments)]
pub fn policy_step(
    spec: &MlpSpec,
    base: &[f64],
    tau: &Trajectory,
    agent: usize,
    weights: Vec<f64>,
    map: RewardMap,
    settings: StepSettings,
    from_version: u64,
) -> Result<RecipientUpdate, AgentError> {
    if tau.is_empty() {
        return Err(AgentError::Contract(
            "policy update on an empty trajectory".into(),
        ));
    }
    let obs = tau.obs(agent);
    let actions = tau.actions(agent);
    let eps = tau.epsilons[agent];
    let scores = score_rows(spec, base, &obs, &actions, eps);
    let p = spec.param_count();
    let mut direction = vec![0.0; p];
    for (t, &w) in weights.iter().enumerate() {
        if w != 0.0 {
            for (d, s) in direction.iter_mut().zip(&scores.data()[t * p..(t + 1) * p]) {
                *d += w * s;
            }
        }
    }
    let entropy_grad = if settings.entropy_coef != 0.0 {
        entropy_gradient(spec, base, &obs)
            .into_iter()
            .map(|v| v * settings.entropy_coef)
            .collect()
    } else {
        vec![0.0; p]
    };
    for (d, e) in direction.iter_mut().zip(&entropy_grad) {
        *d += e;
    }
    if !direction.iter().all(|v| v.is_finite()) {
        return Err(AgentError::NonFinite(format!(
            "policy gradient of agent {agent} on trajectory {}",
            tau.id
        )));
    }
    let clip_scale = match clip_global_norm(&mut direction, settings.clip_norm) {
        Some(s) => {
            debug!("clipped policy gradient of agent {agent} by factor {s:.4}");
            s
        }
        None => 1.0,
    };
    let updated: Vec<f64> = base
        .iter()
        .zip(&direction)
        .map(|(b, d)| b + settings.lr * d)
        .collect();
    Ok(RecipientUpdate {
        agent,
        from_version,
        base: base.to_vec(),
        scores,
        weights,
        dones: tau.dones(),
        map,
        entropy_grad,
        lr: settings.lr,
        clip_scale,
        updated,
    })
}

/// Plain policy-gradient step of `policy` on its total rewards.
pub fn policy_update(
    policy: &PolicyNet,
    tau: &Trajectory,
    agent: usize,
    gamma: f64,
    settings: StepSettings,
) -> Result<RecipientUpdate, AgentError> {
    let w = pg_weights(tau, agent, gamma);
    policy_step(
        policy.spec(),
        &policy.params.values,
        tau,
        agent,
        w,
        RewardMap::Discounted(gamma),
        settings,
        tau.policy_versions[agent],
    )
}

/// A recipient's step as seen by an incentive giver: the computed update and
/// the architecture that consumes it.
pub struct RecipientView<'a> {
    pub update: &'a RecipientUpdate,
    pub spec: &'a MlpSpec,
}

/// Graph of the giver's extrinsic loss on the follow-up trajectory:
/// `-sum_j sum_t log pi_{theta_hat_j}(a_hat_t | o_hat_t) G_hat_t`, with
/// `G_hat` the giver's discounted extrinsic return.
pub struct LioGraph {
    pub graph: Graph,
    pub eta: NodeId,
    pub updates: Vec<(usize, NodeId)>,
    pub loss: NodeId,
    pub bindings: Bindings,
}

fn check_follow_up(
    tau: &Trajectory,
    tau_hat: &Trajectory,
    recipients: &[RecipientView],
) -> Result<(), AgentError> {
    if tau_hat.is_empty() {
        return Err(AgentError::Contract("follow-up trajectory is empty".into()));
    }
    for r in recipients {
        let j = r.update.agent;
        let expected = r.update.from_version + 1;
        if tau_hat.policy_versions[j] != expected {
            return Err(AgentError::StaleTrajectory {
                trajectory: tau_hat.id,
                agent: j,
                found: tau_hat.policy_versions[j],
                expected,
            });
        }
        if r.update.weights.len() != tau.len() {
            return Err(AgentError::Contract(format!(
                "update of agent {j} was not computed on trajectory {}",
                tau.id
            )));
        }
    }
    Ok(())
}

pub fn build_lio_graph(
    giver: usize,
    net: &IncentiveNet,
    tau: &Trajectory,
    recipients: &[RecipientView],
    tau_hat: &Trajectory,
    gamma: f64,
) -> Result<LioGraph, AgentError> {
    check_follow_up(tau, tau_hat, recipients)?;
    let mut g = Graph::new();
    let eta = g.param("eta", net.params.len());
    let x = g.constant(tau.incentive_inputs(giver));
    let outputs = net.graph_outputs(&mut g, eta, x);
    let g_hat = discounted_returns(&tau_hat.env_rewards(giver), &tau_hat.dones(), gamma);
    let g_hat = g.constant(Tensor::new(g_hat.len(), 1, g_hat));
    let mut total: Option<NodeId> = None;
    let mut updates = Vec::new();
    for r in recipients {
        let j = r.update.agent;
        if j == giver {
            return Err(AgentError::Contract(
                "a giver cannot be its own recipient".into(),
            ));
        }
        let u = g.pick(outputs, vec![j; tau.len()]);
        let theta_hat = r.update.graph_update(&mut g, u, &tau.incentives(giver, j));
        updates.push((j, theta_hat));
        let obs = g.constant(tau_hat.obs(j));
        let logits = r.spec.graph_forward(&mut g, theta_hat, obs);
        let actions = tau_hat.actions(j);
        let eps = tau_hat.epsilons[j];
        let logp = if eps == 0.0 {
            let lp = g.log_softmax(logits);
            g.pick(lp, actions)
        } else {
            let p = g.softmax(logits);
            let pa = g.pick(p, actions);
            let pa = g.scale(pa, 1.0 - eps);
            let floor = g.constant(Tensor::scalar(eps / r.spec.output as f64));
            let mixed = g.add(pa, floor);
            g.log(mixed)
        };
        let weighted = g.mul(logp, g_hat);
        let s = g.sum(weighted);
        total = Some(match total {
            Some(t) => g.add(t, s),
            None => s,
        });
    }
    let total = total.ok_or_else(|| {
        AgentError::Contract("incentive update needs at least one recipient".into())
    })?;
    let loss = g.neg(total);
    g.set_label(loss, "extrinsic_loss");
    let bindings = Bindings::new().with(eta, Tensor::row(net.params.values.clone()));
    Ok(LioGraph {
        graph: g,
        eta,
        updates,
        loss,
        bindings,
    })
}

/// Loss value and its gradient with respect to the giver's incentive
/// parameters, differentiated through the recipients' updates.
pub fn lio_extrinsic_gradient(
    giver: usize,
    net: &IncentiveNet,
    tau: &Trajectory,
    recipients: &[RecipientView],
    tau_hat: &Trajectory,
    gamma: f64,
) -> Result<(f64, Vec<f64>), AgentError> {
    let lg = build_lio_graph(giver, net, tau, recipients, tau_hat, gamma)?;
    let values = lg.graph.eval(&lg.bindings)?;
    let nodes: Vec<NodeId> = lg.updates.iter().map(|&(_, n)| n).collect();
    let grad = lg
        .graph
        .grad_through_update(&values, lg.loss, &nodes, lg.eta)?;
    Ok((values.get(lg.loss).item(), grad))
}

/// The same gradient assembled by hand: for every recipient, the Jacobian of
/// its update with respect to the incentive parameters, transposed, times the
/// gradient of the follow-up objective at the updated parameters.
pub fn lio_extrinsic_gradient_explicit(
    giver: usize,
    net: &IncentiveNet,
    tau: &Trajectory,
    recipients: &[RecipientView],
    tau_hat: &Trajectory,
    gamma: f64,
) -> Result<Vec<f64>, AgentError> {
    check_follow_up(tau, tau_hat, recipients)?;
    let g_hat = discounted_returns(&tau_hat.env_rewards(giver), &tau_hat.dones(), gamma);
    let eta_spec = net.spec();
    let mut grad = vec![0.0; eta_spec.param_count()];
    for r in recipients {
        let up = r.update;
        let j = up.agent;
        // gradient of the follow-up objective at theta_hat
        let v = weighted_score(
            r.spec,
            &up.updated,
            &tau_hat.obs(j),
            &tau_hat.actions(j),
            &g_hat,
            tau_hat.epsilons[j],
        );
        // h_t = g_t . v, then coefficient of u_l is sum_t M[t][l] h_t
        let p = v.len();
        let h: Vec<f64> = (0..tau.len())
            .map(|t| {
                up.scores.data()[t * p..(t + 1) * p]
                    .iter()
                    .zip(&v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let coeff: Vec<f64> = match up.reward_matrix() {
            Some(m) => (0..tau.len())
                .map(|l| (0..tau.len()).map(|t| m.get(t, l) * h[t]).sum())
                .collect(),
            None => h,
        };
        let k = up.lr * up.clip_scale;
        for (l, step) in tau.steps.iter().enumerate() {
            let mut dout = vec![0.0; eta_spec.output];
            dout[j] = net.r_max;
            let c = k * coeff[l];
            if c == 0.0 {
                continue;
            }
            eta_spec.forward_backward(
                &net.params.values,
                &step.incentive_inputs[giver],
                &mut grad,
                |z| {
                    let s = crate::diffcore::sigmoid(z[j]);
                    dout.iter().map(|d| -c * d * s * (1.0 - s)).collect()
                },
            );
        }
    }
    Ok(grad)
}

/// Incentive-parameter optimizer state: one Adam for the extrinsic term and,
/// optionally, a separate one for the cost term.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IncentiveOptimizer {
    pub main: Adam,
    pub cost: Option<Adam>,
    pub cost_coef: f64,
}

impl IncentiveOptimizer {
    pub fn new(len: usize, lr: f64, cost_coef: f64, cost_lr: Option<f64>) -> Self {
        Self {
            main: Adam::new(lr, len),
            cost: cost_lr.map(|lr| Adam::new(lr, len)),
            cost_coef,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IncentiveStepReport {
    pub extrinsic_loss: f64,
    pub cost: f64,
    pub grad_norm: f64,
}

/// Full incentive update: descend the extrinsic loss on the follow-up
/// trajectory and the discounted incentive cost on the original one.
#[allow(clippy::too_many_arguments)]
pub fn incentive_update(
    giver: usize,
    net: &mut IncentiveNet,
    opt: &mut IncentiveOptimizer,
    tau: &Trajectory,
    recipients: &[RecipientView],
    tau_hat: &Trajectory,
    gamma: f64,
    clip_norm: f64,
) -> Result<IncentiveStepReport, AgentError> {
    let (loss, mut grad) = lio_extrinsic_gradient(giver, net, tau, recipients, tau_hat, gamma)?;
    let (cost, mut cost_grad) = if opt.cost_coef != 0.0 {
        net.cost_and_gradient(tau, gamma)
    } else {
        (0.0, Vec::new())
    };
    cost_grad.iter_mut().for_each(|g| *g *= opt.cost_coef);
    if opt.cost.is_none() && !cost_grad.is_empty() {
        for (g, c) in grad.iter_mut().zip(&cost_grad) {
            *g += c;
        }
    }
    if !grad.iter().chain(&cost_grad).all(|v| v.is_finite()) {
        return Err(AgentError::NonFinite(format!(
            "incentive gradient of agent {giver}"
        )));
    }
    let grad_norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    if let Some(s) = clip_global_norm(&mut grad, clip_norm) {
        debug!("clipped incentive gradient of agent {giver} by factor {s:.4}");
    }
    opt.main.descend(&mut net.params.values, &grad);
    if let (Some(c), false) = (opt.cost.as_mut(), cost_grad.is_empty()) {
        clip_global_norm(&mut cost_grad, clip_norm);
        c.descend(&mut net.params.values, &cost_grad);
    }
    Ok(IncentiveStepReport {
        extrinsic_loss: loss,
        cost,
        grad_norm,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitSettings {
    /// Upper bound on ascent steps per fit.
    pub steps: usize,
    pub lr: f64,
    /// Stop once one step changes the mean log-likelihood by less than this.
    pub tol: f64,
}

/// Maximum-likelihood refit of `model` to agent `j`'s behavior on `tau`,
/// warm-started from the current model parameters. Identical
/// (observation, action) pairs are pooled. Ascent stops after
/// `settings.steps` steps or once the mean log-likelihood has converged to
/// within `settings.tol`. Returns the mean log-likelihood after fitting.
pub fn fit_opponent_model(
    model: &mut PolicyNet,
    opt: &mut Adam,
    tau: &Trajectory,
    j: usize,
    eps: f64,
    settings: FitSettings,
) -> Result<f64, AgentError> {
    if tau.is_empty() {
        return Err(AgentError::Contract(
            "cannot fit an opponent model to an empty trajectory".into(),
        ));
    }
    let mut index: HashMap<(Vec<u64>, usize), usize> = HashMap::new();
    let mut rows: Vec<&[f64]> = Vec::new();
    let mut actions = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for s in &tau.steps {
        let key = (
            s.obs[j].iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            s.actions[j],
        );
        match index.get(&key) {
            Some(&k) => counts[k] += 1.0,
            None => {
                index.insert(key, rows.len());
                rows.push(&s.obs[j]);
                actions.push(s.actions[j]);
                counts.push(1.0);
            }
        }
    }
    let n = tau.len() as f64;
    let obs = Tensor::from_rows(&rows);
    let spec = model.spec().clone();
    let mut prev: Option<f64> = None;
    for _ in 0..settings.steps {
        let (ll, g) = log_likelihood(&spec, &model.params.values, &obs, &actions, &counts, eps);
        if prev.is_some_and(|p| ((ll - p) / n).abs() < settings.tol) {
            break;
        }
        prev = Some(ll);
        let g: Vec<f64> = g.into_iter().map(|v| v / n).collect();
        opt.lr = settings.lr;
        opt.ascend(&mut model.params.values, &g);
    }
    let (ll, _) = log_likelihood(&spec, &model.params.values, &obs, &actions, &counts, eps);
    Ok(ll / n)
}

impl From<DiffError> for AgentError {
    fn from(e: DiffError) -> Self {
        AgentError::Diff(e)
    }
}
