//! Closed-form learning dynamics of two incentive-learning agents in the
//! stateless iterated prisoner's dilemma.
//!
//! `theta[i]` is agent i's cooperation probability and `eta[i] = [C, D]` the
//! incentive agent i pays the other agent for cooperating / defecting. With
//! joint-action distribution `p = [CC, CD, DC, DD]` the value of agent i is
//! `p . r^i / (1 - gamma)`, where `r^i` is the payoff row augmented with the
//! incentive received from the other agent.

use std::io::{self, Write};

use thiserror::Error;

pub const THETA_MARGIN: f64 = 1e-3;
pub const ETA_MAX: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExactError {
    #[error("discount must lie in [0, 1), got {0}")]
    Discount(f64),
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactState {
    pub theta: [f64; 2],
    pub eta: [[f64; 2]; 2],
    /// Policy step size.
    pub alpha: f64,
    /// Incentive step size.
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ExactState {
    fn default() -> Self {
        Self {
            theta: [0.5, 0.5],
            eta: [[0.0; 2]; 2],
            alpha: 0.01,
            beta: 0.01,
            gamma: 0.9,
        }
    }
}

impl ExactState {
    pub fn with_params(theta: [f64; 2], eta: [[f64; 2]; 2]) -> Self {
        Self {
            theta,
            eta,
            ..Self::default()
        }
    }

    /// `eta_C - eta_D - 1` for the incentives agent `i` gives.
    pub fn margin(&self, i: usize) -> f64 {
        self.eta[i][0] - self.eta[i][1] - 1.0
    }
}

pub fn joint_distribution(theta: [f64; 2]) -> [f64; 4] {
    let (a, b) = (theta[0], theta[1]);
    [a * b, a * (1.0 - b), (1.0 - a) * b, (1.0 - a) * (1.0 - b)]
}

/// Incentive-augmented payoff rows over `[CC, CD, DC, DD]`.
pub fn augmented_payoffs(eta: [[f64; 2]; 2]) -> [[f64; 4]; 2] {
    let (e1, e2) = (eta[0], eta[1]);
    [
        [-1.0 + e2[0], -3.0 + e2[0], e2[1], -2.0 + e2[1]],
        [-1.0 + e1[0], e1[1], -3.0 + e1[0], -2.0 + e1[1]],
    ]
}

pub fn exact_value(state: &ExactState, agent: usize) -> Result<f64, ExactError> {
    if !(0.0..1.0).contains(&state.gamma) {
        return Err(ExactError::Discount(state.gamma));
    }
    if agent > 1 {
        return Err(ExactError::Contract(format!(
            "agent index {agent} out of range"
        )));
    }
    let p = joint_distribution(state.theta);
    let r = augmented_payoffs(state.eta)[agent];
    Ok(p.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / (1.0 - state.gamma))
}

/// Unclamped policy-gradient increments `(d theta1, d theta2)`.
pub fn policy_delta(state: &ExactState) -> [f64; 2] {
    let k = state.alpha / (1.0 - state.gamma);
    [k * state.margin(1), k * state.margin(0)]
}

pub fn exact_policy_step(state: &ExactState) -> [f64; 2] {
    let d = policy_delta(state);
    [
        clamp_theta(state.theta[0] + d[0]),
        clamp_theta(state.theta[1] + d[1]),
    ]
}

/// The scalar `B_i` multiplying `[1, -1]` in agent i's incentive gradient,
/// written out term by term at the giver's updated policy.
pub fn incentive_coefficient(state: &ExactState, giver: usize) -> f64 {
    let t_hat = exact_policy_step(state)[giver];
    let e = state.eta[1 - giver];
    t_hat * (-1.0 + e[0]) - t_hat * (-3.0 + e[0]) + (1.0 - t_hat) * e[1]
        - (1.0 - t_hat) * (-2.0 + e[1])
}

/// Unclamped incentive increments for both agents.
pub fn incentive_delta(state: &ExactState) -> [[f64; 2]; 2] {
    let k = state.beta * state.alpha / (1.0 - state.gamma).powi(2);
    let d = |i: usize| {
        let b = incentive_coefficient(state, i);
        [k * b, -k * b]
    };
    [d(0), d(1)]
}

pub fn exact_incentive_step(state: &ExactState) -> [[f64; 2]; 2] {
    let d = incentive_delta(state);
    let mut eta = state.eta;
    for i in 0..2 {
        for k in 0..2 {
            eta[i][k] = (eta[i][k] + d[i][k]).clamp(0.0, ETA_MAX);
        }
    }
    eta
}

fn clamp_theta(t: f64) -> f64 {
    t.clamp(THETA_MARGIN, 1.0 - THETA_MARGIN)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    MutualCooperation,
    NotConverged,
}

pub fn is_cc(state: &ExactState) -> bool {
    state.theta.iter().all(|&t| t >= 0.99) && state.margin(0) > 0.0 && state.margin(1) > 0.0
}

#[derive(Clone, Debug)]
pub struct ExactRun {
    pub trace: Vec<ExactState>,
    pub verdict: Verdict,
    /// Index into `trace` of the first CC state.
    pub converged_at: Option<usize>,
}

/// Iterates the simultaneous policy and incentive maps, stopping at the first
/// mutually cooperative state or after `steps` iterations.
pub fn run_exact_dynamics(initial: ExactState, steps: usize) -> Result<ExactRun, ExactError> {
    if steps == 0 {
        return Err(ExactError::Contract("steps must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&initial.gamma) {
        return Err(ExactError::Discount(initial.gamma));
    }
    let mut s = initial;
    s.theta = [clamp_theta(s.theta[0]), clamp_theta(s.theta[1])];
    let mut trace = vec![s];
    if is_cc(&s) {
        return Ok(ExactRun {
            trace,
            verdict: Verdict::MutualCooperation,
            converged_at: Some(0),
        });
    }
    for k in 1..=steps {
        let theta = exact_policy_step(&s);
        let eta = exact_incentive_step(&s);
        s.theta = theta;
        s.eta = eta;
        trace.push(s);
        if is_cc(&s) {
            return Ok(ExactRun {
                trace,
                verdict: Verdict::MutualCooperation,
                converged_at: Some(k),
            });
        }
    }
    Ok(ExactRun {
        trace,
        verdict: Verdict::NotConverged,
        converged_at: None,
    })
}

/// Which incentive component spans the horizontal axis of a vector field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldAxis {
    /// Vary `eta1_C`, hold `eta1_D` fixed.
    EtaC,
    /// Vary `eta1_D`, hold `eta1_C` fixed.
    EtaD,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldRow {
    pub theta2: f64,
    pub eta1c: f64,
    pub eta1d: f64,
    pub dtheta2: f64,
    pub deta1c: f64,
    pub deta1d: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSpec {
    pub axis: FieldAxis,
    /// Value of the incentive component not on the axis.
    pub fixed: f64,
    pub resolution: usize,
    /// Agent 1's cooperation probability, which the agent-1 incentive
    /// gradient depends on.
    pub theta1: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        let d = ExactState::default();
        Self {
            axis: FieldAxis::EtaC,
            fixed: 0.0,
            resolution: 11,
            theta1: 0.5,
            alpha: d.alpha,
            beta: d.beta,
            gamma: d.gamma,
        }
    }
}

/// Unclamped update vectors on a `resolution x resolution` grid spanning
/// `theta2 in [0, 1]` and the chosen incentive in `[0, 3]`.
pub fn vector_field(spec: &FieldSpec) -> Result<Vec<FieldRow>, ExactError> {
    if spec.resolution < 2 {
        return Err(ExactError::Contract(
            "grid resolution must be at least 2".into(),
        ));
    }
    if !(0.0..1.0).contains(&spec.gamma) {
        return Err(ExactError::Discount(spec.gamma));
    }
    let n = spec.resolution;
    let mut rows = Vec::with_capacity(n * n);
    for i in 0..n {
        let theta2 = i as f64 / (n - 1) as f64;
        for k in 0..n {
            let x = ETA_MAX * k as f64 / (n - 1) as f64;
            let (c, d) = match spec.axis {
                FieldAxis::EtaC => (x, spec.fixed),
                FieldAxis::EtaD => (spec.fixed, x),
            };
            let state = ExactState {
                theta: [spec.theta1, theta2],
                eta: [[c, d], [0.0, 0.0]],
                alpha: spec.alpha,
                beta: spec.beta,
                gamma: spec.gamma,
            };
            let dt = policy_delta(&state)[1];
            let de = incentive_delta(&state)[0];
            rows.push(FieldRow {
                theta2,
                eta1c: c,
                eta1d: d,
                dtheta2: dt,
                deta1c: de[0],
                deta1d: de[1],
            });
        }
    }
    Ok(rows)
}

pub const FIELD_HEADER: &str = "theta2,eta1c,eta1d,dtheta2,deta1c,deta1d";

pub fn write_field_csv<W: Write>(rows: &[FieldRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{FIELD_HEADER}")?;
    for r in rows {
        let cols = [r.theta2, r.eta1c, r.eta1d, r.dtheta2, r.deta1c, r.deta1d];
        let line: Vec<String> = cols.iter().map(|&v| significant(v, 6)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// Shortest decimal rendering of `x` rounded to `digits` significant digits.
pub fn significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{}", if x == 0.0 { 0.0 } else { x });
    }
    let rounded: f64 = format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .unwrap_or(x);
    format!("{rounded}")
}
