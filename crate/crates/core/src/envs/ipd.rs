use super::{check_actions, one_hot, AgentEvents, Env, EnvError, StepResult};

pub const IPD_EPISODE_LEN: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IpdAction {
    Cooperate = 0,
    Defect = 1,
}

/// Previous joint action, or `First` before the first round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IpdState {
    CC = 0,
    CD = 1,
    DC = 2,
    DD = 3,
    First = 4,
}

impl IpdState {
    pub fn from_joint(a1: usize, a2: usize) -> Self {
        match (a1, a2) {
            (0, 0) => IpdState::CC,
            (0, 1) => IpdState::CD,
            (1, 0) => IpdState::DC,
            _ => IpdState::DD,
        }
    }
}

/// Row-player payoffs; the column player's are the transpose.
pub fn ipd_payoff(a1: usize, a2: usize) -> (f64, f64) {
    match (a1, a2) {
        (0, 0) => (-1.0, -1.0),
        (0, 1) => (-3.0, 0.0),
        (1, 0) => (0.0, -3.0),
        _ => (-2.0, -2.0),
    }
}

#[derive(Clone, Debug)]
pub struct Ipd {
    state: IpdState,
    t: usize,
    horizon: usize,
}

impl Default for Ipd {
    fn default() -> Self {
        Self::new()
    }
}

impl Ipd {
    pub fn new() -> Self {
        Self::with_horizon(IPD_EPISODE_LEN)
    }

    pub fn with_horizon(horizon: usize) -> Self {
        Self {
            state: IpdState::First,
            t: 0,
            horizon,
        }
    }

    pub fn state(&self) -> IpdState {
        self.state
    }

    fn obs(&self) -> Vec<Vec<f64>> {
        let o = one_hot(5, self.state as usize);
        vec![o.clone(), o]
    }
}

impl Env for Ipd {
    fn n_agents(&self) -> usize {
        2
    }
    fn n_actions(&self, _agent: usize) -> usize {
        2
    }
    fn obs_dim(&self) -> usize {
        5
    }
    fn action_code_dim(&self) -> usize {
        2
    }
    fn max_steps(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self) -> Vec<Vec<f64>> {
        self.state = IpdState::First;
        self.t = 0;
        self.obs()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        check_actions(self, actions)?;
        let (r1, r2) = ipd_payoff(actions[0], actions[1]);
        self.state = IpdState::from_joint(actions[0], actions[1]);
        self.t += 1;
        Ok(StepResult {
            observations: self.obs(),
            rewards: vec![r1, r2],
            done: self.is_done(),
            events: vec![AgentEvents::default(); 2],
        })
    }

    fn is_done(&self) -> bool {
        self.t >= self.horizon
    }

    fn encode_action(&self, _agent: usize, action: usize) -> Vec<f64> {
        one_hot(2, action)
    }

    fn state_bytes(&self) -> Vec<u8> {
        vec![self.state as u8, self.t as u8]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payoff_table() {
        let mut env = Ipd::new();
        for (a, expected) in [
            ([0, 0], [-1.0, -1.0]),
            ([0, 1], [-3.0, 0.0]),
            ([1, 0], [0.0, -3.0]),
            ([1, 1], [-2.0, -2.0]),
        ] {
            env.reset();
            let r = env.step(&a).unwrap();
            assert_eq!(r.rewards, expected.to_vec());
        }
    }

    #[test]
    fn first_flag_only_at_reset_and_episode_length() {
        let mut env = Ipd::new();
        let o = env.reset();
        assert_eq!(o[0], vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        for t in 0..IPD_EPISODE_LEN {
            let r = env.step(&[0, 1]).unwrap();
            assert_eq!(r.observations[0], vec![0.0, 1.0, 0.0, 0.0, 0.0]);
            assert_eq!(r.done, t == IPD_EPISODE_LEN - 1);
        }
        assert_eq!(env.step(&[0, 0]), Err(EnvError::Terminal));
    }

    #[test]
    fn out_of_domain_action_is_rejected() {
        let mut env = Ipd::new();
        env.reset();
        assert!(matches!(
            env.step(&[2, 0]),
            Err(EnvError::InvalidAction { agent: 0, .. })
        ));
    }
}
