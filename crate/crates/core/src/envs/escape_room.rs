//! Escape Room: N agents start at `start`; the door opens only while at
//! least M agents stand at the lever.
//!
//! Actions are target positions and moves resolve simultaneously, so the
//! lever count is taken on post-move positions. The asymmetric two-agent
//! variant restricts agent 0 to {start, door} and agent 1 to {start, lever}.

use super::{check_actions, one_hot, AgentEvents, Env, EnvError, StepResult};

pub const ER_EPISODE_LEN: usize = 5;
const DOOR_REWARD: f64 = 10.0;
const MOVE_COST: f64 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Position {
    Lever = 0,
    Start = 1,
    Door = 2,
}

impl Position {
    pub fn from_index(i: usize) -> Self {
        match i {
            0 => Position::Lever,
            1 => Position::Start,
            _ => Position::Door,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EscapeRoom {
    n: usize,
    m: usize,
    asymmetric: bool,
    positions: Vec<Position>,
    t: usize,
    done: bool,
}

impl EscapeRoom {
    pub fn new(n: usize, m: usize) -> Result<Self, EnvError> {
        if n < 2 || m == 0 || m >= n {
            return Err(EnvError::Contract(format!(
                "escape room needs 0 < M < N and N >= 2, got N={n}, M={m}"
            )));
        }
        Ok(Self {
            n,
            m,
            asymmetric: false,
            positions: vec![Position::Start; n],
            t: 0,
            done: false,
        })
    }

    pub fn asymmetric() -> Self {
        Self {
            n: 2,
            m: 1,
            asymmetric: true,
            positions: vec![Position::Start; 2],
            t: 0,
            done: false,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn is_asymmetric(&self) -> bool {
        self.asymmetric
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    /// Target position selected by `action` for `agent`.
    pub fn target(&self, agent: usize, action: usize) -> Position {
        if self.asymmetric {
            match (agent, action) {
                (_, 0) => Position::Start,
                (0, _) => Position::Door,
                _ => Position::Lever,
            }
        } else {
            Position::from_index(action)
        }
    }

    /// Index of the action that targets `pos`, if `agent` can reach it.
    pub fn action_for(&self, agent: usize, pos: Position) -> Option<usize> {
        (0..self.n_actions(agent)).find(|&a| self.target(agent, a) == pos)
    }

    fn obs(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| {
                let mut o = one_hot(3, self.positions[i] as usize);
                for j in (0..self.n).filter(|&j| j != i) {
                    o.extend(one_hot(3, self.positions[j] as usize));
                }
                o
            })
            .collect()
    }

    fn symmetric_rewards(&self, old: &[Position]) -> (Vec<f64>, bool) {
        let levers = self
            .positions
            .iter()
            .filter(|&&p| p == Position::Lever)
            .count();
        let open = levers >= self.m;
        let mut any_exit = false;
        let rewards = (0..self.n)
            .map(|i| {
                let moved = old[i] != self.positions[i];
                if open && self.positions[i] == Position::Door {
                    any_exit = true;
                    DOOR_REWARD
                } else if moved {
                    MOVE_COST
                } else {
                    0.0
                }
            })
            .collect();
        (rewards, any_exit)
    }

    fn asymmetric_rewards(&self, old: &[Position]) -> (Vec<f64>, bool) {
        let a2_pulls = self.positions[1] == Position::Lever;
        let a2 = if old[1] != self.positions[1] {
            MOVE_COST
        } else {
            0.0
        };
        let (a1, exit) = if !a2_pulls {
            (MOVE_COST, false)
        } else if self.positions[0] == Position::Door {
            (DOOR_REWARD, true)
        } else if old[0] != self.positions[0] {
            (MOVE_COST, false)
        } else {
            (0.0, false)
        };
        (vec![a1, a2], exit)
    }
}

impl Env for EscapeRoom {
    fn n_agents(&self) -> usize {
        self.n
    }
    fn n_actions(&self, _agent: usize) -> usize {
        if self.asymmetric {
            2
        } else {
            3
        }
    }
    fn obs_dim(&self) -> usize {
        3 * self.n
    }
    fn action_code_dim(&self) -> usize {
        self.n_actions(0)
    }
    fn max_steps(&self) -> usize {
        ER_EPISODE_LEN
    }

    fn reset(&mut self) -> Vec<Vec<f64>> {
        self.positions = vec![Position::Start; self.n];
        self.t = 0;
        self.done = false;
        self.obs()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        check_actions(self, actions)?;
        let old = self.positions.clone();
        self.positions = actions
            .iter()
            .enumerate()
            .map(|(i, &a)| self.target(i, a))
            .collect();
        let (rewards, exit) = if self.asymmetric {
            self.asymmetric_rewards(&old)
        } else {
            self.symmetric_rewards(&old)
        };
        self.t += 1;
        self.done = exit || self.t >= ER_EPISODE_LEN;
        let events = (0..self.n)
            .map(|i| AgentEvents {
                moved: old[i] != self.positions[i],
                ..Default::default()
            })
            .collect();
        Ok(StepResult {
            observations: self.obs(),
            rewards,
            done: self.done,
            events,
        })
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn encode_action(&self, agent: usize, action: usize) -> Vec<f64> {
        one_hot(self.n_actions(agent), action)
    }

    fn state_bytes(&self) -> Vec<u8> {
        let mut b: Vec<u8> = self.positions.iter().map(|&p| p as u8).collect();
        b.push(self.t as u8);
        b.push(self.done as u8);
        b
    }
}

/// Best collective extrinsic return of a single joint move from the start
/// state, by exhaustive enumeration of the 3^N assignments.
pub fn er_optimal_return(n: usize, m: usize) -> Result<f64, EnvError> {
    if m >= n {
        return Err(EnvError::Contract(format!("need M < N, got N={n}, M={m}")));
    }
    let mut best = f64::NEG_INFINITY;
    for code in 0..3usize.pow(n as u32) {
        let mut env = EscapeRoom::new(n, m)?;
        env.reset();
        let mut c = code;
        let actions: Vec<usize> = (0..n)
            .map(|_| {
                let a = c % 3;
                c /= 3;
                a
            })
            .collect();
        let r = env.step(&actions)?;
        best = best.max(r.rewards.iter().sum());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    const L: usize = 0;
    const S: usize = 1;
    const D: usize = 2;

    #[test]
    fn two_one_door_and_lever() {
        let mut env = EscapeRoom::new(2, 1).unwrap();
        env.reset();
        let r = env.step(&[D, L]).unwrap();
        assert_eq!(r.rewards, vec![10.0, -1.0]);
        assert!(r.done);
    }

    #[test]
    fn staying_is_free() {
        let mut env = EscapeRoom::new(2, 1).unwrap();
        env.reset();
        let r = env.step(&[S, S]).unwrap();
        assert_eq!(r.rewards, vec![0.0, 0.0]);
        assert!(!r.done);
    }

    #[test]
    fn three_two_single_puller_is_not_enough() {
        let mut env = EscapeRoom::new(3, 2).unwrap();
        env.reset();
        let r = env.step(&[L, S, S]).unwrap();
        assert_eq!(r.rewards, vec![-1.0, 0.0, 0.0]);
        assert!(!r.done);
        let r = env.step(&[L, S, D]).unwrap();
        assert_eq!(r.rewards, vec![0.0, 0.0, -1.0]);
    }

    #[test]
    fn staying_at_lever_is_free_and_door_pays_when_open() {
        let mut env = EscapeRoom::new(2, 1).unwrap();
        env.reset();
        env.step(&[S, L]).unwrap();
        let r = env.step(&[D, L]).unwrap();
        assert_eq!(r.rewards, vec![10.0, 0.0]);
        assert!(r.done);
    }

    #[test]
    fn episode_times_out() {
        let mut env = EscapeRoom::new(2, 1).unwrap();
        env.reset();
        for t in 0..ER_EPISODE_LEN {
            let r = env.step(&[D, D]).unwrap();
            assert_eq!(r.done, t + 1 == ER_EPISODE_LEN);
        }
    }

    #[test]
    fn asymmetric_rewards() {
        let mut env = EscapeRoom::asymmetric();
        env.reset();
        let r = env.step(&[0, 0]).unwrap();
        assert_eq!(r.rewards, vec![-1.0, 0.0]);
        let r = env.step(&[0, 1]).unwrap();
        assert_eq!(r.rewards, vec![0.0, -1.0]);
        let r = env.step(&[1, 1]).unwrap();
        assert_eq!(r.rewards, vec![10.0, 0.0]);
        assert!(r.done);
    }

    #[test]
    fn optimal_returns() {
        assert_eq!(er_optimal_return(2, 1).unwrap(), 9.0);
        assert_eq!(er_optimal_return(3, 2).unwrap(), 8.0);
        assert!(er_optimal_return(2, 2).is_err());
    }

    #[test]
    fn five_three_optimum_under_literal_rule() {
        // Both non-pullers exit together: 3 * (-1) + 2 * 10.
        assert_eq!(er_optimal_return(5, 3).unwrap(), 17.0);
    }

    #[test]
    fn no_positive_return_without_enough_pullers() {
        // Two-step sequences from start, for every N <= 5 and M < N.
        for n in 2..=5usize {
            for m in 1..n {
                let k = 3usize.pow(n as u32);
                for c1 in 0..k {
                    for c2 in 0..k {
                        let mut env = EscapeRoom::new(n, m).unwrap();
                        env.reset();
                        let mut total = 0.0;
                        let mut opened = false;
                        for code in [c1, c2] {
                            if env.is_done() {
                                break;
                            }
                            let actions: Vec<usize> =
                                (0..n).map(|i| code / 3usize.pow(i as u32) % 3).collect();
                            opened |= actions.iter().filter(|&&a| a == L).count() >= m;
                            total += env.step(&actions).unwrap().rewards.iter().sum::<f64>();
                        }
                        if !opened {
                            assert!(total <= 0.0);
                        }
                    }
                }
            }
        }
    }
}
