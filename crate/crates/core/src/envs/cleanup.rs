//! Cleanup on a small grid.
//!
//! Layout: the leftmost `river_width` columns are the river, each cell either
//! clean or holding waste; the rightmost `apple_width` columns are the apple
//! patch. Agents always face up, so a cleaning beam covers the three columns
//! centred on the agent and the five rows above it.
//!
//! The waste level is the fraction of river cells holding waste. Apples spawn
//! per empty patch cell with probability
//! `p * clamp(1 - (w - restore) / (deplete - restore), 0, 1)`, which is zero
//! once the level reaches the depletion threshold. While the level is below
//! that threshold one clean river cell turns to waste with probability
//! `waste_spawn_prob` per step.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_actions, AgentEvents, Env, EnvError, StepResult};

const BEAM_LENGTH: usize = 5;
const BEAM_HALF_WIDTH: i64 = 1;
const CHANNELS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CleanupAction {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Stay = 4,
    Clean = 5,
}

impl CleanupAction {
    pub const COUNT: usize = 6;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Empty,
    Apple,
    Waste,
    River,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanupConfig {
    pub height: usize,
    pub width: usize,
    pub n_agents: usize,
    pub river_width: usize,
    pub apple_width: usize,
    pub apple_respawn_prob: f64,
    pub threshold_depletion: f64,
    pub threshold_restoration: f64,
    pub waste_spawn_prob: f64,
    /// Egocentric observation radius; `None` covers the whole map from any
    /// position.
    pub view_radius: Option<usize>,
    pub max_steps: usize,
}

impl CleanupConfig {
    pub fn small() -> Self {
        Self {
            height: 7,
            width: 7,
            n_agents: 2,
            river_width: 2,
            apple_width: 2,
            apple_respawn_prob: 0.5,
            threshold_depletion: 0.6,
            threshold_restoration: 0.0,
            waste_spawn_prob: 0.5,
            view_radius: None,
            max_steps: 50,
        }
    }

    pub fn large() -> Self {
        Self {
            height: 10,
            width: 10,
            river_width: 3,
            apple_width: 3,
            apple_respawn_prob: 0.3,
            threshold_depletion: 0.4,
            ..Self::small()
        }
    }

    pub fn radius(&self) -> usize {
        self.view_radius.unwrap_or(self.height.max(self.width) - 1)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Contract(format!("cleanup config: {m}")));
        if self.river_width == 0
            || self.apple_width == 0
            || self.river_width + self.apple_width > self.width
        {
            return bad("river and apple regions must be non-empty and fit the map");
        }
        if self.n_agents == 0 || self.n_agents > self.height * self.width {
            return bad("agent count must fit the map");
        }
        if !(self.threshold_restoration < self.threshold_depletion) {
            return bad("restoration threshold must be below depletion threshold");
        }
        for p in [self.apple_respawn_prob, self.waste_spawn_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Cleanup {
    cfg: CleanupConfig,
    grid: Vec<Cell>,
    agents: Vec<(usize, usize)>,
    t: usize,
    done: bool,
    rng: ChaCha8Rng,
    apples_spawned: u64,
    apples_collected: u64,
}

impl Cleanup {
    pub fn new(cfg: CleanupConfig, seed: u64) -> Result<Self, EnvError> {
        cfg.validate()?;
        let n = cfg.height * cfg.width;
        let agents = vec![(0, 0); cfg.n_agents];
        let mut env = Self {
            cfg,
            grid: vec![Cell::Empty; n],
            agents,
            t: 0,
            done: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            apples_spawned: 0,
            apples_collected: 0,
        };
        env.reset();
        Ok(env)
    }

    pub fn config(&self) -> &CleanupConfig {
        &self.cfg
    }

    pub fn cell(&self, r: usize, c: usize) -> Cell {
        self.grid[r * self.cfg.width + c]
    }

    pub fn set_cell(&mut self, r: usize, c: usize, cell: Cell) {
        let i = r * self.cfg.width + c;
        self.grid[i] = cell;
    }

    pub fn agent_position(&self, agent: usize) -> (usize, usize) {
        self.agents[agent]
    }

    /// Teleports an agent, for scripted scenarios. Fails if the cell is taken.
    pub fn place_agent(&mut self, agent: usize, pos: (usize, usize)) -> Result<(), EnvError> {
        if pos.0 >= self.cfg.height || pos.1 >= self.cfg.width {
            return Err(EnvError::Contract(format!(
                "position {pos:?} outside the map"
            )));
        }
        if self
            .agents
            .iter()
            .enumerate()
            .any(|(j, &p)| j != agent && p == pos)
        {
            return Err(EnvError::Contract(format!("position {pos:?} is occupied")));
        }
        self.agents[agent] = pos;
        Ok(())
    }

    pub fn is_river(&self, c: usize) -> bool {
        c < self.cfg.river_width
    }

    pub fn is_apple_patch(&self, c: usize) -> bool {
        c >= self.cfg.width - self.cfg.apple_width
    }

    pub fn waste_level(&self) -> f64 {
        let mut waste = 0usize;
        let mut total = 0usize;
        for r in 0..self.cfg.height {
            for c in 0..self.cfg.river_width {
                total += 1;
                if self.cell(r, c) == Cell::Waste {
                    waste += 1;
                }
            }
        }
        waste as f64 / total as f64
    }

    pub fn apple_spawn_probability(&self) -> f64 {
        let w = self.waste_level();
        let (lo, hi) = (self.cfg.threshold_restoration, self.cfg.threshold_depletion);
        if w >= hi {
            return 0.0;
        }
        let frac = (1.0 - (w - lo) / (hi - lo)).clamp(0.0, 1.0);
        self.cfg.apple_respawn_prob * frac
    }

    pub fn apples_spawned(&self) -> u64 {
        self.apples_spawned
    }

    pub fn apples_collected(&self) -> u64 {
        self.apples_collected
    }

    pub fn count(&self, cell: Cell) -> usize {
        self.grid.iter().filter(|&&c| c == cell).count()
    }

    /// Cells covered by a beam fired from `pos`.
    pub fn beam_footprint(&self, pos: (usize, usize)) -> Vec<(usize, usize)> {
        let (r, c) = pos;
        let mut cells = Vec::new();
        for d in 1..=BEAM_LENGTH {
            if d > r {
                break;
            }
            for dc in -BEAM_HALF_WIDTH..=BEAM_HALF_WIDTH {
                let cc = c as i64 + dc;
                if cc >= 0 && (cc as usize) < self.cfg.width {
                    cells.push((r - d, cc as usize));
                }
            }
        }
        cells
    }

    fn observe(&self, agent: usize) -> Vec<f64> {
        let v = self.cfg.radius() as i64;
        let side = (2 * v + 1) as usize;
        let mut o = vec![0.0; side * side * CHANNELS];
        let (ar, ac) = (self.agents[agent].0 as i64, self.agents[agent].1 as i64);
        for dr in -v..=v {
            for dc in -v..=v {
                let (r, c) = (ar + dr, ac + dc);
                if r < 0 || c < 0 || r >= self.cfg.height as i64 || c >= self.cfg.width as i64 {
                    continue;
                }
                let (r, c) = (r as usize, c as usize);
                let base = (((dr + v) as usize) * side + (dc + v) as usize) * CHANNELS;
                match self.cell(r, c) {
                    Cell::Apple => o[base] = 1.0,
                    Cell::Waste => o[base + 1] = 1.0,
                    _ => {}
                }
                if self.is_river(c) {
                    o[base + 2] = 1.0;
                }
                for (j, &p) in self.agents.iter().enumerate() {
                    if p == (r, c) {
                        o[base + if j == agent { 4 } else { 3 }] = 1.0;
                    }
                }
            }
        }
        o
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.cfg.n_agents).map(|i| self.observe(i)).collect()
    }

    fn spawn(&mut self) {
        let p_apple = self.apple_spawn_probability();
        if p_apple > 0.0 {
            for r in 0..self.cfg.height {
                for c in (self.cfg.width - self.cfg.apple_width)..self.cfg.width {
                    if self.cell(r, c) == Cell::Empty
                        && !self.agents.contains(&(r, c))
                        && self.rng.gen::<f64>() < p_apple
                    {
                        self.set_cell(r, c, Cell::Apple);
                        self.apples_spawned += 1;
                    }
                }
            }
        }
        if self.waste_level() < self.cfg.threshold_depletion
            && self.rng.gen::<f64>() < self.cfg.waste_spawn_prob
        {
            let clean: Vec<(usize, usize)> = (0..self.cfg.height)
                .flat_map(|r| (0..self.cfg.river_width).map(move |c| (r, c)))
                .filter(|&(r, c)| self.cell(r, c) == Cell::River)
                .collect();
            if let Some(&(r, c)) = clean.choose(&mut self.rng) {
                self.set_cell(r, c, Cell::Waste);
            }
        }
    }
}

impl Env for Cleanup {
    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }
    fn n_actions(&self, _agent: usize) -> usize {
        CleanupAction::COUNT
    }
    fn obs_dim(&self) -> usize {
        let side = 2 * self.cfg.radius() + 1;
        side * side * CHANNELS
    }
    fn action_code_dim(&self) -> usize {
        1
    }
    fn max_steps(&self) -> usize {
        self.cfg.max_steps
    }

    fn reset(&mut self) -> Vec<Vec<f64>> {
        for r in 0..self.cfg.height {
            for c in 0..self.cfg.width {
                let cell = if self.is_river(c) {
                    Cell::Waste
                } else {
                    Cell::Empty
                };
                self.set_cell(r, c, cell);
            }
        }
        let mut cells: Vec<(usize, usize)> = (0..self.cfg.height)
            .flat_map(|r| (0..self.cfg.width).map(move |c| (r, c)))
            .collect();
        cells.shuffle(&mut self.rng);
        self.agents = cells[..self.cfg.n_agents].to_vec();
        self.t = 0;
        self.done = false;
        self.observations()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        check_actions(self, actions)?;
        let n = self.cfg.n_agents;
        let mut rewards = vec![0.0; n];
        let mut events = vec![AgentEvents::default(); n];
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);

        for &i in &order {
            let (r, c) = self.agents[i];
            let (r, c) = (r as i64, c as i64);
            let (nr, nc) = match actions[i] {
                0 => (r - 1, c),
                1 => (r + 1, c),
                2 => (r, c - 1),
                3 => (r, c + 1),
                _ => continue,
            };
            if nr < 0 || nc < 0 || nr >= self.cfg.height as i64 || nc >= self.cfg.width as i64 {
                continue;
            }
            let target = (nr as usize, nc as usize);
            if self.agents.contains(&target) {
                continue;
            }
            self.agents[i] = target;
            events[i].moved = true;
            if self.cell(target.0, target.1) == Cell::Apple {
                self.set_cell(target.0, target.1, Cell::Empty);
                rewards[i] += 1.0;
                events[i].apples += 1;
                self.apples_collected += 1;
            }
        }

        for &i in &order {
            if actions[i] != CleanupAction::Clean as usize {
                continue;
            }
            events[i].fired = true;
            for (r, c) in self.beam_footprint(self.agents[i]) {
                if self.cell(r, c) == Cell::Waste {
                    self.set_cell(r, c, Cell::River);
                    events[i].waste_cleared += 1;
                }
            }
        }

        self.spawn();
        for (i, e) in events.iter_mut().enumerate() {
            e.in_river = self.is_river(self.agents[i].1);
        }
        self.t += 1;
        self.done = self.t >= self.cfg.max_steps;
        Ok(StepResult {
            observations: self.observations(),
            rewards,
            done: self.done,
            events,
        })
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn encode_action(&self, _agent: usize, action: usize) -> Vec<f64> {
        vec![if action == CleanupAction::Clean as usize {
            1.0
        } else {
            0.0
        }]
    }

    fn state_bytes(&self) -> Vec<u8> {
        let mut b: Vec<u8> = self.grid.iter().map(|&c| c as u8).collect();
        for &(r, c) in &self.agents {
            b.push(r as u8);
            b.push(c as u8);
        }
        b.extend((self.t as u32).to_le_bytes());
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clear_river(env: &mut Cleanup) {
        for r in 0..env.cfg.height {
            for c in 0..env.cfg.river_width {
                env.set_cell(r, c, Cell::River);
            }
        }
    }

    #[test]
    fn starts_polluted_without_apples() {
        let env = Cleanup::new(CleanupConfig::small(), 1).unwrap();
        assert_eq!(env.waste_level(), 1.0);
        assert_eq!(env.count(Cell::Apple), 0);
        assert_eq!(env.apple_spawn_probability(), 0.0);
    }

    #[test]
    fn spawn_probability_endpoints() {
        let mut env = Cleanup::new(CleanupConfig::small(), 1).unwrap();
        clear_river(&mut env);
        assert_eq!(env.apple_spawn_probability(), 0.5);
        let mut big = Cleanup::new(CleanupConfig::large(), 1).unwrap();
        clear_river(&mut big);
        assert_eq!(big.apple_spawn_probability(), 0.3);
    }

    #[test]
    fn picking_an_apple() {
        let mut env = Cleanup::new(CleanupConfig::small(), 2).unwrap();
        env.place_agent(0, (3, 5)).unwrap();
        env.place_agent(1, (6, 3)).unwrap();
        env.set_cell(2, 5, Cell::Apple);
        let r = env
            .step(&[CleanupAction::Up as usize, CleanupAction::Stay as usize])
            .unwrap();
        assert_eq!(r.rewards, vec![1.0, 0.0]);
        assert_eq!(env.cell(2, 5), Cell::Empty);
        assert_eq!(r.events[0].apples, 1);
    }

    #[test]
    fn beam_clears_footprint() {
        let mut env = Cleanup::new(CleanupConfig::small(), 3).unwrap();
        env.place_agent(0, (6, 1)).unwrap();
        env.place_agent(1, (0, 6)).unwrap();
        let r = env
            .step(&[CleanupAction::Clean as usize, CleanupAction::Stay as usize])
            .unwrap();
        // rows 1..=5 of columns 0 and 1
        assert_eq!(r.events[0].waste_cleared, 10);
        assert!(r.events[0].fired);
        assert_eq!(r.rewards, vec![0.0, 0.0]);
    }

    #[test]
    fn beam_without_waste_changes_nothing() {
        let mut env = Cleanup::new(CleanupConfig::small(), 4).unwrap();
        let mut cfg = env.cfg.clone();
        cfg.waste_spawn_prob = 0.0;
        cfg.apple_respawn_prob = 0.0;
        env = Cleanup::new(cfg, 4).unwrap();
        env.place_agent(0, (6, 5)).unwrap();
        env.place_agent(1, (0, 3)).unwrap();
        let before = env.grid.clone();
        let r = env
            .step(&[CleanupAction::Clean as usize, CleanupAction::Stay as usize])
            .unwrap();
        assert_eq!(r.rewards, vec![0.0, 0.0]);
        assert_eq!(r.events[0].waste_cleared, 0);
        assert!(r.events[0].fired);
        assert_eq!(env.grid, before);
    }

    #[test]
    fn agents_do_not_overlap() {
        let mut env = Cleanup::new(CleanupConfig::small(), 5).unwrap();
        env.place_agent(0, (3, 3)).unwrap();
        env.place_agent(1, (3, 4)).unwrap();
        env.step(&[CleanupAction::Right as usize, CleanupAction::Left as usize])
            .unwrap();
        assert_ne!(env.agent_position(0), env.agent_position(1));
    }

    #[test]
    fn observation_marks_self_at_centre() {
        let env = Cleanup::new(CleanupConfig::small(), 6).unwrap();
        let o = env.observe(0);
        assert_eq!(o.len(), env.obs_dim());
        let v = env.cfg.radius();
        let side = 2 * v + 1;
        assert_eq!(o[(v * side + v) * CHANNELS + 4], 1.0);
        assert_eq!(o.iter().skip(4).step_by(CHANNELS).sum::<f64>(), 1.0);
        assert_eq!(o.iter().skip(3).step_by(CHANNELS).sum::<f64>(), 1.0);
    }

    #[test]
    fn incentive_action_code_is_beam_use() {
        let env = Cleanup::new(CleanupConfig::small(), 7).unwrap();
        assert_eq!(env.others_actions(0, &[5, 5]), vec![1.0]);
        assert_eq!(env.others_actions(1, &[5, 2]), vec![1.0]);
        assert_eq!(env.others_actions(0, &[5, 2]), vec![0.0]);
    }
}
