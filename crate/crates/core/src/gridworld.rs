//! Four-rooms gridworlds and the tasks defined on them.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Outcome, TabularMdp};

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const N_MOVES: usize = 4;
pub const ACTION_NAMES: [&str; N_MOVES] = ["up", "down", "left", "right"];

const MOVES: [(isize, isize); N_MOVES] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

/// Serializable description of a gridworld. Cells are `[x, y]` with `y`
/// growing downwards; the outer boundary is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub walls: Vec<[usize; 2]>,
    /// Total probability of moving in one of the three unintended directions.
    pub slip: f64,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub gamma: f64,
}

impl GridSpec {
    /// Four-rooms layout: one vertical and one horizontal wall through the
    /// middle of the grid, with a doorway at the midpoint of each of the four
    /// wall segments.
    pub fn four_rooms(width: usize, height: usize, slip: f64, step_reward: f64, goal_reward: f64, gamma: f64) -> Result<Self> {
        if width < 5 || height < 5 {
            return Err(Error::InvalidGeometry { width, height });
        }
        let (wx, wy) = (width / 2, height / 2);
        let mid = |lo: usize, hi: usize| lo + (hi - lo) / 2;
        let doors = [
            [wx, mid(0, wy)],
            [wx, mid(wy + 1, height)],
            [mid(0, wx), wy],
            [mid(wx + 1, width), wy],
        ];
        let mut walls = Vec::new();
        for y in 0..height {
            for x in 0..width {
                if (x == wx || y == wy) && !doors.contains(&[x, y]) {
                    walls.push([x, y]);
                }
            }
        }
        Ok(Self {
            width,
            height,
            walls,
            slip,
            step_reward,
            goal_reward,
            gamma,
        })
    }
}

/// A gridworld with its cell/state bookkeeping and goal-free base dynamics.
#[derive(Debug, Clone)]
pub struct GridWorld {
    spec: GridSpec,
    state_of_cell: Vec<Option<usize>>,
    cell_of_state: Vec<[usize; 2]>,
    base: TabularMdp,
}

/// Builds the standard four-rooms gridworld.
pub fn build_four_rooms(width: usize, height: usize, slip: f64, step_reward: f64, goal_reward: f64, gamma: f64) -> Result<GridWorld> {
    GridWorld::new(GridSpec::four_rooms(width, height, slip, step_reward, goal_reward, gamma)?)
}

impl GridWorld {
    pub fn new(spec: GridSpec) -> Result<Self> {
        if spec.width == 0 || spec.height == 0 {
            return Err(Error::InvalidGeometry {
                width: spec.width,
                height: spec.height,
            });
        }
        if !(0.0..=1.0).contains(&spec.slip) {
            return Err(Error::InvalidMdp(format!("slip {} outside [0, 1]", spec.slip)));
        }
        let mut is_wall = vec![false; spec.width * spec.height];
        for &[x, y] in &spec.walls {
            if x >= spec.width || y >= spec.height {
                return Err(Error::InvalidMdp(format!("wall [{x}, {y}] outside the grid")));
            }
            is_wall[y * spec.width + x] = true;
        }
        let mut state_of_cell = vec![None; is_wall.len()];
        let mut cell_of_state = Vec::new();
        for (idx, _) in is_wall.iter().enumerate().filter(|(_, &w)| !w) {
            state_of_cell[idx] = Some(cell_of_state.len());
            cell_of_state.push([idx % spec.width, idx / spec.width]);
        }
        if cell_of_state.is_empty() {
            return Err(Error::InvalidMdp("grid has no free cells".into()));
        }
        let n = cell_of_state.len();
        let mut world = Self {
            spec,
            state_of_cell,
            cell_of_state,
            base: TabularMdp::new(1, 1, vec![vec![Outcome { next: 0, prob: 1.0, reward: 0.0 }]], 0.0, vec![1.0], vec![false])?,
        };
        world.base = world.build_mdp(None, vec![1.0 / n as f64; n])?;
        Ok(world)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn n_states(&self) -> usize {
        self.cell_of_state.len()
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    /// Dynamics without any goal: no terminal states, uniform start.
    pub fn base_mdp(&self) -> &TabularMdp {
        &self.base
    }

    pub fn state_at(&self, x: usize, y: usize) -> Option<usize> {
        if x >= self.spec.width || y >= self.spec.height {
            return None;
        }
        self.state_of_cell[y * self.spec.width + x]
    }

    pub fn cell_of(&self, s: usize) -> [usize; 2] {
        self.cell_of_state[s]
    }

    pub fn is_wall(&self, x: usize, y: usize) -> bool {
        self.state_at(x, y).is_none()
    }

    /// Cell reached by moving from `s` in direction `dir`, staying put when blocked.
    fn neighbour(&self, s: usize, dir: usize) -> usize {
        let [x, y] = self.cell_of_state[s];
        let (dx, dy) = MOVES[dir];
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        if nx < 0 || ny < 0 {
            return s;
        }
        self.state_at(nx as usize, ny as usize).unwrap_or(s)
    }

    fn build_mdp(&self, goal: Option<usize>, start_dist: Vec<f64>) -> Result<TabularMdp> {
        let n = self.n_states();
        let mut rows = Vec::with_capacity(n * N_MOVES);
        let mut terminal = vec![false; n];
        for s in 0..n {
            for a in 0..N_MOVES {
                if Some(s) == goal {
                    rows.push(vec![Outcome { next: s, prob: 1.0, reward: 0.0 }]);
                    continue;
                }
                let row = (0..N_MOVES)
                    .map(|dir| {
                        let prob = if dir == a { 1.0 - self.spec.slip } else { self.spec.slip / 3.0 };
                        let next = self.neighbour(s, dir);
                        let reward = if Some(next) == goal { self.spec.goal_reward } else { self.spec.step_reward };
                        Outcome { next, prob, reward }
                    })
                    .collect();
                rows.push(row);
            }
        }
        if let Some(g) = goal {
            terminal[g] = true;
        }
        TabularMdp::new(n, N_MOVES, rows, self.spec.gamma, start_dist, terminal)
    }

    /// Task with a point-mass start at `start` and an absorbing goal.
    pub fn task(&self, start: usize, goal: usize, task_id: impl Into<String>) -> Result<Task> {
        let n = self.n_states();
        if start >= n || goal >= n {
            return Err(Error::InvalidConfig(format!("start {start} / goal {goal} outside {n} states")));
        }
        if start == goal {
            return Err(Error::InvalidConfig("start and goal coincide".into()));
        }
        let mut d0 = vec![0.0; n];
        d0[start] = 1.0;
        Ok(Task {
            mdp: self.build_mdp(Some(goal), d0)?,
            start_state: start,
            goal_state: goal,
            task_id: task_id.into(),
        })
    }

    pub fn task_from_spec(&self, spec: &TaskSpec) -> Result<Task> {
        self.task(spec.start_state, spec.goal_state, spec.task_id.clone())
    }

    /// Uniformly samples distinct start and goal states.
    pub fn sample_task<R: Rng + ?Sized>(&self, rng: &mut R, task_id: impl Into<String>) -> Result<TaskSpec> {
        let n = self.n_states();
        if n < 2 {
            return Err(Error::InvalidConfig("need two free cells to place start and goal".into()));
        }
        let start = rng.random_range(0..n);
        let goal = loop {
            let g = rng.random_range(0..n);
            if g != start {
                break g;
            }
        };
        Ok(TaskSpec {
            task_id: task_id.into(),
            start_state: start,
            goal_state: goal,
            start_cell: self.cell_of(start),
            goal_cell: self.cell_of(goal),
        })
    }

    /// States reachable from `s` under the base dynamics.
    pub fn reachable_from(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.n_states()];
        let mut queue = VecDeque::from([s]);
        seen[s] = true;
        while let Some(u) = queue.pop_front() {
            for a in 0..N_MOVES {
                for o in self.base.outcomes(u, a) {
                    if !seen[o.next] {
                        seen[o.next] = true;
                        queue.push_back(o.next);
                    }
                }
            }
        }
        seen
    }
}

/// Serializable task description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub start_state: usize,
    pub goal_state: usize,
    pub start_cell: [usize; 2],
    pub goal_cell: [usize; 2],
}

/// A gridworld task: shared dynamics with its own start and absorbing goal.
#[derive(Debug, Clone)]
pub struct Task {
    pub mdp: TabularMdp,
    pub start_state: usize,
    pub goal_state: usize,
    pub task_id: String,
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::mdp::sample_step;

    #[test]
    fn too_small_is_rejected() {
        assert!(matches!(
            build_four_rooms(4, 10, 0.1, -1.0, 10.0, 0.99),
            Err(Error::InvalidGeometry { width: 4, height: 10 })
        ));
    }

    #[test]
    fn interior_row_splits_slip_evenly() {
        let world = build_four_rooms(10, 10, 0.1, -1.0, 10.0, 0.99).unwrap();
        let s = world.state_at(2, 2).unwrap();
        let mdp = world.base_mdp();
        for a in 0..N_MOVES {
            let row = mdp.dense_row(s, a);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for dir in 0..N_MOVES {
                let expected = if dir == a { 0.9 } else { 0.1 / 3.0 };
                assert!((row[world.neighbour(s, dir)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_variant_is_one_hot() {
        let world = build_four_rooms(10, 15, 0.0, -1.0, 10.0, 0.99).unwrap();
        let mdp = world.base_mdp();
        for s in 0..mdp.n_states() {
            for a in 0..N_MOVES {
                assert_eq!(mdp.outcomes(s, a).len(), 1);
            }
        }
    }

    #[test]
    fn walls_block_movement() {
        let world = build_four_rooms(10, 10, 0.0, -1.0, 10.0, 0.99).unwrap();
        // (4, 1) sits left of the vertical wall at x = 5, which has doors at y = 2 and y = 8
        let s = world.state_at(4, 1).unwrap();
        assert!(world.is_wall(5, 1));
        assert_eq!(world.neighbour(s, RIGHT), s);
        let corner = world.state_at(0, 0).unwrap();
        assert_eq!(world.neighbour(corner, UP), corner);
        assert_eq!(world.neighbour(corner, LEFT), corner);
    }

    #[test]
    fn every_free_cell_is_reachable() {
        for (w, h) in [(5, 5), (10, 10), (11, 7), (20, 20), (40, 40)] {
            let world = build_four_rooms(w, h, 0.1, -1.0, 10.0, 0.99).unwrap();
            for s in [0, world.n_states() / 2, world.n_states() - 1] {
                assert!(world.reachable_from(s).iter().all(|&r| r), "{w}x{h} from {s}");
            }
        }
    }

    #[test]
    fn goal_is_absorbing_and_pays_on_entry() {
        let world = build_four_rooms(10, 10, 0.0, -1.0, 10.0, 0.99).unwrap();
        let start = world.state_at(0, 0).unwrap();
        let goal = world.state_at(1, 0).unwrap();
        let task = world.task(start, goal, "t").unwrap();
        assert!(task.mdp.is_terminal(goal));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_step(&task.mdp, start, RIGHT, &mut rng).unwrap(), (goal, 10.0));
        assert_eq!(sample_step(&task.mdp, start, DOWN, &mut rng).unwrap().1, -1.0);
        assert!(sample_step(&task.mdp, goal, UP, &mut rng).is_err());
        assert_eq!(task.mdp.start_dist()[start], 1.0);
    }

    #[test]
    fn sampled_tasks_are_reproducible_and_distinct() {
        let world = build_four_rooms(20, 20, 0.1, -1.0, 10.0, 0.99).unwrap();
        let mut seen = std::collections::HashSet::new();
        for seed in 0..30 {
            let a = world.sample_task(&mut ChaCha8Rng::seed_from_u64(seed), "t").unwrap();
            let b = world.sample_task(&mut ChaCha8Rng::seed_from_u64(seed), "t").unwrap();
            assert_eq!(a, b);
            assert_ne!(a.start_state, a.goal_state);
            seen.insert((a.start_state, a.goal_state));
        }
        assert_eq!(seen.len(), 30);
    }

    #[test]
    fn start_equal_goal_is_rejected() {
        let world = build_four_rooms(6, 6, 0.1, -1.0, 10.0, 0.99).unwrap();
        assert!(world.task(3, 3, "x").is_err());
    }
}
