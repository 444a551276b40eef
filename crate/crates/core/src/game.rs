//! Two-player tabular stochastic games with a shared reward, and the
//! corner-meeting grid world compiled into that form.
//!
//! Joint states are dense indices. For a grid world with `n = width * height`
//! cells, the state for agent positions `(p1, p2)` is `cell(p1) * n + cell(p2)`
//! and the absorbing terminal state is `n * n`.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(row, col)`; row 0 is the top of the grid.
pub type Cell = (usize, usize);

pub const NUM_ACTIONS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Self::ALL.get(index).copied()
    }
}

/// An enumerated two-player game with deterministic transitions and a reward
/// shared by both agents.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularSG {
    num_states: usize,
    num_actions: usize,
    // Indexed by (state * A + a1) * A + a2.
    next: Vec<usize>,
    reward: Vec<f64>,
    initial_state: usize,
    terminal_state: usize,
    horizon: usize,
    discount: f64,
}

impl TabularSG {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        next: Vec<usize>,
        reward: Vec<f64>,
        initial_state: usize,
        terminal_state: usize,
        horizon: usize,
        discount: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::config("num_states", "state and action counts must be positive"));
        }
        validate_horizon_discount(horizon, discount)?;
        let table = num_states * num_actions * num_actions;
        if next.len() != table || reward.len() != table {
            return Err(Error::DimensionMismatch(format!(
                "transition/reward tables have {}/{} entries, expected {table}",
                next.len(),
                reward.len()
            )));
        }
        for (what, index) in [("initial_state", initial_state), ("terminal_state", terminal_state)] {
            if index >= num_states {
                return Err(Error::InvalidIndex {
                    what,
                    index,
                    limit: num_states,
                });
            }
        }
        if let Some(&bad) = next.iter().find(|&&s| s >= num_states) {
            return Err(Error::InvalidIndex {
                what: "transition target",
                index: bad,
                limit: num_states,
            });
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("reward table".into()));
        }
        let sg = TabularSG {
            num_states,
            num_actions,
            next,
            reward,
            initial_state,
            terminal_state,
            horizon,
            discount,
        };
        for a1 in 0..num_actions {
            for a2 in 0..num_actions {
                let k = sg.slot(terminal_state, a1, a2);
                if sg.next[k] != terminal_state || sg.reward[k] != 0.0 {
                    return Err(Error::config(
                        "terminal_state",
                        "terminal state must be absorbing with zero reward",
                    ));
                }
            }
        }
        Ok(sg)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn terminal_state(&self) -> usize {
        self.terminal_state
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    #[inline]
    pub(crate) fn slot(&self, state: usize, a1: usize, a2: usize) -> usize {
        (state * self.num_actions + a1) * self.num_actions + a2
    }

    /// Successor and reward, without bounds checks beyond slice indexing.
    #[inline]
    pub(crate) fn transition(&self, state: usize, a1: usize, a2: usize) -> (usize, f64) {
        let k = self.slot(state, a1, a2);
        (self.next[k], self.reward[k])
    }

    pub fn step(&self, state: usize, action1: usize, action2: usize) -> Result<(usize, f64)> {
        if state >= self.num_states {
            return Err(Error::InvalidIndex {
                what: "state",
                index: state,
                limit: self.num_states,
            });
        }
        for (what, a) in [("action1", action1), ("action2", action2)] {
            if a >= self.num_actions {
                return Err(Error::InvalidIndex {
                    what,
                    index: a,
                    limit: self.num_actions,
                });
            }
        }
        Ok(self.transition(state, action1, action2))
    }

    /// Same dynamics with every reward replaced by `f(reward)`. The terminal
    /// state keeps its zero reward.
    pub fn map_rewards(&self, f: impl Fn(f64) -> f64) -> Result<TabularSG> {
        let mut reward: Vec<f64> = self.reward.iter().map(|&r| f(r)).collect();
        for a1 in 0..self.num_actions {
            for a2 in 0..self.num_actions {
                reward[self.slot(self.terminal_state, a1, a2)] = 0.0;
            }
        }
        TabularSG::new(
            self.num_states,
            self.num_actions,
            self.next.clone(),
            reward,
            self.initial_state,
            self.terminal_state,
            self.horizon,
            self.discount,
        )
    }
}

fn validate_horizon_discount(horizon: usize, discount: f64) -> Result<()> {
    if horizon == 0 {
        return Err(Error::config("horizon", "must be at least 1"));
    }
    if !(discount > 0.0 && discount <= 1.0) {
        return Err(Error::config("discount", format!("must lie in (0, 1], got {discount}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridWorldSpec {
    pub width: usize,
    pub height: usize,
    pub start: Cell,
    pub goal_cells: Vec<Cell>,
}

impl Default for GridWorldSpec {
    fn default() -> Self {
        GridWorldSpec {
            width: 5,
            height: 5,
            start: (2, 2),
            goal_cells: vec![(0, 0), (4, 4)],
        }
    }
}

impl GridWorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("env.width", "grid dimensions must be positive"));
        }
        if !self.contains(self.start) {
            return Err(Error::config(
                "env.start",
                format!("{:?} lies outside the {}x{} grid", self.start, self.height, self.width),
            ));
        }
        if self.goal_cells.is_empty() {
            return Err(Error::config("env.goal_cells", "at least one goal cell is required"));
        }
        if let Some(bad) = self.goal_cells.iter().find(|&&c| !self.contains(c)) {
            return Err(Error::config(
                "env.goal_cells",
                format!("{bad:?} lies outside the {}x{} grid", self.height, self.width),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, (row, col): Cell) -> bool {
        row < self.height && col < self.width
    }

    pub fn is_goal(&self, cell: Cell) -> bool {
        self.goal_cells.contains(&cell)
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    /// Moves one cell in `action`'s direction, clipping at the border.
    pub fn move_cell(&self, (row, col): Cell, action: Action) -> Cell {
        match action {
            Action::Up => (row.saturating_sub(1), col),
            Action::Down => ((row + 1).min(self.height - 1), col),
            Action::Left => (row, col.saturating_sub(1)),
            Action::Right => (row, (col + 1).min(self.width - 1)),
        }
    }
}

/// A compiled grid world: the tabular game plus the layout needed to map
/// joint states back to positions.
#[derive(Clone, Debug, PartialEq)]
pub struct GridWorld {
    spec: GridWorldSpec,
    sg: TabularSG,
}

impl GridWorld {
    pub fn spec(&self) -> &GridWorldSpec {
        &self.spec
    }

    pub fn sg(&self) -> &TabularSG {
        &self.sg
    }

    pub fn into_sg(self) -> TabularSG {
        self.sg
    }

    fn cell_index(&self, (row, col): Cell) -> usize {
        row * self.spec.width + col
    }

    fn cell_at(&self, index: usize) -> Cell {
        (index / self.spec.width, index % self.spec.width)
    }

    pub fn encode(&self, agent1: Cell, agent2: Cell) -> Result<usize> {
        for cell in [agent1, agent2] {
            if !self.spec.contains(cell) {
                return Err(Error::InvalidIndex {
                    what: "cell",
                    index: self.cell_index(cell),
                    limit: self.spec.num_cells(),
                });
            }
        }
        Ok(self.cell_index(agent1) * self.spec.num_cells() + self.cell_index(agent2))
    }

    /// Agent positions for a joint state; `None` for the terminal state.
    pub fn decode(&self, state: usize) -> Option<(Cell, Cell)> {
        let n = self.spec.num_cells();
        (state < n * n).then(|| (self.cell_at(state / n), self.cell_at(state % n)))
    }
}

impl Deref for GridWorld {
    type Target = TabularSG;

    fn deref(&self) -> &TabularSG {
        &self.sg
    }
}

/// Compiles the grid world: both agents move simultaneously, moves off the
/// grid clip, and arriving together on a goal cell pays 1 and terminates.
pub fn build_gridworld(spec: &GridWorldSpec, horizon: usize, discount: f64) -> Result<GridWorld> {
    spec.validate()?;
    validate_horizon_discount(horizon, discount)?;

    let n = spec.num_cells();
    let terminal = n * n;
    let num_states = terminal + 1;
    let a = NUM_ACTIONS;
    let mut next = vec![terminal; num_states * a * a];
    let mut reward = vec![0.0; num_states * a * a];

    let cells: Vec<Cell> = (0..n).map(|i| (i / spec.width, i % spec.width)).collect();
    for (i1, &c1) in cells.iter().enumerate() {
        for (i2, &c2) in cells.iter().enumerate() {
            let state = i1 * n + i2;
            for act1 in Action::ALL {
                let m1 = spec.move_cell(c1, act1);
                for act2 in Action::ALL {
                    let m2 = spec.move_cell(c2, act2);
                    let k = (state * a + act1.index()) * a + act2.index();
                    if m1 == m2 && spec.is_goal(m1) {
                        reward[k] = 1.0;
                    } else {
                        next[k] = (m1.0 * spec.width + m1.1) * n + m2.0 * spec.width + m2.1;
                    }
                }
            }
        }
    }

    let initial = {
        let s = spec.start.0 * spec.width + spec.start.1;
        s * n + s
    };
    let sg = TabularSG::new(num_states, a, next, reward, initial, terminal, horizon, discount)?;
    Ok(GridWorld {
        spec: spec.clone(),
        sg,
    })
}
