//! Procedural mazes, the 3×3 local sensor and discrete move dynamics.
//!
//! A maze is a `width × height` occupancy grid whose free cells form exactly
//! one 4-connected region. Row 0 is the top row; `Action::Up` decreases `y`.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_SIZE: usize = 10;
pub const DEFAULT_DENSITY: f64 = 0.30;
pub const DEFAULT_MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Position {
    pub x: usize,
    pub y: usize,
}

impl Position {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up = 0,
    Right = 1,
    Down = 2,
    Left = 3,
}

impl Action {
    pub const COUNT: usize = 4;
    pub const ALL: [Action; 4] = [Action::Up, Action::Right, Action::Down, Action::Left];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (0, -1),
            Action::Right => (1, 0),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Maze {
    width: usize,
    height: usize,
    /// `true` marks an obstacle. Row-major.
    obstacles: Vec<bool>,
    start: Position,
    goal: Position,
    seed: u64,
}

impl Maze {
    /// Builds a maze from an explicit grid, checking every maze invariant.
    pub fn from_grid(
        width: usize,
        height: usize,
        obstacles: Vec<bool>,
        start: Position,
        goal: Position,
        seed: u64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("maze must be non-empty".into()));
        }
        if obstacles.len() != width * height {
            return Err(Error::DimMismatch(format!(
                "grid has {} cells, expected {}x{}",
                obstacles.len(),
                width,
                height
            )));
        }
        let maze = Self {
            width,
            height,
            obstacles,
            start,
            goal,
            seed,
        };
        for (name, p) in [("start", start), ("goal", goal)] {
            if !maze.in_bounds(p) {
                return Err(Error::InvalidArgument(format!("{name} {p:?} outside grid")));
            }
            if maze.is_obstacle(p) {
                return Err(Error::InvalidArgument(format!("{name} {p:?} is an obstacle")));
            }
        }
        if start == goal {
            return Err(Error::InvalidArgument("start and goal coincide".into()));
        }
        let components = count_free_components(width, height, &maze.obstacles);
        if components != 1 {
            return Err(Error::InvalidArgument(format!(
                "free cells form {components} components, expected 1"
            )));
        }
        Ok(maze)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn start(&self) -> Position {
        self.start
    }

    pub fn goal(&self) -> Position {
        self.goal
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn obstacles(&self) -> &[bool] {
        &self.obstacles
    }

    pub fn in_bounds(&self, p: Position) -> bool {
        p.x < self.width && p.y < self.height
    }

    pub fn is_obstacle(&self, p: Position) -> bool {
        self.obstacles[p.y * self.width + p.x]
    }

    pub fn obstacle_count(&self) -> usize {
        self.obstacles.iter().filter(|&&o| o).count()
    }

    /// Neighbor in direction `action`, or `None` when it falls off the grid.
    pub fn neighbor(&self, p: Position, action: Action) -> Option<Position> {
        let (dx, dy) = action.delta();
        let x = p.x.checked_add_signed(dx)?;
        let y = p.y.checked_add_signed(dy)?;
        let q = Position::new(x, y);
        self.in_bounds(q).then_some(q)
    }

    /// Breadth-first shortest path length from start to goal in moves.
    pub fn shortest_path_len(&self) -> usize {
        shortest_path(self, self.start, self.goal).expect("maze invariants guarantee a path")
    }

    /// Writes the `maze v1` text format.
    pub fn to_text(&self) -> String {
        let mut out = format!("maze v1 {} {} {}\n", self.width, self.height, self.seed);
        for y in 0..self.height {
            for x in 0..self.width {
                let p = Position::new(x, y);
                let c = if p == self.start {
                    'S'
                } else if p == self.goal {
                    'G'
                } else if self.is_obstacle(p) {
                    '#'
                } else {
                    '.'
                };
                out.push(c);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, source_name: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(source_name, 1, "empty maze file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "maze" || fields[1] != "v1" {
            return Err(Error::parse(source_name, 1, "expected `maze v1 <width> <height> <seed>`"));
        }
        let num = |s: &str| -> Result<u64> {
            s.parse()
                .map_err(|_| Error::parse(source_name, 1, format!("bad number `{s}`")))
        };
        let width = num(fields[2])? as usize;
        let height = num(fields[3])? as usize;
        let seed = num(fields[4])?;

        let mut obstacles = Vec::with_capacity(width * height);
        let (mut start, mut goal) = (None, None);
        for y in 0..height {
            let line = lines
                .next()
                .ok_or_else(|| Error::parse(source_name, y + 2, "missing maze row"))?;
            let chars: Vec<char> = line.chars().collect();
            if chars.len() != width {
                return Err(Error::parse(
                    source_name,
                    y + 2,
                    format!("row has {} cells, expected {width}", chars.len()),
                ));
            }
            for (x, c) in chars.into_iter().enumerate() {
                let p = Position::new(x, y);
                match c {
                    '.' => obstacles.push(false),
                    '#' => obstacles.push(true),
                    'S' if start.is_none() => {
                        start = Some(p);
                        obstacles.push(false);
                    }
                    'G' if goal.is_none() => {
                        goal = Some(p);
                        obstacles.push(false);
                    }
                    other => {
                        return Err(Error::parse(
                            source_name,
                            y + 2,
                            format!("unexpected cell `{other}`"),
                        ))
                    }
                }
            }
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::parse(source_name, height + 2, "trailing content after grid"));
        }
        let start = start.ok_or_else(|| Error::parse(source_name, 1, "no start cell"))?;
        let goal = goal.ok_or_else(|| Error::parse(source_name, 1, "no goal cell"))?;
        Maze::from_grid(width, height, obstacles, start, goal, seed).map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::parse(source_name, 1, msg),
            other => other,
        })
    }
}

/// Number of 4-connected regions of free cells.
pub fn count_free_components(width: usize, height: usize, obstacles: &[bool]) -> usize {
    assert_eq!(obstacles.len(), width * height, "grid size mismatch");
    let mut seen = vec![false; obstacles.len()];
    let mut stack = Vec::new();
    let mut components = 0;
    for origin in 0..obstacles.len() {
        if obstacles[origin] || seen[origin] {
            continue;
        }
        components += 1;
        seen[origin] = true;
        stack.push(origin);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % width, i / width);
            let mut visit = |j: usize| {
                if !obstacles[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
    }
    components
}

/// Samples a maze: start and goal are distinct uniform cells, every other
/// cell is an obstacle with probability `density`. Layouts whose free cells
/// are not one region are redrawn from the same stream.
pub fn generate_maze(seed: u64, density: f64, max_attempts: usize) -> Result<Maze> {
    generate_maze_sized(DEFAULT_SIZE, DEFAULT_SIZE, seed, density, max_attempts)
}

pub fn generate_maze_sized(
    width: usize,
    height: usize,
    seed: u64,
    density: f64,
    max_attempts: usize,
) -> Result<Maze> {
    if !(0.0..1.0).contains(&density) {
        return Err(Error::InvalidArgument(format!("density {density} not in [0, 1)")));
    }
    if max_attempts == 0 {
        return Err(Error::InvalidArgument("max_attempts must be >= 1".into()));
    }
    let cells = width * height;
    if cells < 2 {
        return Err(Error::InvalidArgument("maze needs at least two cells".into()));
    }
    let mut rng = rng::seeded(seed);
    for _ in 0..max_attempts {
        let s = rng.random_range(0..cells);
        let mut g = rng.random_range(0..cells - 1);
        if g >= s {
            g += 1;
        }
        let obstacles: Vec<bool> = (0..cells)
            .map(|i| {
                let draw = rng.random::<f64>() < density;
                draw && i != s && i != g
            })
            .collect();
        if count_free_components(width, height, &obstacles) == 1 {
            return Ok(Maze {
                width,
                height,
                obstacles,
                start: Position::new(s % width, s / width),
                goal: Position::new(g % width, g / width),
                seed,
            });
        }
    }
    Err(Error::AttemptsExhausted {
        attempts: max_attempts,
        density,
    })
}

fn shortest_path(maze: &Maze, from: Position, to: Position) -> Option<usize> {
    let mut dist = vec![usize::MAX; maze.width * maze.height];
    let idx = |p: Position| p.y * maze.width + p.x;
    let mut queue = VecDeque::from([from]);
    dist[idx(from)] = 0;
    while let Some(p) = queue.pop_front() {
        if p == to {
            return Some(dist[idx(p)]);
        }
        for a in Action::ALL {
            if let Some(q) = maze.neighbor(p, a) {
                if !maze.is_obstacle(q) && dist[idx(q)] == usize::MAX {
                    dist[idx(q)] = dist[idx(p)] + 1;
                    queue.push_back(q);
                }
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellLabel {
    Free = 0,
    Obstacle = 1,
    OutOfBounds = 2,
    Goal = 3,
}

pub const LABEL_COUNT: usize = 4;
pub const WINDOW_CELLS: usize = 9;
/// Length of the one-hot observation vector.
pub const OBSERVATION_DIM: usize = WINDOW_CELLS * LABEL_COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Observation {
    /// Row-major 3×3 window; index 4 is the agent's own cell.
    pub cells: [CellLabel; WINDOW_CELLS],
}

impl Observation {
    pub fn encode(&self) -> [f64; OBSERVATION_DIM] {
        let mut out = [0.0; OBSERVATION_DIM];
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut [f64]) {
        out[..OBSERVATION_DIM].fill(0.0);
        for (i, &label) in self.cells.iter().enumerate() {
            out[i * LABEL_COUNT + label as usize] = 1.0;
        }
    }

    /// Indices of the ones in [`Observation::encode`].
    pub fn active_indices(&self) -> [usize; WINDOW_CELLS] {
        std::array::from_fn(|i| i * LABEL_COUNT + self.cells[i] as usize)
    }
}

/// Local 3×3 view with the goal visible.
pub fn observe(maze: &Maze, pos: Position) -> Observation {
    observe_with(maze, pos, true)
}

/// Local 3×3 view; with `goal_visible == false` the goal reads as free.
pub fn observe_with(maze: &Maze, pos: Position, goal_visible: bool) -> Observation {
    let mut cells = [CellLabel::Free; WINDOW_CELLS];
    for (k, cell) in cells.iter_mut().enumerate() {
        let dx = (k % 3) as isize - 1;
        let dy = (k / 3) as isize - 1;
        let x = pos.x.checked_add_signed(dx);
        let y = pos.y.checked_add_signed(dy);
        *cell = match (x, y) {
            (Some(x), Some(y)) if x < maze.width && y < maze.height => {
                let p = Position::new(x, y);
                if maze.is_obstacle(p) {
                    CellLabel::Obstacle
                } else if goal_visible && p == maze.goal {
                    CellLabel::Goal
                } else {
                    CellLabel::Free
                }
            }
            _ => CellLabel::OutOfBounds,
        };
    }
    Observation { cells }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub new_position: Position,
    pub moved: bool,
    pub reached_goal: bool,
}

/// One move. Blocked and off-grid moves leave the agent in place but still
/// cost a time step.
pub fn step(maze: &Maze, pos: Position, action: Action) -> StepOutcome {
    let target = maze
        .neighbor(pos, action)
        .filter(|&q| !maze.is_obstacle(q));
    let new_position = target.unwrap_or(pos);
    StepOutcome {
        new_position,
        moved: target.is_some(),
        reached_goal: new_position == maze.goal,
    }
}

/// Per-step record of one lifespan in one maze.
///
/// `positions[t]` is where the agent stood right after step `t`, before any
/// goal reset, so every trial boundary points at the goal cell.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EpisodeLog {
    pub positions: Vec<Position>,
    pub actions: Vec<Action>,
    pub reached: Vec<bool>,
    pub trial_boundaries: Vec<usize>,
}

impl EpisodeLog {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    /// Step counts of each completed trial, in order.
    pub fn trial_lengths(&self) -> Vec<usize> {
        let mut prev_end = 0;
        self.trial_boundaries
            .iter()
            .map(|&b| {
                let len = b + 1 - prev_end;
                prev_end = b + 1;
                len
            })
            .collect()
    }

    pub fn final_path_length(&self) -> Option<usize> {
        self.trial_lengths().last().copied()
    }

    /// Steps taken after the last completed trial.
    pub fn residual_steps(&self) -> usize {
        self.steps() - self.trial_boundaries.last().map_or(0, |&b| b + 1)
    }

    /// Cell sequences of each completed trial, starting at `start` and ending at the goal.
    pub fn trial_paths(&self, start: Position) -> Vec<Vec<Position>> {
        let mut prev_end = 0;
        self.trial_boundaries
            .iter()
            .map(|&b| {
                let mut path = Vec::with_capacity(b + 2 - prev_end);
                path.push(start);
                path.extend_from_slice(&self.positions[prev_end..=b]);
                prev_end = b + 1;
                path
            })
            .collect()
    }

    /// CSV with columns `step,x,y,action,reached_goal`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,x,y,action,reached_goal")?;
        for (t, ((p, a), r)) in self
            .positions
            .iter()
            .zip(&self.actions)
            .zip(&self.reached)
            .enumerate()
        {
            writeln!(w, "{t},{},{},{},{}", p.x, p.y, a.index(), u8::from(*r))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, source_name: &str) -> Result<Self> {
        let mut log = EpisodeLog::default();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "step,x,y,action,reached_goal" {
                    return Err(Error::parse(source_name, 1, "unexpected episode header"));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::parse(source_name, i + 1, msg.to_string());
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let n = |s: &str| s.trim().parse::<usize>().map_err(|_| bad("bad integer"));
            if n(f[0])? != log.steps() {
                return Err(bad("step column out of sequence"));
            }
            let p = Position::new(n(f[1])?, n(f[2])?);
            let a = Action::from_index(n(f[3])?).ok_or_else(|| bad("bad action id"))?;
            let reached = match f[4].trim() {
                "0" => false,
                "1" => true,
                _ => return Err(bad("reached_goal must be 0 or 1")),
            };
            if reached {
                log.trial_boundaries.push(log.steps());
            }
            log.positions.push(p);
            log.actions.push(a);
            log.reached.push(reached);
        }
        Ok(log)
    }
}

/// Mutable state of one lifespan: current position plus the growing log.
/// Hidden state is deliberately not part of this type.
#[derive(Debug, Clone)]
pub struct Episode<'m> {
    maze: &'m Maze,
    position: Position,
    log: EpisodeLog,
}

impl<'m> Episode<'m> {
    pub fn new(maze: &'m Maze) -> Self {
        Self {
            maze,
            position: maze.start,
            log: EpisodeLog::default(),
        }
    }

    pub fn with_capacity(maze: &'m Maze, steps: usize) -> Self {
        let mut ep = Self::new(maze);
        ep.log.positions.reserve(steps);
        ep.log.actions.reserve(steps);
        ep.log.reached.reserve(steps);
        ep
    }

    pub fn position(&self) -> Position {
        self.position
    }

    /// Applies `action`, logs it, and performs the goal reset when the goal
    /// is reached.
    pub fn advance(&mut self, action: Action) -> StepOutcome {
        let outcome = step(self.maze, self.position, action);
        self.log.positions.push(outcome.new_position);
        self.log.actions.push(action);
        self.log.reached.push(outcome.reached_goal);
        self.position = outcome.new_position;
        if outcome.reached_goal {
            self.goal_reset();
        }
        outcome
    }

    /// Sends the agent back to start and closes the current trial.
    pub fn goal_reset(&mut self) {
        let t = self.log.steps().checked_sub(1).expect("reset before any step");
        debug_assert_eq!(self.log.positions[t], self.maze.goal);
        self.log.trial_boundaries.push(t);
        self.position = self.maze.start;
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn into_log(self) -> EpisodeLog {
        self.log
    }
}

/// Renders a grid with an optional path overlay, for debugging.
pub fn render(maze: &Maze, path: &[Position]) -> String {
    let mut out = String::new();
    for y in 0..maze.height {
        for x in 0..maze.width {
            let p = Position::new(x, y);
            let c = if p == maze.start {
                'S'
            } else if p == maze.goal {
                'G'
            } else if maze.is_obstacle(p) {
                '#'
            } else if path.contains(&p) {
                '*'
            } else {
                '.'
            };
            out.push(c);
        }
        let _ = writeln!(out);
    }
    out
}
