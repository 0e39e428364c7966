//! Hand-built mazes and agents with known behaviour.

use crate::maze::{Action, CellLabel, Maze, Position, LABEL_COUNT};
use crate::policy::{GruParams, NetDims};

/// Three free cells along the top row, start on the left, goal on the right.
/// Shortest path: 2 moves.
pub fn corridor() -> Maze {
    let mut obstacles = vec![true; 100];
    for cell in obstacles.iter_mut().take(3) {
        *cell = false;
    }
    Maze::from_grid(10, 10, obstacles, Position::new(0, 0), Position::new(2, 0), 0)
        .expect("corridor is a valid maze")
}

/// Memoryless agent: hidden unit `a` lights up when the goal is visible in
/// direction `a`, and the readout follows the lit unit, defaulting to RIGHT.
/// The update gate is saturated so `h' = tanh(W_h x)`.
pub fn goal_seeker(hidden: usize) -> GruParams {
    assert!(hidden >= 4, "goal seeker needs four hidden units");
    let mut p = GruParams::zeros(NetDims::maze(hidden));
    let d = p.dims().input;
    // Window slots of the four orthogonal neighbours, in action order.
    let slots = [1usize, 5, 7, 3];
    p.b_z.fill(40.0);
    for (a, &slot) in slots.iter().enumerate() {
        p.w_h[a * d + slot * LABEL_COUNT + CellLabel::Goal as usize] = 3.0;
        p.readout_w[a * hidden + a] = 10.0;
    }
    p.readout_b[Action::Right.index()] = 1.0;
    p
}
