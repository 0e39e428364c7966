use rand::Rng;

use super::{select_action, softmax, ActionMode, GruParams, GruScratch};
use crate::maze::{observe_with, Action, Episode, EpisodeLog, Maze, Position};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RolloutConfig {
    pub lifespan: usize,
    pub mode: ActionMode,
    pub goal_visible: bool,
}

impl RolloutConfig {
    pub fn greedy(lifespan: usize) -> Self {
        Self {
            lifespan,
            mode: ActionMode::Greedy,
            goal_visible: true,
        }
    }
}

/// Result of one lifespan.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub log: EpisodeLog,
    /// `hidden[t]` is the state entering step `t`; `lifespan + 1` entries.
    /// Empty when the trace was not requested.
    pub hidden: Vec<Vec<f64>>,
    /// `cells[t]` is the agent's cell entering step `t` (after any reset);
    /// `lifespan + 1` entries.
    pub cells: Vec<Position>,
}

/// Callbacks that may rewrite the hidden state during a rollout.
pub trait HiddenHook {
    /// Called once on the initial state, before step 0.
    fn at_start(&mut self, _h: &mut [f64]) {}
    /// Called after the GRU update of step `t`, before the action is chosen.
    fn after_update(&mut self, _t: usize, _h: &mut [f64]) {}
}

pub struct NoHook;

impl HiddenHook for NoHook {}

/// Plain rollout from a zero hidden state.
pub fn rollout<R: Rng + ?Sized>(params: &GruParams, maze: &Maze, config: RolloutConfig, rng: &mut R) -> Rollout {
    run_closed_loop(params, maze, config, None, &mut NoHook, true, rng)
}

/// Rollout from an explicit initial hidden state.
pub fn rollout_from<R: Rng + ?Sized>(
    params: &GruParams,
    maze: &Maze,
    config: RolloutConfig,
    h0: &[f64],
    rng: &mut R,
) -> Rollout {
    run_closed_loop(params, maze, config, Some(h0), &mut NoHook, true, rng)
}

/// The perception–action loop: observe, update the GRU, read out a
/// distribution, act, and reset position (never the hidden state) on
/// reaching the goal.
pub fn run_closed_loop<R: Rng + ?Sized, H: HiddenHook + ?Sized>(
    params: &GruParams,
    maze: &Maze,
    config: RolloutConfig,
    h0: Option<&[f64]>,
    hook: &mut H,
    record_trace: bool,
    rng: &mut R,
) -> Rollout {
    let n = params.hidden_size();
    let mut h = match h0 {
        Some(init) => {
            assert_eq!(init.len(), n, "initial hidden state has wrong length");
            init.to_vec()
        }
        None => vec![0.0; n],
    };
    hook.at_start(&mut h);

    let mut next = vec![0.0; n];
    let mut scratch = GruScratch::new(n);
    let mut episode = Episode::with_capacity(maze, config.lifespan);
    let (mut hidden, mut cells) = if record_trace {
        (Vec::with_capacity(config.lifespan + 1), Vec::with_capacity(config.lifespan + 1))
    } else {
        (Vec::new(), Vec::new())
    };
    if record_trace {
        hidden.push(h.clone());
        cells.push(episode.position());
    }

    for t in 0..config.lifespan {
        let obs = observe_with(maze, episode.position(), config.goal_visible);
        params.gru_step_one_hot(&h, &obs.active_indices(), &mut scratch, &mut next);
        std::mem::swap(&mut h, &mut next);
        hook.after_update(t, &mut h);

        let dist = softmax(&params.logits(&h));
        let a = select_action(&dist, config.mode, rng);
        episode.advance(Action::from_index(a).expect("four-action readout"));

        if record_trace {
            hidden.push(h.clone());
            cells.push(episode.position());
        }
    }

    Rollout {
        log: episode.into_log(),
        hidden,
        cells,
    }
}
