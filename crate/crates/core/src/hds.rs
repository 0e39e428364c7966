//! The agent and its maze as one closed hybrid system: discrete position
//! `q` and continuous hidden state `h` evolving together. Tools here record
//! joint trajectories, find limit cycles, estimate Lyapunov exponents and
//! drive the network open-loop with a recorded cycle.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::maze::{observe_with, step, Action, EpisodeLog, Maze, Position};
use crate::policy::{run_closed_loop, softmax, GruParams, GruScratch, NoHook, RolloutConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub q: Position,
    pub h: Vec<f64>,
}

/// Joint trajectory of one greedy lifespan. `states[t]` is the pair entering
/// step `t`, so `states.len() == actions.len() + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridTrace {
    pub states: Vec<HybridState>,
    pub actions: Vec<Action>,
    pub log: EpisodeLog,
}

impl HybridTrace {
    /// `t,x,y,action,h_0..h_{H-1}`; the final state has an empty action.
    pub fn to_csv(&self) -> String {
        let hidden = self.states.first().map_or(0, |s| s.h.len());
        let mut out = String::from("t,x,y,action");
        for i in 0..hidden {
            let _ = write!(out, ",h_{i}");
        }
        out.push('\n');
        for (t, s) in self.states.iter().enumerate() {
            let _ = write!(out, "{t},{},{},", s.q.x, s.q.y);
            if let Some(a) = self.actions.get(t) {
                let _ = write!(out, "{}", a.index());
            }
            for v in &s.h {
                let _ = write!(out, ",{v:e}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn record_hybrid_trace<R: Rng + ?Sized>(
    params: &GruParams,
    maze: &Maze,
    config: RolloutConfig,
    h0: Option<&[f64]>,
    rng: &mut R,
) -> HybridTrace {
    let r = run_closed_loop(params, maze, config, h0, &mut NoHook, true, rng);
    let states = r
        .cells
        .into_iter()
        .zip(r.hidden)
        .map(|(q, h)| HybridState { q, h })
        .collect();
    HybridTrace {
        states,
        actions: r.log.actions.clone(),
        log: r.log,
    }
}

/// `sqrt(s²·‖Δq‖² + ‖Δh‖²)` with `q` in cell units.
pub fn joint_distance(a: &HybridState, b: &HybridState, position_scale: f64) -> f64 {
    let dx = a.q.x as f64 - b.q.x as f64;
    let dy = a.q.y as f64 - b.q.y as f64;
    let dh: f64 = a.h.iter().zip(&b.h).map(|(x, y)| (x - y) * (x - y)).sum();
    (position_scale * position_scale * (dx * dx + dy * dy) + dh).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleConfig {
    pub epsilon: f64,
    pub min_reps: usize,
    pub t_max: usize,
    pub position_scale: f64,
}

impl CycleConfig {
    /// `ε = 1e-3·√H`, two repetitions, `T_max` four times the shortest path
    /// when it is known and a quarter of the lifespan otherwise, capped so
    /// two periods fit in one lifespan.
    pub fn for_agent(hidden: usize, lifespan: usize, shortest: Option<usize>) -> Self {
        Self {
            epsilon: 1e-3 * (hidden as f64).sqrt(),
            min_reps: 2,
            t_max: shortest.map_or(lifespan / 4, |s| 4 * s).clamp(1, (lifespan / 2).max(1)),
            position_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitCycle {
    pub period: usize,
    pub anchor: usize,
    pub repetitions: usize,
    pub max_residual: f64,
}

impl LimitCycle {
    pub fn report(&self) -> String {
        format!(
            "{{T: {}, anchor: {}, repetitions: {}, max_residual: {:e}}}\n",
            self.period, self.anchor, self.repetitions, self.max_residual
        )
    }
}

/// Smallest period `T ≤ t_max` for which `min_reps` consecutive windows of
/// length `T` repeat within `ε` at every step: `d(s_t, s_{t+T}) ≤ ε` for all
/// `t` in `[t0, t0 + (min_reps − 1)·T)`. The earliest such `t0` is the
/// anchor; repetitions count how far the run extends past the minimum.
pub fn detect_limit_cycle(states: &[HybridState], config: &CycleConfig) -> Result<Option<LimitCycle>> {
    if config.t_max == 0 || config.min_reps < 2 {
        return Err(Error::InvalidArgument("cycle detection needs t_max >= 1 and min_reps >= 2".into()));
    }
    if states.len() <= 2 * config.t_max {
        return Err(Error::InvalidArgument(format!(
            "trace of length {} is too short for t_max {}",
            states.len(),
            config.t_max
        )));
    }
    let n = states.len();
    for period in 1..=config.t_max {
        let need = (config.min_reps - 1) * period;
        if need + period > n {
            break;
        }
        let residual: Vec<f64> = (0..n - period)
            .map(|t| joint_distance(&states[t], &states[t + period], config.position_scale))
            .collect();
        let mut run = 0;
        for (t, &d) in residual.iter().enumerate() {
            if d <= config.epsilon {
                run += 1;
            } else {
                run = 0;
                continue;
            }
            if run == need {
                let anchor = t + 1 - need;
                let mut end = t + 1;
                while end < residual.len() && residual[end] <= config.epsilon {
                    end += 1;
                }
                let matched = end - anchor;
                let repetitions = matched / period + 1;
                let used = (repetitions - 1) * period;
                let max_residual = residual[anchor..anchor + used].iter().copied().fold(0.0, f64::max);
                return Ok(Some(LimitCycle {
                    period,
                    anchor,
                    repetitions,
                    max_residual,
                }));
            }
        }
    }
    Ok(None)
}

/// A deterministic closed-loop map on hybrid states. The maze-driven agent
/// is one instance; synthetic maps make analytic checks possible.
pub trait ClosedLoopSystem: Sync {
    fn step(&self, state: &HybridState) -> HybridState;

    /// Also reports the action taken, where the system has one.
    fn step_with_action(&self, state: &HybridState) -> (HybridState, Option<Action>) {
        (self.step(state), None)
    }
}

/// Greedy agent in a maze, with goal reset.
pub struct MazeSystem<'a> {
    pub params: &'a GruParams,
    pub maze: &'a Maze,
    pub goal_visible: bool,
}

impl ClosedLoopSystem for MazeSystem<'_> {
    fn step(&self, state: &HybridState) -> HybridState {
        self.step_with_action(state).0
    }

    fn step_with_action(&self, state: &HybridState) -> (HybridState, Option<Action>) {
        let n = self.params.hidden_size();
        let mut scratch = GruScratch::new(n);
        let mut h = vec![0.0; n];
        let obs = observe_with(self.maze, state.q, self.goal_visible);
        self.params.gru_step_one_hot(&state.h, &obs.active_indices(), &mut scratch, &mut h);
        let a = Action::from_index(softmax(&self.params.logits(&h)).argmax()).expect("four actions");
        let out = step(self.maze, state.q, a);
        let q = if out.reached_goal { self.maze.start() } else { out.new_position };
        (HybridState { q, h }, Some(a))
    }
}

/// `h → factor·h`, position fixed.
pub struct LinearSystem {
    pub factor: f64,
}

impl ClosedLoopSystem for LinearSystem {
    fn step(&self, state: &HybridState) -> HybridState {
        HybridState {
            q: state.q,
            h: state.h.iter().map(|v| self.factor * v).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovConfig {
    pub epsilon_pert: f64,
    pub horizon: usize,
    pub samples: usize,
    pub floor: f64,
    pub ceiling: Option<f64>,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            epsilon_pert: 0.01,
            horizon: 50,
            samples: 200,
            floor: 1e-12,
            ceiling: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovEstimate {
    pub exponent: f64,
    pub epsilon_pert: f64,
    pub horizon: usize,
    pub samples: usize,
    /// `λ_i = ln(d_T / d_0) / T` per sample.
    pub per_sample: Vec<f64>,
    /// `ln(d_t / d_0)` for `t = 1..=horizon`, per sample.
    pub log_divergence: Vec<Vec<f64>>,
    /// More than half the samples collapsed onto the floor.
    pub degenerate: bool,
}

impl LyapunovEstimate {
    pub fn median(&self) -> f64 {
        median(&self.per_sample)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Uniform direction on the sphere of the given radius.
pub fn sphere_perturbation<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-300 {
            return v.into_iter().map(|x| radius * x / norm).collect();
        }
    }
}

fn hidden_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean finite-time exponent around `anchor`. Each sample perturbs `h` on a
/// sphere of radius `ε_pert`, runs the perturbed and reference systems side
/// by side, and measures divergence in `h` only.
pub fn estimate_lyapunov<S: ClosedLoopSystem, R: Rng + ?Sized>(
    system: &S,
    anchor: &HybridState,
    config: &LyapunovConfig,
    rng: &mut R,
) -> Result<LyapunovEstimate> {
    let starts: Vec<HybridState> = (0..config.samples)
        .map(|_| {
            let delta = sphere_perturbation(anchor.h.len(), config.epsilon_pert, rng);
            HybridState {
                q: anchor.q,
                h: anchor.h.iter().zip(&delta).map(|(h, d)| h + d).collect(),
            }
        })
        .collect();
    lyapunov_from_starts(system, std::slice::from_ref(anchor), &starts, config)
}

/// Like [`estimate_lyapunov`] with explicit perturbed starts; sample `i`
/// uses reference `anchors[i % anchors.len()]`.
pub fn lyapunov_from_starts<S: ClosedLoopSystem>(
    system: &S,
    anchors: &[HybridState],
    starts: &[HybridState],
    config: &LyapunovConfig,
) -> Result<LyapunovEstimate> {
    if config.horizon < 2 {
        return Err(Error::InvalidArgument("Lyapunov horizon must be >= 2".into()));
    }
    if starts.is_empty() || anchors.is_empty() {
        return Err(Error::InvalidArgument("Lyapunov estimate needs at least one sample".into()));
    }
    if !(config.epsilon_pert > 0.0) {
        return Err(Error::InvalidArgument("epsilon_pert must be > 0".into()));
    }
    let clamp = |d: f64| {
        let d = d.max(config.floor);
        config.ceiling.map_or(d, |c| d.min(c))
    };
    let runs: Vec<(Vec<f64>, bool)> = starts
        .par_iter()
        .enumerate()
        .map(|(i, start)| {
            let mut reference = anchors[i % anchors.len()].clone();
            let mut perturbed = start.clone();
            let d0 = hidden_distance(&reference.h, &perturbed.h);
            let mut series = Vec::with_capacity(config.horizon);
            let mut floored = false;
            for _ in 0..config.horizon {
                reference = system.step(&reference);
                perturbed = system.step(&perturbed);
                let raw = hidden_distance(&reference.h, &perturbed.h);
                floored = raw <= config.floor;
                series.push((clamp(raw) / d0).ln());
            }
            (series, floored)
        })
        .collect();

    let horizon = config.horizon as f64;
    let per_sample: Vec<f64> = runs.iter().map(|(s, _)| s[s.len() - 1] / horizon).collect();
    let floored = runs.iter().filter(|(_, f)| *f).count();
    let exponent = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    if !exponent.is_finite() {
        return Err(Error::Numeric("Lyapunov exponent is not finite".into()));
    }
    Ok(LyapunovEstimate {
        exponent,
        epsilon_pert: config.epsilon_pert,
        horizon: config.horizon,
        samples: starts.len(),
        per_sample,
        log_divergence: runs.into_iter().map(|(s, _)| s).collect(),
        degenerate: 2 * floored > starts.len(),
    })
}

/// `lambda,count` rows over equal-width bins spanning the sample range.
/// `lambda` is the bin centre.
pub fn lyapunov_histogram_csv(values: &[f64], bins: usize) -> Result<String> {
    if values.is_empty() || bins == 0 {
        return Err(Error::InvalidArgument("histogram needs values and at least one bin".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let mut out = String::from("lambda,count\n");
    for (i, c) in counts.iter().enumerate() {
        let _ = writeln!(out, "{:e},{c}", lo + (i as f64 + 0.5) * width);
    }
    Ok(out)
}

/// One period of a detected cycle, ready for open-loop replay.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleReference {
    /// Active one-hot indices of the observation at each phase.
    pub observations: Vec<Vec<usize>>,
    /// Hidden state after the update at each phase.
    pub hidden: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    /// Hidden state entering the first phase.
    pub anchor_h: Vec<f64>,
}

impl CycleReference {
    pub fn from_trace(trace: &HybridTrace, maze: &Maze, cycle: &LimitCycle, goal_visible: bool) -> Self {
        let range = cycle.anchor..cycle.anchor + cycle.period;
        Self {
            observations: range
                .clone()
                .map(|t| observe_with(maze, trace.states[t].q, goal_visible).active_indices().to_vec())
                .collect(),
            hidden: range.clone().map(|t| trace.states[t + 1].h.clone()).collect(),
            actions: range.map(|t| trace.actions[t]).collect(),
            anchor_h: trace.states[cycle.anchor].h.clone(),
        }
    }

    pub fn period(&self) -> usize {
        self.actions.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StimulationResult {
    pub tested: usize,
    pub converged: usize,
    pub action_match: Vec<f64>,
}

/// Drives the network open-loop with the cycle's observations repeated
/// `repeats` times from each initial state. A run converges when every
/// hidden state of its final period lies within `tolerance` of the
/// reference.
pub fn cyclic_stimulation(
    params: &GruParams,
    reference: &CycleReference,
    repeats: usize,
    initial_states: &[Vec<f64>],
    tolerance: f64,
) -> Result<StimulationResult> {
    let period = reference.period();
    if period == 0 || repeats == 0 {
        return Err(Error::InvalidArgument("stimulation needs a non-empty cycle and repeats >= 1".into()));
    }
    let n = params.hidden_size();
    if let Some(bad) = initial_states.iter().find(|h| h.len() != n) {
        return Err(Error::DimMismatch(format!("initial state has {} dims, network has {n}", bad.len())));
    }
    let runs: Vec<(bool, f64)> = initial_states
        .par_iter()
        .map(|h0| {
            let mut scratch = GruScratch::new(n);
            let mut h = h0.clone();
            let mut next = vec![0.0; n];
            let mut matches = 0usize;
            let mut final_dev: f64 = 0.0;
            for rep in 0..repeats {
                for k in 0..period {
                    params.gru_step_one_hot(&h, &reference.observations[k], &mut scratch, &mut next);
                    std::mem::swap(&mut h, &mut next);
                    let a = softmax(&params.logits(&h)).argmax();
                    if a == reference.actions[k].index() {
                        matches += 1;
                    }
                    if rep + 1 == repeats {
                        final_dev = final_dev.max(hidden_distance(&h, &reference.hidden[k]));
                    }
                }
            }
            (final_dev <= tolerance, matches as f64 / (repeats * period) as f64)
        })
        .collect();
    Ok(StimulationResult {
        tested: initial_states.len(),
        converged: runs.iter().filter(|r| r.0).count(),
        action_match: runs.into_iter().map(|r| r.1).collect(),
    })
}

/// Perturbs the anchor's hidden state by a random vector of norm `radius`,
/// runs the closed loop for `steps` from there, and reports whether a cycle
/// of the same period shows up again.
pub fn redetect_after_perturbation<S: ClosedLoopSystem, R: Rng + ?Sized>(
    system: &S,
    anchor: &HybridState,
    period: usize,
    radius: f64,
    steps: usize,
    config: &CycleConfig,
    rng: &mut R,
) -> Result<bool> {
    let delta = sphere_perturbation(anchor.h.len(), radius, rng);
    let mut s = HybridState {
        q: anchor.q,
        h: anchor.h.iter().zip(&delta).map(|(h, d)| h + d).collect(),
    };
    let mut states = Vec::with_capacity(steps + 1);
    states.push(s.clone());
    for _ in 0..steps {
        s = system.step(&s);
        states.push(s.clone());
    }
    Ok(detect_limit_cycle(&states, config)?.is_some_and(|c| c.period == period))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{corridor, goal_seeker};
    use crate::policy::NetDims;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn state(x: usize, y: usize, h: &[f64]) -> HybridState {
        HybridState {
            q: Position::new(x, y),
            h: h.to_vec(),
        }
    }

    fn tile(lp: &[HybridState], len: usize) -> Vec<HybridState> {
        (0..len).map(|i| lp[i % lp.len()].clone()).collect()
    }

    fn four_loop() -> Vec<HybridState> {
        vec![
            state(0, 0, &[0.1, 0.2]),
            state(1, 0, &[0.3, -0.2]),
            state(1, 1, &[-0.5, 0.0]),
            state(0, 1, &[0.0, 0.7]),
        ]
    }

    /// Direct reading of the definition over a full distance table.
    fn cycle_oracle(states: &[HybridState], cfg: &CycleConfig) -> Option<(usize, usize)> {
        let n = states.len();
        let d: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| joint_distance(&states[i], &states[j], cfg.position_scale)).collect())
            .collect();
        for period in 1..=cfg.t_max {
            for t0 in 0..n {
                if t0 + cfg.min_reps * period > n {
                    break;
                }
                let ok = (1..cfg.min_reps).all(|w| {
                    (0..period).all(|k| {
                        let a = t0 + (w - 1) * period + k;
                        d[a][a + period] <= cfg.epsilon
                    })
                });
                if ok {
                    return Some((period, t0));
                }
            }
        }
        None
    }

    #[test]
    fn joint_distance_arithmetic() {
        let a = state(2, 3, &[0.5, 0.5]);
        assert_eq!(joint_distance(&a, &a, 1.0), 0.0);
        assert_eq!(joint_distance(&a, &state(3, 3, &[0.5, 0.5]), 1.0), 1.0);
        assert_eq!(joint_distance(&a, &state(2, 3, &[0.5, -0.5]), 1.0), 1.0);
        assert_eq!(joint_distance(&a, &state(2, 1, &[0.5, 0.5]), 0.5), 1.0);
    }

    proptest! {
        #[test]
        fn joint_distance_is_a_metric(
            pts in proptest::collection::vec((0usize..10, 0usize..10, proptest::collection::vec(-1.0f64..1.0, 3)), 3),
            scale in 0.01f64..4.0,
        ) {
            let s: Vec<HybridState> = pts.iter().map(|(x, y, h)| state(*x, *y, h)).collect();
            let d = |i: usize, j: usize| joint_distance(&s[i], &s[j], scale);
            prop_assert!((d(0, 1) - d(1, 0)).abs() <= 1e-12);
            prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12);
            prop_assert!(d(0, 1) >= 0.0);
        }
    }

    #[test]
    fn tiled_loop_has_its_own_period() {
        let cfg = CycleConfig {
            epsilon: 0.0,
            min_reps: 2,
            t_max: 10,
            position_scale: 1.0,
        };
        let c = detect_limit_cycle(&tile(&four_loop(), 30), &cfg).unwrap().unwrap();
        assert_eq!((c.period, c.anchor, c.max_residual), (4, 0, 0.0));
        assert_eq!(c.repetitions, 7);
    }

    #[test]
    fn period_is_minimal_not_a_multiple() {
        let two = vec![state(0, 0, &[0.1]), state(1, 0, &[0.2])];
        let cfg = CycleConfig {
            epsilon: 0.0,
            min_reps: 3,
            t_max: 8,
            position_scale: 1.0,
        };
        let c = detect_limit_cycle(&tile(&two, 20), &cfg).unwrap().unwrap();
        assert_eq!(c.period, 2);
    }

    #[test]
    fn transient_moves_the_anchor() {
        let mut states: Vec<HybridState> = (0..5).map(|i| state(9, i, &[i as f64, 0.0])).collect();
        states.extend(tile(&four_loop(), 20));
        let cfg = CycleConfig {
            epsilon: 1e-9,
            min_reps: 2,
            t_max: 6,
            position_scale: 1.0,
        };
        let c = detect_limit_cycle(&states, &cfg).unwrap().unwrap();
        assert_eq!((c.period, c.anchor), (4, 5));
    }

    #[test]
    fn noise_below_budget_still_detected() {
        // Noise of amplitude ε/(4√dim) per component keeps every pair
        // within 2·√dim·amp = ε/2.
        let eps = 1e-2;
        let dim = 2;
        let amp = eps / (4.0 * (dim as f64).sqrt());
        let mut r = rng::seeded(3);
        let noisy: Vec<HybridState> = tile(&four_loop(), 40)
            .into_iter()
            .map(|mut s| {
                for v in &mut s.h {
                    *v += r.random_range(-amp..amp);
                }
                s
            })
            .collect();
        let cfg = CycleConfig {
            epsilon: eps,
            min_reps: 3,
            t_max: 8,
            position_scale: 1.0,
        };
        let c = detect_limit_cycle(&noisy, &cfg).unwrap().unwrap();
        assert_eq!(c.period, 4);
        assert!(c.max_residual <= eps);
    }

    #[test]
    fn random_states_have_no_cycle() {
        let mut r = rng::seeded(8);
        let states: Vec<HybridState> = (0..60)
            .map(|_| state(r.random_range(0..10), r.random_range(0..10), &[r.random(), r.random(), r.random()]))
            .collect();
        let cfg = CycleConfig {
            epsilon: 1e-3,
            min_reps: 2,
            t_max: 20,
            position_scale: 1.0,
        };
        assert_eq!(detect_limit_cycle(&states, &cfg).unwrap(), None);
        assert_eq!(cycle_oracle(&states, &cfg), None);
    }

    proptest! {
        #[test]
        fn detector_agrees_with_all_pairs_oracle(
            seed in 0u64..10_000,
            period in 1usize..7,
            prefix in 0usize..8,
            eps in prop_oneof![Just(0.0), Just(0.05), Just(0.3)],
            min_reps in 2usize..4,
        ) {
            // Small alphabets make accidental near-matches common, which is
            // where the two implementations could disagree.
            let mut r = rng::seeded(seed);
            let mut pick = || state(r.random_range(0..2), 0, &[f64::from(r.random_range(0..3u8)) * 0.1]);
            let lp: Vec<HybridState> = (0..period).map(|_| pick()).collect();
            let mut states: Vec<HybridState> = (0..prefix).map(|_| pick()).collect();
            states.extend(tile(&lp, 30));
            let cfg = CycleConfig { epsilon: eps, min_reps, t_max: 8, position_scale: 1.0 };
            let got = detect_limit_cycle(&states, &cfg).unwrap().map(|c| (c.period, c.anchor));
            prop_assert_eq!(got, cycle_oracle(&states, &cfg));
        }
    }

    #[test]
    fn short_trace_is_rejected() {
        let cfg = CycleConfig {
            epsilon: 0.0,
            min_reps: 2,
            t_max: 5,
            position_scale: 1.0,
        };
        assert!(detect_limit_cycle(&tile(&four_loop(), 10), &cfg).is_err());
    }

    #[test]
    fn linear_maps_give_analytic_exponents() {
        let anchor = state(0, 0, &[0.3, -0.1, 0.2, 0.0]);
        let cfg = LyapunovConfig {
            epsilon_pert: 1e-3,
            horizon: 20,
            samples: 16,
            ..LyapunovConfig::default()
        };
        for (factor, want) in [(0.5, -std::f64::consts::LN_2), (1.0, 0.0), (2.0, std::f64::consts::LN_2)] {
            let est = estimate_lyapunov(&LinearSystem { factor }, &anchor, &cfg, &mut rng::seeded(1)).unwrap();
            assert!((est.exponent - want).abs() <= 1e-6, "factor {factor}: {}", est.exponent);
            assert!(!est.degenerate);
            assert_eq!(est.log_divergence[0].len(), 20);
        }
    }

    #[test]
    fn collapse_to_floor_is_flagged() {
        let anchor = state(0, 0, &[0.0; 3]);
        let cfg = LyapunovConfig {
            epsilon_pert: 1e-3,
            horizon: 5,
            samples: 4,
            ..LyapunovConfig::default()
        };
        let est = estimate_lyapunov(&LinearSystem { factor: 0.0 }, &anchor, &cfg, &mut rng::seeded(1)).unwrap();
        assert!(est.degenerate);
        assert!(est.exponent.is_finite());
    }

    #[test]
    fn lyapunov_preconditions() {
        let anchor = state(0, 0, &[0.0; 3]);
        let cfg = LyapunovConfig {
            horizon: 1,
            ..LyapunovConfig::default()
        };
        assert!(estimate_lyapunov(&LinearSystem { factor: 1.0 }, &anchor, &cfg, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn sphere_perturbation_has_requested_norm() {
        let mut r = rng::seeded(2);
        for dim in [1, 3, 32] {
            let v = sphere_perturbation(dim, 0.25, &mut r);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn trace_replays_through_maze_system() {
        let m = crate::maze::generate_maze(21, 0.3, 1000).unwrap();
        let p = GruParams::random(NetDims::maze(12), 1.0, &mut rng::seeded(2));
        let trace = record_hybrid_trace(&p, &m, RolloutConfig::greedy(80), None, &mut rng::seeded(0));
        assert_eq!(trace.states.len(), trace.actions.len() + 1);
        let sys = MazeSystem {
            params: &p,
            maze: &m,
            goal_visible: true,
        };
        for t in 0..trace.actions.len() {
            let (next, a) = sys.step_with_action(&trace.states[t]);
            assert_eq!(next, trace.states[t + 1]);
            assert_eq!(a, Some(trace.actions[t]));
        }
    }

    #[test]
    fn zero_params_trace_is_pinned() {
        let m = crate::maze::generate_maze(4, 0.3, 1000).unwrap();
        let p = GruParams::zeros(NetDims::maze(4));
        let trace = record_hybrid_trace(&p, &m, RolloutConfig::greedy(30), None, &mut rng::seeded(0));
        assert!(trace.states.iter().all(|s| s.h.iter().all(|&v| v == 0.0)));
        let last = trace.states.last().unwrap().q;
        assert!(trace.states[trace.states.len() - 5..].iter().all(|s| s.q == last));
    }

    fn seeker_cycle() -> (GruParams, Maze, HybridTrace, LimitCycle) {
        let m = corridor();
        let p = goal_seeker(4);
        let trace = record_hybrid_trace(&p, &m, RolloutConfig::greedy(40), None, &mut rng::seeded(0));
        let cfg = CycleConfig::for_agent(4, 40, Some(m.shortest_path_len()));
        let c = detect_limit_cycle(&trace.states, &cfg).unwrap().unwrap();
        (p, m, trace, c)
    }

    #[test]
    fn goal_seeker_cycles_with_the_trial_length() {
        let (_, _, trace, c) = seeker_cycle();
        assert_eq!(c.period, 2);
        assert!(trace.log.trial_boundaries.len() >= 3);
    }

    #[test]
    fn stimulation_from_the_anchor_matches_every_action() {
        let (p, m, trace, c) = seeker_cycle();
        let reference = CycleReference::from_trace(&trace, &m, &c, true);
        let res = cyclic_stimulation(&p, &reference, 5, &[reference.anchor_h.clone()], 1e-6).unwrap();
        assert_eq!(res.tested, 1);
        assert_eq!(res.converged, 1);
        assert_eq!(res.action_match, vec![1.0]);
    }

    #[test]
    fn zero_network_misses_a_nontrivial_reference() {
        let (_, m, trace, c) = seeker_cycle();
        let reference = CycleReference::from_trace(&trace, &m, &c, true);
        let zero = GruParams::zeros(NetDims::maze(4));
        let res = cyclic_stimulation(&zero, &reference, 3, &[vec![0.0; 4], vec![0.3; 4]], 1e-6).unwrap();
        assert!(res.action_match.iter().all(|&f| f < 1.0));
    }

    #[test]
    fn memoryless_cycle_survives_perturbation() {
        let (p, m, trace, c) = seeker_cycle();
        let sys = MazeSystem {
            params: &p,
            maze: &m,
            goal_visible: true,
        };
        let cfg = CycleConfig::for_agent(4, 40, Some(2));
        let est = estimate_lyapunov(
            &sys,
            &trace.states[c.anchor],
            &LyapunovConfig {
                samples: 8,
                horizon: 10,
                ..LyapunovConfig::default()
            },
            &mut rng::seeded(0),
        )
        .unwrap();
        assert!(est.exponent < 0.0);
        let again = redetect_after_perturbation(&sys, &trace.states[c.anchor], c.period, 0.005, 40, &cfg, &mut rng::seeded(1));
        assert!(again.unwrap());
    }

    #[test]
    fn histogram_counts_everything() {
        let csv = lyapunov_histogram_csv(&[-0.5, -0.4, 0.0, 0.1, 0.1], 4).unwrap();
        let total: usize = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, 5);
        assert!(lyapunov_histogram_csv(&[], 4).is_err());
    }
}
