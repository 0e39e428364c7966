//! Experiments that span several modules: trial-level neural/behavior
//! samples, their canonical alignment, Lyapunov surveys and matched
//! intervention batches.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hds::{
    detect_limit_cycle, estimate_lyapunov, record_hybrid_trace, CycleConfig, HybridTrace, LimitCycle,
    LyapunovConfig, MazeSystem,
};
use crate::intervention::{
    capture_optimal_state, run_plain, run_with_intervention, select_critical_dims, ConvergenceTime, DimensionSet,
    InterventionFile, InterventionKind, TargetSpec,
};
use crate::maze::Maze;
use crate::policy::{GruParams, RolloutConfig};
use crate::ridge::{batch_ridge, RidgeConfig, Trajectory2D};
use crate::rng;
use crate::stats::{
    cca_fit, cca_null_distribution, pca_fit, pca_project, standardize, CcaModel, NullDistribution, PcaModel,
    Standardized,
};

/// One row per completed trial: the hidden state right after the update
/// that chose the goal-reaching action, and the trial's cell path.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub neural: DMatrix<f64>,
    pub trajectories: Vec<Trajectory2D>,
    /// `(maze index, trial index, trial length)` per row.
    pub origin: Vec<(usize, usize, usize)>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// Greedy traces in every maze, cut into trials. Stops once `max_rows`
/// samples are collected, so two agents can be compared at equal N.
pub fn collect_trial_samples(
    params: &GruParams,
    mazes: &[Maze],
    config: RolloutConfig,
    max_rows: Option<usize>,
) -> SampleSet {
    let traces: Vec<HybridTrace> = mazes
        .par_iter()
        .map(|m| record_hybrid_trace(params, m, config, None, &mut rng::seeded(m.seed())))
        .collect();
    let hidden = params.hidden_size();
    let cap = max_rows.unwrap_or(usize::MAX);
    let mut rows: Vec<f64> = Vec::new();
    let mut trajectories = Vec::new();
    let mut origin = Vec::new();
    'outer: for (mi, (trace, maze)) in traces.iter().zip(mazes).enumerate() {
        let paths = trace.log.trial_paths(maze.start());
        for (ti, (path, &b)) in paths.iter().zip(&trace.log.trial_boundaries).enumerate() {
            if trajectories.len() >= cap {
                break 'outer;
            }
            rows.extend_from_slice(&trace.states[b + 1].h);
            trajectories.push(Trajectory2D::from_cells(path));
            origin.push((mi, ti, path.len() - 1));
        }
    }
    SampleSet {
        neural: DMatrix::from_row_slice(trajectories.len(), hidden, &rows),
        trajectories,
        origin,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentConfig {
    pub modes: usize,
    pub ridge: f64,
    pub permutations: usize,
    /// Reduce each standardized block to this many principal components and
    /// standardize again before CCA.
    pub pca_first: Option<usize>,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            modes: 5,
            ridge: 1e-3,
            permutations: 100,
            pca_first: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub neural_std: Standardized,
    pub behavior_std: Standardized,
    pub neural_pca: Option<(PcaModel, Standardized)>,
    pub behavior_pca: Option<(PcaModel, Standardized)>,
    /// Final CCA inputs.
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub cca: CcaModel,
    pub null: NullDistribution,
}

impl Alignment {
    /// H×D_x map from standardized hidden units to CCA input coordinates;
    /// `None` when CCA saw the standardized hidden states directly.
    pub fn neural_weights(&self) -> Option<DMatrix<f64>> {
        self.neural_pca.as_ref().map(|(pca, std2)| {
            let mut w = pca.components.clone();
            for (j, mut col) in w.column_iter_mut().enumerate() {
                let s = if std2.flagged[j] { 0.0 } else { 1.0 / std2.stds[j] };
                col.scale_mut(s);
            }
            w
        })
    }

    /// Canonical variates of the training rows, `[u_1..u_k | v_1..v_k]`.
    pub fn projections(&self) -> Result<DMatrix<f64>> {
        let (u, v) = self.cca.transform(&self.x, &self.y)?;
        let k = u.ncols();
        let mut out = DMatrix::zeros(u.nrows(), 2 * k);
        out.columns_mut(0, k).copy_from(&u);
        out.columns_mut(k, k).copy_from(&v);
        Ok(out)
    }
}

fn reduce(block: &Standardized, k: usize) -> Result<(DMatrix<f64>, Option<(PcaModel, Standardized)>)> {
    let k = k.min(block.data.ncols()).min(block.data.nrows().saturating_sub(1));
    let pca = pca_fit(&block.data, k)?;
    let scores = pca_project(&pca, &block.data)?;
    let std2 = standardize(&scores)?;
    Ok((std2.data.clone(), Some((pca, std2))))
}

pub fn fit_alignment<R: Rng + ?Sized>(
    samples: &SampleSet,
    ridge: &RidgeConfig,
    config: &AlignmentConfig,
    rng: &mut R,
) -> Result<Alignment> {
    if samples.len() < 3 {
        return Err(Error::TooFewRows {
            needed: 3,
            got: samples.len(),
        });
    }
    let behavior = batch_ridge(&samples.trajectories, ridge)?;
    fit_alignment_matrices(&samples.neural, &behavior, config, rng)
}

/// Standardize, optionally reduce, then CCA plus its permutation null.
/// Rows of `neural` and `behavior` must be paired.
pub fn fit_alignment_matrices<R: Rng + ?Sized>(
    neural: &DMatrix<f64>,
    behavior: &DMatrix<f64>,
    config: &AlignmentConfig,
    rng: &mut R,
) -> Result<Alignment> {
    if neural.nrows() != behavior.nrows() {
        return Err(Error::DimMismatch(format!(
            "{} neural rows vs {} behavior rows",
            neural.nrows(),
            behavior.nrows()
        )));
    }
    if neural.nrows() < 3 {
        return Err(Error::TooFewRows {
            needed: 3,
            got: neural.nrows(),
        });
    }
    let neural_std = standardize(neural)?;
    let behavior_std = standardize(behavior)?;
    let ((x, neural_pca), (y, behavior_pca)) = match config.pca_first {
        Some(k) => (reduce(&neural_std, k)?, reduce(&behavior_std, k)?),
        None => ((neural_std.data.clone(), None), (behavior_std.data.clone(), None)),
    };
    let modes = config.modes.min(x.ncols()).min(y.ncols()).min(x.nrows() - 1);
    let cca = cca_fit(&x, &y, modes, config.ridge)?;
    let null = cca_null_distribution(&x, &y, modes, config.ridge, config.permutations, rng)?;
    Ok(Alignment {
        neural_std,
        behavior_std,
        neural_pca,
        behavior_pca,
        x,
        y,
        cca,
        null,
    })
}

/// A greedy trace with its detected cycle, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleProbe {
    pub trace: HybridTrace,
    pub cycle: Option<LimitCycle>,
}

pub fn probe_cycle(params: &GruParams, maze: &Maze, config: RolloutConfig) -> Result<CycleProbe> {
    let trace = record_hybrid_trace(params, maze, config, None, &mut rng::seeded(maze.seed()));
    let cfg = CycleConfig::for_agent(params.hidden_size(), config.lifespan, Some(maze.shortest_path_len()));
    let cycle = detect_limit_cycle(&trace.states, &cfg)?;
    Ok(CycleProbe { trace, cycle })
}

/// Per-sample exponents pooled across mazes. The reference state is the
/// cycle anchor when a cycle exists and the mid-lifespan state otherwise.
pub fn lyapunov_survey(
    params: &GruParams,
    mazes: &[Maze],
    rollout: RolloutConfig,
    config: &LyapunovConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let per_maze: Vec<Result<Vec<f64>>> = mazes
        .par_iter()
        .enumerate()
        .map(|(i, maze)| {
            let probe = probe_cycle(params, maze, rollout)?;
            let anchor = probe.cycle.map_or(rollout.lifespan / 2, |c| c.anchor);
            let system = MazeSystem {
                params,
                maze,
                goal_visible: rollout.goal_visible,
            };
            let est = estimate_lyapunov(
                &system,
                &probe.trace.states[anchor],
                config,
                &mut rng::stream(seed, "lyapunov", i as u64, 0),
            )?;
            Ok(est.per_sample)
        })
        .collect();
    let mut out = Vec::new();
    for r in per_maze {
        out.extend(r?);
    }
    Ok(out)
}

/// One matched maze: the plain run and the intervened run share maze and
/// seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedRun {
    pub maze_index: usize,
    pub seed: u64,
    pub plain: ConvergenceTime,
    pub treated: ConvergenceTime,
}

/// Resolves a spec file's target set against the hidden size and, for
/// `critical`, a fitted alignment.
pub fn resolve_target(file: &InterventionFile, hidden: usize, alignment: Option<&Alignment>) -> Result<DimensionSet> {
    match &file.target {
        TargetSpec::None => Ok(DimensionSet::empty()),
        TargetSpec::All => Ok(DimensionSet::all(hidden)),
        TargetSpec::Manual(v) => DimensionSet::new(v.clone(), hidden, crate::intervention::DimensionOrigin::Manual),
        TargetSpec::Critical { modes, count } => {
            let a = alignment.ok_or_else(|| Error::Config("target=critical needs a fitted alignment".into()))?;
            let modes = (*modes).min(a.cca.correlations.len());
            select_critical_dims(&a.cca, a.neural_weights().as_ref(), modes, *count)
        }
    }
}

/// Runs `file` against plain rollouts on each maze. Mazes where an
/// injection-style spec finds no optimal state are skipped; at most
/// `max_runs` matched pairs are produced.
pub fn intervention_survey(
    params: &GruParams,
    mazes: &[Maze],
    rollout: RolloutConfig,
    file: &InterventionFile,
    target: &DimensionSet,
    max_runs: usize,
) -> Result<Vec<MatchedRun>> {
    let needs_state = matches!(file.kind, InterventionKind::Inject | InterventionKind::PreserveOnly);
    let results: Vec<Result<Option<MatchedRun>>> = mazes
        .par_iter()
        .enumerate()
        .map(|(i, maze)| {
            let state = if needs_state {
                let probe = probe_cycle(params, maze, rollout)?;
                match probe.cycle.and_then(|c| capture_optimal_state(&probe.trace, maze, &c)) {
                    Some(s) => Some(s),
                    None => return Ok(None),
                }
            } else {
                None
            };
            let seed = rng::derive_seed(maze.seed(), "intervention-run", i as u64, 0);
            let spec = file.instantiate(target.clone(), state);
            let plain = run_plain(params, maze, rollout, seed);
            let treated = run_with_intervention(params, maze, &spec, rollout, seed)?;
            Ok(Some(MatchedRun {
                maze_index: i,
                seed,
                plain: plain.convergence,
                treated: treated.convergence,
            }))
        })
        .collect();
    let mut out = Vec::new();
    for r in results {
        if let Some(run) = r? {
            if out.len() < max_runs {
                out.push(run);
            }
        }
    }
    Ok(out)
}

/// Mazes where the agent settles into a cycle that passes through the start
/// cell after a goal reset.
pub fn mazes_with_optimal_state(params: &GruParams, mazes: &[Maze], rollout: RolloutConfig) -> Result<Vec<usize>> {
    let flags: Vec<Result<bool>> = mazes
        .par_iter()
        .map(|m| {
            let p = probe_cycle(params, m, rollout)?;
            Ok(p.cycle.and_then(|c| capture_optimal_state(&p.trace, m, &c)).is_some())
        })
        .collect();
    let mut out = Vec::new();
    for (i, f) in flags.into_iter().enumerate() {
        if f? {
            out.push(i);
        }
    }
    Ok(out)
}
