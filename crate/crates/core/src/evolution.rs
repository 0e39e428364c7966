//! Natural-evolution-strategy meta-trainer.
//!
//! Each generation draws a fresh batch of mazes, evaluates mirrored
//! perturbations `center ± σ·ε` on every maze of the batch, maps raw fitness
//! to centered ranks and moves the center along the rank-weighted noise:
//!
//! ```text
//! center' = center + lr / (population · σ) · Σ_j rank_j · ε_j
//! ```
//!
//! Offspring are evaluated in parallel; every reduction runs in offspring
//! index order, so the thread count never changes the result.

use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::maze::{self, Maze};
use crate::policy::{run_closed_loop, ActionMode, GruParams, NetDims, NoHook, RolloutConfig};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct NesConfig {
    /// Offspring per generation; even, since offspring come in mirrored pairs.
    pub population: usize,
    pub sigma: f64,
    pub learning_rate: f64,
    pub generations: usize,
    pub mazes_per_gen: usize,
    pub lifespan: usize,
    pub seed: u64,
    pub hidden_size: usize,
    pub density: f64,
    pub max_maze_attempts: usize,
    /// Scale of the random initial center (see [`GruParams::random`]).
    pub init_scale: f64,
    /// Added to the lifespan to score a maze whose goal was never reached.
    pub unreached_penalty: f64,
    pub mode: ActionMode,
    pub goal_visible: bool,
    /// Checkpoint cadence in generations; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for NesConfig {
    fn default() -> Self {
        Self {
            population: 128,
            sigma: 0.05,
            learning_rate: 0.03,
            generations: 300,
            mazes_per_gen: 8,
            lifespan: 200,
            seed: 0,
            hidden_size: 32,
            density: maze::DEFAULT_DENSITY,
            max_maze_attempts: maze::DEFAULT_MAX_ATTEMPTS,
            init_scale: 1.0,
            unreached_penalty: 100.0,
            mode: ActionMode::Greedy,
            goal_visible: true,
            checkpoint_every: 50,
        }
    }
}

impl NesConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.population < 2 || !self.population.is_multiple_of(2) {
            return bad("population must be even and >= 2");
        }
        if !(self.sigma > 0.0) {
            return bad("sigma must be > 0");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.mazes_per_gen == 0 {
            return bad("mazes_per_gen must be >= 1");
        }
        if self.lifespan == 0 {
            return bad("lifespan must be >= 1");
        }
        if self.hidden_size == 0 {
            return bad("hidden_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.density) {
            return bad("density must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn dims(&self) -> NetDims {
        NetDims::maze(self.hidden_size)
    }

    pub fn rollout_config(&self) -> RolloutConfig {
        RolloutConfig {
            lifespan: self.lifespan,
            mode: self.mode,
            goal_visible: self.goal_visible,
        }
    }

    /// The untrained center every run starts from.
    pub fn initial_params(&self) -> GruParams {
        GruParams::random(self.dims(), self.init_scale, &mut rng::stream(self.seed, "init", 0, 0))
    }
}

/// Performance of one parameter vector on a batch of mazes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Evaluation {
    pub fitness: f64,
    pub mazes: usize,
    /// Mazes where at least one trial completed.
    pub reached: usize,
    /// Sum of final path lengths over reached mazes.
    pub final_len_sum: f64,
    /// Sum over all mazes of `shortest / final` (0 when unreached).
    pub optimality_sum: f64,
}

impl Evaluation {
    pub fn reach_rate(&self) -> f64 {
        self.reached as f64 / self.mazes as f64
    }

    pub fn mean_final_len(&self) -> f64 {
        if self.reached == 0 {
            f64::NAN
        } else {
            self.final_len_sum / self.reached as f64
        }
    }

    pub fn mean_optimality(&self) -> f64 {
        self.optimality_sum / self.mazes as f64
    }
}

/// A generated maze with its shortest path length cached.
#[derive(Debug, Clone)]
pub struct ScoredMaze {
    pub maze: Maze,
    pub shortest: usize,
}

impl From<Maze> for ScoredMaze {
    fn from(maze: Maze) -> Self {
        let shortest = maze.shortest_path_len();
        Self { maze, shortest }
    }
}

/// Generates `count` mazes whose seeds come from the `(label, index)` stream.
pub fn maze_batch(config: &NesConfig, label: &str, index: u64, count: usize) -> Result<Vec<ScoredMaze>> {
    (0..count)
        .map(|j| {
            let seed = rng::derive_seed(config.seed, label, index, j as u64);
            maze::generate_maze(seed, config.density, config.max_maze_attempts).map(ScoredMaze::from)
        })
        .collect()
}

/// Runs `params` once on every maze. `stream_key` selects the action
/// sampling streams and is irrelevant in greedy mode.
pub fn evaluate_params(
    params: &GruParams,
    mazes: &[ScoredMaze],
    config: &NesConfig,
    stream_key: u64,
) -> Evaluation {
    let rollout_cfg = config.rollout_config();
    let mut eval = Evaluation {
        mazes: mazes.len(),
        ..Default::default()
    };
    let mut score_sum = 0.0;
    for (j, sm) in mazes.iter().enumerate() {
        let mut r = rng::stream(config.seed, "act", stream_key, j as u64);
        let run = run_closed_loop(params, &sm.maze, rollout_cfg, None, &mut NoHook, false, &mut r);
        match run.log.final_path_length() {
            Some(len) => {
                eval.reached += 1;
                eval.final_len_sum += len as f64;
                eval.optimality_sum += sm.shortest as f64 / len as f64;
                score_sum += len as f64;
            }
            None => score_sum += config.lifespan as f64 + config.unreached_penalty,
        }
    }
    eval.fitness = -score_sum / mazes.len() as f64;
    eval
}

/// Fitness of `center + sign·σ·ε` on the batch.
pub fn evaluate_offspring(
    center: &[f64],
    epsilon: &[f64],
    sign: f64,
    mazes: &[ScoredMaze],
    config: &NesConfig,
    stream_key: u64,
) -> Result<Evaluation> {
    if mazes.is_empty() {
        return Err(Error::InvalidArgument("maze batch is empty".into()));
    }
    if center.len() != epsilon.len() {
        return Err(Error::LengthMismatch {
            expected: center.len(),
            got: epsilon.len(),
        });
    }
    let theta: Vec<f64> = center
        .iter()
        .zip(epsilon)
        .map(|(c, e)| c + sign * config.sigma * e)
        .collect();
    let params = GruParams::unflatten(&theta, config.dims())?;
    Ok(evaluate_params(&params, mazes, config, stream_key))
}

/// Ascending ranks with ties averaged, rescaled to `k / (n - 1) - 0.5`.
pub fn centered_rank_transform(raw: &[f64]) -> Vec<f64> {
    let n = raw.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![0.0];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && raw[order[j + 1]] == raw[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg / (n - 1) as f64 - 0.5;
        }
        i = j + 1;
    }
    ranks
}

/// Applies the rank-weighted update. `perturbations[i]` is shared by
/// offspring `2i` (`+ε`) and `2i + 1` (`−ε`).
pub fn nes_update(
    center: &[f64],
    perturbations: &[Vec<f64>],
    ranks: &[f64],
    population: usize,
    sigma: f64,
    learning_rate: f64,
) -> Vec<f64> {
    assert_eq!(ranks.len(), 2 * perturbations.len(), "one rank per offspring");
    let step = learning_rate / (population as f64 * sigma);
    let mut grad = vec![0.0; center.len()];
    for (i, eps) in perturbations.iter().enumerate() {
        let w = ranks[2 * i] - ranks[2 * i + 1];
        if w == 0.0 {
            continue;
        }
        for (g, e) in grad.iter_mut().zip(eps) {
            *g += w * e;
        }
    }
    center.iter().zip(&grad).map(|(c, g)| c + step * g).collect()
}

/// Standard-normal perturbation for pair `pair` of generation `generation`.
pub fn perturbation(seed: u64, generation: usize, pair: usize, len: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, "noise", generation as u64, pair as u64);
    (0..len).map(|_| StandardNormal.sample(&mut r)).collect()
}

/// One generation of a generic mirrored ES on `objective` (maximised).
/// Returns the new center and the raw fitness of each offspring.
pub fn es_generation<F>(
    center: &[f64],
    generation: usize,
    seed: u64,
    population: usize,
    sigma: f64,
    learning_rate: f64,
    objective: F,
) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let pairs = population / 2;
    let noise: Vec<Vec<f64>> = (0..pairs)
        .map(|i| perturbation(seed, generation, i, center.len()))
        .collect();
    let fitness: Vec<f64> = (0..population)
        .into_par_iter()
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let theta: Vec<f64> = center
                .iter()
                .zip(&noise[j / 2])
                .map(|(c, e)| c + sign * sigma * e)
                .collect();
            objective(&theta)
        })
        .collect();
    let ranks = centered_rank_transform(&fitness);
    let next = nes_update(center, &noise, &ranks, population, sigma, learning_rate);
    (next, fitness)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    pub mean_fitness: f64,
    pub best_fitness: f64,
    pub reach_rate: f64,
    pub mean_final_len: f64,
    pub mean_optimality: f64,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingHistory {
    pub records: Vec<GenerationRecord>,
}

impl TrainingHistory {
    pub const CSV_HEADER: &'static str = "gen,mean_fit,best_fit,reach_rate,mean_final_len,mean_optimality";

    /// Deterministic CSV (wall-clock is left out).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.generation, r.mean_fitness, r.best_fitness, r.reach_rate, r.mean_final_len, r.mean_optimality
            ));
        }
        out
    }
}

pub struct TrainOutcome {
    pub center: GruParams,
    pub history: TrainingHistory,
}

/// Meta-trains from [`NesConfig::initial_params`]. `on_generation` sees each
/// finished record together with the updated center.
pub fn train<F>(config: &NesConfig, mut on_generation: F) -> Result<TrainOutcome>
where
    F: FnMut(&GenerationRecord, &GruParams) -> Result<()>,
{
    config.validate()?;
    let dims = config.dims();
    let mut center = config.initial_params().flatten();
    let mut history = TrainingHistory::default();
    let pairs = config.population / 2;

    for gen in 0..config.generations {
        let started = Instant::now();
        let mazes = maze_batch(config, "train-maze", gen as u64, config.mazes_per_gen)?;
        let noise: Vec<Vec<f64>> = (0..pairs)
            .map(|i| perturbation(config.seed, gen, i, center.len()))
            .collect();
        let evals: Vec<Evaluation> = (0..config.population)
            .into_par_iter()
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                let key = (gen as u64) << 32 | j as u64;
                evaluate_offspring(&center, &noise[j / 2], sign, &mazes, config, key)
            })
            .collect::<Result<_>>()?;

        let fitness: Vec<f64> = evals.iter().map(|e| e.fitness).collect();
        let ranks = centered_rank_transform(&fitness);
        center = nes_update(
            &center,
            &noise,
            &ranks,
            config.population,
            config.sigma,
            config.learning_rate,
        );

        let n = evals.len() as f64;
        let total_mazes: usize = evals.iter().map(|e| e.mazes).sum();
        let reached: usize = evals.iter().map(|e| e.reached).sum();
        let final_len_sum: f64 = evals.iter().map(|e| e.final_len_sum).sum();
        let record = GenerationRecord {
            generation: gen,
            mean_fitness: fitness.iter().sum::<f64>() / n,
            best_fitness: fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            reach_rate: reached as f64 / total_mazes as f64,
            mean_final_len: if reached == 0 {
                f64::NAN
            } else {
                final_len_sum / reached as f64
            },
            mean_optimality: evals.iter().map(|e| e.optimality_sum).sum::<f64>() / total_mazes as f64,
            wall_ms: started.elapsed().as_millis(),
        };
        let params = GruParams::unflatten(&center, dims)?;
        on_generation(&record, &params)?;
        history.records.push(record);
    }

    Ok(TrainOutcome {
        center: GruParams::unflatten(&center, dims)?,
        history,
    })
}
