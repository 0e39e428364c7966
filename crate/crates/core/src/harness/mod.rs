//! Experiment orchestration: each `cmd_*` runs one subcommand into an output
//! directory, records every file it reads and writes in `manifest.json`,
//! and tags failures with the stage that raised them.

mod config;
mod manifest;
mod report;

use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;

pub use config::{ExperimentConfig, HdsSettings, TRAIN_REQUIRED};
pub use manifest::{digest_file, sha256_hex, FileDigest, RunDir, RunManifest, StageFiles, StageRecord, MANIFEST_FILE};
pub use report::cmd_report;

use crate::analysis::{
    collect_trial_samples, fit_alignment_matrices, intervention_survey, resolve_target, Alignment, MatchedRun,
    SampleSet,
};
use crate::error::{Error, Result};
use crate::evolution::{evaluate_params, maze_batch, train, ScoredMaze};
use crate::hds::{
    cyclic_stimulation, detect_limit_cycle, estimate_lyapunov, lyapunov_histogram_csv, record_hybrid_trace,
    CycleReference, MazeSystem,
};
use crate::intervention::{convergence_histogram, ConvergenceReport, InterventionFile, TargetSpec};
use crate::maze::{generate_maze, EpisodeLog, Maze};
use crate::policy::{rollout, Checkpoint, GruParams};
use crate::ridge::{batch_ridge, ridge_distance, ridge_image, Trajectory2D};
use crate::rng;
use crate::stats::{cca_report_csv, read_matrix_csv, write_matrix_csv};

pub const EVAL_MAZES: &str = "eval-maze";
pub const ANALYSIS_MAZES: &str = "analysis-maze";
pub const INTERVENTION_MAZES: &str = "intervention-maze";

/// Where a single-maze command gets its maze.
#[derive(Debug, Clone, PartialEq)]
pub enum MazeSource {
    File(PathBuf),
    /// Maze `index` of the analysis stream for the configured seed.
    Generated(usize),
}

impl MazeSource {
    fn load(&self, cfg: &ExperimentConfig, files: &mut StageFiles) -> Result<Maze> {
        match self {
            MazeSource::File(path) => {
                files.input(path)?;
                Maze::from_text(&std::fs::read_to_string(path)?, &path.display().to_string())
            }
            MazeSource::Generated(i) => generate_maze(
                rng::derive_seed(cfg.seed, ANALYSIS_MAZES, 0, *i as u64),
                cfg.train.density,
                cfg.train.max_maze_attempts,
            ),
        }
    }
}

fn load_params(path: &Path, files: &mut StageFiles) -> Result<GruParams> {
    files.input(path)?;
    Ok(Checkpoint::load(path)?.params)
}

fn read_text(path: &Path, files: &mut StageFiles) -> Result<String> {
    files.input(path)?;
    Ok(std::fs::read_to_string(path)?)
}

fn read_matrix(path: &Path, files: &mut StageFiles) -> Result<DMatrix<f64>> {
    files.input(path)?;
    let f = std::fs::File::open(path)?;
    Ok(read_matrix_csv(BufReader::new(f), &path.display().to_string())?.1)
}

fn names(prefix: &str, n: usize, from: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{}", i + from)).collect()
}

fn start(out: &Path, command: &str, cfg: &ExperimentConfig) -> Result<RunDir> {
    cfg.validate()?;
    let mut run = RunDir::create(out, command, cfg.entries())?;
    run.stage("config", |f| f.write("config.txt", cfg.to_text()))?;
    Ok(run)
}

/// `checkpoint,maze_seed,shortest,reached,final_path_length,optimality`,
/// one row per (network, maze).
pub fn evaluation_csv(nets: &[(&str, &GruParams)], mazes: &[ScoredMaze], cfg: &ExperimentConfig) -> String {
    let mut out = String::from("checkpoint,maze_seed,shortest,reached,final_path_length,optimality\n");
    for (name, params) in nets {
        for (j, sm) in mazes.iter().enumerate() {
            let e = evaluate_params(params, std::slice::from_ref(sm), &cfg.train, j as u64);
            if e.reached == 1 {
                let len = e.final_len_sum as usize;
                let _ = writeln!(out, "{name},{},{},1,{len},{:e}", sm.maze.seed(), sm.shortest, e.optimality_sum);
            } else {
                let _ = writeln!(out, "{name},{},{},0,,0", sm.maze.seed(), sm.shortest);
            }
        }
    }
    out
}

/// Meta-trains from the configured seed. Writes `checkpoint.txt`,
/// `checkpoints/initial.txt` (the untrained network), periodic
/// `checkpoints/gen_NNNNN.txt`, `history.csv` and `eval.csv`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    let mut run = start(out, "train", cfg)?;
    let held = run.stage("mazes", |_| maze_batch(&cfg.train, EVAL_MAZES, 0, cfg.eval_mazes))?;
    let initial = cfg.train.initial_params();
    let center = run.stage("train", |f| {
        f.write("checkpoints/initial.txt", Checkpoint::new(initial.clone(), 0, cfg.seed).to_text())?;
        let every = cfg.train.checkpoint_every;
        let outcome = train(&cfg.train, |rec, params| {
            let g = rec.generation + 1;
            if every > 0 && g % every == 0 {
                f.write(
                    &format!("checkpoints/gen_{g:05}.txt"),
                    Checkpoint::new(params.clone(), g, cfg.seed).to_text(),
                )?;
            }
            Ok(())
        })?;
        let ckpt = Checkpoint::new(outcome.center.clone(), cfg.train.generations, cfg.seed);
        f.write("checkpoint.txt", ckpt.to_text())?;
        f.write("history.csv", outcome.history.to_csv())?;
        Ok(outcome.center)
    })?;
    run.stage("evaluate", |f| {
        f.write("eval.csv", evaluation_csv(&[("initial", &initial), ("final", &center)], &held, cfg))
    })?;
    run.finish()
}

/// One lifespan on one maze: `maze.txt` and `episode.csv`.
pub fn cmd_rollout(cfg: &ExperimentConfig, checkpoint: &Path, maze: &MazeSource, out: &Path) -> Result<RunManifest> {
    let mut run = start(out, "rollout", cfg)?;
    run.stage("rollout", |f| {
        let params = load_params(checkpoint, f)?;
        let maze = maze.load(cfg, f)?;
        let r = rollout(
            &params,
            &maze,
            cfg.train.rollout_config(),
            &mut rng::stream(cfg.seed, "rollout", 0, 0),
        );
        let mut csv = Vec::new();
        r.log.write_csv(&mut csv)?;
        f.write("maze.txt", maze.to_text())?;
        f.write("episode.csv", csv)
    })?;
    run.finish()
}

/// Hybrid trace, cycle report, Lyapunov estimate around the cycle anchor and
/// open-loop stimulation of the cycle.
pub fn cmd_hds(cfg: &ExperimentConfig, checkpoint: &Path, maze: &MazeSource, out: &Path) -> Result<RunManifest> {
    let mut run = start(out, "hds", cfg)?;
    let rollout_cfg = cfg.train.rollout_config();
    let (params, maze, trace) = run.stage("trace", |f| {
        let params = load_params(checkpoint, f)?;
        let maze = maze.load(cfg, f)?;
        let trace = record_hybrid_trace(
            &params,
            &maze,
            rollout_cfg,
            None,
            &mut rng::stream(cfg.seed, "hds-trace", 0, 0),
        );
        f.write("maze.txt", maze.to_text())?;
        f.write("trace.csv", trace.to_csv())?;
        Ok((params, maze, trace))
    })?;
    let hidden = params.hidden_size();
    let cycle_cfg = cfg
        .hds
        .cycle_config(hidden, rollout_cfg.lifespan, Some(maze.shortest_path_len()));
    let cycle = run.stage("cycle", |f| {
        let cycle = detect_limit_cycle(&trace.states, &cycle_cfg)?;
        let text = cycle.map_or_else(|| "no cycle detected\n".to_string(), |c| c.report());
        f.write("cycle.txt", text)?;
        Ok(cycle)
    })?;
    run.stage("lyapunov", |f| {
        let anchor = cycle.map_or(rollout_cfg.lifespan / 2, |c| c.anchor);
        let system = MazeSystem {
            params: &params,
            maze: &maze,
            goal_visible: rollout_cfg.goal_visible,
        };
        let lyap_cfg = cfg.hds.lyapunov_config(cfg.hds.lyapunov_samples);
        let est = estimate_lyapunov(
            &system,
            &trace.states[anchor],
            &lyap_cfg,
            &mut rng::stream(cfg.seed, "lyapunov", 0, 0),
        )?;
        let mut samples = String::from("sample,lambda\n");
        for (i, l) in est.per_sample.iter().enumerate() {
            let _ = writeln!(samples, "{i},{l:e}");
        }
        f.write("lyapunov_samples.csv", samples)?;
        f.write("lyapunov.csv", lyapunov_histogram_csv(&est.per_sample, cfg.hds.histogram_bins)?)
    })?;
    if let Some(c) = cycle {
        run.stage("stimulation", |f| {
            let reference = CycleReference::from_trace(&trace, &maze, &c, rollout_cfg.goal_visible);
            let mut r = rng::stream(cfg.seed, "stimulation", 0, 0);
            let mut starts = vec![reference.anchor_h.clone()];
            starts.extend(
                (1..cfg.hds.stim_initial).map(|_| (0..hidden).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>()),
            );
            let tol = cfg.hds.stim_tolerance.unwrap_or(10.0 * cycle_cfg.epsilon);
            let s = cyclic_stimulation(&params, &reference, cfg.hds.stim_repeats, &starts, tol)?;
            let mut csv = String::from("start,action_match\n");
            for (i, m) in s.action_match.iter().enumerate() {
                let _ = writeln!(csv, "{i},{m:e}");
            }
            f.write("stimulation.csv", csv)?;
            f.write(
                "stimulation.txt",
                format!("tested={}\nconverged={}\ntolerance={tol:e}\n", s.tested, s.converged),
            )
        })?;
    }
    run.finish()
}

/// Ridge images of every completed trial in an episode: `ridge/trial_NNN.pgm`
/// and `.csv`, plus pairwise distances.
pub fn cmd_ridge(cfg: &ExperimentConfig, episode: &Path, maze: &Path, out: &Path) -> Result<RunManifest> {
    let mut run = start(out, "ridge", cfg)?;
    run.stage("ridge", |f| {
        let maze = Maze::from_text(&read_text(maze, f)?, &maze.display().to_string())?;
        f.input(episode)?;
        let file = std::fs::File::open(episode)?;
        let log = EpisodeLog::read_csv(BufReader::new(file), &episode.display().to_string())?;
        let paths = log.trial_paths(maze.start());
        if paths.is_empty() {
            return Err(Error::TooFewRows { needed: 1, got: 0 });
        }
        let images = paths
            .iter()
            .map(|p| ridge_image(&Trajectory2D::from_cells(p), &cfg.ridge))
            .collect::<Result<Vec<_>>>()?;
        for (i, img) in images.iter().enumerate() {
            f.write(&format!("ridge/trial_{i:03}.pgm"), img.to_pgm(cfg.ridge.alpha))?;
            f.write(&format!("ridge/trial_{i:03}.csv"), img.to_csv())?;
        }
        let mut csv = String::from("i,j,distance\n");
        for i in 0..images.len() {
            for j in i + 1..images.len() {
                let _ = writeln!(csv, "{i},{j},{:e}", ridge_distance(&images[i], &images[j])?);
            }
        }
        f.write("distances.csv", csv)
    })?;
    run.finish()
}

fn write_alignment(f: &mut StageFiles, a: &Alignment) -> Result<()> {
    f.write("cca.csv", cca_report_csv(&a.cca, Some(&a.null)))?;
    let k = a.cca.correlations.len();
    let mut header = names("u_", k, 1);
    header.extend(names("v_", k, 1));
    f.write("projections.csv", write_matrix_csv(&header, &a.projections()?)?)
}

/// CCA between two headered matrix CSVs with paired rows.
pub fn cmd_cca(cfg: &ExperimentConfig, neural: &Path, behavior: &Path, out: &Path) -> Result<RunManifest> {
    let mut run = start(out, "cca", cfg)?;
    run.stage("cca", |f| {
        let x = read_matrix(neural, f)?;
        let y = read_matrix(behavior, f)?;
        let a = fit_alignment_matrices(&x, &y, &cfg.cca, &mut rng::stream(cfg.seed, "cca-null", 0, 0))?;
        write_alignment(f, &a)
    })?;
    run.finish()
}

fn analysis_mazes(cfg: &ExperimentConfig, label: &str, count: usize) -> Result<Vec<Maze>> {
    Ok(maze_batch(&cfg.train, label, 0, count)?
        .into_iter()
        .map(|s| s.maze)
        .collect())
}

/// Trial samples of `params` on the analysis mazes and their alignment, run
/// as three stages. With `emit`, the matrices and results are written out.
fn align_stages(run: &mut RunDir, cfg: &ExperimentConfig, params: &GruParams, emit: bool) -> Result<Alignment> {
    let samples: SampleSet = run.stage("trace", |f| {
        let mazes = analysis_mazes(cfg, ANALYSIS_MAZES, cfg.analysis_mazes)?;
        let s = collect_trial_samples(params, &mazes, cfg.train.rollout_config(), Some(cfg.max_rows));
        if emit {
            let mut csv = String::from("row,maze,trial,length\n");
            for (i, (m, t, l)) in s.origin.iter().enumerate() {
                let _ = writeln!(csv, "{i},{m},{t},{l}");
            }
            f.write("samples.csv", csv)?;
            f.write("neural.csv", write_matrix_csv(&names("h_", s.neural.ncols(), 0), &s.neural)?)?;
        }
        Ok(s)
    })?;
    let behavior = run.stage("ridge", |f| {
        let b = batch_ridge(&samples.trajectories, &cfg.ridge)?;
        if emit {
            f.write("behavior.csv", write_matrix_csv(&names("p_", b.ncols(), 0), &b)?)?;
        }
        Ok(b)
    })?;
    run.stage("cca", |f| {
        let a = fit_alignment_matrices(
            &samples.neural,
            &behavior,
            &cfg.cca,
            &mut rng::stream(cfg.seed, "cca-null", 0, 0),
        )?;
        if emit {
            write_alignment(f, &a)?;
        }
        Ok(a)
    })
}

/// Trace → trial samples → ridge images → CCA with its permutation null.
pub fn cmd_pipeline(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<RunManifest> {
    let mut run = start(out, "pipeline", cfg)?;
    let params = run.stage("load", |f| load_params(checkpoint, f))?;
    align_stages(&mut run, cfg, &params, true)?;
    run.finish()
}

fn report_of(runs: &[MatchedRun], treated: bool) -> ConvergenceReport {
    ConvergenceReport {
        times: runs.iter().map(|r| if treated { r.treated } else { r.plain }).collect(),
    }
}

/// Matched plain/intervened runs on `mazes` intervention mazes (the
/// configured count when `None`).
pub fn cmd_intervene(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    spec: &Path,
    mazes: Option<usize>,
    out: &Path,
) -> Result<RunManifest> {
    let mut run = start(out, "intervene", cfg)?;
    let (params, file) = run.stage("load", |f| {
        let params = load_params(checkpoint, f)?;
        let file = InterventionFile::parse(&read_text(spec, f)?, &spec.display().to_string())?;
        f.write("spec.txt", file.to_text())?;
        Ok((params, file))
    })?;
    let alignment = match file.target {
        TargetSpec::Critical { .. } => Some(align_stages(&mut run, cfg, &params, false)?),
        _ => None,
    };
    let target = run.stage("target", |f| {
        let t = resolve_target(&file, params.hidden_size(), alignment.as_ref())?;
        let list: Vec<String> = t.indices().iter().map(|i| i.to_string()).collect();
        f.write("target.txt", format!("{}\n", list.join(",")))?;
        Ok(t)
    })?;
    run.stage("runs", |f| {
        let lifespan = cfg.train.lifespan;
        let mazes = analysis_mazes(cfg, INTERVENTION_MAZES, mazes.unwrap_or(cfg.intervention_mazes))?;
        let runs = intervention_survey(
            &params,
            &mazes,
            cfg.train.rollout_config(),
            &file,
            &target,
            cfg.intervention_max_runs,
        )?;
        if runs.is_empty() {
            return Err(Error::TooFewRows { needed: 1, got: 0 });
        }
        let mut csv = String::from("maze,seed,plain_steps,plain_censored,treated_steps,treated_censored\n");
        for r in &runs {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                r.maze_index,
                r.seed,
                r.plain.steps,
                u8::from(r.plain.censored),
                r.treated.steps,
                u8::from(r.treated.censored)
            );
        }
        f.write("runs.csv", csv)?;
        let mut summary = String::from("arm,runs,median,iqr,censored\n");
        for (arm, treated) in [("plain", false), (file.kind.name(), true)] {
            let rep = report_of(&runs, treated);
            let name = if treated { "treated" } else { "plain" };
            f.write(&format!("histogram_{name}.csv"), convergence_histogram(&rep, lifespan, cfg.bin_width)?)?;
            let _ = writeln!(
                summary,
                "{arm},{},{},{},{}",
                rep.times.len(),
                rep.median(),
                rep.iqr(),
                rep.censored()
            );
        }
        f.write("summary.csv", summary)
    })?;
    run.finish()
}
