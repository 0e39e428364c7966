use std::fmt::Write as _;
use std::io::BufReader;
use std::path::Path;

use super::manifest::RunManifest;
use crate::error::{Error, Result};
use crate::hds::median;
use crate::maze::{EpisodeLog, Maze};

fn csv_rows(dir: &Path, name: &str) -> Result<Option<Vec<Vec<String>>>> {
    let path = dir.join(name);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)?;
    Ok(Some(
        text.lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split(',').map(|s| s.trim().to_string()).collect())
            .collect(),
    ))
}

fn num(v: &str, file: &str, row: usize) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::parse(file, row + 2, format!("bad number `{v}`")))
}

/// Reach rate and mean optimality per network in `eval.csv`, with unreached
/// mazes scoring 0.
fn eval_section(rows: &[Vec<String>], out: &mut String) -> Result<()> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if r.len() != 6 {
            return Err(Error::parse("eval.csv", 0, "expected 6 fields"));
        }
        if !names.contains(&r[0].as_str()) {
            names.push(&r[0]);
        }
    }
    for name in names {
        let (mut n, mut reached, mut opt) = (0usize, 0usize, 0.0);
        for (i, r) in rows.iter().enumerate().filter(|(_, r)| r[0] == name) {
            n += 1;
            if r[3] == "1" {
                reached += 1;
                opt += num(&r[2], "eval.csv", i)? / num(&r[4], "eval.csv", i)?;
            }
        }
        let _ = writeln!(
            out,
            "{:<28}{:.3}",
            format!("reach rate ({name})"),
            reached as f64 / n as f64
        );
        let _ = writeln!(out, "{:<28}{:.3}", format!("path optimality ({name})"), opt / n as f64);
    }
    Ok(())
}

/// One-screen summary of a run directory. Fails when the manifest is
/// missing or any recorded output no longer matches its digest.
pub fn cmd_report(dir: &Path) -> Result<String> {
    let m = RunManifest::load_verified(dir)?;
    let mut out = String::new();
    let _ = writeln!(out, "{:<28}{}", "command", m.command);
    let stages: Vec<&str> = m.stages.iter().map(|s| s.name.as_str()).collect();
    let _ = writeln!(out, "{:<28}{}", "stages", stages.join(" "));
    if let Some(f) = &m.failed_stage {
        let _ = writeln!(out, "{:<28}{f}", "failed stage");
    }
    if let Some(rows) = csv_rows(dir, "eval.csv")? {
        eval_section(&rows, &mut out)?;
    }
    if dir.join("episode.csv").exists() && dir.join("maze.txt").exists() {
        let maze = Maze::from_text(&std::fs::read_to_string(dir.join("maze.txt"))?, "maze.txt")?;
        let log = EpisodeLog::read_csv(BufReader::new(std::fs::File::open(dir.join("episode.csv"))?), "episode.csv")?;
        let _ = writeln!(out, "{:<28}{}", "completed trials", log.trial_boundaries.len());
        let ratio = log
            .final_path_length()
            .map_or(0.0, |len| maze.shortest_path_len() as f64 / len as f64);
        let _ = writeln!(out, "{:<28}{ratio:.3}", "final path optimality");
    }
    if let Some(rows) = csv_rows(dir, "cca.csv")? {
        let mut rho = Vec::new();
        let mut above = 0;
        for (i, r) in rows.iter().enumerate() {
            if r.len() != 4 {
                return Err(Error::parse("cca.csv", i + 2, "expected 4 fields"));
            }
            let v = num(&r[1], "cca.csv", i)?;
            if v > num(&r[3], "cca.csv", i)? {
                above += 1;
            }
            rho.push(format!("{v:.3}"));
        }
        let _ = writeln!(out, "{:<28}{}", "cca rho", rho.join(" "));
        let _ = writeln!(out, "{:<28}{above}/{}", "modes above null p99", rows.len());
    }
    if let Some(rows) = csv_rows(dir, "lyapunov_samples.csv")? {
        let v = rows
            .iter()
            .enumerate()
            .map(|(i, r)| num(r.get(1).map_or("", |s| s), "lyapunov_samples.csv", i))
            .collect::<Result<Vec<_>>>()?;
        let _ = writeln!(out, "{:<28}{:.4}", "lyapunov median", median(&v));
    }
    if let Ok(text) = std::fs::read_to_string(dir.join("cycle.txt")) {
        let _ = writeln!(out, "{:<28}{}", "cycle", text.trim());
    }
    if let Some(rows) = csv_rows(dir, "summary.csv")? {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != 5 {
                return Err(Error::parse("summary.csv", i + 2, "expected 5 fields"));
            }
            let _ = writeln!(
                out,
                "{:<28}{} (iqr {}, censored {}/{})",
                format!("convergence median ({})", r[0]),
                r[2],
                r[3],
                r[4],
                r[1]
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{corridor, goal_seeker};
    use crate::harness::{cmd_rollout, ExperimentConfig, MazeSource, RunDir};
    use crate::policy::Checkpoint;

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(cmd_report(dir.path()).is_err());
    }

    #[test]
    fn optimality_uses_the_shortest_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.train.lifespan = 10;
        let ckpt = dir.path().join("seeker.txt");
        Checkpoint::new(goal_seeker(cfg.train.hidden_size), 0, 0).save(&ckpt).unwrap();
        let maze = dir.path().join("corridor.txt");
        std::fs::write(&maze, corridor().to_text()).unwrap();
        let out = dir.path().join("run");
        cmd_rollout(&cfg, &ckpt, &MazeSource::File(maze), &out).unwrap();
        let text = cmd_report(&out).unwrap();
        assert!(text.contains("final path optimality       1.000"), "{text}");
        assert_eq!(cmd_report(&out).unwrap(), text);
    }

    #[test]
    fn detour_halves_the_ratio() {
        let maze = "maze v1 10 10 0\nS.G#######\n..########\n##########\n##########\n##########\n##########\n##########\n##########\n##########\n##########\n";
        assert_eq!(Maze::from_text(maze, "m").unwrap().shortest_path_len(), 2);
        let episode = "step,x,y,action,reached_goal\n0,0,1,2,0\n1,1,1,1,0\n2,1,0,0,0\n3,2,0,1,1\n";
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::create(dir.path(), "rollout", Default::default()).unwrap();
        run.stage("rollout", |f| {
            f.write("maze.txt", maze)?;
            f.write("episode.csv", episode)
        })
        .unwrap();
        run.finish().unwrap();
        let text = cmd_report(dir.path()).unwrap();
        assert!(text.contains("final path optimality       0.500"), "{text}");
    }
}
