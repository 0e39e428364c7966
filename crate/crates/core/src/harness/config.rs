use std::collections::BTreeMap;

use crate::analysis::AlignmentConfig;
use crate::error::{Error, Result};
use crate::evolution::NesConfig;
use crate::hds::{CycleConfig, LyapunovConfig};
use crate::ridge::RidgeConfig;

/// Keys a config file handed to `train` must spell out; everything else
/// falls back to the built-in defaults.
pub const TRAIN_REQUIRED: &[&str] = &[
    "train.population",
    "train.sigma",
    "train.learning_rate",
    "train.generations",
];

#[derive(Debug, Clone, PartialEq)]
pub struct HdsSettings {
    pub position_scale: f64,
    /// `None` selects `1e-3·√H`.
    pub cycle_epsilon: Option<f64>,
    pub min_reps: usize,
    pub lyapunov_eps: f64,
    pub lyapunov_horizon: usize,
    pub lyapunov_samples: usize,
    pub lyapunov_mazes: usize,
    pub histogram_bins: usize,
    pub stim_initial: usize,
    pub stim_repeats: usize,
    /// `None` selects ten times the cycle threshold.
    pub stim_tolerance: Option<f64>,
}

impl Default for HdsSettings {
    fn default() -> Self {
        Self {
            position_scale: 1.0,
            cycle_epsilon: None,
            min_reps: 2,
            lyapunov_eps: 0.01,
            lyapunov_horizon: 50,
            lyapunov_samples: 200,
            lyapunov_mazes: 20,
            histogram_bins: 20,
            stim_initial: 100,
            stim_repeats: 10,
            stim_tolerance: None,
        }
    }
}

impl HdsSettings {
    pub fn cycle_config(&self, hidden: usize, lifespan: usize, shortest: Option<usize>) -> CycleConfig {
        let mut c = CycleConfig::for_agent(hidden, lifespan, shortest);
        if let Some(e) = self.cycle_epsilon {
            c.epsilon = e;
        }
        c.min_reps = self.min_reps;
        c.position_scale = self.position_scale;
        c
    }

    pub fn lyapunov_config(&self, samples: usize) -> LyapunovConfig {
        LyapunovConfig {
            epsilon_pert: self.lyapunov_eps,
            horizon: self.lyapunov_horizon,
            samples,
            ..LyapunovConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub train: NesConfig,
    pub eval_mazes: usize,
    pub ridge: RidgeConfig,
    pub hds: HdsSettings,
    pub cca: AlignmentConfig,
    pub max_rows: usize,
    pub analysis_mazes: usize,
    pub intervention_mazes: usize,
    pub intervention_max_runs: usize,
    pub bin_width: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train: NesConfig::default(),
            eval_mazes: 200,
            ridge: RidgeConfig::default(),
            hds: HdsSettings::default(),
            cca: AlignmentConfig::default(),
            max_rows: 4000,
            analysis_mazes: 2000,
            intervention_mazes: 2000,
            intervention_max_runs: 1000,
            bin_width: 20,
        }
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl ExperimentConfig {
    /// Parses flat `key=value` lines (`#` starts a comment). Unknown keys are
    /// rejected, and every key in `required` must appear.
    pub fn from_text(text: &str, source_name: &str, required: &[&str]) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source_name, i + 1, "expected key=value"))?;
            let key = key.trim();
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("{source_name}:{}: {e}", i + 1)))?;
            seen.push(key.to_string());
        }
        if let Some(missing) = required.iter().find(|k| !seen.iter().any(|s| s == *k)) {
            return Err(Error::Config(format!("{source_name}: missing required key `{missing}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.ridge.validate()?;
        if self.cca.permutations < 100 {
            return Err(Error::Config("cca.permutations must be >= 100".into()));
        }
        if self.eval_mazes == 0 || self.analysis_mazes == 0 || self.intervention_mazes == 0 {
            return Err(Error::Config("maze counts must be >= 1".into()));
        }
        if self.bin_width == 0 {
            return Err(Error::Config("intervention.bin_width must be >= 1".into()));
        }
        Ok(())
    }

    /// Overrides the master seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        let auto = |v: &str| -> Result<Option<f64>> {
            if v == "auto" {
                Ok(None)
            } else {
                p(key, v).map(Some)
            }
        };
        let t = &mut self.train;
        match key {
            "seed" => {
                self.seed = p(key, value)?;
                t.seed = self.seed;
            }
            "train.population" => t.population = p(key, value)?,
            "train.sigma" => t.sigma = p(key, value)?,
            "train.learning_rate" => t.learning_rate = p(key, value)?,
            "train.generations" => t.generations = p(key, value)?,
            "train.mazes_per_gen" => t.mazes_per_gen = p(key, value)?,
            "train.lifespan" => t.lifespan = p(key, value)?,
            "train.hidden_size" => t.hidden_size = p(key, value)?,
            "train.density" => t.density = p(key, value)?,
            "train.max_maze_attempts" => t.max_maze_attempts = p(key, value)?,
            "train.init_scale" => t.init_scale = p(key, value)?,
            "train.unreached_penalty" => t.unreached_penalty = p(key, value)?,
            "train.mode" => t.mode = p(key, value)?,
            "train.goal_visible" => t.goal_visible = p(key, value)?,
            "train.checkpoint_every" => t.checkpoint_every = p(key, value)?,
            "train.eval_mazes" => self.eval_mazes = p(key, value)?,
            "ridge.image_size" => self.ridge.image_size = p(key, value)?,
            "ridge.alpha" => self.ridge.alpha = p(key, value)?,
            "ridge.beta" => self.ridge.beta = p(key, value)?,
            "ridge.embed_scale" => self.ridge.embed_scale = p(key, value)?,
            "ridge.offset_x" => self.ridge.embed_offset.0 = p(key, value)?,
            "ridge.offset_y" => self.ridge.embed_offset.1 = p(key, value)?,
            "hds.position_scale" => self.hds.position_scale = p(key, value)?,
            "hds.cycle_epsilon" => self.hds.cycle_epsilon = auto(value)?,
            "hds.min_reps" => self.hds.min_reps = p(key, value)?,
            "hds.lyapunov_eps" => self.hds.lyapunov_eps = p(key, value)?,
            "hds.lyapunov_horizon" => self.hds.lyapunov_horizon = p(key, value)?,
            "hds.lyapunov_samples" => self.hds.lyapunov_samples = p(key, value)?,
            "hds.lyapunov_mazes" => self.hds.lyapunov_mazes = p(key, value)?,
            "hds.histogram_bins" => self.hds.histogram_bins = p(key, value)?,
            "hds.stim_initial" => self.hds.stim_initial = p(key, value)?,
            "hds.stim_repeats" => self.hds.stim_repeats = p(key, value)?,
            "hds.stim_tolerance" => self.hds.stim_tolerance = auto(value)?,
            "cca.modes" => self.cca.modes = p(key, value)?,
            "cca.ridge" => self.cca.ridge = p(key, value)?,
            "cca.permutations" => self.cca.permutations = p(key, value)?,
            "cca.pca_first" => {
                let k: usize = p(key, value)?;
                self.cca.pca_first = (k > 0).then_some(k);
            }
            "cca.max_rows" => self.max_rows = p(key, value)?,
            "analysis.mazes" => self.analysis_mazes = p(key, value)?,
            "intervention.mazes" => self.intervention_mazes = p(key, value)?,
            "intervention.max_runs" => self.intervention_max_runs = p(key, value)?,
            "intervention.bin_width" => self.bin_width = p(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Every resolved key with its value, in a fixed order.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let t = &self.train;
        let h = &self.hds;
        [
            ("seed", self.seed.to_string()),
            ("train.population", t.population.to_string()),
            ("train.sigma", t.sigma.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.generations", t.generations.to_string()),
            ("train.mazes_per_gen", t.mazes_per_gen.to_string()),
            ("train.lifespan", t.lifespan.to_string()),
            ("train.hidden_size", t.hidden_size.to_string()),
            ("train.density", t.density.to_string()),
            ("train.max_maze_attempts", t.max_maze_attempts.to_string()),
            ("train.init_scale", t.init_scale.to_string()),
            ("train.unreached_penalty", t.unreached_penalty.to_string()),
            ("train.mode", t.mode.to_string()),
            ("train.goal_visible", t.goal_visible.to_string()),
            ("train.checkpoint_every", t.checkpoint_every.to_string()),
            ("train.eval_mazes", self.eval_mazes.to_string()),
            ("ridge.image_size", self.ridge.image_size.to_string()),
            ("ridge.alpha", self.ridge.alpha.to_string()),
            ("ridge.beta", self.ridge.beta.to_string()),
            ("ridge.embed_scale", self.ridge.embed_scale.to_string()),
            ("ridge.offset_x", self.ridge.embed_offset.0.to_string()),
            ("ridge.offset_y", self.ridge.embed_offset.1.to_string()),
            ("hds.position_scale", h.position_scale.to_string()),
            ("hds.cycle_epsilon", opt_f64(h.cycle_epsilon)),
            ("hds.min_reps", h.min_reps.to_string()),
            ("hds.lyapunov_eps", h.lyapunov_eps.to_string()),
            ("hds.lyapunov_horizon", h.lyapunov_horizon.to_string()),
            ("hds.lyapunov_samples", h.lyapunov_samples.to_string()),
            ("hds.lyapunov_mazes", h.lyapunov_mazes.to_string()),
            ("hds.histogram_bins", h.histogram_bins.to_string()),
            ("hds.stim_initial", h.stim_initial.to_string()),
            ("hds.stim_repeats", h.stim_repeats.to_string()),
            ("hds.stim_tolerance", opt_f64(h.stim_tolerance)),
            ("cca.modes", self.cca.modes.to_string()),
            ("cca.ridge", self.cca.ridge.to_string()),
            ("cca.permutations", self.cca.permutations.to_string()),
            ("cca.pca_first", self.cca.pca_first.unwrap_or(0).to_string()),
            ("cca.max_rows", self.max_rows.to_string()),
            ("analysis.mazes", self.analysis_mazes.to_string()),
            ("intervention.mazes", self.intervention_mazes.to_string()),
            ("intervention.max_runs", self.intervention_max_runs.to_string()),
            ("intervention.bin_width", self.bin_width.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ErrorClass;

    #[test]
    fn resolved_text_round_trips() {
        let mut cfg = ExperimentConfig::default().with_seed(9);
        cfg.cca.pca_first = Some(7);
        cfg.hds.cycle_epsilon = Some(0.01);
        let back = ExperimentConfig::from_text(&cfg.to_text(), "c", TRAIN_REQUIRED).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_text("train.popsize=3\n", "c", &[]).unwrap_err();
        assert!(err.to_string().contains("train.popsize"));
        assert_eq!(err.class(), ErrorClass::Usage);
    }

    #[test]
    fn missing_required_key_is_named() {
        let text = "train.population=64\ntrain.sigma=0.1\ntrain.generations=3\n";
        let err = ExperimentConfig::from_text(text, "c", TRAIN_REQUIRED).unwrap_err();
        assert!(err.to_string().contains("`train.learning_rate`"), "{err}");
        assert_eq!(err.class(), ErrorClass::Usage);
    }

    #[test]
    fn values_are_validated() {
        assert!(ExperimentConfig::from_text("train.population=7\n", "c", &[]).is_err());
        assert!(ExperimentConfig::from_text("cca.permutations=10\n", "c", &[]).is_err());
        assert!(ExperimentConfig::from_text("train.sigma=abc\n", "c", &[]).is_err());
        let cfg = ExperimentConfig::from_text("seed=4 # trailing\n\n", "c", &[]).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed), (4, 4));
    }
}
