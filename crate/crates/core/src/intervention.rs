//! Causal probes on hidden-state dimensions and convergence-time
//! measurement.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::hds::{HybridTrace, LimitCycle};
use crate::maze::{EpisodeLog, Maze};
use crate::policy::{run_closed_loop, GruParams, HiddenHook, RolloutConfig};
use crate::rng::{self, StreamRng};
use crate::stats::CcaModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimensionOrigin {
    CcaTopK,
    VarianceTopK,
    Manual,
}

/// Unique, in-range hidden indices, kept sorted. Empty sets are allowed and
/// make every intervention an identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionSet {
    indices: Vec<usize>,
    pub origin: DimensionOrigin,
}

impl DimensionSet {
    pub fn new(mut indices: Vec<usize>, hidden: usize, origin: DimensionOrigin) -> Result<Self> {
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!("dimension {} listed twice", w[0])));
        }
        if let Some(&bad) = indices.last().filter(|&&i| i >= hidden) {
            return Err(Error::InvalidArgument(format!("dimension {bad} out of range for H={hidden}")));
        }
        Ok(Self { indices, origin })
    }

    pub fn all(hidden: usize) -> Self {
        Self {
            indices: (0..hidden).collect(),
            origin: DimensionOrigin::Manual,
        }
    }

    pub fn empty() -> Self {
        Self {
            indices: Vec::new(),
            origin: DimensionOrigin::Manual,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Hidden dimensions ranked by the L2 norm of their rows across the first
/// `modes` neural projection vectors; the top `count` are returned. Ties go
/// to the lower index. `weights` is H×D_x and maps hidden units to the CCA
/// input space (identity when CCA saw the hidden states directly).
pub fn select_critical_dims(
    cca: &CcaModel,
    weights: Option<&DMatrix<f64>>,
    modes: usize,
    count: usize,
) -> Result<DimensionSet> {
    let scores = coefficient_norms(cca, weights, modes)?;
    let hidden = scores.len();
    if count == 0 || count > hidden {
        return Err(Error::InvalidArgument(format!("cannot select {count} of {hidden} dimensions")));
    }
    let mut order: Vec<usize> = (0..hidden).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(count);
    DimensionSet::new(order, hidden, DimensionOrigin::CcaTopK)
}

/// Per-hidden-unit coefficient norms over the first `modes` directions.
pub fn coefficient_norms(cca: &CcaModel, weights: Option<&DMatrix<f64>>, modes: usize) -> Result<Vec<f64>> {
    let k = cca.proj_neural.ncols();
    if modes == 0 || modes > k {
        return Err(Error::InvalidArgument(format!("model has {k} modes, asked for {modes}")));
    }
    let top = cca.proj_neural.columns(0, modes);
    let coeffs = match weights {
        Some(w) => {
            if w.ncols() != top.nrows() {
                return Err(Error::DimMismatch(format!(
                    "weight map has {} columns, CCA input has {}",
                    w.ncols(),
                    top.nrows()
                )));
            }
            w * top
        }
        None => top.into_owned(),
    };
    Ok(coeffs.row_iter().map(|r| r.norm()).collect())
}

/// Dimensions whose absolute correlation with any of the first `modes`
/// neural variates reaches `threshold`.
pub fn select_by_loading(cca: &CcaModel, x: &DMatrix<f64>, modes: usize, threshold: f64) -> Result<DimensionSet> {
    let k = cca.proj_neural.ncols();
    if modes == 0 || modes > k {
        return Err(Error::InvalidArgument(format!("model has {k} modes, asked for {modes}")));
    }
    let dummy_y = DMatrix::zeros(x.nrows(), cca.proj_behavior.nrows());
    let (u, _) = cca.transform(x, &dummy_y)?;
    let n = x.nrows() as f64;
    let corr = |a: &[f64], b: &[f64]| {
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(p, q)| (p - ma) * (q - mb)).sum();
        let va: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|q| (q - mb).powi(2)).sum();
        if va > 0.0 && vb > 0.0 {
            cov / (va * vb).sqrt()
        } else {
            0.0
        }
    };
    let variates: Vec<Vec<f64>> = (0..modes).map(|i| u.column(i).iter().copied().collect()).collect();
    let picked = (0..x.ncols())
        .filter(|&j| {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            variates.iter().any(|v| corr(&col, v).abs() >= threshold)
        })
        .collect();
    DimensionSet::new(picked, x.ncols(), DimensionOrigin::CcaTopK)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterventionKind {
    Zero,
    Randomize,
    Inject,
    PreserveOnly,
    ShiftScale,
}

impl InterventionKind {
    /// Injection-style probes act once on the initial state; disruptive
    /// ones are sustained.
    pub fn default_schedule(self) -> Schedule {
        match self {
            InterventionKind::Inject | InterventionKind::PreserveOnly => Schedule::OnceAtT0,
            InterventionKind::Zero | InterventionKind::Randomize | InterventionKind::ShiftScale => Schedule::EveryStep,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InterventionKind::Zero => "zero",
            InterventionKind::Randomize => "randomize",
            InterventionKind::Inject => "inject",
            InterventionKind::PreserveOnly => "preserve_only",
            InterventionKind::ShiftScale => "shift_scale",
        }
    }
}

impl FromStr for InterventionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "zero" => InterventionKind::Zero,
            "randomize" => InterventionKind::Randomize,
            "inject" => InterventionKind::Inject,
            "preserve_only" => InterventionKind::PreserveOnly,
            "shift_scale" => InterventionKind::ShiftScale,
            other => return Err(Error::InvalidArgument(format!("unknown intervention kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Before step 0.
    OnceAtT0,
    /// After every GRU update.
    EveryStep,
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "once_at_t0" => Ok(Schedule::OnceAtT0),
            "every_step" => Ok(Schedule::EveryStep),
            other => Err(Error::InvalidArgument(format!("unknown schedule `{other}`"))),
        }
    }
}

impl std::fmt::Display for Schedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Schedule::OnceAtT0 => "once_at_t0",
            Schedule::EveryStep => "every_step",
        })
    }
}

pub const DEFAULT_NOISE_SCALE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct InterventionSpec {
    pub kind: InterventionKind,
    pub target: DimensionSet,
    pub injected_state: Option<Vec<f64>>,
    pub noise_scale: f64,
    pub shift: f64,
    pub scale: f64,
    pub schedule: Schedule,
}

impl InterventionSpec {
    pub fn new(kind: InterventionKind, target: DimensionSet) -> Self {
        Self {
            kind,
            target,
            injected_state: None,
            noise_scale: DEFAULT_NOISE_SCALE,
            shift: 0.0,
            scale: 1.0,
            schedule: kind.default_schedule(),
        }
    }

    pub fn with_state(mut self, state: Vec<f64>) -> Self {
        self.injected_state = Some(state);
        self
    }

    pub fn validate(&self, hidden: usize) -> Result<()> {
        if self.target.indices().last().is_some_and(|&i| i >= hidden) {
            return Err(Error::InvalidArgument(format!("target exceeds H={hidden}")));
        }
        if matches!(self.kind, InterventionKind::Inject | InterventionKind::PreserveOnly) {
            match &self.injected_state {
                None => return Err(Error::MissingInjectedState(self.kind.name())),
                Some(s) if s.len() != hidden => {
                    return Err(Error::DimMismatch(format!("injected state has {} dims, H={hidden}", s.len())))
                }
                Some(_) => {}
            }
        }
        if self.kind == InterventionKind::Randomize && !(self.noise_scale > 0.0) {
            return Err(Error::InvalidArgument("randomize needs noise_scale > 0".into()));
        }
        Ok(())
    }
}

/// Rewrites `h` in place. Only targeted dimensions change, except under
/// `preserve_only`, which also randomizes the complement.
pub fn apply_intervention<R: Rng + ?Sized>(h: &mut [f64], spec: &InterventionSpec, rng: &mut R) -> Result<()> {
    spec.validate(h.len())?;
    let s = spec.noise_scale;
    match spec.kind {
        InterventionKind::Zero => spec.target.indices().iter().for_each(|&i| h[i] = 0.0),
        InterventionKind::Randomize => {
            for &i in spec.target.indices() {
                h[i] = rng.random_range(-s..s);
            }
        }
        InterventionKind::Inject => {
            let src = spec.injected_state.as_ref().expect("validated");
            spec.target.indices().iter().for_each(|&i| h[i] = src[i]);
        }
        InterventionKind::PreserveOnly => {
            let src = spec.injected_state.as_ref().expect("validated");
            for (i, v) in h.iter_mut().enumerate() {
                *v = if spec.target.contains(i) { src[i] } else { rng.random_range(-s..s) };
            }
        }
        InterventionKind::ShiftScale => {
            for &i in spec.target.indices() {
                h[i] = spec.scale * h[i] + spec.shift;
            }
        }
    }
    Ok(())
}

struct InterventionHook<'a> {
    spec: &'a InterventionSpec,
    rng: StreamRng,
}

impl HiddenHook for InterventionHook<'_> {
    fn at_start(&mut self, h: &mut [f64]) {
        if self.spec.schedule == Schedule::OnceAtT0 {
            apply_intervention(h, self.spec, &mut self.rng).expect("spec validated before the run");
        }
    }

    fn after_update(&mut self, _t: usize, h: &mut [f64]) {
        if self.spec.schedule == Schedule::EveryStep {
            apply_intervention(h, self.spec, &mut self.rng).expect("spec validated before the run");
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvergenceTime {
    pub steps: usize,
    pub censored: bool,
}

/// Steps until the first completed trial that matches the run's best trial
/// length; censored at `lifespan` when no trial completes.
pub fn convergence_time(log: &EpisodeLog, lifespan: usize) -> ConvergenceTime {
    let lengths = log.trial_lengths();
    match lengths.iter().min() {
        None => ConvergenceTime {
            steps: lifespan,
            censored: true,
        },
        Some(best) => {
            let i = lengths.iter().position(|l| l == best).expect("minimum is present");
            ConvergenceTime {
                steps: log.trial_boundaries[i] + 1,
                censored: false,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterventionRun {
    pub log: EpisodeLog,
    pub convergence: ConvergenceTime,
}

/// A rollout with the intervention hooked into the hidden-state updates.
/// Action sampling and intervention noise use separate streams of `seed`.
pub fn run_with_intervention(
    params: &GruParams,
    maze: &Maze,
    spec: &InterventionSpec,
    config: RolloutConfig,
    seed: u64,
) -> Result<InterventionRun> {
    spec.validate(params.hidden_size())?;
    let mut hook = InterventionHook {
        spec,
        rng: rng::stream(seed, "intervene", 0, 0),
    };
    let mut act = rng::stream(seed, "act", 0, 0);
    let r = run_closed_loop(params, maze, config, None, &mut hook, false, &mut act);
    let convergence = convergence_time(&r.log, config.lifespan);
    Ok(InterventionRun { log: r.log, convergence })
}

/// Plain rollout under the same streams as [`run_with_intervention`].
pub fn run_plain(params: &GruParams, maze: &Maze, config: RolloutConfig, seed: u64) -> InterventionRun {
    let mut act = rng::stream(seed, "act", 0, 0);
    let r = run_closed_loop(params, maze, config, None, &mut crate::policy::NoHook, false, &mut act);
    let convergence = convergence_time(&r.log, config.lifespan);
    InterventionRun { log: r.log, convergence }
}

/// The hidden state at the point of a detected cycle where the agent stands
/// on the start cell, i.e. the state an optimal trial begins from.
pub fn capture_optimal_state(trace: &HybridTrace, maze: &Maze, cycle: &LimitCycle) -> Option<Vec<f64>> {
    (cycle.anchor..cycle.anchor + cycle.period)
        .find(|&t| trace.states[t].q == maze.start() && t > 0 && trace.log.reached[t - 1])
        .map(|t| trace.states[t].h.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub times: Vec<ConvergenceTime>,
}

impl ConvergenceReport {
    pub fn steps(&self) -> Vec<f64> {
        self.times.iter().map(|t| t.steps as f64).collect()
    }

    pub fn median(&self) -> f64 {
        crate::hds::median(&self.steps())
    }

    /// Interquartile range by nearest rank.
    pub fn iqr(&self) -> f64 {
        let s = self.steps();
        if s.is_empty() {
            return f64::NAN;
        }
        crate::stats::quantile(&s, 0.75) - crate::stats::quantile(&s, 0.25)
    }

    pub fn censored(&self) -> usize {
        self.times.iter().filter(|t| t.censored).count()
    }
}

/// `bin_start,bin_end,count` over `[0, lifespan)` in steps of `bin_width`,
/// plus a final `lifespan,censored` row for runs that never converged.
pub fn convergence_histogram(report: &ConvergenceReport, lifespan: usize, bin_width: usize) -> Result<String> {
    if report.times.is_empty() {
        return Err(Error::InvalidArgument("convergence histogram of zero runs".into()));
    }
    if bin_width == 0 {
        return Err(Error::InvalidArgument("bin width must be >= 1".into()));
    }
    let bins = lifespan.div_ceil(bin_width);
    let mut counts = vec![0usize; bins];
    let mut overflow = 0;
    for t in &report.times {
        if t.censored || t.steps >= lifespan {
            overflow += 1;
        } else {
            counts[t.steps / bin_width] += 1;
        }
    }
    let mut out = String::from("bin_start,bin_end,count\n");
    for (i, c) in counts.iter().enumerate() {
        let _ = writeln!(out, "{},{},{c}", i * bin_width, ((i + 1) * bin_width).min(lifespan));
    }
    let _ = writeln!(out, "{lifespan},censored,{overflow}");
    Ok(out)
}

/// Which dimensions a spec file targets; `critical` is resolved later
/// against a fitted CCA.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetSpec {
    None,
    All,
    Critical { modes: usize, count: usize },
    Manual(Vec<usize>),
}

/// An intervention as written in a `key=value` file:
///
/// ```text
/// kind=randomize
/// target=critical
/// critical_modes=5
/// critical_count=8
/// noise_scale=0.5
/// schedule=every_step
/// ```
///
/// `inject` and `preserve_only` take their state from the cycle captured on
/// each maze.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionFile {
    pub kind: InterventionKind,
    pub target: TargetSpec,
    pub schedule: Schedule,
    pub noise_scale: f64,
    pub shift: f64,
    pub scale: f64,
}

impl InterventionFile {
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut kind = None;
        let mut target = "all".to_string();
        let mut schedule = None;
        let (mut modes, mut count) = (5usize, 8usize);
        let (mut noise_scale, mut shift, mut scale) = (DEFAULT_NOISE_SCALE, 0.0, 1.0);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source_name, i + 1, "expected key=value"))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::parse(source_name, i + 1, format!("bad {what} `{value}`"));
            match key {
                "kind" => kind = Some(value.parse::<InterventionKind>().map_err(|_| bad("kind"))?),
                "target" => target = value.to_string(),
                "schedule" => schedule = Some(value.parse::<Schedule>().map_err(|_| bad("schedule"))?),
                "critical_modes" => modes = value.parse().map_err(|_| bad("critical_modes"))?,
                "critical_count" => count = value.parse().map_err(|_| bad("critical_count"))?,
                "noise_scale" => noise_scale = value.parse().map_err(|_| bad("noise_scale"))?,
                "shift" => shift = value.parse().map_err(|_| bad("shift"))?,
                "scale" => scale = value.parse().map_err(|_| bad("scale"))?,
                other => return Err(Error::Config(format!("{source_name}: unknown key `{other}`"))),
            }
        }
        let kind = kind.ok_or_else(|| Error::Config(format!("{source_name}: missing required key `kind`")))?;
        let target = match target.as_str() {
            "none" => TargetSpec::None,
            "all" => TargetSpec::All,
            "critical" => TargetSpec::Critical { modes, count },
            list => TargetSpec::Manual(
                list.split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("{source_name}: bad target `{list}`")))?,
            ),
        };
        Ok(Self {
            kind,
            target,
            schedule: schedule.unwrap_or(kind.default_schedule()),
            noise_scale,
            shift,
            scale,
        })
    }

    pub fn to_text(&self) -> String {
        let target = match &self.target {
            TargetSpec::None => "target=none\n".to_string(),
            TargetSpec::All => "target=all\n".to_string(),
            TargetSpec::Critical { modes, count } => {
                format!("target=critical\ncritical_modes={modes}\ncritical_count={count}\n")
            }
            TargetSpec::Manual(v) => format!(
                "target={}\n",
                v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
            ),
        };
        format!(
            "kind={}\n{target}schedule={}\nnoise_scale={}\nshift={}\nscale={}\n",
            self.kind.name(),
            self.schedule,
            self.noise_scale,
            self.shift,
            self.scale
        )
    }

    /// Builds a concrete spec once the target set and injected state are
    /// known.
    pub fn instantiate(&self, target: DimensionSet, injected_state: Option<Vec<f64>>) -> InterventionSpec {
        InterventionSpec {
            kind: self.kind,
            target,
            injected_state,
            noise_scale: self.noise_scale,
            shift: self.shift,
            scale: self.scale,
            schedule: self.schedule,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{corridor, goal_seeker};
    use crate::maze::{generate_maze, Position};
    use crate::policy::{rollout, NetDims};
    use proptest::prelude::*;
    use rand::Rng;

    fn spec(kind: InterventionKind, dims: &[usize], h: usize) -> InterventionSpec {
        InterventionSpec::new(kind, DimensionSet::new(dims.to_vec(), h, DimensionOrigin::Manual).unwrap())
    }

    fn model_with(proj: DMatrix<f64>) -> CcaModel {
        let (dx, k) = proj.shape();
        CcaModel {
            proj_neural: proj,
            proj_behavior: DMatrix::zeros(3, k),
            correlations: vec![0.5; k],
            ridge: 0.0,
            mean_neural: vec![0.0; dx],
            mean_behavior: vec![0.0; 3],
        }
    }

    #[test]
    fn dimension_set_validation() {
        assert!(DimensionSet::new(vec![1, 1], 4, DimensionOrigin::Manual).is_err());
        assert!(DimensionSet::new(vec![4], 4, DimensionOrigin::Manual).is_err());
        let s = DimensionSet::new(vec![3, 0], 4, DimensionOrigin::Manual).unwrap();
        assert_eq!(s.indices(), &[0, 3]);
        assert!(s.contains(3) && !s.contains(1));
    }

    #[test]
    fn single_nonzero_row_is_selected() {
        let mut proj = DMatrix::zeros(6, 2);
        proj[(4, 0)] = 0.3;
        proj[(4, 1)] = -2.0;
        let s = select_critical_dims(&model_with(proj), None, 2, 1).unwrap();
        assert_eq!(s.indices(), &[4]);
        assert!(select_critical_dims(&model_with(DMatrix::zeros(6, 2)), None, 2, 7).is_err());
        assert!(select_critical_dims(&model_with(DMatrix::zeros(6, 2)), None, 3, 1).is_err());
    }

    proptest! {
        #[test]
        fn selection_matches_norm_ranking(seed in 0u64..300, count in 1usize..8, modes in 1usize..4) {
            let mut r = rng::seeded(seed);
            let proj = DMatrix::from_fn(8, 3, |_, _| r.random_range(-1.0..1.0));
            let norms: Vec<f64> = (0..8)
                .map(|i| (0..modes).map(|j| proj[(i, j)] * proj[(i, j)]).sum::<f64>().sqrt())
                .collect();
            let mut want: Vec<usize> = (0..8).collect();
            want.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap());
            want.truncate(count);
            want.sort_unstable();
            let got = select_critical_dims(&model_with(proj), None, modes, count).unwrap();
            prop_assert_eq!(got.indices(), &want[..]);
        }

        #[test]
        fn only_contracted_dims_change(
            seed in 0u64..300,
            dims in proptest::collection::btree_set(0usize..10, 0..10),
            kind in prop_oneof![
                Just(InterventionKind::Zero),
                Just(InterventionKind::Randomize),
                Just(InterventionKind::Inject),
                Just(InterventionKind::ShiftScale),
            ],
        ) {
            let mut r = rng::seeded(seed);
            let h0: Vec<f64> = (0..10).map(|_| r.random_range(-0.9..0.9)).collect();
            let mut s = spec(kind, &dims.iter().copied().collect::<Vec<_>>(), 10).with_state(vec![0.77; 10]);
            s.shift = 0.1;
            s.scale = -2.0;
            let mut h = h0.clone();
            apply_intervention(&mut h, &s, &mut r).unwrap();
            for i in 0..10 {
                if !dims.contains(&i) {
                    prop_assert_eq!(h[i], h0[i]);
                }
            }
            if kind == InterventionKind::Randomize {
                prop_assert!(dims.iter().all(|&i| h[i].abs() < 0.5));
            }
        }
    }

    #[test]
    fn zero_on_every_dimension_gives_zero_vector() {
        let mut h = vec![0.3, -0.2, 0.9];
        apply_intervention(&mut h, &spec(InterventionKind::Zero, &[0, 1, 2], 3), &mut rng::seeded(0)).unwrap();
        assert_eq!(h, vec![0.0; 3]);
    }

    #[test]
    fn preserve_only_with_full_target_copies_the_state() {
        let x = vec![0.1, -0.4, 0.25];
        let mut h = vec![0.9; 3];
        let s = spec(InterventionKind::PreserveOnly, &[0, 1, 2], 3).with_state(x.clone());
        apply_intervention(&mut h, &s, &mut rng::seeded(0)).unwrap();
        assert_eq!(h, x);
        let mut h = vec![0.9; 3];
        let partial = spec(InterventionKind::PreserveOnly, &[1], 3).with_state(x.clone());
        apply_intervention(&mut h, &partial, &mut rng::seeded(0)).unwrap();
        assert_eq!(h[1], -0.4);
        assert!(h[0] != 0.9 && h[2] != 0.9 && h[0].abs() < 0.5);
    }

    #[test]
    fn injection_needs_a_state() {
        let mut h = vec![0.0; 2];
        let s = spec(InterventionKind::Inject, &[0], 2);
        assert!(matches!(
            apply_intervention(&mut h, &s, &mut rng::seeded(0)),
            Err(Error::MissingInjectedState("inject"))
        ));
        let mut bad = spec(InterventionKind::Randomize, &[0], 2);
        bad.noise_scale = 0.0;
        assert!(apply_intervention(&mut h, &bad, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn identity_interventions_match_plain_rollout() {
        let m = generate_maze(17, 0.3, 1000).unwrap();
        let p = GruParams::random(NetDims::maze(10), 1.0, &mut rng::seeded(3));
        let cfg = RolloutConfig::greedy(150);
        let plain = run_plain(&p, &m, cfg, 5);
        let reference = rollout(&p, &m, cfg, &mut rng::seeded(0));
        assert_eq!(plain.log, reference.log);
        for s in [
            InterventionSpec::new(InterventionKind::Zero, DimensionSet::empty()),
            InterventionSpec::new(InterventionKind::Randomize, DimensionSet::empty()),
            InterventionSpec::new(InterventionKind::Inject, DimensionSet::all(10)).with_state(vec![0.0; 10]),
        ] {
            let run = run_with_intervention(&p, &m, &s, cfg, 5).unwrap();
            assert_eq!(run.log, plain.log, "{:?}", s.kind);
        }
    }

    #[test]
    fn convergence_time_uses_first_best_trial() {
        let log = EpisodeLog {
            positions: vec![Position::new(0, 0); 20],
            actions: vec![crate::maze::Action::Up; 20],
            reached: vec![false; 20],
            trial_boundaries: vec![5, 8, 12, 15, 18],
        };
        // Trial lengths 6, 3, 4, 3, 3: the first length-3 trial ends at step 8.
        assert_eq!(
            convergence_time(&log, 20),
            ConvergenceTime {
                steps: 9,
                censored: false
            }
        );
        assert_eq!(
            convergence_time(&EpisodeLog::default(), 20),
            ConvergenceTime {
                steps: 20,
                censored: true
            }
        );
    }

    #[test]
    fn goal_seeker_converges_on_its_first_trial() {
        let run = run_plain(&goal_seeker(4), &corridor(), RolloutConfig::greedy(20), 0);
        assert_eq!(run.convergence.steps, 2);
    }

    #[test]
    fn histogram_conserves_runs() {
        let times = |v: &[(usize, bool)]| ConvergenceReport {
            times: v
                .iter()
                .map(|&(steps, censored)| ConvergenceTime { steps, censored })
                .collect(),
        };
        let all_ten = times(&[(10, false); 7]);
        let csv = convergence_histogram(&all_ten, 200, 50).unwrap();
        assert_eq!(csv.lines().nth(1), Some("0,50,7"));
        let mixed = times(&[(10, false), (199, false), (200, true), (60, false)]);
        let csv = convergence_histogram(&mixed, 200, 50).unwrap();
        let total: usize = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, 4);
        assert_eq!(csv.lines().last(), Some("200,censored,1"));
        assert!(convergence_histogram(&times(&[]), 200, 50).is_err());
        assert_eq!(mixed.median(), 129.5);
    }

    #[test]
    fn spec_file_round_trip_and_errors() {
        let text = "kind=randomize\ntarget=critical\ncritical_modes=3\ncritical_count=4\n# comment\n";
        let f = InterventionFile::parse(text, "spec").unwrap();
        assert_eq!(f.schedule, Schedule::EveryStep);
        assert_eq!(f.target, TargetSpec::Critical { modes: 3, count: 4 });
        assert_eq!(InterventionFile::parse(&f.to_text(), "spec").unwrap(), f);
        let manual = InterventionFile::parse("kind=inject\ntarget=0,3\n", "spec").unwrap();
        assert_eq!(manual.schedule, Schedule::OnceAtT0);
        assert_eq!(manual.target, TargetSpec::Manual(vec![0, 3]));
        let err = InterventionFile::parse("target=all\n", "spec").unwrap_err();
        assert!(err.to_string().contains("`kind`"));
        assert!(InterventionFile::parse("kind=zero\ncolour=red\n", "spec").is_err());
    }
}
