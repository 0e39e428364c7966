//! GRU policy: recurrent cell, linear softmax readout and the flat parameter
//! layout used by the evolution strategy.

mod checkpoint;
mod rollout;

pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_FORMAT_VERSION};
pub use rollout::{rollout, rollout_from, run_closed_loop, HiddenHook, NoHook, Rollout, RolloutConfig};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::maze::{Action, OBSERVATION_DIM};

pub const DEFAULT_HIDDEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NetDims {
    pub input: usize,
    pub hidden: usize,
    pub actions: usize,
}

impl NetDims {
    /// Maze-agent dimensions: one-hot 3×3 input, four actions.
    pub const fn maze(hidden: usize) -> Self {
        Self {
            input: OBSERVATION_DIM,
            hidden,
            actions: Action::COUNT,
        }
    }

    pub fn parameter_count(&self) -> usize {
        let (d, h, a) = (self.input, self.hidden, self.actions);
        3 * h * d + 3 * h * h + 3 * h + a * h + a
    }
}

/// Weights of the GRU cell and its readout. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    dims: NetDims,
    pub w_z: Vec<f64>,
    pub w_r: Vec<f64>,
    pub w_h: Vec<f64>,
    pub u_z: Vec<f64>,
    pub u_r: Vec<f64>,
    pub u_h: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
    pub readout_w: Vec<f64>,
    pub readout_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState(pub Vec<f64>);

impl HiddenState {
    pub fn zeros(hidden: usize) -> Self {
        Self(vec![0.0; hidden])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ActionMode {
    #[default]
    Greedy,
    Sample,
}

impl std::str::FromStr for ActionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(ActionMode::Greedy),
            "sample" => Ok(ActionMode::Sample),
            other => Err(Error::InvalidArgument(format!("unknown action mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for ActionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ActionMode::Greedy => "greedy",
            ActionMode::Sample => "sample",
        })
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl GruParams {
    pub fn zeros(dims: NetDims) -> Self {
        let (d, h, a) = (dims.input, dims.hidden, dims.actions);
        Self {
            dims,
            w_z: vec![0.0; h * d],
            w_r: vec![0.0; h * d],
            w_h: vec![0.0; h * d],
            u_z: vec![0.0; h * h],
            u_r: vec![0.0; h * h],
            u_h: vec![0.0; h * h],
            b_z: vec![0.0; h],
            b_r: vec![0.0; h],
            b_h: vec![0.0; h],
            readout_w: vec![0.0; a * h],
            readout_b: vec![0.0; a],
        }
    }

    /// Gaussian weights with standard deviation `scale / sqrt(fan_in)`; biases zero.
    pub fn random<R: Rng + ?Sized>(dims: NetDims, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(dims);
        let in_std = scale / (dims.input as f64).sqrt();
        let rec_std = scale / (dims.hidden as f64).sqrt();
        let mut fill = |v: &mut Vec<f64>, std: f64| {
            for x in v.iter_mut() {
                let n: f64 = StandardNormal.sample(rng);
                *x = std * n;
            }
        };
        fill(&mut p.w_z, in_std);
        fill(&mut p.w_r, in_std);
        fill(&mut p.w_h, in_std);
        fill(&mut p.u_z, rec_std);
        fill(&mut p.u_r, rec_std);
        fill(&mut p.u_h, rec_std);
        fill(&mut p.readout_w, rec_std);
        p
    }

    pub fn dims(&self) -> NetDims {
        self.dims
    }

    pub fn hidden_size(&self) -> usize {
        self.dims.hidden
    }

    fn blocks(&self) -> [&Vec<f64>; 11] {
        [
            &self.w_z,
            &self.w_r,
            &self.w_h,
            &self.u_z,
            &self.u_r,
            &self.u_h,
            &self.b_z,
            &self.b_r,
            &self.b_h,
            &self.readout_w,
            &self.readout_b,
        ]
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 11] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
            &mut self.readout_w,
            &mut self.readout_b,
        ]
    }

    /// Concatenates `W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h, readout_w, readout_b`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dims.parameter_count());
        for block in self.blocks() {
            out.extend_from_slice(block);
        }
        out
    }

    pub fn unflatten(flat: &[f64], dims: NetDims) -> Result<Self> {
        if flat.len() != dims.parameter_count() {
            return Err(Error::LengthMismatch {
                expected: dims.parameter_count(),
                got: flat.len(),
            });
        }
        let mut p = Self::zeros(dims);
        let mut offset = 0;
        for block in p.blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_hidden(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.dims.hidden {
            return Err(Error::DimMismatch(format!(
                "hidden state has {} entries, network expects {}",
                h.len(),
                self.dims.hidden
            )));
        }
        Ok(())
    }

    /// Dense GRU update `h' = (1 - z)∘h + z∘ĥ`.
    pub fn gru_forward(&self, h: &HiddenState, x: &[f64]) -> Result<HiddenState> {
        self.check_hidden(&h.0)?;
        if x.len() != self.dims.input {
            return Err(Error::DimMismatch(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.dims.input
            )));
        }
        let (d, n) = (self.dims.input, self.dims.hidden);
        let h = &h.0;
        let dense = |w: &[f64], i: usize| -> f64 {
            w[i * d..(i + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum()
        };
        let mut out = vec![0.0; n];
        let mut scratch = GruScratch::new(n);
        for i in 0..n {
            scratch.wx_z[i] = dense(&self.w_z, i);
            scratch.wx_r[i] = dense(&self.w_r, i);
            scratch.wx_h[i] = dense(&self.w_h, i);
        }
        self.finish_update(h, &mut scratch, &mut out);
        Ok(HiddenState(out))
    }

    /// GRU update for a one-hot input given by the indices of its ones
    /// (ascending). Bit-identical to [`GruParams::gru_forward`] on the
    /// equivalent dense vector.
    pub(crate) fn gru_step_one_hot(
        &self,
        h: &[f64],
        active: &[usize],
        scratch: &mut GruScratch,
        out: &mut [f64],
    ) {
        let d = self.dims.input;
        for i in 0..self.dims.hidden {
            let row = i * d;
            let (mut z, mut r, mut c) = (0.0, 0.0, 0.0);
            for &j in active {
                z += self.w_z[row + j];
                r += self.w_r[row + j];
                c += self.w_h[row + j];
            }
            scratch.wx_z[i] = z;
            scratch.wx_r[i] = r;
            scratch.wx_h[i] = c;
        }
        self.finish_update(h, scratch, out);
    }

    fn finish_update(&self, h: &[f64], s: &mut GruScratch, out: &mut [f64]) {
        let n = self.dims.hidden;
        let dot = |w: &[f64], i: usize, v: &[f64]| -> f64 {
            w[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum()
        };
        for i in 0..n {
            s.z[i] = logistic(s.wx_z[i] + dot(&self.u_z, i, h) + self.b_z[i]);
            let r = logistic(s.wx_r[i] + dot(&self.u_r, i, h) + self.b_r[i]);
            s.rh[i] = r * h[i];
        }
        for i in 0..n {
            let cand = (s.wx_h[i] + dot(&self.u_h, i, &s.rh) + self.b_h[i]).tanh();
            out[i] = (1.0 - s.z[i]) * h[i] + s.z[i] * cand;
        }
    }

    pub fn logits(&self, h: &[f64]) -> Vec<f64> {
        let n = self.dims.hidden;
        (0..self.dims.actions)
            .map(|a| {
                let row = &self.readout_w[a * n..(a + 1) * n];
                row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + self.readout_b[a]
            })
            .collect()
    }

    pub fn action_distribution(&self, h: &HiddenState) -> Result<ActionDistribution> {
        self.check_hidden(&h.0)?;
        Ok(softmax(&self.logits(&h.0)))
    }
}

/// Reusable buffers for the GRU update.
#[derive(Debug, Clone)]
pub(crate) struct GruScratch {
    wx_z: Vec<f64>,
    wx_r: Vec<f64>,
    wx_h: Vec<f64>,
    z: Vec<f64>,
    rh: Vec<f64>,
}

impl GruScratch {
    pub(crate) fn new(hidden: usize) -> Self {
        Self {
            wx_z: vec![0.0; hidden],
            wx_r: vec![0.0; hidden],
            wx_h: vec![0.0; hidden],
            z: vec![0.0; hidden],
            rh: vec![0.0; hidden],
        }
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> ActionDistribution {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    ActionDistribution {
        probs: exps.into_iter().map(|e| e / total).collect(),
    }
}

impl ActionDistribution {
    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Greedy picks the argmax; sampling draws by inverse CDF and consumes one
/// uniform from `rng`. Greedy never touches `rng`.
pub fn select_action<R: Rng + ?Sized>(dist: &ActionDistribution, mode: ActionMode, rng: &mut R) -> usize {
    match mode {
        ActionMode::Greedy => dist.argmax(),
        ActionMode::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut last_positive = 0;
            for (i, &p) in dist.probs.iter().enumerate() {
                if p > 0.0 {
                    last_positive = i;
                }
                acc += p;
                if u < acc && p > 0.0 {
                    return i;
                }
            }
            // Rounding can leave the cumulative sum just below 1.
            last_positive
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    /// Scalar-loop GRU written independently of the vectorised path.
    fn gru_oracle(p: &GruParams, h: &[f64], x: &[f64]) -> Vec<f64> {
        let (d, n) = (p.dims.input, p.dims.hidden);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut z = vec![0.0; n];
        let mut r = vec![0.0; n];
        for i in 0..n {
            let mut az = p.b_z[i];
            let mut ar = p.b_r[i];
            for j in 0..d {
                az += p.w_z[i * d + j] * x[j];
                ar += p.w_r[i * d + j] * x[j];
            }
            for j in 0..n {
                az += p.u_z[i * n + j] * h[j];
                ar += p.u_r[i * n + j] * h[j];
            }
            z[i] = sig(az);
            r[i] = sig(ar);
        }
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut ac = p.b_h[i];
            for j in 0..d {
                ac += p.w_h[i * d + j] * x[j];
            }
            for j in 0..n {
                ac += p.u_h[i * n + j] * (r[j] * h[j]);
            }
            out[i] = (1.0 - z[i]) * h[i] + z[i] * ac.tanh();
        }
        out
    }

    fn random_instance(seed: u64, d: usize, n: usize) -> (GruParams, Vec<f64>, Vec<f64>) {
        use rand::Rng;
        let mut r = rng::seeded(seed);
        let dims = NetDims { input: d, hidden: n, actions: 4 };
        let flat: Vec<f64> = (0..dims.parameter_count()).map(|_| r.random_range(-2.0..2.0)).collect();
        let p = GruParams::unflatten(&flat, dims).unwrap();
        let h = (0..n).map(|_| r.random_range(-0.99..0.99)).collect();
        let x = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        (p, h, x)
    }

    #[test]
    fn zero_params_keep_zero_state() {
        let p = GruParams::zeros(NetDims::maze(8));
        let x = [1.0; OBSERVATION_DIM];
        let h = p.gru_forward(&HiddenState::zeros(8), &x).unwrap();
        assert!(h.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        for seed in 0..100 {
            let d = 1 + (seed as usize % 4);
            let n = 1 + (seed as usize / 4 % 4);
            let (p, h, x) = random_instance(seed, d, n);
            let got = p.gru_forward(&HiddenState(h.clone()), &x).unwrap();
            let want = gru_oracle(&p, &h, &x);
            for (a, b) in got.0.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12, "seed {seed}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn one_hot_path_is_bit_identical_to_dense() {
        use rand::Rng;
        let mut r = rng::seeded(3);
        let p = GruParams::random(NetDims::maze(16), 1.5, &mut r);
        let h: Vec<f64> = (0..16).map(|_| r.random_range(-0.9..0.9)).collect();
        let active = [0usize, 5, 9, 12, 17, 21, 24, 30, 35];
        let mut x = vec![0.0; OBSERVATION_DIM];
        for &i in &active {
            x[i] = 1.0;
        }
        let dense = p.gru_forward(&HiddenState(h.clone()), &x).unwrap();
        let mut out = vec![0.0; 16];
        p.gru_step_one_hot(&h, &active, &mut GruScratch::new(16), &mut out);
        assert_eq!(dense.0, out);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = GruParams::zeros(NetDims::maze(4));
        assert!(matches!(
            p.gru_forward(&HiddenState::zeros(3), &[0.0; OBSERVATION_DIM]),
            Err(Error::DimMismatch(_))
        ));
        assert!(matches!(
            p.gru_forward(&HiddenState::zeros(4), &[0.0; 3]),
            Err(Error::DimMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn hidden_state_stays_bounded(seed in 0u64..10_000) {
            let (p, h, x) = random_instance(seed, 3, 4);
            let out = p.gru_forward(&HiddenState(h), &x).unwrap();
            prop_assert!(out.0.iter().all(|v| v.abs() < 1.0));
        }

        #[test]
        fn softmax_is_shift_invariant(l in proptest::collection::vec(-20.0f64..20.0, 4), c in -50.0f64..50.0) {
            let a = softmax(&l);
            let shifted: Vec<f64> = l.iter().map(|v| v + c).collect();
            let b = softmax(&shifted);
            for (x, y) in a.probs.iter().zip(&b.probs) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn flatten_round_trip_is_exact(seed in 0u64..1000) {
            let (p, _, _) = random_instance(seed, 3, 2);
            let back = GruParams::unflatten(&p.flatten(), p.dims()).unwrap();
            prop_assert_eq!(back, p);
        }
    }

    #[test]
    fn zero_readout_is_uniform() {
        let p = GruParams::zeros(NetDims::maze(4));
        let d = p.action_distribution(&HiddenState(vec![0.3, -0.2, 0.1, 0.9])).unwrap();
        assert_eq!(d.probs, vec![0.25; 4]);
        assert_eq!(select_action(&d, ActionMode::Greedy, &mut rng::seeded(0)), 0);
    }

    #[test]
    fn peaked_logits_pick_first_action() {
        let d = softmax(&[10.0, 0.0, 0.0, 0.0]);
        assert_eq!(d.argmax(), 0);
        assert!(d.probs[0] > 0.999);
    }

    #[test]
    fn point_mass_always_sampled() {
        let d = ActionDistribution { probs: vec![0.0, 0.0, 1.0, 0.0] };
        let mut r = rng::seeded(9);
        for _ in 0..1000 {
            assert_eq!(select_action(&d, ActionMode::Sample, &mut r), 2);
        }
    }

    #[test]
    fn sampling_frequencies_within_binomial_bounds() {
        let probs = [0.1, 0.2, 0.3, 0.4];
        let d = ActionDistribution { probs: probs.to_vec() };
        let mut r = rng::seeded(2024);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[select_action(&d, ActionMode::Sample, &mut r)] += 1;
        }
        for (c, p) in counts.iter().zip(probs) {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            let dev = (*c as f64 - n as f64 * p).abs();
            assert!(dev <= 3.0 * sd, "count {c} vs expected {} (3σ = {})", n as f64 * p, 3.0 * sd);
        }
    }

    #[test]
    fn parameter_count_and_layout() {
        let dims = NetDims { input: 3, hidden: 2, actions: 4 };
        assert_eq!(dims.parameter_count(), 48);
        let flat: Vec<f64> = (0..48).map(f64::from).collect();
        let p = GruParams::unflatten(&flat, dims).unwrap();
        assert_eq!(p.w_z, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(p.u_z[0], 18.0);
        assert_eq!(p.b_z, vec![30.0, 31.0]);
        assert_eq!(p.readout_b, vec![44.0, 45.0, 46.0, 47.0]);
        assert!(matches!(
            GruParams::unflatten(&flat[..47], dims),
            Err(Error::LengthMismatch { expected: 48, got: 47 })
        ));
    }

    #[test]
    fn perturbing_one_index_changes_one_entry() {
        let dims = NetDims { input: 3, hidden: 2, actions: 4 };
        let base = GruParams::zeros(dims);
        for idx in 0..48 {
            let mut flat = base.flatten();
            flat[idx] = 1.0;
            let p = GruParams::unflatten(&flat, dims).unwrap();
            let changed = p.flatten().iter().filter(|&&v| v != 0.0).count();
            assert_eq!(changed, 1);
            assert_ne!(p, base);
        }
    }
}
