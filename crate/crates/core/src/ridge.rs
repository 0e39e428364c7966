//! Ridge images: each trajectory point radiates `max(0, α − β·d)` onto a
//! fixed pixel grid and overlapping fields are fused by maximum. Paths of
//! any length become same-sized grayscale images compared by L2 distance.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::maze::Position;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeConfig {
    pub image_size: usize,
    /// Peak intensity at a trajectory point.
    pub alpha: f64,
    /// Intensity lost per pixel of Euclidean distance.
    pub beta: f64,
    /// Pixels per maze cell.
    pub embed_scale: f64,
    /// Pixel coordinates of cell (0, 0).
    pub embed_offset: (f64, f64),
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            image_size: 21,
            alpha: 1.0,
            beta: 0.25,
            embed_scale: 2.0,
            embed_offset: (1.0, 1.0),
        }
    }
}

impl RidgeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::InvalidArgument("ridge alpha and beta must be > 0".into()));
        }
        if self.image_size < 3 {
            return Err(Error::InvalidArgument("ridge image_size must be >= 3".into()));
        }
        if !(self.embed_scale > 0.0) {
            return Err(Error::InvalidArgument("ridge embed_scale must be > 0".into()));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.image_size * self.image_size
    }
}

/// Sequence of maze cells visited during one trial.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory2D {
    pub points: Vec<(f64, f64)>,
}

impl Trajectory2D {
    pub fn from_cells(cells: &[Position]) -> Self {
        Self {
            points: cells.iter().map(|p| (p.x as f64, p.y as f64)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeImage {
    size: usize,
    /// Row-major: `pixels[v * size + u]` for column `u`, row `v`.
    pixels: Vec<f64>,
}

impl RidgeImage {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            pixels: vec![0.0; size * size],
        }
    }

    pub fn from_pixels(size: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != size * size {
            return Err(Error::DimMismatch(format!(
                "{} pixels for a {size}x{size} image",
                pixels.len()
            )));
        }
        Ok(Self { size, pixels })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.pixels[v * self.size + u]
    }

    /// Plain-text PGM (P2), intensities quantised linearly onto `0..=255`.
    pub fn to_pgm(&self, alpha: f64) -> String {
        let mut out = format!("P2\n{} {}\n255\n", self.size, self.size);
        for row in self.pixels.chunks(self.size) {
            let line: Vec<String> = row
                .iter()
                .map(|&v| ((v / alpha).clamp(0.0, 1.0) * 255.0).round().to_string())
                .collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    /// Full-precision CSV, one image row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.pixels.chunks(self.size) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }
}

/// Maps cell coordinates to pixel coordinates; every point must keep a
/// one-pixel margin from the image border.
pub fn embed_trajectory(traj: &Trajectory2D, config: &RidgeConfig) -> Result<Vec<(f64, f64)>> {
    let max = (config.image_size - 2) as f64;
    traj.points
        .iter()
        .map(|&(x, y)| {
            let px = config.embed_scale * x + config.embed_offset.0;
            let py = config.embed_scale * y + config.embed_offset.1;
            if px < 1.0 || py < 1.0 || px > max || py > max {
                Err(Error::OutOfFrame {
                    x: px,
                    y: py,
                    size: config.image_size,
                })
            } else {
                Ok((px, py))
            }
        })
        .collect()
}

/// Renders already-embedded pixel points.
pub fn render_points(points: &[(f64, f64)], config: &RidgeConfig) -> RidgeImage {
    let size = config.image_size;
    let mut img = RidgeImage::zeros(size);
    let reach = config.alpha / config.beta;
    let clamp_range = |c: f64| {
        let lo = (c - reach).floor().max(0.0) as usize;
        let hi = ((c + reach).ceil() as usize).min(size - 1);
        lo..=hi
    };
    for &(px, py) in points {
        for v in clamp_range(py) {
            let dy = v as f64 - py;
            for u in clamp_range(px) {
                let dx = u as f64 - px;
                let value = config.alpha - config.beta * (dx * dx + dy * dy).sqrt();
                let slot = &mut img.pixels[v * size + u];
                if value > *slot {
                    *slot = value;
                }
            }
        }
    }
    img
}

pub fn ridge_image(traj: &Trajectory2D, config: &RidgeConfig) -> Result<RidgeImage> {
    if traj.points.is_empty() {
        return Err(Error::InvalidArgument("ridge image of an empty trajectory".into()));
    }
    let points = embed_trajectory(traj, config)?;
    Ok(render_points(&points, config))
}

/// Euclidean distance over pixels.
pub fn ridge_distance(a: &RidgeImage, b: &RidgeImage) -> Result<f64> {
    if a.size != b.size {
        return Err(Error::DimMismatch(format!(
            "images are {}x{} and {}x{}",
            a.size, a.size, b.size, b.size
        )));
    }
    Ok(a.pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// One flattened ridge image per row.
pub fn batch_ridge(trajectories: &[Trajectory2D], config: &RidgeConfig) -> Result<DMatrix<f64>> {
    let cols = config.pixels();
    let mut m = DMatrix::zeros(trajectories.len(), cols);
    for (i, traj) in trajectories.iter().enumerate() {
        let img = ridge_image(traj, config).map_err(|e| {
            Error::InvalidArgument(format!("trajectory {i}: {e}"))
        })?;
        for (j, &v) in img.pixels.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Per-pixel maximum over every point, no bounding boxes.
    fn ridge_oracle(points: &[(f64, f64)], cfg: &RidgeConfig) -> Vec<f64> {
        let n = cfg.image_size;
        let mut out = vec![0.0; n * n];
        for v in 0..n {
            for u in 0..n {
                let mut best: f64 = 0.0;
                for &(px, py) in points {
                    let d = ((u as f64 - px).powi(2) + (v as f64 - py).powi(2)).sqrt();
                    best = best.max(cfg.alpha - cfg.beta * d);
                }
                out[v * n + u] = best;
            }
        }
        out
    }

    fn cells(points: &[(usize, usize)]) -> Trajectory2D {
        Trajectory2D {
            points: points.iter().map(|&(x, y)| (x as f64, y as f64)).collect(),
        }
    }

    #[test]
    fn embedding_arithmetic() {
        let cfg = RidgeConfig::default();
        assert_eq!(embed_trajectory(&cells(&[(0, 0)]), &cfg).unwrap(), vec![(1.0, 1.0)]);
        assert_eq!(embed_trajectory(&cells(&[(9, 9)]), &cfg).unwrap(), vec![(19.0, 19.0)]);
        let identity = RidgeConfig {
            embed_scale: 1.0,
            embed_offset: (0.0, 0.0),
            ..cfg
        };
        assert!(matches!(
            embed_trajectory(&cells(&[(0, 0)]), &identity),
            Err(Error::OutOfFrame { .. })
        ));
        let oversized = RidgeConfig { embed_scale: 3.0, ..cfg };
        assert!(embed_trajectory(&cells(&[(9, 9)]), &oversized).is_err());
    }

    #[test]
    fn single_point_profile() {
        let cfg = RidgeConfig::default();
        // Cell (4, 4) embeds at pixel (9, 9).
        let img = ridge_image(&cells(&[(4, 4)]), &cfg).unwrap();
        assert_eq!(img.get(9, 9), 1.0);
        assert_eq!(img.get(11, 9), 0.5);
        assert_eq!(img.get(9, 13), 0.0);
        assert_eq!(img.get(13, 13), 0.0);
        assert!(img.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn duplicate_points_are_idempotent() {
        let cfg = RidgeConfig::default();
        let once = ridge_image(&cells(&[(2, 3)]), &cfg).unwrap();
        let twice = ridge_image(&cells(&[(2, 3), (2, 3)]), &cfg).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn empty_trajectory_is_rejected() {
        assert!(ridge_image(&Trajectory2D::default(), &RidgeConfig::default()).is_err());
    }

    proptest! {
        #[test]
        fn matches_brute_force_oracle(
            a in (0usize..10, 0usize..10),
            b in (0usize..10, 0usize..10),
            alpha in 0.2f64..3.0,
            beta in 0.05f64..1.0,
        ) {
            let cfg = RidgeConfig { alpha, beta, ..RidgeConfig::default() };
            let traj = cells(&[a, b]);
            let img = ridge_image(&traj, &cfg).unwrap();
            let want = ridge_oracle(&embed_trajectory(&traj, &cfg).unwrap(), &cfg);
            for (x, y) in img.pixels().iter().zip(&want) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn point_order_never_matters(mut pts in proptest::collection::vec((0usize..10, 0usize..10), 1..12)) {
            let cfg = RidgeConfig::default();
            let a = ridge_image(&cells(&pts), &cfg).unwrap();
            pts.reverse();
            pts.rotate_left(1);
            let b = ridge_image(&cells(&pts), &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn distance_basics() {
        let cfg = RidgeConfig::default();
        let a = ridge_image(&cells(&[(1, 1), (1, 2)]), &cfg).unwrap();
        assert_eq!(ridge_distance(&a, &a).unwrap(), 0.0);
        assert!(matches!(
            ridge_distance(&a, &RidgeImage::zeros(5)),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn nearby_shift_costs_less_than_far_shift() {
        let cfg = RidgeConfig {
            embed_scale: 1.0,
            embed_offset: (4.0, 4.0),
            ..RidgeConfig::default()
        };
        let base: Vec<(usize, usize)> = (0..6).map(|x| (x, 3)).collect();
        let img = ridge_image(&cells(&base), &cfg).unwrap();
        let shifted = |dy: usize| {
            let pts: Vec<(usize, usize)> = base.iter().map(|&(x, y)| (x, y + dy)).collect();
            ridge_distance(&img, &ridge_image(&cells(&pts), &cfg).unwrap()).unwrap()
        };
        let mut prev = 0.0;
        for dy in 1..=5 {
            let d = shifted(dy);
            assert!(d > prev, "shift {dy}: {d} <= {prev}");
            prev = d;
        }
    }

    #[test]
    fn more_overlap_means_smaller_distance() {
        // Reference: straight run along row 2. Family member k shares the
        // first k cells and then drops to row 7.
        let cfg = RidgeConfig::default();
        let reference: Vec<(usize, usize)> = (0..9).map(|x| (x, 2)).collect();
        let ref_img = ridge_image(&cells(&reference), &cfg).unwrap();
        let mut prev = f64::INFINITY;
        for shared in 1..=9 {
            let pts: Vec<(usize, usize)> =
                (0..9).map(|x| if x < shared { (x, 2) } else { (x, 7) }).collect();
            let d = ridge_distance(&ref_img, &ridge_image(&cells(&pts), &cfg).unwrap()).unwrap();
            assert!(d < prev, "overlap {shared}: {d} !< {prev}");
            prev = d;
        }
        assert_eq!(prev, 0.0);
    }

    #[test]
    fn batch_rows_follow_input_order() {
        let cfg = RidgeConfig::default();
        let empty = batch_ridge(&[], &cfg).unwrap();
        assert_eq!(empty.shape(), (0, 441));
        let t1 = cells(&[(0, 0), (1, 0)]);
        let t2 = cells(&[(5, 5)]);
        let m = batch_ridge(&[t1.clone(), t2.clone()], &cfg).unwrap();
        let swapped = batch_ridge(&[t2, t1.clone()], &cfg).unwrap();
        assert_eq!(m.row(0), swapped.row(1));
        assert_eq!(m.row(1), swapped.row(0));
        let single = ridge_image(&t1, &cfg).unwrap();
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), single.pixels());
        let bad = batch_ridge(&[Trajectory2D::default()], &cfg);
        assert!(bad.unwrap_err().to_string().contains("trajectory 0"));
    }

    #[test]
    fn pgm_export_quantises() {
        let cfg = RidgeConfig::default();
        let img = ridge_image(&cells(&[(0, 0)]), &cfg).unwrap();
        let pgm = img.to_pgm(cfg.alpha);
        let mut lines = pgm.lines();
        assert_eq!(lines.next(), Some("P2"));
        assert_eq!(lines.next(), Some("21 21"));
        assert_eq!(lines.next(), Some("255"));
        let second_row: Vec<&str> = lines.nth(1).unwrap().split(' ').collect();
        assert_eq!(second_row[1], "255");
        assert_eq!(second_row[3], "128");
    }
}
