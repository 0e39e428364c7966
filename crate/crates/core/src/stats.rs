//! Standardization, PCA and regularized CCA on row-sample matrices.

use std::fmt::Write as _;
use std::io::BufRead;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

const ZERO_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub data: DMatrix<f64>,
    pub means: Vec<f64>,
    /// Population standard deviations (ddof = 0).
    pub stds: Vec<f64>,
    /// Zero-variance columns; their output is all zeros.
    pub flagged: Vec<bool>,
}

impl Standardized {
    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }

    /// Applies the fitted transform to new rows.
    pub fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.ncols() != self.means.len() {
            return Err(Error::DimMismatch(format!(
                "{} columns, standardizer fitted on {}",
                m.ncols(),
                self.means.len()
            )));
        }
        let mut out = m.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            if self.flagged[j] {
                col.fill(0.0);
            } else {
                col.apply(|v| *v = (*v - self.means[j]) / self.stds[j]);
            }
        }
        Ok(out)
    }
}

pub fn standardize(m: &DMatrix<f64>) -> Result<Standardized> {
    let n = m.nrows();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    let mut means = Vec::with_capacity(m.ncols());
    let mut stds = Vec::with_capacity(m.ncols());
    let mut flagged = Vec::with_capacity(m.ncols());
    for col in m.column_iter() {
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        means.push(mean);
        stds.push(std);
        flagged.push(std <= ZERO_VARIANCE * mean.abs().max(1.0));
    }
    let mut s = Standardized {
        data: DMatrix::zeros(0, 0),
        means,
        stds,
        flagged,
    };
    s.data = s.apply(m)?;
    Ok(s)
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows().max(1) as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

fn center(m: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

/// Flips the column so its largest-magnitude entry is positive (first one
/// on ties). Returns the sign applied.
fn fix_sign(mut col: nalgebra::DVectorViewMut<'_, f64>) -> f64 {
    let mut best = 0;
    for i in 0..col.len() {
        if col[i].abs() > col[best].abs() {
            best = i;
        }
    }
    if !col.is_empty() && col[best] < 0.0 {
        col.neg_mut();
        -1.0
    } else {
        1.0
    }
}

/// Singular triplets sorted by decreasing singular value.
fn sorted_svd(m: DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let svd = m.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Numeric("SVD did not return U".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Numeric("SVD did not return V".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = DMatrix::from_columns(&order.iter().map(|&i| u.column(i).into_owned()).collect::<Vec<_>>());
    let v = DMatrix::from_columns(&order.iter().map(|&i| vt.row(i).transpose()).collect::<Vec<_>>());
    Ok((u, s, v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// D×k, orthonormal columns.
    pub components: DMatrix<f64>,
    /// Variances along each component (N − 1 denominator), descending.
    pub eigenvalues: Vec<f64>,
    pub explained_ratio: Vec<f64>,
}

pub fn pca_fit(m: &DMatrix<f64>, k: usize) -> Result<PcaModel> {
    let (n, d) = m.shape();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    if k == 0 || k > (n - 1).min(d) {
        return Err(Error::InvalidArgument(format!(
            "PCA rank {k} must lie in 1..={}",
            (n - 1).min(d)
        )));
    }
    let mean = column_means(m);
    let (_, s, v) = sorted_svd(center(m, &mean))?;
    let denom = (n - 1) as f64;
    let all: Vec<f64> = s.iter().map(|x| x * x / denom).collect();
    let total: f64 = all.iter().sum();
    let mut components = v.columns(0, k).into_owned();
    for j in 0..k {
        fix_sign(components.column_mut(j));
    }
    Ok(PcaModel {
        mean: mean.iter().copied().collect(),
        components,
        eigenvalues: all[..k].to_vec(),
        explained_ratio: all[..k]
            .iter()
            .map(|e| if total > 0.0 { e / total } else { 0.0 })
            .collect(),
    })
}

pub fn pca_project(model: &PcaModel, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.ncols() != model.mean.len() {
        return Err(Error::DimMismatch(format!(
            "{} columns, PCA fitted on {}",
            m.ncols(),
            model.mean.len()
        )));
    }
    Ok(center(m, &DVector::from_column_slice(&model.mean)) * &model.components)
}

pub fn pca_reconstruct(model: &PcaModel, scores: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if scores.ncols() != model.components.ncols() {
        return Err(Error::DimMismatch(format!(
            "{} score columns for {} components",
            scores.ncols(),
            model.components.ncols()
        )));
    }
    let mut out = scores * model.components.transpose();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(model.mean[j]);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcaModel {
    /// D_x×k.
    pub proj_neural: DMatrix<f64>,
    /// D_y×k.
    pub proj_behavior: DMatrix<f64>,
    /// ρ_1 ≥ … ≥ ρ_k, in [0, 1].
    pub correlations: Vec<f64>,
    pub ridge: f64,
    pub mean_neural: Vec<f64>,
    pub mean_behavior: Vec<f64>,
}

impl CcaModel {
    /// Canonical variates of new data, `(N×k, N×k)`.
    pub fn transform(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if x.ncols() != self.proj_neural.nrows() || y.ncols() != self.proj_behavior.nrows() {
            return Err(Error::DimMismatch("CCA inputs do not match the fitted blocks".into()));
        }
        Ok((
            center(x, &DVector::from_column_slice(&self.mean_neural)) * &self.proj_neural,
            center(y, &DVector::from_column_slice(&self.mean_behavior)) * &self.proj_behavior,
        ))
    }
}

/// `(C + ridge·I)^{-1/2}` for a symmetric covariance.
fn inverse_sqrt(cov: DMatrix<f64>, ridge: f64, block: &'static str) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    let reg = cov + DMatrix::identity(d, d) * ridge;
    let eig = SymmetricEigen::new(reg);
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= 1e-12 * max {
        return Err(Error::SingularCovariance { block });
    }
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose())
}

/// Whitened, centered blocks shared by a fit and its permutation null.
struct Whitened {
    mean_x: DVector<f64>,
    mean_y: DVector<f64>,
    wx: DMatrix<f64>,
    wy: DMatrix<f64>,
    /// `X_c·W_x`, N×D_x.
    a: DMatrix<f64>,
    /// `Y_c·W_y`, N×D_y.
    b: DMatrix<f64>,
}

fn whiten(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize, ridge: f64) -> Result<Whitened> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::DimMismatch(format!("CCA blocks have {} and {} rows", n, y.nrows())));
    }
    if n < 3 {
        return Err(Error::TooFewRows { needed: 3, got: n });
    }
    let kmax = x.ncols().min(y.ncols()).min(n - 1);
    if k == 0 || k > kmax {
        return Err(Error::InvalidArgument(format!("CCA rank {k} must lie in 1..={kmax}")));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument("CCA ridge must be >= 0".into()));
    }
    let denom = (n - 1) as f64;
    let mean_x = column_means(x);
    let mean_y = column_means(y);
    let xc = center(x, &mean_x);
    let yc = center(y, &mean_y);
    let wx = inverse_sqrt(xc.transpose() * &xc / denom, ridge, "neural")?;
    let wy = inverse_sqrt(yc.transpose() * &yc / denom, ridge, "behavior")?;
    let a = &xc * &wx;
    let b = &yc * &wy;
    Ok(Whitened {
        mean_x,
        mean_y,
        wx,
        wy,
        a,
        b,
    })
}

/// Regularized CCA: whiten each block with `(cov + ridge·I)^{-1/2}`, then
/// take the SVD of the whitened cross-covariance. Directions are
/// sign-fixed on the neural block and scaled to unit-variance variates.
pub fn cca_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize, ridge: f64) -> Result<CcaModel> {
    let w = whiten(x, y, k, ridge)?;
    let denom = (x.nrows() - 1) as f64;
    let cross = w.a.transpose() * &w.b / denom;
    let (u, s, v) = sorted_svd(cross)?;
    let mut proj_x = &w.wx * u.columns(0, k);
    let mut proj_y = &w.wy * v.columns(0, k);
    let xc = center(x, &w.mean_x);
    let yc = center(y, &w.mean_y);
    for j in 0..k {
        let sign = fix_sign(proj_x.column_mut(j));
        proj_y.column_mut(j).scale_mut(sign);
        for (proj, data) in [(&mut proj_x, &xc), (&mut proj_y, &yc)] {
            let var = (data * proj.column(j)).norm_squared() / denom;
            if var > 0.0 {
                proj.column_mut(j).scale_mut(1.0 / var.sqrt());
            }
        }
    }
    let correlations = s[..k].iter().map(|r| r.clamp(0.0, 1.0)).collect();
    if !proj_x.iter().chain(proj_y.iter()).all(|v| v.is_finite()) {
        return Err(Error::Numeric("CCA produced non-finite projections".into()));
    }
    Ok(CcaModel {
        proj_neural: proj_x,
        proj_behavior: proj_y,
        correlations,
        ridge,
        mean_neural: w.mean_x.iter().copied().collect(),
        mean_behavior: w.mean_y.iter().copied().collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullDistribution {
    /// `samples[p][i]`: ρ_i under permutation `p`.
    pub samples: Vec<Vec<f64>>,
    pub p95: Vec<f64>,
    pub p99: Vec<f64>,
}

/// Nearest-rank quantile: the `⌈q·n⌉`-th smallest value.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Row-permutes `y`, refits and collects ρ per mode. Block covariances are
/// permutation invariant, so the whiteners are computed once.
pub fn cca_null_distribution<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    k: usize,
    ridge: f64,
    permutations: usize,
    rng: &mut R,
) -> Result<NullDistribution> {
    if permutations < 100 {
        return Err(Error::InvalidArgument(format!(
            "permutation null needs at least 100 permutations, got {permutations}"
        )));
    }
    let w = whiten(x, y, k, ridge)?;
    let n = x.nrows();
    let denom = (n - 1) as f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut samples = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        order.shuffle(rng);
        let b = w.b.select_rows(order.iter());
        let cross = w.a.transpose() * b / denom;
        let s = cross.singular_values();
        let mut s: Vec<f64> = s.iter().map(|r| r.clamp(0.0, 1.0)).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s.truncate(k);
        samples.push(s);
    }
    let per_mode = |q: f64| -> Vec<f64> {
        (0..k)
            .map(|i| quantile(&samples.iter().map(|s| s[i]).collect::<Vec<_>>(), q))
            .collect()
    };
    let (p95, p99) = (per_mode(0.95), per_mode(0.99));
    Ok(NullDistribution { samples, p95, p99 })
}

/// `mode,rho,null_p95,null_p99`, modes counted from 1.
pub fn cca_report_csv(model: &CcaModel, null: Option<&NullDistribution>) -> String {
    let mut out = String::from("mode,rho,null_p95,null_p99\n");
    for (i, rho) in model.correlations.iter().enumerate() {
        let (p95, p99) = null.map_or((f64::NAN, f64::NAN), |n| (n.p95[i], n.p99[i]));
        let _ = writeln!(out, "{},{rho:e},{p95:e},{p99:e}", i + 1);
    }
    out
}

pub fn write_matrix_csv(header: &[String], m: &DMatrix<f64>) -> Result<String> {
    if header.len() != m.ncols() {
        return Err(Error::DimMismatch(format!("{} header names for {} columns", header.len(), m.ncols())));
    }
    let mut out = header.join(",");
    out.push('\n');
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Headered numeric CSV into a matrix.
pub fn read_matrix_csv<R: BufRead>(r: R, source_name: &str) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut lines = r.lines();
    let header: Vec<String> = match lines.next() {
        Some(line) => line?.split(',').map(|s| s.trim().to_string()).collect(),
        None => return Err(Error::parse(source_name, 1, "empty matrix file")),
    };
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for cell in line.split(',') {
            values.push(
                cell.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(source_name, i + 2, format!("bad number `{cell}`")))?,
            );
        }
        if values.len() - before != header.len() {
            return Err(Error::parse(
                source_name,
                i + 2,
                format!("{} fields, header has {}", values.len() - before, header.len()),
            ));
        }
        rows += 1;
    }
    Ok((header.clone(), DMatrix::from_row_slice(rows, header.len(), &values)))
}
