//! Panel data, fitted factor models, and the linear algebra they share.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when deciding that a loading column adds no new direction.
const RANK_TOL: f64 = 1e-10;

/// An `N × T` panel: rows are series, columns are time points.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    values: DMatrix<f64>,
    series_ids: Vec<String>,
    time_ids: Vec<String>,
}

impl Panel {
    pub fn new(values: DMatrix<f64>, series_ids: Vec<String>, time_ids: Vec<String>) -> Result<Self> {
        let (n, t) = values.shape();
        if n == 0 || t == 0 {
            return Err(Error::dim(format!("panel must be non-empty, got {n}x{t}")));
        }
        if series_ids.len() != n {
            return Err(Error::dim(format!("{} series ids for {n} rows", series_ids.len())));
        }
        if time_ids.len() != t {
            return Err(Error::dim(format!("{} time ids for {t} columns", time_ids.len())));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            let (i, j) = (k % n, k / n);
            return Err(Error::Validation(format!(
                "non-finite value at series {} time {}",
                series_ids[i], time_ids[j]
            )));
        }
        Ok(Self { values, series_ids, time_ids })
    }

    /// Builds a panel with generated labels `s1..sN` and `1..T`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let (n, t) = values.shape();
        let series = (1..=n).map(|i| format!("s{i}")).collect();
        let times = (1..=t).map(|j| j.to_string()).collect();
        Self::new(values, series, times)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn series_ids(&self) -> &[String] {
        &self.series_ids
    }

    pub fn time_ids(&self) -> &[String] {
        &self.time_ids
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn t(&self) -> usize {
        self.values.ncols()
    }

    /// Sub-panel over the half-open column range `[start, end)`.
    pub fn time_slice(&self, start: usize, end: usize) -> Result<Panel> {
        if start >= end || end > self.t() {
            return Err(Error::dim(format!("time slice {start}..{end} outside 0..{}", self.t())));
        }
        Ok(Panel {
            values: self.values.columns(start, end - start).into_owned(),
            series_ids: self.series_ids.clone(),
            time_ids: self.time_ids[start..end].to_vec(),
        })
    }

    /// Returns the panel multiplied by `c`, keeping labels.
    pub fn scaled(&self, c: f64) -> Result<Panel> {
        Panel::new(&self.values * c, self.series_ids.clone(), self.time_ids.clone())
    }
}

/// Diagnostics attached to a fitted model and written to `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub method: String,
    pub tau_policy: String,
    /// The Huber threshold used for the objective trace, if any.
    pub tau: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// One objective value per outer iteration (initial value first).
    pub objective_trace: Vec<f64>,
    /// IHR only: element-wise objective after every half-sweep, before renormalization.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub half_sweep_trace: Vec<f64>,
}

impl FitInfo {
    pub(crate) fn simple(method: &str) -> Self {
        Self {
            method: method.to_string(),
            tau_policy: "none".to_string(),
            tau: None,
            iterations: 1,
            converged: true,
            objective_trace: Vec::new(),
            half_sweep_trace: Vec::new(),
        }
    }
}

/// A fitted factor model satisfying `LᵀL/N = I` and `FᵀF/T` diagonal non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorFit {
    /// `N × r`
    pub loadings: DMatrix<f64>,
    /// `T × r`
    pub factors: DMatrix<f64>,
    /// `N × T`, equal to `Y − L Fᵀ`
    pub residuals: DMatrix<f64>,
    pub rank: usize,
    pub info: FitInfo,
}

impl FactorFit {
    /// Normalizes `(loadings, factors)` and computes residuals against `panel`.
    pub fn from_raw(panel: &Panel, loadings: &DMatrix<f64>, factors: &DMatrix<f64>, info: FitInfo) -> Result<Self> {
        if loadings.nrows() != panel.n() || factors.nrows() != panel.t() {
            return Err(Error::dim(format!(
                "loadings {}x{} / factors {}x{} do not match a {}x{} panel",
                loadings.nrows(),
                loadings.ncols(),
                factors.nrows(),
                factors.ncols(),
                panel.n(),
                panel.t()
            )));
        }
        let (l, f) = normalize_fit(loadings, factors)?;
        let residuals = panel.values() - &l * f.transpose();
        let rank = l.ncols();
        Ok(Self { loadings: l, factors: f, residuals, rank, info })
    }

    /// The `N × T` common component `L Fᵀ`.
    pub fn common_component(&self) -> DMatrix<f64> {
        &self.loadings * self.factors.transpose()
    }

    /// Diagonal of `FᵀF/T`.
    pub fn factor_second_moments(&self) -> Vec<f64> {
        let t = self.factors.nrows() as f64;
        (0..self.rank)
            .map(|j| self.factors.column(j).norm_squared() / t)
            .collect()
    }
}

/// A diagonal `±1` matrix aligning estimated columns with a reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignMatrix {
    diag: Vec<i8>,
}

impl SignMatrix {
    pub fn new(diag: Vec<i8>) -> Result<Self> {
        if diag.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Validation("sign entries must be +1 or -1".into()));
        }
        Ok(Self { diag })
    }

    pub fn diag(&self) -> &[i8] {
        &self.diag
    }

    /// Multiplies column `j` of `m` by the `j`-th sign.
    pub fn apply_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for (j, &s) in self.diag.iter().enumerate() {
            if s < 0 {
                out.column_mut(j).neg_mut();
            }
        }
        out
    }
}

/// Leading eigenpairs of a symmetric matrix, eigenvalues non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub values: DVector<f64>,
    /// Column-orthonormal `N × r`.
    pub vectors: DMatrix<f64>,
}

/// `Σ = (1/T) Σ_t Y_t Y_tᵀ`, uncentered.
pub fn second_moment(panel: &Panel) -> DMatrix<f64> {
    second_moment_with(panel, false)
}

/// Like [`second_moment`], optionally removing each series' time mean first.
pub fn second_moment_with(panel: &Panel, center: bool) -> DMatrix<f64> {
    let t = panel.t() as f64;
    let y = panel.values();
    let mut s = if center {
        let mut c = y.clone();
        for mut row in c.row_iter_mut() {
            let m = row.mean();
            row.add_scalar_mut(-m);
        }
        &c * c.transpose()
    } else {
        y * y.transpose()
    };
    s /= t;
    symmetrize(&mut s);
    s
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Validation(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
    }
    let scale = m.amax();
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::Validation(format!("matrix is not symmetric (max asymmetry {asym:e})")));
    }
    Ok(())
}

/// Flips `v` so its largest-magnitude entry (first one on exact ties) is positive.
pub(crate) fn fix_sign(mut v: nalgebra::DVectorViewMut<'_, f64>) -> bool {
    let mut best = 0;
    let mut best_abs = -1.0;
    for (k, x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = k;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
        true
    } else {
        false
    }
}

/// Full eigendecomposition sorted by non-increasing eigenvalue, ties kept in
/// the decomposition's original order, each vector sign-fixed.
pub(crate) fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(m.nrows(), m.ncols());
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
        fix_sign(vectors.column_mut(dst));
    }
    (values, vectors)
}

/// The `r` leading eigenpairs of symmetric `m`.
pub fn top_eigen(m: &DMatrix<f64>, r: usize) -> Result<EigenPair> {
    check_symmetric(m)?;
    if r == 0 || r > m.nrows() {
        return Err(Error::dim(format!("requested {r} eigenpairs of a {}x{} matrix", m.nrows(), m.ncols())));
    }
    let (values, vectors) = sorted_eigen(m);
    Ok(EigenPair {
        values: DVector::from_iterator(r, values.into_iter().take(r)),
        vectors: vectors.columns(0, r).into_owned(),
    })
}

/// Index of the first column that is (numerically) in the span of the earlier ones.
fn first_dependent_column(m: &DMatrix<f64>) -> Option<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m.ncols());
    for j in 0..m.ncols() {
        let col = m.column(j).into_owned();
        let norm = col.norm();
        if norm == 0.0 {
            return Some(j);
        }
        let mut v = col;
        // two passes of modified Gram-Schmidt for stability
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let rem = v.norm();
        if rem <= RANK_TOL * norm {
            return Some(j);
        }
        basis.push(v / rem);
    }
    None
}

/// Rotates `(L_raw, F_raw)` onto the identified representative with
/// `LᵀL/N = I_r` and `FᵀF/T` diagonal and non-increasing, keeping `L Fᵀ` fixed.
///
/// Column signs follow the eigenvector convention: the largest-magnitude
/// entry of each loading column is positive.
pub fn normalize_fit(l_raw: &DMatrix<f64>, f_raw: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let r = l_raw.ncols();
    if r == 0 || f_raw.ncols() != r {
        return Err(Error::dim(format!(
            "loadings have {r} columns, factors have {}",
            f_raw.ncols()
        )));
    }
    if l_raw.iter().chain(f_raw.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite entry in loadings or factors".into()));
    }
    if let Some(j) = first_dependent_column(l_raw) {
        return Err(Error::DegenerateFactor {
            index: j,
            reason: "loading column is linearly dependent on the preceding columns".into(),
        });
    }
    if let Some(j) = (0..r).find(|&j| f_raw.column(j).iter().all(|&v| v == 0.0)) {
        return Err(Error::DegenerateFactor { index: j, reason: "factor column is identically zero".into() });
    }
    let n = l_raw.nrows() as f64;
    let t = f_raw.nrows() as f64;

    let mut gram = l_raw.transpose() * l_raw / n;
    symmetrize(&mut gram);
    let eig = SymmetricEigen::new(gram);
    let u = &eig.eigenvectors;
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|a| 1.0 / a.sqrt()));
    let l1 = l_raw * (u * inv_sqrt * u.transpose());
    let f1 = f_raw * (u * sqrt * u.transpose());

    let mut b = f1.transpose() * &f1 / t;
    symmetrize(&mut b);
    let (_, q) = sorted_eigen(&b);
    let mut l = l1 * &q;
    let mut f = f1 * &q;
    for j in 0..r {
        if fix_sign(l.column_mut(j)) {
            f.column_mut(j).neg_mut();
        }
    }
    Ok((l, f))
}

/// `Ŝ = sgn(diag(F̂ᵀF_ref / T))` with `sgn(0) = +1`.
pub fn sign_align(f_hat: &DMatrix<f64>, f_ref: &DMatrix<f64>) -> Result<SignMatrix> {
    if f_hat.shape() != f_ref.shape() {
        return Err(Error::dim(format!(
            "factor matrices {:?} and {:?} differ in shape",
            f_hat.shape(),
            f_ref.shape()
        )));
    }
    let t = f_hat.nrows() as f64;
    let diag = (0..f_hat.ncols())
        .map(|j| if f_hat.column(j).dot(&f_ref.column(j)) / t >= 0.0 { 1 } else { -1 })
        .collect();
    Ok(SignMatrix { diag })
}
