//! Minimum-variance portfolios on factor-structured covariance estimates.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::metrics::quantile_sorted;
use crate::panel::{check_symmetric, symmetrize, FactorFit, Panel};

/// Quantile levels reported by [`performance_stats`].
pub const QUANTILE_LEVELS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

/// Zeroes off-diagonal entries with `|s_ij| < thr`; the diagonal is kept.
pub fn hard_threshold(s: &DMatrix<f64>, thr: f64) -> DMatrix<f64> {
    let mut out = s.clone();
    for j in 0..s.ncols() {
        for i in 0..s.nrows() {
            if i != j && s[(i, j)].abs() < thr {
                out[(i, j)] = 0.0;
            }
        }
    }
    out
}

/// Clips eigenvalues of symmetric `m` up to `1e-8 · trace / N` when the
/// smallest one falls below it. Returns whether anything changed.
pub fn repair_pd(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let n = m.nrows();
    let floor = 1e-8 * m.trace() / n as f64;
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.min() >= floor {
        return (m.clone(), false);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    (out, true)
}

/// `Σ̂ = ĈᵀĈ/w + hard_threshold(ÊᵀÊ/w, C·√(ln N / w))`, PD-repaired.
pub fn factor_covariance(fit: &FactorFit, window: usize, c: f64) -> Result<DMatrix<f64>> {
    if fit.factors.nrows() != window {
        return Err(Error::dim(format!("fit covers {} periods, window is {window}", fit.factors.nrows())));
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::param(format!("threshold constant must be non-negative, got {c}")));
    }
    let w = window as f64;
    let n = fit.loadings.nrows();
    let cc = fit.common_component();
    let mut common = &cc * cc.transpose() / w;
    symmetrize(&mut common);
    let mut resid = &fit.residuals * fit.residuals.transpose() / w;
    symmetrize(&mut resid);
    let thr = c * ((n as f64).ln() / w).sqrt();
    let sigma = common + hard_threshold(&resid, thr);
    Ok(repair_pd(&sigma).0)
}

/// `ω = Σ⁻¹𝟏 / (𝟏ᵀΣ⁻¹𝟏)`.
pub fn min_variance_weights(sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_symmetric(sigma)?;
    let n = sigma.nrows();
    if n == 0 {
        return Err(Error::dim("empty covariance matrix"));
    }
    let chol = sigma.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let diag_max = sigma.diagonal().max();
    let l = chol.l_dirty();
    if (0..n).any(|i| l[(i, i)] * l[(i, i)] <= 1e-14 * diag_max) {
        return Err(Error::NotPositiveDefinite);
    }
    let x = chol.solve(&DVector::from_element(n, 1.0));
    let total = x.sum();
    if !(total.abs() > 0.0) || !total.is_finite() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(x / total)
}

/// Settings of the rolling backtest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub window: usize,
    pub r: usize,
    pub method: Estimator,
    pub threshold_const: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self { window: 72, r: 2, method: Estimator::by_name("ihr").unwrap(), threshold_const: 0.5 }
    }
}

impl BacktestConfig {
    pub fn validate(&self, t: usize) -> Result<()> {
        if self.r == 0 {
            return Err(Error::param("r must be positive"));
        }
        if self.window < self.r + 1 {
            return Err(Error::param(format!("window {} must be at least r + 1 = {}", self.window, self.r + 1)));
        }
        if self.window >= t {
            return Err(Error::dim(format!("window {} leaves no out-of-sample period in {t} periods", self.window)));
        }
        if !(self.threshold_const >= 0.0 && self.threshold_const.is_finite()) {
            return Err(Error::param(format!("threshold constant must be non-negative, got {}", self.threshold_const)));
        }
        Ok(())
    }
}

/// Mean, sample standard deviation, Sharpe ratio and quantiles of a return series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceStats {
    pub mean: f64,
    /// `None` with fewer than two returns.
    pub sd: Option<f64>,
    /// `mean / sd`; `None` when `sd` is zero or undefined.
    pub sharpe: Option<f64>,
    /// Keyed by the level printed as a decimal (`"0.1"`, `"0.25"`, …).
    pub quantiles: BTreeMap<String, f64>,
}

pub fn performance_stats(returns: &[f64]) -> Result<PerformanceStats> {
    if returns.is_empty() {
        return Err(Error::param("no returns to summarize"));
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let sd = (returns.len() >= 2)
        .then(|| (returns.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt());
    let sharpe = sd.filter(|&s| s > 0.0).map(|s| mean / s);
    let mut sorted = returns.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantiles = QUANTILE_LEVELS.iter().map(|&q| (q.to_string(), quantile_sorted(&sorted, q))).collect();
    Ok(PerformanceStats { mean, sd, sharpe, quantiles })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub config: BacktestConfig,
    /// Labels of the realized months.
    pub oos_times: Vec<String>,
    pub oos_returns: Vec<f64>,
    pub mean_return: f64,
    pub sd_return: Option<f64>,
    pub sharpe: Option<f64>,
    pub quantiles: BTreeMap<String, f64>,
    /// Months whose covariance could not be inverted or whose fit degenerated.
    pub skipped: Vec<String>,
    /// Weights of each realized month, aligned with `oos_times`.
    #[serde(skip)]
    pub weights: Vec<DVector<f64>>,
}

enum Month {
    Realized(DVector<f64>, f64),
    Skipped,
}

/// Rolling out-of-sample backtest: for each month `t ≥ window`, fit on
/// months `[t − window, t)`, form minimum-variance weights and realize
/// `ωᵀY_t`. Returns are used as given; no rescaling.
pub fn rolling_backtest(returns: &Panel, cfg: &BacktestConfig) -> Result<BacktestReport> {
    let t_total = returns.t();
    cfg.validate(t_total)?;
    let months: Vec<Result<Month>> = (cfg.window..t_total)
        .into_par_iter()
        .map(|t| {
            let train = returns.time_slice(t - cfg.window, t)?;
            let attempt = cfg
                .method
                .fit(&train, cfg.r)
                .and_then(|fit| factor_covariance(&fit, cfg.window, cfg.threshold_const))
                .and_then(|sigma| min_variance_weights(&sigma));
            match attempt {
                Ok(w) => {
                    let ret = w.dot(&returns.values().column(t));
                    Ok(Month::Realized(w, ret))
                }
                Err(Error::NotPositiveDefinite | Error::Degenerate(_) | Error::DegenerateFactor { .. }) => Ok(Month::Skipped),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut report = BacktestReport {
        config: *cfg,
        oos_times: Vec::new(),
        oos_returns: Vec::new(),
        mean_return: 0.0,
        sd_return: None,
        sharpe: None,
        quantiles: BTreeMap::new(),
        skipped: Vec::new(),
        weights: Vec::new(),
    };
    for (month, t) in months.into_iter().zip(cfg.window..t_total) {
        let label = returns.time_ids()[t].clone();
        match month? {
            Month::Realized(w, ret) => {
                report.oos_times.push(label);
                report.oos_returns.push(ret);
                report.weights.push(w);
            }
            Month::Skipped => report.skipped.push(label),
        }
    }
    if report.oos_returns.is_empty() {
        return Err(Error::Degenerate(format!("all {} out-of-sample months were skipped", report.skipped.len())));
    }
    let stats = performance_stats(&report.oos_returns)?;
    report.mean_return = stats.mean;
    report.sd_return = stats.sd;
    report.sharpe = stats.sharpe;
    report.quantiles = stats.quantiles;
    Ok(report)
}

/// Out-of-sample returns of the equal-weight portfolio over the same months
/// a backtest with this `window` would realize.
pub fn equal_weight_returns(returns: &Panel, window: usize) -> Vec<f64> {
    let n = returns.n() as f64;
    (window..returns.t()).map(|t| returns.values().column(t).sum() / n).collect()
}
