//! Factor estimators: conventional PCA, Huber PCA, and iterative Huber regression.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::huber::{huber_regress, mad, median, Huber, HuberConfig, TauPolicy, MAD_TO_SIGMA};
use crate::panel::{second_moment, symmetrize, top_eigen, FactorFit, FitInfo, Panel};

/// Lower bound for a data-driven Huber threshold; hit only by (near) exact fits.
const TAU_FLOOR: f64 = 1e-12;

/// Threshold rule for Huber PCA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum TauRule {
    Fixed(f64),
    /// Median of the per-period residual norms of the current fit, so that
    /// half of the periods fall on the linear branch.
    MedianResidualNorm,
}

impl TauRule {
    pub fn describe(&self) -> String {
        match self {
            TauRule::Fixed(t) => format!("fixed({t})"),
            TauRule::MedianResidualNorm => "median_residual_norm".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HpcaConfig {
    /// Extra reweighting passes after the first (0 = single pass).
    pub refine_iters: usize,
    pub tau_rule: TauRule,
}

impl Default for HpcaConfig {
    fn default() -> Self {
        Self { refine_iters: 0, tau_rule: TauRule::MedianResidualNorm }
    }
}

impl HpcaConfig {
    pub fn validate(&self) -> Result<()> {
        if let TauRule::Fixed(t) = self.tau_rule {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::param(format!("HPCA tau must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IhrConfig {
    pub huber: HuberConfig,
    pub outer_max_iter: usize,
    /// Relative Frobenius change of the common component that ends the iteration.
    pub outer_tol: f64,
}

impl Default for IhrConfig {
    fn default() -> Self {
        Self { huber: HuberConfig::default(), outer_max_iter: 30, outer_tol: 1e-4 }
    }
}

impl IhrConfig {
    pub fn validate(&self) -> Result<()> {
        self.huber.validate()?;
        if self.outer_max_iter == 0 {
            return Err(Error::param("outer_max_iter must be at least 1"));
        }
        if !(self.outer_tol > 0.0) {
            return Err(Error::param(format!("outer_tol must be positive, got {}", self.outer_tol)));
        }
        Ok(())
    }
}

/// A configured estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Estimator {
    Pca,
    Hpca(HpcaConfig),
    Ihr(IhrConfig),
}

impl Estimator {
    pub const NAMES: [&'static str; 3] = ["pca", "hpca", "ihr"];

    /// Estimator with default configuration, by name.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "pca" => Some(Estimator::Pca),
            "hpca" => Some(Estimator::Hpca(HpcaConfig::default())),
            "ihr" => Some(Estimator::Ihr(IhrConfig::default())),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Pca => "pca",
            Estimator::Hpca(_) => "hpca",
            Estimator::Ihr(_) => "ihr",
        }
    }

    pub fn fit(&self, panel: &Panel, r: usize) -> Result<FactorFit> {
        match self {
            Estimator::Pca => fit_pca(panel, r),
            Estimator::Hpca(cfg) => fit_hpca(panel, r, cfg),
            Estimator::Ihr(cfg) => fit_ihr(panel, r, cfg),
        }
    }
}

/// Per-period Huber PCA weights `w'_t ∈ (0, 1/2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub w: Vec<f64>,
}

fn check_rank(panel: &Panel, r: usize) -> Result<()> {
    let max = panel.n().min(panel.t());
    if r == 0 || r > max {
        return Err(Error::dim(format!(
            "rank {r} must be between 1 and min(N, T) = {max} for a {}x{} panel",
            panel.n(),
            panel.t()
        )));
    }
    Ok(())
}

/// `L = √N · (leading eigenvectors of m)`, `F = YᵀL/N`.
fn pca_from_matrix(panel: &Panel, m: &DMatrix<f64>, r: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = panel.n() as f64;
    let eig = top_eigen(m, r)?;
    let l = eig.vectors * n.sqrt();
    let f = panel.values().transpose() * &l / n;
    Ok((l, f))
}

/// Conventional principal components.
pub fn fit_pca(panel: &Panel, r: usize) -> Result<FactorFit> {
    check_rank(panel, r)?;
    let (l, f) = pca_from_matrix(panel, &second_moment(panel), r)?;
    FactorFit::from_raw(panel, &l, &f, FitInfo::simple("pca"))
}

/// Norms `‖Y_t − L f_t‖₂` with `f_t = LᵀY_t/N`.
fn projection_residual_norms(panel: &Panel, loadings: &DMatrix<f64>) -> Vec<f64> {
    let n = panel.n() as f64;
    let y = panel.values();
    let f = y.transpose() * loadings / n;
    let resid = y - loadings * f.transpose();
    resid.column_iter().map(|c| c.norm()).collect()
}

/// Huber PCA weights for the loadings of `fit`, which must satisfy `LᵀL/N = I`.
pub fn hpca_weights(panel: &Panel, fit: &FactorFit, tau: f64) -> Result<WeightVector> {
    if !(tau > 0.0) {
        return Err(Error::param(format!("tau must be positive, got {tau}")));
    }
    if fit.loadings.nrows() != panel.n() {
        return Err(Error::dim("loadings do not match panel rows"));
    }
    let w = projection_residual_norms(panel, &fit.loadings)
        .into_iter()
        .map(|rho| if rho <= tau { 0.5 } else { tau / (2.0 * rho) })
        .collect();
    Ok(WeightVector { w })
}

/// `Σ̂ = Σ_t w'_t Y_t Y_tᵀ / T`.
fn weighted_second_moment(panel: &Panel, w: &[f64]) -> DMatrix<f64> {
    let y = panel.values();
    let mut scaled = y.clone();
    for (mut col, &wt) in scaled.column_iter_mut().zip(w) {
        col.scale_mut(wt.sqrt());
    }
    let mut s = &scaled * scaled.transpose() / panel.t() as f64;
    symmetrize(&mut s);
    s
}

/// `L_H = (1/T) Σ_t H_τ(‖Y_t − L f_t‖₂)` and `L_EH = (1/(TN)) Σ_{i,t} H_τ(Y_it − l_iᵀ f_t)`.
pub fn eval_objectives(panel: &Panel, loadings: &DMatrix<f64>, factors: &DMatrix<f64>, tau: f64) -> Result<(f64, f64)> {
    let h = Huber::new(tau)?;
    if loadings.nrows() != panel.n() || factors.nrows() != panel.t() || loadings.ncols() != factors.ncols() {
        return Err(Error::dim("loadings/factors do not match the panel"));
    }
    let resid = panel.values() - loadings * factors.transpose();
    let (n, t) = (panel.n() as f64, panel.t() as f64);
    let lh = resid.column_iter().map(|c| h.loss(c.norm())).sum::<f64>() / t;
    let leh = resid.iter().map(|&e| h.loss(e)).sum::<f64>() / (t * n);
    Ok((lh, leh))
}

/// Huber PCA initialized from conventional PCA.
pub fn fit_hpca(panel: &Panel, r: usize, cfg: &HpcaConfig) -> Result<FactorFit> {
    check_rank(panel, r)?;
    let init = fit_pca(panel, r)?;
    fit_hpca_from(panel, &init, cfg)
}

/// Huber PCA starting from a caller-supplied initial fit.
///
/// The threshold is refreshed from the latest fit on every pass.
pub fn fit_hpca_from(panel: &Panel, init: &FactorFit, cfg: &HpcaConfig) -> Result<FactorFit> {
    cfg.validate()?;
    let r = init.rank;
    check_rank(panel, r)?;
    if init.residuals.shape() != (panel.n(), panel.t()) {
        return Err(Error::dim("initial fit does not match the panel"));
    }

    let mut current = init.clone();
    let mut trace = Vec::new();
    let mut tau = 0.0;
    for pass in 0..=cfg.refine_iters {
        let norms: Vec<f64> = current.residuals.column_iter().map(|c| c.norm()).collect();
        tau = match cfg.tau_rule {
            TauRule::Fixed(t) => t,
            TauRule::MedianResidualNorm => median(&norms).max(TAU_FLOOR),
        };
        if pass == 0 {
            trace.push(eval_objectives(panel, &current.loadings, &current.factors, tau)?.0);
        }
        let weights = hpca_weights(panel, &current, tau)?;
        let sigma = weighted_second_moment(panel, &weights.w);
        let (l, f) = pca_from_matrix(panel, &sigma, r)?;
        let info = FitInfo::simple("hpca");
        current = FactorFit::from_raw(panel, &l, &f, info)?;
        trace.push(eval_objectives(panel, &current.loadings, &current.factors, tau)?.0);
    }
    current.info = FitInfo {
        method: "hpca".into(),
        tau_policy: cfg.tau_rule.describe(),
        tau: Some(tau),
        iterations: cfg.refine_iters + 1,
        converged: true,
        objective_trace: trace,
        half_sweep_trace: Vec::new(),
    };
    Ok(current)
}

/// Regresses every row of `targets` on `design` (rows of `targets` index the
/// regressions), warm-started from the matching row of `init`.
fn regress_rows(
    targets: &DMatrix<f64>,
    design: &DMatrix<f64>,
    init: &DMatrix<f64>,
    cfg: &HuberConfig,
    label: &str,
    ids: &[String],
) -> Result<DMatrix<f64>> {
    let rows: Vec<DVector<f64>> = (0..targets.nrows())
        .into_par_iter()
        .map(|i| {
            let y = targets.row(i).transpose();
            let b0 = init.row(i).transpose();
            huber_regress(&y, design, cfg, Some(&b0))
                .map(|fit| fit.coef)
                .map_err(|e| e.in_context(format!("{label} {} (index {i})", ids[i])))
        })
        .collect::<Result<_>>()?;
    let r = design.ncols();
    Ok(DMatrix::from_fn(rows.len(), r, |i, j| rows[i][j]))
}

/// Single threshold used to report the element-wise objective of an IHR run.
fn reference_tau(policy: &TauPolicy, residuals: &DMatrix<f64>) -> f64 {
    match *policy {
        TauPolicy::Fixed(t) => t,
        TauPolicy::MadScaled(c) => (c * MAD_TO_SIGMA * mad(residuals.as_slice())).max(TAU_FLOOR),
    }
}

/// Iterative Huber regression for the element-wise Huber objective.
///
/// Starting from PCA, each outer sweep re-estimates every loading row by a
/// Huber regression on the current factors, then every factor row on the new
/// loadings, then renormalizes the pair jointly (the common component is
/// left untouched). The objective trace uses one threshold for the whole
/// run: the fixed τ, or for the MAD policy `c · 1.4826 · MAD` of the initial
/// PCA residuals.
pub fn fit_ihr(panel: &Panel, r: usize, cfg: &IhrConfig) -> Result<FactorFit> {
    cfg.validate()?;
    check_rank(panel, r)?;
    let init = fit_pca(panel, r)?;
    let tau_ref = reference_tau(&cfg.huber.tau, &init.residuals);
    let y = panel.values();
    let yt = y.transpose();

    let mut l = init.loadings.clone();
    let mut f = init.factors.clone();
    let mut common = &l * f.transpose();
    let mut trace = vec![eval_objectives(panel, &l, &f, tau_ref)?.1];
    let mut half = Vec::with_capacity(2 * cfg.outer_max_iter);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.outer_max_iter {
        iterations += 1;
        l = regress_rows(y, &f, &l, &cfg.huber, "series", panel.series_ids())?;
        half.push(eval_objectives(panel, &l, &f, tau_ref)?.1);
        f = regress_rows(&yt, &l, &f, &cfg.huber, "time", panel.time_ids())?;
        half.push(eval_objectives(panel, &l, &f, tau_ref)?.1);

        let (ln, fnorm) = crate::panel::normalize_fit(&l, &f)?;
        l = ln;
        f = fnorm;
        let next = &l * f.transpose();
        let denom = common.norm();
        let change = if denom > 0.0 { (&next - &common).norm() / denom } else { next.norm() };
        common = next;
        trace.push(eval_objectives(panel, &l, &f, tau_ref)?.1);
        if change < cfg.outer_tol {
            converged = true;
            break;
        }
    }

    let info = FitInfo {
        method: "ihr".into(),
        tau_policy: cfg.huber.tau.describe(),
        tau: Some(tau_ref),
        iterations,
        converged,
        objective_trace: trace,
        half_sweep_trace: half,
    };
    FactorFit::from_raw(panel, &l, &f, info)
}
