//! Synthetic factor panels with serially and cross-sectionally correlated,
//! possibly heavy-tailed idiosyncratic errors.
//!
//! The generating model is
//!
//! ```text
//! Y_it = l_iᵀ f_t + √θ u_it,   u_it = √((1 − ρ²)/(1 + 2Jβ²)) e_it,
//! e_it = ρ e_i,t−1 + (1 − β) v_it + β Σ_{|l − i| ≤ J} v_lt
//! ```
//!
//! with standard normal loadings and `(f_t, v_t)` drawn from one of several
//! innovation laws. Every draw comes from a ChaCha stream keyed by the master
//! seed and selected by (purpose, index), so growing `N` or `T` leaves the
//! draws of existing series and periods untouched.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;

/// AR(1) burn-in periods discarded before the first observed period.
pub const BURN_IN: usize = 50;

const STREAM_LOADINGS: u64 = 1;
const STREAM_INNOVATIONS: u64 = 2;

/// Joint law of the factor and error innovations `(f_t, v_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Innovation {
    /// `(f_t, v_t)` i.i.d. standard normal.
    Gaussian,
    /// `(f_t, v_t)` jointly multivariate t with `ν` degrees of freedom (one mixing variable per period).
    Mvt { nu: f64 },
    /// Gaussian factors; errors jointly multivariate t over the cross-section.
    GaussianFactorsMvtErrors { nu: f64 },
    /// Every element i.i.d. symmetric α-stable `S_α(0, 1, 0)`.
    AlphaStable { alpha: f64 },
    /// Factor coordinates i.i.d. skew-t; error elements i.i.d. symmetric α-stable.
    SkewTFactorsStableErrors { alpha: f64, skew: f64, nu: f64 },
}

impl Innovation {
    /// Whether the errors have finite second moments.
    pub fn has_finite_variance(&self) -> bool {
        match *self {
            Innovation::Gaussian => true,
            Innovation::Mvt { nu } | Innovation::GaussianFactorsMvtErrors { nu } => nu > 2.0,
            Innovation::AlphaStable { alpha } | Innovation::SkewTFactorsStableErrors { alpha, .. } => alpha >= 2.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let check_nu = |nu: f64| {
            if nu > 0.0 && !nu.is_nan() {
                Ok(())
            } else {
                Err(Error::param(format!("degrees of freedom must be positive, got {nu}")))
            }
        };
        let check_alpha = |a: f64| {
            if a > 0.0 && a <= 2.0 {
                Ok(())
            } else {
                Err(Error::param(format!("stability index must lie in (0, 2], got {a}")))
            }
        };
        match *self {
            Innovation::Gaussian => Ok(()),
            Innovation::Mvt { nu } | Innovation::GaussianFactorsMvtErrors { nu } => check_nu(nu),
            Innovation::AlphaStable { alpha } => check_alpha(alpha),
            Innovation::SkewTFactorsStableErrors { alpha, skew, nu } => {
                check_alpha(alpha)?;
                check_nu(nu)?;
                if skew.is_finite() {
                    Ok(())
                } else {
                    Err(Error::param("skewness must be finite"))
                }
            }
        }
    }
}

/// Simulation design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub t: usize,
    pub r: usize,
    /// Noise scale; the error term is multiplied by `√θ`.
    pub theta: f64,
    pub rho: f64,
    pub beta: f64,
    /// Neighborhood half-width of the cross-sectional spillover.
    pub j: usize,
    pub dist: Innovation,
    pub seed: u64,
}

/// The four simulation designs: A and C without error correlation, B and D with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    A,
    B,
    C,
    D,
}

impl Scenario {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "A" | "a" => Some(Scenario::A),
            "B" | "b" => Some(Scenario::B),
            "C" | "c" => Some(Scenario::C),
            "D" | "d" => Some(Scenario::D),
            _ => None,
        }
    }

    /// Number of innovation cases defined for the scenario.
    pub fn cases(&self) -> u32 {
        match self {
            Scenario::A | Scenario::B => 5,
            Scenario::C | Scenario::D => 3,
        }
    }
}

impl SimConfig {
    /// Resolves a scenario/case pair to a full design with `r = 3`, `θ = 1`.
    ///
    /// Scenarios B and D use `ρ = 0.5`, `β = 0.2`, `J = max(10, ⌊N/20⌋)`.
    pub fn preset(scenario: Scenario, case: u32, n: usize, t: usize, seed: u64) -> Result<Self> {
        let dist = match (scenario, case) {
            (Scenario::A | Scenario::B, 1) | (Scenario::C | Scenario::D, 1) => Innovation::Gaussian,
            (Scenario::A | Scenario::B, 2) => Innovation::Mvt { nu: 3.0 },
            (Scenario::A | Scenario::B, 3) => Innovation::GaussianFactorsMvtErrors { nu: 3.0 },
            (Scenario::A | Scenario::B, 4) => Innovation::AlphaStable { alpha: 1.9 },
            (Scenario::A | Scenario::B, 5) => Innovation::SkewTFactorsStableErrors { alpha: 1.9, skew: 20.0, nu: 3.0 },
            (Scenario::C | Scenario::D, 2) => Innovation::Mvt { nu: 5.0 },
            (Scenario::C | Scenario::D, 3) => Innovation::Mvt { nu: 3.0 },
            _ => {
                return Err(Error::param(format!(
                    "scenario {scenario:?} has cases 1..={}, got {case}",
                    scenario.cases()
                )))
            }
        };
        let (rho, beta, j) = match scenario {
            Scenario::A | Scenario::C => (0.0, 0.0, 0),
            Scenario::B | Scenario::D => (0.5, 0.2, (n / 20).max(10)),
        };
        let cfg = SimConfig { n, t, r: 3, theta: 1.0, rho, beta, j, dist, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 || self.r == 0 {
            return Err(Error::param(format!("N, T, r must be positive (got {}, {}, {})", self.n, self.t, self.r)));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::param(format!("theta must be non-negative, got {}", self.theta)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::param(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::param(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if self.j > self.n {
            return Err(Error::param(format!("J = {} exceeds N = {}", self.j, self.n)));
        }
        self.dist.validate()
    }

    /// `√((1 − ρ²)/(1 + 2Jβ²))`.
    pub fn error_scale(&self) -> f64 {
        ((1.0 - self.rho * self.rho) / (1.0 + 2.0 * self.j as f64 * self.beta * self.beta)).sqrt()
    }
}

/// A simulated panel with the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `N × r`
    pub loadings: DMatrix<f64>,
    /// `T × r`
    pub factors: DMatrix<f64>,
    /// `N × T` scaled errors `u`; the panel is `L Fᵀ + √θ u`.
    pub idiosyncratic: DMatrix<f64>,
    pub panel: Panel,
}

impl GroundTruth {
    pub fn common_component(&self) -> DMatrix<f64> {
        &self.loadings * self.factors.transpose()
    }
}

/// Independent generator for `(purpose, index)` under `seed`.
pub fn substream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 48) | index);
    rng
}

/// One draw from `S_α(skew, scale, loc)` by the Chambers–Mallows–Stuck transform.
///
/// At `α = 2` this is `N(loc, 2·scale²)`.
pub fn gen_alpha_stable<R: Rng + ?Sized>(alpha: f64, skew: f64, scale: f64, loc: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::param(format!("stability index must lie in (0, 2], got {alpha}")));
    }
    if !(-1.0..=1.0).contains(&skew) {
        return Err(Error::param(format!("skewness must lie in [-1, 1], got {skew}")));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::param(format!("scale must be positive, got {scale}")));
    }
    if alpha == 2.0 {
        let z: f64 = StandardNormal.sample(rng);
        return Ok(loc + scale * std::f64::consts::SQRT_2 * z);
    }
    let v = PI * (rng.random::<f64>() - 0.5);
    let w: f64 = Exp1.sample(rng);
    let x = if (alpha - 1.0).abs() < 1e-12 {
        let a = FRAC_PI_2 + skew * v;
        let x = (a * v.tan() - skew * ((FRAC_PI_2 * w * v.cos()) / a).ln()) / FRAC_PI_2;
        return Ok(scale * x + skew * scale * scale.ln() / FRAC_PI_2 + loc);
    } else {
        let t = skew * (PI * alpha / 2.0).tan();
        let b = t.atan() / alpha;
        let s = (1.0 + t * t).powf(1.0 / (2.0 * alpha));
        let av = alpha * (v + b);
        s * av.sin() / v.cos().powf(1.0 / alpha) * ((v - av).cos() / w).powf((1.0 - alpha) / alpha)
    };
    Ok(scale * x + loc)
}

fn check_nu(nu: f64) -> Result<()> {
    if nu > 0.0 && !nu.is_nan() {
        Ok(())
    } else {
        Err(Error::param(format!("degrees of freedom must be positive, got {nu}")))
    }
}

/// Chi-squared mixing factor `√(w/ν)` shared by a multivariate t draw.
fn t_mixing<R: Rng + ?Sized>(nu: f64, rng: &mut R) -> Result<f64> {
    let chi = ChiSquared::new(nu).map_err(|e| Error::param(e.to_string()))?;
    let w: f64 = chi.sample(rng);
    Ok((w / nu).sqrt())
}

/// Multivariate t draw `z / √(w/ν)` with identity scale; all coordinates share `w`.
pub fn gen_mvt<R: Rng + ?Sized>(nu: f64, dim: usize, rng: &mut R) -> Result<Vec<f64>> {
    check_nu(nu)?;
    let m = t_mixing(nu, rng)?;
    Ok((0..dim).map(|_| StandardNormal.sample(rng)).map(|z: f64| z / m).collect())
}

/// Skew-t draw by hidden truncation: with `δ = α/√(1+α²)` and `(u₀, u₁)`
/// standard bivariate normal with correlation `δ`, `z = u₁` if `u₀ > 0` else
/// `−u₁`; the result is `z / √(w/ν)`.
pub fn gen_skew_t<R: Rng + ?Sized>(nu: f64, alpha_skew: f64, rng: &mut R) -> Result<f64> {
    check_nu(nu)?;
    if !alpha_skew.is_finite() {
        return Err(Error::param("skewness must be finite"));
    }
    let delta = alpha_skew / (1.0 + alpha_skew * alpha_skew).sqrt();
    let u0: f64 = StandardNormal.sample(rng);
    let e: f64 = StandardNormal.sample(rng);
    let u1 = delta * u0 + (1.0 - delta * delta).sqrt() * e;
    let z = if u0 > 0.0 { u1 } else { -u1 };
    Ok(z / t_mixing(nu, rng)?)
}

/// Draws `(f_t, v_t)` for one period.
fn draw_innovations<R: Rng + ?Sized>(dist: &Innovation, r: usize, n: usize, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    let normals = |k: usize, rng: &mut R| -> Vec<f64> { (0..k).map(|_| StandardNormal.sample(rng)).collect() };
    Ok(match *dist {
        Innovation::Gaussian => {
            let f = normals(r, rng);
            (f, normals(n, rng))
        }
        Innovation::Mvt { nu } => {
            let m = t_mixing(nu, rng)?;
            let f = normals(r, rng).into_iter().map(|z| z / m).collect();
            let v = normals(n, rng).into_iter().map(|z| z / m).collect();
            (f, v)
        }
        Innovation::GaussianFactorsMvtErrors { nu } => {
            let f = normals(r, rng);
            (f, gen_mvt(nu, n, rng)?)
        }
        Innovation::AlphaStable { alpha } => {
            let mut draw = |k| (0..k).map(|_| gen_alpha_stable(alpha, 0.0, 1.0, 0.0, rng)).collect::<Result<Vec<_>>>();
            let f = draw(r)?;
            (f, draw(n)?)
        }
        Innovation::SkewTFactorsStableErrors { alpha, skew, nu } => {
            let f = (0..r).map(|_| gen_skew_t(nu, skew, rng)).collect::<Result<Vec<_>>>()?;
            let v = (0..n).map(|_| gen_alpha_stable(alpha, 0.0, 1.0, 0.0, rng)).collect::<Result<Vec<_>>>()?;
            (f, v)
        }
    })
}

/// Factors (`T × r`) and scaled errors (`N × T`) driven by the innovation
/// streams of `seed`.
fn factors_and_errors(cfg: &SimConfig, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, t, r) = (cfg.n, cfg.t, cfg.r);
    let mut factors = DMatrix::zeros(t, r);
    let mut u = DMatrix::zeros(n, t);
    let mut e = vec![0.0; n];
    let mut prefix = vec![0.0; n + 1];
    let scale = cfg.error_scale();
    for step in 0..(BURN_IN + t) {
        let mut rng = substream(seed, STREAM_INNOVATIONS, step as u64);
        let (f, v) = draw_innovations(&cfg.dist, r, n, &mut rng)?;
        for i in 0..n {
            prefix[i + 1] = prefix[i] + v[i];
        }
        for i in 0..n {
            let lo = i.saturating_sub(cfg.j);
            let hi = (i + cfg.j).min(n - 1);
            let window = if cfg.beta == 0.0 { 0.0 } else { cfg.beta * (prefix[hi + 1] - prefix[lo]) };
            e[i] = cfg.rho * e[i] + (1.0 - cfg.beta) * v[i] + window;
        }
        if step >= BURN_IN {
            let col = step - BURN_IN;
            for k in 0..r {
                factors[(col, k)] = f[k];
            }
            for i in 0..n {
                u[(i, col)] = scale * e[i];
            }
        }
    }
    Ok((factors, u))
}

fn draw_loadings(cfg: &SimConfig, seed: u64) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(cfg.n, cfg.r);
    for i in 0..cfg.n {
        let mut rng = substream(seed, STREAM_LOADINGS, i as u64);
        for k in 0..cfg.r {
            l[(i, k)] = StandardNormal.sample(&mut rng);
        }
    }
    l
}

fn assemble(cfg: &SimConfig, loadings: DMatrix<f64>, factors: DMatrix<f64>, u: DMatrix<f64>) -> Result<GroundTruth> {
    let values = &loadings * factors.transpose() + &u * cfg.theta.sqrt();
    let panel = Panel::from_matrix(values)?;
    Ok(GroundTruth { loadings, factors, idiosyncratic: u, panel })
}

/// Generates one panel; identical configurations give bit-identical output.
pub fn gen_scenario(cfg: &SimConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let loadings = draw_loadings(cfg, cfg.seed);
    let (factors, u) = factors_and_errors(cfg, cfg.seed)?;
    assemble(cfg, loadings, factors, u)
}

/// A panel that keeps the loadings and factors of `truth` but redraws the
/// errors from the innovation streams of `noise_seed`.
///
/// Factor draws of the new streams are discarded, so under a joint law the
/// fresh errors follow their marginal distribution.
pub fn redraw_errors(cfg: &SimConfig, truth: &GroundTruth, noise_seed: u64) -> Result<GroundTruth> {
    cfg.validate()?;
    if truth.loadings.shape() != (cfg.n, cfg.r) || truth.factors.shape() != (cfg.t, cfg.r) {
        return Err(Error::dim("ground truth does not match the simulation design"));
    }
    let (_, u) = factors_and_errors(cfg, noise_seed)?;
    assemble(cfg, truth.loadings.clone(), truth.factors.clone(), u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(x: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn alpha_stable_gaussian_branch_variance() {
        let mut rng = substream(1, 9, 0);
        let x: Vec<f64> = (0..1_000_000).map(|_| gen_alpha_stable(2.0, 0.0, 1.0, 0.0, &mut rng).unwrap()).collect();
        let (_, v) = moments(&x);
        assert!((1.98..=2.02).contains(&v), "variance {v}");
    }

    #[test]
    fn alpha_stable_median_is_location() {
        let mut rng = substream(2, 9, 0);
        let mut x: Vec<f64> = (0..1_000_000).map(|_| gen_alpha_stable(1.9, 0.0, 1.0, 5.0, &mut rng).unwrap()).collect();
        x.sort_by(f64::total_cmp);
        let med = 0.5 * (x[499_999] + x[500_000]);
        assert!((4.98..=5.02).contains(&med), "median {med}");
    }

    #[test]
    fn alpha_stable_parameter_checks() {
        let mut rng = substream(3, 9, 0);
        assert!(matches!(gen_alpha_stable(2.5, 0.0, 1.0, 0.0, &mut rng), Err(Error::Parameter(_))));
        assert!(gen_alpha_stable(0.0, 0.0, 1.0, 0.0, &mut rng).is_err());
        assert!(gen_alpha_stable(1.5, 1.5, 1.0, 0.0, &mut rng).is_err());
        assert!(gen_alpha_stable(1.5, 0.0, 0.0, 0.0, &mut rng).is_err());
        // the α = 1 branch is finite
        assert!(gen_alpha_stable(1.0, 0.5, 2.0, 0.0, &mut rng).unwrap().is_finite());
    }

    #[test]
    fn alpha_stable_is_heavy_tailed() {
        let mut hits = 0;
        for batch in 0..20 {
            let mut rng = substream(4, 9, batch);
            let x: Vec<f64> = (0..1_000_000).map(|_| gen_alpha_stable(1.9, 0.0, 1.0, 0.0, &mut rng).unwrap()).collect();
            let (m, v) = moments(&x);
            let m4 = x.iter().map(|a| (a - m).powi(4)).sum::<f64>() / x.len() as f64;
            if m4 / (v * v) > 10.0 {
                hits += 1;
            }
        }
        assert!(hits >= 19, "kurtosis above 10 in only {hits}/20 batches");
    }

    #[test]
    fn mvt_variances() {
        let mut rng = substream(5, 9, 0);
        let x: Vec<f64> = (0..1_000_000).map(|_| gen_mvt(1e6, 1, &mut rng).unwrap()[0]).collect();
        let (_, v) = moments(&x);
        assert!((0.99..=1.01).contains(&v), "variance {v}");

        let mut rng = substream(6, 9, 0);
        let x: Vec<f64> = (0..1_000_000).map(|_| gen_mvt(3.0, 1, &mut rng).unwrap()[0]).collect();
        let (_, v) = moments(&x);
        assert!((2.9..=3.1).contains(&v), "variance {v}");
    }

    #[test]
    fn draws_are_reproducible() {
        let a = gen_mvt(3.0, 1, &mut substream(7, 9, 0)).unwrap();
        let b = gen_mvt(3.0, 1, &mut substream(7, 9, 0)).unwrap();
        assert_eq!(a, b);
        let a = gen_skew_t(3.0, 20.0, &mut substream(7, 9, 1)).unwrap();
        let b = gen_skew_t(3.0, 20.0, &mut substream(7, 9, 1)).unwrap();
        assert_eq!(a, b);
        assert!(gen_mvt(0.0, 2, &mut substream(7, 9, 2)).is_err());
        assert!(gen_skew_t(-1.0, 0.0, &mut substream(7, 9, 2)).is_err());
    }

    fn ks_distance(a: &mut [f64], b: &mut [f64]) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0usize, 0usize, 0f64);
        let (na, nb) = (a.len() as f64, b.len() as f64);
        while i < a.len() && j < b.len() {
            let x = a[i].min(b[j]);
            while i < a.len() && a[i] <= x {
                i += 1;
            }
            while j < b.len() && b[j] <= x {
                j += 1;
            }
            d = d.max((i as f64 / na - j as f64 / nb).abs());
        }
        d
    }

    #[test]
    fn symmetric_skew_t_is_t() {
        let mut r1 = substream(8, 9, 0);
        let mut r2 = substream(8, 9, 1);
        let mut a: Vec<f64> = (0..1_000_000).map(|_| gen_skew_t(3.0, 0.0, &mut r1).unwrap()).collect();
        let mut b: Vec<f64> = (0..1_000_000).map(|_| gen_mvt(3.0, 1, &mut r2).unwrap()[0]).collect();
        let d = ks_distance(&mut a, &mut b);
        assert!(d < 0.005, "KS distance {d}");
    }

    #[test]
    fn skew_t_is_right_skewed() {
        let mut rng = substream(9, 9, 0);
        let x: Vec<f64> = (0..1_000_000).map(|_| gen_skew_t(3.0, 20.0, &mut rng).unwrap()).collect();
        let (m, v) = moments(&x);
        let m3 = x.iter().map(|a| (a - m).powi(3)).sum::<f64>() / x.len() as f64;
        assert!(m3 / v.powf(1.5) > 0.5);
    }

    #[test]
    fn noiseless_panel_is_exactly_low_rank() {
        let mut cfg = SimConfig::preset(Scenario::A, 1, 20, 15, 3).unwrap();
        cfg.theta = 0.0;
        let g = gen_scenario(&cfg).unwrap();
        assert_eq!(g.panel.values(), &g.common_component());
    }

    #[test]
    fn scenario_a_errors_are_raw_innovations() {
        let cfg = SimConfig::preset(Scenario::A, 1, 6, 5, 11).unwrap();
        assert_eq!(cfg.error_scale(), 1.0);
        let g = gen_scenario(&cfg).unwrap();
        for t in 0..5 {
            let mut rng = substream(11, STREAM_INNOVATIONS, (BURN_IN + t) as u64);
            let (f, v) = draw_innovations(&cfg.dist, 3, 6, &mut rng).unwrap();
            for i in 0..6 {
                assert_eq!(g.idiosyncratic[(i, t)], v[i]);
            }
            for k in 0..3 {
                assert_eq!(g.factors[(t, k)], f[k]);
            }
        }
    }

    #[test]
    fn full_spillover_sums_the_window() {
        let cfg = SimConfig { n: 12, t: 4, r: 1, theta: 1.0, rho: 0.0, beta: 0.999_999_999, j: 2, dist: Innovation::Gaussian, seed: 5 };
        let g = gen_scenario(&cfg).unwrap();
        let scale = cfg.error_scale();
        let mut rng = substream(5, STREAM_INNOVATIONS, BURN_IN as u64);
        let (_, v) = draw_innovations(&cfg.dist, 1, 12, &mut rng).unwrap();
        let i = 6;
        let window: f64 = v[i - 2..=i + 2].iter().sum();
        let expect = (1.0 - cfg.beta) * v[i] + cfg.beta * window;
        assert!((g.idiosyncratic[(i, 0)] / scale - expect).abs() < 1e-12);
        // coefficient on v_i is one
        assert!(((1.0 - cfg.beta) + cfg.beta - 1.0f64).abs() < 1e-15);
    }

    #[test]
    fn scenario_b_interior_variance_is_one() {
        let cfg = SimConfig::preset(Scenario::B, 1, 50, 100_000, 17).unwrap();
        assert_eq!(cfg.j, 10);
        let g = gen_scenario(&cfg).unwrap();
        let row: Vec<f64> = g.idiosyncratic.row(25).iter().copied().collect();
        let (_, v) = moments(&row);
        assert!((0.97..=1.03).contains(&v), "variance {v}");
    }

    #[test]
    fn generation_is_deterministic_and_extends_cleanly() {
        let cfg = SimConfig::preset(Scenario::A, 2, 10, 8, 99).unwrap();
        let a = gen_scenario(&cfg).unwrap();
        let b = gen_scenario(&cfg).unwrap();
        assert_eq!(a, b);
        let longer = gen_scenario(&SimConfig { t: 12, ..cfg }).unwrap();
        assert_eq!(longer.factors.rows(0, 8).into_owned(), a.factors);
        assert_eq!(longer.loadings, a.loadings);
        let wider = gen_scenario(&SimConfig { n: 14, ..cfg }).unwrap();
        assert_eq!(wider.loadings.rows(0, 10).into_owned(), a.loadings);
        assert_eq!(wider.factors, a.factors);
    }

    #[test]
    fn presets_and_validation() {
        for s in [Scenario::A, Scenario::B, Scenario::C, Scenario::D] {
            for c in 1..=s.cases() {
                let cfg = SimConfig::preset(s, c, 30, 20, 1).unwrap();
                gen_scenario(&cfg).unwrap();
            }
            assert!(SimConfig::preset(s, s.cases() + 1, 30, 20, 1).is_err());
        }
        let b = SimConfig::preset(Scenario::B, 3, 50, 50, 1).unwrap();
        assert_eq!(b.j, 10);
        assert_eq!(SimConfig::preset(Scenario::D, 1, 400, 50, 1).unwrap().j, 20);
        let bad = SimConfig { rho: 1.0, ..b };
        assert!(gen_scenario(&bad).is_err());
        let bad = SimConfig { j: 51, ..b };
        assert!(bad.validate().is_err());
        let bad = SimConfig { dist: Innovation::AlphaStable { alpha: 2.5 }, ..b };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn redraw_keeps_signal() {
        let cfg = SimConfig::preset(Scenario::A, 1, 10, 12, 4).unwrap();
        let g = gen_scenario(&cfg).unwrap();
        let h = redraw_errors(&cfg, &g, 5).unwrap();
        assert_eq!(g.loadings, h.loadings);
        assert_eq!(g.factors, h.factors);
        assert_ne!(g.idiosyncratic, h.idiosyncratic);
    }
}
