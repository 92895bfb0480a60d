//! Huber loss primitives and an IRLS solver for a single Huber regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Consistency constant turning a median absolute deviation into a normal-scale estimate.
pub const MAD_TO_SIGMA: f64 = 1.4826;

/// Classical 95%-efficiency tuning constant for Huber regression.
pub const DEFAULT_HUBER_C: f64 = 1.345;

/// Largest condition number accepted for a weighted least-squares design.
const MAX_CONDITION: f64 = 1e12;

/// How the Huber threshold τ of a regression is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum TauPolicy {
    /// A fixed threshold.
    Fixed(f64),
    /// `c · 1.4826 · MAD(residuals)`, recomputed every IRLS sweep.
    MadScaled(f64),
}

impl TauPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TauPolicy::Fixed(t) if !(t > 0.0 && t.is_finite()) => Err(Error::param(format!("fixed tau must be positive, got {t}"))),
            TauPolicy::MadScaled(c) if !(c > 0.0 && c.is_finite()) => Err(Error::param(format!("MAD multiplier must be positive, got {c}"))),
            _ => Ok(()),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            TauPolicy::Fixed(t) => format!("fixed({t})"),
            TauPolicy::MadScaled(c) => format!("mad_scaled({c})"),
        }
    }

    /// Resolves τ for the given residuals. `floor` bounds the MAD rule away from zero.
    pub fn resolve(&self, residuals: &[f64], floor: f64) -> f64 {
        match *self {
            TauPolicy::Fixed(t) => t,
            TauPolicy::MadScaled(c) => (c * MAD_TO_SIGMA * mad(residuals)).max(floor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuberConfig {
    pub tau: TauPolicy,
    /// Relative coefficient-change tolerance.
    pub irls_tol: f64,
    pub irls_max_iter: usize,
}

impl Default for HuberConfig {
    fn default() -> Self {
        Self { tau: TauPolicy::MadScaled(DEFAULT_HUBER_C), irls_tol: 1e-8, irls_max_iter: 100 }
    }
}

impl HuberConfig {
    pub fn fixed(tau: f64) -> Self {
        Self { tau: TauPolicy::Fixed(tau), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.tau.validate()?;
        if !(self.irls_tol > 0.0) {
            return Err(Error::param(format!("irls_tol must be positive, got {}", self.irls_tol)));
        }
        if self.irls_max_iter == 0 {
            return Err(Error::param("irls_max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// The Huber function with a validated threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Huber {
    tau: f64,
}

impl Huber {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && !tau.is_nan() {
            Ok(Self { tau })
        } else {
            Err(Error::param(format!("tau must be positive, got {tau}")))
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    #[inline]
    pub fn loss(&self, x: f64) -> f64 {
        let a = x.abs();
        if a <= self.tau {
            0.5 * x * x
        } else {
            self.tau * a - 0.5 * self.tau * self.tau
        }
    }

    #[inline]
    pub fn psi(&self, x: f64) -> f64 {
        x.clamp(-self.tau, self.tau)
    }

    /// IRLS weight `ψ(x)/x`, equal to 1 inside the threshold.
    #[inline]
    pub fn weight(&self, x: f64) -> f64 {
        let a = x.abs();
        if a <= self.tau {
            1.0
        } else {
            self.tau / a
        }
    }
}

pub fn huber_loss(x: f64, tau: f64) -> Result<f64> {
    Ok(Huber::new(tau)?.loss(x))
}

pub fn huber_psi(x: f64, tau: f64) -> Result<f64> {
    Ok(Huber::new(tau)?.psi(x))
}

pub fn huber_weight(x: f64, tau: f64) -> Result<f64> {
    Ok(Huber::new(tau)?.weight(x))
}

/// Median with linear interpolation between the two middle order statistics.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median absolute deviation about the median (unscaled).
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

/// Outcome of [`huber_regress`].
#[derive(Debug, Clone, PartialEq)]
pub struct HuberRegression {
    pub coef: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Threshold in force at the returned iterate.
    pub tau: f64,
    /// `Σ H_τ(y − Xb)` at the starting point and after every sweep.
    pub objective_trace: Vec<f64>,
}

/// Solves `min_b Σ w_i (y_i − x_iᵀ b)²` through a QR factorization of the
/// row-scaled design and an SVD of its triangular factor, refusing designs
/// whose condition number exceeds 1e12.
pub fn weighted_least_squares(y: &DVector<f64>, x: &DMatrix<f64>, w: &[f64]) -> Result<DVector<f64>> {
    let (n, r) = x.shape();
    let mut a = x.clone();
    let mut rhs = y.clone();
    for i in 0..n {
        let s = w[i].sqrt();
        a.row_mut(i).scale_mut(s);
        rhs[i] *= s;
    }
    let qr = a.qr();
    let rmat = qr.r();
    let sv = rmat.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smin > 0.0) || smax / smin > MAX_CONDITION {
        return Err(Error::Degenerate(format!(
            "weighted design ({n}x{r}) is rank-deficient or ill-conditioned (singular values {smax:e}..{smin:e})"
        )));
    }
    qr.q_tr_mul(&mut rhs);
    let top = rhs.rows(0, r).into_owned();
    rmat.solve_upper_triangular(&top)
        .ok_or_else(|| Error::Degenerate("triangular solve failed".into()))
}

fn objective(h: &Huber, resid: &[f64]) -> f64 {
    resid.iter().map(|&e| h.loss(e)).sum()
}

fn residuals(y: &DVector<f64>, x: &DMatrix<f64>, b: &DVector<f64>, out: &mut Vec<f64>) {
    let fitted = x * b;
    out.clear();
    out.extend(y.iter().zip(fitted.iter()).map(|(a, f)| a - f));
}

/// Huber M-regression of `y` on the columns of `x` by iteratively reweighted
/// least squares.
///
/// Starts from `init` when given, otherwise from ordinary least squares.
/// Under a fixed threshold each sweep is a majorize-minimize step, so the
/// objective never increases; an iterate that would increase it (possible
/// only through rounding) is rejected and the solver stops. Reaching the
/// iteration cap is not an error: the last iterate is returned with
/// `converged == false`.
pub fn huber_regress(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    cfg: &HuberConfig,
    init: Option<&DVector<f64>>,
) -> Result<HuberRegression> {
    cfg.validate()?;
    let (n, r) = x.shape();
    if y.len() != n {
        return Err(Error::dim(format!("response has {} entries, design has {n} rows", y.len())));
    }
    if r == 0 || n < r {
        return Err(Error::dim(format!("design is {n}x{r}; need at least as many rows as columns")));
    }
    if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite value in regression data".into()));
    }
    let scale = {
        let rms = (y.norm_squared() / n as f64).sqrt();
        if rms > 0.0 {
            rms
        } else {
            1.0
        }
    };
    let floor = 1e-8 * scale;

    let mut b = match init {
        Some(b0) if b0.len() == r => b0.clone(),
        Some(b0) => return Err(Error::dim(format!("initial coefficients have length {}, expected {r}", b0.len()))),
        None => weighted_least_squares(y, x, &vec![1.0; n])?,
    };
    let fixed = matches!(cfg.tau, TauPolicy::Fixed(_));

    let mut resid = Vec::with_capacity(n);
    residuals(y, x, &b, &mut resid);
    let mut h = Huber { tau: cfg.tau.resolve(&resid, floor) };
    let mut obj = objective(&h, &resid);
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    let mut w = vec![0.0; n];

    while iterations < cfg.irls_max_iter {
        iterations += 1;
        for (wi, &e) in w.iter_mut().zip(&resid) {
            *wi = h.weight(e);
        }
        let b_new = weighted_least_squares(y, x, &w)?;
        let step = (&b_new - &b).norm();
        let size = b_new.norm().max(b.norm());

        let mut new_resid = Vec::with_capacity(n);
        residuals(y, x, &b_new, &mut new_resid);
        let new_h = Huber { tau: cfg.tau.resolve(&new_resid, floor) };
        let new_obj = objective(&new_h, &new_resid);
        if fixed && new_obj > obj {
            converged = true;
            break;
        }
        b = b_new;
        resid = new_resid;
        h = new_h;
        obj = new_obj;
        trace.push(obj);
        if step <= cfg.irls_tol * size || size == 0.0 {
            converged = true;
            break;
        }
    }

    Ok(HuberRegression { coef: b, converged, iterations, tau: h.tau, objective_trace: trace })
}
