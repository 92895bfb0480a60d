//! Factor-number selection: rank minimization and the eigenvalue-ratio rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit_hpca, fit_ihr, HpcaConfig, IhrConfig};
use crate::panel::{check_symmetric, second_moment, sorted_eigen, Panel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMethod {
    RmHpca,
    RmIhr,
    Er,
}

impl RankMethod {
    pub const NAMES: [&'static str; 3] = ["rm-hpca", "rm-ihr", "er"];

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "rm-hpca" => Some(RankMethod::RmHpca),
            "rm-ihr" => Some(RankMethod::RmIhr),
            "er" => Some(RankMethod::Er),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RankMethod::RmHpca => "rm-hpca",
            RankMethod::RmIhr => "rm-ihr",
            RankMethod::Er => "er",
        }
    }
}

/// Which fitted model the rank-minimization rule reads its factor moments from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RmEstimator {
    Hpca(HpcaConfig),
    Ihr(IhrConfig),
}

/// Estimated number of factors with the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEstimate {
    pub r_hat: usize,
    /// Rank minimization: diagonal of `F̂ᵀF̂/T` for the rank-k fit.
    /// Eigenvalue ratio: leading eigenvalues `λ_1..λ_{k_max+1}` of the second moment.
    pub sigma_diag: Vec<f64>,
    /// Threshold `P`; zero for the eigenvalue-ratio rule, which has none.
    pub threshold: f64,
    pub method: RankMethod,
}

/// `P = min(N, T)^{-1/3}`.
pub fn default_threshold(n: usize, t: usize) -> f64 {
    (n.min(t).max(1) as f64).powf(-1.0 / 3.0)
}

/// Default over-specified rank `min(8, ⌊min(N, T)/2⌋)`, at least 1.
pub fn default_k(n: usize, t: usize) -> usize {
    (n.min(t) / 2).clamp(1, 8)
}

/// Counts the entries of `sigma_diag` strictly above `p`.
pub fn rank_from_diagonal(sigma_diag: &[f64], p: f64) -> Result<usize> {
    if !(p > 0.0) {
        return Err(Error::param(format!("threshold P must be positive, got {p}")));
    }
    Ok(sigma_diag.iter().filter(|&&s| s > p).count())
}

/// Rank-minimization estimate: fit with rank `k`, count factor second moments above `P`.
pub fn estimate_rank_rm(panel: &Panel, k: usize, estimator: &RmEstimator, p: Option<f64>) -> Result<RankEstimate> {
    let max = panel.n().min(panel.t());
    if k == 0 || k > max {
        return Err(Error::dim(format!("k = {k} must be between 1 and min(N, T) = {max}")));
    }
    let p = p.unwrap_or_else(|| default_threshold(panel.n(), panel.t()));
    let (fit, method) = match estimator {
        RmEstimator::Hpca(cfg) => (fit_hpca(panel, k, cfg)?, RankMethod::RmHpca),
        RmEstimator::Ihr(cfg) => (fit_ihr(panel, k, cfg)?, RankMethod::RmIhr),
    };
    let sigma_diag = fit.factor_second_moments();
    let r_hat = rank_from_diagonal(&sigma_diag, p)?;
    Ok(RankEstimate { r_hat, sigma_diag, threshold: p, method })
}

/// Eigenvalue-ratio choice from sorted eigenvalues: `argmax_{j ≤ k_max} λ_j / λ_{j+1}`.
///
/// A zero denominator counts as an infinite ratio; the smallest such `j` wins.
pub fn er_from_eigenvalues(eigenvalues: &[f64], k_max: usize) -> Result<usize> {
    if k_max == 0 || k_max + 1 > eigenvalues.len() {
        return Err(Error::dim(format!(
            "k_max = {k_max} needs at least {} eigenvalues, got {}",
            k_max + 1,
            eigenvalues.len()
        )));
    }
    let mut best = (f64::NEG_INFINITY, 1);
    for j in 1..=k_max {
        let (num, den) = (eigenvalues[j - 1], eigenvalues[j]);
        let ratio = if den == 0.0 { f64::INFINITY } else { num / den };
        if ratio == f64::INFINITY {
            return Ok(j);
        }
        if ratio > best.0 {
            best = (ratio, j);
        }
    }
    Ok(best.1)
}

/// Eigenvalue-ratio estimate on the unweighted second moment of the panel.
pub fn estimate_rank_er(panel: &Panel, k_max: usize) -> Result<RankEstimate> {
    let max = panel.n().min(panel.t());
    if k_max == 0 || k_max + 1 > max {
        return Err(Error::dim(format!("k_max + 1 = {} exceeds min(N, T) = {max}", k_max + 1)));
    }
    let s = second_moment(panel);
    check_symmetric(&s)?;
    let (values, _) = sorted_eigen(&s);
    // exact zero eigenvalues can come out as tiny negatives
    let values: Vec<f64> = values.into_iter().take(k_max + 1).map(|v| v.max(0.0)).collect();
    let r_hat = er_from_eigenvalues(&values, k_max)?;
    Ok(RankEstimate { r_hat, sigma_diag: values, threshold: 0.0, method: RankMethod::Er })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn factor_panel(n: usize, t: usize, r: usize, noise: f64, seed: u64) -> Panel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = |rows, cols| DMatrix::<f64>::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng));
        let l = g(n, r);
        let f = g(t, r);
        let e = g(n, t);
        Panel::from_matrix(l * f.transpose() + e * noise).unwrap()
    }

    #[test]
    fn threshold_examples() {
        assert!((default_threshold(100, 100) - 0.215_443_469).abs() < 1e-8);
        assert!((default_threshold(8, 27) - 0.5).abs() < 1e-15);
        assert_eq!(default_threshold(1, 1), 1.0);
    }

    #[test]
    fn default_k_rule() {
        assert_eq!(default_k(100, 100), 8);
        assert_eq!(default_k(10, 12), 5);
        assert_eq!(default_k(1, 1), 1);
    }

    #[test]
    fn counting_rule() {
        assert_eq!(rank_from_diagonal(&[3.2, 1.1, 0.8, 0.001], 0.1).unwrap(), 3);
        assert!(rank_from_diagonal(&[1.0], -1.0).is_err());
    }

    proptest! {
        #[test]
        fn rank_non_increasing_in_threshold(diag in proptest::collection::vec(0.0f64..5.0, 1..10), p1 in 0.01f64..5.0, p2 in 0.01f64..5.0) {
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            prop_assert!(rank_from_diagonal(&diag, hi).unwrap() <= rank_from_diagonal(&diag, lo).unwrap());
        }
    }

    #[test]
    fn er_examples() {
        assert_eq!(er_from_eigenvalues(&[8.0, 4.0, 2.0, 0.01, 0.009], 4).unwrap(), 3);
        assert_eq!(er_from_eigenvalues(&[5.0, 0.001, 0.0009, 0.0008], 3).unwrap(), 1);
        assert_eq!(er_from_eigenvalues(&[5.0, 4.0, 0.0, 0.0], 3).unwrap(), 2);
        assert!(er_from_eigenvalues(&[1.0, 0.5], 2).is_err());
    }

    #[test]
    fn noiseless_rank_minimization_finds_three() {
        let p = factor_panel(40, 50, 3, 0.0, 1);
        let est = estimate_rank_rm(&p, 8, &RmEstimator::Hpca(HpcaConfig::default()), None).unwrap();
        assert_eq!(est.r_hat, 3);
        assert_eq!(est.sigma_diag.len(), 8);
        assert!(est.sigma_diag[3..].iter().all(|&s| s < 1e-12));
        for w in est.sigma_diag.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn rank_minimization_with_noise() {
        let p = factor_panel(60, 60, 3, 1.0, 2);
        let hp = estimate_rank_rm(&p, 8, &RmEstimator::Hpca(HpcaConfig::default()), None).unwrap();
        assert_eq!(hp.r_hat, 3);
        let ih = estimate_rank_rm(&p, 8, &RmEstimator::Ihr(IhrConfig::default()), None).unwrap();
        assert_eq!(ih.r_hat, 3);
        assert_eq!(ih.method, RankMethod::RmIhr);
        assert!(estimate_rank_rm(&p, 61, &RmEstimator::Hpca(HpcaConfig::default()), None).is_err());
    }

    #[test]
    fn er_scale_invariant() {
        let p = factor_panel(30, 40, 2, 1.0, 3);
        let a = estimate_rank_er(&p, 6).unwrap();
        let b = estimate_rank_er(&p.scaled(37.5).unwrap(), 6).unwrap();
        assert_eq!(a.r_hat, 2);
        assert_eq!(a.r_hat, b.r_hat);
        assert!(estimate_rank_er(&p, 30).is_err());
    }

    #[test]
    fn json_shape() {
        let est = RankEstimate { r_hat: 3, sigma_diag: vec![2.0, 1.0], threshold: 0.5, method: RankMethod::RmHpca };
        let s = serde_json::to_string(&est).unwrap();
        assert_eq!(s, r#"{"r_hat":3,"sigma_diag":[2.0,1.0],"threshold":0.5,"method":"rm_hpca"}"#);
    }
}
