//! Accuracy metrics and the Monte Carlo harness.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::{Estimator, HpcaConfig, IhrConfig};
use crate::panel::{normalize_fit, sign_align, FactorFit};
use crate::rank::{estimate_rank_er, estimate_rank_rm, RankMethod, RmEstimator};
use crate::synth::{gen_scenario, redraw_errors, GroundTruth, SimConfig};

const ORTHONORMAL_TOL: f64 = 1e-8;

/// Thin orthonormal basis of the column space of `m`.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().qr().q()
}

fn check_orthonormal(o: &DMatrix<f64>, which: &str) -> Result<()> {
    let gram = o.transpose() * o;
    let dev = (gram - DMatrix::identity(o.ncols(), o.ncols())).amax();
    if dev > ORTHONORMAL_TOL {
        return Err(Error::Validation(format!("{which} is not column-orthonormal (deviation {dev:e})")));
    }
    Ok(())
}

/// `D = √(1 − Tr(O₁O₁ᵀO₂O₂ᵀ)/max(q₁, q₂))` for column-orthonormal `O₁`, `O₂`.
pub fn subspace_distance(o1: &DMatrix<f64>, o2: &DMatrix<f64>) -> Result<f64> {
    if o1.nrows() != o2.nrows() {
        return Err(Error::dim(format!("bases live in R^{} and R^{}", o1.nrows(), o2.nrows())));
    }
    if o1.ncols() == 0 || o2.ncols() == 0 {
        return Err(Error::dim("empty basis"));
    }
    check_orthonormal(o1, "first argument")?;
    check_orthonormal(o2, "second argument")?;
    let overlap = (o1.transpose() * o2).norm_squared();
    let q = o1.ncols().max(o2.ncols()) as f64;
    Ok((1.0 - overlap / q).clamp(0.0, 1.0).sqrt())
}

/// Per-replication errors of a fit against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationErrors {
    /// `‖L̂F̂ᵀ − LFᵀ‖²_F / ‖LFᵀ‖²_F`
    pub cc_err: f64,
    pub fl_dist: f64,
    pub fs_dist: f64,
}

pub fn replication_errors(fit: &FactorFit, truth: &GroundTruth) -> Result<ReplicationErrors> {
    if fit.loadings.nrows() != truth.loadings.nrows() || fit.factors.nrows() != truth.factors.nrows() {
        return Err(Error::dim(format!(
            "fit is {}x{}, truth is {}x{}",
            fit.loadings.nrows(),
            fit.factors.nrows(),
            truth.loadings.nrows(),
            truth.factors.nrows()
        )));
    }
    let cc = truth.common_component();
    let denom = cc.norm_squared();
    if denom == 0.0 {
        return Err(Error::Validation("true common component is zero".into()));
    }
    let cc_err = (fit.common_component() - cc).norm_squared() / denom;
    let fl_dist = subspace_distance(&orthonormalize(&fit.loadings), &orthonormalize(&truth.loadings))?;
    let fs_dist = subspace_distance(&orthonormalize(&fit.factors), &orthonormalize(&truth.factors))?;
    Ok(ReplicationErrors { cc_err, fl_dist, fs_dist })
}

/// `M` replication seeds derived from `master_seed` by SplitMix64.
pub fn replication_seeds(master_seed: u64, m: usize) -> Vec<u64> {
    let mut state = master_seed;
    (0..m)
        .map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        })
        .collect()
}

/// Linear-interpolation quantile (`h = (n − 1)τ + 1`) of unsorted data.
pub fn quantile(values: &[f64], tau: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, tau)
}

pub(crate) fn quantile_sorted(sorted: &[f64], tau: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * tau;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// A factor-number rule applied in a rank study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankRule {
    pub method: RankMethod,
    /// Over-specified rank for rank minimization, `k_max` for the ratio rule.
    pub k: usize,
    /// Rank-minimization threshold; `None` means `min(N, T)^{-1/3}`.
    pub threshold: Option<f64>,
}

impl RankRule {
    fn apply(&self, panel: &crate::Panel) -> Result<usize> {
        let est = match self.method {
            RankMethod::RmHpca => estimate_rank_rm(panel, self.k, &RmEstimator::Hpca(HpcaConfig::default()), self.threshold)?,
            RankMethod::RmIhr => estimate_rank_rm(panel, self.k, &RmEstimator::Ihr(IhrConfig::default()), self.threshold)?,
            RankMethod::Er => estimate_rank_er(panel, self.k)?,
        };
        Ok(est.r_hat)
    }
}

/// What a Monte Carlo study measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Study {
    /// Fit each estimator with the true rank and score it against the truth.
    Estimation { methods: Vec<Estimator> },
    /// Select the number of factors with each rule.
    Rank { rules: Vec<RankRule> },
}

impl Study {
    fn names(&self) -> Vec<String> {
        match self {
            Study::Estimation { methods } => methods.iter().map(|m| m.name().to_string()).collect(),
            Study::Rank { rules } => rules.iter().map(|r| r.method.name().to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationSummary {
    pub mee_cc: f64,
    pub mee_cc_iqr: f64,
    pub ave_fl: f64,
    pub ave_fl_sd: f64,
    pub ave_fs: f64,
    pub ave_fs_sd: f64,
    pub successes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub mean_rhat: f64,
    pub under_count: usize,
    pub over_count: usize,
    pub successes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    pub message: String,
}

/// Aggregated Monte Carlo results.
///
/// Dispersion fields are 0 when a method has a single successful replication.
/// A method whose replications all failed has no summary entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub config: SimConfig,
    pub study: Study,
    pub replications: usize,
    pub seeds: Vec<u64>,
    /// Method names in the order requested.
    pub methods: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub estimation: BTreeMap<String, EstimationSummary>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rank: BTreeMap<String, RankSummary>,
    pub failures: BTreeMap<String, Vec<Failure>>,
}

impl McReport {
    /// Table with one row per method in request order.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self.study {
            Study::Estimation { .. } => {
                out.push_str("method,mee_cc,mee_cc_iqr,ave_fl,ave_fl_sd,ave_fs,ave_fs_sd\n");
                for name in &self.methods {
                    if let Some(s) = self.estimation.get(name) {
                        out.push_str(&format!(
                            "{name},{},{},{},{},{},{}\n",
                            s.mee_cc, s.mee_cc_iqr, s.ave_fl, s.ave_fl_sd, s.ave_fs, s.ave_fs_sd
                        ));
                    } else {
                        out.push_str(&format!("{name},,,,,,\n"));
                    }
                }
            }
            Study::Rank { .. } => {
                out.push_str("method,mean_rhat,under,over\n");
                for name in &self.methods {
                    if let Some(s) = self.rank.get(name) {
                        out.push_str(&format!("{name},{},{},{}\n", s.mean_rhat, s.under_count, s.over_count));
                    } else {
                        out.push_str(&format!("{name},,,\n"));
                    }
                }
            }
        }
        out
    }

    pub fn failure_count(&self, method: &str) -> usize {
        self.failures.get(method).map_or(0, Vec::len)
    }
}

#[derive(Clone)]
enum Outcome {
    Errors(ReplicationErrors),
    Rank(usize),
}

fn run_replication(cfg: &SimConfig, study: &Study, seed: u64) -> Vec<std::result::Result<Outcome, String>> {
    let cfg = SimConfig { seed, ..*cfg };
    let truth = match gen_scenario(&cfg) {
        Ok(t) => t,
        Err(e) => {
            let n = study.names().len();
            return vec![Err(format!("generation failed: {e}")); n];
        }
    };
    match study {
        Study::Estimation { methods } => methods
            .iter()
            .map(|m| {
                m.fit(&truth.panel, cfg.r)
                    .and_then(|fit| replication_errors(&fit, &truth))
                    .map(Outcome::Errors)
                    .map_err(|e| e.to_string())
            })
            .collect(),
        Study::Rank { rules } => rules
            .iter()
            .map(|rule| rule.apply(&truth.panel).map(Outcome::Rank).map_err(|e| e.to_string()))
            .collect(),
    }
}

fn validate_study(study: &Study) -> Result<()> {
    let names = study.names();
    if names.is_empty() {
        return Err(Error::param("no methods requested"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for n in &names {
        if !seen.insert(n) {
            return Err(Error::param(format!("method {n} requested twice")));
        }
    }
    if let Study::Estimation { methods } = study {
        for m in methods {
            match m {
                Estimator::Pca => {}
                Estimator::Hpca(c) => c.validate()?,
                Estimator::Ihr(c) => c.validate()?,
            }
        }
    }
    if let Study::Rank { rules } = study {
        for r in rules {
            if r.k == 0 {
                return Err(Error::param("k must be positive"));
            }
            if let Some(p) = r.threshold {
                if !(p > 0.0) {
                    return Err(Error::param(format!("threshold P must be positive, got {p}")));
                }
            }
        }
    }
    Ok(())
}

/// Runs `m` replications with seeds derived from `master_seed`.
pub fn run_monte_carlo(cfg: &SimConfig, study: &Study, m: usize, master_seed: u64) -> Result<McReport> {
    if m == 0 {
        return Err(Error::param("number of replications must be at least 1"));
    }
    run_monte_carlo_with_seeds(cfg, study, &replication_seeds(master_seed, m))
}

/// Runs one replication per given seed; the panel of a replication is
/// `gen_scenario` of `cfg` with its seed replaced.
pub fn run_monte_carlo_with_seeds(cfg: &SimConfig, study: &Study, seeds: &[u64]) -> Result<McReport> {
    if seeds.is_empty() {
        return Err(Error::param("number of replications must be at least 1"));
    }
    cfg.validate()?;
    validate_study(study)?;
    let names = study.names();
    let outcomes: Vec<_> = seeds.par_iter().map(|&s| run_replication(cfg, study, s)).collect();

    let mut failures: BTreeMap<String, Vec<Failure>> = names.iter().map(|n| (n.clone(), Vec::new())).collect();
    let mut estimation = BTreeMap::new();
    let mut rank = BTreeMap::new();
    for (k, name) in names.iter().enumerate() {
        let mut errs = Vec::new();
        let mut rhats = Vec::new();
        for (rep, &seed) in outcomes.iter().zip(seeds) {
            match &rep[k] {
                Ok(Outcome::Errors(e)) => errs.push(*e),
                Ok(Outcome::Rank(r)) => rhats.push(*r),
                Err(message) => failures.get_mut(name).unwrap().push(Failure { seed, message: message.clone() }),
            }
        }
        if !errs.is_empty() {
            let cc: Vec<f64> = errs.iter().map(|e| e.cc_err).collect();
            let fl: Vec<f64> = errs.iter().map(|e| e.fl_dist).collect();
            let fs: Vec<f64> = errs.iter().map(|e| e.fs_dist).collect();
            let (ave_fl, ave_fl_sd) = mean_sd(&fl);
            let (ave_fs, ave_fs_sd) = mean_sd(&fs);
            estimation.insert(
                name.clone(),
                EstimationSummary {
                    mee_cc: quantile(&cc, 0.5),
                    mee_cc_iqr: quantile(&cc, 0.75) - quantile(&cc, 0.25),
                    ave_fl,
                    ave_fl_sd,
                    ave_fs,
                    ave_fs_sd,
                    successes: errs.len(),
                },
            );
        }
        if !rhats.is_empty() {
            let mean_rhat = rhats.iter().sum::<usize>() as f64 / rhats.len() as f64;
            rank.insert(
                name.clone(),
                RankSummary {
                    mean_rhat,
                    under_count: rhats.iter().filter(|&&r| r < cfg.r).count(),
                    over_count: rhats.iter().filter(|&&r| r > cfg.r).count(),
                    successes: rhats.len(),
                },
            );
        }
    }
    Ok(McReport {
        config: *cfg,
        study: study.clone(),
        replications: seeds.len(),
        seeds: seeds.to_vec(),
        methods: names,
        estimation,
        rank,
        failures,
    })
}

/// Result of the loading-normality probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub series: usize,
    /// Per component: sample mean of `z` divided by its sample standard deviation.
    pub mean_z: Vec<f64>,
    /// Per component: correlation of sorted `z` with normal scores.
    pub qq_corr_by_component: Vec<f64>,
    /// Minimum of `qq_corr_by_component`.
    pub qq_corr: f64,
    pub replications: usize,
    pub failures: Vec<Failure>,
}

/// Checks the sampling distribution of one IHR loading row against the normal.
///
/// The loadings and factors are drawn once from `cfg` and normalized; each
/// replication redraws only the errors. The statistic is
/// `z = √T (l̂_i − Ŝ l_{0i})`, with `Ŝ` aligning estimated factor signs to
/// the truth, and normal scores use Blom's plotting positions.
pub fn normality_probe(cfg: &SimConfig, i: usize, m: usize) -> Result<NormalityReport> {
    cfg.validate()?;
    if !cfg.dist.has_finite_variance() {
        return Err(Error::param(format!(
            "normality probe needs errors with bounded second moments; {:?} has infinite variance",
            cfg.dist
        )));
    }
    if m < 200 {
        return Err(Error::param(format!("normality probe needs at least 200 replications, got {m}")));
    }
    if i >= cfg.n {
        return Err(Error::dim(format!("series index {i} out of range for N = {}", cfg.n)));
    }
    let raw = gen_scenario(cfg)?;
    let (l0, f0) = normalize_fit(&raw.loadings, &raw.factors)?;
    let truth = GroundTruth { loadings: l0, factors: f0, ..raw };
    let seeds = replication_seeds(cfg.seed ^ 0x6E6F_726D_616C_6974, m);
    let est = Estimator::Ihr(IhrConfig::default());
    let sqrt_t = (cfg.t as f64).sqrt();

    let draws: Vec<std::result::Result<Vec<f64>, String>> = seeds
        .par_iter()
        .map(|&seed| {
            let run = || -> Result<Vec<f64>> {
                let sample = redraw_errors(cfg, &truth, seed)?;
                let fit = est.fit(&sample.panel, cfg.r)?;
                let s = sign_align(&fit.factors, &truth.factors)?;
                Ok((0..cfg.r)
                    .map(|k| sqrt_t * (fit.loadings[(i, k)] - s.diag()[k] as f64 * truth.loadings[(i, k)]))
                    .collect())
            };
            run().map_err(|e| e.to_string())
        })
        .collect();

    let mut failures = Vec::new();
    let mut z: Vec<Vec<f64>> = vec![Vec::new(); cfg.r];
    for (d, &seed) in draws.into_iter().zip(&seeds) {
        match d {
            Ok(v) => {
                for (k, x) in v.into_iter().enumerate() {
                    z[k].push(x);
                }
            }
            Err(message) => failures.push(Failure { seed, message }),
        }
    }
    let ok = z[0].len();
    if ok < 2 {
        return Err(Error::Degenerate(format!("only {ok} of {m} replications succeeded")));
    }

    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let scores: Vec<f64> = (1..=ok)
        .map(|j| normal.inverse_cdf((j as f64 - 0.375) / (ok as f64 + 0.25)))
        .collect();
    let mut mean_z = Vec::with_capacity(cfg.r);
    let mut qq = Vec::with_capacity(cfg.r);
    for mut zk in z {
        let (mean, sd) = mean_sd(&zk);
        mean_z.push(if sd > 0.0 { mean / sd } else { 0.0 });
        zk.sort_by(f64::total_cmp);
        qq.push(correlation(&zk, &scores));
    }
    let qq_corr = qq.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(NormalityReport { series: i, mean_z, qq_corr_by_component: qq, qq_corr, replications: ok, failures })
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, _) = mean_sd(a);
    let (mb, _) = mean_sd(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}
