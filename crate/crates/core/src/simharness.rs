//! Seeded Monte Carlo campaigns over block-Toeplitz precision designs.
//!
//! Covariates are Gaussian with a block-diagonal precision whose blocks are
//! `[ρ^|i−j|]`. The implied covariance is rescaled coordinatewise to unit
//! variance, which keeps the precision support unchanged. Every replicate is
//! generated from its own seed, so replicates run in any order and on any
//! number of threads with identical results.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{debiased_lasso, fit_full_lasso_with, DLassoConfig};
use crate::dataset::{fmt_f64, standardize_with, CenterMode, Dataset};
use crate::error::{Error, Result};
use crate::nlnr::{infer_all, nlnr_infer, boosted_nlnr_infer, BoostConfig, CoordinateInference, Method};
use crate::numerics::{cholesky, invert_spd, CholFactor, Matrix, SymMatrix};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::scn::{estimate_all_scn, estimate_scn_subset, ScnConfig, ScnEstimate};
use crate::selection::{cv_threshold, threshold_select, SelectionConfig, SelectionRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaStructure {
    Sparse,
    Dense,
    StrongPlusSine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub p: usize,
    #[serde(default = "default_block")]
    pub block_size: usize,
    pub rho: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_unlabeled")]
    pub n_unlabeled: usize,
    pub beta_structure: BetaStructure,
    /// Multiplier on the strong-signal coefficients (1 reproduces the
    /// published formulas; smaller values push signals toward the margin).
    #[serde(default = "one")]
    pub signal_scale: f64,
    #[serde(default = "default_reps")]
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
}

fn default_block() -> usize {
    20
}
fn default_n() -> usize {
    200
}
fn default_unlabeled() -> usize {
    6200
}
fn default_reps() -> usize {
    200
}
fn one() -> f64 {
    1.0
}

impl SimDesign {
    pub fn new(p: usize, rho: f64, beta_structure: BetaStructure) -> Self {
        Self {
            p,
            block_size: default_block(),
            rho,
            n: default_n(),
            n_unlabeled: default_unlabeled(),
            beta_structure,
            signal_scale: 1.0,
            replicates: default_reps(),
            base_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 || self.p % self.block_size != 0 {
            return Err(Error::BadBlocking {
                p: self.p,
                k: self.block_size,
            });
        }
        if !(self.rho >= 0.0 && self.rho < 1.0) {
            return Err(Error::OutOfRange(format!("rho = {}", self.rho)));
        }
        if self.p < 26 {
            return Err(Error::DimensionTooSmall(self.p));
        }
        if self.n < 2 {
            return Err(Error::OutOfRange(format!("n = {}", self.n)));
        }
        if !self.signal_scale.is_finite() {
            return Err(Error::OutOfRange(format!("signal_scale = {}", self.signal_scale)));
        }
        Ok(())
    }
}

fn toeplitz_block(k: usize, rho: f64) -> SymMatrix {
    let mut t = Matrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            t[(a, b)] = rho.powi(a.abs_diff(b) as i32);
        }
    }
    SymMatrix::new(t).expect("Toeplitz block is symmetric")
}

/// One unit-variance covariance block and its diagonal rescaling `D^{1/2}`.
fn covariance_block(k: usize, rho: f64) -> Result<(SymMatrix, Vec<f64>)> {
    let theta = toeplitz_block(k, rho);
    let sigma = invert_spd(&cholesky(&theta, 0.0)?);
    let d: Vec<f64> = (0..k).map(|a| sigma.get(a, a).sqrt()).collect();
    let mut s = sigma.into_matrix();
    for a in 0..k {
        for b in 0..k {
            s[(a, b)] /= d[a] * d[b];
        }
    }
    for a in 0..k {
        s[(a, a)] = 1.0;
    }
    Ok((SymMatrix::symmetrize(s)?, d))
}

fn check_blocking(p: usize, k: usize, rho: f64) -> Result<()> {
    if k == 0 || p % k != 0 {
        return Err(Error::BadBlocking { p, k });
    }
    if !(rho >= 0.0 && rho < 1.0) {
        return Err(Error::OutOfRange(format!("rho = {rho}")));
    }
    Ok(())
}

fn block_diagonal(p: usize, block: &Matrix) -> Matrix {
    let k = block.nrows();
    let mut out = Matrix::zeros(p, p);
    for start in (0..p).step_by(k) {
        for a in 0..k {
            for b in 0..k {
                out[(start + a, start + b)] = block[(a, b)];
            }
        }
    }
    out
}

/// Unit-diagonal covariance `Σ*` of the block design.
pub fn build_covariance(p: usize, k: usize, rho: f64) -> Result<SymMatrix> {
    check_blocking(p, k, rho)?;
    let (block, _) = covariance_block(k, rho)?;
    SymMatrix::new(block_diagonal(p, block.matrix()))
}

/// Precision of `Σ*`, `D^{1/2} Θ D^{1/2}`.
pub fn implied_precision(p: usize, k: usize, rho: f64) -> Result<SymMatrix> {
    check_blocking(p, k, rho)?;
    let (_, d) = covariance_block(k, rho)?;
    let mut t = toeplitz_block(k, rho).into_matrix();
    for a in 0..k {
        for b in 0..k {
            t[(a, b)] *= d[a] * d[b];
        }
    }
    SymMatrix::symmetrize(block_diagonal(p, &t))
}

/// True neighborhoods: every other coordinate in the same block.
pub fn oracle_neighborhoods(p: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 || p % k != 0 {
        return Err(Error::BadBlocking { p, k });
    }
    Ok((0..p)
        .map(|j| {
            let start = j / k * k;
            (start..start + k).filter(|&l| l != j).collect()
        })
        .collect())
}

/// Strong-signal set, 0-based.
pub fn strong_set() -> Vec<usize> {
    vec![0, 1, 2, 3, 4, 20, 21, 22, 23, 24]
}

/// Coefficients and the strong-signal set for a structure.
pub fn gen_beta(structure: BetaStructure, p: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    if p < 26 {
        return Err(Error::DimensionTooSmall(p));
    }
    let sine = |idx: usize| 0.2 * ((idx + 1) as f64).sin();
    let mut beta: Vec<f64> = match structure {
        BetaStructure::Sparse => vec![0.0; p],
        BetaStructure::Dense | BetaStructure::StrongPlusSine => (0..p).map(sine).collect(),
    };
    for j0 in 1..=5usize {
        let f = j0 as f64;
        let (first, second) = match structure {
            BetaStructure::StrongPlusSine => (3.5 - 0.5 * f, 3.5 - 0.5 * f),
            BetaStructure::Sparse => (3.0 - (f - 1.0) / 4.0, 2.0 - (f - 1.0) / 4.0),
            BetaStructure::Dense => (4.0 - (f - 1.0) / 4.0, 3.0 - (f - 1.0) / 4.0),
        };
        beta[j0 - 1] = first;
        beta[20 + j0 - 1] = second;
    }
    Ok((beta, strong_set()))
}

/// Everything needed to draw replicates of one design.
pub struct Sampler {
    design: SimDesign,
    block_chol: CholFactor,
    beta: Vec<f64>,
    strong: Vec<usize>,
}

impl Sampler {
    pub fn new(design: &SimDesign) -> Result<Self> {
        design.validate()?;
        let (block, _) = covariance_block(design.block_size, design.rho)?;
        let block_chol = cholesky(&block, 0.0)?;
        let (mut beta, strong) = gen_beta(design.beta_structure, design.p)?;
        for &j in &strong {
            beta[j] *= design.signal_scale;
        }
        Ok(Self {
            design: design.clone(),
            block_chol,
            beta,
            strong,
        })
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn strong(&self) -> &[usize] {
        &self.strong
    }

    pub fn replicate_seed(&self, rep: usize) -> u64 {
        derive_seed(self.design.base_seed, rep as u64)
    }

    pub fn sample(&self, rep: usize) -> Result<Dataset> {
        let d = &self.design;
        let seed = self.replicate_seed(rep);
        let rows = d.n + d.n_unlabeled;
        let k = d.block_size;
        let l = self.block_chol.lower();
        let mut xr = stream_rng(seed, stream::COVARIATES);
        let mut x = Matrix::zeros(rows, d.p);
        let mut z = vec![0.0; k];
        for i in 0..rows {
            let row = x.row_mut(i);
            for start in (0..d.p).step_by(k) {
                for v in z.iter_mut() {
                    *v = StandardNormal.sample(&mut xr);
                }
                for a in 0..k {
                    let lr = l.row(a);
                    let mut s = 0.0;
                    for b in 0..=a {
                        s += lr[b] * z[b];
                    }
                    row[start + a] = s;
                }
            }
        }
        let mut er = stream_rng(seed, stream::NOISE);
        let y: Vec<f64> = (0..d.n)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut er);
                crate::numerics::dot(x.row(i), &self.beta) + e
            })
            .collect();
        let labeled = x.select(&(0..d.n).collect::<Vec<_>>(), &(0..d.p).collect::<Vec<_>>());
        let unlabeled = (d.n_unlabeled > 0).then(|| {
            x.select(&(d.n..rows).collect::<Vec<_>>(), &(0..d.p).collect::<Vec<_>>())
        });
        Dataset::new(labeled, y, unlabeled, None)
    }
}

pub fn sample_replicate(design: &SimDesign, rep: usize) -> Result<Dataset> {
    Sampler::new(design)?.sample(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CampaignMethod {
    Nlnr,
    #[serde(alias = "boosted-full")]
    Boosted,
    BoostedSplit,
    Lasso,
    #[serde(rename = "dlasso")]
    DLasso,
}

impl CampaignMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            CampaignMethod::Nlnr => "nlnr",
            CampaignMethod::Boosted => "boosted",
            CampaignMethod::BoostedSplit => "boosted-split",
            CampaignMethod::Lasso => "lasso",
            CampaignMethod::DLasso => "dlasso",
        }
    }

    fn uses_scn(&self) -> bool {
        matches!(self, CampaignMethod::Nlnr | CampaignMethod::Boosted | CampaignMethod::BoostedSplit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub design: SimDesign,
    pub methods: Vec<CampaignMethod>,
    #[serde(default)]
    pub selection: Option<SelectionConfig>,
    #[serde(default)]
    pub scn: ScnConfig,
    #[serde(default)]
    pub boost: BoostConfig,
    #[serde(default)]
    pub dlasso: DLassoConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub center: CenterMode,
    /// Estimate every neighborhood and compare it with the true one.
    #[serde(default)]
    pub track_scn_recovery: bool,
}

fn default_alpha() -> f64 {
    0.05
}

impl CampaignConfig {
    pub fn new(design: SimDesign, methods: Vec<CampaignMethod>) -> Self {
        Self {
            design,
            methods,
            selection: None,
            scn: ScnConfig::default(),
            boost: BoostConfig::default(),
            dlasso: DLassoConfig::default(),
            alpha: default_alpha(),
            center: CenterMode::default(),
            track_scn_recovery: false,
        }
    }

    /// Parse TOML or JSON, chosen by extension (`.json` is JSON, else TOML).
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Ok(serde_json::from_str(&text)?)
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
        }
    }
}

/// What one method produced on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodOutcome {
    /// Estimates of the strong-signal coefficients, in `strong` order.
    pub estimates: Vec<f64>,
    /// Interval coverage of the strong signals; absent for the plain lasso.
    pub covered: Option<Vec<bool>>,
    pub selected: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub rep: usize,
    pub methods: Vec<(CampaignMethod, MethodOutcome)>,
    /// Coordinates whose estimated neighborhood equals the true one.
    pub scn_exact: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalRow {
    pub method: CampaignMethod,
    pub j: usize,
    pub beta: f64,
    pub bias: f64,
    pub mse: f64,
    /// `None` for methods without intervals.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRow {
    pub method: CampaignMethod,
    pub prop_superset: f64,
    pub prop_exact: f64,
    pub fsr: f64,
    pub nsr: f64,
    pub mean_size: f64,
    /// `Σ|M̃ ∩ M*|` and `Σ|M̃|`, kept for the FSR identity.
    pub true_selected: usize,
    pub total_selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config: CampaignConfig,
    pub replicate_seeds: Vec<u64>,
    pub completed: usize,
    pub failed: Vec<(usize, String)>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub per_signal: Vec<SignalRow>,
    pub selection: Vec<SelectionRow>,
    /// Share of (replicate, coordinate) pairs with exact neighborhood recovery.
    pub scn_recovery: Option<f64>,
    pub provenance: Provenance,
    /// Raw per-replicate outcomes for further analysis.
    #[serde(skip)]
    pub replicates: Vec<ReplicateOutcome>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl SimReport {
    pub fn signal(&self, method: CampaignMethod) -> Vec<&SignalRow> {
        self.per_signal.iter().filter(|r| r.method == method).collect()
    }

    pub fn selection_for(&self, method: CampaignMethod) -> Option<&SelectionRow> {
        self.selection.iter().find(|r| r.method == method)
    }

    /// Mean over strong signals of `(bias, mse, coverage)`.
    pub fn summary(&self, method: CampaignMethod) -> (f64, f64, Option<f64>) {
        let rows = self.signal(method);
        let k = rows.len() as f64;
        let bias = rows.iter().map(|r| r.bias).sum::<f64>() / k;
        let mse = rows.iter().map(|r| r.mse).sum::<f64>() / k;
        let cov = rows
            .iter()
            .map(|r| r.coverage)
            .sum::<Option<f64>>()
            .map(|c| c / k);
        (bias, mse, cov)
    }
}

/// Seeds used inside one replicate, derived from its own seed.
mod key {
    pub const SCN: u64 = 11;
    pub const SPLIT: u64 = 12;
    pub const BASELINE: u64 = 13;
    pub const CV: u64 = 14;
}

fn run_replicate(
    sampler: &Sampler,
    cfg: &CampaignConfig,
    oracle: &[Vec<usize>],
    rep: usize,
) -> Result<ReplicateOutcome> {
    let data = sampler.sample(rep)?;
    let sd = standardize_with(&data, cfg.center)?;
    let seed = sampler.replicate_seed(rep);
    let strong = sampler.strong();
    let beta = sampler.beta();
    let need_all = cfg.selection.is_some();

    let wants_scn = cfg.methods.iter().any(|m| m.uses_scn());
    let scn_seed = derive_seed(seed, key::SCN);
    // Every coordinate is needed for selection and recovery tracking; the
    // strong signals alone suffice otherwise.
    let scn: Option<Vec<ScnEstimate>> = if need_all || cfg.track_scn_recovery {
        Some(estimate_all_scn(&sd, &cfg.scn, scn_seed)?)
    } else if wants_scn {
        Some(estimate_scn_subset(strong, &sd, &cfg.scn, scn_seed)?)
    } else {
        None
    };
    let scn_exact = match (&scn, cfg.track_scn_recovery) {
        (Some(list), true) => Some(
            list.iter()
                .zip(oracle)
                .filter(|(e, o)| e.omega == **o)
                .count(),
        ),
        _ => None,
    };
    let scn_for = |j: usize| -> &ScnEstimate {
        let list = scn.as_ref().expect("neighborhoods estimated");
        list.iter().find(|e| e.j == j).expect("coordinate estimated")
    };

    let mut methods = Vec::with_capacity(cfg.methods.len());
    for &m in &cfg.methods {
        let outcome = match m {
            CampaignMethod::Lasso => {
                let fit = fit_full_lasso_with(
                    &sd,
                    &cfg.dlasso.main_lambda,
                    &cfg.dlasso.grid,
                    &cfg.dlasso.solver,
                    derive_seed(seed, key::BASELINE),
                )?;
                MethodOutcome {
                    estimates: strong.iter().map(|&j| fit.coefficients[j]).collect(),
                    covered: None,
                    selected: None,
                }
            }
            CampaignMethod::DLasso => {
                let fit = debiased_lasso(&sd, &cfg.dlasso, derive_seed(seed, key::BASELINE), cfg.alpha)?;
                let selected = match &cfg.selection {
                    Some(sel) => Some(select_without_cv(&fit.inference, sel)?),
                    None => None,
                };
                summarize(&fit.inference, strong, beta, selected)
            }
            CampaignMethod::Nlnr | CampaignMethod::Boosted | CampaignMethod::BoostedSplit => {
                let method = match m {
                    CampaignMethod::Nlnr => Method::Nlnr,
                    CampaignMethod::Boosted => Method::BoostedFull,
                    _ => Method::BoostedSplit,
                };
                let boost = BoostConfig {
                    split: method == Method::BoostedSplit,
                    split_seed: derive_seed(seed, key::SPLIT),
                    ..cfg.boost
                };
                let inference: Vec<CoordinateInference> = if need_all {
                    let list = scn.as_ref().expect("neighborhoods estimated");
                    crate::scn::collect_coordinates(infer_all(&sd, list, method, &boost, cfg.alpha)?)?
                } else {
                    strong
                        .iter()
                        .map(|&j| match method {
                            Method::Nlnr => nlnr_infer(j, &sd, scn_for(j), cfg.alpha),
                            _ => boosted_nlnr_infer(j, &sd, scn_for(j), &boost, cfg.alpha),
                        })
                        .collect::<Result<_>>()?
                };
                let selected = match &cfg.selection {
                    Some(sel) => Some(select_with_cv(&sd, scn.as_ref().expect("neighborhoods estimated"), method, &boost, sel, &cfg.scn, &inference, seed)?),
                    None => None,
                };
                summarize(&inference, strong, beta, selected)
            }
        };
        methods.push((m, outcome));
    }
    Ok(ReplicateOutcome {
        rep,
        methods,
        scn_exact,
    })
}

fn summarize(
    inference: &[CoordinateInference],
    strong: &[usize],
    beta: &[f64],
    selected: Option<Vec<usize>>,
) -> MethodOutcome {
    let pick = |j: usize| inference.iter().find(|c| c.j == j).expect("strong coordinate inferred");
    MethodOutcome {
        estimates: strong.iter().map(|&j| pick(j).estimate).collect(),
        covered: Some(strong.iter().map(|&j| pick(j).covers(beta[j])).collect()),
        selected,
    }
}

fn select_without_cv(inference: &[CoordinateInference], sel: &SelectionConfig) -> Result<Vec<usize>> {
    let plain = SelectionConfig {
        cv: None,
        ..sel.clone()
    };
    Ok(threshold_select(inference, &plain)?.selected)
}

#[allow(clippy::too_many_arguments)]
fn select_with_cv(
    sd: &crate::dataset::StandardizedDataset,
    scn: &[ScnEstimate],
    method: Method,
    boost: &BoostConfig,
    sel: &SelectionConfig,
    scn_cfg: &ScnConfig,
    inference: &[CoordinateInference],
    seed: u64,
) -> Result<Vec<usize>> {
    match (&sel.cv, &sel.rule) {
        (Some(cv), SelectionRule::Studentized { .. }) => {
            let spec = crate::selection::CvSpec {
                seed: derive_seed(seed, key::CV),
                ..cv.clone()
            };
            let out = cv_threshold(sd, scn, method, boost, &spec, sel.s_bar, scn_cfg)?;
            let chosen = SelectionConfig {
                rule: SelectionRule::Studentized { tau_n: out.tau_n },
                s_bar: sel.s_bar,
                cv: None,
            };
            Ok(threshold_select(inference, &chosen)?.selected)
        }
        _ => select_without_cv(inference, sel),
    }
}

/// Run every replicate and aggregate. Failed replicates are excluded and
/// listed in the provenance; more than 10% failures abort the campaign.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<SimReport> {
    run_campaign_with_progress(cfg, |_| {})
}

pub fn run_campaign_with_progress(cfg: &CampaignConfig, progress: impl Fn(usize) + Sync) -> Result<SimReport> {
    let started = Instant::now();
    let design = &cfg.design;
    if design.replicates == 0 {
        return Err(Error::OutOfRange("replicates must be >= 1".into()));
    }
    if cfg.methods.is_empty() && !cfg.track_scn_recovery {
        return Err(Error::InvalidInput("no methods requested".into()));
    }
    if let Some(sel) = &cfg.selection {
        sel.validate()?;
    }
    let sampler = Sampler::new(design)?;
    let oracle = oracle_neighborhoods(design.p, design.block_size)?;
    let done = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<Result<ReplicateOutcome>> = (0..design.replicates)
        .into_par_iter()
        .map(|rep| {
            let r = run_replicate(&sampler, cfg, &oracle, rep);
            progress(done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1);
            r
        })
        .collect();
    let total = results.len();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => ok.push(o),
            Err(e) => failed.push((rep, e.to_string())),
        }
    }
    if failed.len() * 10 > total {
        return Err(Error::CampaignAborted {
            failed: failed.len(),
            total,
        });
    }
    let report = aggregate(&sampler, cfg, ok, failed, started.elapsed().as_secs_f64());
    Ok(report)
}

fn aggregate(
    sampler: &Sampler,
    cfg: &CampaignConfig,
    ok: Vec<ReplicateOutcome>,
    failed: Vec<(usize, String)>,
    wall_seconds: f64,
) -> SimReport {
    let strong = sampler.strong();
    let beta = sampler.beta();
    let r = ok.len() as f64;
    let mut per_signal = Vec::new();
    let mut selection = Vec::new();
    for (mi, &m) in cfg.methods.iter().enumerate() {
        for (s, &j) in strong.iter().enumerate() {
            let est: Vec<f64> = ok.iter().map(|o| o.methods[mi].1.estimates[s]).collect();
            let mean = est.iter().sum::<f64>() / r;
            let mse = est.iter().map(|e| (e - beta[j]).powi(2)).sum::<f64>() / r;
            let coverage = ok
                .iter()
                .map(|o| o.methods[mi].1.covered.as_ref().map(|c| c[s] as u8 as f64))
                .sum::<Option<f64>>()
                .map(|c| c / r);
            per_signal.push(SignalRow {
                method: m,
                j,
                beta: beta[j],
                bias: (mean - beta[j]).abs(),
                mse,
                coverage,
            });
        }
        let sets: Option<Vec<&Vec<usize>>> = ok.iter().map(|o| o.methods[mi].1.selected.as_ref()).collect();
        if let Some(sets) = sets {
            let target: BTreeSet<usize> = strong.iter().copied().collect();
            let (mut sup, mut exact, mut false_sel, mut total_sel, mut missed) = (0usize, 0usize, 0usize, 0usize, 0usize);
            for s in &sets {
                let chosen: BTreeSet<usize> = s.iter().copied().collect();
                let hits = chosen.intersection(&target).count();
                if hits == target.len() {
                    sup += 1;
                    if chosen.len() == target.len() {
                        exact += 1;
                    }
                }
                false_sel += chosen.len() - hits;
                total_sel += chosen.len();
                missed += target.len() - hits;
            }
            selection.push(SelectionRow {
                method: m,
                prop_superset: sup as f64 / r,
                prop_exact: exact as f64 / r,
                fsr: if total_sel == 0 { 0.0 } else { false_sel as f64 / total_sel as f64 },
                nsr: missed as f64 / (r * target.len() as f64),
                mean_size: total_sel as f64 / r,
                true_selected: total_sel - false_sel,
                total_selected: total_sel,
            });
        }
    }
    let scn_recovery = ok
        .iter()
        .map(|o| o.scn_exact)
        .sum::<Option<usize>>()
        .map(|hits| hits as f64 / (r * cfg.design.p as f64));
    SimReport {
        per_signal,
        selection,
        scn_recovery,
        provenance: Provenance {
            config: cfg.clone(),
            replicate_seeds: (0..cfg.design.replicates).map(|k| sampler.replicate_seed(k)).collect(),
            completed: ok.len(),
            failed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        replicates: ok,
        wall_seconds,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_per_signal<W: Write>(out: W, report: &SimReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "j", "beta", "bias", "mse", "coverage"])?;
    for r in &report.per_signal {
        w.write_record([
            r.method.as_str().to_string(),
            r.j.to_string(),
            fmt_f64(r.beta),
            fmt_f64(r.bias),
            fmt_f64(r.mse),
            opt(r.coverage),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_selection_summary<W: Write>(out: W, report: &SimReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "prop_superset", "prop_exact", "fsr", "nsr", "mean_size"])?;
    for r in &report.selection {
        w.write_record([
            r.method.as_str().to_string(),
            fmt_f64(r.prop_superset),
            fmt_f64(r.prop_exact),
            fmt_f64(r.fsr),
            fmt_f64(r.nsr),
            fmt_f64(r.mean_size),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `per_signal.csv`, `selection.csv`, and `provenance.json` into `dir`.
pub fn write_report(report: &SimReport, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let a = dir.join("per_signal.csv");
    let b = dir.join("selection.csv");
    let c = dir.join("provenance.json");
    write_per_signal(std::fs::File::create(&a)?, report)?;
    write_selection_summary(std::fs::File::create(&b)?, report)?;
    #[derive(Serialize)]
    struct Prov<'a> {
        #[serde(flatten)]
        provenance: &'a Provenance,
        scn_recovery: Option<f64>,
    }
    let text = serde_json::to_string_pretty(&Prov {
        provenance: &report.provenance,
        scn_recovery: report.scn_recovery,
    })?;
    std::fs::write(&c, text + "\n")?;
    Ok(vec![a, b, c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_formulas() {
        let (b, m) = gen_beta(BetaStructure::StrongPlusSine, 60).unwrap();
        assert_eq!(m, strong_set());
        assert_eq!((b[0], b[4], b[20], b[24]), (3.0, 1.0, 3.0, 1.0));
        assert!((b[5] - 0.2 * 6f64.sin()).abs() < 1e-15);
        assert!((b[5] + 0.0559).abs() < 1e-4);
        let (b, _) = gen_beta(BetaStructure::Sparse, 30).unwrap();
        assert_eq!((b[0], b[20], b[5]), (3.0, 2.0, 0.0));
        let (b, _) = gen_beta(BetaStructure::Dense, 30).unwrap();
        assert_eq!((b[0], b[20]), (4.0, 3.0));
        assert!((b[5] - 0.2 * 6f64.sin()).abs() < 1e-15);
        assert!(matches!(gen_beta(BetaStructure::Dense, 25), Err(Error::DimensionTooSmall(25))));
    }

    #[test]
    fn oracle_examples() {
        assert!(oracle_neighborhoods(4, 1).unwrap().iter().all(|o| o.is_empty()));
        assert_eq!(oracle_neighborhoods(4, 2).unwrap(), vec![vec![1], vec![0], vec![3], vec![2]]);
        assert!(matches!(oracle_neighborhoods(5, 2), Err(Error::BadBlocking { .. })));
    }

    #[test]
    fn covariance_identity_at_zero_rho() {
        let s = build_covariance(40, 20, 0.0).unwrap();
        assert_eq!(s.matrix(), &Matrix::identity(40));
    }

    #[test]
    fn config_parses_from_toml() {
        let text = r#"
methods = ["nlnr", "boosted", "dlasso"]
alpha = 0.05

[design]
p = 60
rho = 0.6
beta_structure = "strong-plus-sine"
replicates = 3
base_seed = 9
"#;
        let cfg: CampaignConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.design.n, 200);
        assert_eq!(cfg.design.n_unlabeled, 6200);
        assert_eq!(cfg.design.block_size, 20);
        assert_eq!(cfg.methods, vec![CampaignMethod::Nlnr, CampaignMethod::Boosted, CampaignMethod::DLasso]);
    }
}
