mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use nlnr::baselines::{debiased_lasso, fit_full_lasso_with, write_lasso_csv, DLassoConfig};
use nlnr::dataset::{fmt_f64, load_csv, standardize_with, write_csv, CenterMode, Dataset, StandardizedDataset};
use nlnr::error::{Error, Result};
use nlnr::joint::{joint_infer, joint_report_json};
use nlnr::lasso::{GridSpec, SolverOptions};
use nlnr::nlnr::{boosted_nlnr_infer, infer_all, marginal_scores, nlnr_infer, write_inference, BoostConfig, CoordinateInference, Method};
use nlnr::scn::{estimate_all_scn, estimate_scn_subset, write_neighborhoods, LambdaRule, NeighborhoodCap, ScnConfig, ScnEstimate};
use nlnr::selection::{
    cv_threshold, sis_ranking, threshold_select, write_cv_trace, write_selection, Adjust, CvPredictor, CvSpec,
    SelectionConfig, SelectionRule, Thresholds,
};
use nlnr::simharness::{run_campaign_with_progress, write_report, CampaignConfig};

use manifest::Manifest;

#[derive(Parser, Debug)]
#[command(name = "nlnr", version, about = "Coordinatewise inference and selection for high-dimensional linear models")]
struct Cli {
    /// Worker threads (falls back to NLNR_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// Coordinatewise estimates, intervals, and p-values.
    Infer(InferArgs),
    /// Variable selection by thresholding or p-values.
    Select(SelectArgs),
    /// Joint Wald test for a coordinate subset.
    Joint(JointArgs),
    /// Keep the columns with the largest marginal association.
    Prescreen(PrescreenArgs),
    /// Monte Carlo campaign from a TOML or JSON config.
    Simulate(SimulateArgs),
    /// Lasso or debiased-lasso baselines.
    Baseline(BaselineArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Infer(_) => "infer",
            Command::Select(_) => "select",
            Command::Joint(_) => "joint",
            Command::Prescreen(_) => "prescreen",
            Command::Simulate(_) => "simulate",
            Command::Baseline(_) => "baseline",
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct DataArgs {
    /// Labeled CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Response column (default: last column).
    #[arg(long)]
    response: Option<String>,
    /// CSV of unlabeled covariate rows with the same column names.
    #[arg(long)]
    unlabeled: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Center::Pooled)]
    center: Center,
}

impl DataArgs {
    fn load(&self) -> Result<(Dataset, StandardizedDataset)> {
        let d = load_csv(&self.data, self.response.as_deref(), self.unlabeled.as_deref())?;
        let sd = standardize_with(&d, self.center.into())?;
        Ok((d, sd))
    }

    fn inputs(&self) -> Vec<PathBuf> {
        std::iter::once(self.data.clone()).chain(self.unlabeled.clone()).collect()
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Center {
    Pooled,
    Labeled,
}

impl From<Center> for CenterMode {
    fn from(c: Center) -> Self {
        match c {
            Center::Pooled => CenterMode::Pooled,
            Center::Labeled => CenterMode::Labeled,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum RuleKind {
    Cv,
    Theoretical,
    Fixed,
}

#[derive(Args, Debug, Serialize)]
struct ScnArgs {
    /// How the nodewise penalty is chosen.
    #[arg(long, value_enum, default_value_t = RuleKind::Cv)]
    lambda_rule: RuleKind,
    #[arg(long, default_value_t = 5)]
    scn_folds: usize,
    /// Penalty for `--lambda-rule fixed`.
    #[arg(long)]
    lambda: Option<f64>,
    /// Rate exponent for `--lambda-rule theoretical`.
    #[arg(long)]
    alpha_tilde: Option<f64>,
    /// Constant for `--lambda-rule theoretical`.
    #[arg(long)]
    c_lambda: Option<f64>,
    /// `auto`, `none`, or a positive integer.
    #[arg(long, default_value = "auto")]
    max_neighborhood: String,
}

impl ScnArgs {
    fn config(&self) -> Result<ScnConfig> {
        let lambda_rule = match self.lambda_rule {
            RuleKind::Cv => LambdaRule::Cv { folds: self.scn_folds },
            RuleKind::Fixed => LambdaRule::Fixed {
                lambda: self.lambda.ok_or_else(|| usage("--lambda-rule fixed needs --lambda"))?,
            },
            RuleKind::Theoretical => LambdaRule::Theoretical {
                alpha_tilde: self
                    .alpha_tilde
                    .ok_or_else(|| usage("--lambda-rule theoretical needs --alpha-tilde"))?,
                c_lambda: self.c_lambda.ok_or_else(|| usage("--lambda-rule theoretical needs --c-lambda"))?,
            },
        };
        let max_neighborhood = match self.max_neighborhood.as_str() {
            "auto" => NeighborhoodCap::Auto,
            "none" => NeighborhoodCap::None,
            s => NeighborhoodCap::Limit(
                s.parse()
                    .map_err(|_| usage(&format!("bad --max-neighborhood `{s}`")))?,
            ),
        };
        Ok(ScnConfig {
            lambda_rule,
            max_neighborhood,
            grid: GridSpec::default(),
            solver: SolverOptions::default(),
        })
    }
}

#[derive(Args, Debug, Serialize)]
struct InferenceArgs {
    /// nlnr, boosted-full, boosted-split, or dlasso.
    #[arg(long, default_value = "nlnr")]
    method: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of screened columns added by the boosted methods.
    #[arg(long)]
    d_j: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct InferArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    scn: ScnArgs,
    #[command(flatten)]
    inference: InferenceArgs,
    /// Coordinates by column name or 0-based index; default all.
    #[arg(long = "target", value_delimiter = ',')]
    targets: Vec<String>,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum RuleArg {
    Raw,
    Studentized,
    Pvalue,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum AdjustArg {
    None,
    HolmSidak,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum PredictorArg {
    Refit,
    Plugin,
}

#[derive(Args, Debug, Serialize)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    scn: ScnArgs,
    #[command(flatten)]
    inference: InferenceArgs,
    /// Selection config file (TOML or JSON); overrides the rule flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RuleArg::Pvalue)]
    rule: RuleArg,
    /// Threshold for `raw` (on |estimate|) or `studentized` (on |z|).
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha_tau: f64,
    #[arg(long, value_enum, default_value_t = AdjustArg::None)]
    adjust: AdjustArg,
    /// Keep at most this many coordinates.
    #[arg(long)]
    s_bar: Option<usize>,
    /// Candidate studentized thresholds; enables cross-validation.
    #[arg(long, value_delimiter = ',')]
    cv_grid: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    cv_folds: usize,
    #[arg(long, value_enum, default_value_t = PredictorArg::Refit)]
    cv_predictor: PredictorArg,
    /// Re-estimate neighborhoods inside every fold.
    #[arg(long)]
    rescn: bool,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    out: PathBuf,
}

impl SelectArgs {
    fn selection_config(&self) -> Result<SelectionConfig> {
        if let Some(path) = &self.config {
            return read_config(path);
        }
        let rule = match self.rule {
            RuleArg::Raw => SelectionRule::Raw {
                tau: Thresholds::Uniform(self.tau.ok_or_else(|| usage("--rule raw needs --tau"))?),
            },
            RuleArg::Studentized => SelectionRule::Studentized {
                tau_n: match (self.tau, self.cv_grid.is_empty()) {
                    (Some(t), _) => t,
                    (None, false) => self.cv_grid[0],
                    (None, true) => return Err(usage("--rule studentized needs --tau or --cv-grid")),
                },
            },
            RuleArg::Pvalue => SelectionRule::PValue {
                alpha_tau: self.alpha_tau,
                adjust: match self.adjust {
                    AdjustArg::None => Adjust::None,
                    AdjustArg::HolmSidak => Adjust::HolmSidak,
                },
            },
        };
        let cv = (!self.cv_grid.is_empty()).then(|| CvSpec {
            grid: self.cv_grid.clone(),
            folds: self.cv_folds,
            seed: self.inference.seed,
            predictor: match self.cv_predictor {
                PredictorArg::Refit => CvPredictor::Refit,
                PredictorArg::Plugin => CvPredictor::Plugin,
            },
            rescn: self.rescn,
        });
        Ok(SelectionConfig {
            rule,
            s_bar: self.s_bar,
            cv,
        })
    }
}

#[derive(Args, Debug, Serialize)]
struct JointArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    scn: ScnArgs,
    /// Coordinates by column name or 0-based index.
    #[arg(long = "targets", value_delimiter = ',', required = true)]
    targets: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct PrescreenArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Number of columns to keep.
    #[arg(long)]
    top_m: usize,
    /// Also write the reduced labeled (and unlabeled) data.
    #[arg(long)]
    write_data: bool,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum BaselineMethod {
    Lasso,
    Dlasso,
}

#[derive(Args, Debug, Serialize)]
struct BaselineArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    method: BaselineMethod,
    /// Folds for the main lasso penalty.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Fixed main penalty instead of cross-validation.
    #[arg(long)]
    lambda: Option<f64>,
    /// Folds for the nodewise penalties of the debiased lasso.
    #[arg(long, default_value_t = 5)]
    nodewise_folds: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    #[serde(skip)]
    out: PathBuf,
}

fn usage(msg: &str) -> Error {
    Error::InvalidInput(msg.to_string())
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_str(&text)?)
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Column names win over indices so numeric column names still work.
fn resolve_targets(raw: &[String], names: &[String]) -> Result<Vec<usize>> {
    if raw.is_empty() {
        return Ok((0..names.len()).collect());
    }
    let mut out = Vec::with_capacity(raw.len());
    for t in raw {
        let j = match names.iter().position(|n| n == t) {
            Some(j) => j,
            None => match t.parse::<usize>() {
                Ok(j) if j < names.len() => j,
                _ => return Err(usage(&format!("unknown target `{t}`"))),
            },
        };
        if out.contains(&j) {
            return Err(usage(&format!("duplicate target `{t}`")));
        }
        out.push(j);
    }
    Ok(out)
}

/// Result files of a run plus whether any coordinate failed numerically.
struct Outcome {
    files: Vec<PathBuf>,
    partial_failure: bool,
}

struct Planned {
    path: PathBuf,
    bytes: Vec<u8>,
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Writes all planned files only after every computation succeeded.
fn commit(out: &Path, planned: Vec<Planned>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    planned
        .into_iter()
        .map(|p| {
            std::fs::write(&p.path, p.bytes)?;
            Ok(p.path)
        })
        .collect()
}

fn run_inference(
    sd: &StandardizedDataset,
    targets: &[usize],
    scn: &ScnArgs,
    args: &InferenceArgs,
) -> Result<(Method, Option<Vec<ScnEstimate>>, Vec<Result<CoordinateInference>>)> {
    let method: Method = args.method.parse()?;
    let cfg = scn.config()?;
    if method == Method::DLasso {
        let dcfg = DLassoConfig {
            main_lambda: LambdaRule::Cv { folds: scn.scn_folds },
            nodewise_lambda: cfg.lambda_rule,
            grid: cfg.grid,
            solver: cfg.solver,
        };
        let fit = debiased_lasso(sd, &dcfg, args.seed, args.alpha)?;
        let rows = targets.iter().map(|&j| Ok(fit.inference[j].clone())).collect();
        return Ok((method, None, rows));
    }
    let list = estimate_scn_subset(targets, sd, &cfg, args.seed)?;
    let boost = BoostConfig {
        d_j: args.d_j,
        split: method == Method::BoostedSplit,
        split_seed: args.seed,
    };
    let rows = targets
        .iter()
        .zip(&list)
        .map(|(&j, e)| match method {
            Method::Nlnr => nlnr_infer(j, sd, e, args.alpha),
            _ => boosted_nlnr_infer(j, sd, e, &boost, args.alpha),
        })
        .collect();
    Ok((method, Some(list), rows))
}

fn inference_bytes(names: &[String], targets: &[usize], method: Method, rows: &[Result<CoordinateInference>]) -> Result<Vec<u8>> {
    let table: Vec<_> = targets
        .iter()
        .zip(rows)
        .map(|(&j, r)| (j, method, r.as_ref().map_err(|e| e.to_string())))
        .collect();
    csv_bytes(|b| write_inference(b, names, &table))
}

fn report_failures(targets: &[usize], rows: &[Result<CoordinateInference>]) -> bool {
    let mut any = false;
    for (j, r) in targets.iter().zip(rows) {
        if let Err(e) = r {
            eprintln!("coordinate {j}: {e}");
            any = true;
        }
    }
    any
}

fn cmd_infer(a: &InferArgs, m: &mut Manifest) -> Result<Outcome> {
    let (d, sd) = a.data.load()?;
    m.inputs(&a.data.inputs())?;
    m.seed = Some(a.inference.seed);
    let targets = resolve_targets(&a.targets, d.feature_names())?;
    let (method, scn, rows) = run_inference(&sd, &targets, &a.scn, &a.inference)?;
    let mut planned = vec![Planned {
        path: a.out.join("inference.csv"),
        bytes: inference_bytes(d.feature_names(), &targets, method, &rows)?,
    }];
    if let Some(list) = scn {
        planned.push(Planned {
            path: a.out.join("neighborhoods.csv"),
            bytes: csv_bytes(|b| write_neighborhoods(b, &list))?,
        });
    }
    let partial_failure = report_failures(&targets, &rows);
    Ok(Outcome {
        files: commit(&a.out, planned)?,
        partial_failure,
    })
}

fn cmd_select(a: &SelectArgs, m: &mut Manifest) -> Result<Outcome> {
    let sel = a.selection_config()?;
    sel.validate()?;
    let (d, sd) = a.data.load()?;
    let mut inputs = a.data.inputs();
    inputs.extend(a.config.clone());
    m.inputs(&inputs)?;
    m.seed = Some(a.inference.seed);
    let method: Method = a.inference.method.parse()?;
    let targets: Vec<usize> = (0..sd.p()).collect();
    let scn_cfg = a.scn.config()?;
    let (scn, rows) = if method == Method::DLasso {
        let (_, _, rows) = run_inference(&sd, &targets, &a.scn, &a.inference)?;
        (None, rows)
    } else {
        let list = estimate_all_scn(&sd, &scn_cfg, a.inference.seed)?;
        let boost = BoostConfig {
            d_j: a.inference.d_j,
            split: method == Method::BoostedSplit,
            split_seed: a.inference.seed,
        };
        let rows = infer_all(&sd, &list, method, &boost, a.inference.alpha)?;
        (Some((list, boost)), rows)
    };
    if report_failures(&targets, &rows) {
        return Err(Error::CoordinateFailures(
            rows.into_iter()
                .enumerate()
                .filter_map(|(j, r)| r.err().map(|e| (j, Box::new(e))))
                .collect(),
        ));
    }
    let inference: Vec<CoordinateInference> = rows.iter().map(|r| r.as_ref().cloned().expect("checked")).collect();

    let mut planned = Vec::new();
    let mut applied = sel.clone();
    if let (Some(spec), SelectionRule::Studentized { .. }) = (&sel.cv, &sel.rule) {
        let (list, boost) = scn
            .as_ref()
            .ok_or_else(|| usage("cross-validated thresholds need an nlnr or boosted method"))?;
        let cv = cv_threshold(&sd, list, method, boost, spec, sel.s_bar, &scn_cfg)?;
        applied.rule = SelectionRule::Studentized { tau_n: cv.tau_n };
        planned.push(Planned {
            path: a.out.join("cv_trace.csv"),
            bytes: csv_bytes(|b| write_cv_trace(b, &cv))?,
        });
    }
    applied.cv = None;
    let result = threshold_select(&inference, &applied)?;
    planned.push(Planned {
        path: a.out.join("selection.csv"),
        bytes: csv_bytes(|b| write_selection(b, d.feature_names(), &result))?,
    });
    planned.push(Planned {
        path: a.out.join("inference.csv"),
        bytes: inference_bytes(d.feature_names(), &targets, method, &rows)?,
    });
    if let Some((list, _)) = &scn {
        planned.push(Planned {
            path: a.out.join("neighborhoods.csv"),
            bytes: csv_bytes(|b| write_neighborhoods(b, list))?,
        });
    }
    Ok(Outcome {
        files: commit(&a.out, planned)?,
        partial_failure: false,
    })
}

fn cmd_joint(a: &JointArgs, m: &mut Manifest) -> Result<Outcome> {
    let (d, sd) = a.data.load()?;
    m.inputs(&a.data.inputs())?;
    m.seed = Some(a.seed);
    let targets = resolve_targets(&a.targets, d.feature_names())?;
    let scn = estimate_all_scn(&sd, &a.scn.config()?, a.seed)?;
    let j = joint_infer(&targets, &sd, &scn, a.alpha)?;
    let planned = vec![
        Planned {
            path: a.out.join("joint.json"),
            bytes: (joint_report_json(&j, d.feature_names())? + "\n").into_bytes(),
        },
        Planned {
            path: a.out.join("neighborhoods.csv"),
            bytes: csv_bytes(|b| write_neighborhoods(b, &scn))?,
        },
    ];
    if j.oversized {
        eprintln!("warning: working set of {} columns exceeds sqrt(n)", j.working_set.len());
    }
    Ok(Outcome {
        files: commit(&a.out, planned)?,
        partial_failure: false,
    })
}

fn cmd_prescreen(a: &PrescreenArgs, m: &mut Manifest) -> Result<Outcome> {
    let (d, sd) = a.data.load()?;
    m.inputs(&a.data.inputs())?;
    let kept = nlnr::selection::sis_prescreen(&sd, a.top_m)?;
    let rank = sis_ranking(&sd)?;
    let rows: Vec<usize> = (0..sd.n()).collect();
    let scores = marginal_scores(&sd, &rows)?;
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["j", "name", "score", "rank"]).map_err(Error::from)?;
        for &j in &kept {
            let r = rank.iter().position(|&k| k == j).expect("ranked") + 1;
            w.write_record([j.to_string(), d.feature_names()[j].clone(), fmt_f64(scores[j]), r.to_string()])
                .map_err(Error::from)?;
        }
        w.flush()?;
    }
    let planned = vec![Planned {
        path: a.out.join("prescreen.csv"),
        bytes: buf,
    }];
    let mut files = commit(&a.out, planned)?;
    if a.write_data {
        let reduced = d.select_columns(&kept)?;
        let lab = a.out.join("reduced.csv");
        let unl = (reduced.n_unlabeled() > 0).then(|| a.out.join("reduced_unlabeled.csv"));
        write_csv(&reduced, &lab, unl.as_deref())?;
        files.push(lab);
        files.extend(unl);
    }
    Ok(Outcome {
        files,
        partial_failure: false,
    })
}

fn cmd_simulate(a: &SimulateArgs, m: &mut Manifest) -> Result<Outcome> {
    let cfg = CampaignConfig::from_file(&a.config)?;
    m.inputs(std::slice::from_ref(&a.config))?;
    m.config = serde_json::to_value(&cfg)?;
    m.seed = Some(cfg.design.base_seed);
    let total = cfg.design.replicates;
    let report = run_campaign_with_progress(&cfg, |k| eprint!("\rreplicate {k}/{total}"))?;
    eprintln!();
    if !report.provenance.failed.is_empty() {
        eprintln!("{} replicate(s) failed and were excluded", report.provenance.failed.len());
    }
    Ok(Outcome {
        files: write_report(&report, &a.out)?,
        partial_failure: false,
    })
}

fn cmd_baseline(a: &BaselineArgs, m: &mut Manifest) -> Result<Outcome> {
    let (d, sd) = a.data.load()?;
    m.inputs(&a.data.inputs())?;
    m.seed = Some(a.seed);
    let main_lambda = match a.lambda {
        Some(lambda) => LambdaRule::Fixed { lambda },
        None => LambdaRule::Cv { folds: a.folds },
    };
    let bytes = match a.method {
        BaselineMethod::Lasso => {
            let fit = fit_full_lasso_with(&sd, &main_lambda, &GridSpec::default(), &SolverOptions::default(), a.seed)?;
            csv_bytes(|b| write_lasso_csv(b, d.feature_names(), &fit))?
        }
        BaselineMethod::Dlasso => {
            let cfg = DLassoConfig {
                main_lambda,
                nodewise_lambda: LambdaRule::Cv { folds: a.nodewise_folds },
                ..DLassoConfig::default()
            };
            let fit = debiased_lasso(&sd, &cfg, a.seed, a.alpha)?;
            let targets: Vec<usize> = (0..sd.p()).collect();
            let rows: Vec<Result<CoordinateInference>> = fit.inference.into_iter().map(Ok).collect();
            inference_bytes(d.feature_names(), &targets, Method::DLasso, &rows)?
        }
    };
    Ok(Outcome {
        files: commit(
            &a.out,
            vec![Planned {
                path: a.out.join("baseline.csv"),
                bytes,
            }],
        )?,
        partial_failure: false,
    })
}

fn out_dir(c: &Command) -> &Path {
    match c {
        Command::Infer(a) => &a.out,
        Command::Select(a) => &a.out,
        Command::Joint(a) => &a.out,
        Command::Prescreen(a) => &a.out,
        Command::Simulate(a) => &a.out,
        Command::Baseline(a) => &a.out,
    }
}

fn threads(flag: Option<usize>) -> std::result::Result<Option<usize>, String> {
    match flag {
        Some(0) => Err("--threads must be >= 1".into()),
        Some(n) => Ok(Some(n)),
        None => match std::env::var("NLNR_THREADS") {
            Ok(v) => v
                .parse::<usize>()
                .ok()
                .filter(|n| *n > 0)
                .map(Some)
                .ok_or_else(|| format!("NLNR_THREADS must be a positive integer, got `{v}`")),
            Err(_) => Ok(None),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let n_threads = match threads(cli.threads) {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    if let Some(n) = n_threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let started = Instant::now();
    let argv: Vec<String> = std::env::args().collect();
    let mut m = Manifest::new(cli.command.name(), argv, serde_json::to_value(&cli.command).unwrap_or_default());
    m.threads = rayon::current_num_threads();
    let result = match &cli.command {
        Command::Infer(a) => cmd_infer(a, &mut m),
        Command::Select(a) => cmd_select(a, &mut m),
        Command::Joint(a) => cmd_joint(a, &mut m),
        Command::Prescreen(a) => cmd_prescreen(a, &mut m),
        Command::Simulate(a) => cmd_simulate(a, &mut m),
        Command::Baseline(a) => cmd_baseline(a, &mut m),
    };
    match result {
        Ok(outcome) => {
            m.wall_seconds = started.elapsed().as_secs_f64();
            let path = out_dir(&cli.command).join("manifest.json");
            if let Err(e) = m.finish(&outcome.files).and_then(|_| m.write(&path)) {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
            if outcome.partial_failure {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

