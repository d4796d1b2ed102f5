//! Command-line driver. Every run writes a config snapshot next to its
//! artifacts, and re-running with that snapshot reproduces all outputs
//! exactly.

use crate::baselines::{self, VtConfig};
use crate::data::{self, Dataset, SyntheticSpec};
use crate::error::{HemmError, Result};
use crate::eval::{self, CatePredictions, PropensityConfig};
use crate::inference::{self, GridSpec, HeadKind, TrainConfig};
use crate::model::{self, ModelParams, OutcomeKind, PriorKind};
use crate::nn::HeadMode;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "hemm", about = "Heterogeneous effect mixture models", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    L1,
    Group,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadsArg {
    Linear,
    Mlp1,
    Mlp2,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadModeArg {
    Separate,
    Shared,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Linear1,
    Linear2,
    Knn,
    Vt,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed for all randomness.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Input dataset file.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    prior: Option<PriorArg>,
    #[arg(long, value_enum)]
    heads: Option<HeadsArg>,
    #[arg(long, value_enum)]
    head_mode: Option<HeadModeArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark dataset.
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit one model and write checkpoint + trace.
    Train {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Full grid search; writes the leaderboard and the best checkpoint.
    Gridsearch {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Metrics, ROC, and ATE-vs-size curves for a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Fit and evaluate a named baseline.
    Baseline {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, value_enum)]
        name: BaselineArg,
        /// Neighbours for the knn baseline.
        #[arg(long, default_value_t = 10)]
        knn_k: usize,
    },
    /// Per-feature ratio report for the enhanced subgroup of a checkpoint.
    Report {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train once with each method and write both traces.
    CompareEm {
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn default_fractions() -> (f64, f64, f64) {
    (0.5, 0.25, 0.25)
}
fn default_n() -> usize {
    1000
}
fn default_true() -> bool {
    true
}

/// Full run configuration; unknown fields are rejected so typos fail fast.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub n: usize,
    pub fractions: (f64, f64, f64),
    pub standardize: bool,
    pub train: TrainConfig,
    pub grid_ks: Vec<usize>,
    pub grid_lambdas: Vec<f64>,
    pub propensity: PropensityKindConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropensityKindConfig {
    pub logistic: bool,
    pub n_trees: usize,
}

impl Default for PropensityKindConfig {
    fn default() -> Self {
        PropensityKindConfig {
            logistic: false,
            n_trees: 50,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let grid = GridSpec::default();
        RunConfig {
            seed: 0,
            n: default_n(),
            fractions: default_fractions(),
            standardize: default_true(),
            train: TrainConfig::default(),
            grid_ks: grid.ks,
            grid_lambdas: grid.lambdas,
            propensity: PropensityKindConfig::default(),
        }
    }
}

fn load_config(common: &CommonOpts) -> Result<RunConfig> {
    let mut cfg: RunConfig = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| HemmError::InvalidInput(format!("config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.train.seed = cfg.seed;
    if let Some(k) = common.k {
        cfg.train.k = k;
    }
    if let Some(lambda) = common.lambda {
        cfg.train.lambda = lambda;
    }
    if let Some(prior) = common.prior {
        cfg.train.prior_kind = match prior {
            PriorArg::L1 => PriorKind::LaplaceL1,
            PriorArg::Group => PriorKind::GroupL12,
        };
    }
    if let Some(heads) = common.heads {
        cfg.train.head_kind = match heads {
            HeadsArg::Linear => HeadKind::Linear,
            HeadsArg::Mlp1 => HeadKind::Mlp1,
            HeadsArg::Mlp2 => HeadKind::Mlp2,
        };
    }
    if let Some(mode) = common.head_mode {
        cfg.train.head_mode = match mode {
            HeadModeArg::Separate => HeadMode::Separate,
            HeadModeArg::Shared => HeadMode::SharedTrunk,
        };
    }
    Ok(cfg)
}

fn write_snapshot(cfg: &RunConfig, out: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(cfg)
        .map_err(|e| HemmError::InvalidInput(format!("config serialization: {e}")))?;
    fs::write(out.join("run_config.json"), text + "\n")?;
    Ok(())
}

fn require_data(common: &CommonOpts) -> Result<Dataset> {
    let path = common
        .data
        .as_ref()
        .ok_or_else(|| HemmError::InvalidInput("--data is required".into()))?;
    data::load_dataset(path)
}

fn splits(dataset: &Dataset, cfg: &RunConfig) -> Result<(Dataset, Dataset, Dataset)> {
    let (mut train, mut dev, mut test) =
        data::stratified_split(dataset, cfg.fractions, cfg.seed)?;
    if cfg.standardize {
        data::standardize(&mut train, &mut [&mut dev, &mut test])?;
    }
    Ok((train, dev, test))
}

/// Enhanced-subgroup membership probability per row.
fn subgroup_scores(model: &ModelParams, dataset: &Dataset) -> Result<Vec<f64>> {
    let enhanced = model::enhanced_group_index(model);
    (0..dataset.n())
        .map(|i| {
            Ok(model::membership_posterior(&model.mixture, dataset.covariates(i))?[enhanced])
        })
        .collect()
}

fn model_predictions(model: &ModelParams, dataset: &Dataset) -> Result<CatePredictions> {
    let mut f0 = Vec::with_capacity(dataset.n());
    let mut f1 = Vec::with_capacity(dataset.n());
    for i in 0..dataset.n() {
        let x = dataset.covariates(i);
        let post = model::membership_posterior(&model.mixture, x)?;
        let mut m0 = 0.0;
        let mut m1 = 0.0;
        for (k, w) in post.iter().enumerate() {
            m0 += w * model::outcome_mean(model, x, 0, k)?;
            m1 += w * model::outcome_mean(model, x, 1, k)?;
        }
        f0.push(m0);
        f1.push(m1);
    }
    let score = subgroup_scores(model, dataset)?;
    CatePredictions::new(f1, f0, score)
}

fn evaluate_predictions(
    pred: &CatePredictions,
    dataset: &Dataset,
    cfg: &RunConfig,
    out: &Path,
    label: &str,
) -> Result<String> {
    let mut report = String::new();
    match eval::pehe(pred, dataset) {
        Ok((p, rp)) => {
            report.push_str(&format!("pehe {p}\nsqrt_pehe {rp}\n"));
        }
        Err(_) => report.push_str("pehe skipped: no stored potential outcomes or known effect\n"),
    }
    if let Some(group) = &dataset.true_group {
        if group.iter().any(|&g| g == 1) && group.iter().any(|&g| g == 0) {
            let (curve, auc) = eval::roc_auc(&pred.score, group)?;
            report.push_str(&format!("subgroup_auc {auc}\n"));
            fs::write(out.join(format!("{label}_roc.csv")), eval::roc_csv(&curve))?;
        }
    }
    let prop_cfg = PropensityConfig {
        n_trees: cfg.propensity.n_trees,
        logistic: cfg.propensity.logistic,
        seed: cfg.seed,
        ..PropensityConfig::default()
    };
    let prop = eval::fit_propensity(dataset, None, &prop_cfg)?;
    let e = prop.predict_all(dataset);
    let all: Vec<usize> = (0..dataset.n()).collect();
    report.push_str(&format!(
        "population_iptw_ate {}\n",
        eval::iptw_with_scores(dataset, &all, &e)?
    ));
    let curve = eval::ate_size_curve(dataset, &pred.score, &e)?;
    fs::write(out.join(format!("{label}_ate_curve.csv")), eval::curve_csv(&curve))?;
    let hist = prop.positivity_histogram(dataset, 10);
    let mut hist_text = String::from("bin_lower,control,treated\n");
    for (edge, c, t) in hist {
        hist_text.push_str(&format!("{edge},{c},{t}\n"));
    }
    fs::write(out.join(format!("{label}_positivity.csv")), hist_text)?;
    Ok(report)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, n } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = n {
                cfg.n = n;
            }
            fs::create_dir_all(&common.out)?;
            let mut spec = SyntheticSpec::with_seed(cfg.seed);
            spec.n = cfg.n;
            let dataset = data::generate_synthetic(&spec)?;
            data::save_dataset(&dataset, &common.out.join("dataset.csv"))?;
            write_snapshot(&cfg, &common.out)?;
            println!("wrote {} rows to {}", dataset.n(), common.out.join("dataset.csv").display());
        }
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            let dataset = require_data(&common)?;
            fs::create_dir_all(&common.out)?;
            let (train, dev, _) = splits(&dataset, &cfg)?;
            let dev_opt = if dev.n() > 0 { Some(&dev) } else { None };
            let mut tcfg = cfg.train.clone();
            tcfg.outcome_kind = if dataset.outcome_is_binary() {
                OutcomeKind::Binary
            } else {
                OutcomeKind::Continuous
            };
            if dev_opt.is_none() {
                tcfg.early_stop = false;
            }
            let (model, trace) = inference::train_elbo(&train, dev_opt, &tcfg)?;
            crate::checkpoint::save(&model, &common.out.join("checkpoint.ckpt"))?;
            fs::write(common.out.join("trace.csv"), trace.to_csv())?;
            write_snapshot(&cfg, &common.out)?;
            println!("trained K={} model; trace has {} epochs", tcfg.k, trace.rows.len());
        }
        Command::Gridsearch { common } => {
            let cfg = load_config(&common)?;
            let dataset = require_data(&common)?;
            fs::create_dir_all(&common.out)?;
            let ckpt_dir = common.out.join("checkpoints");
            fs::create_dir_all(&ckpt_dir)?;
            let (train, dev, _) = splits(&dataset, &cfg)?;
            if dev.n() == 0 {
                return Err(HemmError::InvalidInput("grid search needs a dev split".into()));
            }
            let mut tcfg = cfg.train.clone();
            tcfg.outcome_kind = if dataset.outcome_is_binary() {
                OutcomeKind::Binary
            } else {
                OutcomeKind::Continuous
            };
            let grid = GridSpec {
                ks: cfg.grid_ks.clone(),
                lambdas: cfg.grid_lambdas.clone(),
                restarts: tcfg.restarts,
                ..GridSpec::default()
            };
            let (best, rows) = inference::grid_search(&train, &dev, &tcfg, &grid, Some(&ckpt_dir))?;
            crate::checkpoint::save(&best, &common.out.join("best.ckpt"))?;
            fs::write(common.out.join("leaderboard.csv"), inference::leaderboard_csv(&rows))?;
            write_snapshot(&cfg, &common.out)?;
            println!("grid search done: {} cells, best dev metric {}", rows.len(), rows[0].dev_metric);
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let dataset = require_data(&common)?;
            fs::create_dir_all(&common.out)?;
            let model = crate::checkpoint::load(&checkpoint)?;
            let pred = model_predictions(&model, &dataset)?;
            let report = evaluate_predictions(&pred, &dataset, &cfg, &common.out, "hemm")?;
            fs::write(common.out.join("metrics.txt"), &report)?;
            write_snapshot(&cfg, &common.out)?;
            print!("{report}");
        }
        Command::Baseline { common, name, knn_k } => {
            let cfg = load_config(&common)?;
            let dataset = require_data(&common)?;
            fs::create_dir_all(&common.out)?;
            let kind = if dataset.outcome_is_binary() {
                OutcomeKind::Binary
            } else {
                OutcomeKind::Continuous
            };
            let (label, pred) = match name {
                BaselineArg::Linear1 => {
                    let m = baselines::fit_linear_single(&dataset, kind)?;
                    let cate: Vec<f64> =
                        (0..dataset.n()).map(|i| m.cate(&dataset.features(i))).collect();
                    ("linear1", CatePredictions::from_cate(cate))
                }
                BaselineArg::Linear2 => {
                    let m = baselines::fit_linear_two(&dataset, kind)?;
                    let cate: Vec<f64> =
                        (0..dataset.n()).map(|i| m.cate(&dataset.features(i))).collect();
                    ("linear2", CatePredictions::from_cate(cate))
                }
                BaselineArg::Knn => {
                    let cate: Vec<f64> = (0..dataset.n())
                        .map(|i| baselines::knn_cate(&dataset, &dataset.features(i), knn_k))
                        .collect::<Result<_>>()?;
                    ("knn", CatePredictions::from_cate(cate))
                }
                BaselineArg::Vt => {
                    let vt_cfg = VtConfig {
                        seed: cfg.seed,
                        ..VtConfig::default()
                    };
                    let vt = baselines::fit_virtual_twins(&dataset, kind, &vt_cfg)?;
                    fs::write(
                        common.out.join("vt_tree.txt"),
                        vt.export_rules(&feature_names(&dataset)),
                    )?;
                    let cate: Vec<f64> =
                        (0..dataset.n()).map(|i| vt.cate(&dataset.features(i))).collect();
                    ("vt", CatePredictions::from_cate(cate))
                }
            };
            let report = evaluate_predictions(&pred, &dataset, &cfg, &common.out, label)?;
            fs::write(common.out.join(format!("{label}_metrics.txt")), &report)?;
            write_snapshot(&cfg, &common.out)?;
            print!("{report}");
        }
        Command::Report { common, checkpoint } => {
            let cfg = load_config(&common)?;
            fs::create_dir_all(&common.out)?;
            let model = crate::checkpoint::load(&checkpoint)?;
            let enhanced = model::enhanced_group_index(&model);
            let ratios = model::subgroup_feature_report(&model.mixture, enhanced);
            let names = checkpoint_feature_names(&common, &model)?;
            let mut text = format!(
                "enhanced component: {enhanced} (gamma {})\nfeature,ratio\n",
                model.outcome.gamma[enhanced]
            );
            for (j, ratio) in ratios {
                let name = names.get(j).cloned().unwrap_or_else(|| format!("x{j}"));
                match ratio {
                    Some(r) => text.push_str(&format!("{name},{r}\n")),
                    None => text.push_str(&format!("{name},undefined\n")),
                }
            }
            fs::write(common.out.join("subgroup_report.csv"), &text)?;
            write_snapshot(&cfg, &common.out)?;
            print!("{text}");
        }
        Command::CompareEm { common } => {
            let cfg = load_config(&common)?;
            let dataset = require_data(&common)?;
            fs::create_dir_all(&common.out)?;
            let (train, dev, _) = splits(&dataset, &cfg)?;
            let dev_opt = if dev.n() > 0 { Some(&dev) } else { None };
            let mut tcfg = cfg.train.clone();
            tcfg.outcome_kind = if dataset.outcome_is_binary() {
                OutcomeKind::Binary
            } else {
                OutcomeKind::Continuous
            };
            if dev_opt.is_none() {
                tcfg.early_stop = false;
            }
            let (_, elbo_trace) = inference::train_elbo(&train, dev_opt, &tcfg)?;
            let (_, em_trace) = inference::train_em(&train, dev_opt, &tcfg)?;
            fs::write(common.out.join("elbo_trace.csv"), elbo_trace.to_csv())?;
            fs::write(common.out.join("em_trace.csv"), em_trace.to_csv())?;
            write_snapshot(&cfg, &common.out)?;
            println!(
                "elbo: {} epochs, em: {} epochs",
                elbo_trace.rows.len(),
                em_trace.rows.len()
            );
        }
    }
    Ok(())
}

fn feature_names(dataset: &Dataset) -> Vec<String> {
    let mut names = dataset.cont_names.clone();
    names.extend(dataset.disc_names.clone());
    names
}

/// Feature names for the report: from --data when given, positional otherwise.
fn checkpoint_feature_names(common: &CommonOpts, model: &ModelParams) -> Result<Vec<String>> {
    if common.data.is_some() {
        let dataset = require_data(common)?;
        return Ok(feature_names(&dataset));
    }
    Ok((0..model.mixture.d_cont() + model.mixture.d_disc())
        .map(|j| format!("x{j}"))
        .collect())
}

fn exit_code(err: &HemmError) -> i32 {
    match err {
        HemmError::Data(_) | HemmError::Io(_) => 2,
        HemmError::NonFinite { .. }
        | HemmError::DegeneratePosterior(_)
        | HemmError::DegenerateResponsibility(_) => 3,
        _ => 1,
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn cli_main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            let code = exit_code(&err);
            if code == 3 {
                // numerical failures leave a diagnostics file behind
                let _ = fs::write("hemm_diagnostics.txt", format!("{err}\n"));
            }
            code
        }
    }
}
