//! Subcommands of the `drmoe` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use drmoe_core::data::{generate, stratified_split, GenSpec, Split};
use drmoe_core::experts::ExpertMode;
use drmoe_core::metrics::{prf, Confusion};
use drmoe_core::train::{TrainConfig, Trainer};

use crate::ablate::{run_ablation, AblationSpec, HeadOption};
use crate::checkpoint::Checkpoint;
use crate::config::{config_to_json, load_config, parse_experts, Overrides};
use crate::error::{CliError, Result};
use crate::io::{read_dataset, write_dataset, write_text, Format};
use crate::report::{evaluate_model, history_jsonl, EvalReport};

#[derive(Debug, Parser)]
#[command(
    name = "drmoe",
    version,
    about = "Mistake detection with dual-stage mixtures of experts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic long-tailed dataset split into train/val/test.
    GenData(GenDataArgs),
    /// Train a model and write its checkpoint and history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a data file, or report given confusion counts.
    Eval(EvalArgs),
    /// Train and compare expert and head configurations over several seeds.
    Ablate(AblateArgs),
}

fn parse_fracs(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|_| "expected three comma-separated fractions".to_string())
}

/// Generator flags shared by `gen-data` and `ablate`.
#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 4000)]
    pub n: usize,
    /// Proportion of mistake samples.
    #[arg(long, default_value_t = 0.05)]
    pub imbalance: f64,
    #[arg(long, default_value_t = 16)]
    pub d_ctx: usize,
    #[arg(long, default_value_t = 16)]
    pub d_seg: usize,
    #[arg(long, default_value_t = 2.0)]
    pub mean_shift: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise_corr: f64,
    /// Train/val/test fractions.
    #[arg(long, value_parser = parse_fracs, default_value = "0.6,0.2,0.2")]
    pub split_fracs: [f64; 3],
}

impl GenArgs {
    fn spec(&self, seed: u64) -> GenSpec {
        GenSpec {
            n: self.n,
            imbalance: self.imbalance,
            d_ctx: self.d_ctx,
            d_seg: self.d_seg,
            mean_shift: self.mean_shift,
            noise_corr: self.noise_corr,
            seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub gen: GenArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON config; missing keys take defaults. Without one, feature
    /// widths come from the training file.
    #[arg(long, conflicts_with = "resume")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: PathBuf,
    /// Validation data, evaluated after every epoch.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Data file format; inferred from the extension when absent.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also keep `epoch_NNN.json` after every epoch.
    #[arg(long)]
    pub save_every_epoch: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "tp", requires = "data")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Report from confusion counts instead of a model.
    #[arg(long, requires_all = ["fp", "tn", "fn_"], conflicts_with = "checkpoint")]
    pub tp: Option<usize>,
    #[arg(long)]
    pub fp: Option<usize>,
    #[arg(long)]
    pub tn: Option<usize>,
    #[arg(long = "fn", id = "fn_")]
    pub fn_: Option<usize>,
    /// Row label in the printed table.
    #[arg(long, default_value = "DR-MoE")]
    pub name: String,
    #[arg(long, default_value_t = 2)]
    pub digits: usize,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Seeds(pub Vec<u64>);

fn parse_seeds(s: &str) -> std::result::Result<Seeds, String> {
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: u64 = lo.parse().map_err(|e| format!("`{lo}`: {e}"))?;
        let hi: u64 = hi.parse().map_err(|e| format!("`{hi}`: {e}"))?;
        return Ok(Seeds((lo..hi).collect()));
    }
    s.split(',')
        .map(|p| p.trim().parse().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()
        .map(Seeds)
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub gen: GenArgs,
    /// Seeds as `0..5` or `0,1,2`.
    #[arg(long, value_parser = parse_seeds, default_value = "0..5")]
    pub seeds: Seeds,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Expert configurations to compare.
    #[arg(long = "expert-set", value_delimiter = ',', value_parser = parse_experts, default_value = "frozen,lora,fmoe")]
    pub expert_set: Vec<ExpertMode>,
    /// Head configurations to compare.
    #[arg(long = "head-set", value_delimiter = ',', value_parser = HeadOption::parse, default_value = "ce,wce,auc,la,la_sam,full")]
    pub head_set: Vec<HeadOption>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Ablate(a) => cmd_ablate(&a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::io("<stdout>", e))
}

pub fn cmd_gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let spec = a.gen.spec(a.seed);
    let data = generate(&spec).map_err(CliError::from_flag_field)?;
    let splits =
        stratified_split(&data, a.gen.split_fracs, a.seed).map_err(CliError::from_flag_field)?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let mut summary = String::new();
    for (split, part) in Split::ALL.iter().zip(&splits) {
        let path = a
            .out
            .join(format!("{}.{}", split.name(), a.format.extension()));
        write_dataset(&path, part, a.format)?;
        let [correct, mistake] = part.class_counts();
        summary.push_str(&format!(
            "{}: {} samples ({correct} correct, {mistake} mistake)\n",
            path.display(),
            part.len()
        ));
    }
    emit(out, &summary)
}

fn initial_state(
    a: &TrainArgs,
    train: &drmoe_core::data::Dataset,
) -> Result<(Trainer, Vec<drmoe_core::metrics::MetricsReport>)> {
    if let Some(path) = &a.resume {
        if !a.overrides.is_empty() {
            return Err(CliError::invalid(
                "--resume",
                "cannot be combined with config overrides",
            ));
        }
        let ckpt = Checkpoint::load(path)?;
        let trainer = Trainer::from_state(ckpt.state).map_err(|e| CliError::Checkpoint {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        return Ok((trainer, ckpt.validation));
    }
    let base = match &a.config {
        Some(p) => load_config(p)?,
        None => {
            let (d_ctx, d_seg) = train.dims();
            TrainConfig {
                d_ctx,
                d_seg,
                ..TrainConfig::default()
            }
        }
    };
    let config = a.overrides.apply(base)?;
    Ok((Trainer::new(config, train)?, Vec::new()))
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let train = read_dataset(&a.train, a.format, Split::Train)?;
    let val = a
        .val
        .as_ref()
        .map(|p| read_dataset(p, a.format, Split::Val))
        .transpose()?;
    let (mut trainer, mut validation) = initial_state(a, &train)?;
    let expected = if a.val.is_some() {
        trainer.state().epoch
    } else {
        0
    };
    if validation.len() != expected {
        return Err(CliError::invalid(
            "--val",
            "must be given exactly when the resumed run used one",
        ));
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::io(&a.out_dir, e))?;
    write_text(
        &a.out_dir.join("config.json"),
        &config_to_json(&trainer.state().config),
    )?;

    while !trainer.is_finished() {
        trainer.run_epoch(&train)?;
        if let Some(v) = &val {
            validation.push(evaluate_model(trainer.model(), v)?);
        }
        let ckpt = Checkpoint::new(trainer.state().clone(), validation.clone());
        if a.save_every_epoch {
            ckpt.save(
                &a.out_dir
                    .join(format!("epoch_{:03}.json", trainer.state().epoch)),
            )?;
        }
        ckpt.save(&a.out_dir.join("checkpoint.json"))?;
    }

    let state = trainer.state();
    Checkpoint::new(state.clone(), validation.clone()).save(&a.out_dir.join("checkpoint.json"))?;
    write_text(
        &a.out_dir.join("history.jsonl"),
        &history_jsonl(&state.history, &validation),
    )?;

    let mut summary = format!(
        "trained {} epochs; outputs in {}\n",
        state.epoch,
        a.out_dir.display()
    );
    if let Some(v) = &val {
        let metrics = evaluate_model(trainer.model(), v)?;
        let report = EvalReport::new(
            state.config.heads.name(),
            Some(state.config.threshold),
            metrics,
            2,
        );
        write_text(&a.out_dir.join("val_report.json"), &report.to_json())?;
        summary.push_str("validation:\n");
        summary.push_str(&report.table);
    }
    emit(out, &summary)
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let report = match (&a.checkpoint, a.tp) {
        (Some(ckpt_path), _) => {
            let data_path = a
                .data
                .as_ref()
                .ok_or_else(|| CliError::invalid("--data", "required with --checkpoint"))?;
            let ckpt = Checkpoint::load(ckpt_path)?;
            let model = &ckpt.state.model;
            let data = read_dataset(data_path, a.format, Split::Test)?;
            check_dims(
                data_path,
                data.dims(),
                (model.experts.d_ctx(), model.experts.d_seg()),
            )?;
            let metrics = evaluate_model(model, &data)?;
            EvalReport::new(&a.name, Some(model.threshold), metrics, a.digits)
        }
        (None, Some(tp)) => {
            let counts = Confusion {
                tp,
                fp: a.fp.unwrap_or(0),
                tn: a.tn.unwrap_or(0),
                fn_: a.fn_.unwrap_or(0),
            };
            if counts.total() == 0 {
                return Err(CliError::invalid(
                    "--tp/--fp/--tn/--fn",
                    "counts must not all be zero",
                ));
            }
            EvalReport::new(&a.name, None, prf(&counts), a.digits)
        }
        (None, None) => {
            return Err(CliError::invalid(
                "--checkpoint",
                "give a checkpoint or confusion counts",
            ))
        }
    };
    if let Some(path) = &a.out {
        write_text(path, &report.to_json())?;
    }
    emit(out, &report.table)
}

fn check_dims(path: &Path, data: (usize, usize), model: (usize, usize)) -> Result<()> {
    if data != model {
        return Err(CliError::invalid(
            "--data",
            format!(
                "{} has {} ctx and {} seg features but the checkpoint expects {} and {}",
                path.display(),
                data.0,
                data.1,
                model.0,
                model.1
            ),
        ));
    }
    Ok(())
}

pub fn cmd_ablate(a: &AblateArgs, out: &mut dyn Write) -> Result<()> {
    let base = match &a.config {
        Some(p) => load_config(p)?,
        None => TrainConfig::default(),
    };
    let spec = AblationSpec {
        data: a.gen.spec(0),
        split_fracs: a.gen.split_fracs,
        seeds: a.seeds.0.clone(),
        base: a.overrides.apply(TrainConfig {
            d_ctx: a.gen.d_ctx,
            d_seg: a.gen.d_seg,
            ..base
        })?,
        experts: a.expert_set.clone(),
        heads: a.head_set.clone(),
        jobs: a.jobs,
    };
    let report = run_ablation(&spec)?;
    if let Some(path) = &a.out {
        write_text(path, &report.to_json())?;
    }
    emit(out, &report.table())
}
