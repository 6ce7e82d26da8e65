//! Run configuration: a JSON file plus command-line overrides.

use std::fs;
use std::path::Path;

use clap::Args;
use drmoe_core::experts::{ExpertMode, GateMode};
use drmoe_core::model::HeadSelection;
use drmoe_core::train::TrainConfig;

use crate::error::{CliError, Result};

/// Reads and validates a config file. Missing keys take their defaults;
/// unknown keys are rejected.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let config: TrainConfig = serde_json::from_str(&text).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    config.validate().map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(config)
}

pub fn config_to_json(config: &TrainConfig) -> String {
    let mut s = serde_json::to_string_pretty(config).expect("config serializes");
    s.push('\n');
    s
}

pub fn parse_heads(s: &str) -> std::result::Result<HeadSelection, String> {
    HeadSelection::from_name(s)
        .ok_or_else(|| format!("expected one of full, ce, wce, auc, la; got `{s}`"))
}

pub fn parse_experts(s: &str) -> std::result::Result<ExpertMode, String> {
    ExpertMode::from_name(s).ok_or_else(|| format!("expected one of frozen, lora, fmoe; got `{s}`"))
}

pub fn parse_gate(s: &str) -> std::result::Result<GateMode, String> {
    GateMode::from_name(s).ok_or_else(|| format!("expected scalar or input_conditioned; got `{s}`"))
}

/// Flags that override config-file values.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Train head 3 with plain Adam instead of SAM.
    #[arg(long)]
    pub no_sam: bool,
    #[arg(long)]
    pub lora_rank: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub fuse_epochs: Option<usize>,
    #[arg(long)]
    pub d_out: Option<usize>,
    #[arg(long, value_parser = parse_gate)]
    pub gate_mode: Option<GateMode>,
    #[arg(long, value_parser = parse_experts)]
    pub experts: Option<ExpertMode>,
    #[arg(long, value_parser = parse_heads)]
    pub heads: Option<HeadSelection>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        let Overrides {
            lr,
            rho,
            no_sam,
            lora_rank,
            batch_size,
            epochs,
            fuse_epochs,
            d_out,
            gate_mode,
            experts,
            heads,
            threshold,
            seed,
        } = self;
        !no_sam
            && lr.is_none()
            && rho.is_none()
            && lora_rank.is_none()
            && batch_size.is_none()
            && epochs.is_none()
            && fuse_epochs.is_none()
            && d_out.is_none()
            && gate_mode.is_none()
            && experts.is_none()
            && heads.is_none()
            && threshold.is_none()
            && seed.is_none()
    }

    /// Applies the set flags and validates the result, naming the flag on
    /// failure.
    pub fn apply(&self, mut c: TrainConfig) -> Result<TrainConfig> {
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field { c.$target = v; })*
            };
        }
        set!(lr => lr, rho => rho, lora_rank => lora_rank, batch_size => batch_size,
            epochs => epochs, fuse_epochs => fuse_epochs, d_out => d_out,
            gate_mode => gate_mode, experts => expert_mode, heads => heads,
            threshold => threshold, seed => seed);
        if self.no_sam {
            c.sam = false;
        }
        c.validate().map_err(CliError::from_flag_field)?;
        Ok(c)
    }
}
