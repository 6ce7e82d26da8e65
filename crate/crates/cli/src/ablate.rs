//! Expert × head ablation over several seeds.
//!
//! Every seed generates its own dataset, splits it 60/20/20 (by default),
//! trains each configuration on the train split and scores it on the test
//! split. Runs are independent, so they are spread over worker threads and
//! merged back in configuration order.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use drmoe_core::data::{generate, stratified_split, Dataset, GenSpec};
use drmoe_core::experts::ExpertMode;
use drmoe_core::model::HeadSelection;
use drmoe_core::train::{train, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::checkpoint::FORMAT_VERSION;
use crate::error::{CliError, Result};
use crate::report::evaluate_model;

/// Head configurations of the ablation grid. `La` trains the logit-adjusted
/// head with plain Adam, `LaSam` with SAM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadOption {
    Ce,
    Wce,
    Auc,
    La,
    LaSam,
    Full,
}

impl HeadOption {
    pub const ALL: [HeadOption; 6] = [
        HeadOption::Ce,
        HeadOption::Wce,
        HeadOption::Auc,
        HeadOption::La,
        HeadOption::LaSam,
        HeadOption::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeadOption::Ce => "ce",
            HeadOption::Wce => "wce",
            HeadOption::Auc => "auc",
            HeadOption::La => "la",
            HeadOption::LaSam => "la_sam",
            HeadOption::Full => "full",
        }
    }

    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| format!("expected one of ce, wce, auc, la, la_sam, full; got `{s}`"))
    }

    pub fn apply(self, mut c: TrainConfig) -> TrainConfig {
        c.heads = match self {
            HeadOption::Ce => HeadSelection::CeBaseline,
            HeadOption::Wce => HeadSelection::ReweightedCe,
            HeadOption::Auc => HeadSelection::Auc,
            HeadOption::La | HeadOption::LaSam => HeadSelection::LogitAdjusted,
            HeadOption::Full => HeadSelection::Full,
        };
        match self {
            HeadOption::La => c.sam = false,
            HeadOption::LaSam => c.sam = true,
            _ => {}
        }
        c
    }
}

#[derive(Debug, Clone)]
pub struct AblationSpec {
    /// Generator settings; `seed` is replaced by each run seed.
    pub data: GenSpec,
    pub split_fracs: [f64; 3],
    pub seeds: Vec<u64>,
    /// Shared training settings; dims, heads and seed are set per run.
    pub base: TrainConfig,
    pub experts: Vec<ExpertMode>,
    pub heads: Vec<HeadOption>,
    /// Worker threads; 0 picks the available parallelism.
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub f_macro: f64,
    pub recall_mistake: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub experts: String,
    pub heads: String,
    pub f_macro: Stat,
    pub recall_mistake: Stat,
    pub auc: Stat,
    pub runs: Vec<SeedResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub format_version: u32,
    pub data: GenSpec,
    pub split_fracs: [f64; 3],
    pub seeds: Vec<u64>,
    pub config: TrainConfig,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, experts: &str, heads: &str) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.experts == experts && r.heads == heads)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("ablation report serializes");
        s.push('\n');
        s
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:<8} {:>17} {:>17} {:>17}",
            "Experts", "Heads", "F-score", "Mistake R", "AUC"
        );
        let cell = |s: &Stat| format!("{:.4} ± {:.4}", s.mean, s.std);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:<8} {:>17} {:>17} {:>17}",
                r.experts,
                r.heads,
                cell(&r.f_macro),
                cell(&r.recall_mistake),
                cell(&r.auc)
            );
        }
        out
    }
}

struct SeedData {
    train: Dataset,
    test: Dataset,
}

impl AblationSpec {
    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CliError::invalid(
                "--seeds",
                "at least one seed is required",
            ));
        }
        if self.experts.is_empty() {
            return Err(CliError::invalid(
                "--experts",
                "at least one expert configuration is required",
            ));
        }
        if self.heads.is_empty() {
            return Err(CliError::invalid(
                "--heads",
                "at least one head configuration is required",
            ));
        }
        self.data.validate().map_err(CliError::from_flag_field)?;
        self.config_for(ExpertMode::Fused, HeadOption::Full, 0)
            .validate()
            .map_err(CliError::from_flag_field)?;
        Ok(())
    }

    fn config_for(&self, experts: ExpertMode, heads: HeadOption, seed: u64) -> TrainConfig {
        let c = TrainConfig {
            d_ctx: self.data.d_ctx,
            d_seg: self.data.d_seg,
            expert_mode: experts,
            seed,
            ..self.base
        };
        heads.apply(c)
    }

    fn seed_data(&self, seed: u64) -> Result<SeedData> {
        let data = generate(&GenSpec { seed, ..self.data }).map_err(CliError::from_flag_field)?;
        let [train, _, test] =
            stratified_split(&data, self.split_fracs, seed).map_err(CliError::from_flag_field)?;
        Ok(SeedData { train, test })
    }

    fn run_one(
        &self,
        data: &SeedData,
        experts: ExpertMode,
        heads: HeadOption,
        seed: u64,
    ) -> Result<SeedResult> {
        let (model, _) = train(self.config_for(experts, heads, seed), &data.train)?;
        let m = evaluate_model(&model, &data.test)?;
        Ok(SeedResult {
            seed,
            f_macro: m.f_macro,
            recall_mistake: m.recall_mistake,
            auc: m.auc.unwrap_or(f64::NAN),
        })
    }
}

pub fn run_ablation(spec: &AblationSpec) -> Result<AblationReport> {
    spec.validate()?;
    let datasets = spec
        .seeds
        .iter()
        .map(|&s| spec.seed_data(s))
        .collect::<Result<Vec<_>>>()?;

    let mut jobs = Vec::new();
    for &e in &spec.experts {
        for &h in &spec.heads {
            for k in 0..spec.seeds.len() {
                jobs.push((e, h, k));
            }
        }
    }
    let workers = match spec.jobs {
        0 => thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len());

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SeedResult>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(e, h, k)) = jobs.get(i) else { break };
                let out = spec.run_one(&datasets[k], e, h, spec.seeds[k]);
                results.lock().expect("no worker panicked")[i] = Some(out);
            });
        }
    });
    let results: Vec<SeedResult> = results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<_>>()?;

    let rows = results
        .chunks(spec.seeds.len())
        .zip(jobs.chunks(spec.seeds.len()))
        .map(|(runs, job)| {
            let col = |f: fn(&SeedResult) -> f64| Stat::of(&runs.iter().map(f).collect::<Vec<_>>());
            AblationRow {
                experts: job[0].0.name().to_string(),
                heads: job[0].1.name().to_string(),
                f_macro: col(|r| r.f_macro),
                recall_mistake: col(|r| r.recall_mistake),
                auc: col(|r| r.auc),
                runs: runs.to_vec(),
            }
        })
        .collect();

    Ok(AblationReport {
        format_version: FORMAT_VERSION,
        data: spec.data,
        split_fracs: spec.split_fracs,
        seeds: spec.seeds.clone(),
        config: spec.base,
        rows,
    })
}
