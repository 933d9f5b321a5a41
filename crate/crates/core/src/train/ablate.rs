//! Ablation matrix support: derive per-arm configurations and merge arm
//! results into the comparison report.

use super::metrics::MetricsRow;
use crate::config::{ArmConfig, RunConfig};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// One run of the matrix: an arm and a seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmRun {
    pub arm: String,
    pub seed: u64,
    pub config: RunConfig,
    pub epochs: usize,
}

/// Expand the configured arms into concrete (config, seed) runs.
pub fn expand_arms(cfg: &RunConfig) -> Vec<ArmRun> {
    let arms = if cfg.ablate.arms.is_empty() {
        crate::config::AblateConfig::standard().arms
    } else {
        cfg.ablate.arms.clone()
    };
    let mut runs = Vec::new();
    for arm in &arms {
        let seeds = arm.seeds.clone().unwrap_or_else(|| cfg.train.seeds.clone());
        for seed in seeds {
            runs.push(ArmRun {
                arm: arm.name.clone(),
                seed,
                config: derive_config(cfg, arm),
                epochs: arm.epochs.unwrap_or(cfg.train.epochs),
            });
        }
    }
    runs
}

/// Apply an arm's overrides to the base config.
pub fn derive_config(cfg: &RunConfig, arm: &ArmConfig) -> RunConfig {
    let mut c = cfg.clone();
    c.igc.mode = arm.mode;
    if let Some(a) = arm.alignment {
        c.codec.alignment = a;
    }
    if let Some(il) = arm.insertion_layer {
        c.igc.insertion_layer = il;
    }
    if let Some(e) = arm.epochs {
        c.train.epochs = e;
    }
    c
}

/// Final-row summary of one arm-seed run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: String,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
}

impl ArmResult {
    pub fn final_row(&self) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .rev()
            .find(|r| r.split == "final-bigbench-style")
    }
}

/// Plot-ready CSV: epoch, arm, seed, accuracy per metric row.
pub fn plot_csv(results: &[ArmResult]) -> String {
    let mut s = String::from("epoch,arm,seed,split,overall,acc_add,acc_sub,acc_mul,acc_div\n");
    for r in results {
        for row in &r.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                row.epoch,
                r.arm,
                r.seed,
                row.split,
                row.overall,
                row.acc_add,
                row.acc_sub,
                row.acc_mul,
                row.acc_div
            );
        }
    }
    s
}

/// Markdown comparison table: final accuracy per arm with per-seed spread.
pub fn comparison_markdown(results: &[ArmResult]) -> String {
    let mut arms: Vec<String> = results.iter().map(|r| r.arm.clone()).collect();
    arms.sort();
    arms.dedup();
    let mut s = String::new();
    let _ = writeln!(s, "| arm | seeds | overall (min..max) | add | sub | mul | div |");
    let _ = writeln!(s, "|-----|-------|--------------------|-----|-----|-----|-----|");
    for arm in &arms {
        let finals: Vec<&MetricsRow> = results
            .iter()
            .filter(|r| &r.arm == arm)
            .filter_map(|r| r.final_row())
            .collect();
        if finals.is_empty() {
            continue;
        }
        let n = finals.len() as f64;
        let mean = |f: &dyn Fn(&MetricsRow) -> f64| -> f64 {
            finals.iter().map(|r| f(r)).sum::<f64>() / n
        };
        let overall_min = finals.iter().map(|r| r.overall).fold(f64::INFINITY, f64::min);
        let overall_max = finals
            .iter()
            .map(|r| r.overall)
            .fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(
            s,
            "| {} | {} | {:.3} ({:.3}..{:.3}) | {:.3} | {:.3} | {:.3} | {:.3} |",
            arm,
            finals.len(),
            mean(&|r| r.overall),
            overall_min,
            overall_max,
            mean(&|r| r.acc_add),
            mean(&|r| r.acc_sub),
            mean(&|r| r.acc_mul),
            mean(&|r| r.acc_div),
        );
    }
    s
}
