use super::Stage;
use anyhow::{Context, Result};
use igc_core::train::ablate::{comparison_markdown, expand_arms, plot_csv, ArmResult};
use igc_core::train::metrics;
use std::path::Path;
use std::process::Command;

/// Run every arm-seed combination as a child `train-igc` process, then
/// merge the per-run metrics into the comparison report.
pub fn run(config: &Path, data_dir: &Path, base: &Path, out: &Path, force: bool) -> Result<()> {
    let cfg = super::load_config(config)?;
    let stage = Stage {
        command: "ablate",
        config: &cfg,
        out,
        inputs: vec![
            ("data", data_dir.to_path_buf()),
            ("base", base.to_path_buf()),
        ],
    };
    if !force && stage.is_complete()? {
        log::info!("ablate output at {} is current; use --force to redo", out.display());
        return Ok(());
    }

    let runs = expand_arms(&cfg);
    log::info!("ablation matrix: {} runs", runs.len());
    let exe = std::env::current_exe().context("locating the current executable")?;
    let mut results: Vec<ArmResult> = Vec::new();

    for run in &runs {
        let arm_dir = out.join("arms").join(&run.arm);
        std::fs::create_dir_all(&arm_dir)?;
        let cfg_path = arm_dir.join("config.toml");
        let mut derived = run.config.clone();
        derived.train.epochs = run.epochs;
        std::fs::write(&cfg_path, derived.to_toml())?;
        let run_out = arm_dir.join(format!("seed{}", run.seed));
        log::info!("arm {} seed {}", run.arm, run.seed);
        let status = Command::new(&exe)
            .arg("train-igc")
            .arg("--config")
            .arg(&cfg_path)
            .arg("--data")
            .arg(data_dir)
            .arg("--base")
            .arg(base)
            .arg("--out")
            .arg(&run_out)
            .arg("--seed")
            .arg(run.seed.to_string())
            .status()
            .context("spawning the arm run")?;
        anyhow::ensure!(
            status.success(),
            "arm {} seed {} failed with {status}",
            run.arm,
            run.seed
        );
        let rows = metrics::read_jsonl(&run_out.join(format!("seed{}", run.seed)).join("metrics.jsonl"))?;
        results.push(ArmResult {
            arm: run.arm.clone(),
            seed: run.seed,
            rows,
        });
    }

    std::fs::write(out.join("report.md"), comparison_markdown(&results))?;
    std::fs::write(out.join("curves.csv"), plot_csv(&results))?;
    let json = serde_json::to_string_pretty(&results)?;
    std::fs::write(out.join("results.json"), json)?;
    stage.finalize()?;
    log::info!("ablation report written to {}", out.join("report.md").display());
    Ok(())
}
