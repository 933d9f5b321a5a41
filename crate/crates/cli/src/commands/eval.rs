use super::Stage;
use anyhow::{Context, Result};
use igc_core::data::{self, Split};
use igc_core::model::IgcModel;
use igc_core::train::{self, metrics, MetricsRow};
use std::io::Write;
use std::path::{Path, PathBuf};

#[allow(clippy::too_many_arguments)]
pub fn run(
    config: &Path,
    data_dir: &Path,
    model_dir: &Path,
    out: &Path,
    mode: Option<&str>,
    calc_log: Option<PathBuf>,
    force: bool,
) -> Result<()> {
    let mut cfg = super::load_config(config)?;
    if let Some(m) = mode {
        cfg.igc.mode = super::parse_mode(m)?;
    }
    let stage = Stage {
        command: "eval",
        config: &cfg,
        out,
        inputs: vec![
            ("data", data_dir.to_path_buf()),
            ("model", model_dir.to_path_buf()),
        ],
    };
    if !force && stage.is_complete()? {
        log::info!("eval output at {} is current; use --force to redo", out.display());
        return Ok(());
    }

    let dataset = data_dir.join("dataset.jsonl");
    anyhow::ensure!(
        dataset.exists(),
        "missing dataset {}; run `igc gen-data` first",
        dataset.display()
    );
    let ckpt = super::resolve_checkpoint(model_dir);
    anyhow::ensure!(
        ckpt.join("manifest.json").exists(),
        "missing model checkpoint at {}; run `igc train-igc` (or point --model at a pretrain output for plain mode)",
        model_dir.display()
    );
    let vocab = data::build_vocab();
    let (_, records) = data::io::load(&dataset)?;
    let mut model = IgcModel::new(&cfg, vocab.len(), 0);
    model.load_full(&ckpt).context("loading the model")?;

    let mut rows = Vec::new();
    let mut log_lines: Vec<igc_core::calculator::CalcResult> = Vec::new();
    for (split, name) in [
        (Split::EvalBigbench, "eval-bigbench-style"),
        (Split::EvalAltTemplate, "eval-alt-template"),
    ] {
        let log_sink = if calc_log.is_some() {
            Some(&mut log_lines)
        } else {
            None
        };
        let ev = train::evaluate(&model, &vocab, &records, split, cfg.igc.mode, None, log_sink)?;
        log::info!(
            "{name}: overall {:.4} add {:.4} sub {:.4} mul {:.4} div {:.4} gate {:.4}",
            ev.accuracy(),
            ev.op_accuracy(0),
            ev.op_accuracy(1),
            ev.op_accuracy(2),
            ev.op_accuracy(3),
            ev.mean_gate_distractor
        );
        rows.push(MetricsRow::from_eval(0, name, &ev, ev.aux_loss, ev.lm_loss, 0.0));
    }
    metrics::write_csv(&out.join("metrics.csv"), &rows)?;
    metrics::write_jsonl(&out.join("metrics.jsonl"), &rows)?;
    if let Some(path) = calc_log {
        let mut f = std::fs::File::create(&path)
            .with_context(|| format!("cannot write calculator log {}", path.display()))?;
        for r in &log_lines {
            writeln!(f, "{}", r.log_line())?;
        }
        log::info!("wrote {} calculator log lines to {}", log_lines.len(), path.display());
    }
    stage.finalize()?;
    Ok(())
}
