use super::Stage;
use anyhow::{Context, Result};
use igc_core::data::{self, PretrainKind};
use igc_core::train;
use std::path::Path;

pub fn run(config: &Path, data_dir: &Path, out: &Path, force: bool) -> Result<()> {
    let cfg = super::load_config(config)?;
    let stage = Stage {
        command: "pretrain",
        config: &cfg,
        out,
        inputs: vec![("data", data_dir.to_path_buf())],
    };
    if !force && stage.is_complete()? {
        log::info!("pretrain output at {} is current; use --force to redo", out.display());
        return Ok(());
    }

    let corpus_path = data_dir.join("pretrain.jsonl");
    anyhow::ensure!(
        corpus_path.exists(),
        "missing pretraining corpus {}; run `igc gen-data` first",
        corpus_path.display()
    );
    let vocab = data::build_vocab();
    let (_, records) = data::io::load_pretrain(&corpus_path)?;
    // hold out a slice of arithmetic samples for the structural-perplexity
    // check; everything else trains
    let holdout: Vec<_> = records
        .iter()
        .filter(|r| r.kind == PretrainKind::Arith)
        .take(200)
        .map(|r| r.seq.clone())
        .collect();
    let skip = 200.min(records.len());
    let seqs: Vec<_> = records.iter().skip(skip).map(|r| r.seq.clone()).collect();

    let outcome =
        train::pretrain_base(&cfg, &vocab, &seqs, &holdout).context("pretraining failed")?;
    log::info!(
        "structural perplexity {:.4} (target < {})",
        outcome.structural_ppl,
        cfg.pretrain.target_structural_ppl
    );
    outcome.model.save(&out.join("checkpoint"))?;
    std::fs::write(
        out.join("pretrain_summary.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "structural_perplexity": outcome.structural_ppl,
            "epoch_losses": outcome.epoch_losses,
        }))?,
    )?;
    stage.finalize()?;
    if outcome.structural_ppl >= cfg.pretrain.target_structural_ppl {
        anyhow::bail!(
            "structural perplexity {:.4} did not reach the target {}",
            outcome.structural_ppl,
            cfg.pretrain.target_structural_ppl
        );
    }
    Ok(())
}
