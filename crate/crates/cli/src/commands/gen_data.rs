use super::Stage;
use anyhow::{Context, Result};
use igc_core::data::{self, io::DatasetHeader};
use std::path::Path;

pub fn run(config: &Path, out: &Path, seed: Option<u64>, force: bool) -> Result<()> {
    let mut cfg = super::load_config(config)?;
    if let Some(s) = seed {
        cfg.data.seed = s;
    }
    let stage = Stage {
        command: "gen-data",
        config: &cfg,
        out,
        inputs: vec![],
    };
    if !force && stage.is_complete()? {
        log::info!("gen-data output at {} is current; use --force to redo", out.display());
        return Ok(());
    }

    let vocab = data::build_vocab();
    let vocab_json = vocab.to_json();
    let vocab_hash = igc_core::array::checkpoint::hex_digest(vocab_json.as_bytes());

    let gen = data::generate(&cfg, &vocab).context("dataset generation failed")?;
    let header = DatasetHeader {
        version: 1,
        config_hash: cfg.content_hash(),
        vocab_hash: vocab_hash.clone(),
        seed: cfg.data.seed,
        stats: gen.stats.clone(),
    };
    std::fs::create_dir_all(out)?;
    data::io::export(&header, &gen.records, &out.join("dataset.jsonl"))?;

    let corpus = data::generate_pretrain(&cfg, &vocab).context("pretrain corpus failed")?;
    data::io::export_pretrain(&header, &corpus, &out.join("pretrain.jsonl"))?;

    std::fs::write(out.join("vocab.json"), vocab_json)?;
    stage.finalize()?;
    log::info!(
        "wrote {} finetune records (+{} distractors) and {} pretrain samples to {}",
        gen.stats.n_train_arith + gen.stats.n_eval_bigbench + gen.stats.n_eval_alt,
        gen.stats.n_train_distractor + gen.stats.n_eval_distractor,
        corpus.len(),
        out.display()
    );
    Ok(())
}
