use super::Stage;
use anyhow::{Context, Result};
use igc_core::data;
use igc_core::model::IgcModel;
use igc_core::train::{self, metrics};
use std::path::Path;

pub fn run(
    config: &Path,
    data_dir: &Path,
    base: &Path,
    out: &Path,
    seed: Option<u64>,
    force: bool,
) -> Result<()> {
    let mut cfg = super::load_config(config)?;
    if let Some(s) = seed {
        cfg.train.seeds = vec![s];
    }
    let stage = Stage {
        command: "train-igc",
        config: &cfg,
        out,
        inputs: vec![
            ("data", data_dir.to_path_buf()),
            ("base", base.to_path_buf()),
        ],
    };
    if !force && stage.is_complete()? {
        log::info!("train-igc output at {} is current; use --force to redo", out.display());
        return Ok(());
    }

    let dataset = data_dir.join("dataset.jsonl");
    anyhow::ensure!(
        dataset.exists(),
        "missing dataset {}; run `igc gen-data` first",
        dataset.display()
    );
    let base_ckpt = super::resolve_checkpoint(base);
    anyhow::ensure!(
        base_ckpt.join("manifest.json").exists(),
        "missing pretrained base checkpoint at {}; run `igc pretrain` first",
        base.display()
    );
    let vocab = data::build_vocab();
    let (_, records) = data::io::load(&dataset)?;
    let mode = cfg.igc.mode;

    for &s in &cfg.train.seeds.clone() {
        let seed_out = out.join(format!("seed{s}"));
        std::fs::create_dir_all(&seed_out)?;
        log::info!("training seed {s} in mode {}", mode.as_str());
        let mut model = IgcModel::new(&cfg, vocab.len(), s);
        model
            .load_base(&base_ckpt)
            .context("loading the pretrained base")?;
        if cfg.train.unfreeze_base {
            model.unfreeze_base();
        } else {
            model.freeze_base()?;
        }
        let outcome = train::train_igc(
            &cfg,
            &mut model,
            &vocab,
            &records,
            s,
            cfg.train.epochs,
            mode,
        )?;
        model.save(&seed_out.join("checkpoint"))?;
        metrics::write_csv(&seed_out.join("metrics.csv"), &outcome.metrics)?;
        metrics::write_jsonl(&seed_out.join("metrics.jsonl"), &outcome.metrics)?;
        log::info!(
            "seed {s}: final overall {:.4} (bigbench-style), {:.4} (alt templates)",
            outcome.final_bigbench.accuracy(),
            outcome.final_alt.accuracy()
        );
    }
    stage.finalize()?;
    Ok(())
}
