use anyhow::{Context, Result};
use igc_core::data::{self, Split};
use igc_core::model::IgcModel;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

#[derive(Serialize)]
struct GateLine<'a> {
    text: &'a str,
    distractor: bool,
    gates: Vec<f64>,
    mean: f64,
}

/// Per-token gate values over the evaluation records, one JSON line per
/// record plus a summary.
pub fn run(
    config: &Path,
    data_dir: &Path,
    model_dir: &Path,
    out: &Path,
    mode: Option<&str>,
) -> Result<()> {
    let mut cfg = super::load_config(config)?;
    if let Some(m) = mode {
        cfg.igc.mode = super::parse_mode(m)?;
    }
    let dataset = data_dir.join("dataset.jsonl");
    anyhow::ensure!(
        dataset.exists(),
        "missing dataset {}; run `igc gen-data` first",
        dataset.display()
    );
    let vocab = data::build_vocab();
    let (_, records) = data::io::load(&dataset)?;
    let mut model = IgcModel::new(&cfg, vocab.len(), 0);
    model.load_full(&super::resolve_checkpoint(model_dir)).context("loading the model")?;

    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(out)
        .with_context(|| format!("cannot write gate report {}", out.display()))?;
    let mut sums = [(0.0f64, 0usize); 2]; // [arithmetic, distractor]
    for rec in records
        .iter()
        .filter(|r| r.split != Split::Train && r.seq.anchor_index.is_some())
    {
        let gates = model.gate_report(&rec.seq.ids, rec.seq.anchor_index, cfg.igc.mode)?;
        if gates.is_empty() {
            continue;
        }
        let mean = gates.iter().sum::<f64>() / gates.len() as f64;
        let slot = usize::from(rec.is_distractor());
        sums[slot].0 += mean;
        sums[slot].1 += 1;
        let line = GateLine {
            text: &rec.seq.text,
            distractor: rec.is_distractor(),
            gates,
            mean,
        };
        writeln!(f, "{}", serde_json::to_string(&line)?)?;
    }
    let mean_of = |s: (f64, usize)| if s.1 == 0 { 0.0 } else { s.0 / s.1 as f64 };
    log::info!(
        "mean gate: arithmetic {:.4} over {} records, distractor {:.4} over {} records",
        mean_of(sums[0]),
        sums[0].1,
        mean_of(sums[1]),
        sums[1].1
    );
    Ok(())
}
