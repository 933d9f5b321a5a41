use anyhow::{Context, Result};
use igc_core::data;
use igc_core::tokenizer::analyze_chunking;
use std::path::Path;

/// Chunk-placement analysis over a dataset's sample texts, emitted as
/// JSON and as an aligned text table.
pub fn run(data_dir: &Path, out: &Path) -> Result<()> {
    let dataset = data_dir.join("dataset.jsonl");
    anyhow::ensure!(
        dataset.exists(),
        "missing dataset {}; run `igc gen-data` first",
        dataset.display()
    );
    let (_, records) = data::io::load(&dataset).context("loading the dataset")?;
    let report = analyze_chunking(records.iter().map(|r| r.seq.text.as_str()));
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("chunking_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    let table = report.to_text_table();
    std::fs::write(out.join("chunking_report.txt"), &table)?;
    print!("{table}");
    if !report.msd_position_stable {
        anyhow::bail!("most-significant-digit placement is not position-stable");
    }
    Ok(())
}
