//! Writes the synthetic five-city corpus as tweet JSONL.
//!
//! ```text
//! cargo run -p geohead --example synth_corpus -- out.jsonl [samples] [seed]
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};

use geohead::features::record_to_json;
use geohead::synthetic::{generate, SyntheticConfig};

fn main() -> geohead::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "synthetic.jsonl".into());
    let samples = args.next().and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);

    let records = generate(&SyntheticConfig { samples, seed, ..SyntheticConfig::default() })?;
    let mut out = BufWriter::new(File::create(&path)?);
    for r in &records {
        writeln!(out, "{}", record_to_json(r))?;
    }
    out.flush()?;
    eprintln!("wrote {} records to {path}", records.len());
    Ok(())
}
