//! Writes a small end-to-end workspace for the `lens` executable.
//!
//! ```text
//! cargo run --example write_fixtures -- work/
//! lens --config work/lens.toml ingest work/pcaps --out work/flows.jsonl
//! ```

use std::path::PathBuf;

use lens::workspace::write_workspace;

fn main() -> anyhow::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "work".into()));
    let s = write_workspace(&dir)?;
    println!(
        "wrote {} captures, {} understanding and {} generation examples to {}",
        s.captures,
        s.understanding,
        s.generation,
        dir.display()
    );
    Ok(())
}
