//! Scores a generated header-field sample against a real one: JSD, TVD,
//! diversity ratio and the top-k and CDF tables.
//!
//! ```text
//! cargo run --example generation_metrics -- [out_dir]
//! ```

use lens::finetune::{write_report_csvs, EvalReport, HeaderField, TaskKind, TaskSpec};
use lens::ingest::Granularity;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let task = TaskSpec {
        name: "dst-port".into(),
        kind: TaskKind::Generation,
        description_text: "dst port".into(),
        label_space: vec![],
        field: Some(HeaderField::DstPort),
        granularity: Granularity::Packet,
    };
    let ports = [53, 80, 443, 8080, 22, 123];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let real: Vec<String> = (0..500).map(|_| ports[rng.random_range(0..3)].to_string()).collect();
    let generated: Vec<String> = (0..500)
        .map(|_| match rng.random_range(0..10) {
            0 => "70000".to_string(),
            _ => ports[rng.random_range(0..ports.len())].to_string(),
        })
        .collect();

    let r = EvalReport::from_predictions(&task, &real, &generated, 0)?;
    println!("jsd {:.4} tvd {:.4} dr {:.4}", r.jsd.unwrap_or(0.0), r.tvd.unwrap_or(0.0), r.dr.unwrap_or(0.0));
    println!("{:>8} {:>8} {:>10}", "value", "real", "generated");
    for row in &r.topk_table {
        println!("{:>8} {:>8.3} {:>10.3}", row.value, row.real_freq, row.generated_freq);
    }
    if let Some(dir) = std::env::args().nth(1) {
        std::fs::create_dir_all(&dir)?;
        write_report_csvs(std::path::Path::new(&dir), &r)?;
        println!("wrote topk.csv and cdf.csv to {dir}");
    }
    Ok(())
}
