//! Writes the planted toy corpus and its phrase lexicon, for demos and smoke
//! tests: `cargo run -p glassguard-cli --example make_toy_data -- DIR [SEED]`.

use glassguard_core::corpus::save_jsonl;
use glassguard_core::planted::{generate, planted_lexicon, PlantedConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let dir = std::path::PathBuf::from(args.next().unwrap_or_else(|| "toy-data".to_string()));
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(42);
    std::fs::create_dir_all(&dir).expect("create output dir");

    let records = generate(&PlantedConfig {
        seed,
        ..PlantedConfig::default()
    });
    save_jsonl(dir.join("toy.jsonl"), &records).expect("write corpus");
    let mut lexicon = planted_lexicon().join("\n");
    lexicon.push('\n');
    std::fs::write(dir.join("lexicon.txt"), lexicon).expect("write lexicon");
    println!(
        "wrote {} records to {} and the phrase lexicon to {}",
        records.len(),
        dir.join("toy.jsonl").display(),
        dir.join("lexicon.txt").display()
    );
}
