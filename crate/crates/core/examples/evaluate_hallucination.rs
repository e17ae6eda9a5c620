//! Builds evaluation sequences from single-image annotations, then scores
//! in-order, swapped and truncated predictions.
//!
//! cargo run --example evaluate_hallucination

use std::path::Path;

use prefalign::caption_schema::serialize_sequence;
use prefalign::halmetrics::{
    aggregate, build_context_amber, score_sequence, GtImage, ObjectLexicon, SHORT_CONTEXT,
};
use prefalign::seed::rng_from_seed;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/eval");
    let lexicon = ObjectLexicon::from_file(&dir.join("lexicon.json"))?;
    let annotations: Vec<GtImage> = std::fs::read_to_string(dir.join("annotations.jsonl"))?
        .lines()
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()?;
    let sequences = build_context_amber(&annotations, SHORT_CONTEXT, 10, &mut rng_from_seed(3))?;

    let render = |caps: Vec<String>| {
        let entries: Vec<(u32, String)> = caps.into_iter().enumerate().map(|(i, c)| (i as u32 + 1, c)).collect();
        serialize_sequence(&entries, false).expect("non-empty")
    };
    let mut rows = Vec::new();
    for (name, variant) in [("in order", 0), ("swapped", 1), ("truncated", 2)] {
        let scores: Vec<_> = sequences
            .iter()
            .map(|seq| {
                let mut caps: Vec<String> = seq.images.iter().map(|i| i.caption.clone()).collect();
                match variant {
                    1 => caps.rotate_left(1),
                    2 => caps.truncate(2),
                    _ => {}
                }
                score_sequence(&render(caps), seq, &lexicon)
            })
            .collect();
        rows.push((name, aggregate(&scores)?));
    }
    println!("{:<10} {:>7} {:>7} {:>7} {:>7}", "", "CHAIR", "SCover", "Hal", "Cog");
    for (name, report) in rows {
        let cols = report.percent_columns().map(|(_, v)| format!("{v:>7.1}"));
        println!("{name:<10} {}", cols.join(" "));
    }
    Ok(())
}
