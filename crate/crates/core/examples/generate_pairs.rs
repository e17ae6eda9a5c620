//! Builds preference pairs at all three levels from the bundled pools and
//! prints one of each plus dataset statistics.
//!
//! cargo run --example generate_pairs

use std::path::Path;

use prefalign::pairgen::{generate, stats_of, GenConfig, Level, Pools};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let text = std::fs::read_to_string(fixtures.join("gen.toml"))?;
    let mut cfg: GenConfig = toml::from_str(&text)?;
    for level in Level::ALL {
        cfg.set_count(level, 20);
    }
    let pools = Pools::load(&cfg.pools, &fixtures)?;
    let out = generate(&cfg, &pools, &Level::ALL)?;

    for level in Level::ALL {
        let pair = out.pairs.iter().find(|p| p.level == level).expect("one pair per level");
        println!("== {} ({}, {} images)", pair.id, pair.perturbation, pair.images.len());
        println!("chosen:   {}", pair.chosen);
        match (&pair.rejected, &pair.contrast_images) {
            (Some(r), _) => println!("rejected: {r}"),
            (None, Some(c)) => {
                let ids: Vec<&str> = c.iter().map(|i| i.image_id.as_str()).collect();
                println!("contradictory views: {ids:?}");
            }
            _ => {}
        }
    }
    let stats = stats_of(&out.pairs);
    println!("\n{}", serde_json::to_string_pretty(&stats)?);
    println!("skipped {}", out.skipped.len());
    Ok(())
}
