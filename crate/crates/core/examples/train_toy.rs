//! Trains the tabular toy policy through the three-stage schedule and
//! compares it with one mixed stage on the same data.
//!
//! cargo run --release --example train_toy

use prefalign::toy_align::{run_experiment, ScheduleMode, ToyRunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for mode in [ScheduleMode::MultiStage, ScheduleMode::OneStageMixed] {
        let cfg = ToyRunConfig {
            schedule: mode,
            ..Default::default()
        };
        let run = run_experiment(&cfg)?;
        println!("{mode:?}");
        for (stage, first, last) in run.stage_losses() {
            println!("  {stage:<9} loss {first:.4} -> {last:.4}");
        }
        println!(
            "  held-out accuracy {:.4} ({} pairs, {} ties)",
            run.heldout.accuracy, run.heldout.total, run.heldout.ties
        );
    }
    Ok(())
}
