//! Verifies every analytic gradient against central finite differences.
//!
//! cargo run --example gradcheck

use prefalign::toy_align::{check_all, DEFAULT_TOLERANCE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let results = check_all(1000, 1e-6, 0)?;
    for r in &results {
        let verdict = if r.max_rel_err <= DEFAULT_TOLERANCE { "ok" } else { "FAIL" };
        println!("{:<20} {:.3e} worst trial {:>4}  {verdict}", r.kind.as_str(), r.max_rel_err, r.worst_trial);
    }
    Ok(())
}
