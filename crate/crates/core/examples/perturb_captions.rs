//! The four ways a rejected response is derived from a chosen one.
//!
//! cargo run --example perturb_captions

use std::collections::BTreeMap;

use prefalign::caption_schema::serialize_sequence;
use prefalign::perturb::{
    contrast_pair, mismatch_regions, sample_drop_count, shorten, swap, truncate, Region, RegionCaption,
};
use prefalign::seed::rng_from_seed;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rng_from_seed(7);
    let ids: Vec<String> = ["beach", "kitchen", "stadium"].map(String::from).to_vec();
    let chosen = vec![
        (1, "Waves roll onto pale sand under a cloudless sky while two gulls circle a striped umbrella.".to_string()),
        (2, "A steel kettle steams on the stove beside a cutting board piled with diced onions.".to_string()),
        (3, "Floodlights bathe a packed stadium as players line up for a corner kick.".to_string()),
    ];
    println!("chosen:    {}", serialize_sequence(&chosen, false)?);

    let k = sample_drop_count(chosen.len(), &mut rng)?;
    println!("truncate:  {}", serialize_sequence(&truncate(&chosen, &mut rng, k)?, false)?);

    let brief: BTreeMap<String, String> = ids
        .iter()
        .zip(["A beach.", "A kitchen.", "A stadium."])
        .map(|(id, c)| (id.clone(), c.to_string()))
        .collect();
    println!("shorten:   {}", serialize_sequence(&shorten(&chosen, &ids, &brief)?, false)?);

    let (swapped, perm) = swap(&chosen, &mut rng)?;
    println!("swap {perm:?}: {}", serialize_sequence(&swapped, false)?);

    let region = |x, caption: &str| RegionCaption {
        image_id: "kitchen".into(),
        region: Region::bbox(x, 0.1, 0.3, 0.3).expect("box inside the unit square"),
        caption: caption.into(),
    };
    let target = region(0.05, "the steaming kettle");
    let pool = vec![target.clone(), region(0.15, "half of the kettle"), region(0.6, "a bowl of onions")];
    let mismatched = mismatch_regions(std::slice::from_ref(&target), &pool, &mut rng, 0.0)?;
    println!("mismatch:  {:?} -> {:?}", target.caption, mismatched[0].caption);

    let counterparts: BTreeMap<String, String> = [("kitchen".to_string(), "kitchen_no_kettle".to_string())].into();
    println!("contrast:  {:?}", contrast_pair("kitchen", &counterparts)?);
    Ok(())
}
