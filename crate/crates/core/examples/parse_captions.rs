//! Parsing model output in the indexed caption format, repairing omissions
//! and writing captions back out.
//!
//! cargo run --example parse_captions

use prefalign::caption_schema::{pad_missing, parse_sequence, serialize_sequence};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // out of order, one duplicate, image 3 missing
    let output = "Sure! For Image 2: a dog on a sofa. For Image 1: a cat by the window, \
                  For Image 2: a second dog. For Image 4: an empty street.";
    let parsed = parse_sequence(output, 4, false);
    for c in &parsed.captions {
        println!("image {} -> {:?}", c.image_index, c.text);
    }
    println!(
        "missing {:?}, duplicates {:?}, out of order {}",
        parsed.missing_indices, parsed.duplicate_indices, parsed.out_of_order
    );
    println!("image 1 matched by index: {:?}", parsed.text_for(1));

    let padded = pad_missing(&parsed);
    for c in &padded.captions {
        let tag = if c.padded { " (padded)" } else { "" };
        println!("  {}: {}{tag}", c.image_index, c.text);
    }

    let regions = vec![(1, "a red box.".to_string()), (2, "a striped mug.".to_string())];
    let text = serialize_sequence(&regions, true)?;
    println!("{text}");
    let back = parse_sequence(&text, 2, true);
    assert_eq!(back.to_pairs(), regions);
    Ok(())
}
