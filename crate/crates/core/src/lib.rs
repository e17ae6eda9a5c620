//! Multi-image caption preference data, hallucination metrics and
//! DPO-family losses.
//!
//! Modules:
//! - [`caption_schema`] parses and writes indexed multi-image captions.
//! - [`perturb`] builds rejected captions by truncation, shortening, swapping and region mismatch.
//! - [`pairgen`] assembles preference pairs at context, text-needle and visual-needle levels.
//! - [`halmetrics`] scores captions with CHAIR, Hal, Cog and SCover.
//! - [`dpo`] holds the losses and their analytic gradients.
//! - [`toy_align`] trains a tabular policy on synthetic pairs and checks gradients numerically.
//!
//! The `examples/` directory is the best starting point:
//! `parse_captions`, `perturb_captions`, `generate_pairs`, `evaluate_hallucination`,
//! `dpo_losses`, `train_toy` and `gradcheck`.

pub mod caption_schema;
pub mod dpo;
pub mod perturb;
pub mod seed;
pub mod pairgen;
pub mod halmetrics;
pub mod toy_align;
pub mod cli;
