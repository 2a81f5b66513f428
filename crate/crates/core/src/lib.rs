//! Attention guiding toward Java syntax and AST structure.
//!
//! The crate lexes a Java subset into classified tokens and statement spans
//! ([`code`]), turns snippets into aligned subtoken sequences ([`subtok`]),
//! builds guiding target matrices ([`patterns`]), trains a small transformer
//! encoder with an attention-guiding auxiliary loss ([`model`]), and runs the
//! attention-bias analysis over trained models ([`analysis`]). [`harness`]
//! ties these into reproducible experiments.

pub mod analysis;
pub mod code;
pub mod exec;
pub mod harness;
pub mod model;
pub mod patterns;
pub mod subtok;
