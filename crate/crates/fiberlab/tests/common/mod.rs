//! Test-side alias for the library's synthetic-data generators.
#![allow(unused_imports)]

pub use fiberlab::synth::*;
