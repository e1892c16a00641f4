//! Files, manifests, checkpoints and the synthetic world generator.

pub mod checkpoint;
pub mod dataset;
pub mod features;
pub mod manifest;
pub mod synth;
