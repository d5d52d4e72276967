//! Dataset generation, file formats, checkpoints, metrics and the CLI for
//! mesh-bound splat avatars. The math lives in `avatar-core`; this crate is
//! the I/O and orchestration shell around it.

pub mod checkpoint;
pub mod cli;
pub mod formats;
pub mod metrics;
pub mod pngio;
pub mod synth;
