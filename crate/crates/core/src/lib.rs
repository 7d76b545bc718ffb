//! Compute core for HyperKD-style cross-spectral knowledge distillation.
//!
//! Everything in this crate is pure computation over in-memory values:
//! a small reverse-mode autodiff engine, spectral band alignment,
//! Gabor/wavelet patch saliency, ViT-MAE teacher/student models, the
//! composite reconstruction + distillation objective, Adam, and the
//! distillation training step. File formats, storage, and the CLI live
//! in the companion `hyperkd` crate.
//!
//! The crate is `no_std` (with `alloc`); all transcendental math goes
//! through `libm` so results are bit-identical across platforms.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bands;
pub mod cube;
pub mod head;
pub mod mae;
pub mod numerics;
pub mod objective;
pub mod optim;
pub mod rng;
pub mod saliency;
pub mod scene;
pub mod train;
