//! Few-shot recognition with cross-modal hallucination.
//!
//! A text-conditional GAN with a class-discriminative head is trained on base
//! classes, finetuned on an n-shot episode of novel classes, and used to
//! hallucinate candidate images from text embeddings. Candidates are ranked
//! by the discriminator's class posterior, the top-m per class are added to
//! the real support set, and a small CNN is trained on the result.
//!
//! Modules follow the pipeline: [`data`] → [`tcgan`] → [`selection`] →
//! [`classifier`], orchestrated by [`harness`].

pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod error;
pub mod harness;
pub mod io_util;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod selection;
pub mod tcgan;

pub use error::{Error, Result};
