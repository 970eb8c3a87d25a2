//! Trainable max-pooled convolutional descriptors for image retrieval.
//!
//! The crate covers the full desk-scale pipeline: a small from-scratch
//! convolutional backbone, MAC and R-MAC pooling, siamese fine-tuning with
//! tuples mined from visibility graphs, learned whitening and mAP evaluation
//! over synthetic scenes.

pub mod backbone;
mod binio;
pub mod descriptor;
pub mod error;
pub mod extract;
pub mod image;
pub mod loss;
pub mod mining;
pub mod numeric;
pub mod pipeline;
pub mod retrieval;
pub mod synthscene;
pub mod train;
pub mod whitening;

pub use error::{Error, Result};
