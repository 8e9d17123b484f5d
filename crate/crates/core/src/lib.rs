//! Unsupervised unit recognition by adversarial training of a convolutional
//! generator against a sequence discriminator, with the supporting pipeline:
//! MFCC features, k-means pseudo-labels, phonemized text, unit n-gram
//! models, decoding and error-rate scoring, and a synthetic corpus.

pub mod autodiff;
mod binio;
pub mod dsp;
pub mod error;
pub mod model;
pub mod objectives;
pub mod evalkit;
pub mod quantizer;
pub mod synthbench;
pub mod textproc;
pub mod trainer;

pub use error::{Error, Result};
