//! Positive-unlabeled learning by density estimation, for document set
//! expansion.
//!
//! Given a handful of labeled positive documents and a large unlabeled pool,
//! the classifiers here rank and label every unlabeled document by the ratio
//! of a positive-class density to the whole-data density:
//!
//! - [`kde`]: Gaussian kernel density estimates over VAE latent codes
//!   ([`vae`]), scored as `log D_p(x) - log D(x)`.
//! - [`ebm`]: two energy networks trained with Langevin contrastive
//!   divergence, scored as `g_q(x) - g_p(x)`.
//!
//! Neither needs the class prior. [`baselines`] has the prior-dependent nnPU
//! classifier and a BM25 ranker; [`bench`] runs the transductive protocol
//! where the unlabeled pool is both training input and evaluation target.

pub mod baselines;
pub mod bench;
pub mod corpus;
pub mod ebm;
mod error;
pub mod kde;
pub mod nn;
pub mod vae;

pub use error::{Error, Result};


pub use nn::{Mlp, MlpConfig, TrainConfig};
pub use corpus::{Document, FeatureMatrix, Label, LabelingConfig, PUDataset, TrainView};
