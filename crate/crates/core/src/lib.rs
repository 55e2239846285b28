pub mod config;
pub mod ctc;
pub mod dsp;
pub mod error;
pub mod harness;
pub mod jsonl;
pub mod maskpredict;
pub mod nn;
pub mod perturb;
pub mod seqmodel;
pub mod unitizer;

pub use error::{Error, Result};
