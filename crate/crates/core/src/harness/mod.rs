//! Synthetic corpora, metrics, benchmarking and experiment orchestration.

pub mod bench;
pub mod bleu;
pub mod experiments;
pub mod manifest;
pub mod pairs;
pub mod report;
pub mod synth_speech;
pub mod uer;
