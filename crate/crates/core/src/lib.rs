//! Event-driven audio processing and network grafting.
//!
//! The crate models a spiking silicon cochlea in software, extracts
//! Log-Mel spectrogram and time-binned spike count (TBSC) features,
//! trains GRU/CTC speech recognizers on either feature kind, and can
//! "graft" a pretrained audio network onto event features by matching
//! front-end hidden states — no event labels required.
//!
//! Module map:
//! - [`signal`]: waveforms, WAV I/O, synthetic spoken-word dataset
//! - [`cochlea`]: cascaded filter bank + integrate-and-fire event model
//! - [`features`]: Log-Mel and TBSC feature extraction
//! - [`align`]: DTW alignment and nearest-in-time state pairing
//! - [`autonet`]: dense/recurrent layers, exact gradients, Adam
//! - [`objectives`]: CTC loss, state-matching loss, decoding, WER
//! - [`pipeline`]: experiment orchestration (pretrain / supervised / graft)

pub mod align;
pub mod autonet;
pub mod cochlea;
pub mod features;
pub mod objectives;
pub mod pipeline;
pub mod signal;

pub use autonet::tensor::Tensor2;
