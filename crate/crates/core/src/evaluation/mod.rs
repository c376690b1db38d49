//! Decoding metrics, vowel classification, rank tests and saliency.

mod metrics;
mod saliency;
mod stats;
mod vowels;

pub use metrics::{
    dtw_mcd, mcd, mcd_of_targets, mean_sd, pcc, pcc_checked, sentence_pcc, ChannelGroup, Pcc, MCD_SCALE,
};
pub use saliency::{
    aggregate_saliency, electrode_mass_fraction, saliency_raw, smoothgrad, smoothgrad_noise_sd, smoothgrad_with_noise,
    SaliencyAxis, SaliencyMap, SaliencyModel, SMOOTHGRAD_N, SMOOTHGRAD_SIGMA,
};
pub use stats::{mann_whitney_u, midranks, wilcoxon_signed_rank, MANN_WHITNEY_EXACT_MAX, WILCOXON_EXACT_MAX};
pub use vowels::{classify_vowel, collect_templates, f1_scores, ConfusionMatrix, F1Scores, VowelTemplate};
