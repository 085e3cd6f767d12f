//! Test-time alignment of the class prototype and pseudo-label prompting.

mod augment;
mod extractor;
mod finetune;
mod ops;
mod prompts;

pub use augment::{augment, augment_with, AugmentConfig, AugmentedPair, Photometric};
pub use extractor::{ConvExtractor, FeatureExtractor, StemFeatures, STEM_DIM};
pub use finetune::{
    cosine_lr, finetune, finetune_abc, finetune_acc, mask_to_grid, medoid_reference, reference_prototypes,
    Adaptation, StepRecord, Strategy, TtgaConfig,
};
pub use ops::{
    bce_loss, bce_with_grad, binarize, histogram_bin, masked_average_pool, otsu, otsu_mask, otsu_threshold,
    otsu_threshold_values, sigmoid, similarity_map, FeatureMap, OtsuThreshold, Prototype, SimilarityMap, OTSU_BINS,
};
pub use prompts::{make_prompts, prompt_candidates, GateReason, PromptConfig, PromptReport};
