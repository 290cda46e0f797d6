//! Frame → fixed-size set of (class, box) detections, plus a whole-image
//! classifier used as the baseline.

mod classifier;
mod detector;
mod hungarian;
pub mod pretrain;
mod transformer;
mod types;

pub use classifier::{image_label, Classifier, ClassifierOutput, ClassifierVars};
pub use detector::{detection_set, global_pool, Backbone, Detector, DetectorConfig, DetrOutput, Perception};
pub use hungarian::{assignment_cost, hungarian};
pub use pretrain::{
    classifier_accuracy, detection_loss, evaluate_detector, match_predictions, pretrain_detector, render_frames,
    train_classifier, DetectionLoss, DetectorMetrics, FrameSet, LossConfig, PretrainConfig,
};
pub use transformer::{
    positional_encoding, DecoderLayer, EncoderLayer, MultiHeadAttention, Transformer, TransformerConfig,
};
pub use types::{BoxCxCyWh, Detection, DetectionSet, ObjectClass};
