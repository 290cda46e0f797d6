use rand::Rng;

use crate::error::Result;
use crate::numerics::{Linear, ParamSet, Tape, Tensor, Var};

use super::detector::{global_pool, Backbone};
use super::types::{Detection, ObjectClass};

/// Whole-image classifier: backbone, global average pool, linear softmax head.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub backbone: Backbone,
    pub head: Linear,
}

#[derive(Clone, Debug)]
pub struct ClassifierVars {
    pub logits: Var,
    pub probs: Var,
    pub pooled: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierOutput {
    /// Distribution over [`ObjectClass::ALL`].
    pub probs: Vec<f64>,
    pub pooled: Vec<f64>,
}

impl Classifier {
    pub fn new(params: &mut ParamSet, channels: &[usize], rng: &mut impl Rng) -> Self {
        let backbone = Backbone::new(params, "cls.backbone", channels, rng);
        let head = Linear::new(params, "cls.head", backbone.channels(), ObjectClass::COUNT, rng);
        Classifier { backbone, head }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, image: Var) -> Result<ClassifierVars> {
        let feature = self.backbone.forward(tape, params, image)?;
        let pooled = global_pool(tape, feature)?;
        let logits = self.head.forward(tape, params, pooled)?;
        let probs = tape.softmax(logits, 1)?;
        Ok(ClassifierVars { logits, probs, pooled })
    }

    pub fn classify(&self, params: &ParamSet, image: &Tensor) -> Result<ClassifierOutput> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let out = self.forward(&mut tape, params, x)?;
        Ok(ClassifierOutput {
            probs: tape.value(out.probs).data().to_vec(),
            pooled: tape.value(out.pooled).data().to_vec(),
        })
    }
}

/// Training label of a frame: the class of its largest box, or no-object.
pub fn image_label(truth: &[Detection]) -> ObjectClass {
    truth
        .iter()
        .max_by(|a, b| (a.bbox.w * a.bbox.h).total_cmp(&(b.bbox.w * b.bbox.h)))
        .map_or(ObjectClass::NoObject, |d| d.class)
}
