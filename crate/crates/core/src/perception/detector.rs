use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Activation, Conv2d, Linear, Mlp, ParamId, ParamSet, Tape, Tensor, Var};

use super::transformer::{positional_encoding, Transformer, TransformerConfig};
use super::types::{BoxCxCyWh, Detection, DetectionSet, ObjectClass};

/// Stack of 3×3 stride-2 convolutions, each followed by ReLU.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub stages: Vec<Conv2d>,
}

impl Backbone {
    pub fn new(params: &mut ParamSet, name: &str, channels: &[usize], rng: &mut impl Rng) -> Self {
        let mut input = 3;
        let stages = channels
            .iter()
            .enumerate()
            .map(|(i, &out)| {
                let conv = Conv2d::new(params, &format!("{name}.conv{i}"), input, out, 3, 2, 1, rng);
                input = out;
                conv
            })
            .collect();
        Backbone { stages }
    }

    pub fn channels(&self) -> usize {
        self.stages.last().map_or(3, |s| s.out_channels)
    }

    /// Total downsampling factor.
    pub fn stride(&self) -> usize {
        1 << self.stages.len()
    }

    /// `[3, h, w]` → `[c, h/stride, w/stride]`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, image: Var) -> Result<Var> {
        let shape = tape.value(image).shape().to_vec();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::invalid(format!("expected a [3, h, w] image, got {shape:?}")));
        }
        let s = self.stride();
        if shape[1] == 0 || shape[2] == 0 || !shape[1].is_multiple_of(s) || !shape[2].is_multiple_of(s) {
            return Err(Error::invalid(format!(
                "image extent {}×{} is not divisible by {s}",
                shape[1], shape[2]
            )));
        }
        let mut x = image;
        for stage in &self.stages {
            x = stage.forward(tape, params, x)?;
            x = tape.relu(x);
        }
        Ok(x)
    }
}

/// Global average pool of a `[c, h, w]` feature map to `[1, c]`.
pub fn global_pool(tape: &mut Tape, feature: Var) -> Result<Var> {
    let s = tape.value(feature).shape().to_vec();
    let flat = tape.reshape(feature, &[s[0], s[1] * s[2]])?;
    let pooled = tape.mean_axis(flat, 1)?;
    tape.reshape(pooled, &[1, s[0]])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub image_size: usize,
    pub backbone_channels: Vec<usize>,
    pub width: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_width: usize,
    /// Number of object queries N.
    pub queries: usize,
    pub positional_encoding: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            image_size: 64,
            backbone_channels: vec![8, 16, 32, 64, 64],
            width: 32,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_width: 64,
            queries: 16,
            positional_encoding: true,
        }
    }
}

impl DetectorConfig {
    /// Full-size transformer: d = 256, 8 heads, 6 + 6 layers, 100 queries on 256-pixel input.
    pub fn full_scale() -> Self {
        DetectorConfig {
            image_size: 256,
            backbone_channels: vec![32, 64, 128, 256, 512],
            width: 256,
            heads: 8,
            encoder_layers: 6,
            decoder_layers: 6,
            ffn_width: 2048,
            queries: 100,
            positional_encoding: true,
        }
    }

    pub fn transformer(&self) -> TransformerConfig {
        TransformerConfig {
            width: self.width,
            heads: self.heads,
            ffn_width: self.ffn_width,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stride = 1usize << self.backbone_channels.len();
        let cfg = |field: &str, message: String| Error::Config {
            field: format!("detector.{field}"),
            message,
        };
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return Err(cfg("backbone_channels", "needs at least one non-zero stage".into()));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(stride) {
            return Err(cfg("image_size", format!("must be a positive multiple of {stride}")));
        }
        if self.width == 0 || !self.width.is_multiple_of(2) {
            return Err(cfg("width", "must be even".into()));
        }
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(cfg("heads", format!("must divide width {}", self.width)));
        }
        if self.queries == 0 || self.ffn_width == 0 {
            return Err(cfg("queries", "queries and ffn_width must be positive".into()));
        }
        Ok(())
    }

    /// Side of the square feature map.
    pub fn feature_side(&self) -> usize {
        self.image_size >> self.backbone_channels.len()
    }
}

/// All intermediate tape values of one detector pass.
#[derive(Clone, Debug)]
pub struct DetrOutput {
    pub feature: Var,
    pub pooled: Var,
    pub memory: Var,
    pub latent: Var,
    pub logits: Var,
    pub probs: Var,
    pub boxes: Var,
    /// Every attention weight matrix, encoder first.
    pub attention: Vec<Var>,
}

/// Detector output for one frame with the pooled backbone feature.
#[derive(Clone, Debug, PartialEq)]
pub struct Perception {
    pub detections: DetectionSet,
    pub pooled: Vec<f64>,
}

/// Backbone, 1×1 projection, transformer and the two prediction heads.
#[derive(Clone, Debug)]
pub struct Detector {
    pub config: DetectorConfig,
    pub backbone: Backbone,
    pub projection: Linear,
    pub transformer: Transformer,
    pub queries: ParamId,
    pub class_head: Mlp,
    pub box_head: Mlp,
    encoding: Option<Tensor>,
}

impl Detector {
    pub fn new(params: &mut ParamSet, config: DetectorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.width;
        let backbone = Backbone::new(params, "det.backbone", &config.backbone_channels, rng);
        let projection = Linear::new(params, "det.proj", backbone.channels(), d, rng);
        let transformer = Transformer::new(params, "det.tf", &config.transformer(), rng)?;
        let queries = params.add_uniform("det.queries", &[config.queries, d], 1, rng);
        let class_head = Mlp::new(params, "det.class", &[d, d, d, ObjectClass::COUNT], Activation::Relu, false, rng);
        let box_head = Mlp::new(params, "det.box", &[d, d, d, 4], Activation::Relu, false, rng);
        let side = config.feature_side();
        let encoding = if config.positional_encoding {
            Some(positional_encoding(side, side, d)?.transpose()?)
        } else {
            None
        };
        Ok(Detector {
            config,
            backbone,
            projection,
            transformer,
            queries,
            class_head,
            box_head,
            encoding,
        })
    }

    /// Feature map → memory `[hw, d]`.
    pub fn encode(&self, tape: &mut Tape, params: &ParamSet, feature: Var, attention: &mut Vec<Var>) -> Result<Var> {
        let s = tape.value(feature).shape().to_vec();
        let flat = tape.reshape(feature, &[s[0], s[1] * s[2]])?;
        let tokens = tape.transpose(flat)?;
        let mut z = self.projection.forward(tape, params, tokens)?;
        if let Some(pe) = &self.encoding {
            if pe.rows() != s[1] * s[2] {
                return Err(Error::shape("positional encoding", pe.shape(), &[s[1] * s[2], self.config.width]));
            }
            let pe = tape.constant(pe.clone());
            z = tape.add(z, pe)?;
        }
        self.transformer.encode(tape, params, z, attention)
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, image: Var) -> Result<DetrOutput> {
        let mut attention = Vec::new();
        let feature = self.backbone.forward(tape, params, image)?;
        let pooled = global_pool(tape, feature)?;
        let memory = self.encode(tape, params, feature, &mut attention)?;
        let queries = tape.param(params, self.queries);
        let latent = self.transformer.decode(tape, params, queries, memory, None, &mut attention)?;
        let logits = self.class_head.forward(tape, params, latent)?;
        let probs = tape.softmax(logits, 1)?;
        let raw = self.box_head.forward(tape, params, latent)?;
        let boxes = tape.sigmoid(raw);
        Ok(DetrOutput {
            feature,
            pooled,
            memory,
            latent,
            logits,
            probs,
            boxes,
            attention,
        })
    }

    /// Inference on a `[3, h, w]` image.
    pub fn detect(&self, params: &ParamSet, image: &Tensor) -> Result<Perception> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let out = self.forward(&mut tape, params, x)?;
        Ok(Perception {
            detections: detection_set(tape.value(out.probs), tape.value(out.boxes))?,
            pooled: tape.value(out.pooled).data().to_vec(),
        })
    }
}

/// Argmax labels and boxes from `probs[n, classes]` and `boxes[n, 4]`.
pub fn detection_set(probs: &Tensor, boxes: &Tensor) -> Result<DetectionSet> {
    if probs.rank() != 2 || boxes.rank() != 2 || probs.rows() != boxes.rows() || boxes.cols() != 4 {
        return Err(Error::shape("detection_set", probs.shape(), boxes.shape()));
    }
    let detections = (0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            let b = boxes.row(i);
            Ok(Detection {
                class: ObjectClass::from_index(best)?,
                bbox: BoxCxCyWh::from_array([b[0], b[1], b[2], b[3]]),
            })
        })
        .collect::<Result<_>>()?;
    Ok(DetectionSet {
        detections,
        class_probs: probs.data().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> (Detector, ParamSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::new();
        (Detector::new(&mut ps, DetectorConfig::default(), &mut rng).unwrap(), ps)
    }

    fn random_image(rng: &mut ChaCha8Rng, side: usize) -> Tensor {
        Tensor::new(vec![3, side, side], (0..3 * side * side).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn backbone_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::new();
        let b = Backbone::new(&mut ps, "b", &[4, 4, 4, 4, 6], &mut rng);
        for (side, out) in [(64, 2), (256, 8)] {
            let mut t = Tape::new();
            let x = t.constant(Tensor::zeros(&[3, side, side]));
            let f = b.forward(&mut t, &ps, x).unwrap();
            assert_eq!(t.value(f).shape(), &[6, out, out]);
            assert!(t.value(f).all_finite());
        }
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[3, 48, 64]));
        assert!(b.forward(&mut t, &ps, x).is_err());
    }

    #[test]
    fn detect_returns_n_boxes_in_unit_square() {
        let (det, ps) = small();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let p = det.detect(&ps, &random_image(&mut rng, 64)).unwrap();
            assert_eq!(p.detections.len(), 16);
            assert_eq!(p.pooled.len(), 64);
            for d in &p.detections.detections {
                assert!(d.bbox.to_array().iter().all(|v| (0.0..=1.0).contains(v)));
                assert!(ObjectClass::from_label(d.label()).is_ok());
            }
            for row in p.detections.class_probs.chunks(5) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn detection_is_deterministic() {
        let (det, ps) = small();
        let img = random_image(&mut ChaCha8Rng::seed_from_u64(3), 64);
        assert_eq!(det.detect(&ps, &img).unwrap(), det.detect(&ps, &img).unwrap());
    }

    #[test]
    fn heads_use_separate_parameters() {
        let (det, ps) = small();
        let class: Vec<&str> = det.class_head.layers.iter().map(|l| ps.name(l.weight)).collect();
        let boxes: Vec<&str> = det.box_head.layers.iter().map(|l| ps.name(l.weight)).collect();
        assert!(class.iter().all(|c| !boxes.contains(c)));
        assert_eq!(det.class_head.layers.len(), 3);
        assert_eq!(det.box_head.layers.len(), 3);
    }

    #[test]
    fn full_width_memory() {
        let mut cfg = DetectorConfig::full_scale();
        assert_eq!(cfg.width, 256);
        // Keep the test light: the transformer width is what is under test.
        cfg.image_size = 64;
        cfg.backbone_channels = vec![4, 4, 4, 4, 8];
        cfg.encoder_layers = 1;
        cfg.decoder_layers = 1;
        cfg.ffn_width = 64;
        let mut ps = ParamSet::new();
        let det = Detector::new(&mut ps, cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[3, 64, 64]));
        let out = det.forward(&mut t, &ps, x).unwrap();
        assert_eq!(t.value(out.memory).shape(), &[4, 256]);
        assert_eq!(t.value(out.latent).shape(), &[100, 256]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = DetectorConfig::default();
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = DetectorConfig::default();
        cfg.image_size = 80;
        assert!(cfg.validate().is_err());
        assert!(DetectorConfig::full_scale().validate().is_ok());
    }
}
