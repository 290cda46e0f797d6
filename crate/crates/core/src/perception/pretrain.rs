//! Detector and classifier pretraining on rendered simulator frames.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamState, ParamSet, Tape, Tensor, Var};
use crate::simworld::{
    make_scenario, render_front_view, run_episode_observed, Camera, EpisodeConfig, ExpertAgent, ScenarioKind, ScenarioSpec,
};

use super::classifier::{image_label, Classifier};
use super::detector::{DetrOutput, Detector};
use super::hungarian::hungarian;
use super::types::{Detection, ObjectClass};

/// Rendered frames with their ground-truth boxes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameSet {
    pub images: Vec<Tensor>,
    pub truth: Vec<Vec<Detection>>,
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn object_count(&self) -> usize {
        self.truth.iter().map(Vec::len).sum()
    }
}

const FRAMES_PER_EPISODE: usize = 8;

/// Frames sampled from expert drives over randomly drawn scenarios.
/// At most `max_objects` boxes (the nearest) are kept per frame.
pub fn render_frames(count: usize, seed: u64, camera: &Camera, max_objects: usize) -> Result<FrameSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = FrameSet::default();
    let mut attempts = 0;
    while frames.len() < count {
        attempts += 1;
        if attempts > 10 * count + 10 {
            return Err(Error::Rejected(format!("could only render {} of {count} frames", frames.len())));
        }
        let kind = *ScenarioKind::ALL.choose(&mut rng).expect("non-empty");
        let spec = ScenarioSpec::new(kind, rng.gen_range(0..1_000_000));
        let world = make_scenario(&spec)?;
        let stride = rng.gen_range(15..40);
        let offset = rng.gen_range(0..stride);
        let wanted = FRAMES_PER_EPISODE.min(count - frames.len());
        let mut taken = 0;
        run_episode_observed(world, &mut ExpertAgent::default(), &EpisodeConfig::default(), &mut |step, w, _| {
            if taken < wanted && step % stride == offset {
                let (img, mut boxes) = render_front_view(w, camera);
                boxes.truncate(max_objects);
                frames.images.push(img.to_tensor());
                frames.truth.push(boxes);
                taken += 1;
            }
        });
    }
    Ok(frames)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Cross-entropy weight of slots whose target is no-object.
    pub no_object_weight: f64,
    /// Weight of the matched-box L1 term relative to the class term.
    pub box_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            no_object_weight: 0.1,
            box_weight: 5.0,
        }
    }
}

/// For each prediction slot, the index of the truth object assigned to it.
/// Matching cost is `1 − p(truth class) + L1(box)`.
pub fn match_predictions(probs: &Tensor, boxes: &Tensor, truth: &[Detection]) -> Result<Vec<Option<usize>>> {
    let n = probs.rows();
    if truth.len() > n {
        return Err(Error::invalid(format!("{} objects exceed {n} prediction slots", truth.len())));
    }
    let cost: Vec<Vec<f64>> = truth
        .iter()
        .map(|t| {
            (0..n)
                .map(|p| {
                    let b = boxes.row(p);
                    let l1: f64 = t.bbox.to_array().iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
                    1.0 - probs.at(p, t.class.index()) + l1
                })
                .collect()
        })
        .collect();
    let mut slots = vec![None; n];
    for (t, p) in hungarian(&cost)?.into_iter().enumerate() {
        slots[p] = Some(t);
    }
    Ok(slots)
}

#[derive(Clone, Debug)]
pub struct DetectionLoss {
    pub total: Var,
    pub class_term: Var,
    /// Mean per-box L1 over matched slots, before weighting; absent without objects.
    pub box_term: Option<Var>,
    pub assignment: Vec<Option<usize>>,
}

/// Set-prediction loss of one frame.
pub fn detection_loss(tape: &mut Tape, out: &DetrOutput, truth: &[Detection], cfg: &LossConfig) -> Result<DetectionLoss> {
    let assignment = match_predictions(tape.value(out.probs), tape.value(out.boxes), truth)?;
    let targets: Vec<usize> = assignment
        .iter()
        .map(|a| a.map_or(ObjectClass::NoObject.index(), |t| truth[t].class.index()))
        .collect();
    let weights = assignment.iter().map(|a| if a.is_some() { 1.0 } else { cfg.no_object_weight }).collect();
    let class_term = tape.cross_entropy(out.logits, targets, weights)?;
    let matched: Vec<(usize, usize)> = assignment.iter().enumerate().filter_map(|(p, a)| a.map(|t| (p, t))).collect();
    let box_term = if matched.is_empty() {
        None
    } else {
        let pred = tape.select_rows(out.boxes, matched.iter().map(|m| m.0).collect())?;
        let target = Tensor::from_rows(&matched.iter().map(|m| truth[m.1].bbox.to_array().to_vec()).collect::<Vec<_>>())?;
        let target = tape.constant(target);
        let diff = tape.sub(pred, target)?;
        let abs = tape.abs(diff);
        let total = tape.sum(abs);
        Some(tape.scale(total, 1.0 / matched.len() as f64))
    };
    let total = match box_term {
        Some(b) => {
            let weighted = tape.scale(b, cfg.box_weight);
            tape.add(class_term, weighted)?
        }
        None => class_term,
    };
    Ok(DetectionLoss {
        total,
        class_term,
        box_term,
        assignment,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 2000,
            batch: 8,
            learning_rate: 1e-3,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

/// Minibatch Adam over frame indices; `frame_loss` builds one frame's loss.
/// Returns the mean batch loss of every step.
fn train_loop(
    params: &mut ParamSet,
    frames: usize,
    cfg: &PretrainConfig,
    observe: &mut dyn FnMut(usize, f64, &ParamSet),
    frame_loss: &dyn Fn(&mut Tape, &ParamSet, usize) -> Result<Var>,
) -> Result<Vec<f64>> {
    if frames == 0 || cfg.batch == 0 {
        return Err(Error::invalid("training needs frames and a positive batch size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(params);
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let mut terms = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch.min(frames) {
            if order.is_empty() {
                order = (0..frames).collect();
                order.shuffle(&mut rng);
            }
            let i = order.pop().expect("refilled above");
            terms.push(frame_loss(&mut tape, params, i)?);
        }
        let mut sum = terms[0];
        for &t in &terms[1..] {
            sum = tape.add(sum, t)?;
        }
        let loss = tape.scale(sum, 1.0 / terms.len() as f64);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Rejected(format!("loss diverged at step {step}")));
        }
        let grads = tape.backward(loss)?.for_params(params);
        adam.step(params, &grads, cfg.learning_rate)?;
        observe(step, value, params);
        losses.push(value);
    }
    Ok(losses)
}

pub fn pretrain_detector(
    det: &Detector,
    params: &mut ParamSet,
    frames: &FrameSet,
    cfg: &PretrainConfig,
    observe: &mut dyn FnMut(usize, f64, &ParamSet),
) -> Result<Vec<f64>> {
    train_loop(params, frames.len(), cfg, observe, &|tape, params, i| {
        let x = tape.constant(frames.images[i].clone());
        let out = det.forward(tape, params, x)?;
        Ok(detection_loss(tape, &out, &frames.truth[i], &cfg.loss)?.total)
    })
}

pub fn train_classifier(
    cls: &Classifier,
    params: &mut ParamSet,
    frames: &FrameSet,
    cfg: &PretrainConfig,
    observe: &mut dyn FnMut(usize, f64, &ParamSet),
) -> Result<Vec<f64>> {
    train_loop(params, frames.len(), cfg, observe, &|tape, params, i| {
        let x = tape.constant(frames.images[i].clone());
        let out = cls.forward(tape, params, x)?;
        tape.cross_entropy(out.logits, vec![image_label(&frames.truth[i]).index()], vec![1.0])
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorMetrics {
    pub frames: usize,
    pub mean_loss: f64,
    /// Mean absolute box-coordinate error over matched predictions.
    pub box_l1: f64,
    /// Fraction of matched predictions whose argmax class is correct.
    pub class_accuracy: f64,
    /// Fraction of unmatched slots predicted as no-object.
    pub empty_accuracy: f64,
    pub matched: usize,
}

pub fn evaluate_detector(det: &Detector, params: &ParamSet, frames: &FrameSet, loss: &LossConfig) -> Result<DetectorMetrics> {
    let (mut loss_sum, mut l1_sum, mut correct, mut matched, mut empty, mut empty_ok) = (0.0, 0.0, 0, 0, 0, 0);
    for (img, truth) in frames.images.iter().zip(&frames.truth) {
        let mut tape = Tape::new();
        let x = tape.constant(img.clone());
        let out = det.forward(&mut tape, params, x)?;
        let l = detection_loss(&mut tape, &out, truth, loss)?;
        loss_sum += tape.value(l.total).item();
        let (probs, boxes) = (tape.value(out.probs), tape.value(out.boxes));
        for (p, a) in l.assignment.iter().enumerate() {
            let row = probs.row(p);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            match a {
                Some(t) => {
                    matched += 1;
                    l1_sum += truth[*t].bbox.to_array().iter().zip(boxes.row(p)).map(|(x, y)| (x - y).abs()).sum::<f64>() / 4.0;
                    correct += usize::from(best == truth[*t].class.index());
                }
                None => {
                    empty += 1;
                    empty_ok += usize::from(best == ObjectClass::NoObject.index());
                }
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(DetectorMetrics {
        frames: frames.len(),
        mean_loss: loss_sum / frames.len().max(1) as f64,
        box_l1: if matched == 0 { 0.0 } else { l1_sum / matched as f64 },
        class_accuracy: ratio(correct, matched),
        empty_accuracy: ratio(empty_ok, empty),
        matched,
    })
}

/// Fraction of frames whose argmax class equals [`image_label`].
pub fn classifier_accuracy(cls: &Classifier, params: &ParamSet, frames: &FrameSet) -> Result<f64> {
    let mut correct = 0;
    for (img, truth) in frames.images.iter().zip(&frames.truth) {
        let out = cls.classify(params, img)?;
        let best = (0..out.probs.len()).fold(0, |b, j| if out.probs[j] > out.probs[b] { j } else { b });
        correct += usize::from(best == image_label(truth).index());
    }
    Ok(correct as f64 / frames.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{BoxCxCyWh, DetectorConfig};

    fn tiny_detector() -> (Detector, ParamSet) {
        let mut ps = ParamSet::new();
        let cfg = DetectorConfig {
            queries: 4,
            ..DetectorConfig::default()
        };
        (Detector::new(&mut ps, cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap(), ps)
    }

    fn object(class: ObjectClass, cx: f64) -> Detection {
        Detection {
            class,
            bbox: BoxCxCyWh::new(cx, 0.5, 0.1, 0.2).unwrap(),
        }
    }

    #[test]
    fn empty_truth_matches_nothing() {
        let probs = Tensor::full(&[3, 5], 0.2);
        let boxes = Tensor::full(&[3, 4], 0.5);
        assert_eq!(match_predictions(&probs, &boxes, &[]).unwrap(), vec![None, None, None]);
        let too_many = vec![object(ObjectClass::Vehicle, 0.5); 4];
        assert!(match_predictions(&probs, &boxes, &too_many).is_err());
    }

    #[test]
    fn matching_prefers_close_boxes_of_right_class() {
        let mut probs = Tensor::full(&[3, 5], 0.0);
        let mut boxes = Tensor::full(&[3, 4], 0.5);
        for (p, (class, cx)) in [(1, 0.2), (2, 0.8), (1, 0.8)].into_iter().enumerate() {
            probs.data_mut()[p * 5 + class] = 1.0;
            boxes.data_mut()[p * 4] = cx;
            boxes.data_mut()[p * 4 + 2] = 0.1;
            boxes.data_mut()[p * 4 + 3] = 0.2;
        }
        let truth = [object(ObjectClass::Vehicle, 0.8), object(ObjectClass::Pedestrian, 0.8)];
        assert_eq!(match_predictions(&probs, &boxes, &truth).unwrap(), vec![None, Some(1), Some(0)]);
    }

    #[test]
    fn perfect_boxes_give_zero_box_term() {
        let (det, ps) = tiny_detector();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[3, 64, 64], 0.3));
        let out = det.forward(&mut tape, &ps, x).unwrap();
        let boxes = tape.value(out.boxes).clone();
        let truth: Vec<Detection> = (0..2)
            .map(|p| Detection {
                class: ObjectClass::Vehicle,
                bbox: BoxCxCyWh::from_array([boxes.at(p, 0), boxes.at(p, 1), boxes.at(p, 2), boxes.at(p, 3)]),
            })
            .collect();
        let l = detection_loss(&mut tape, &out, &truth, &LossConfig::default()).unwrap();
        assert_eq!(tape.value(l.box_term.unwrap()).item(), 0.0);
        assert!(tape.value(l.total).item() >= 0.0);
        let empty = detection_loss(&mut tape, &out, &[], &LossConfig::default()).unwrap();
        assert!(empty.box_term.is_none());
        assert!(tape.value(empty.total).item() >= 0.0);
    }

    #[test]
    fn rendered_frames_are_deterministic() {
        let cam = Camera::default();
        let a = render_frames(10, 3, &cam, 16).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, render_frames(10, 3, &cam, 16).unwrap());
        assert!(a.object_count() > 0);
        assert!(a.truth.iter().all(|t| t.len() <= 16));
    }

    #[test]
    fn short_training_lowers_loss() {
        let (det, mut ps) = tiny_detector();
        let frames = render_frames(4, 1, &Camera::default(), 4).unwrap();
        let cfg = PretrainConfig {
            steps: 30,
            batch: 4,
            learning_rate: 3e-3,
            ..PretrainConfig::default()
        };
        let losses = pretrain_detector(&det, &mut ps, &frames, &cfg, &mut |_, _, _| {}).unwrap();
        assert!(losses[29] < losses[0]);
    }
}
