use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Detector classes; index 0 is the padding class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectClass {
    NoObject,
    Vehicle,
    Pedestrian,
    LaneMarking,
    Obstacle,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 5] = [
        ObjectClass::NoObject,
        ObjectClass::Vehicle,
        ObjectClass::Pedestrian,
        ObjectClass::LaneMarking,
        ObjectClass::Obstacle,
    ];
    /// Softmax width of the class head (object classes plus no-object).
    pub const COUNT: usize = 5;
    /// Object classes, the denominator of the label scalar.
    pub const OBJECT_CLASSES: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::invalid(format!("class index {i} out of range")))
    }

    pub fn label(self) -> f64 {
        self.index() as f64 / Self::OBJECT_CLASSES as f64
    }

    pub fn from_label(label: f64) -> Result<Self> {
        let scaled = label * Self::OBJECT_CLASSES as f64;
        let i = scaled.round();
        if !label.is_finite() || (scaled - i).abs() > 1e-9 || i < 0.0 {
            return Err(Error::invalid(format!("label {label} is not a class value")));
        }
        Self::from_index(i as usize)
    }
}

/// Normalized (cx, cy, w, h) box in image coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxCxCyWh {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxCxCyWh {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = BoxCxCyWh { cx, cy, w, h };
        if b.to_array().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!("box {b:?} outside the unit square")));
        }
        Ok(b)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BoxCxCyWh {
            cx: a[0],
            cy: a[1],
            w: a[2],
            h: a[3],
        }
    }

    pub fn l1(self, other: BoxCxCyWh) -> f64 {
        self.to_array().iter().zip(other.to_array()).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Bottom edge, larger for nearer ground objects.
    pub fn bottom(self) -> f64 {
        self.cy + self.h / 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: ObjectClass,
    pub bbox: BoxCxCyWh,
}

impl Detection {
    pub fn label(&self) -> f64 {
        self.class.label()
    }
}

/// Exactly N detections per frame; absent objects carry [`ObjectClass::NoObject`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub detections: Vec<Detection>,
    /// Row-major [N, classes] softmax output that produced the labels.
    pub class_probs: Vec<f64>,
}

impl DetectionSet {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn objects(&self) -> impl Iterator<Item = &Detection> {
        self.detections.iter().filter(|d| d.class != ObjectClass::NoObject)
    }

    /// Flattened `[label, cx, cy, w, h]` per slot, width `5·N`. Objects come
    /// first, nearest (lowest bottom edge in the image) first; no-object slots
    /// follow as all zeros.
    pub fn scene_block(&self) -> Vec<f64> {
        let mut objects: Vec<&Detection> = self.objects().collect();
        objects.sort_by(|a, b| b.bbox.bottom().total_cmp(&a.bbox.bottom()));
        let mut out = Vec::with_capacity(5 * self.len());
        for d in &objects {
            out.push(d.label());
            out.extend_from_slice(&d.bbox.to_array());
        }
        out.resize(5 * self.len(), 0.0);
        out
    }
}
