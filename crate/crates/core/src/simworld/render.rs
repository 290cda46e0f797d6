//! Schematic pinhole view from the ego vehicle.
//!
//! Ground pixels are classified against the road geometry; actors are
//! billboards at their nearest depth, painted far to near. The returned boxes
//! are the exact pixel rectangles that were painted.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::numerics::Tensor;
use crate::perception::{BoxCxCyWh, Detection, ObjectClass};

use super::road::Surface;
use super::{ActorKind, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub horizon_row: f64,
    pub mount_height: f64,
    pub near: f64,
    pub far: f64,
    /// Boxes with less visible area than this fraction are not reported.
    pub min_visible: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            width: 64,
            height: 64,
            focal: 32.0,
            horizon_row: 24.0,
            mount_height: 1.6,
            near: 1.0,
            far: 50.0,
            min_visible: 0.25,
        }
    }
}

/// 8-bit RGB image stored channel-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0; 3 * width * height],
        }
    }

    pub fn set(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let plane = self.width * self.height;
        let i = row * self.width + col;
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[c * plane + i] = v;
        }
    }

    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        let plane = self.width * self.height;
        let i = row * self.width + col;
        [self.data[i], self.data[plane + i], self.data[2 * plane + i]]
    }

    /// `[3, h, w]` tensor with values in [0, 1].
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![3, self.height, self.width],
            self.data.iter().map(|&v| v as f64 / 255.0).collect(),
        )
        .expect("image extents are non-zero")
    }
}

fn rgb(r: f64, g: f64, b: f64) -> [u8; 3] {
    [r, g, b].map(|v| (v * 255.0).round() as u8)
}

const SKY: (f64, f64, f64) = (0.55, 0.75, 0.95);
const GRASS: (f64, f64, f64) = (0.25, 0.55, 0.25);
const ROAD: (f64, f64, f64) = (0.35, 0.35, 0.35);
const MARKING: (f64, f64, f64) = (0.95, 0.95, 0.95);

pub fn actor_color(kind: ActorKind) -> [u8; 3] {
    match kind {
        ActorKind::Vehicle => rgb(0.85, 0.15, 0.15),
        ActorKind::Pedestrian => rgb(0.15, 0.25, 0.95),
        ActorKind::Obstacle => rgb(1.0, 0.65, 0.0),
    }
}

pub fn actor_class(kind: ActorKind) -> ObjectClass {
    match kind {
        ActorKind::Vehicle => ObjectClass::Vehicle,
        ActorKind::Pedestrian => ObjectClass::Pedestrian,
        ActorKind::Obstacle => ObjectClass::Obstacle,
    }
}

struct Billboard {
    depth: f64,
    kind: ActorKind,
    cols: (usize, usize),
    rows: (usize, usize),
}

fn billboard(cam: &Camera, w: &WorldState, actor: &super::Actor) -> Option<Billboard> {
    let local: Vec<Vec2> = actor.corners().iter().map(|&c| w.ego.pose.to_local(c)).collect();
    let depth = local.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    if depth < cam.near || depth > cam.far {
        return None;
    }
    let y_min = local.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let y_max = local.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let cx = cam.width as f64 / 2.0;
    let f = cam.focal / depth;
    let clip_c = |u: f64| u.round().clamp(0.0, cam.width as f64) as usize;
    let clip_r = |v: f64| v.round().clamp(0.0, cam.height as f64) as usize;
    let cols = (clip_c(cx - f * y_max), clip_c(cx - f * y_min));
    let height = actor.dimensions().2;
    let rows = (
        clip_r(cam.horizon_row + f * (cam.mount_height - height)),
        clip_r(cam.horizon_row + f * cam.mount_height),
    );
    (cols.1 > cols.0 && rows.1 > rows.0).then_some(Billboard {
        depth,
        kind: actor.kind,
        cols,
        rows,
    })
}

/// Renders the ego camera view and the boxes of every sufficiently visible actor.
pub fn render_front_view(w: &WorldState, cam: &Camera) -> (Image, Vec<Detection>) {
    let mut img = Image::new(cam.width, cam.height);
    let (sky, grass, road, marking) = (rgb(SKY.0, SKY.1, SKY.2), rgb(GRASS.0, GRASS.1, GRASS.2), rgb(ROAD.0, ROAD.1, ROAD.2), rgb(MARKING.0, MARKING.1, MARKING.2));
    let cx = cam.width as f64 / 2.0;
    for row in 0..cam.height {
        let dv = row as f64 + 0.5 - cam.horizon_row;
        let depth = if dv > 0.0 { cam.focal * cam.mount_height / dv } else { f64::INFINITY };
        for col in 0..cam.width {
            let color = if depth > cam.far * 2.0 {
                sky
            } else {
                let lateral = -(col as f64 + 0.5 - cx) * depth / cam.focal;
                match w.road.surface(w.ego.pose.to_world(Vec2::new(depth, lateral))) {
                    Surface::Offroad => grass,
                    Surface::Road => road,
                    Surface::Marking => marking,
                }
            };
            img.set(row, col, color);
        }
    }

    let mut boards: Vec<Billboard> = w.actors.iter().filter_map(|a| billboard(cam, w, a)).collect();
    boards.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    let mut owner = vec![usize::MAX; cam.width * cam.height];
    for (i, b) in boards.iter().enumerate() {
        let color = actor_color(b.kind);
        for row in b.rows.0..b.rows.1 {
            for col in b.cols.0..b.cols.1 {
                img.set(row, col, color);
                owner[row * cam.width + col] = i;
            }
        }
    }

    let mut visible = vec![0usize; boards.len()];
    for &o in &owner {
        if o != usize::MAX {
            visible[o] += 1;
        }
    }
    let (wf, hf) = (cam.width as f64, cam.height as f64);
    let mut boxes: Vec<(f64, Detection)> = boards
        .iter()
        .zip(visible)
        .filter(|(b, seen)| {
            let area = (b.cols.1 - b.cols.0) * (b.rows.1 - b.rows.0);
            *seen as f64 >= cam.min_visible * area as f64
        })
        .map(|(b, _)| {
            let bbox = BoxCxCyWh {
                cx: (b.cols.0 + b.cols.1) as f64 / 2.0 / wf,
                cy: (b.rows.0 + b.rows.1) as f64 / 2.0 / hf,
                w: (b.cols.1 - b.cols.0) as f64 / wf,
                h: (b.rows.1 - b.rows.0) as f64 / hf,
            };
            (
                b.depth,
                Detection {
                    class: actor_class(b.kind),
                    bbox,
                },
            )
        })
        .collect();
    boxes.sort_by(|a, b| a.0.total_cmp(&b.0));
    (img, boxes.into_iter().map(|(_, d)| d).collect())
}
