use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{Polyline, Vec2};

/// Incremental centerline construction from straights and circular arcs.
#[derive(Clone, Debug)]
pub struct PathBuilder {
    points: Vec<Vec2>,
    heading: f64,
    step: f64,
}

impl PathBuilder {
    pub fn new(start: Vec2, heading: f64) -> Self {
        PathBuilder {
            points: vec![start],
            heading,
            step: 2.0,
        }
    }

    fn last(&self) -> Vec2 {
        *self.points.last().unwrap()
    }

    pub fn straight(mut self, length: f64) -> Self {
        let n = (length / self.step).ceil().max(1.0) as usize;
        let start = self.last();
        let dir = Vec2::from_angle(self.heading);
        for i in 1..=n {
            self.points.push(start + dir * (length * i as f64 / n as f64));
        }
        self
    }

    /// Arc of `radius` turning by `angle` radians (positive = left).
    pub fn arc(mut self, radius: f64, angle: f64) -> Self {
        let n = ((radius * angle.abs()) / (self.step * 0.5)).ceil().max(2.0) as usize;
        let start = self.last();
        let side = angle.signum();
        let center = start + Vec2::from_angle(self.heading).perp() * (radius * side);
        let start_angle = (start - center).angle();
        for i in 1..=n {
            let a = start_angle + angle * i as f64 / n as f64;
            self.points.push(center + Vec2::from_angle(a) * radius);
        }
        self.heading += angle;
        self
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn end(&self) -> Vec2 {
        self.last()
    }

    pub fn build(self) -> Polyline {
        Polyline::new(self.points)
    }
}

/// Copy of `line` shifted sideways by `offset` metres (positive = left).
pub fn offset_polyline(line: &Polyline, offset: f64) -> Polyline {
    let pts = line.points();
    let n = pts.len();
    let shifted = (0..n)
        .map(|i| {
            let prev = pts[i.saturating_sub(1)];
            let next = pts[(i + 1).min(n - 1)];
            let normal = (next - prev).normalized().perp();
            pts[i] + normal * offset
        })
        .collect();
    Polyline::new(shifted)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub centerline: Polyline,
    pub width: f64,
    /// Whether boundary markings are painted (connector lanes inside junctions are not).
    pub marked: bool,
}

/// Axis-aligned drivable patch, used for junction interiors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub min: Vec2,
    pub max: Vec2,
}

impl Area {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// What the ground looks like at a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surface {
    Offroad,
    Road,
    Marking,
}

const CELL: f64 = 8.0;
const MARKING_HALF_WIDTH: f64 = 0.12;

/// Lane geometry plus a uniform-grid segment index for point queries.
#[derive(Clone, Debug)]
pub struct Road {
    lanes: Vec<Lane>,
    areas: Vec<Area>,
    grid: HashMap<(i64, i64), Vec<(u32, u32)>>,
}

impl PartialEq for Road {
    fn eq(&self, other: &Self) -> bool {
        self.lanes == other.lanes && self.areas == other.areas
    }
}

fn cell_of(p: Vec2) -> (i64, i64) {
    ((p.x / CELL).floor() as i64, (p.y / CELL).floor() as i64)
}

impl Road {
    pub fn new(lanes: Vec<Lane>, areas: Vec<Area>) -> Self {
        let mut grid: HashMap<(i64, i64), Vec<(u32, u32)>> = HashMap::new();
        for (li, lane) in lanes.iter().enumerate() {
            let reach = lane.width / 2.0 + MARKING_HALF_WIDTH;
            for (si, w) in lane.centerline.points().windows(2).enumerate() {
                let lo = Vec2::new(w[0].x.min(w[1].x) - reach, w[0].y.min(w[1].y) - reach);
                let hi = Vec2::new(w[0].x.max(w[1].x) + reach, w[0].y.max(w[1].y) + reach);
                let (c0, c1) = (cell_of(lo), cell_of(hi));
                for cx in c0.0..=c1.0 {
                    for cy in c0.1..=c1.1 {
                        grid.entry((cx, cy)).or_default().push((li as u32, si as u32));
                    }
                }
            }
        }
        Road { lanes, areas, grid }
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn areas(&self) -> &[Area] {
        &self.areas
    }

    pub fn surface(&self, p: Vec2) -> Surface {
        let mut on_road = self.areas.iter().any(|a| a.contains(p));
        let Some(cands) = self.grid.get(&cell_of(p)) else {
            return if on_road { Surface::Road } else { Surface::Offroad };
        };
        let mut marking = false;
        for &(li, si) in cands {
            let lane = &self.lanes[li as usize];
            let pts = lane.centerline.points();
            let (a, b) = (pts[si as usize], pts[si as usize + 1]);
            let ab = b - a;
            let len2 = ab.dot(ab);
            if len2 == 0.0 {
                continue;
            }
            let t = (p - a).dot(ab) / len2;
            if !(0.0..=1.0).contains(&t) {
                continue;
            }
            let d = p.distance(a + ab * t);
            let half = lane.width / 2.0;
            if d <= half {
                on_road = true;
            }
            if lane.marked && (d - half).abs() <= MARKING_HALF_WIDTH {
                marking = true;
            }
        }
        if marking {
            Surface::Marking
        } else if on_road {
            Surface::Road
        } else {
            Surface::Offroad
        }
    }

    /// True when `p` lies inside some lane band or junction area.
    pub fn is_drivable(&self, p: Vec2) -> bool {
        if self.areas.iter().any(|a| a.contains(p)) {
            return true;
        }
        self.lanes
            .iter()
            .any(|l| l.centerline.project(p).distance <= l.width / 2.0)
    }

    /// Closest centerline point over all lanes.
    pub fn nearest_centerline(&self, p: Vec2) -> Option<(usize, crate::geometry::Projection)> {
        self.lanes
            .iter()
            .enumerate()
            .map(|(i, l)| (i, l.centerline.project(p)))
            .min_by(|a, b| a.1.distance.partial_cmp(&b.1.distance).unwrap())
    }
}
