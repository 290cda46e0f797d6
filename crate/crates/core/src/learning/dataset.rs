//! Imitation samples and their on-disk container.
//!
//! `save(dir)` writes `dataset.toml` (counts, shapes, seed, provenance
//! histogram, payload digest) and `dataset.bin`, a sequence of fixed-size
//! little-endian records:
//!
//! | bytes        | field                                  |
//! |--------------|----------------------------------------|
//! | 1            | provenance kind (0 offline, 1 dagger)  |
//! | 4            | provenance round, u32                  |
//! | 1            | flagged (episode ended abnormally)     |
//! | 1            | command index                          |
//! | 8 × (5 + 2K) | speed, goal x, goal y, steer, throttle, waypoints |
//! | 3 · H · W    | image, channel-major u8                |

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::ControlAction;
use crate::error::{Error, Result};
use crate::fusion::Command;
use crate::geometry::Vec2;
use crate::planner::{GoalPoint, WaypointPlan};
use crate::simworld::Image;

const FORMAT: &str = "drive-dataset v1";
pub const MANIFEST_FILE: &str = "dataset.toml";
pub const PAYLOAD_FILE: &str = "dataset.bin";

/// Which collection pass produced a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    Offline(u32),
    Dagger(u32),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Offline(r) => write!(f, "offline-{r}"),
            Provenance::Dagger(r) => write!(f, "dagger-{r}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub image: Image,
    pub speed: f64,
    pub command: Command,
    pub goal: GoalPoint,
    pub expert_waypoints: WaypointPlan,
    pub expert_action: ControlAction,
    pub provenance: Provenance,
    /// Set when the episode that produced the record ended abnormally.
    pub flagged: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    records: usize,
    channels: usize,
    height: usize,
    width: usize,
    waypoints: usize,
    record_bytes: usize,
    seed: u64,
    payload_sha256: String,
    provenance: BTreeMap<String, usize>,
}

fn record_bytes(waypoints: usize, height: usize, width: usize) -> usize {
    7 + 8 * (5 + 2 * waypoints) + 3 * height * width
}

impl Dataset {
    pub fn new(seed: u64) -> Self {
        Dataset { records: Vec::new(), seed }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn provenance_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.provenance.to_string()).or_insert(0) += 1;
        }
        counts
    }

    /// Records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            seed: self.seed,
        }
    }

    fn layout(&self) -> Result<(usize, usize, usize)> {
        let first = self.records.first().ok_or_else(|| Error::invalid("cannot save an empty dataset"))?;
        let shape = (first.expert_waypoints.len(), first.image.height, first.image.width);
        for (i, r) in self.records.iter().enumerate() {
            if (r.expert_waypoints.len(), r.image.height, r.image.width) != shape {
                return Err(Error::invalid(format!("record {i} differs in shape from record 0")));
            }
        }
        Ok(shape)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let (k, h, w) = self.layout()?;
        let size = record_bytes(k, h, w);
        let mut payload = Vec::with_capacity(size * self.len());
        for r in &self.records {
            let (kind, round) = match r.provenance {
                Provenance::Offline(n) => (0u8, n),
                Provenance::Dagger(n) => (1u8, n),
            };
            payload.push(kind);
            payload.extend_from_slice(&round.to_le_bytes());
            payload.push(u8::from(r.flagged));
            payload.push(r.command.index() as u8);
            let scalars = [r.speed, r.goal.0.x, r.goal.0.y, r.expert_action.steer, r.expert_action.throttle];
            for v in scalars.iter().chain(r.expert_waypoints.flatten().iter()) {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            payload.extend_from_slice(&r.image.data);
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            records: self.len(),
            channels: 3,
            height: h,
            width: w,
            waypoints: k,
            record_bytes: size,
            seed: self.seed,
            payload_sha256: hex::encode(Sha256::digest(&payload)),
            provenance: self.provenance_counts(),
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let text = toml::to_string(&manifest).map_err(|e| Error::format("dataset manifest", e.to_string()))?;
        let mpath = dir.join(MANIFEST_FILE);
        fs::write(&mpath, text).map_err(|e| Error::io(mpath, e))?;
        let ppath = dir.join(PAYLOAD_FILE);
        fs::write(&ppath, payload).map_err(|e| Error::io(ppath, e))
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let bad = |m: String| Error::format("dataset", m);
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: Manifest = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if m.format != FORMAT || m.channels != 3 {
            return Err(bad(format!("unsupported format `{}`", m.format)));
        }
        if m.record_bytes != record_bytes(m.waypoints, m.height, m.width) {
            return Err(bad("record size disagrees with shapes".into()));
        }
        let ppath = dir.join(PAYLOAD_FILE);
        let payload = fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?;
        if payload.len() != m.records * m.record_bytes {
            return Err(bad(format!("payload has {} bytes, expected {}", payload.len(), m.records * m.record_bytes)));
        }
        if hex::encode(Sha256::digest(&payload)) != m.payload_sha256 {
            return Err(bad("payload checksum mismatch".into()));
        }
        let mut records = Vec::with_capacity(m.records);
        for (i, chunk) in payload.chunks_exact(m.record_bytes).enumerate() {
            let round = u32::from_le_bytes(chunk[1..5].try_into().expect("4 bytes"));
            let provenance = match chunk[0] {
                0 => Provenance::Offline(round),
                1 => Provenance::Dagger(round),
                k => return Err(bad(format!("record {i}: provenance kind {k}"))),
            };
            let command = Command::from_index(chunk[6] as usize)?;
            let floats: Vec<f64> = chunk[7..7 + 8 * (5 + 2 * m.waypoints)]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let image_start = 7 + 8 * floats.len();
            records.push(SampleRecord {
                image: Image {
                    width: m.width,
                    height: m.height,
                    data: chunk[image_start..].to_vec(),
                },
                speed: floats[0],
                command,
                goal: GoalPoint(Vec2::new(floats[1], floats[2])),
                expert_waypoints: WaypointPlan::from_flat(&floats[5..])?,
                expert_action: ControlAction {
                    steer: floats[3],
                    throttle: floats[4],
                },
                provenance,
                flagged: chunk[5] != 0,
            });
        }
        Ok(Dataset { records, seed: m.seed })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_record(rng: &mut ChaCha8Rng, provenance: Provenance) -> SampleRecord {
        let mut image = Image::new(8, 6);
        image.data.iter_mut().for_each(|v| *v = rng.gen());
        SampleRecord {
            image,
            speed: rng.gen_range(0.0..8.0),
            command: Command::ALL[rng.gen_range(0..6)],
            goal: GoalPoint(Vec2::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0))),
            expert_waypoints: WaypointPlan::new((0..4).map(|_| Vec2::new(rng.gen(), rng.gen())).collect()).unwrap(),
            expert_action: ControlAction {
                steer: rng.gen_range(-1.0..1.0),
                throttle: rng.gen_range(-1.0..0.75),
            },
            provenance,
            flagged: rng.gen_bool(0.2),
        }
    }

    #[test]
    fn roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ds = Dataset::new(42);
        for i in 0..20 {
            let p = if i < 12 { Provenance::Offline(0) } else { Provenance::Dagger(i % 3) };
            ds.records.push(random_record(&mut rng, p));
        }
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(text.contains("offline-0 = 12"));
    }

    #[test]
    fn corruption_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ds = Dataset::new(0);
        ds.records.push(random_record(&mut rng, Provenance::Offline(0)));
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let p = dir.path().join(PAYLOAD_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes[20] ^= 1;
        fs::write(&p, bytes).unwrap();
        assert!(Dataset::load(dir.path()).is_err());
        assert!(Dataset::new(0).save(dir.path()).is_err());
    }
}
