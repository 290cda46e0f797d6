//! Parameter checkpoints: a text manifest of `(name, shape, byte offset)`
//! rows beside a raw little-endian `f64` payload.
//!
//! `save(params, "run/policy.ckpt")` writes `run/policy.ckpt` (payload) and
//! `run/policy.ckpt.manifest`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "drive-checkpoint v1";

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

pub fn encode(params: &ParamSet) -> (String, Vec<u8>) {
    let mut manifest = format!("{MAGIC}\ncount {}\n", params.len());
    let mut payload = Vec::with_capacity(params.scalar_count() * 8);
    for (name, t) in params.iter() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(manifest, "{name} {} {}", shape.join(","), payload.len());
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    (manifest, payload)
}

pub fn decode(manifest: &str, payload: &[u8]) -> Result<ParamSet> {
    let bad = |m: String| Error::format("checkpoint", m);
    let mut lines = manifest.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing header".into()));
    }
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("count "))
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| bad("missing count".into()))?;
    let mut params = ParamSet::new();
    let mut expected_offset = 0usize;
    for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, shape, offset] = fields[..] else {
            return Err(bad(format!("row {i}: expected 3 fields, got `{line}`")));
        };
        let shape: Vec<usize> = shape
            .split(',')
            .map(|s| s.parse().map_err(|_| bad(format!("row {i}: bad shape `{shape}`"))))
            .collect::<Result<_>>()?;
        let offset: usize = offset
            .parse()
            .map_err(|_| bad(format!("row {i}: bad offset `{offset}`")))?;
        if offset != expected_offset {
            return Err(bad(format!("row {i}: offset {offset}, expected {expected_offset}")));
        }
        let n: usize = shape.iter().product();
        let end = offset + n * 8;
        if end > payload.len() {
            return Err(bad(format!("row {i}: payload truncated")));
        }
        let data = payload[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.add(name, Tensor::new(shape, data)?);
        expected_offset = end;
    }
    if params.len() != count {
        return Err(bad(format!("count {count} but {} rows", params.len())));
    }
    if expected_offset != payload.len() {
        return Err(bad("trailing payload bytes".into()));
    }
    Ok(params)
}

pub fn save(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let (manifest, payload) = encode(params);
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    fs::write(&mpath, manifest).map_err(|e| Error::io(mpath, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamSet> {
    let path = path.as_ref();
    let payload = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let manifest = fs::read_to_string(&mpath).map_err(|e| Error::io(mpath, e))?;
    decode(&manifest, &payload)
}

/// Loads `path` into an existing parameter layout, checking names and shapes.
pub fn load_into(params: &mut ParamSet, path: impl AsRef<Path>) -> Result<()> {
    params.load_from(&load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40), split in 1usize..5) {
            let mut p = ParamSet::new();
            let cut = values.len().min(split);
            p.add("a.w", Tensor::new(vec![cut], values[..cut].to_vec()).unwrap());
            if cut < values.len() {
                p.add("b", Tensor::new(vec![1, values.len() - cut], values[cut..].to_vec()).unwrap());
            }
            let (m, bytes) = encode(&p);
            let back = decode(&m, &bytes).unwrap();
            prop_assert_eq!(back.len(), p.len());
            for ((n1, t1), (n2, t2)) in p.iter().zip(back.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                for (x, y) in t1.data().iter().zip(t2.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn file_roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/net.ckpt");
        let mut p = ParamSet::new();
        p.add("w", Tensor::matrix(2, 2, vec![1.0, -2.5, 3.25, 1e-300]).unwrap());
        p.add("b", Tensor::vector(vec![0.1, 0.2]));
        save(&p, &path).unwrap();
        assert_eq!(load(&path).unwrap(), p);
        let mut q = p.clone();
        q.get_mut(q.find("w").unwrap()).data_mut()[0] = 9.0;
        load_into(&mut q, &path).unwrap();
        assert_eq!(q, p);

        fs::write(&path, [0u8; 7]).unwrap();
        assert!(matches!(load(&path), Err(Error::Format { .. })));
        assert!(matches!(load(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
