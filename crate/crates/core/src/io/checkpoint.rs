//! Single-file checkpoint: a text manifest followed by a little-endian f64
//! blob.
//!
//! ```text
//! HRLREC-CKPT v1
//! dtype f64le
//! entries <n>
//! <name> <shape> <offset> <count>      (one line per tensor, sorted by name)
//! blob <bytes>
//! sha256 <hex digest of the blob>
//!
//! <blob>
//! ```
//!
//! Shapes are written as `[d0,d1,...]`; offsets and counts are in scalars.
//! The manifest is checked against the blob length and digest before any
//! tensor is built.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::write_atomic;
use crate::env::{ItemId, UserHistory};
use crate::error::{Error, Result};
use crate::nn::{ParameterSet, Tensor};

pub const MAGIC: &str = "HRLREC-CKPT v1";

/// Canonical bytes of `params`; equal sets give equal bytes.
pub fn encode_checkpoint(params: &ParameterSet) -> Result<Vec<u8>> {
    let mut names = params.sorted_names();
    names.dedup();
    let mut manifest = format!("{MAGIC}\ndtype f64le\nentries {}\n", names.len());
    let mut blob = Vec::with_capacity(params.num_scalars() * 8);
    let mut offset = 0usize;
    for name in names {
        let t = params.by_name(name).expect("name comes from the set");
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("{name} [{}] {offset} {}\n", shape.join(","), t.len()));
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += t.len();
    }
    manifest.push_str(&format!("blob {}\nsha256 {}\n\n", blob.len(), hex::encode(Sha256::digest(&blob))));
    let mut out = manifest.into_bytes();
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<ParameterSet> {
    let corrupt = |message: String| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        message,
    };
    let split = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| corrupt("no end of manifest".into()))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| corrupt("manifest is not UTF-8".into()))?;
    let blob = &bytes[split + 2..];
    let mut lines = header.lines();
    let mut expect_line = |what: &str| lines.next().ok_or_else(|| corrupt(format!("missing {what}")));

    if expect_line("magic")? != MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    if expect_line("dtype")? != "dtype f64le" {
        return Err(corrupt("unsupported dtype".into()));
    }
    let count: usize = expect_line("entry count")?
        .strip_prefix("entries ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| corrupt("bad entry count".into()))?;

    struct Entry<'a> {
        name: &'a str,
        shape: Vec<usize>,
        offset: usize,
        count: usize,
    }
    let mut entries = Vec::with_capacity(count);
    let mut next_offset = 0usize;
    for i in 0..count {
        let line = expect_line("manifest entry")?;
        let fields: Vec<&str> = line.split(' ').collect();
        let [name, shape, offset, n] = fields[..] else {
            return Err(corrupt(format!("malformed entry {i}")));
        };
        let shape: Vec<usize> = shape
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| corrupt(format!("bad shape for {name}")))
            .and_then(|s| {
                if s.is_empty() {
                    Ok(vec![])
                } else {
                    s.split(',')
                        .map(|d| d.parse().map_err(|_| corrupt(format!("bad shape for {name}"))))
                        .collect()
                }
            })?;
        let offset: usize = offset.parse().map_err(|_| corrupt(format!("bad offset for {name}")))?;
        let n: usize = n.parse().map_err(|_| corrupt(format!("bad count for {name}")))?;
        if shape.iter().product::<usize>() != n {
            return Err(corrupt(format!("{name}: shape disagrees with count")));
        }
        if offset != next_offset {
            return Err(corrupt(format!("{name}: entries are not contiguous")));
        }
        if let Some(prev) = entries.last().map(|e: &Entry<'_>| e.name) {
            if prev >= name {
                return Err(corrupt(format!("{name}: manifest is not sorted")));
            }
        }
        next_offset = offset
            .checked_add(n)
            .ok_or_else(|| corrupt("entry sizes overflow".into()))?;
        entries.push(Entry {
            name,
            shape,
            offset,
            count: n,
        });
    }
    let declared: usize = expect_line("blob length")?
        .strip_prefix("blob ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| corrupt("bad blob length".into()))?;
    let digest = expect_line("digest")?
        .strip_prefix("sha256 ")
        .ok_or_else(|| corrupt("bad digest line".into()))?
        .to_string();
    if lines.next().is_some() {
        return Err(corrupt("trailing manifest lines".into()));
    }
    if next_offset.checked_mul(8) != Some(declared) {
        return Err(corrupt(format!("manifest needs {} bytes, blob declares {declared}", next_offset * 8)));
    }
    if blob.len() != declared {
        return Err(corrupt(format!("blob has {} bytes, expected {declared}", blob.len())));
    }
    if hex::encode(Sha256::digest(blob)) != digest {
        return Err(corrupt("checksum mismatch".into()));
    }

    let mut params = ParameterSet::new();
    for e in entries {
        let data: Vec<f64> = blob[e.offset * 8..(e.offset + e.count) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let tensor = Tensor::from_vec(&e.shape, data).map_err(|err| corrupt(err.to_string()))?;
        params.insert(e.name, tensor).map_err(|err| corrupt(err.to_string()))?;
    }
    Ok(params)
}

/// Writes through a temporary file and a rename, so `path` is either the old
/// file or the complete new one.
pub fn save_checkpoint(params: &ParameterSet, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params)?)
}

pub fn load_checkpoint(path: &Path) -> Result<ParameterSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Consumption histories as tensors `userNNNNNNNN.items` and
/// `userNNNNNNNN.rewards`, for storage next to a policy checkpoint.
pub fn histories_to_parameter_set(histories: &[UserHistory]) -> Result<ParameterSet> {
    let mut ps = ParameterSet::new();
    for (u, h) in histories.iter().enumerate() {
        let items: Vec<f64> = h.items().iter().map(|i| i.0 as f64).collect();
        ps.insert(format!("user{u:08}.items"), Tensor::from_vec(&[items.len()], items)?)?;
        ps.insert(format!("user{u:08}.rewards"), Tensor::from_vec(&[h.len()], h.rewards().to_vec())?)?;
    }
    Ok(ps)
}

pub fn histories_from_parameter_set(ps: &ParameterSet) -> Result<Vec<UserHistory>> {
    let users = ps.len() / 2;
    if ps.len() % 2 != 0 {
        return Err(Error::shape("history tensors come in pairs"));
    }
    let mut out = Vec::with_capacity(users);
    for u in 0..users {
        let get = |what: &str| {
            ps.by_name(&format!("user{u:08}.{what}"))
                .ok_or_else(|| Error::Lookup(format!("history of user {u} lacks {what}")))
        };
        let (items, rewards) = (get("items")?, get("rewards")?);
        if items.len() != rewards.len() {
            return Err(Error::shape(format!("history of user {u}: items and rewards differ in length")));
        }
        let mut h = UserHistory::new();
        for (&i, &r) in items.data().iter().zip(rewards.data()) {
            if !(i >= 0.0 && i.fract() == 0.0) {
                return Err(Error::shape(format!("history of user {u}: bad item id {i}")));
            }
            h.push(ItemId(i as usize), r);
        }
        out.push(h);
    }
    Ok(out)
}
