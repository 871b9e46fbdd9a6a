//! Embedding and sequence files.
//!
//! Embeddings: `EMB0`, item count `u64`, width `u32`, then per item the
//! external ID `u64` followed by `d` little-endian `f32`s.
//! Sequences: one line per user, `user_id<TAB>item,item,...`, oldest first,
//! items given by external ID.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Catalog, UserSequence};
use crate::error::{Error, Result};
use crate::io::Reader;

pub const EMBEDDINGS_MAGIC: &[u8; 4] = b"EMB0";

pub fn write_embeddings(catalog: &Catalog) -> Vec<u8> {
    let d = catalog.dim();
    let mut buf = Vec::with_capacity(16 + catalog.len() * (8 + 4 * d));
    buf.extend_from_slice(EMBEDDINGS_MAGIC);
    buf.extend_from_slice(&(catalog.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for item in 0..catalog.len() {
        buf.extend_from_slice(&catalog.external_id(item).to_le_bytes());
        for v in catalog.embedding(item) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn read_embeddings(bytes: &[u8]) -> Result<Catalog> {
    let mut r = Reader::new(bytes);
    if r.bytes(4)? != EMBEDDINGS_MAGIC {
        return Err(Error::format(0, "bad magic, expected EMB0"));
    }
    let n = r.u64()? as usize;
    let d = r.u32()? as usize;
    if d == 0 {
        return Err(Error::format(12, "zero embedding width"));
    }
    let mut ids = Vec::with_capacity(n.min(1 << 24));
    let mut data = Vec::with_capacity(n.min(1 << 24) * d);
    let mut seen = HashMap::new();
    for index in 0..n {
        let id = r.u64().map_err(|e| record_err(index, e))?;
        if seen.insert(id, index).is_some() {
            return Err(Error::Record {
                index,
                message: format!("duplicate item id {id}"),
            });
        }
        ids.push(id);
        for _ in 0..d {
            let v = r.f32().map_err(|e| record_err(index, e))?;
            if !v.is_finite() {
                return Err(Error::Record {
                    index,
                    message: "non-finite embedding value".into(),
                });
            }
            data.push(v);
        }
    }
    if r.remaining() != 0 {
        return Err(Error::format(
            r.offset(),
            "trailing bytes after last record",
        ));
    }
    Catalog::new(d, data)?.with_external_ids(ids)
}

fn record_err(index: usize, e: Error) -> Error {
    Error::Record {
        index,
        message: e.to_string(),
    }
}

pub fn write_sequences(catalog: &Catalog, sequences: &[UserSequence]) -> String {
    let mut out = String::new();
    for s in sequences {
        let _ = write!(out, "{}\t", s.user_id);
        for (i, &e) in s.events.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", catalog.external_id(e));
        }
        out.push('\n');
    }
    out
}

/// Outcome counters of a sequence load.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub users: usize,
    pub dropped_events: usize,
    pub dropped_users: usize,
    pub truncated_users: usize,
}

/// Parses a sequences file against `catalog`.
///
/// Events whose item has no embedding are dropped and counted; the remaining
/// history is then cut to its most recent `max_history` events. Users left
/// with fewer than two events are dropped.
pub fn parse_sequences(
    text: &str,
    catalog: &Catalog,
    max_history: usize,
) -> Result<(Vec<UserSequence>, LoadReport)> {
    let lookup: HashMap<u64, usize> = catalog
        .external_ids()
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();
    let mut report = LoadReport::default();
    let mut out = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (user, items) = line.split_once('\t').ok_or_else(|| Error::Record {
            index,
            message: "missing tab separator".into(),
        })?;
        let user_id: u64 = user.trim().parse().map_err(|_| Error::Record {
            index,
            message: format!("bad user id {user:?}"),
        })?;
        let mut events = Vec::new();
        for tok in items.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let ext: u64 = tok.parse().map_err(|_| Error::Record {
                index,
                message: format!("bad item id {tok:?}"),
            })?;
            match lookup.get(&ext) {
                Some(&i) => events.push(i),
                None => report.dropped_events += 1,
            }
        }
        if events.len() > max_history {
            events.drain(..events.len() - max_history);
            report.truncated_users += 1;
        }
        if events.len() < 2 {
            report.dropped_users += 1;
            continue;
        }
        out.push(UserSequence { user_id, events });
    }
    report.users = out.len();
    Ok((out, report))
}

pub fn load_taobao_mm(
    embeddings_path: impl AsRef<Path>,
    sequences_path: impl AsRef<Path>,
    max_history: usize,
) -> Result<(Catalog, Vec<UserSequence>, LoadReport)> {
    let catalog = read_embeddings(&fs::read(embeddings_path)?)?;
    let text = fs::read_to_string(sequences_path)?;
    let (seqs, report) = parse_sequences(&text, &catalog, max_history)?;
    Ok((catalog, seqs, report))
}
