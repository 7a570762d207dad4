//! Dataset files.
//!
//! A dataset starts with a header block of `# key = value` lines echoing
//! the workload that produced it, followed by data lines:
//!
//! ```text
//! tick,object_id,x,y        position update
//! tick,issuer_id,x,y,k      query issued by object `issuer_id`
//! ```
//!
//! Ticks must not decrease from one line to the next. Within a tick the
//! last position of each object and the last query of each issuer win;
//! an object without an update keeps its previous position. Coordinates
//! are written in shortest round-trip form, so reading a file back yields
//! bit-identical positions.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use mknn_core::workload::TickBatch;
use mknn_core::{ObjectId, Point, Query};

use crate::HarnessError;

pub fn write_header(out: &mut impl Write, echo: &[(String, String)]) -> std::io::Result<()> {
    for (k, v) in echo {
        writeln!(out, "# {k} = {v}")?;
    }
    Ok(())
}

pub fn write_batch(out: &mut impl Write, batch: &TickBatch) -> std::io::Result<()> {
    for (id, p) in &batch.positions {
        writeln!(out, "{},{},{},{}", batch.tick, id, p.x, p.y)?;
    }
    for q in &batch.queries {
        writeln!(out, "{},{},{},{},{}", batch.tick, q.issuer, q.pos.x, q.pos.y, batch.k)?;
    }
    Ok(())
}

/// Contents of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: Vec<(String, String)>,
    pub batches: Vec<TickBatch>,
}

impl Dataset {
    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

#[derive(Default)]
struct TickAccum {
    queries: BTreeMap<ObjectId, (Point, usize)>,
}

fn snapshot(known: &BTreeMap<ObjectId, Point>) -> Vec<(ObjectId, Point)> {
    known.iter().map(|(&id, &p)| (id, p)).collect()
}

/// Closes `tick`.
fn flush(
    path: &Path,
    k: usize,
    tick: u64,
    acc: TickAccum,
    known: &BTreeMap<ObjectId, Point>,
    batches: &mut Vec<TickBatch>,
) -> Result<(), HarnessError> {
    // issuers must be known objects once the tick's positions are in
    for (&issuer, &(_, line)) in &acc.queries {
        if !known.contains_key(&issuer) {
            return Err(HarnessError::dataset(path, line, format!("query from unknown object {issuer}")));
        }
    }
    let queries = acc.queries.into_iter().map(|(issuer, (pos, _))| Query { id: issuer, issuer, pos }).collect();
    batches.push(TickBatch { tick, k, positions: snapshot(known), queries });
    Ok(())
}

/// Reads a dataset, deduplicating each tick and carrying positions forward.
///
/// Every tick from 0 up to the last one mentioned (or up to the header's
/// `ticks` value, if larger) yields a batch; ticks without lines keep all
/// positions and have no queries. Queries must use `k`.
pub fn ingest(reader: impl BufRead, path: &Path, k: usize) -> Result<Dataset, HarnessError> {
    let mut header = Vec::new();
    let mut batches = Vec::new();
    let mut known: BTreeMap<ObjectId, Point> = BTreeMap::new();
    let mut current: Option<(u64, TickAccum)> = None;

    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((key, value)) = rest.split_once('=') {
                header.push((key.trim().to_string(), value.trim().to_string()));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 && fields.len() != 5 {
            return Err(HarnessError::dataset(path, n, format!("expected 4 or 5 fields, got {}", fields.len())));
        }
        let bad = |what: &str| HarnessError::dataset(path, n, format!("malformed {what} in `{line}`"));
        let tick: u64 = fields[0].parse().map_err(|_| bad("tick"))?;
        let id: ObjectId = fields[1].parse().map_err(|_| bad("id"))?;
        let x: f64 = fields[2].parse().map_err(|_| bad("x"))?;
        let y: f64 = fields[3].parse().map_err(|_| bad("y"))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(bad("coordinate"));
        }
        match &current {
            Some((t, _)) if *t == tick => {}
            Some((t, _)) if *t > tick => {
                return Err(HarnessError::dataset(path, n, format!("tick {tick} after tick {t}")));
            }
            _ => {
                if let Some((t, acc)) = current.take() {
                    flush(path, k, t, acc, &known, &mut batches)?;
                }
                // silent ticks in between see the positions as they stand now
                while (batches.len() as u64) < tick {
                    batches.push(TickBatch { tick: batches.len() as u64, k, positions: snapshot(&known), queries: Vec::new() });
                }
                current = Some((tick, TickAccum::default()));
            }
        }
        let acc = &mut current.as_mut().expect("set above").1;
        let p = Point::new(x, y);
        if fields.len() == 4 {
            known.insert(id, p);
        } else {
            let qk: usize = fields[4].parse().map_err(|_| bad("k"))?;
            if qk != k {
                return Err(HarnessError::dataset(path, n, format!("query k {qk} differs from configured k {k}")));
            }
            acc.queries.insert(id, (p, n));
        }
    }
    if let Some((t, acc)) = current.take() {
        flush(path, k, t, acc, &known, &mut batches)?;
    }
    let declared: Option<u64> = header.iter().find(|(k, _)| k == "ticks").and_then(|(_, v)| v.parse().ok());
    if let Some(d) = declared {
        while (batches.len() as u64) < d {
            batches.push(TickBatch { tick: batches.len() as u64, k, positions: snapshot(&known), queries: Vec::new() });
        }
    }
    Ok(Dataset { header, batches })
}
