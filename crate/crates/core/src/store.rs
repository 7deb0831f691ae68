//! Candidate sets and their on-disk format.
//!
//! A candidate file is a single little-endian binary stream:
//!
//! | offset | size        | field                                               |
//! |--------|-------------|-----------------------------------------------------|
//! | 0      | 8           | magic `b"MCUCANDS"`                                 |
//! | 8      | 4 (u32)     | format version, currently `1`                       |
//! | 12     | 8 (u64)     | `M`, number of candidates                           |
//! | 20     | 4 (u32)     | `d`, parameter dimension                            |
//! | 24     | 8 (f64)     | flattening scale `alpha`                            |
//! | 32     | 4 (u32)     | `L`, length of the metadata block                   |
//! | 36     | L           | UTF-8 JSON `{"spec": .., "provenance": ..}`         |
//! | 36 + L | M * (d+1)*8 | records: `d` parameter values then `h`, all f64     |
//!
//! The file must end exactly after the last record. Reals are stored as raw
//! IEEE-754 bits so a save/load round trip is bit-exact.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{McuError, Result};
use crate::model::{ModelSpec, ParameterVector};

pub const MAGIC: &[u8; 8] = b"MCUCANDS";
pub const FORMAT_VERSION: u32 = 1;

/// Where a candidate set came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// One seed per chain, in concatenation order.
    pub seeds: Vec<u64>,
    /// Hex SHA-256 of the sampler configuration JSON.
    pub config_digest: String,
    /// Hex SHA-256 of the training data's canonical CSV.
    pub dataset_digest: String,
    /// Seconds since the Unix epoch; 0 when the caller did not stamp it.
    pub created_unix: u64,
}

/// MCMC samples together with their stored log-joint values `h`.
///
/// `h_values[i]` is the un-tempered `log p(D | theta_i) + log p(theta_i)`
/// regardless of the flattening scale the chain targeted.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    candidates: Vec<ParameterVector>,
    h_values: Vec<f64>,
    alpha: f64,
    spec: ModelSpec,
    provenance: Provenance,
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(McuError::invalid(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

impl CandidateSet {
    pub fn new(
        candidates: Vec<ParameterVector>,
        h_values: Vec<f64>,
        alpha: f64,
        spec: ModelSpec,
        provenance: Provenance,
    ) -> Result<Self> {
        if candidates.is_empty() {
            return Err(McuError::invalid("candidate set must hold at least one candidate"));
        }
        if candidates.len() != h_values.len() {
            return Err(McuError::invalid(format!(
                "{} candidates but {} h values",
                candidates.len(),
                h_values.len()
            )));
        }
        let dim = candidates[0].dim();
        if let Some(i) = candidates.iter().position(|c| c.dim() != dim) {
            return Err(McuError::invalid(format!("candidate {i} has a different dimension")));
        }
        if let Some(i) = h_values.iter().position(|h| !h.is_finite()) {
            return Err(McuError::invalid(format!("h value of candidate {i} is not finite")));
        }
        check_alpha(alpha)?;
        spec.validate()?;
        Ok(CandidateSet {
            candidates,
            h_values,
            alpha,
            spec,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    /// Always false; a candidate set holds at least one candidate.
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.candidates[0].dim()
    }

    pub fn candidates(&self) -> &[ParameterVector] {
        &self.candidates
    }

    pub fn h_values(&self) -> &[f64] {
        &self.h_values
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn with_created_unix(mut self, created_unix: u64) -> Self {
        self.provenance.created_unix = created_unix;
        self
    }

    /// Concatenates chains drawn for the same model, scale and dataset.
    pub fn concat(sets: Vec<CandidateSet>) -> Result<CandidateSet> {
        let mut iter = sets.into_iter();
        let mut out = iter
            .next()
            .ok_or_else(|| McuError::invalid("nothing to concatenate"))?;
        for set in iter {
            if set.spec != out.spec
                || set.alpha.to_bits() != out.alpha.to_bits()
                || set.provenance.dataset_digest != out.provenance.dataset_digest
                || set.dim() != out.dim()
            {
                return Err(McuError::invalid(
                    "candidate sets differ in model, alpha, dimension or dataset",
                ));
            }
            out.candidates.extend(set.candidates);
            out.h_values.extend(set.h_values);
            out.provenance.seeds.extend(set.provenance.seeds);
            out.provenance.created_unix = out.provenance.created_unix.max(set.provenance.created_unix);
        }
        Ok(out)
    }

    /// Unweighted mean of the candidates.
    pub fn mean(&self) -> Vec<f64> {
        let m = self.len() as f64;
        let mut mean = vec![0.0; self.dim()];
        for c in &self.candidates {
            for (acc, v) in mean.iter_mut().zip(c.iter()) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        mean
    }
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    spec: ModelSpec,
    provenance: Provenance,
}

/// Writes `set` in the format described in the module docs.
pub fn save<W: Write>(set: &CandidateSet, sink: W) -> Result<()> {
    let mut sink = io::BufWriter::new(sink);
    let meta = serde_json::to_vec(&Metadata {
        spec: set.spec,
        provenance: set.provenance.clone(),
    })
    .map_err(|e| McuError::invalid(format!("cannot encode metadata: {e}")))?;
    sink.write_all(MAGIC)?;
    sink.write_all(&FORMAT_VERSION.to_le_bytes())?;
    sink.write_all(&(set.len() as u64).to_le_bytes())?;
    sink.write_all(&(set.dim() as u32).to_le_bytes())?;
    sink.write_all(&set.alpha.to_le_bytes())?;
    sink.write_all(&(meta.len() as u32).to_le_bytes())?;
    sink.write_all(&meta)?;
    for (theta, h) in set.candidates.iter().zip(&set.h_values) {
        for v in theta.iter() {
            sink.write_all(&v.to_le_bytes())?;
        }
        sink.write_all(&h.to_le_bytes())?;
    }
    sink.flush()?;
    Ok(())
}

/// Writes to a temporary file next to `path`, then renames it into place.
pub fn save_to_path(set: &CandidateSet, path: &Path) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    save(set, tmp.as_file_mut())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| McuError::Io(e.error))?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(McuError::corrupt(format!("truncated while reading {what}")));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Reads and validates a candidate file. Nothing is returned unless the
/// whole file parses and every invariant holds.
pub fn load<R: Read>(mut source: R) -> Result<CandidateSet> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(McuError::corrupt("missing magic prefix"));
    }
    match cur.u32("version")? {
        1 => load_v1(cur),
        v => Err(McuError::UnsupportedVersion(v)),
    }
}

fn load_v1(mut cur: Cursor<'_>) -> Result<CandidateSet> {
    let m = cur.u64("candidate count")?;
    let dim = cur.u32("dimension")? as usize;
    let alpha = cur.f64("alpha")?;
    let meta_len = cur.u32("metadata length")? as usize;
    let meta: Metadata = serde_json::from_slice(cur.take(meta_len, "metadata")?)
        .map_err(|e| McuError::corrupt(format!("bad metadata: {e}")))?;
    if m == 0 {
        return Err(McuError::corrupt("declared candidate count is zero"));
    }
    if dim == 0 {
        return Err(McuError::corrupt("declared dimension is zero"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(McuError::corrupt(format!("alpha {alpha} outside (0, 1]")));
    }
    let record_bytes = (dim + 1) * 8;
    let remaining = cur.buf.len() - cur.pos;
    let expected = usize::try_from(m)
        .ok()
        .and_then(|m| m.checked_mul(record_bytes))
        .ok_or_else(|| McuError::corrupt("declared candidate count is too large"))?;
    if remaining != expected {
        return Err(McuError::corrupt(format!(
            "declared {m} records of {record_bytes} bytes but {remaining} bytes follow the header"
        )));
    }
    let m = m as usize;
    let mut candidates = Vec::with_capacity(m);
    let mut h_values = Vec::with_capacity(m);
    for i in 0..m {
        let mut theta = Vec::with_capacity(dim);
        for _ in 0..dim {
            theta.push(cur.f64("record")?);
        }
        let theta = ParameterVector::new(theta)
            .map_err(|e| McuError::corrupt(format!("record {i}: {e}")))?;
        candidates.push(theta);
        h_values.push(cur.f64("record")?);
    }
    CandidateSet::new(candidates, h_values, alpha, meta.spec, meta.provenance)
        .map_err(|e| McuError::corrupt(e.to_string()))
}

pub fn load_from_path(path: &Path) -> Result<CandidateSet> {
    load(fs::File::open(path)?)
}
