//! Parameter checkpoints as JSON or flat little-endian binary.
//!
//! Binary layout: the 8-byte magic `MDLABCK1`, a u64 header length, the JSON
//! header `{arch, n_prime, d, D, vocab}`, then row-major f64 values of W, the
//! readout (v or V) and, for the transformer, A.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Arch, Head, MlpParams, ModelParams, TransformerParams};
use crate::error::{MdError, Result};

const MAGIC: &[u8; 8] = b"MDLABCK1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointFormat {
    Json,
    Binary,
}

impl CheckpointFormat {
    /// `.json` selects JSON, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => CheckpointFormat::Json,
            _ => CheckpointFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: Arch,
    pub n_prime: Option<usize>,
    pub d: usize,
    #[serde(rename = "D")]
    pub width: usize,
    pub vocab: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct JsonCheckpoint {
    #[serde(flatten)]
    header: CheckpointHeader,
    w: Vec<f64>,
    readout: Vec<f64>,
    a: Option<Vec<f64>>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(MdError::Checkpoint(format!(
            "expected {} values for a {rows}x{cols} matrix, got {}",
            rows * cols,
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

fn vector(len: usize, data: &[f64]) -> Result<DVector<f64>> {
    if data.len() != len {
        return Err(MdError::Checkpoint(format!(
            "expected a vector of {len} values, got {}",
            data.len()
        )));
    }
    Ok(DVector::from_column_slice(data))
}

fn header_of(params: &ModelParams, n_prime: Option<usize>) -> CheckpointHeader {
    let (d, width, vocab) = match params {
        ModelParams::Mlp(p) => (p.input_dim(), p.width(), None),
        ModelParams::Transformer(p) => (
            p.input_dim(),
            p.width(),
            match &p.head {
                Head::Scalar(_) => None,
                Head::Vocab(m) => Some(m.nrows()),
            },
        ),
    };
    CheckpointHeader {
        arch: params.arch(),
        n_prime,
        d,
        width,
        vocab,
    }
}

fn flatten(params: &ModelParams) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    match params {
        ModelParams::Mlp(p) => (row_major(&p.w), p.v.as_slice().to_vec(), None),
        ModelParams::Transformer(p) => {
            let readout = match &p.head {
                Head::Scalar(v) => v.as_slice().to_vec(),
                Head::Vocab(m) => row_major(m),
            };
            (row_major(&p.w), readout, Some(row_major(&p.a)))
        }
    }
}

fn rebuild(
    h: &CheckpointHeader,
    w: &[f64],
    readout: &[f64],
    a: Option<&[f64]>,
) -> Result<ModelParams> {
    let w = from_row_major(h.width, h.d, w)?;
    match h.arch {
        Arch::Mlp => {
            if h.vocab.is_some() || a.is_some() {
                return Err(MdError::Checkpoint(
                    "mlp checkpoint carries transformer fields".into(),
                ));
            }
            Ok(ModelParams::Mlp(MlpParams::new(
                w,
                vector(h.width, readout)?,
            )?))
        }
        Arch::Transformer => {
            let a = from_row_major(
                h.d,
                h.d,
                a.ok_or_else(|| MdError::Checkpoint("transformer checkpoint lacks A".into()))?,
            )?;
            let head = match h.vocab {
                None => Head::Scalar(vector(h.width, readout)?),
                Some(v) => Head::Vocab(from_row_major(v, h.width, readout)?),
            };
            Ok(ModelParams::Transformer(TransformerParams::new(
                w, a, head,
            )?))
        }
    }
}

pub fn to_json(params: &ModelParams, n_prime: Option<usize>) -> Result<String> {
    let (w, readout, a) = flatten(params);
    Ok(serde_json::to_string(&JsonCheckpoint {
        header: header_of(params, n_prime),
        w,
        readout,
        a,
    })?)
}

pub fn from_json(s: &str) -> Result<(ModelParams, CheckpointHeader)> {
    let c: JsonCheckpoint = serde_json::from_str(s)?;
    let p = rebuild(&c.header, &c.w, &c.readout, c.a.as_deref())?;
    Ok((p, c.header))
}

pub fn to_bytes(params: &ModelParams, n_prime: Option<usize>) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&header_of(params, n_prime))?;
    let (w, readout, a) = flatten(params);
    let mut out = Vec::with_capacity(
        16 + header.len() + 8 * (w.len() + readout.len() + a.as_ref().map_or(0, Vec::len)),
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for x in w.iter().chain(&readout).chain(a.iter().flatten()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ModelParams, CheckpointHeader)> {
    let bad = |m: &str| MdError::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body_start = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..body_start])?;
    let body = &bytes[body_start..];
    if !body.len().is_multiple_of(8) {
        return Err(bad("payload is not a whole number of f64 values"));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let nw = header.width * header.d;
    let nr = header.vocab.unwrap_or(1) * header.width;
    let na = if header.arch == Arch::Transformer {
        header.d * header.d
    } else {
        0
    };
    if values.len() != nw + nr + na {
        return Err(bad(&format!(
            "expected {} values, found {}",
            nw + nr + na,
            values.len()
        )));
    }
    let a = (na > 0).then(|| &values[nw + nr..]);
    let p = rebuild(&header, &values[..nw], &values[nw..nw + nr], a)?;
    Ok((p, header))
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, n_prime: Option<usize>) -> Result<()> {
    match CheckpointFormat::from_path(path) {
        CheckpointFormat::Json => std::fs::write(path, to_json(params, n_prime)?)?,
        CheckpointFormat::Binary => std::fs::write(path, to_bytes(params, n_prime)?)?,
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointHeader)> {
    match CheckpointFormat::from_path(path) {
        CheckpointFormat::Json => from_json(&std::fs::read_to_string(path)?),
        CheckpointFormat::Binary => from_bytes(&std::fs::read(path)?),
    }
}
