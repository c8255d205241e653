//! Reservoir checkpoints.
//!
//! Binary layout, all integers and floats little-endian, matrices row-major:
//!
//! ```text
//! "FRSV1"                      5 bytes magic
//! n_units u32, n_inputs u32
//! spectral_radius f64, input_scaling f64, leak_rate f64, density f64,
//! rec_bias_scale f64, seed u64
//! w_in      n_units*n_inputs f64
//! w_rec     n_units*n_units  f64
//! b_rec     n_units          f64
//! gain      n_units          f64
//! bias      n_units          f64
//! ```
//!
//! A trained readout, when present, is appended as `rows u32, cols u32` plus
//! `rows*cols` f64, where the last column holds the output bias. A checkpoint
//! without readout ends after `bias`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::reservoir::{IPState, ReservoirConfig, ReservoirParams};

pub const MAGIC: &[u8; 5] = b"FRSV1";

pub fn write_params(w: &mut ByteWriter, p: &ReservoirParams) {
    let c = &p.config;
    w.len_u32(c.n_units);
    w.len_u32(c.n_inputs);
    w.f64(c.spectral_radius);
    w.f64(c.input_scaling);
    w.f64(c.leak_rate);
    w.f64(c.density);
    w.f64(c.rec_bias_scale);
    w.u64(c.seed);
    w.matrix_body(&p.w_in);
    w.matrix_body(&p.w_rec);
    w.vector_body(&p.b_rec);
    w.vector_body(&p.ip.gain);
    w.vector_body(&p.ip.bias);
}

pub fn read_params(r: &mut ByteReader<'_>) -> Result<ReservoirParams> {
    let n = r.dim()?;
    let m = r.dim()?;
    let config = ReservoirConfig {
        n_units: n,
        n_inputs: m,
        spectral_radius: r.f64()?,
        input_scaling: r.f64()?,
        leak_rate: r.f64()?,
        density: r.f64()?,
        rec_bias_scale: r.f64()?,
        seed: r.u64()?,
    };
    config.validate()?;
    let w_in = r.matrix_body(n, m)?;
    let w_rec = r.matrix_body(n, n)?;
    let b_rec = r.vector_body(n)?;
    let gain = r.vector_body(n)?;
    let bias = r.vector_body(n)?;
    Ok(ReservoirParams { config, w_in, w_rec, b_rec, ip: IPState { gain, bias } })
}

pub fn encode(p: &ReservoirParams, readout: Option<&DMatrix<f64>>) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    write_params(&mut w, p);
    if let Some(out) = readout {
        w.len_u32(out.nrows());
        w.len_u32(out.ncols());
        w.matrix_body(out);
    }
    w.buf
}

pub fn decode(bytes: &[u8]) -> Result<(ReservoirParams, Option<DMatrix<f64>>)> {
    let mut r = ByteReader::new(bytes);
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Wire("bad checkpoint magic".into()));
    }
    let p = read_params(&mut r)?;
    let readout = if r.remaining() > 0 {
        let rows = r.dim()?;
        let cols = r.dim()?;
        if cols != p.n_units() + 1 {
            return Err(Error::Wire(format!("readout has {cols} columns, expected {}", p.n_units() + 1)));
        }
        Some(r.matrix_body(rows, cols)?)
    } else {
        None
    };
    r.finish()?;
    Ok((p, readout))
}

pub fn save(path: &Path, p: &ReservoirParams, readout: Option<&DMatrix<f64>>) -> Result<()> {
    std::fs::write(path, encode(p, readout))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ReservoirParams, Option<DMatrix<f64>>)> {
    decode(&std::fs::read(path)?)
}

/// Inspection export. Floats go through `serde_json`, which prints the
/// shortest representation that parses back to the same value.
#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointJson {
    pub format: String,
    pub config: ReservoirConfig,
    pub w_in: Vec<Vec<f64>>,
    pub w_rec: Vec<Vec<f64>>,
    pub b_rec: Vec<f64>,
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub readout: Option<Vec<Vec<f64>>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn to_json(p: &ReservoirParams, readout: Option<&DMatrix<f64>>) -> Result<String> {
    let doc = CheckpointJson {
        format: "FRSV1".into(),
        config: p.config.clone(),
        w_in: rows(&p.w_in),
        w_rec: rows(&p.w_rec),
        b_rec: p.b_rec.iter().copied().collect(),
        gain: p.ip.gain.iter().copied().collect(),
        bias: p.ip.bias.iter().copied().collect(),
        readout: readout.map(rows),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}
