//! Binary framing for the federation protocol.
//!
//! ```text
//! frame   := length:u32be  version:u8  kind:u8  payload
//! ```
//!
//! `length` counts every byte after itself. Payload integers and floats are
//! little-endian; vectors and matrices are bare row-major `f64` runs whose
//! sizes come from preceding `u32` dimensions.
//!
//! | kind | message        | payload |
//! |------|----------------|---------|
//! | 1    | InitBroadcast  | `n_rounds:u32 weight_unit:u8 mu:f64 sigma:f64 eta:f64 epochs:u32 batch:u32 variant:u8 shuffle:u8 shuffle_seed:u64` + FRSV1 checkpoint |
//! | 2    | RoundDispatch  | `round:u32 n:u32 gain[n] bias[n]` |
//! | 3    | ClientReply    | `round:u32 client:u32 n_c:u64 n:u32 gain[n] bias[n]` |
//! | 4    | SumsRequest    | `washout:u32 n_outputs:u32 n:u32 gain[n] bias[n]` |
//! | 5    | SumsReply      | `client:u32 rows:u32 cols:u32 n_samples:u64 A[rows*cols] B[cols*cols] crc32:u32` |
//! | 6    | Complete       | empty |
//! | 7    | Join           | `client:u32` |
//! | 8    | ClientError    | `round:u32 client:u32 len:u32 utf8[len]` |
//!
//! The CRC32 in `SumsReply` covers every payload byte before it.

use std::io::{Read, Write};

use crate::checkpoint;
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::plasticity::{IPConfig, RuleVariant};
use crate::readout::DesignAccumulator;
use crate::reservoir::{IPState, ReservoirParams};

pub const VERSION: u8 = 1;
/// Upper bound on a frame body, rejecting corrupt length prefixes.
pub const MAX_FRAME: usize = 1 << 30;

/// Length prefix plus version and kind bytes.
pub const FRAME_OVERHEAD: usize = 4 + 1 + 1;
/// Fixed bytes of a `RoundDispatch` frame besides its `2 * n * 8` floats.
pub const DISPATCH_HEADER: usize = FRAME_OVERHEAD + 4 + 4;
/// Fixed bytes of a `ClientReply` frame besides its `2 * n * 8` floats.
pub const REPLY_HEADER: usize = FRAME_OVERHEAD + 4 + 4 + 8 + 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightUnit {
    #[default]
    Timesteps,
    Sequences,
}

/// One client's readout partial sums.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialSums {
    pub client_id: u32,
    pub acc: DesignAccumulator,
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)] // Init is sent once per session
pub enum RoundMessage {
    InitBroadcast { reservoir: ReservoirParams, ip: IPConfig, n_rounds: u32, weight_unit: WeightUnit },
    RoundDispatch { round: u32, state: IPState },
    ClientReply { round: u32, client_id: u32, state: IPState, n_c: u64 },
    SumsRequest { state: IPState, washout: u32, n_outputs: u32 },
    SumsReply(PartialSums),
    Complete,
    Join { client_id: u32 },
    ClientError { round: u32, client_id: u32, message: String },
}

impl RoundMessage {
    pub fn kind(&self) -> u8 {
        match self {
            RoundMessage::InitBroadcast { .. } => 1,
            RoundMessage::RoundDispatch { .. } => 2,
            RoundMessage::ClientReply { .. } => 3,
            RoundMessage::SumsRequest { .. } => 4,
            RoundMessage::SumsReply(_) => 5,
            RoundMessage::Complete => 6,
            RoundMessage::Join { .. } => 7,
            RoundMessage::ClientError { .. } => 8,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        kind_name(self.kind())
    }

    pub fn round(&self) -> Option<u32> {
        match self {
            RoundMessage::RoundDispatch { round, .. }
            | RoundMessage::ClientReply { round, .. }
            | RoundMessage::ClientError { round, .. } => Some(*round),
            _ => None,
        }
    }
}

pub fn kind_name(kind: u8) -> &'static str {
    match kind {
        1 => "InitBroadcast",
        2 => "RoundDispatch",
        3 => "ClientReply",
        4 => "SumsRequest",
        5 => "SumsReply",
        6 => "Complete",
        7 => "Join",
        8 => "ClientError",
        _ => "Unknown",
    }
}

fn write_state(w: &mut ByteWriter, s: &IPState) {
    w.len_u32(s.gain.len());
    w.vector_body(&s.gain);
    w.vector_body(&s.bias);
}

fn read_state(r: &mut ByteReader<'_>) -> Result<IPState> {
    let n = r.dim()?;
    let gain = r.vector_body(n)?;
    let bias = r.vector_body(n)?;
    Ok(IPState { gain, bias })
}

pub fn encode_partial_sums(w: &mut ByteWriter, p: &PartialSums) {
    let start = w.buf.len();
    w.u32(p.client_id);
    w.len_u32(p.acc.a_mat.nrows());
    w.len_u32(p.acc.a_mat.ncols());
    w.u64(p.acc.n_samples);
    w.matrix_body(&p.acc.a_mat);
    w.matrix_body(&p.acc.b_mat);
    let crc = crc32fast::hash(&w.buf[start..]);
    w.u32(crc);
}

pub fn decode_partial_sums(r: &mut ByteReader<'_>, body: &[u8]) -> Result<PartialSums> {
    let start = r.position();
    let client_id = r.u32()?;
    let rows = r.dim()?;
    let cols = r.dim()?;
    let n_samples = r.u64()?;
    let a_mat = r.matrix_body(rows, cols)?;
    let b_mat = r.matrix_body(cols, cols)?;
    let end = r.position();
    let crc = r.u32()?;
    if crc32fast::hash(&body[start..end]) != crc {
        return Err(Error::Wire("partial sums checksum mismatch".into()));
    }
    Ok(PartialSums { client_id, acc: DesignAccumulator { a_mat, b_mat, n_samples } })
}

/// Full frame bytes, length prefix included.
pub fn encode(msg: &RoundMessage) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.u32(0); // patched below
    w.u8(VERSION);
    w.u8(msg.kind());
    match msg {
        RoundMessage::InitBroadcast { reservoir, ip, n_rounds, weight_unit } => {
            w.u32(*n_rounds);
            w.u8(match weight_unit {
                WeightUnit::Timesteps => 0,
                WeightUnit::Sequences => 1,
            });
            w.f64(ip.mu);
            w.f64(ip.sigma);
            w.f64(ip.eta);
            w.len_u32(ip.epochs);
            w.len_u32(ip.batch_size);
            w.u8(match ip.rule_variant {
                RuleVariant::Ungrouped => 0,
                RuleVariant::CanonicalKL => 1,
            });
            w.u8(ip.shuffle_seed.is_some() as u8);
            w.u64(ip.shuffle_seed.unwrap_or(0));
            w.bytes(checkpoint::MAGIC);
            checkpoint::write_params(&mut w, reservoir);
        }
        RoundMessage::RoundDispatch { round, state } => {
            w.u32(*round);
            write_state(&mut w, state);
        }
        RoundMessage::ClientReply { round, client_id, state, n_c } => {
            w.u32(*round);
            w.u32(*client_id);
            w.u64(*n_c);
            write_state(&mut w, state);
        }
        RoundMessage::SumsRequest { state, washout, n_outputs } => {
            w.u32(*washout);
            w.u32(*n_outputs);
            write_state(&mut w, state);
        }
        RoundMessage::SumsReply(p) => encode_partial_sums(&mut w, p),
        RoundMessage::Complete => {}
        RoundMessage::Join { client_id } => w.u32(*client_id),
        RoundMessage::ClientError { round, client_id, message } => {
            w.u32(*round);
            w.u32(*client_id);
            w.len_u32(message.len());
            w.bytes(message.as_bytes());
        }
    }
    let len = u32::try_from(w.buf.len() - 4).expect("frame too large");
    w.buf[..4].copy_from_slice(&len.to_be_bytes());
    w.buf
}

/// Decodes a full frame (length prefix included).
pub fn decode(frame: &[u8]) -> Result<RoundMessage> {
    if frame.len() < FRAME_OVERHEAD {
        return Err(Error::Wire(format!("frame of {} bytes is shorter than its header", frame.len())));
    }
    let len = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
    if len != frame.len() - 4 {
        return Err(Error::Wire(format!("length prefix {len} but {} body bytes", frame.len() - 4)));
    }
    let body = &frame[4..];
    let mut r = ByteReader::new(body);
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Wire(format!("unsupported version {version}")));
    }
    let kind = r.u8()?;
    let msg = match kind {
        1 => {
            let n_rounds = r.u32()?;
            let weight_unit = match r.u8()? {
                0 => WeightUnit::Timesteps,
                1 => WeightUnit::Sequences,
                u => return Err(Error::Wire(format!("unknown weight unit {u}"))),
            };
            let mu = r.f64()?;
            let sigma = r.f64()?;
            let eta = r.f64()?;
            let epochs = r.dim()?;
            let batch_size = r.dim()?;
            let rule_variant = match r.u8()? {
                0 => RuleVariant::Ungrouped,
                1 => RuleVariant::CanonicalKL,
                v => return Err(Error::Wire(format!("unknown rule variant {v}"))),
            };
            let has_seed = r.u8()? != 0;
            let seed = r.u64()?;
            if r.take(checkpoint::MAGIC.len())? != checkpoint::MAGIC {
                return Err(Error::Wire("reservoir block lacks FRSV1 magic".into()));
            }
            let reservoir = checkpoint::read_params(&mut r)?;
            let ip = IPConfig { mu, sigma, eta, epochs, batch_size, rule_variant, shuffle_seed: has_seed.then_some(seed) };
            RoundMessage::InitBroadcast { reservoir, ip, n_rounds, weight_unit }
        }
        2 => {
            let round = r.u32()?;
            RoundMessage::RoundDispatch { round, state: read_state(&mut r)? }
        }
        3 => {
            let round = r.u32()?;
            let client_id = r.u32()?;
            let n_c = r.u64()?;
            RoundMessage::ClientReply { round, client_id, n_c, state: read_state(&mut r)? }
        }
        4 => {
            let washout = r.u32()?;
            let n_outputs = r.u32()?;
            RoundMessage::SumsRequest { washout, n_outputs, state: read_state(&mut r)? }
        }
        5 => RoundMessage::SumsReply(decode_partial_sums(&mut r, body)?),
        6 => RoundMessage::Complete,
        7 => RoundMessage::Join { client_id: r.u32()? },
        8 => {
            let round = r.u32()?;
            let client_id = r.u32()?;
            let n = r.dim()?;
            let message = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| Error::Wire(e.to_string()))?;
            RoundMessage::ClientError { round, client_id, message }
        }
        k => return Err(Error::Wire(format!("unknown message kind {k}"))),
    };
    r.finish()?;
    Ok(msg)
}

/// Exact size in bytes of the encoded frame, length prefix included.
pub fn payload_size(msg: &RoundMessage) -> usize {
    let state = |s: &IPState| 4 + 16 * s.len();
    FRAME_OVERHEAD
        + match msg {
            RoundMessage::InitBroadcast { reservoir, .. } => {
                let (n, m) = (reservoir.n_units(), reservoir.n_inputs());
                4 + 1 + 3 * 8 + 4 + 4 + 1 + 1 + 8 + checkpoint::MAGIC.len() + 8 + 6 * 8 + 8 * (n * m + n * n + 3 * n)
            }
            RoundMessage::RoundDispatch { state: s, .. } => 4 + state(s),
            RoundMessage::ClientReply { state: s, .. } => 4 + 4 + 8 + state(s),
            RoundMessage::SumsRequest { state: s, .. } => 4 + 4 + state(s),
            RoundMessage::SumsReply(p) => {
                let (rows, cols) = p.acc.a_mat.shape();
                4 + 4 + 4 + 8 + 8 * (rows * cols + cols * cols) + 4
            }
            RoundMessage::Complete => 0,
            RoundMessage::Join { .. } => 4,
            RoundMessage::ClientError { message, .. } => 12 + message.len(),
        }
}

/// Reads one frame from a stream, returning the full frame bytes.
/// `Ok(None)` on a clean end of stream before any byte of the frame.
pub fn read_frame(stream: &mut impl Read) -> Result<Option<Vec<u8>>> {
    let mut len_buf = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = stream.read(&mut len_buf[got..])?;
        if n == 0 {
            if got == 0 {
                return Ok(None);
            }
            return Err(Error::Wire("stream closed inside a length prefix".into()));
        }
        got += n;
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > MAX_FRAME {
        return Err(Error::Wire(format!("frame length {len} exceeds limit")));
    }
    let mut frame = vec![0u8; 4 + len];
    frame[..4].copy_from_slice(&len_buf);
    stream.read_exact(&mut frame[4..])?;
    Ok(Some(frame))
}

pub fn write_frame(stream: &mut impl Write, frame: &[u8]) -> Result<()> {
    stream.write_all(frame)?;
    stream.flush()?;
    Ok(())
}
