//! Bit-exact E3 framing. Every frame is a 24-byte little-endian header
//! followed by `payload_len` payload bytes.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "E3P1" (45 33 50 31)
//!      4     1  msg_type
//!      5     1  flags
//!      6     2  stream_id
//!      8     4  seq
//!     12     8  timestamp_ns
//!     20     4  payload_len
//! ```

use num_complex::Complex32;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{DelayDopplerEstimate, RangeEstimate, RangeMethod};

pub const MAGIC: [u8; 4] = *b"E3P1";
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("payload of {len} bytes exceeds the 32-bit length field")]
    PayloadTooLarge { len: usize },
    #[error("field {field} does not fit its wire width")]
    FieldOverflow { field: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic at offset {offset}")]
    BadMagic { offset: usize },
    #[error("truncated at offset {offset}: expected {expected} bytes, have {actual}")]
    Truncated {
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("unknown message type {msg_type:#04x} at offset {offset}")]
    UnknownType { offset: usize, msg_type: u8 },
    #[error("length mismatch at offset {offset}: declared {declared}, actual {actual}")]
    LengthMismatch {
        offset: usize,
        declared: usize,
        actual: usize,
    },
    #[error("invalid value at offset {offset}: {reason}")]
    InvalidValue { offset: usize, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Iq,
    Cir,
    Kpm,
    Report,
}

impl StreamKind {
    fn code(self) -> u8 {
        match self {
            StreamKind::Iq => 0,
            StreamKind::Cir => 1,
            StreamKind::Kpm => 2,
            StreamKind::Report => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => StreamKind::Iq,
            1 => StreamKind::Cir,
            2 => StreamKind::Kpm,
            3 => StreamKind::Report,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Subscribe = 0x01,
    SubAck = 0x02,
    IqGrid = 0x03,
    CirFrame = 0x04,
    Report = 0x05,
    Kpm = 0x06,
    Unsubscribe = 0x07,
    Error = 0x08,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0x01 => MsgType::Subscribe,
            0x02 => MsgType::SubAck,
            0x03 => MsgType::IqGrid,
            0x04 => MsgType::CirFrame,
            0x05 => MsgType::Report,
            0x06 => MsgType::Kpm,
            0x07 => MsgType::Unsubscribe,
            0x08 => MsgType::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct E3Header {
    pub msg_type: u8,
    pub flags: u8,
    pub stream_id: u16,
    pub seq: u32,
    pub timestamp_ns: u64,
    pub payload_len: u32,
}

/// Quantized I/Q grid: `n * m` int16 pairs, subcarrier-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IqGrid {
    pub n: u16,
    pub m: u16,
    pub samples: Vec<(i16, i16)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CirFrame {
    pub snapshot_index: u16,
    pub values: Vec<Complex32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportPayload {
    DelayDoppler(DelayDopplerEstimate),
    Range(RangeEstimate),
    /// Per-band occupancy decision.
    BandOccupancy { occupied: Vec<bool> },
    /// Fused track from the network-level xApp.
    Track {
        track_id: u32,
        x: f64,
        y: f64,
        vx: f64,
        vy: f64,
        residual_m: f64,
    },
    /// The estimator failed on this input.
    Error { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub dapp_id: String,
    pub site_id: String,
    pub model_version: String,
    pub timestamp_ns: u64,
    pub confidence: f64,
    pub payload: ReportPayload,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Subscribe { kind: StreamKind, params: Vec<(String, f64)> },
    SubAck { stream_id: u16 },
    IqGrid(IqGrid),
    CirFrame(CirFrame),
    Report(DetectionReport),
    Kpm(Vec<(u16, f64)>),
    Unsubscribe,
    Error { code: u16, text: String },
}

impl Payload {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Payload::Subscribe { .. } => MsgType::Subscribe,
            Payload::SubAck { .. } => MsgType::SubAck,
            Payload::IqGrid(_) => MsgType::IqGrid,
            Payload::CirFrame(_) => MsgType::CirFrame,
            Payload::Report(_) => MsgType::Report,
            Payload::Kpm(_) => MsgType::Kpm,
            Payload::Unsubscribe => MsgType::Unsubscribe,
            Payload::Error { .. } => MsgType::Error,
        }
    }

    /// Exact encoded size of this payload.
    pub fn encoded_len(&self) -> usize {
        let mut w = Writer::default();
        // Encoding into a scratch buffer is the only way to size string fields exactly.
        let _ = write_payload(&mut w, self);
        w.buf.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct E3Message {
    pub header: E3Header,
    pub payload: Payload,
}

impl E3Message {
    /// Builds a message whose header type and length agree with the payload.
    pub fn new(stream_id: u16, seq: u32, timestamp_ns: u64, payload: Payload) -> Self {
        let payload_len = payload.encoded_len() as u32;
        Self {
            header: E3Header {
                msg_type: payload.msg_type() as u8,
                flags: 0,
                stream_id,
                seq,
                timestamp_ns,
                payload_len,
            },
            payload,
        }
    }

    pub fn with_flags(mut self, flags: u8) -> Self {
        self.header.flags = flags;
        self
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i16(&mut self, v: i16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len_u16(&mut self, len: usize, field: &'static str) -> Result<(), EncodeError> {
        let v = u16::try_from(len).map_err(|_| EncodeError::FieldOverflow { field })?;
        self.u16(v);
        Ok(())
    }
    fn str16(&mut self, s: &str, field: &'static str) -> Result<(), EncodeError> {
        self.len_u16(s.len(), field)?;
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }
}

fn method_code(m: RangeMethod) -> u8 {
    match m {
        RangeMethod::Peak => 0,
        RangeMethod::Subspace => 1,
    }
}

fn write_payload(w: &mut Writer, p: &Payload) -> Result<(), EncodeError> {
    match p {
        Payload::Subscribe { kind, params } => {
            w.u8(kind.code());
            w.len_u16(params.len(), "subscribe.params")?;
            for (k, v) in params {
                let len = u8::try_from(k.len()).map_err(|_| EncodeError::FieldOverflow {
                    field: "subscribe.param_key",
                })?;
                w.u8(len);
                w.buf.extend_from_slice(k.as_bytes());
                w.f64(*v);
            }
        }
        Payload::SubAck { stream_id } => w.u16(*stream_id),
        Payload::IqGrid(g) => {
            if g.samples.len() != g.n as usize * g.m as usize {
                return Err(EncodeError::FieldOverflow { field: "iq_grid.samples" });
            }
            w.u16(g.n);
            w.u16(g.m);
            w.buf.reserve(4 * g.samples.len());
            for &(i, q) in &g.samples {
                w.i16(i);
                w.i16(q);
            }
        }
        Payload::CirFrame(c) => {
            w.len_u16(c.values.len(), "cir_frame.values")?;
            w.u16(c.snapshot_index);
            w.buf.reserve(8 * c.values.len());
            for v in &c.values {
                w.f32(v.re);
                w.f32(v.im);
            }
        }
        Payload::Report(r) => write_report(w, r)?,
        Payload::Kpm(items) => {
            w.len_u16(items.len(), "kpm.items")?;
            for &(id, v) in items {
                w.u16(id);
                w.f64(v);
            }
        }
        Payload::Unsubscribe => {}
        Payload::Error { code, text } => {
            w.u16(*code);
            w.str16(text, "error.text")?;
        }
    }
    Ok(())
}

fn write_report(w: &mut Writer, r: &DetectionReport) -> Result<(), EncodeError> {
    w.str16(&r.dapp_id, "report.dapp_id")?;
    w.str16(&r.site_id, "report.site_id")?;
    w.str16(&r.model_version, "report.model_version")?;
    w.u64(r.timestamp_ns);
    w.f64(r.confidence);
    match &r.payload {
        ReportPayload::DelayDoppler(e) => {
            w.u8(0);
            for v in [e.delay_s, e.doppler_hz, e.range_m, e.velocity_mps, e.peak_power] {
                w.f64(v);
            }
        }
        ReportPayload::Range(e) => {
            w.u8(1);
            w.f64(e.delay_s);
            w.f64(e.range_m);
            w.u8(method_code(e.method));
            let used = u32::try_from(e.snapshots_used).map_err(|_| EncodeError::FieldOverflow {
                field: "report.snapshots_used",
            })?;
            w.u32(used);
        }
        ReportPayload::BandOccupancy { occupied } => {
            w.u8(2);
            w.len_u16(occupied.len(), "report.bands")?;
            w.buf.extend(occupied.iter().map(|&b| b as u8));
        }
        ReportPayload::Track {
            track_id,
            x,
            y,
            vx,
            vy,
            residual_m,
        } => {
            w.u8(3);
            w.u32(*track_id);
            for v in [*x, *y, *vx, *vy, *residual_m] {
                w.f64(v);
            }
        }
        ReportPayload::Error { reason } => {
            w.u8(4);
            w.str16(reason, "report.reason")?;
        }
    }
    Ok(())
}

/// Serializes header and payload; header type and length are derived from the payload.
pub fn encode(msg: &E3Message) -> Result<Vec<u8>, EncodeError> {
    let mut body = Writer::default();
    write_payload(&mut body, &msg.payload)?;
    let len = body.buf.len();
    let payload_len = u32::try_from(len).map_err(|_| EncodeError::PayloadTooLarge { len })?;
    let mut w = Writer {
        buf: Vec::with_capacity(HEADER_LEN + len),
    };
    w.buf.extend_from_slice(&MAGIC);
    w.u8(msg.payload.msg_type() as u8);
    w.u8(msg.header.flags);
    w.u16(msg.header.stream_id);
    w.u32(msg.header.seq);
    w.u64(msg.header.timestamp_ns);
    w.u32(payload_len);
    w.buf.extend_from_slice(&body.buf);
    Ok(w.buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() - self.pos < n {
            return Err(DecodeError::Truncated {
                offset: self.pos,
                expected: n,
                actual: self.buf.len() - self.pos,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i16(&mut self) -> Result<i16, DecodeError> {
        Ok(i16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, DecodeError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self, len: usize) -> Result<String, DecodeError> {
        let at = self.pos;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| DecodeError::InvalidValue {
            offset: at,
            reason: "string is not UTF-8",
        })
    }
    fn str16(&mut self) -> Result<String, DecodeError> {
        let len = self.u16()? as usize;
        self.string(len)
    }
}

/// Parses one complete frame. Trailing bytes after the declared payload are
/// reported as a length mismatch.
pub fn decode(bytes: &[u8]) -> Result<E3Message, DecodeError> {
    if bytes.len() < HEADER_LEN {
        // Check whatever magic bytes are present before reporting truncation.
        for (i, (&b, &m)) in bytes.iter().zip(MAGIC.iter()).enumerate() {
            if b != m {
                return Err(DecodeError::BadMagic { offset: i });
            }
        }
        return Err(DecodeError::Truncated {
            offset: 0,
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if let Some(i) = (0..4).find(|&i| bytes[i] != MAGIC[i]) {
        return Err(DecodeError::BadMagic { offset: i });
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let msg_type = r.u8()?;
    let kind = MsgType::from_u8(msg_type).ok_or(DecodeError::UnknownType { offset: 4, msg_type })?;
    let flags = r.u8()?;
    let stream_id = r.u16()?;
    let seq = r.u32()?;
    let timestamp_ns = r.u64()?;
    let payload_len = r.u32()?;
    let available = bytes.len() - HEADER_LEN;
    if available < payload_len as usize {
        return Err(DecodeError::Truncated {
            offset: HEADER_LEN,
            expected: payload_len as usize,
            actual: available,
        });
    }
    if available > payload_len as usize {
        return Err(DecodeError::LengthMismatch {
            offset: HEADER_LEN + payload_len as usize,
            declared: payload_len as usize,
            actual: available,
        });
    }
    let body = &bytes[HEADER_LEN..];
    let mut pr = Reader { buf: body, pos: 0 };
    let payload = read_payload(&mut pr, kind).map_err(|e| shift(e, HEADER_LEN, payload_len as usize))?;
    if pr.pos != body.len() {
        return Err(DecodeError::LengthMismatch {
            offset: HEADER_LEN + pr.pos,
            declared: payload_len as usize,
            actual: pr.pos,
        });
    }
    Ok(E3Message {
        header: E3Header {
            msg_type,
            flags,
            stream_id,
            seq,
            timestamp_ns,
            payload_len,
        },
        payload,
    })
}

/// Payload-relative offsets become frame offsets. Running out of payload
/// bytes while the frame itself is complete means the declared length does
/// not match the content.
fn shift(e: DecodeError, base: usize, declared: usize) -> DecodeError {
    match e {
        DecodeError::Truncated { offset, .. } => DecodeError::LengthMismatch {
            offset: base + offset,
            declared,
            actual: offset,
        },
        DecodeError::InvalidValue { offset, reason } => DecodeError::InvalidValue {
            offset: base + offset,
            reason,
        },
        DecodeError::LengthMismatch {
            offset,
            declared,
            actual,
        } => DecodeError::LengthMismatch {
            offset: base + offset,
            declared,
            actual,
        },
        other => other,
    }
}

fn read_payload(r: &mut Reader<'_>, kind: MsgType) -> Result<Payload, DecodeError> {
    Ok(match kind {
        MsgType::Subscribe => {
            let at = r.pos;
            let kind = StreamKind::from_code(r.u8()?).ok_or(DecodeError::InvalidValue {
                offset: at,
                reason: "unknown stream kind",
            })?;
            let count = r.u16()? as usize;
            let mut params = Vec::with_capacity(count.min(256));
            for _ in 0..count {
                let len = r.u8()? as usize;
                let key = r.string(len)?;
                params.push((key, r.f64()?));
            }
            Payload::Subscribe { kind, params }
        }
        MsgType::SubAck => Payload::SubAck { stream_id: r.u16()? },
        MsgType::IqGrid => {
            let n = r.u16()?;
            let m = r.u16()?;
            let count = n as usize * m as usize;
            let need = 4 * count;
            if r.buf.len() - r.pos != need {
                return Err(DecodeError::LengthMismatch {
                    offset: r.pos,
                    declared: need,
                    actual: r.buf.len() - r.pos,
                });
            }
            let mut samples = Vec::with_capacity(count);
            for _ in 0..count {
                samples.push((r.i16()?, r.i16()?));
            }
            Payload::IqGrid(IqGrid { n, m, samples })
        }
        MsgType::CirFrame => {
            let k = r.u16()? as usize;
            let snapshot_index = r.u16()?;
            let need = 8 * k;
            if r.buf.len() - r.pos != need {
                return Err(DecodeError::LengthMismatch {
                    offset: r.pos,
                    declared: need,
                    actual: r.buf.len() - r.pos,
                });
            }
            let mut values = Vec::with_capacity(k);
            for _ in 0..k {
                values.push(Complex32::new(r.f32()?, r.f32()?));
            }
            Payload::CirFrame(CirFrame { snapshot_index, values })
        }
        MsgType::Report => Payload::Report(read_report(r)?),
        MsgType::Kpm => {
            let count = r.u16()? as usize;
            let mut items = Vec::with_capacity(count);
            for _ in 0..count {
                items.push((r.u16()?, r.f64()?));
            }
            Payload::Kpm(items)
        }
        MsgType::Unsubscribe => Payload::Unsubscribe,
        MsgType::Error => {
            let code = r.u16()?;
            Payload::Error { code, text: r.str16()? }
        }
    })
}

fn read_report(r: &mut Reader<'_>) -> Result<DetectionReport, DecodeError> {
    let dapp_id = r.str16()?;
    let site_id = r.str16()?;
    let model_version = r.str16()?;
    let timestamp_ns = r.u64()?;
    let confidence = r.f64()?;
    let at = r.pos;
    let payload = match r.u8()? {
        0 => {
            let mut v = [0.0; 5];
            for x in v.iter_mut() {
                *x = r.f64()?;
            }
            ReportPayload::DelayDoppler(DelayDopplerEstimate {
                delay_s: v[0],
                doppler_hz: v[1],
                range_m: v[2],
                velocity_mps: v[3],
                peak_power: v[4],
            })
        }
        1 => {
            let delay_s = r.f64()?;
            let range_m = r.f64()?;
            let m_at = r.pos;
            let method = match r.u8()? {
                0 => RangeMethod::Peak,
                1 => RangeMethod::Subspace,
                _ => {
                    return Err(DecodeError::InvalidValue {
                        offset: m_at,
                        reason: "unknown range method",
                    })
                }
            };
            let snapshots_used = r.u32()? as usize;
            ReportPayload::Range(RangeEstimate {
                delay_s,
                range_m,
                method,
                snapshots_used,
            })
        }
        2 => {
            let n = r.u16()? as usize;
            let bytes = r.take(n)?;
            ReportPayload::BandOccupancy {
                occupied: bytes.iter().map(|&b| b != 0).collect(),
            }
        }
        3 => {
            let track_id = r.u32()?;
            let mut v = [0.0; 5];
            for x in v.iter_mut() {
                *x = r.f64()?;
            }
            ReportPayload::Track {
                track_id,
                x: v[0],
                y: v[1],
                vx: v[2],
                vy: v[3],
                residual_m: v[4],
            }
        }
        4 => ReportPayload::Error { reason: r.str16()? },
        _ => {
            return Err(DecodeError::InvalidValue {
                offset: at,
                reason: "unknown report payload",
            })
        }
    };
    Ok(DetectionReport {
        dapp_id,
        site_id,
        model_version,
        timestamp_ns,
        confidence,
        payload,
    })
}

/// Total frame length announced by a header prefix, if enough bytes are present.
pub fn frame_len(prefix: &[u8]) -> Option<usize> {
    if prefix.len() < HEADER_LEN {
        return None;
    }
    let len = u32::from_le_bytes(prefix[20..24].try_into().unwrap()) as usize;
    Some(HEADER_LEN + len)
}
