//! E3 user-plane streaming between the simulated DU and co-located dApps.
//!
//! [`wire`] is the bit-exact framing. [`DuHub`] is the in-process endpoint:
//! dApps subscribe to a stream kind, the DU publishes frames and every
//! subscriber gets its own stream id, gap-free sequence numbers and a bounded
//! drop-oldest queue. [`transport`] carries the same frames over any byte
//! stream, such as a loopback socket.

pub mod transport;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use wire::{
    decode, encode, CirFrame, DecodeError, DetectionReport, E3Header, E3Message, EncodeError, IqGrid, MsgType,
    Payload, ReportPayload, StreamKind, HEADER_LEN,
};

use crate::waveform::{CirSnapshot, OfdmConfig, ResourceGrid, WaveformError};

/// Default per-subscriber queue depth in frames.
pub const DEFAULT_QUEUE_CAPACITY: usize = 256;

/// Default int16 quantization scale: one unit of linear amplitude maps to
/// this many counts.
pub const DEFAULT_IQ_SCALE: f64 = 1024.0;

#[derive(Debug, Error)]
pub enum E3Error {
    #[error("subscription rejected: {0}")]
    Rejected(String),
    #[error("unknown stream {0}")]
    UnknownStream(u16),
    #[error("no free stream ids")]
    StreamIdsExhausted,
    #[error("frame kind {got:?} published on a {expected:?} stream")]
    KindMismatch { expected: StreamKind, got: MsgType },
    #[error("grid of {n}x{m} does not fit the 16-bit dimension fields")]
    GridTooLarge { n: usize, m: usize },
    #[error("invalid quantization scale {0}")]
    InvalidScale(f64),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
}

impl IqGrid {
    /// Rounds `scale * sample` to int16 with saturation.
    pub fn quantize(grid: &ResourceGrid, scale: f64) -> Result<Self, E3Error> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(E3Error::InvalidScale(scale));
        }
        let (n, m) = grid.shape();
        let (Ok(n16), Ok(m16)) = (u16::try_from(n), u16::try_from(m)) else {
            return Err(E3Error::GridTooLarge { n, m });
        };
        let q = |v: f64| (v * scale).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        Ok(Self {
            n: n16,
            m: m16,
            samples: grid.samples.iter().map(|s| (q(s.re), q(s.im))).collect(),
        })
    }

    pub fn dequantize(&self, config: OfdmConfig, scale: f64, noise_variance: f64) -> Result<ResourceGrid, E3Error> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(E3Error::InvalidScale(scale));
        }
        let samples = self
            .samples
            .iter()
            .map(|&(i, q)| Complex64::new(i as f64 / scale, q as f64 / scale))
            .collect();
        Ok(ResourceGrid::from_samples(config, samples, noise_variance)?)
    }
}

impl CirFrame {
    pub fn from_snapshot(s: &CirSnapshot) -> Self {
        Self {
            snapshot_index: (s.snapshot_index & 0xFFFF) as u16,
            values: s
                .freq_response
                .iter()
                .map(|h| Complex32::new(h.re as f32, h.im as f32))
                .collect(),
        }
    }

    pub fn to_snapshot(&self, subcarrier_spacing_hz: f64, noise_variance: f64) -> Result<CirSnapshot, WaveformError> {
        CirSnapshot::new(
            self.values
                .iter()
                .map(|v| Complex64::new(v.re as f64, v.im as f64))
                .collect(),
            self.snapshot_index as usize,
            noise_variance,
            subcarrier_spacing_hz,
        )
    }
}

/// Running byte and frame counts for one stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamCounter {
    pub frames_sent: u64,
    pub payload_bytes: u64,
    pub header_bytes: u64,
    pub dropped_frames: u64,
}

impl StreamCounter {
    pub fn record(&mut self, payload_len: usize) {
        self.frames_sent += 1;
        self.payload_bytes += payload_len as u64;
        self.header_bytes += HEADER_LEN as u64;
    }

    pub fn bytes_sent(&self) -> u64 {
        self.payload_bytes + self.header_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamStats {
    pub bytes_sent: u64,
    pub frames_sent: u64,
    pub dropped_frames: u64,
    pub window_s: f64,
    pub payload_rate_mbps: f64,
    pub header_overhead_fraction: f64,
}

/// Payload-only throughput over a window. A non-positive window or an empty
/// counter gives a zero rate.
pub fn measure_rate(counter: &StreamCounter, window_s: f64) -> StreamStats {
    let bytes = counter.bytes_sent();
    let rate = if window_s > 0.0 && window_s.is_finite() {
        counter.payload_bytes as f64 * 8.0 / window_s / 1e6
    } else {
        0.0
    };
    StreamStats {
        bytes_sent: bytes,
        frames_sent: counter.frames_sent,
        dropped_frames: counter.dropped_frames,
        window_s,
        payload_rate_mbps: rate,
        header_overhead_fraction: if bytes == 0 {
            0.0
        } else {
            counter.header_bytes as f64 / bytes as f64
        },
    }
}

#[derive(Debug)]
struct QueueState {
    frames: VecDeque<Arc<Vec<u8>>>,
    capacity: usize,
    delivered: u64,
    dropped: u64,
    closed: bool,
}

#[derive(Debug)]
struct SubscriberQueue {
    state: Mutex<QueueState>,
    ready: Condvar,
}

impl SubscriberQueue {
    fn push(&self, frame: Arc<Vec<u8>>) -> bool {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let mut evicted = false;
        if st.frames.len() == st.capacity {
            st.frames.pop_front();
            st.dropped += 1;
            evicted = true;
        }
        st.frames.push_back(frame);
        st.delivered += 1;
        drop(st);
        self.ready.notify_one();
        evicted
    }
}

/// Receiving end of one stream. Can be moved to another thread.
#[derive(Debug)]
pub struct Subscription {
    stream_id: u16,
    kind: StreamKind,
    queue: Arc<SubscriberQueue>,
}

impl Subscription {
    pub fn stream_id(&self) -> u16 {
        self.stream_id
    }

    pub fn kind(&self) -> StreamKind {
        self.kind
    }

    /// Next queued frame, decoded.
    pub fn try_recv(&self) -> Option<Result<E3Message, DecodeError>> {
        self.try_recv_bytes().map(|b| decode(&b))
    }

    /// Next queued frame as raw wire bytes.
    pub fn try_recv_bytes(&self) -> Option<Arc<Vec<u8>>> {
        self.queue
            .state
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .frames
            .pop_front()
    }

    /// Blocks until a frame arrives, the stream closes or the timeout elapses.
    pub fn recv_timeout(&self, timeout: Duration) -> Option<Result<E3Message, DecodeError>> {
        let st = self.queue.state.lock().unwrap_or_else(|e| e.into_inner());
        let (mut st, _) = self
            .queue
            .ready
            .wait_timeout_while(st, timeout, |s| s.frames.is_empty() && !s.closed)
            .unwrap_or_else(|e| e.into_inner());
        st.frames.pop_front().map(|b| decode(&b))
    }

    pub fn drain(&self) -> Vec<Result<E3Message, DecodeError>> {
        let frames: Vec<_> = self
            .queue
            .state
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .frames
            .drain(..)
            .collect();
        frames.iter().map(|b| decode(b)).collect()
    }

    pub fn pending(&self) -> usize {
        self.queue.state.lock().unwrap_or_else(|e| e.into_inner()).frames.len()
    }

    /// Frames ever enqueued for this subscriber, including later evictions.
    pub fn delivered(&self) -> u64 {
        self.queue.state.lock().unwrap_or_else(|e| e.into_inner()).delivered
    }

    pub fn dropped(&self) -> u64 {
        self.queue.state.lock().unwrap_or_else(|e| e.into_inner()).dropped
    }

    pub fn is_closed(&self) -> bool {
        self.queue.state.lock().unwrap_or_else(|e| e.into_inner()).closed
    }
}

#[derive(Debug)]
struct Outbound {
    kind: StreamKind,
    seq: u32,
    counter: StreamCounter,
    queue: Arc<SubscriberQueue>,
}

/// In-process DU endpoint. One producer per stream kind; any number of
/// subscribers per kind.
#[derive(Debug)]
pub struct DuHub {
    supported: BTreeSet<StreamKind>,
    streams: BTreeMap<u16, Outbound>,
    next_stream_id: u16,
    queue_capacity: usize,
    iq_scale: f64,
}

impl DuHub {
    pub fn new(supported: impl IntoIterator<Item = StreamKind>) -> Self {
        Self {
            supported: supported.into_iter().collect(),
            streams: BTreeMap::new(),
            next_stream_id: 1,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            iq_scale: DEFAULT_IQ_SCALE,
        }
    }

    pub fn with_queue_capacity(mut self, capacity: usize) -> Self {
        self.queue_capacity = capacity.max(1);
        self
    }

    pub fn with_iq_scale(mut self, scale: f64) -> Self {
        self.iq_scale = scale;
        self
    }

    pub fn iq_scale(&self) -> f64 {
        self.iq_scale
    }

    pub fn supports(&self, kind: StreamKind) -> bool {
        self.supported.contains(&kind)
    }

    /// Runs the Subscribe / SubAck exchange through the wire codec and opens
    /// a fresh stream.
    pub fn subscribe(&mut self, kind: StreamKind, params: Vec<(String, f64)>) -> Result<Subscription, E3Error> {
        let request = decode(&encode(&E3Message::new(0, 0, 0, Payload::Subscribe { kind, params }))?)?;
        let Payload::Subscribe { kind, .. } = request.payload else {
            unreachable!("decoded a different payload than encoded");
        };
        if !self.supported.contains(&kind) {
            return Err(E3Error::Rejected(format!("stream kind {kind:?} not offered by this DU")));
        }
        let stream_id = self.allocate_stream_id()?;
        let ack = decode(&encode(&E3Message::new(stream_id, 0, 0, Payload::SubAck { stream_id }))?)?;
        let Payload::SubAck { stream_id } = ack.payload else {
            unreachable!("decoded a different payload than encoded");
        };
        let queue = Arc::new(SubscriberQueue {
            state: Mutex::new(QueueState {
                frames: VecDeque::new(),
                capacity: self.queue_capacity,
                delivered: 0,
                dropped: 0,
                closed: false,
            }),
            ready: Condvar::new(),
        });
        self.streams.insert(
            stream_id,
            Outbound {
                kind,
                seq: 0,
                counter: StreamCounter::default(),
                queue: queue.clone(),
            },
        );
        Ok(Subscription { stream_id, kind, queue })
    }

    fn allocate_stream_id(&mut self) -> Result<u16, E3Error> {
        for _ in 0..u16::MAX {
            let id = self.next_stream_id;
            self.next_stream_id = self.next_stream_id.checked_add(1).unwrap_or(1);
            if id != 0 && !self.streams.contains_key(&id) {
                return Ok(id);
            }
        }
        Err(E3Error::StreamIdsExhausted)
    }

    /// Closes a stream. Frames already queued stay readable.
    pub fn unsubscribe(&mut self, stream_id: u16) -> Result<(), E3Error> {
        let out = self.streams.remove(&stream_id).ok_or(E3Error::UnknownStream(stream_id))?;
        out.queue.state.lock().unwrap_or_else(|e| e.into_inner()).closed = true;
        out.queue.ready.notify_all();
        Ok(())
    }

    /// Sends one payload to every subscriber of `kind`. Each subscriber gets
    /// the next sequence number of its own stream. Returns the number of
    /// frames sent.
    pub fn publish(&mut self, kind: StreamKind, timestamp_ns: u64, payload: &Payload) -> Result<usize, E3Error> {
        let expected = match kind {
            StreamKind::Iq => MsgType::IqGrid,
            StreamKind::Cir => MsgType::CirFrame,
            StreamKind::Kpm => MsgType::Kpm,
            StreamKind::Report => MsgType::Report,
        };
        if payload.msg_type() != expected {
            return Err(E3Error::KindMismatch {
                expected: kind,
                got: payload.msg_type(),
            });
        }
        self.streams.retain(|_, o| Arc::strong_count(&o.queue) > 1);
        // Encode once and patch the per-stream header fields.
        let template = encode(&E3Message::new(0, 0, timestamp_ns, payload.clone()))?;
        let payload_len = template.len() - HEADER_LEN;
        let mut sent = 0;
        for (&stream_id, out) in self.streams.iter_mut().filter(|(_, o)| o.kind == kind) {
            let mut frame = template.clone();
            frame[6..8].copy_from_slice(&stream_id.to_le_bytes());
            frame[8..12].copy_from_slice(&out.seq.to_le_bytes());
            out.seq = out.seq.wrapping_add(1);
            out.counter.record(payload_len);
            if out.queue.push(Arc::new(frame)) {
                out.counter.dropped_frames += 1;
            }
            sent += 1;
        }
        Ok(sent)
    }

    pub fn counter(&self, stream_id: u16) -> Option<StreamCounter> {
        self.streams.get(&stream_id).map(|o| o.counter)
    }

    /// Open streams as (stream id, kind, counter), ordered by stream id.
    pub fn streams(&self) -> Vec<(u16, StreamKind, StreamCounter)> {
        self.streams.iter().map(|(&id, o)| (id, o.kind, o.counter)).collect()
    }

    pub fn subscriber_count(&self, kind: StreamKind) -> usize {
        self.streams
            .values()
            .filter(|o| o.kind == kind && Arc::strong_count(&o.queue) > 1)
            .count()
    }
}
