//! Little-endian datagram codec for poses, local maps and rewards, plus a
//! fire-and-forget UDP sender.

use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};

use crate::elevation::LocalMap;
use crate::error::{Error, Result};
use crate::geometry::Pose;

pub const TYPE_POSE: u8 = 1;
pub const TYPE_LOCAL_MAP: u8 = 2;
pub const TYPE_REWARD: u8 = 3;

pub const MAX_DATAGRAM: usize = 1400;
pub const CELLS_PER_FRAGMENT: usize = 320;
pub const POSE_LEN: usize = 1 + 8 + 3 * 8 + 4 * 8;
const MAP_HEADER_LEN: usize = 1 + 8 + 2 + 2 + 2 + 2 + 4;
const REWARD_HEADER_LEN: usize = 1 + 8 + 2;

#[derive(Debug, Clone, PartialEq)]
pub enum TelemetryMessage {
    Pose {
        timestamp_ns: u64,
        position: [f64; 3],
        /// `w, x, y, z`.
        orientation: [f64; 4],
    },
    LocalMap {
        timestamp_ns: u64,
        fragment_index: u16,
        fragment_count: u16,
        rows: u16,
        cols: u16,
        resolution: f32,
        cells: Vec<f32>,
    },
    Reward {
        timestamp_ns: u64,
        terms: Vec<f32>,
    },
}

impl TelemetryMessage {
    pub fn pose(pose: &Pose) -> Self {
        let q = pose.orientation;
        Self::Pose {
            timestamp_ns: pose.timestamp_ns,
            position: [pose.position.x, pose.position.y, pose.position.z],
            orientation: [q.w, q.x, q.y, q.z],
        }
    }

    pub fn reward(timestamp_ns: u64, terms: &[f64]) -> Result<Self> {
        if terms.len() > (MAX_DATAGRAM - REWARD_HEADER_LEN) / 4 {
            return Err(Error::InvalidArgument(format!("{} reward terms do not fit one datagram", terms.len())));
        }
        Ok(Self::Reward {
            timestamp_ns,
            terms: terms.iter().map(|&t| t as f32).collect(),
        })
    }

    pub fn timestamp_ns(&self) -> u64 {
        match self {
            Self::Pose { timestamp_ns, .. }
            | Self::LocalMap { timestamp_ns, .. }
            | Self::Reward { timestamp_ns, .. } => *timestamp_ns,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        match self {
            Self::Pose {
                timestamp_ns,
                position,
                orientation,
            } => {
                b.reserve(POSE_LEN);
                b.push(TYPE_POSE);
                b.extend_from_slice(&timestamp_ns.to_le_bytes());
                for v in position.iter().chain(orientation) {
                    b.extend_from_slice(&v.to_le_bytes());
                }
            }
            Self::LocalMap {
                timestamp_ns,
                fragment_index,
                fragment_count,
                rows,
                cols,
                resolution,
                cells,
            } => {
                b.reserve(MAP_HEADER_LEN + 4 * cells.len());
                b.push(TYPE_LOCAL_MAP);
                b.extend_from_slice(&timestamp_ns.to_le_bytes());
                for v in [fragment_index, fragment_count, rows, cols] {
                    b.extend_from_slice(&v.to_le_bytes());
                }
                b.extend_from_slice(&resolution.to_le_bytes());
                for c in cells {
                    b.extend_from_slice(&c.to_le_bytes());
                }
            }
            Self::Reward { timestamp_ns, terms } => {
                b.reserve(REWARD_HEADER_LEN + 4 * terms.len());
                b.push(TYPE_REWARD);
                b.extend_from_slice(&timestamp_ns.to_le_bytes());
                b.extend_from_slice(&(terms.len() as u16).to_le_bytes());
                for t in terms {
                    b.extend_from_slice(&t.to_le_bytes());
                }
            }
        }
        b
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let tag = r.u8()?;
        let timestamp_ns = r.u64()?;
        let msg = match tag {
            TYPE_POSE => {
                let position = [r.f64()?, r.f64()?, r.f64()?];
                let orientation = [r.f64()?, r.f64()?, r.f64()?, r.f64()?];
                Self::Pose {
                    timestamp_ns,
                    position,
                    orientation,
                }
            }
            TYPE_LOCAL_MAP => {
                let fragment_index = r.u16()?;
                let fragment_count = r.u16()?;
                let rows = r.u16()?;
                let cols = r.u16()?;
                let resolution = r.f32()?;
                let rest = r.remaining();
                if !rest.is_multiple_of(4) || rest / 4 > CELLS_PER_FRAGMENT {
                    return Err(Error::Format(format!("local map fragment carries {rest} payload bytes")));
                }
                if fragment_index >= fragment_count {
                    return Err(Error::Format(format!("fragment {fragment_index} of {fragment_count}")));
                }
                let cells = (0..rest / 4).map(|_| r.f32()).collect::<Result<_>>()?;
                Self::LocalMap {
                    timestamp_ns,
                    fragment_index,
                    fragment_count,
                    rows,
                    cols,
                    resolution,
                    cells,
                }
            }
            TYPE_REWARD => {
                let n = r.u16()? as usize;
                let terms = (0..n).map(|_| r.f32()).collect::<Result<_>>()?;
                Self::Reward { timestamp_ns, terms }
            }
            other => return Err(Error::Format(format!("unknown message type {other}"))),
        };
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(msg)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::Format("truncated message".into()))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length checked"))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

/// Splits a local map into fragments of at most `CELLS_PER_FRAGMENT` cells.
pub fn fragment_local_map(timestamp_ns: u64, map: &LocalMap) -> Result<Vec<TelemetryMessage>> {
    if map.rows > u16::MAX as usize || map.cols > u16::MAX as usize {
        return Err(Error::InvalidArgument("local map too large for telemetry".into()));
    }
    let chunks: Vec<&[f64]> = map.cells.chunks(CELLS_PER_FRAGMENT).collect();
    let count = chunks.len().max(1);
    if count > u16::MAX as usize {
        return Err(Error::InvalidArgument("local map needs too many fragments".into()));
    }
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let cells = chunks.get(k).map(|c| c.iter().map(|&v| v as f32).collect()).unwrap_or_default();
        out.push(TelemetryMessage::LocalMap {
            timestamp_ns,
            fragment_index: k as u16,
            fragment_count: count as u16,
            rows: map.rows as u16,
            cols: map.cols as u16,
            resolution: map.resolution as f32,
            cells,
        });
    }
    Ok(out)
}

/// Reassembles fragments of one local map, in any order.
pub fn reassemble_local_map(fragments: &[TelemetryMessage]) -> Result<LocalMap> {
    let mut parts: Vec<Option<&Vec<f32>>> = Vec::new();
    let mut shape = None;
    for f in fragments {
        let TelemetryMessage::LocalMap {
            timestamp_ns,
            fragment_index,
            fragment_count,
            rows,
            cols,
            resolution,
            cells,
        } = f
        else {
            return Err(Error::Format("not a local map fragment".into()));
        };
        let key = (*timestamp_ns, *fragment_count, *rows, *cols, resolution.to_bits());
        match shape {
            None => {
                shape = Some(key);
                parts = vec![None; *fragment_count as usize];
            }
            Some(s) if s != key => return Err(Error::Format("fragments from different maps".into())),
            _ => {}
        }
        let slot = parts
            .get_mut(*fragment_index as usize)
            .ok_or_else(|| Error::Format("fragment index out of range".into()))?;
        *slot = Some(cells);
    }
    let Some((_, _, rows, cols, res)) = shape else {
        return Err(Error::Format("no fragments".into()));
    };
    let mut cells = Vec::with_capacity(rows as usize * cols as usize);
    for p in &parts {
        let p = p.ok_or_else(|| Error::Format("missing fragment".into()))?;
        cells.extend(p.iter().map(|&c| c as f64));
    }
    if cells.len() != rows as usize * cols as usize {
        return Err(Error::Format("fragment cells do not fill the grid".into()));
    }
    Ok(LocalMap::new(rows as usize, cols as usize, f32::from_bits(res) as f64, cells))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamStats {
    pub sent: usize,
    pub dropped: usize,
}

/// Sends each datagram once. Failures are logged and counted, never retried.
#[derive(Debug)]
pub struct UdpSender {
    socket: UdpSocket,
    target: SocketAddr,
    pub stats: StreamStats,
}

impl UdpSender {
    pub fn connect(endpoint: &str) -> Result<Self> {
        let target = endpoint
            .to_socket_addrs()
            .map_err(|e| Error::Config(format!("bad endpoint {endpoint}: {e}")))?
            .next()
            .ok_or_else(|| Error::Config(format!("endpoint {endpoint} resolves to nothing")))?;
        let bind: SocketAddr = if target.is_ipv4() {
            "0.0.0.0:0".parse().expect("literal address")
        } else {
            "[::]:0".parse().expect("literal address")
        };
        let socket = UdpSocket::bind(bind)?;
        Ok(Self {
            socket,
            target,
            stats: StreamStats::default(),
        })
    }

    pub fn send(&mut self, msg: &TelemetryMessage) {
        let bytes = msg.encode();
        match self.socket.send_to(&bytes, self.target) {
            Ok(n) if n == bytes.len() => self.stats.sent += 1,
            Ok(n) => {
                log::warn!("short datagram to {}: {n} of {} bytes", self.target, bytes.len());
                self.stats.dropped += 1;
            }
            Err(e) => {
                log::warn!("datagram to {} dropped: {e}", self.target);
                self.stats.dropped += 1;
            }
        }
    }
}

/// Sends `messages` in timestamp order.
pub fn stream_telemetry(sender: &mut UdpSender, mut messages: Vec<TelemetryMessage>) -> StreamStats {
    messages.sort_by_key(|m| m.timestamp_ns());
    for m in &messages {
        sender.send(m);
    }
    sender.stats
}
