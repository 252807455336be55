//! `.4dgc` container: a sequence of frame records, each a small header
//! followed by typed blocks. All integers are little-endian.
//!
//! ```text
//! frame  := "4DGC" version:u8 frame_type:u8 frame_index:u32 block_count:u8 block*
//! coded  := id:u8 q:f32 offset:i32 table payload_len:u32 payload
//! raw    := id:u8 payload_len:u32 f32*
//! table  := min_symbol:i32 span:u16 (frequency-1):u16*
//! ```

use std::io::{Read, Write};

use crate::entropy::{SymbolTable, TensorHeader};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"4DGC";
pub const VERSION: u8 = 1;

/// Block identifiers.
pub mod block_id {
    /// Raw: sh degree, level count, resolutions, channels, hidden width.
    pub const CONFIG: u8 = 0x01;
    /// Raw: 11 geometry scalars per keyframe primitive.
    pub const ATTRIBUTES: u8 = 0x02;
    /// Coded: keyframe SH coefficients.
    pub const SH: u8 = 0x03;
    /// Raw: motion MLP weights.
    pub const MLP: u8 = 0x04;
    /// Coded: motion grid values, all levels.
    pub const GRID: u8 = 0x10;
    /// Raw: 11 geometry scalars per compensated primitive.
    pub const DELTA_ATTRIBUTES: u8 = 0x11;
    /// Coded: SH coefficients of the compensated primitives.
    pub const DELTA_SH: u8 = 0x12;
    /// Raw, empty: this frame adds no compensated primitives.
    pub const NO_COMPENSATION: u8 = 0x13;

    pub fn is_coded(id: u8) -> bool {
        matches!(id, SH | GRID | DELTA_SH)
    }

    pub fn allowed(frame_type: super::FrameType, id: u8) -> bool {
        match frame_type {
            super::FrameType::Key => matches!(id, CONFIG | ATTRIBUTES | SH | MLP),
            super::FrameType::Inter => matches!(id, GRID | DELTA_ATTRIBUTES | DELTA_SH | NO_COMPENSATION),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameType {
    Key = 0,
    Inter = 1,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Coded { id: u8, q: f32, offset: i32, table: SymbolTable, payload: Vec<u8> },
    Raw { id: u8, data: Vec<f32> },
}

impl Block {
    pub fn id(&self) -> u8 {
        match self {
            Block::Coded { id, .. } | Block::Raw { id, .. } => *id,
        }
    }

    pub fn coded(id: u8, enc: &crate::entropy::EncodedTensor) -> Self {
        Block::Coded {
            id,
            q: enc.header.q,
            offset: enc.header.offset,
            table: enc.table.clone(),
            payload: enc.payload.clone(),
        }
    }

    pub fn raw(id: u8, values: impl IntoIterator<Item = f64>) -> Self {
        Block::Raw { id, data: values.into_iter().map(|v| v as f32).collect() }
    }

    /// Decoder header for a coded block holding `count` symbols.
    pub fn tensor_header(&self, count: usize) -> Option<TensorHeader> {
        match self {
            Block::Coded { q, offset, .. } => Some(TensorHeader { q: *q, offset: *offset, count }),
            Block::Raw { .. } => None,
        }
    }

    fn write_to(&self, out: &mut Vec<u8>) {
        match self {
            Block::Coded { id, q, offset, table, payload } => {
                out.push(*id);
                out.extend_from_slice(&q.to_le_bytes());
                out.extend_from_slice(&offset.to_le_bytes());
                table.write_to(out);
                out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
                out.extend_from_slice(payload);
            }
            Block::Raw { id, data } => {
                out.push(*id);
                out.extend_from_slice(&((data.len() * 4) as u32).to_le_bytes());
                for v in data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
}

/// One serialized keyframe or inter-frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBitstream {
    pub frame_type: FrameType,
    pub frame_index: u32,
    pub blocks: Vec<Block>,
}

impl FrameBitstream {
    pub fn new(frame_type: FrameType, frame_index: u32) -> Self {
        FrameBitstream { frame_type, frame_index, blocks: Vec::new() }
    }

    pub fn block(&self, id: u8) -> Option<&Block> {
        self.blocks.iter().find(|b| b.id() == id)
    }

    pub fn block_mut(&mut self, id: u8) -> Option<&mut Block> {
        self.blocks.iter_mut().find(|b| b.id() == id)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.frame_type as u8);
        out.extend_from_slice(&self.frame_index.to_le_bytes());
        out.push(self.blocks.len() as u8);
        for b in &self.blocks {
            b.write_to(&mut out);
        }
        out
    }

    pub fn byte_len(&self) -> usize {
        self.to_bytes().len()
    }

    /// Parses one record from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn parse(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.bytes_n(4, "magic")? != MAGIC {
            return Err(Error::format("bad magic, not a 4DGC frame"));
        }
        let version = cur.u8("version")?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported version {version}")));
        }
        let frame_type = match cur.u8("frame type")? {
            0 => FrameType::Key,
            1 => FrameType::Inter,
            t => return Err(Error::format(format!("unknown frame type {t}"))),
        };
        let frame_index = cur.u32("frame index")?;
        let count = cur.u8("block count")?;
        let mut blocks = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let id = cur.u8("block id")?;
            if !block_id::allowed(frame_type, id) {
                return Err(Error::format(format!("block id {id:#04x} not valid in a {frame_type:?} frame")));
            }
            if blocks.iter().any(|b: &Block| b.id() == id) {
                return Err(Error::format(format!("duplicate block {id:#04x}")));
            }
            if block_id::is_coded(id) {
                let q = f32::from_le_bytes(cur.array("quantization step")?);
                let offset = i32::from_le_bytes(cur.array("offset")?);
                let table = SymbolTable::read_from(&mut cur)?;
                let len = cur.u32("payload length")? as usize;
                let payload = cur.bytes_n(len, "coded payload")?.to_vec();
                blocks.push(Block::Coded { id, q, offset, table, payload });
            } else {
                let len = cur.u32("payload length")? as usize;
                if !len.is_multiple_of(4) {
                    return Err(Error::format(format!("raw block of {len} bytes is not whole f32s")));
                }
                let data = cur
                    .bytes_n(len, "raw payload")?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                blocks.push(Block::Raw { id, data });
            }
        }
        Ok((FrameBitstream { frame_type, frame_index, blocks }, cur.pos))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn bytes_n(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Truncated(what.into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.bytes_n(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes_n(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
}

impl Read for Cursor<'_> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = buf.len().min(self.bytes.len() - self.pos);
        buf[..n].copy_from_slice(&self.bytes[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

/// Writes frames back to back and returns the byte count of each.
pub fn write_stream<W: Write>(frames: &[FrameBitstream], mut sink: W) -> Result<Vec<usize>> {
    if frames.first().is_some_and(|f| f.frame_type != FrameType::Key) {
        return Err(Error::invalid("a stream must start with a keyframe"));
    }
    let mut sizes = Vec::with_capacity(frames.len());
    for f in frames {
        let bytes = f.to_bytes();
        sink.write_all(&bytes)?;
        sizes.push(bytes.len());
    }
    sink.flush()?;
    Ok(sizes)
}

pub fn parse_stream(bytes: &[u8]) -> Result<Vec<FrameBitstream>> {
    let mut frames = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let (f, used) = FrameBitstream::parse(&bytes[pos..])?;
        if frames.is_empty() && f.frame_type != FrameType::Key {
            return Err(Error::format("stream does not start with a keyframe"));
        }
        frames.push(f);
        pos += used;
    }
    Ok(frames)
}

pub fn read_stream<R: Read>(mut source: R) -> Result<Vec<FrameBitstream>> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse_stream(&bytes)
}
