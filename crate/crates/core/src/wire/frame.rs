//! Binary frame layout.
//!
//! Every message on the wire is a length-prefixed frame:
//!
//! ```text
//! +----------------+-----------+----------+-------+-----------+
//! | total_len (4B) | stream_id | seq_no   | flags | payload   |
//! | big-endian     | (4B, BE)  | (8B, BE) | (1B)  | (variable)|
//! +----------------+-----------+----------+-------+-----------+
//! ```
//!
//! `total_len` covers everything after the length prefix, so it is always
//! `13 + payload.len()`. The layout is fixed; independent implementations
//! must produce byte-identical encodings.

use std::io::Read;

use super::WireError;

/// Fixed part of a frame after the length prefix: stream_id + seq_no + flags.
pub const FRAME_HEADER_LEN: usize = 13;

/// Length prefix size.
pub const LEN_PREFIX: usize = 4;

/// Largest payload a frame can carry.
pub const MAX_PAYLOAD: usize = (u32::MAX as usize) - FRAME_HEADER_LEN;

/// Frame flag bits. Any other bit on the wire is an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FrameFlags(u8);

impl FrameFlags {
    pub const END_OF_STREAM: FrameFlags = FrameFlags(0x01);
    pub const ENCRYPTED: FrameFlags = FrameFlags(0x02);

    const ALL: u8 = 0x03;

    pub fn empty() -> Self {
        FrameFlags(0)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    /// Rejects undefined bits.
    pub fn from_bits(bits: u8) -> Result<Self, WireError> {
        if bits & !Self::ALL != 0 {
            return Err(WireError::UnknownFlagBits(bits));
        }
        Ok(FrameFlags(bits))
    }

    pub fn contains(self, other: FrameFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn union(self, other: FrameFlags) -> Self {
        FrameFlags(self.0 | other.0)
    }
}

/// The unit of data exchanged between pipeline components.
///
/// `stream_id` identifies the logical input partition, `seq_no` is monotone
/// per stream on the originating producer. Intermediate workers re-emit the
/// identity of the frame they consumed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub stream_id: u32,
    pub seq_no: u64,
    pub flags: FrameFlags,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn data(stream_id: u32, seq_no: u64, payload: Vec<u8>) -> Self {
        Frame {
            stream_id,
            seq_no,
            flags: FrameFlags::empty(),
            payload,
        }
    }

    pub fn encrypted(stream_id: u32, seq_no: u64, payload: Vec<u8>) -> Self {
        Frame {
            stream_id,
            seq_no,
            flags: FrameFlags::ENCRYPTED,
            payload,
        }
    }

    /// End-of-stream marker. Always carries an empty payload.
    pub fn end_of_stream(stream_id: u32, seq_no: u64) -> Self {
        Frame {
            stream_id,
            seq_no,
            flags: FrameFlags::END_OF_STREAM,
            payload: Vec::new(),
        }
    }

    pub fn is_end_of_stream(&self) -> bool {
        self.flags.contains(FrameFlags::END_OF_STREAM)
    }

    pub fn is_encrypted(&self) -> bool {
        self.flags.contains(FrameFlags::ENCRYPTED)
    }

    /// Serializes the frame, length prefix included.
    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(WireError::PayloadTooLarge(self.payload.len()));
        }
        let total = (FRAME_HEADER_LEN + self.payload.len()) as u32;
        let mut out = Vec::with_capacity(LEN_PREFIX + total as usize);
        out.extend_from_slice(&total.to_be_bytes());
        out.extend_from_slice(&self.stream_id.to_be_bytes());
        out.extend_from_slice(&self.seq_no.to_be_bytes());
        out.push(self.flags.bits());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    /// Parses one frame from the start of `bytes`.
    ///
    /// Returns the frame and the number of bytes consumed
    /// (`total_len + 4`, exactly).
    pub fn decode(bytes: &[u8]) -> Result<(Frame, usize), WireError> {
        if bytes.len() < LEN_PREFIX {
            return Err(WireError::Truncated);
        }
        let total = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        if total < FRAME_HEADER_LEN {
            return Err(WireError::MalformedHeader(total as u32));
        }
        if bytes.len() < LEN_PREFIX + total {
            return Err(WireError::Truncated);
        }
        let body = &bytes[LEN_PREFIX..LEN_PREFIX + total];
        let frame = Self::decode_body(body)?;
        Ok((frame, LEN_PREFIX + total))
    }

    fn decode_body(body: &[u8]) -> Result<Frame, WireError> {
        debug_assert!(body.len() >= FRAME_HEADER_LEN);
        let stream_id = u32::from_be_bytes(body[0..4].try_into().unwrap());
        let seq_no = u64::from_be_bytes(body[4..12].try_into().unwrap());
        let flags = FrameFlags::from_bits(body[12])?;
        Ok(Frame {
            stream_id,
            seq_no,
            flags,
            payload: body[FRAME_HEADER_LEN..].to_vec(),
        })
    }

    /// Reads one frame from a byte stream.
    ///
    /// `Ok(None)` signals a clean EOF on a frame boundary; EOF inside a
    /// frame is `Truncated`.
    pub fn read_from(reader: &mut impl Read) -> Result<Option<Frame>, WireError> {
        let mut len_buf = [0u8; LEN_PREFIX];
        match read_exact_or_eof(reader, &mut len_buf)? {
            ReadOutcome::Eof => return Ok(None),
            ReadOutcome::Partial => return Err(WireError::Truncated),
            ReadOutcome::Full => {}
        }
        let total = u32::from_be_bytes(len_buf) as usize;
        if total < FRAME_HEADER_LEN {
            return Err(WireError::MalformedHeader(total as u32));
        }
        let mut body = vec![0u8; total];
        match read_exact_or_eof(reader, &mut body)? {
            ReadOutcome::Full => {}
            _ => return Err(WireError::Truncated),
        }
        Ok(Some(Self::decode_body(&body)?))
    }
}

enum ReadOutcome {
    Full,
    Partial,
    Eof,
}

fn read_exact_or_eof(reader: &mut impl Read, buf: &mut [u8]) -> Result<ReadOutcome, WireError> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => {
                return Ok(if filled == 0 {
                    ReadOutcome::Eof
                } else {
                    ReadOutcome::Partial
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(WireError::Io(e.to_string())),
        }
    }
    Ok(ReadOutcome::Full)
}
