//! Frame layout: `[u32 LE length of tag+payload][u8 tag][payload]`, payload
//! fields in declaration order, little-endian, IEEE-754 doubles. Counts are
//! `u32`; the error detail is a `u32` byte length followed by UTF-8.

use std::io::{self, Read, Write};

use super::{tags, Message};
use crate::{Error, Result};

/// Largest accepted `length` field (tag + payload).
pub const MAX_FRAME_LEN: usize = 256 << 20;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn count(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("message count exceeds u32"));
    }
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut w = Writer(vec![0; 4]);
    w.u8(msg.tag());
    match msg {
        Message::PushRequest {
            worker,
            iteration,
            pairs,
        } => {
            w.u16(*worker);
            w.u64(*iteration);
            w.count(pairs.len());
            for &(sample, value) in pairs {
                w.u64(sample);
                w.f64(value);
            }
        }
        Message::PushAck { iteration } => w.u64(*iteration),
        Message::PullRequest {
            worker,
            iteration,
            samples,
        } => {
            w.u16(*worker);
            w.u64(*iteration);
            w.count(samples.len());
            for &s in samples {
                w.u64(s);
            }
        }
        Message::PullGrant { iteration, sums } => {
            w.u64(*iteration);
            w.count(sums.len());
            for &s in sums {
                w.f64(s);
            }
        }
        Message::PullReject { iteration, slowest } => {
            w.u64(*iteration);
            w.u64(*slowest);
        }
        Message::Error { code, detail } => {
            w.u16(*code);
            w.count(detail.len());
            w.0.extend_from_slice(detail.as_bytes());
        }
    }
    let len = (w.0.len() - 4) as u32;
    w.0[..4].copy_from_slice(&len.to_le_bytes());
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Decode("payload truncated".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        let v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Decode("non-finite value".into()))
        }
    }
    /// Reads a count and checks the remaining payload can hold it.
    fn count(&mut self, item_len: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.checked_mul(item_len).is_none_or(|need| need > self.buf.len()) {
            return Err(Error::Decode(format!("count {n} exceeds the payload")));
        }
        Ok(n)
    }
}

/// Decodes exactly one complete frame.
pub fn decode(bytes: &[u8]) -> Result<Message> {
    if bytes.len() < 5 {
        return Err(Error::Decode(format!("frame of {} bytes is truncated", bytes.len())));
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    if len == 0 || len > MAX_FRAME_LEN {
        return Err(Error::Decode(format!("invalid frame length {len}")));
    }
    if bytes.len() != 4 + len {
        return Err(Error::Decode(format!(
            "frame length {len} does not match the {} bytes received",
            bytes.len() - 4
        )));
    }
    let tag = bytes[4];
    let mut r = Reader { buf: &bytes[5..] };
    let msg = match tag {
        tags::PUSH_REQUEST => {
            let worker = r.u16()?;
            let iteration = r.u64()?;
            let n = r.count(16)?;
            let pairs = (0..n)
                .map(|_| Ok((r.u64()?, r.f64()?)))
                .collect::<Result<_>>()?;
            Message::PushRequest {
                worker,
                iteration,
                pairs,
            }
        }
        tags::PUSH_ACK => Message::PushAck { iteration: r.u64()? },
        tags::PULL_REQUEST => {
            let worker = r.u16()?;
            let iteration = r.u64()?;
            let n = r.count(8)?;
            let samples = (0..n).map(|_| r.u64()).collect::<Result<_>>()?;
            Message::PullRequest {
                worker,
                iteration,
                samples,
            }
        }
        tags::PULL_GRANT => {
            let iteration = r.u64()?;
            let n = r.count(8)?;
            let sums = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;
            Message::PullGrant { iteration, sums }
        }
        tags::PULL_REJECT => Message::PullReject {
            iteration: r.u64()?,
            slowest: r.u64()?,
        },
        tags::ERROR => {
            let code = r.u16()?;
            let n = r.count(1)?;
            let detail = std::str::from_utf8(r.take(n)?)
                .map_err(|_| Error::Decode("error detail is not UTF-8".into()))?
                .to_owned();
            Message::Error { code, detail }
        }
        other => return Err(Error::Decode(format!("unknown message tag {other}"))),
    };
    if !r.buf.is_empty() {
        return Err(Error::Decode(format!("{} trailing payload bytes", r.buf.len())));
    }
    Ok(msg)
}

/// Reads one whole frame; `Ok(None)` on a clean end of stream before a frame starts.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<Option<Vec<u8>>> {
    let mut header = [0u8; 4];
    match reader.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(header) as usize;
    if len == 0 || len > MAX_FRAME_LEN {
        return Err(Error::Decode(format!("invalid frame length {len}")));
    }
    let mut frame = vec![0u8; 4 + len];
    frame[..4].copy_from_slice(&header);
    reader.read_exact(&mut frame[4..]).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Decode("connection closed mid-frame".into())
        } else {
            e.into()
        }
    })?;
    Ok(Some(frame))
}

pub fn write_frame<W: Write>(writer: &mut W, msg: &Message) -> Result<()> {
    writer.write_all(&encode(msg))?;
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_ack_zero_layout() {
        assert_eq!(
            encode(&Message::PushAck { iteration: 0 }),
            vec![0x09, 0, 0, 0, 0x02, 0, 0, 0, 0, 0, 0, 0, 0]
        );
    }

    #[test]
    fn pull_reject_matches_hand_reader() {
        let bytes = encode(&Message::PullReject {
            iteration: 5,
            slowest: 1,
        });
        // independent reading of the layout
        assert_eq!(bytes.len(), 4 + 1 + 8 + 8);
        assert_eq!(u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]), 17);
        assert_eq!(bytes[4], 5);
        let mut t = [0u8; 8];
        t.copy_from_slice(&bytes[5..13]);
        assert_eq!(u64::from_le_bytes(t), 5);
        t.copy_from_slice(&bytes[13..21]);
        assert_eq!(u64::from_le_bytes(t), 1);
        assert_eq!(
            decode(&bytes).unwrap(),
            Message::PullReject {
                iteration: 5,
                slowest: 1
            }
        );
    }

    #[test]
    fn truncated_and_unknown_frames_fail() {
        let bytes = encode(&Message::PullGrant {
            iteration: 3,
            sums: vec![0.5, -1.25],
        });
        for cut in 0..bytes.len() {
            assert!(decode(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut unknown = encode(&Message::PushAck { iteration: 1 });
        unknown[4] = 9;
        assert!(matches!(decode(&unknown), Err(Error::Decode(_))));
        let mut trailing = encode(&Message::PushAck { iteration: 1 });
        trailing.push(0);
        assert!(decode(&trailing).is_err());
    }

    #[test]
    fn count_larger_than_payload_fails() {
        let mut bytes = encode(&Message::PullRequest {
            worker: 1,
            iteration: 2,
            samples: vec![7],
        });
        // count field sits after tag, worker and iteration
        bytes[15..19].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let bytes = encode(&Message::PullGrant {
            iteration: 1,
            sums: vec![f64::NAN],
        });
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn frame_reader_handles_streams() {
        let a = Message::PushAck { iteration: 4 };
        let b = Message::Error {
            code: 2,
            detail: "sample 9 ≥ n".into(),
        };
        let mut stream = encode(&a);
        stream.extend(encode(&b));
        let mut cursor = stream.as_slice();
        assert_eq!(decode(&read_frame(&mut cursor).unwrap().unwrap()).unwrap(), a);
        assert_eq!(decode(&read_frame(&mut cursor).unwrap().unwrap()).unwrap(), b);
        assert!(read_frame(&mut cursor).unwrap().is_none());
        let partial = &encode(&a)[..7];
        assert!(read_frame(&mut &partial[..]).is_err());
    }
}
