//! Framed message channels between client and cloud, in process or over
//! TCP, with optional recording into byte-replayable transcripts.
//!
//! A frame is a 4-byte little-endian payload length, a 1-byte message tag,
//! then the payload.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};

use vhe_bfv::container::{self, Reader, KIND_CIPHERTEXT, KIND_CIPHERTEXT_LIST};

use crate::pe::KIND_PE_AUTH;
use crate::rep::KIND_REP_AUTH;
use crate::AuthError;

pub const PP_RESULT: u8 = 0x01;
pub const PP_CHALLENGE: u8 = 0x02;
pub const PP_RESPONSE: u8 = 0x03;
pub const REQ_HIGH_TERMS: u8 = 0x10;
pub const REQ_BLINDED_TERMS: u8 = 0x11;
/// A final authenticated result handed back without the polynomial protocol.
pub const AUTH_RESULT: u8 = 0x20;

const MAX_FRAME: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub tag: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(tag: u8, payload: Vec<u8>) -> Self {
        Frame { tag, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload.len() + 5);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.push(self.tag);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Frame, AuthError> {
        if bytes.len() < 5 {
            return Err(AuthError::Protocol("short frame".into()));
        }
        let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        if bytes.len() != len + 5 {
            return Err(AuthError::Protocol("frame length mismatch".into()));
        }
        Ok(Frame::new(bytes[4], bytes[5..].to_vec()))
    }

    fn read_from(r: &mut impl Read) -> Result<Frame, AuthError> {
        let mut head = [0u8; 5];
        r.read_exact(&mut head)?;
        let len = u32::from_le_bytes(head[..4].try_into().unwrap()) as usize;
        if len > MAX_FRAME {
            return Err(AuthError::Protocol("frame too large".into()));
        }
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload)?;
        Ok(Frame::new(head[4], payload))
    }
}

/// One end of an ordered, reliable message channel.
pub trait Channel: Send {
    fn send(&mut self, frame: Frame) -> Result<(), AuthError>;
    fn recv(&mut self) -> Result<Frame, AuthError>;

    /// Receives a frame and insists on its tag.
    fn expect(&mut self, tag: u8) -> Result<Vec<u8>, AuthError> {
        let f = self.recv()?;
        if f.tag != tag {
            return Err(AuthError::Protocol(format!(
                "expected message 0x{tag:02x}, got 0x{:02x}",
                f.tag
            )));
        }
        Ok(f.payload)
    }
}

impl<C: Channel + ?Sized> Channel for Box<C> {
    fn send(&mut self, frame: Frame) -> Result<(), AuthError> {
        (**self).send(frame)
    }
    fn recv(&mut self) -> Result<Frame, AuthError> {
        (**self).recv()
    }
}

/// In-process duplex channel. Frames cross as encoded bytes, exactly as
/// they would on a socket.
pub struct MemChannel {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl MemChannel {
    pub fn pair() -> (MemChannel, MemChannel) {
        let (a_tx, b_rx) = channel();
        let (b_tx, a_rx) = channel();
        (
            MemChannel { tx: a_tx, rx: a_rx },
            MemChannel { tx: b_tx, rx: b_rx },
        )
    }
}

impl Channel for MemChannel {
    fn send(&mut self, frame: Frame) -> Result<(), AuthError> {
        self.tx
            .send(frame.encode())
            .map_err(|_| AuthError::Protocol("peer hung up".into()))
    }

    fn recv(&mut self) -> Result<Frame, AuthError> {
        let bytes = self
            .rx
            .recv()
            .map_err(|_| AuthError::Protocol("peer hung up".into()))?;
        Frame::decode(&bytes)
    }
}

pub struct TcpChannel {
    stream: TcpStream,
}

impl TcpChannel {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, AuthError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(TcpChannel { stream })
    }

    pub fn accept(listener: &TcpListener) -> Result<Self, AuthError> {
        let (stream, _) = listener.accept()?;
        stream.set_nodelay(true)?;
        Ok(TcpChannel { stream })
    }
}

impl Channel for TcpChannel {
    fn send(&mut self, frame: Frame) -> Result<(), AuthError> {
        self.stream.write_all(&frame.encode())?;
        Ok(self.stream.flush()?)
    }

    fn recv(&mut self) -> Result<Frame, AuthError> {
        Frame::read_from(&mut self.stream)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Client,
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    /// Receiving side.
    pub to: Side,
    pub frame: Frame,
}

/// Every frame of a session in order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub records: Vec<Record>,
}

impl Transcript {
    pub fn frames_to(&self, side: Side) -> impl Iterator<Item = &Frame> {
        self.records
            .iter()
            .filter(move |r| r.to == side)
            .map(|r| &r.frame)
    }

    /// Concatenated encoded frames headed to `side`.
    pub fn bytes_to(&self, side: Side) -> Vec<u8> {
        self.frames_to(side).flat_map(|f| f.encode()).collect()
    }

    /// Ciphertexts carried toward `side`, counted from the containers.
    pub fn ciphertexts_to(&self, side: Side) -> Result<usize, AuthError> {
        self.frames_to(side)
            .map(|f| ciphertexts_in(&f.payload))
            .sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.records {
            out.push(match r.to {
                Side::Client => 0,
                Side::Cloud => 1,
            });
            out.extend_from_slice(&r.frame.encode());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AuthError> {
        let mut records = Vec::new();
        let mut r = Reader::new(bytes);
        while r.remaining() > 0 {
            let to = match r.u8()? {
                0 => Side::Client,
                1 => Side::Cloud,
                _ => return Err(AuthError::Protocol("bad transcript side".into())),
            };
            let len = r.u32()? as usize;
            let tag = r.u8()?;
            let payload = r.take(len)?.to_vec();
            records.push(Record {
                to,
                frame: Frame::new(tag, payload),
            });
        }
        Ok(Transcript { records })
    }

    pub fn save(&self, path: &Path) -> Result<(), AuthError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, AuthError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Number of ciphertexts inside a frame payload; scalars count as zero.
pub fn ciphertexts_in(payload: &[u8]) -> Result<usize, AuthError> {
    if payload.len() < 4 || &payload[..4] != container::MAGIC {
        return Ok(0);
    }
    let (kind, _, body) = container::open(payload)?;
    let mut r = Reader::new(body);
    Ok(match kind {
        KIND_CIPHERTEXT => 1,
        KIND_CIPHERTEXT_LIST => r.u32()? as usize,
        KIND_PE_AUTH => r.u32()? as usize + 1,
        KIND_REP_AUTH => {
            r.take(4 + 8 + 64)?;
            r.u32()? as usize
        }
        _ => 0,
    })
}

/// Channel wrapper logging every frame into a shared transcript.
pub struct Recorded<C> {
    inner: C,
    side: Side,
    log: Arc<Mutex<Transcript>>,
}

impl<C: Channel> Recorded<C> {
    /// `side` is the party that owns this end.
    pub fn new(inner: C, side: Side, log: Arc<Mutex<Transcript>>) -> Self {
        Recorded { inner, side, log }
    }

    fn other(&self) -> Side {
        match self.side {
            Side::Client => Side::Cloud,
            Side::Cloud => Side::Client,
        }
    }
}

impl<C: Channel> Channel for Recorded<C> {
    fn send(&mut self, frame: Frame) -> Result<(), AuthError> {
        // log before handing over so the order matches the peer's view
        self.log.lock().unwrap().records.push(Record {
            to: self.other(),
            frame: frame.clone(),
        });
        self.inner.send(frame)
    }

    fn recv(&mut self) -> Result<Frame, AuthError> {
        self.inner.recv()
    }
}

/// Replays the recorded peer of `side`: incoming frames come from the
/// transcript and outgoing frames must match it byte for byte.
pub struct Replay {
    records: std::vec::IntoIter<Record>,
    side: Side,
}

impl Replay {
    pub fn new(t: Transcript, side: Side) -> Self {
        Replay {
            records: t.records.into_iter(),
            side,
        }
    }
}

impl Channel for Replay {
    fn send(&mut self, frame: Frame) -> Result<(), AuthError> {
        match self.records.next() {
            Some(r) if r.to != self.side && r.frame == frame => Ok(()),
            _ => Err(AuthError::Protocol("replay diverged".into())),
        }
    }

    fn recv(&mut self) -> Result<Frame, AuthError> {
        match self.records.next() {
            Some(r) if r.to == self.side => Ok(r.frame),
            _ => Err(AuthError::Protocol("replay diverged".into())),
        }
    }
}
