//! Worker <-> coordinator messages and the carriers that move them.
//!
//! Only iteration counters, sample ids and scalar local predictions (or their
//! per-sample sums) exist in the schema. There is no field that could carry a
//! model parameter or a raw feature.

mod codec;
mod inproc;
mod tcp;

use std::sync::Arc;

use parking_lot::Mutex;

pub use codec::{decode, encode, read_frame, write_frame, MAX_FRAME_LEN};
pub use inproc::InProcessLink;
pub use tcp::{TcpCoordinatorServer, TcpLink};

use crate::Result;

/// Frame type tags.
pub mod tags {
    pub const PUSH_REQUEST: u8 = 1;
    pub const PUSH_ACK: u8 = 2;
    pub const PULL_REQUEST: u8 = 3;
    pub const PULL_GRANT: u8 = 4;
    pub const PULL_REJECT: u8 = 5;
    pub const ERROR: u8 = 6;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Worker `j` publishes its iteration-`t` predictions `(sample, value)`.
    PushRequest {
        worker: u16,
        iteration: u64,
        pairs: Vec<(u64, f64)>,
    },
    PushAck {
        iteration: u64,
    },
    /// Worker `j` asks for the per-sample prediction sums of its batch.
    PullRequest {
        worker: u16,
        iteration: u64,
        samples: Vec<u64>,
    },
    /// One sum per requested sample, in request order.
    PullGrant {
        iteration: u64,
        sums: Vec<f64>,
    },
    /// The requester is too far ahead of the slowest worker.
    PullReject {
        iteration: u64,
        slowest: u64,
    },
    Error {
        code: u16,
        detail: String,
    },
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::PushRequest { .. } => tags::PUSH_REQUEST,
            Message::PushAck { .. } => tags::PUSH_ACK,
            Message::PullRequest { .. } => tags::PULL_REQUEST,
            Message::PullGrant { .. } => tags::PULL_GRANT,
            Message::PullReject { .. } => tags::PULL_REJECT,
            Message::Error { .. } => tags::ERROR,
        }
    }
}

/// A request/response channel from one worker to the coordinator.
///
/// Carriers deliver one worker's requests in order with at most one outstanding.
pub trait Link: Send {
    fn exchange(&mut self, request: &Message) -> Result<Message>;
}

impl<L: Link + ?Sized> Link for Box<L> {
    fn exchange(&mut self, request: &Message) -> Result<Message> {
        (**self).exchange(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Request,
    Response,
}

/// Shared record of every message a carrier moved, for inspection in tests.
pub type MessageLog = Arc<Mutex<Vec<(Direction, Message)>>>;

pub fn new_message_log() -> MessageLog {
    Arc::new(Mutex::new(Vec::new()))
}
