use std::sync::Arc;

use super::{decode, encode, Direction, Link, Message, MessageLog};
use crate::coordinator::Coordinator;
use crate::Result;

/// A carrier that calls the coordinator directly.
///
/// Requests and replies still pass through the wire encoding so that this
/// carrier and the socket carrier present identical bytes to the coordinator.
#[derive(Clone)]
pub struct InProcessLink {
    coordinator: Arc<Coordinator>,
    log: Option<MessageLog>,
}

impl InProcessLink {
    pub fn new(coordinator: Arc<Coordinator>) -> Self {
        InProcessLink {
            coordinator,
            log: None,
        }
    }

    /// Records every request and reply into `log`.
    pub fn with_log(mut self, log: MessageLog) -> Self {
        self.log = Some(log);
        self
    }
}

impl Link for InProcessLink {
    fn exchange(&mut self, request: &Message) -> Result<Message> {
        let request = decode(&encode(request))?;
        let reply = decode(&encode(&self.coordinator.handle(&request)))?;
        if let Some(log) = &self.log {
            let mut log = log.lock();
            log.push((Direction::Request, request));
            log.push((Direction::Response, reply.clone()));
        }
        Ok(reply)
    }
}
