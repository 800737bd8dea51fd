use thiserror::Error;

use crate::types::{LevelKind, ThreadId, WindowId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("trace line {line}: {message}")]
    TraceParse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("event {event}: {source}")]
    Event {
        event: usize,
        #[source]
        source: Box<SimError>,
    },

    #[error("unknown window {0}")]
    UnknownWindow(WindowId),

    #[error("window {0} is already closed")]
    WindowClosed(WindowId),

    #[error("window {0} was already opened")]
    DuplicateWindow(WindowId),

    #[error("window {window} belongs to {owner}, not {thread}")]
    ThreadMismatch {
        window: WindowId,
        owner: ThreadId,
        thread: ThreadId,
    },

    #[error("thread {0} does not exist in this configuration")]
    UnknownThread(ThreadId),

    #[error("no way in the set carries the requested domain label")]
    DomainEmpty,

    #[error("way {0} is not valid")]
    InvalidWay(usize),

    #[error("temporary capacity {cap} out of range for {level} with {ways} ways")]
    CapacityOutOfRange {
        level: LevelKind,
        cap: usize,
        ways: usize,
    },

    #[error("reconfiguration requires no open speculation windows")]
    NotQuiescent,

    #[error("unknown table line {0}; expected 1..=6")]
    InvalidLine(u8),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("observation lists are not aligned: {0}")]
    MisalignedObservations(String),
}

impl SimError {
    pub(crate) fn at_event(self, event: usize) -> SimError {
        SimError::Event {
            event,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
