//! Text trace format: one event per line, `#` starts a comment.

use std::fmt;

use serde::Serialize;

use crate::error::{Result, SimError};
use crate::types::{AccessKind, ThreadId, WindowId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum MgmtOp {
    Flush,
    Prefetch,
    Invd,
}

impl MgmtOp {
    fn name(self) -> &'static str {
        match self {
            MgmtOp::Flush => "flush",
            MgmtOp::Prefetch => "prefetch",
            MgmtOp::Invd => "invd",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum TraceEvent {
    Open {
        window: WindowId,
        thread: ThreadId,
    },
    Access {
        kind: AccessKind,
        addr: u64,
        window: WindowId,
        thread: ThreadId,
    },
    /// Hardware prefetch; never speculative.
    Prefetch {
        addr: u64,
        thread: ThreadId,
    },
    Mgmt {
        op: MgmtOp,
        addr: u64,
        window: WindowId,
        thread: ThreadId,
    },
    TlbMissLoad {
        addr: u64,
        window: WindowId,
        thread: ThreadId,
    },
    Commit(WindowId),
    Squash(WindowId),
    /// Timed committed probe. `store` probes with a write.
    Measure {
        addr: u64,
        thread: ThreadId,
        store: bool,
    },
    Barrier,
}

impl TraceEvent {
    pub fn load(addr: u64, window: u64, thread: u32) -> Self {
        TraceEvent::Access {
            kind: AccessKind::Load,
            addr,
            window: WindowId(window),
            thread: ThreadId(thread),
        }
    }

    pub fn store(addr: u64, window: u64, thread: u32) -> Self {
        TraceEvent::Access {
            kind: AccessKind::Store,
            addr,
            window: WindowId(window),
            thread: ThreadId(thread),
        }
    }

    pub fn open(window: u64, thread: u32) -> Self {
        TraceEvent::Open {
            window: WindowId(window),
            thread: ThreadId(thread),
        }
    }

    pub fn measure(addr: u64, thread: u32) -> Self {
        TraceEvent::Measure {
            addr,
            thread: ThreadId(thread),
            store: false,
        }
    }

    pub fn mgmt(op: MgmtOp, addr: u64, window: u64, thread: u32) -> Self {
        TraceEvent::Mgmt {
            op,
            addr,
            window: WindowId(window),
            thread: ThreadId(thread),
        }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TraceEvent::Open { window, thread } => write!(f, "OPEN {window} {thread}"),
            TraceEvent::Access {
                kind,
                addr,
                window,
                thread,
            } => {
                let op = match kind {
                    AccessKind::Load => "LOAD",
                    AccessKind::Store => "STORE",
                    AccessKind::Ifetch => "IFETCH",
                };
                write!(f, "{op} {addr:#x} {window} {thread}")
            }
            TraceEvent::Prefetch { addr, thread } => write!(f, "PREFETCH {addr:#x} {thread}"),
            TraceEvent::Mgmt {
                op,
                addr,
                window,
                thread,
            } => write!(f, "MGMT {} {addr:#x} {window} {thread}", op.name()),
            TraceEvent::TlbMissLoad {
                addr,
                window,
                thread,
            } => {
                write!(f, "TLBMISS_LOAD {addr:#x} {window} {thread}")
            }
            TraceEvent::Commit(w) => write!(f, "COMMIT {w}"),
            TraceEvent::Squash(w) => write!(f, "SQUASH {w}"),
            TraceEvent::Measure {
                addr,
                thread,
                store,
            } => {
                write!(f, "MEASURE {addr:#x} {thread}")?;
                if store {
                    f.write_str(" store")?;
                }
                Ok(())
            }
            TraceEvent::Barrier => f.write_str("BARRIER"),
        }
    }
}

pub fn format_trace(events: &[TraceEvent]) -> String {
    events.iter().map(|e| format!("{e}\n")).collect()
}

struct Fields<'a> {
    line: usize,
    parts: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    fn err(&self, message: impl Into<String>) -> SimError {
        SimError::TraceParse {
            line: self.line,
            message: message.into(),
        }
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        self.parts
            .next()
            .ok_or_else(|| self.err(format!("missing {what}")))
    }

    fn addr(&mut self) -> Result<u64> {
        let tok = self.next("address")?;
        let hex = tok
            .strip_prefix("0x")
            .or_else(|| tok.strip_prefix("0X"))
            .ok_or_else(|| self.err(format!("address `{tok}` must start with 0x")))?;
        u64::from_str_radix(hex, 16).map_err(|_| self.err(format!("bad hex address `{tok}`")))
    }

    fn prefixed(&mut self, prefix: char, what: &str) -> Result<u64> {
        let tok = self.next(what)?;
        tok.strip_prefix(prefix)
            .and_then(|n| n.parse::<u64>().ok())
            .ok_or_else(|| self.err(format!("expected {what} like `{prefix}0`, got `{tok}`")))
    }

    fn window(&mut self) -> Result<WindowId> {
        let id = self.prefixed('w', "window id")?;
        if WindowId(id).is_internal() {
            return Err(self.err(format!("window id {id} is reserved")));
        }
        Ok(WindowId(id))
    }

    fn thread(&mut self) -> Result<ThreadId> {
        let id = self.prefixed('t', "thread id")?;
        u32::try_from(id)
            .map(ThreadId)
            .map_err(|_| self.err(format!("thread id {id} too large")))
    }

    fn finish(mut self) -> Result<()> {
        match self.parts.next() {
            Some(extra) => Err(self.err(format!("unexpected trailing `{extra}`"))),
            None => Ok(()),
        }
    }
}

pub fn parse_line(text: &str, line: usize) -> Result<Option<TraceEvent>> {
    let body = text.split('#').next().unwrap_or("");
    let mut f = Fields {
        line,
        parts: body.split_whitespace(),
    };
    let Some(op) = f.parts.next() else {
        return Ok(None);
    };
    let access = |kind, f: &mut Fields| -> Result<TraceEvent> {
        Ok(TraceEvent::Access {
            kind,
            addr: f.addr()?,
            window: f.window()?,
            thread: f.thread()?,
        })
    };
    let event = match op.to_ascii_uppercase().as_str() {
        "OPEN" => TraceEvent::Open {
            window: f.window()?,
            thread: f.thread()?,
        },
        "LOAD" => access(AccessKind::Load, &mut f)?,
        "STORE" => access(AccessKind::Store, &mut f)?,
        "IFETCH" => access(AccessKind::Ifetch, &mut f)?,
        "PREFETCH" => TraceEvent::Prefetch {
            addr: f.addr()?,
            thread: f.thread()?,
        },
        "MGMT" => {
            let op = match f.next("management op")? {
                "flush" => MgmtOp::Flush,
                "prefetch" => MgmtOp::Prefetch,
                "invd" => MgmtOp::Invd,
                other => return Err(f.err(format!("unknown management op `{other}`"))),
            };
            TraceEvent::Mgmt {
                op,
                addr: f.addr()?,
                window: f.window()?,
                thread: f.thread()?,
            }
        }
        "TLBMISS_LOAD" => TraceEvent::TlbMissLoad {
            addr: f.addr()?,
            window: f.window()?,
            thread: f.thread()?,
        },
        "COMMIT" => TraceEvent::Commit(f.window()?),
        "SQUASH" => TraceEvent::Squash(f.window()?),
        "MEASURE" => {
            let addr = f.addr()?;
            let thread = f.thread()?;
            let store = match f.parts.next() {
                None => false,
                Some("store") => true,
                Some(other) => return Err(f.err(format!("unexpected trailing `{other}`"))),
            };
            TraceEvent::Measure {
                addr,
                thread,
                store,
            }
        }
        "BARRIER" => TraceEvent::Barrier,
        other => return Err(f.err(format!("unknown event `{other}`"))),
    };
    f.finish()?;
    Ok(Some(event))
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(e) = parse_line(line, i + 1)? {
            events.push(e);
        }
    }
    Ok(events)
}
