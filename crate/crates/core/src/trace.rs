//! Newline-delimited JSON episode traces and their bit-exact replay.
//!
//! The first line is a header with the physics parameters and the start
//! state; every following line is one step: the action taken, the state it
//! produced and the contacts in that state.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{detect_contacts, step_world, Action, Contact, PhysicsParams, WorldState};

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub physics: PhysicsParams,
    pub initial: WorldState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: u32,
    pub action: Action,
    pub state: WorldState,
    pub contacts: Vec<Contact>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub steps: Vec<TraceStep>,
}

impl Trace {
    pub fn new(physics: PhysicsParams, initial: WorldState) -> Self {
        Trace { header: TraceHeader { version: TRACE_VERSION, physics, initial }, steps: Vec::new() }
    }

    /// Appends the outcome of applying `action`.
    pub fn record(&mut self, action: Action, state: &WorldState) {
        self.steps.push(TraceStep {
            step: state.step_count,
            action,
            state: state.clone(),
            contacts: detect_contacts(state, self.header.physics.contact_margin),
        });
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for s in &self.steps {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Trace> {
        let mut lines = input.lines();
        let first = lines.next().ok_or_else(|| Error::config("empty trace"))??;
        let header: TraceHeader = serde_json::from_str(&first)?;
        if header.version != TRACE_VERSION {
            return Err(Error::config(format!("unsupported trace version {}", header.version)));
        }
        let mut steps = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                steps.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Trace { header, steps })
    }
}

/// Where a re-simulation first disagreed with the log.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMismatch {
    pub step_index: usize,
    pub logged: Box<WorldState>,
    pub simulated: Box<WorldState>,
}

/// Re-simulates every logged action from the start state and compares each
/// produced state exactly. Calls `visit` with every simulated step.
pub fn replay(trace: &Trace, mut visit: impl FnMut(&TraceStep) -> Result<()>) -> Result<Option<ReplayMismatch>> {
    let physics = &trace.header.physics;
    let mut state = trace.header.initial.clone();
    for (i, logged) in trace.steps.iter().enumerate() {
        state = step_world(&state, &logged.action, physics)?;
        let sim = TraceStep {
            step: state.step_count,
            action: logged.action,
            contacts: detect_contacts(&state, physics.contact_margin),
            state: state.clone(),
        };
        visit(&sim)?;
        if sim != *logged {
            return Ok(Some(ReplayMismatch { step_index: i, logged: Box::new(logged.state.clone()), simulated: Box::new(state) }));
        }
    }
    Ok(None)
}
