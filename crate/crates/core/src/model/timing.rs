use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimerKind {
    Start,
    Pause,
    Resume,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingEvent {
    /// Seconds since the Unix epoch.
    pub at: f64,
    pub kind: TimerKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimingError {
    #[error("timer event `{kind:?}` is not valid while the timer is {state}")]
    InvalidTransition { kind: TimerKind, state: &'static str },
    #[error("timer event at {at} precedes the previous event")]
    OutOfOrder { at: f64 },
}

/// Active annotation time for one document, with the raw events behind it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingRecord {
    pub seconds_active: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<TimingEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TimerState {
    Idle,
    Running,
    Paused,
    Stopped,
}

impl TimerState {
    fn name(self) -> &'static str {
        match self {
            TimerState::Idle => "idle",
            TimerState::Running => "running",
            TimerState::Paused => "paused",
            TimerState::Stopped => "stopped",
        }
    }
}

impl TimingRecord {
    pub fn from_events(events: Vec<TimingEvent>) -> Result<Self, TimingError> {
        let mut record = TimingRecord::default();
        for ev in events {
            record.push(ev)?;
        }
        Ok(record)
    }

    fn state(&self) -> TimerState {
        match self.events.last().map(|e| e.kind) {
            None => TimerState::Idle,
            Some(TimerKind::Start) | Some(TimerKind::Resume) => TimerState::Running,
            Some(TimerKind::Pause) => TimerState::Paused,
            Some(TimerKind::Stop) => TimerState::Stopped,
        }
    }

    pub fn is_running(&self) -> bool {
        self.state() == TimerState::Running
    }

    /// Append an event. A stopped timer may be started again; active time
    /// keeps accumulating across sessions.
    pub fn push(&mut self, event: TimingEvent) -> Result<(), TimingError> {
        let state = self.state();
        let allowed = match event.kind {
            TimerKind::Start => matches!(state, TimerState::Idle | TimerState::Stopped),
            TimerKind::Pause => state == TimerState::Running,
            TimerKind::Resume => state == TimerState::Paused,
            TimerKind::Stop => matches!(state, TimerState::Running | TimerState::Paused),
        };
        if !allowed {
            return Err(TimingError::InvalidTransition {
                kind: event.kind,
                state: state.name(),
            });
        }
        if let Some(last) = self.events.last() {
            if event.at < last.at {
                return Err(TimingError::OutOfOrder { at: event.at });
            }
            if state == TimerState::Running {
                self.seconds_active += event.at - last.at;
            }
        }
        self.events.push(event);
        Ok(())
    }

    /// Active seconds including the currently running interval, if any.
    pub fn active_at(&self, now: f64) -> f64 {
        match self.events.last() {
            Some(last) if self.is_running() => self.seconds_active + (now - last.at).max(0.0),
            _ => self.seconds_active,
        }
    }
}
