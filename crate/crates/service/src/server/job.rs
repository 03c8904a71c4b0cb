use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use normalforge::refine::{Phase, ProgressEvent, RefineReport};
use normalforge::render::PixelMask;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;
use uuid::Uuid;

const CHANNEL_CAPACITY: usize = 1024;

/// One frame of a job's progress stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobEvent {
    pub job_id: Uuid,
    #[serde(flatten)]
    pub event: ProgressEvent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobStatus {
    pub job_id: Uuid,
    pub session_id: Uuid,
    pub cancel_requested: bool,
    pub last_event: Option<JobEvent>,
    pub report: Option<RefineReport>,
}

#[derive(Debug)]
pub struct Job {
    pub id: Uuid,
    pub session: Uuid,
    /// Masks of the submitted targets, by view index.
    pub masks: Vec<Option<PixelMask>>,
    events: Mutex<Vec<JobEvent>>,
    tx: broadcast::Sender<JobEvent>,
    cancel: AtomicBool,
    report: Mutex<Option<RefineReport>>,
}

impl Job {
    pub fn new(session: Uuid, masks: Vec<Option<PixelMask>>) -> Self {
        Self {
            id: Uuid::new_v4(),
            session,
            masks,
            events: Mutex::new(Vec::new()),
            tx: broadcast::channel(CHANNEL_CAPACITY).0,
            cancel: AtomicBool::new(false),
            report: Mutex::new(None),
        }
    }

    /// Appends to the stored stream and wakes live subscribers. Events that
    /// do not advance the step, or arrive after a terminal one, are dropped.
    pub fn publish(&self, event: ProgressEvent, error: Option<String>) {
        let mut events = self.events.lock().unwrap();
        if let Some(last) = events.last() {
            if last.event.phase.is_terminal() || event.step <= last.event.step {
                return;
            }
        }
        let e = JobEvent { job_id: self.id, event, error };
        events.push(e.clone());
        let _ = self.tx.send(e);
    }

    /// Stored events so far plus a receiver for everything after them.
    pub fn subscribe(&self) -> (Vec<JobEvent>, broadcast::Receiver<JobEvent>) {
        let events = self.events.lock().unwrap();
        (events.clone(), self.tx.subscribe())
    }

    pub fn events_after(&self, step: Option<usize>) -> Vec<JobEvent> {
        let events = self.events.lock().unwrap();
        events.iter().filter(|e| step.is_none_or(|s| e.event.step > s)).cloned().collect()
    }

    pub fn last_step(&self) -> usize {
        self.events.lock().unwrap().last().map_or(0, |e| e.event.step)
    }

    pub fn finished(&self) -> bool {
        self.events.lock().unwrap().last().is_some_and(|e| e.event.phase.is_terminal())
    }

    pub fn request_cancel(&self) {
        self.cancel.store(true, Ordering::SeqCst);
    }

    pub fn cancel_requested(&self) -> bool {
        self.cancel.load(Ordering::SeqCst)
    }

    pub fn set_report(&self, report: RefineReport) {
        *self.report.lock().unwrap() = Some(report);
    }

    pub fn status(&self) -> JobStatus {
        JobStatus {
            job_id: self.id,
            session_id: self.session,
            cancel_requested: self.cancel_requested(),
            last_event: self.events.lock().unwrap().last().cloned(),
            report: self.report.lock().unwrap().clone(),
        }
    }
}

pub fn terminal_event(step: usize, loss: f64, vertex_count: usize, phase: Phase) -> ProgressEvent {
    ProgressEvent {
        step,
        loss,
        per_view: Vec::new(),
        vertex_count,
        phase,
    }
}
