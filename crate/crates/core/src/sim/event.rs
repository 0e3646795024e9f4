use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Index into the fault script.
    FailureStart(usize),
    FailureEnd(usize),
    LoadComplete { worker: usize, token: u64 },
    ResolveTick,
    /// Index into the trace.
    Arrival(usize),
    ServiceComplete { worker: usize, token: u64 },
    Probe,
}

impl EventKind {
    /// Processing order among events at the same instant.
    pub fn priority(&self) -> u8 {
        match self {
            EventKind::FailureStart(_) | EventKind::FailureEnd(_) => 0,
            EventKind::LoadComplete { .. } => 1,
            EventKind::ResolveTick => 2,
            EventKind::Arrival(_) => 3,
            EventKind::ServiceComplete { .. } => 4,
            EventKind::Probe => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time_s: f64,
    pub kind: EventKind,
    pub seq: u64,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time_s
            .total_cmp(&other.time_s)
            .then(self.kind.priority().cmp(&other.kind.priority()))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-ordered event queue with insertion sequence numbers.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, time_s: f64, kind: EventKind) {
        self.seq += 1;
        self.heap.push(Reverse(Event {
            time_s,
            kind,
            seq: self.seq,
        }));
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|Reverse(e)| e)
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|Reverse(e)| e.time_s)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering() {
        let mut q = EventQueue::default();
        q.push(5.0, EventKind::Probe);
        q.push(5.0, EventKind::Arrival(1));
        q.push(5.0, EventKind::ResolveTick);
        q.push(1.0, EventKind::ServiceComplete { worker: 0, token: 1 });
        q.push(5.0, EventKind::Arrival(0));
        q.push(5.0, EventKind::FailureStart(0));
        let kinds: Vec<EventKind> = std::iter::from_fn(|| q.pop()).map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![
                EventKind::ServiceComplete { worker: 0, token: 1 },
                EventKind::FailureStart(0),
                EventKind::ResolveTick,
                EventKind::Arrival(1),
                EventKind::Arrival(0),
                EventKind::Probe,
            ]
        );
    }
}
