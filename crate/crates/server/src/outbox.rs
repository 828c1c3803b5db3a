use std::collections::VecDeque;
use std::sync::Mutex;

use teleop_core::protocol::{Envelope, Message};
use tokio::sync::Notify;

/// Streamed telemetry may be dropped under backpressure; control traffic,
/// command echoes and errors never are.
fn droppable(m: &Message) -> bool {
    matches!(m, Message::RobotState(_) | Message::TactileFrame(_) | Message::Gesture(_))
}

#[derive(Debug, Default)]
struct Inner {
    queue: VecDeque<Envelope>,
    dropped: u64,
    closing: bool,
}

/// Per-client send queue. When full, the oldest droppable message goes and
/// the drop count rides on the next message handed to the writer.
#[derive(Debug)]
pub struct Outbox {
    inner: Mutex<Inner>,
    notify: Notify,
    capacity: usize,
}

impl Outbox {
    pub fn new(capacity: usize) -> Self {
        Self { inner: Mutex::new(Inner::default()), notify: Notify::new(), capacity: capacity.max(1) }
    }

    pub fn push(&self, env: Envelope) {
        let mut inner = self.inner.lock().expect("outbox lock");
        if inner.closing {
            return;
        }
        if inner.queue.len() >= self.capacity {
            if let Some(i) = inner.queue.iter().position(|e| droppable(&e.message)) {
                inner.queue.remove(i);
                inner.dropped += 1;
            } else if droppable(&env.message) {
                inner.dropped += 1;
                return;
            }
        }
        inner.queue.push_back(env);
        drop(inner);
        self.notify.notify_one();
    }

    /// Queues a last message; the writer sends what is queued and then closes.
    pub fn close_with(&self, env: Envelope) {
        self.push(env);
        self.close();
    }

    pub fn close(&self) {
        self.inner.lock().expect("outbox lock").closing = true;
        self.notify.notify_one();
    }

    pub fn is_closing(&self) -> bool {
        self.inner.lock().expect("outbox lock").closing
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("outbox lock").queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Next message with the pending drop count attached, or `None` once
    /// closed and drained.
    pub fn try_pop(&self) -> Option<Result<Envelope, ()>> {
        let mut inner = self.inner.lock().expect("outbox lock");
        match inner.queue.pop_front() {
            Some(mut env) => {
                env.dropped = std::mem::take(&mut inner.dropped);
                Some(Ok(env))
            }
            None if inner.closing => Some(Err(())),
            None => None,
        }
    }

    pub async fn next(&self) -> Option<Envelope> {
        loop {
            match self.try_pop() {
                Some(Ok(env)) => return Some(env),
                Some(Err(())) => return None,
                None => self.notify.notified().await,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use teleop_core::protocol::UserPayload;

    fn state(ts: u64) -> Envelope {
        Envelope::new(ts, Message::Gesture(teleop_core::protocol::GesturePayload {
            hand: teleop_core::landmark::Hand::Left,
            class: teleop_core::gesture::GestureClass::Move,
            proba: [1.0, 0.0, 0.0, 0.0],
        }))
    }

    fn grant(ts: u64) -> Envelope {
        Envelope::new(ts, Message::ControlGrant(UserPayload { user: "u".into() }))
    }

    #[test]
    fn drops_oldest_telemetry_and_reports_count() {
        let ob = Outbox::new(3);
        ob.push(state(1));
        ob.push(grant(2));
        ob.push(state(3));
        ob.push(state(4));
        ob.push(state(5));
        let first = ob.try_pop().unwrap().unwrap();
        assert_eq!((first.ts, first.dropped), (2, 2));
        let rest: Vec<_> = std::iter::from_fn(|| ob.try_pop().and_then(Result::ok)).map(|e| (e.ts, e.dropped)).collect();
        assert_eq!(rest, [(4, 0), (5, 0)]);
    }

    #[test]
    fn control_messages_are_never_dropped() {
        let ob = Outbox::new(2);
        for t in 0..5 {
            ob.push(grant(t));
        }
        ob.push(state(9));
        assert_eq!(ob.len(), 5);
        ob.close();
        let ts: Vec<_> = std::iter::from_fn(|| ob.try_pop().and_then(Result::ok)).map(|e| e.ts).collect();
        assert_eq!(ts, [0, 1, 2, 3, 4]);
        assert_eq!(ob.try_pop(), Some(Err(())));
    }
}
