//! Bounded directed channels with overwrite-on-full semantics.

use crate::wire::Envelope;
use std::collections::VecDeque;

/// A unidirectional channel holding at most `capacity` envelopes. Sending
/// into a full channel evicts the oldest buffered envelope, which keeps the
/// bound while staying deterministic.
#[derive(Debug)]
pub struct Channel {
    buf: VecDeque<Envelope>,
    capacity: usize,
}

impl Channel {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        Channel {
            buf: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Append an envelope, returning the evicted oldest one if full.
    pub fn push(&mut self, env: Envelope) -> Option<Envelope> {
        let evicted = if self.buf.len() == self.capacity {
            self.buf.pop_front()
        } else {
            None
        };
        self.buf.push_back(env);
        debug_assert!(self.buf.len() <= self.capacity);
        evicted
    }

    /// Remove and return the envelope at `idx` (0 = oldest).
    pub fn take(&mut self, idx: usize) -> Envelope {
        self.buf.remove(idx).expect("index within channel buffer")
    }

    pub fn peek(&self, idx: usize) -> &Envelope {
        &self.buf[idx]
    }

    /// Drop every buffered envelope matching the predicate; returns how many.
    pub fn purge<F: FnMut(&Envelope) -> bool>(&mut self, mut pred: F) -> usize {
        let before = self.buf.len();
        self.buf.retain(|e| !pred(e));
        before - self.buf.len()
    }

    pub fn clear(&mut self) -> usize {
        let n = self.buf.len();
        self.buf.clear();
        n
    }

    pub fn iter(&self) -> impl Iterator<Item = &Envelope> {
        self.buf.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::Payload;
    use crate::RegisterArray;

    fn env(seq: u64) -> Envelope {
        Envelope {
            sender: 0,
            receiver: 1,
            seq,
            payload: Payload::Write {
                reg: RegisterArray::bottom(2),
            },
        }
    }

    #[test]
    fn append_when_room() {
        let mut ch = Channel::new(8);
        assert!(ch.push(env(1)).is_none());
        assert_eq!(ch.len(), 1);
    }

    #[test]
    fn overwrite_evicts_oldest_when_full() {
        // Hand-simulated sequence at capacity 2 with 3 distinct sends: the
        // buffer ends up holding the last two envelopes.
        let mut ch = Channel::new(2);
        assert!(ch.push(env(1)).is_none());
        assert!(ch.push(env(2)).is_none());
        let evicted = ch.push(env(3)).expect("eviction at capacity");
        assert_eq!(evicted.seq, 1);
        assert_eq!(ch.len(), 2);
        assert_eq!(ch.peek(0).seq, 2);
        assert_eq!(ch.peek(1).seq, 3);
    }

    #[test]
    fn full_channel_stays_at_capacity() {
        let mut ch = Channel::new(8);
        for s in 0..20 {
            ch.push(env(s));
            assert!(ch.len() <= 8);
        }
        assert_eq!(ch.len(), 8);
        assert_eq!(ch.peek(0).seq, 12);
    }
}
