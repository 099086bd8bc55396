//! Tick-based discrete-event core: event queue, seeded per-node randomness and
//! the message transport primitives everything else is built on.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time unit.
pub type Tick = u64;

/// Identity of a sub-system in the network.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum NodeId {
    Client(u32),
    Peer(u32),
    Orderer(u32),
}

impl NodeId {
    /// Stable key used to derive this node's random substream.
    pub fn stream_key(self) -> u64 {
        match self {
            NodeId::Client(i) => (1 << 40) | i as u64,
            NodeId::Peer(i) => (2 << 40) | i as u64,
            NodeId::Orderer(i) => (3 << 40) | i as u64,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Client(i) => write!(f, "c{i}"),
            NodeId::Peer(i) => write!(f, "p{i}"),
            NodeId::Orderer(i) => write!(f, "o{i}"),
        }
    }
}

/// Message delay distribution for one endpoint side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DelaySpec {
    /// Each integer in `[min, max]` with equal probability. Requires `min >= 1`.
    Uniform { min: u64, max: u64 },
    Constant(u64),
}

impl DelaySpec {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            DelaySpec::Uniform { min, max } => {
                if min < 1 {
                    Err(format!("uniform delay min must be >= 1, got {min}"))
                } else if max < min {
                    Err(format!("uniform delay range [{min},{max}] is empty"))
                } else {
                    Ok(())
                }
            }
            DelaySpec::Constant(_) => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match *self {
            DelaySpec::Uniform { min, max } => rng.gen_range(min..=max),
            DelaySpec::Constant(c) => c,
        }
    }

    /// Largest value this spec can produce.
    pub fn upper_bound(&self) -> u64 {
        match *self {
            DelaySpec::Uniform { max, .. } => max,
            DelaySpec::Constant(c) => c,
        }
    }
}

/// An in-flight message.
#[derive(Clone, Debug)]
pub struct Envelope<P> {
    pub id: u64,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub payload: P,
    pub emitted_at: Tick,
    pub deliver_at: Tick,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("cannot schedule at tick {at}: current tick is {now}")]
    InPast { now: Tick, at: Tick },
}

struct Entry<E> {
    at: Tick,
    seq: u64,
    event: E,
}

// Ordered by (at, seq) only; the heap is a max-heap so we invert.
impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}
impl<E> Eq for Entry<E> {}
impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Pending events, popped in lexicographic (tick, sequence-number) order.
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue { heap: BinaryHeap::new(), next_seq: 0 }
    }

    /// Enqueue `event` at tick `at`. Returns the tie-breaking sequence number.
    pub fn schedule(&mut self, now: Tick, at: Tick, event: E) -> Result<u64, ScheduleError> {
        if at < now {
            return Err(ScheduleError::InPast { now, at });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { at, seq, event });
        Ok(seq)
    }

    pub fn pop(&mut self) -> Option<(Tick, u64, E)> {
        self.heap.pop().map(|e| (e.at, e.seq, e.event))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// One global seed split into independent per-node substreams, so adding a
/// node never perturbs the draws of another.
pub struct RandomStreams {
    seed: u64,
    streams: BTreeMap<u64, ChaCha8Rng>,
}

impl RandomStreams {
    pub fn new(seed: u64) -> Self {
        RandomStreams { seed, streams: BTreeMap::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn node(&mut self, id: NodeId) -> &mut ChaCha8Rng {
        let seed = self.seed;
        self.streams
            .entry(id.stream_key())
            .or_insert_with(|| ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(id.stream_key()))))
    }
}

/// Deterministic seed for sweep point `index` under `base` seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(0x5eed)))
}
