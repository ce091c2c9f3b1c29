//! Fixed-capacity LRU key store.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CacheError {
    #[error("cache capacity must be positive")]
    ZeroCapacity,
    #[error("key {0} is already cached; insert is only valid after a miss")]
    AlreadyPresent(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Hit,
    Miss,
}

impl Lookup {
    pub fn is_hit(self) -> bool {
        self == Lookup::Hit
    }
}

const NIL: usize = usize::MAX;

#[derive(Debug, Clone)]
struct Node {
    key: u64,
    prev: usize,
    next: usize,
}

/// LRU cache over opaque 64-bit keys.
///
/// Entries live in a slab threaded by a doubly linked list, most recently
/// used at the head.
#[derive(Debug, Clone)]
pub struct LruCache {
    capacity: usize,
    index: HashMap<u64, usize>,
    nodes: Vec<Node>,
    head: usize,
    tail: usize,
    insertions: u64,
}

impl LruCache {
    pub fn new(capacity: usize) -> Result<Self, CacheError> {
        if capacity == 0 {
            return Err(CacheError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            index: HashMap::with_capacity(capacity),
            nodes: Vec::with_capacity(capacity),
            head: NIL,
            tail: NIL,
            insertions: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Number of new items inserted so far.
    pub fn insertion_count(&self) -> u64 {
        self.insertions
    }

    /// Membership test that leaves recency untouched.
    pub fn contains(&self, key: u64) -> bool {
        self.index.contains_key(&key)
    }

    /// Looks `key` up, promoting it to most recently used on a hit.
    pub fn lookup(&mut self, key: u64) -> Lookup {
        match self.index.get(&key) {
            Some(&slot) => {
                self.unlink(slot);
                self.push_front(slot);
                Lookup::Hit
            }
            None => Lookup::Miss,
        }
    }

    /// Inserts a key that is not cached, returning the evicted key if the
    /// cache was full.
    pub fn insert(&mut self, key: u64) -> Result<Option<u64>, CacheError> {
        if self.index.contains_key(&key) {
            return Err(CacheError::AlreadyPresent(key));
        }
        self.insertions += 1;
        if self.index.len() < self.capacity {
            let slot = self.nodes.len();
            self.nodes.push(Node { key, prev: NIL, next: NIL });
            self.index.insert(key, slot);
            self.push_front(slot);
            return Ok(None);
        }
        // reuse the LRU slot
        let slot = self.tail;
        let evicted = self.nodes[slot].key;
        self.unlink(slot);
        self.index.remove(&evicted);
        self.nodes[slot].key = key;
        self.index.insert(key, slot);
        self.push_front(slot);
        Ok(Some(evicted))
    }

    /// Keys from most to least recently used.
    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        let mut cur = self.head;
        std::iter::from_fn(move || {
            if cur == NIL {
                return None;
            }
            let node = &self.nodes[cur];
            cur = node.next;
            Some(node.key)
        })
    }

    fn unlink(&mut self, slot: usize) {
        let (prev, next) = (self.nodes[slot].prev, self.nodes[slot].next);
        if prev == NIL {
            self.head = next;
        } else {
            self.nodes[prev].next = next;
        }
        if next == NIL {
            self.tail = prev;
        } else {
            self.nodes[next].prev = prev;
        }
        self.nodes[slot].prev = NIL;
        self.nodes[slot].next = NIL;
    }

    fn push_front(&mut self, slot: usize) {
        self.nodes[slot].next = self.head;
        self.nodes[slot].prev = NIL;
        if self.head != NIL {
            self.nodes[self.head].prev = slot;
        }
        self.head = slot;
        if self.tail == NIL {
            self.tail = slot;
        }
    }
}
