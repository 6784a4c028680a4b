//! Fixed-capacity experience replay.

use alloc::vec::Vec;

use crate::rng::{index, Rng64};

/// Ring buffer that overwrites its oldest entry once full.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<T> {
    items: Vec<T>,
    capacity: usize,
    next: usize,
    pushed: u64,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::new(),
            capacity,
            next: 0,
            pushed: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Transitions pushed over the buffer's lifetime.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
        self.pushed += 1;
    }

    pub fn get(&self, i: usize) -> &T {
        &self.items[i]
    }

    /// `batch` indices drawn uniformly with replacement.
    pub fn sample_indices(&self, batch: usize, rng: &mut Rng64) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..batch).map(|_| index(rng, self.items.len())).collect()
    }

    pub fn sample(&self, batch: usize, rng: &mut Rng64) -> Vec<&T> {
        self.sample_indices(batch, rng).into_iter().map(|i| &self.items[i]).collect()
    }
}

/// Compact storage of a real vector.
pub fn pack(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&v| v as f32).collect()
}

pub fn unpack(values: &[f32]) -> Vec<f64> {
    values.iter().map(|&v| v as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::rng::{stream, stream_rng};

    #[test]
    fn overwrites_oldest() {
        let mut b = ReplayBuffer::new(3);
        for k in 0..5 {
            b.push(k);
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.pushed(), 5);
        let mut all: Vec<i32> = (0..3).map(|i| *b.get(i)).collect();
        all.sort();
        assert_eq!(all, vec![2, 3, 4]);
    }

    #[test]
    fn sampling_replays() {
        let mut b = ReplayBuffer::new(10);
        for k in 0..10 {
            b.push(k);
        }
        let mut r1 = stream_rng(1, stream::REPLAY);
        let mut r2 = stream_rng(1, stream::REPLAY);
        assert_eq!(b.sample_indices(16, &mut r1), b.sample_indices(16, &mut r2));
        assert!(ReplayBuffer::<u8>::new(2).sample(4, &mut r1).is_empty());
    }
}
