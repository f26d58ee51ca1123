use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// A node's key store, split into buckets by the slot the bits arrived.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPool {
    pub node: usize,
    pub cap: u64,
    buckets: VecDeque<(u64, u64)>,
}

/// What one call to [`step_pool`] did besides updating the buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Bits requested but not available.
    pub deficit: u64,
    /// Bits discarded because the pool hit its cap.
    pub overflow: u64,
}

impl KeyPool {
    pub fn new(node: usize, cap: u64) -> Self {
        Self {
            node,
            cap,
            buckets: VecDeque::new(),
        }
    }

    /// Pool seeded with `bits` born at `birth`, clamped to the cap.
    pub fn with_initial(node: usize, cap: u64, bits: u64, birth: u64) -> Self {
        let mut p = Self::new(node, cap);
        p.push(birth, bits.min(cap));
        p
    }

    pub fn total(&self) -> u64 {
        self.buckets.iter().map(|b| b.1).sum()
    }

    pub fn buckets(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.buckets.iter().copied()
    }

    fn push(&mut self, birth: u64, bits: u64) {
        if bits == 0 {
            return;
        }
        match self.buckets.back_mut() {
            Some(last) if last.0 == birth => last.1 += bits,
            Some(last) if last.0 > birth => {
                // Out-of-order birth; keep the deque sorted.
                let pos = self.buckets.partition_point(|b| b.0 <= birth);
                if pos > 0 && self.buckets[pos - 1].0 == birth {
                    self.buckets[pos - 1].1 += bits;
                } else {
                    self.buckets.insert(pos, (birth, bits));
                }
            }
            _ => self.buckets.push_back((birth, bits)),
        }
    }

    /// Removes up to `bits`, oldest first. Returns the amount removed.
    fn drain_oldest(&mut self, mut bits: u64) -> u64 {
        let mut taken = 0;
        while bits > 0 {
            let Some(front) = self.buckets.front_mut() else {
                break;
            };
            let t = front.1.min(bits);
            front.1 -= t;
            bits -= t;
            taken += t;
            if front.1 == 0 {
                self.buckets.pop_front();
            }
        }
        taken
    }

    /// Removes up to `bits`, newest first. Returns the amount removed.
    fn drain_newest(&mut self, mut bits: u64) -> u64 {
        let mut taken = 0;
        while bits > 0 {
            let Some(back) = self.buckets.back_mut() else {
                break;
            };
            let t = back.1.min(bits);
            back.1 -= t;
            bits -= t;
            taken += t;
            if back.1 == 0 {
                self.buckets.pop_back();
            }
        }
        taken
    }
}

/// Drops every bucket at least `ttl` slots old.
pub fn expire_keys(pool: &KeyPool, now: u64, ttl: u64) -> (KeyPool, u64) {
    let mut next = pool.clone();
    let expired = expire_in_place(&mut next, now, ttl);
    (next, expired)
}

pub fn expire_in_place(pool: &mut KeyPool, now: u64, ttl: u64) -> u64 {
    let mut expired = 0;
    while let Some(&(birth, bits)) = pool.buckets.front() {
        if now.saturating_sub(birth) >= ttl {
            expired += bits;
            pool.buckets.pop_front();
        } else {
            break;
        }
    }
    expired
}

/// Flows for one slot at one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PoolFlows {
    pub generated_in: u64,
    pub routed_in: u64,
    pub routed_out: u64,
    pub consumed: u64,
    /// Withdrawn from the oldest buckets. Pass 0 when [`expire_keys`]
    /// already removed the stale buckets.
    pub expired: u64,
}

/// Applies one slot of the pool state equation.
///
/// Withdrawals drain oldest buckets first; cap overflow drops the newest.
pub fn step_pool(pool: &KeyPool, now: u64, f: PoolFlows) -> (KeyPool, StepOutcome) {
    let mut next = pool.clone();
    let out = step_in_place(&mut next, now, f);
    (next, out)
}

pub fn step_in_place(pool: &mut KeyPool, now: u64, f: PoolFlows) -> StepOutcome {
    let before = pool.total() as i128;
    let pre = before + f.generated_in as i128 + f.routed_in as i128
        - f.routed_out as i128
        - f.consumed as i128
        - f.expired as i128;

    // Expired bits leave from the oldest end like any other withdrawal.
    pool.push(now, f.generated_in + f.routed_in);
    pool.drain_oldest(f.expired + f.routed_out + f.consumed);

    let mut out = StepOutcome::default();
    if pre < 0 {
        out.deficit = (-pre) as u64;
        debug_assert_eq!(pool.total(), 0);
    } else if pre as u128 > pool.cap as u128 {
        out.overflow = (pre - pool.cap as i128) as u64;
        pool.drain_newest(out.overflow);
    }
    debug_assert_eq!(pool.total() as i128, pre.clamp(0, pool.cap as i128));
    out
}
