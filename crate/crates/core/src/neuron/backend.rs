//! Digital neuron backend: per-group priority-encoder arbitration.

use std::collections::VecDeque;

use super::SpikeEvent;

/// Stateful arbiter. Each group releases at most one event per step, the
/// lowest pending neuron index wins, losers wait in a bounded per-group
/// queue. Overflowing events are dropped and counted.
#[derive(Debug, Clone)]
pub struct SpikeArbiter {
    group_size: usize,
    depth: usize,
    pending: Vec<VecDeque<u64>>,
    group_pending: Vec<usize>,
    dropped: u64,
}

impl SpikeArbiter {
    pub fn new(n_neurons: usize, group_size: usize, depth: usize) -> Self {
        let group_size = group_size.max(1);
        let n_groups = n_neurons.div_ceil(group_size);
        Self {
            group_size,
            depth: depth.max(1),
            pending: vec![VecDeque::new(); n_neurons],
            group_pending: vec![0; n_groups],
            dropped: 0,
        }
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    /// Events lost to queue overflow since construction or the last reset.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn is_idle(&self) -> bool {
        self.group_pending.iter().all(|&n| n == 0)
    }

    pub fn reset(&mut self) {
        self.pending.iter_mut().for_each(VecDeque::clear);
        self.group_pending.iter_mut().for_each(|n| *n = 0);
        self.dropped = 0;
    }

    /// Latches a spike of `neuron` produced at grid step `step`.
    pub fn push(&mut self, neuron: usize, step: u64) {
        if neuron >= self.pending.len() {
            self.pending.resize(neuron + 1, VecDeque::new());
            self.group_pending
                .resize((neuron + 1).div_ceil(self.group_size), 0);
        }
        let g = neuron / self.group_size;
        if self.group_pending[g] >= self.depth {
            self.dropped += 1;
            return;
        }
        self.group_pending[g] += 1;
        self.pending[neuron].push_back(step);
    }

    /// Releases the winner of every group for grid step `step`, appending
    /// `(neuron, origin_step)` pairs in group order.
    pub fn release(&mut self, step: u64, out: &mut Vec<(usize, u64)>) {
        for g in 0..self.group_pending.len() {
            if self.group_pending[g] == 0 {
                continue;
            }
            let lo = g * self.group_size;
            let hi = (lo + self.group_size).min(self.pending.len());
            for n in lo..hi {
                if let Some(&origin) = self.pending[n].front() {
                    if origin <= step {
                        self.pending[n].pop_front();
                        self.group_pending[g] -= 1;
                        out.push((n, origin));
                        break;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArbitrationOutcome {
    /// Released events, timestamped with their release step.
    pub released: Vec<SpikeEvent>,
    pub dropped: u64,
}

/// Replays a batch of spikes on the grid `dt` through a fresh arbiter.
pub fn arbitrate_spikes(
    events: &[SpikeEvent],
    group_size: usize,
    dt: f64,
    depth: usize,
) -> ArbitrationOutcome {
    let mut steps: Vec<(u64, usize)> = events
        .iter()
        .map(|e| ((e.time / dt).round().max(0.0) as u64, e.neuron))
        .collect();
    // stable: same-neuron events keep their input order
    steps.sort_by_key(|&(s, n)| (s, n));

    let n_neurons = steps.iter().map(|&(_, n)| n + 1).max().unwrap_or(0);
    let mut arb = SpikeArbiter::new(n_neurons, group_size, depth);
    let mut released = Vec::with_capacity(events.len());
    let mut buf = Vec::new();
    let mut i = 0;
    let mut step = steps.first().map(|&(s, _)| s).unwrap_or(0);
    while i < steps.len() || !arb.is_idle() {
        while i < steps.len() && steps[i].0 == step {
            arb.push(steps[i].1, step);
            i += 1;
        }
        buf.clear();
        arb.release(step, &mut buf);
        released.extend(buf.iter().map(|&(n, _)| SpikeEvent {
            neuron: n,
            time: step as f64 * dt,
        }));
        step = if arb.is_idle() && i < steps.len() {
            steps[i].0
        } else {
            step + 1
        };
    }
    ArbitrationOutcome {
        released,
        dropped: arb.dropped(),
    }
}
