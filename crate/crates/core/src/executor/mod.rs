//! Timed execution of playback programs against a [`Chip`].
//!
//! All actions live in one queue ordered by `(time, sequence)`. Program
//! instructions are enqueued first, so at equal times they precede kernel
//! ticks, and kernels sharing a tick run in registration order. Neuron
//! dynamics advance on the `dt` grid up to each action's time before the
//! action applies.

mod program;
mod trace;

pub use program::{
    format_us, parse_program, Instruction, ParseError, ParseErrorKind, PlaybackProgram,
    TimedInstruction,
};
pub use trace::{ErrorCode, ExecStats, Payload, Trace, TraceEntry, TraceKind};

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chip::{Chip, ChipError};
use crate::neuron::SpikeEvent;
use crate::ppu::{PlasticityContext, Ppu, PpuError};
use crate::stpdriver::EventIfWord;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("program has no HALT instruction")]
    MissingHalt,
    #[error(transparent)]
    Chip(#[from] ChipError),
    #[error("plasticity kernel {index} failed at t={time_ns} ns: {source}")]
    Kernel {
        index: usize,
        time_ns: u64,
        source: PpuError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutorConfig {
    /// Delay between a SPIKE instruction and the word reaching the drivers.
    pub injection_latency_ns: u64,
    pub read_latency_ns: u64,
    pub cadc_latency_ns: u64,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            injection_latency_ns: 2_000,
            read_latency_ns: 1_000,
            cadc_latency_ns: 1_000,
        }
    }
}

enum Action {
    Instruction(usize),
    Inject(EventIfWord),
    Emit(TraceEntry),
    Tick(usize),
}

struct Queued {
    time_ns: u64,
    seq: u64,
    action: Action,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.time_ns, self.seq) == (other.time_ns, other.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time_ns, other.seq).cmp(&(self.time_ns, self.seq))
    }
}

struct Queue {
    heap: BinaryHeap<Queued>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, time_ns: u64, action: Action) {
        self.heap.push(Queued {
            time_ns,
            seq: self.seq,
            action,
        });
        self.seq += 1;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Executor {
    pub config: ExecutorConfig,
}

struct Run<'c> {
    chip: &'c mut Chip,
    dt_ns: u64,
    step: u64,
    spikes: Vec<SpikeEvent>,
    trace: Trace,
}

impl Run<'_> {
    /// Integrates every grid step that ends at or before `t_ns`.
    fn advance_to(&mut self, t_ns: u64) -> Result<(), ChipError> {
        while (self.step + 1) * self.dt_ns <= t_ns {
            self.spikes.clear();
            self.chip.step(self.step, &mut self.spikes)?;
            self.step += 1;
            let ts = self.step * self.dt_ns;
            for s in &self.spikes {
                self.trace.entries.push(TraceEntry {
                    timestamp_ns: ts,
                    kind: TraceKind::SpikeOut,
                    payload: Payload::Spike {
                        neuron: s.neuron as u32,
                    },
                });
            }
        }
        Ok(())
    }

    fn error(&mut self, time_ns: u64, address: u32, err: &ChipError) {
        let code = match err {
            ChipError::ValueOutOfRange { .. } => ErrorCode::ValueOutOfRange,
            ChipError::Array(_) => ErrorCode::RowOutOfRange,
            _ => ErrorCode::UnmappedRegister,
        };
        self.trace.stats.errors += 1;
        self.trace.entries.push(TraceEntry {
            timestamp_ns: time_ns,
            kind: TraceKind::Error,
            payload: Payload::Error { code, address },
        });
    }
}

impl Executor {
    pub fn new(config: ExecutorConfig) -> Self {
        Self { config }
    }

    /// Runs `program` from a quiescent chip. Chip configuration persists
    /// across runs; neuron, driver and trace dynamics are reset first.
    /// `seed` drives the random stream handed to plasticity kernels.
    pub fn execute(
        &self,
        program: &PlaybackProgram,
        chip: &mut Chip,
        ppu: &mut Ppu<'_>,
        seed: u64,
    ) -> Result<Trace, ExecError> {
        let halt = program.halt_time().ok_or(ExecError::MissingHalt)?;
        chip.reset_dynamics();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut queue = Queue {
            heap: BinaryHeap::with_capacity(program.len() + ppu.len()),
            seq: 0,
        };
        for (k, i) in program.instructions().iter().enumerate() {
            if i.instruction != Instruction::Halt {
                queue.push(i.time_ns, Action::Instruction(k));
            }
        }
        for (k, slot) in ppu.slots.iter_mut().enumerate() {
            slot.invocations = 0;
            if slot.period_ns <= halt {
                queue.push(slot.period_ns, Action::Tick(k));
            }
        }

        let dt_ns = chip.config().dt_ns();
        let mut run = Run {
            chip,
            dt_ns,
            step: 0,
            spikes: Vec::new(),
            trace: Trace::default(),
        };
        run.trace.stats.instructions = program.len() as u64;

        while let Some(Queued {
            time_ns: t, action, ..
        }) = queue.heap.pop()
        {
            run.advance_to(t)?;
            match action {
                Action::Instruction(k) => match program.instructions()[k].instruction {
                    Instruction::WaitUntil | Instruction::Halt => {}
                    Instruction::Spike(word) => {
                        run.trace.stats.spikes_injected += 1;
                        queue.push(t + self.config.injection_latency_ns, Action::Inject(word));
                    }
                    Instruction::Write { address, value } => {
                        if let Err(e) = run.chip.write_register(address, value) {
                            run.error(t, address, &e);
                        }
                    }
                    Instruction::Read { address } => match run.chip.read_register(address) {
                        Ok(value) => queue.push(
                            t + self.config.read_latency_ns,
                            Action::Emit(TraceEntry {
                                timestamp_ns: t + self.config.read_latency_ns,
                                kind: TraceKind::ReadResponse,
                                payload: Payload::Register { address, value },
                            }),
                        ),
                        Err(e) => run.error(t, address, &e),
                    },
                    Instruction::CadcSample { row } => {
                        match run.chip.array().cadc_read(row as usize, t as f64 * 1e-9) {
                            Ok(codes) => queue.push(
                                t + self.config.cadc_latency_ns,
                                Action::Emit(TraceEntry {
                                    timestamp_ns: t + self.config.cadc_latency_ns,
                                    kind: TraceKind::CadcData,
                                    payload: Payload::Cadc { row, codes },
                                }),
                            ),
                            Err(e) => run.error(t, row, &ChipError::Array(e)),
                        }
                    }
                },
                Action::Inject(word) => run.chip.inject(&word, t as f64 * 1e-9)?,
                Action::Emit(entry) => run.trace.entries.push(entry),
                Action::Tick(k) => {
                    let slot = &mut ppu.slots[k];
                    let mut ctx = PlasticityContext::new(
                        run.chip,
                        &mut rng,
                        t as f64 * 1e-9,
                        slot.invocations,
                    );
                    slot.kernel
                        .invoke(&mut ctx)
                        .map_err(|source| ExecError::Kernel {
                            index: k,
                            time_ns: t,
                            source,
                        })?;
                    slot.invocations += 1;
                    run.trace.stats.kernel_invocations += 1;
                    let next = t + slot.period_ns;
                    if next <= halt {
                        queue.push(next, Action::Tick(k));
                    }
                }
            }
        }
        run.advance_to(halt)?;

        let c = run.chip.counters();
        let stats = &mut run.trace.stats;
        stats.bus_events = c.bus_events;
        stats.driver_matches = c.driver_matches;
        stats.deliveries = c.deliveries;
        stats.neuron_spikes = c.neuron_spikes;
        stats.dropped_spikes = run.chip.dropped_spikes();
        stats.steps = run.step;
        stats.end_time_ns = run.step * dt_ns;
        stats.spikes_out = run
            .trace
            .entries
            .iter()
            .filter(|e| e.kind == TraceKind::SpikeOut)
            .count() as u64;
        Ok(run.trace)
    }
}

/// Runs `program` with default latencies and no plasticity kernels.
pub fn execute(program: &PlaybackProgram, chip: &mut Chip, seed: u64) -> Result<Trace, ExecError> {
    Executor::default().execute(program, chip, &mut Ppu::new(), seed)
}
