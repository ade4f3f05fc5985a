//! Plasticity processing unit: kernels invoked periodically by the executor
//! with row-wise access to weights, digitized correlation traces and neuron
//! rate counters.

mod rstdp;

pub use rstdp::{RewardSource, RowPair, RstdpKernel, RstdpLog, RstdpParams, RstdpState};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chip::{Chip, ChipError};
use crate::synarray::{SynArrayError, SynapseArray, MAX_WEIGHT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PpuError {
    #[error("kernel period must be a positive number of nanoseconds, got {0} s")]
    InvalidPeriod(f64),
    #[error("plasticity configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Chip(#[from] ChipError),
    #[error(transparent)]
    Array(#[from] SynArrayError),
}

/// View of the chip handed to a kernel at a synchronization point.
pub struct PlasticityContext<'a> {
    chip: &'a mut Chip,
    rng: &'a mut ChaCha8Rng,
    time: f64,
    invocation: u64,
}

impl<'a> PlasticityContext<'a> {
    pub fn new(chip: &'a mut Chip, rng: &'a mut ChaCha8Rng, time: f64, invocation: u64) -> Self {
        Self {
            chip,
            rng,
            time,
            invocation,
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Zero-based count of earlier invocations of the running kernel.
    pub fn invocation(&self) -> u64 {
        self.invocation
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    pub fn chip(&self) -> &Chip {
        self.chip
    }

    pub fn synapses(&self) -> &SynapseArray {
        self.chip.array()
    }

    pub fn synapses_mut(&mut self) -> &mut SynapseArray {
        self.chip.array_mut()
    }

    pub fn read_weights(&self, row: usize) -> Result<Vec<u8>, PpuError> {
        let a = self.chip.array();
        (0..a.cols())
            .map(|c| a.weight(row, c).map_err(PpuError::from))
            .collect()
    }

    /// Writes one row of weights, clipping each value to the 6-bit range.
    pub fn write_weights(&mut self, row: usize, weights: &[u8]) -> Result<(), PpuError> {
        let a = self.chip.array_mut();
        if weights.len() != a.cols() {
            return Err(SynArrayError::RowLength {
                expected: a.cols(),
                got: weights.len(),
            }
            .into());
        }
        for (c, &w) in weights.iter().enumerate() {
            a.set_weight(row, c, w.min(MAX_WEIGHT) as u32)?;
        }
        Ok(())
    }

    /// Digitized traces of `row`. Clears the row afterwards when the chip is
    /// configured with `reset_trace_on_read`.
    pub fn cadc_read(&mut self, row: usize) -> Result<Vec<u16>, PpuError> {
        let t = self.time;
        let codes = self.chip.array().cadc_read(row, t)?;
        if self.chip.config().reset_trace_on_read {
            self.chip.array_mut().reset_traces(row, t)?;
        }
        Ok(codes)
    }

    pub fn spike_counts(&self) -> Vec<u64> {
        self.chip.spike_counts()
    }

    pub fn reset_spike_counts(&mut self) {
        self.chip.reset_spike_counts();
    }
}

pub trait PlasticityKernel {
    fn invoke(&mut self, ctx: &mut PlasticityContext<'_>) -> Result<(), PpuError>;
}

impl<F> PlasticityKernel for F
where
    F: FnMut(&mut PlasticityContext<'_>) -> Result<(), PpuError>,
{
    fn invoke(&mut self, ctx: &mut PlasticityContext<'_>) -> Result<(), PpuError> {
        self(ctx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Registration {
    pub index: usize,
    pub period_ns: u64,
}

pub(crate) struct Slot<'k> {
    pub kernel: &'k mut dyn PlasticityKernel,
    pub period_ns: u64,
    pub invocations: u64,
}

/// Kernel registry. Kernels sharing a tick run in registration order.
#[derive(Default)]
pub struct Ppu<'k> {
    pub(crate) slots: Vec<Slot<'k>>,
}

impl<'k> Ppu<'k> {
    pub fn new() -> Self {
        Self { slots: Vec::new() }
    }

    /// Registers `kernel` to run at every multiple of `period` (seconds of
    /// model time), starting one period after program start.
    pub fn schedule(
        &mut self,
        kernel: &'k mut dyn PlasticityKernel,
        period: f64,
    ) -> Result<Registration, PpuError> {
        let ns = period * 1e9;
        if !(ns.is_finite() && ns.round() >= 1.0) {
            return Err(PpuError::InvalidPeriod(period));
        }
        let reg = Registration {
            index: self.slots.len(),
            period_ns: ns.round() as u64,
        };
        self.slots.push(Slot {
            kernel,
            period_ns: reg.period_ns,
            invocations: 0,
        });
        Ok(reg)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn invocations(&self, reg: Registration) -> u64 {
        self.slots[reg.index].invocations
    }
}
