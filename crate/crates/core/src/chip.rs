//! The simulated chip: synapse drivers, synapse array, neurons and their
//! digital backend, plus the flat register map seen by playback programs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neuron::{Integrator, NeuronError, NeuronParams, NeuronState, SpikeArbiter, SpikeEvent};
use crate::stpdriver::{EventIfWord, StpDriverState, StpParams, CALIB_CODES, SELECT_MASK_ALL};
use crate::synarray::{SynArrayError, SynapseArray, SynapseParams};

/// Flat register address map.
pub mod regmap {
    /// Spike counter of neuron `n` at `NEURON_COUNTER + n`.
    pub const NEURON_COUNTER: u32 = 0x0000;
    /// Driver configuration of row `r` at `DRIVER_CONFIG + r`:
    /// bits 0..5 row select, 5..10 select mask, 10 STP enable, 11..15 calibration code.
    pub const DRIVER_CONFIG: u32 = 0x0100;
    /// Synapse weight at `SYNAPSE_WEIGHT + row * 0x100 + col`.
    pub const SYNAPSE_WEIGHT: u32 = 0x1_0000;
    /// Synapse address at `SYNAPSE_ADDRESS + row * 0x100 + col`.
    pub const SYNAPSE_ADDRESS: u32 = 0x2_0000;
    pub const BLOCK: u32 = 0x100;
    pub const MATRIX_BLOCK: u32 = 0x1_0000;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChipError {
    #[error("register address {0:#x} is not mapped")]
    Unmapped(u32),
    #[error("value {value} out of range for register {address:#x}")]
    ValueOutOfRange { address: u32, value: u32 },
    #[error("invalid chip configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Neuron(#[from] NeuronError),
    #[error(transparent)]
    Array(#[from] SynArrayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChipConfig {
    /// Synapse rows, one driver each.
    pub rows: usize,
    /// Neuron columns.
    pub neurons: usize,
    pub dt: f64,
    /// Decay time constant of the per-column synaptic input current.
    pub tau_syn: f64,
    pub arbitration_group: usize,
    pub arbitration_depth: usize,
    pub reset_trace_on_read: bool,
    pub neuron: NeuronParams,
    pub synapse: SynapseParams,
    pub stp: StpParams,
}

impl Default for ChipConfig {
    fn default() -> Self {
        Self {
            rows: 32,
            neurons: 16,
            dt: 1e-6,
            tau_syn: 1e-3,
            arbitration_group: 64,
            arbitration_depth: 64,
            reset_trace_on_read: true,
            neuron: NeuronParams::default(),
            synapse: SynapseParams::default(),
            stp: StpParams::default(),
        }
    }
}

impl ChipConfig {
    /// Grid spacing in integer nanoseconds.
    pub fn dt_ns(&self) -> u64 {
        (self.dt * 1e9).round() as u64
    }

    pub fn validate(&self) -> Result<(), ChipError> {
        let cfg = |m: &str| Err(ChipError::Config(m.to_string()));
        if self.neurons == 0 || self.neurons > regmap::BLOCK as usize {
            return cfg("neuron count must be in 1..=256");
        }
        if self.rows == 0 || self.rows > regmap::BLOCK as usize {
            return cfg("row count must be in 1..=256");
        }
        if !(self.dt > 0.0)
            || self.dt_ns() == 0
            || ((self.dt * 1e9) - self.dt_ns() as f64).abs() > 1e-6
        {
            return cfg("dt must be a positive whole number of nanoseconds");
        }
        if !(self.tau_syn > 0.0) {
            return cfg("tau_syn must be > 0");
        }
        if self.arbitration_group == 0 || self.arbitration_depth == 0 {
            return cfg("arbitration group size and depth must be >= 1");
        }
        if self.synapse.cadc_bits == 0 || self.synapse.cadc_bits > 16 {
            return cfg("cadc_bits must be in 1..=16");
        }
        if !(self.synapse.trace_saturation > 0.0
            && self.synapse.tau_plus > 0.0
            && self.synapse.tau_leak > 0.0)
        {
            return cfg("trace saturation and time constants must be > 0");
        }
        self.neuron.validate()?;
        self.stp
            .validate()
            .map_err(|e| ChipError::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChipCounters {
    /// Valid words seen on the event interface.
    pub bus_events: u64,
    /// Driver select matches, one per (word, driver) pair.
    pub driver_matches: u64,
    /// Row deliveries into the synapse array.
    pub deliveries: u64,
    pub neuron_spikes: u64,
}

#[derive(Debug, Clone)]
pub struct Chip {
    config: ChipConfig,
    integrator: Integrator,
    syn_decay: f64,
    neurons: Vec<NeuronState>,
    syn_current: Vec<f64>,
    drivers: Vec<StpDriverState>,
    array: SynapseArray,
    arbiter: SpikeArbiter,
    counters: ChipCounters,
    scratch: Vec<f64>,
    released: Vec<(usize, u64)>,
    /// Rows of `[t, v_0, w_0, v_1, w_1, ...]` after each step, when enabled.
    recording: Option<Vec<f64>>,
}

impl Chip {
    /// Every driver starts with row select equal to its row index (mod 32),
    /// no mask, and neutral calibration.
    pub fn new(config: ChipConfig) -> Result<Self, ChipError> {
        config.validate()?;
        let integrator = config.neuron.integrator(config.dt)?;
        let drivers = (0..config.rows)
            .map(|r| StpDriverState::new(&config.stp, (r as u8) & SELECT_MASK_ALL, 0))
            .collect();
        Ok(Self {
            integrator,
            syn_decay: (-config.dt / config.tau_syn).exp(),
            neurons: vec![NeuronState::at_rest(&config.neuron); config.neurons],
            syn_current: vec![0.0; config.neurons],
            drivers,
            array: SynapseArray::new(config.rows, config.neurons, config.synapse),
            arbiter: SpikeArbiter::new(
                config.neurons,
                config.arbitration_group,
                config.arbitration_depth,
            ),
            counters: ChipCounters::default(),
            scratch: vec![0.0; config.neurons],
            released: Vec::new(),
            recording: None,
            config,
        })
    }

    pub fn config(&self) -> &ChipConfig {
        &self.config
    }

    pub fn array(&self) -> &SynapseArray {
        &self.array
    }

    pub fn array_mut(&mut self) -> &mut SynapseArray {
        &mut self.array
    }

    pub fn drivers(&self) -> &[StpDriverState] {
        &self.drivers
    }

    pub fn drivers_mut(&mut self) -> &mut [StpDriverState] {
        &mut self.drivers
    }

    pub fn neurons(&self) -> &[NeuronState] {
        &self.neurons
    }

    pub fn synaptic_current(&self) -> &[f64] {
        &self.syn_current
    }

    pub fn counters(&self) -> ChipCounters {
        self.counters
    }

    pub fn dropped_spikes(&self) -> u64 {
        self.arbiter.dropped()
    }

    pub fn spike_counts(&self) -> Vec<u64> {
        self.neurons.iter().map(|n| n.spike_count).collect()
    }

    pub fn reset_spike_counts(&mut self) {
        self.neurons.iter_mut().for_each(|n| n.spike_count = 0);
    }

    /// Starts recording `(V, w)` of every neuron at the end of each step.
    pub fn record_membranes(&mut self, enable: bool) {
        self.recording = enable.then(Vec::new);
    }

    pub fn membrane_record(&self) -> Option<&[f64]> {
        self.recording.as_deref()
    }

    /// `time,v_0,w_0,...` with one line per recorded step.
    pub fn membranes_to_csv(&self) -> Option<String> {
        use std::fmt::Write as _;
        let rec = self.recording.as_ref()?;
        let width = 1 + 2 * self.neurons.len();
        let mut out = String::from("time");
        for n in 0..self.neurons.len() {
            let _ = write!(out, ",v_{n},w_{n}");
        }
        out.push('\n');
        for row in rec.chunks(width) {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        Some(out)
    }

    /// Returns the chip to a quiescent state. Configuration (weights,
    /// addresses, driver settings, mismatch) is kept.
    pub fn reset_dynamics(&mut self) {
        let rest = NeuronState::at_rest(&self.config.neuron);
        self.neurons.iter_mut().for_each(|n| *n = rest);
        self.syn_current.iter_mut().for_each(|i| *i = 0.0);
        self.drivers
            .iter_mut()
            .for_each(StpDriverState::reset_dynamics);
        self.array.clear_dynamics();
        self.arbiter.reset();
        self.counters = ChipCounters::default();
        if let Some(r) = &mut self.recording {
            r.clear();
        }
    }

    /// Broadcasts an event-interface word at time `t` to all drivers.
    pub fn inject(&mut self, word: &EventIfWord, t: f64) -> Result<(), ChipError> {
        if !word.is_valid() {
            return Ok(());
        }
        self.counters.bus_events += 1;
        for row in 0..self.drivers.len() {
            if !self.drivers[row].match_select(word) {
                continue;
            }
            self.counters.driver_matches += 1;
            let efficacy = self.drivers[row]
                .on_event(t)
                .map_err(|e| ChipError::Config(e.to_string()))?;
            self.scratch.iter_mut().for_each(|x| *x = 0.0);
            self.array
                .deliver(row, word.address, efficacy, t, &mut self.scratch)?;
            self.counters.deliveries += 1;
            for (i, s) in self.syn_current.iter_mut().zip(&self.scratch) {
                *i += s;
            }
        }
        Ok(())
    }

    /// Integrates grid step `step` (from `step*dt` to `(step+1)*dt`) and
    /// appends the spikes released by the backend in that step to `out`.
    pub fn step(&mut self, step: u64, out: &mut Vec<SpikeEvent>) -> Result<(), ChipError> {
        let dt = self.config.dt;
        let t = step as f64 * dt;
        let t_end = (step + 1) as f64 * dt;
        for n in 0..self.neurons.len() {
            if let Some(ev) =
                self.integrator
                    .step(&mut self.neurons[n], n, self.syn_current[n], t)?
            {
                self.counters.neuron_spikes += 1;
                self.array.on_post_spike(ev.neuron, t_end)?;
                self.arbiter.push(ev.neuron, step + 1);
            }
        }
        for i in &mut self.syn_current {
            *i *= self.syn_decay;
        }
        if let Some(r) = &mut self.recording {
            r.push(t_end);
            r.extend(self.neurons.iter().flat_map(|n| [n.v, n.w]));
        }
        self.released.clear();
        self.arbiter.release(step + 1, &mut self.released);
        out.extend(self.released.iter().map(|&(neuron, _)| SpikeEvent {
            neuron,
            time: t_end,
        }));
        Ok(())
    }

    pub fn read_register(&self, address: u32) -> Result<u32, ChipError> {
        use regmap::*;
        let unmapped = Err(ChipError::Unmapped(address));
        match address {
            a if a < DRIVER_CONFIG => {
                let n = (a - NEURON_COUNTER) as usize;
                match self.neurons.get(n) {
                    Some(s) => Ok(s.spike_count.min(u32::MAX as u64) as u32),
                    None => unmapped,
                }
            }
            a if a < DRIVER_CONFIG + BLOCK => {
                match self.drivers.get((a - DRIVER_CONFIG) as usize) {
                    Some(d) => Ok(encode_driver(d)),
                    None => unmapped,
                }
            }
            a if (SYNAPSE_WEIGHT..SYNAPSE_WEIGHT + MATRIX_BLOCK).contains(&a) => {
                let (r, c) = split_cell(a - SYNAPSE_WEIGHT);
                self.array.weight(r, c).map(u32::from).or(unmapped)
            }
            a if (SYNAPSE_ADDRESS..SYNAPSE_ADDRESS + MATRIX_BLOCK).contains(&a) => {
                let (r, c) = split_cell(a - SYNAPSE_ADDRESS);
                self.array.address(r, c).map(u32::from).or(unmapped)
            }
            _ => unmapped,
        }
    }

    pub fn write_register(&mut self, address: u32, value: u32) -> Result<(), ChipError> {
        use regmap::*;
        let range = ChipError::ValueOutOfRange { address, value };
        match address {
            a if a < DRIVER_CONFIG => {
                let n = (a - NEURON_COUNTER) as usize;
                let s = self
                    .neurons
                    .get_mut(n)
                    .ok_or(ChipError::Unmapped(address))?;
                s.spike_count = value as u64;
                Ok(())
            }
            a if a < DRIVER_CONFIG + BLOCK => {
                let d = self
                    .drivers
                    .get_mut((a - DRIVER_CONFIG) as usize)
                    .ok_or(ChipError::Unmapped(address))?;
                if value >> 15 != 0 {
                    return Err(range);
                }
                d.row_select = (value & 0x1f) as u8;
                d.select_mask = ((value >> 5) & 0x1f) as u8;
                d.enabled_stp = (value >> 10) & 1 == 1;
                let code = ((value >> 11) & 0xf) as u8;
                debug_assert!(code < CALIB_CODES);
                d.calib_code = code;
                Ok(())
            }
            a if (SYNAPSE_WEIGHT..SYNAPSE_WEIGHT + MATRIX_BLOCK).contains(&a) => {
                let (r, c) = split_cell(a - SYNAPSE_WEIGHT);
                self.check_cell(address, r, c)?;
                self.array.set_weight(r, c, value).map_err(|_| range)
            }
            a if (SYNAPSE_ADDRESS..SYNAPSE_ADDRESS + MATRIX_BLOCK).contains(&a) => {
                let (r, c) = split_cell(a - SYNAPSE_ADDRESS);
                self.check_cell(address, r, c)?;
                self.array.set_address(r, c, value).map_err(|_| range)
            }
            _ => Err(ChipError::Unmapped(address)),
        }
    }

    fn check_cell(&self, address: u32, r: usize, c: usize) -> Result<(), ChipError> {
        if r < self.array.rows() && c < self.array.cols() {
            Ok(())
        } else {
            Err(ChipError::Unmapped(address))
        }
    }
}

fn split_cell(offset: u32) -> (usize, usize) {
    (
        (offset / regmap::BLOCK) as usize,
        (offset % regmap::BLOCK) as usize,
    )
}

fn encode_driver(d: &StpDriverState) -> u32 {
    d.row_select as u32
        | (d.select_mask as u32) << 5
        | (d.enabled_stp as u32) << 10
        | (d.calib_code as u32) << 11
}
