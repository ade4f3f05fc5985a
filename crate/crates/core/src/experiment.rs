//! Reward-modulated pattern discrimination: two overlapping input patterns
//! embedded in Poisson background, even neurons rewarded for answering
//! pattern A, odd neurons for pattern B.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chip::{Chip, ChipConfig, ChipError};
use crate::executor::{ExecError, Executor, ExecutorConfig, Instruction, PlaybackProgram};
use crate::ppu::{Ppu, PpuError, RewardSource, RowPair, RstdpKernel, RstdpParams, RstdpState};
use crate::stpdriver::EventIfWord;
use crate::synarray::{RowSign, SynArrayError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Chip(#[from] ChipError),
    #[error(transparent)]
    Ppu(#[from] PpuError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Array(#[from] SynArrayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_inputs: usize,
    pub n_neurons: usize,
    pub pattern_size: usize,
    pub overlap_fraction: f64,
    /// Background Poisson rate per input channel (Hz).
    pub nu: f64,
    pub trial_duration: f64,
    /// Time of the synchronous pattern volley within a trial.
    pub pattern_offset: f64,
    /// Trials between logged learning-curve points.
    pub trials_per_step: usize,
    /// Number of logged steps; the run lasts `steps * trials_per_step` trials.
    pub steps: usize,
    pub gamma: f64,
    pub eta: f64,
    pub xi_sigma: f64,
    /// Initial signed weights are drawn from Normal(mean, sigma).
    pub init_weight_mean: f64,
    pub init_weight_sigma: f64,
    /// Weight trajectory is written every this many steps.
    pub weight_log_every: usize,
    /// Set from the run seed rather than the experiment section.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_inputs: 16,
            n_neurons: 16,
            pattern_size: 5,
            overlap_fraction: 0.4,
            nu: 5.0,
            trial_duration: 20e-3,
            pattern_offset: 5e-3,
            trials_per_step: 1,
            steps: 500,
            gamma: 0.05,
            eta: 20.0,
            xi_sigma: 0.5,
            init_weight_mean: 30.0,
            init_weight_sigma: 5.0,
            weight_log_every: 10,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn n_trials(&self) -> usize {
        self.steps * self.trials_per_step
    }

    pub fn overlap_channels(&self) -> usize {
        (self.overlap_fraction * self.pattern_size as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.n_inputs == 0 || self.n_inputs > 32 {
            return bad("n_inputs must be in 1..=32".into());
        }
        if self.n_neurons == 0 {
            return bad("n_neurons must be >= 1".into());
        }
        if self.pattern_size == 0 || self.pattern_size > self.n_inputs {
            return bad(format!("pattern_size must be in 1..={}", self.n_inputs));
        }
        if !(0.0..=1.0).contains(&self.overlap_fraction) {
            return bad("overlap_fraction must be in [0, 1]".into());
        }
        let k = self.overlap_fraction * self.pattern_size as f64;
        if (k - k.round()).abs() > 1e-9 {
            return bad(format!(
                "overlap_fraction * pattern_size = {k} is not an integer"
            ));
        }
        if 2 * self.pattern_size - self.overlap_channels() > self.n_inputs {
            return bad("patterns do not fit into the input channels".into());
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return bad("nu must be >= 0".into());
        }
        if !(self.trial_duration > 0.0)
            || !(0.0..self.trial_duration).contains(&self.pattern_offset)
        {
            return bad("need trial_duration > 0 and 0 <= pattern_offset < trial_duration".into());
        }
        if self.trials_per_step == 0 || self.steps == 0 || self.weight_log_every == 0 {
            return bad("steps, trials_per_step and weight_log_every must be >= 1".into());
        }
        if !(self.init_weight_sigma >= 0.0) {
            return bad("init_weight_sigma must be >= 0".into());
        }
        RstdpState::new(self.n_neurons, self.n_inputs, self.rstdp_params())?;
        Ok(())
    }

    pub fn rstdp_params(&self) -> RstdpParams {
        RstdpParams {
            gamma: self.gamma,
            eta: self.eta,
            xi_sigma: self.xi_sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
    Background,
}

/// Channel sets of the two patterns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Patterns {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

impl Patterns {
    /// Draws A uniformly, then builds B from `overlap` channels of A and the
    /// rest from outside A. Both sets are returned sorted.
    pub fn generate<R: Rng + ?Sized>(config: &ExperimentConfig, rng: &mut R) -> Self {
        let n = config.n_inputs;
        let size = config.pattern_size;
        let overlap = config.overlap_channels();
        let mut a: Vec<usize> = sample(rng, n, size).into_vec();
        let shared: Vec<usize> = sample(rng, size, overlap).iter().map(|k| a[k]).collect();
        let outside: Vec<usize> = (0..n).filter(|c| !a.contains(c)).collect();
        let mut b: Vec<usize> = shared;
        b.extend(
            sample(rng, outside.len(), size - overlap)
                .iter()
                .map(|k| outside[k]),
        );
        a.sort_unstable();
        b.sort_unstable();
        Self { a, b }
    }

    pub fn channels(&self, label: Label) -> &[usize] {
        match label {
            Label::A => &self.a,
            Label::B => &self.b,
            Label::Background => &[],
        }
    }
}

/// Per-channel spike times within one trial, sorted.
pub fn generate_stimulus<R: Rng + ?Sized>(
    config: &ExperimentConfig,
    patterns: &Patterns,
    label: Label,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let mut trains = vec![Vec::new(); config.n_inputs];
    if config.nu > 0.0 {
        let exp = Exp::new(config.nu).expect("rate validated");
        for train in &mut trains {
            let mut t = exp.sample(rng);
            while t < config.trial_duration {
                train.push(t);
                t += exp.sample(rng);
            }
        }
    }
    for &c in patterns.channels(label) {
        trains[c].push(config.pattern_offset);
        trains[c].sort_by(f64::total_cmp);
    }
    trains
}

/// Neuron `i` answers pattern A when even, pattern B when odd.
pub fn role(neuron: usize) -> Label {
    if neuron.is_multiple_of(2) {
        Label::A
    } else {
        Label::B
    }
}

/// Reward 1 for firing on the neuron's own pattern or staying silent otherwise.
pub fn assign_reward(role: Label, label: Label, fired: bool) -> f64 {
    if (label == role) == fired {
        1.0
    } else {
        0.0
    }
}

struct TrialRewards {
    labels: Vec<Label>,
}

impl RewardSource for TrialRewards {
    fn rewards(&mut self, invocation: u64, fired: &[bool]) -> Vec<f64> {
        let label = self.labels[invocation as usize];
        fired
            .iter()
            .enumerate()
            .map(|(i, &f)| assign_reward(role(i), label, f))
            .collect()
    }
}

/// Linear interpolation between closest ranks.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub median: f64,
    pub p15: f64,
    pub p85: f64,
}

impl Band {
    pub fn of(values: &[f64]) -> Self {
        Self {
            median: percentile(values, 0.5),
            p15: percentile(values, 0.15),
            p85: percentile(values, 0.85),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub final_even: Band,
    pub final_odd: Band,
    /// First step at which both population medians reached 0.9.
    pub converged_at_step: Option<usize>,
    pub converged: bool,
    /// Neurons ending below 0.5 expected reward with every weight at the clip.
    pub diverged_neurons: Vec<usize>,
    pub dale_violations: u64,
    pub model_time_per_step: f64,
    pub wall_time_per_step: f64,
    pub output_spikes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingResult {
    pub patterns: Patterns,
    pub labels: Vec<Label>,
    /// `[step][neuron]` expected reward after each step.
    pub expected_reward: Vec<Vec<f64>>,
    /// `[step][neuron]` reward of the last trial of each step.
    pub rewards: Vec<Vec<f64>>,
    pub even_band: Vec<Band>,
    pub odd_band: Vec<Band>,
    /// `(step, input-major signed weights)`, every `weight_log_every` steps.
    pub weights: Vec<(usize, Vec<f64>)>,
    pub final_weights: Vec<f64>,
    pub metrics: Metrics,
}

impl TrainingResult {
    /// `step,neuron,expected_reward`.
    pub fn learning_curve_csv(&self) -> String {
        let mut out = String::from("step,neuron,expected_reward\n");
        for (s, row) in self.expected_reward.iter().enumerate() {
            for (i, r) in row.iter().enumerate() {
                let _ = writeln!(out, "{s},{i},{r:?}");
            }
        }
        out
    }

    /// `step,population,median,p15,p85`.
    pub fn population_csv(&self) -> String {
        let mut out = String::from("step,population,median,p15,p85\n");
        for (s, (e, o)) in self.even_band.iter().zip(&self.odd_band).enumerate() {
            for (name, b) in [("even", e), ("odd", o)] {
                let _ = writeln!(out, "{s},{name},{:?},{:?},{:?}", b.median, b.p15, b.p85);
            }
        }
        out
    }

    /// `step,input,neuron,weight` with signed weights.
    pub fn weights_csv(&self, n_neurons: usize) -> String {
        let mut out = String::from("step,input,neuron,weight\n");
        for (s, w) in &self.weights {
            for (k, v) in w.iter().enumerate() {
                let _ = writeln!(out, "{s},{},{},{v:?}", k / n_neurons, k % n_neurons);
            }
        }
        out
    }

    /// `key=value` lines; wall-clock timing is excluded to keep the file
    /// reproducible and reported separately.
    pub fn summary(&self) -> String {
        let m = &self.metrics;
        let mut out = String::new();
        let _ = writeln!(out, "pattern_a={:?}", self.patterns.a);
        let _ = writeln!(out, "pattern_b={:?}", self.patterns.b);
        let _ = writeln!(out, "steps={}", self.expected_reward.len());
        for (name, b) in [("even", m.final_even), ("odd", m.final_odd)] {
            let _ = writeln!(out, "final_{name}_median={:?}", b.median);
            let _ = writeln!(out, "final_{name}_p15={:?}", b.p15);
            let _ = writeln!(out, "final_{name}_p85={:?}", b.p85);
        }
        let _ = writeln!(
            out,
            "converged_at_step={}",
            m.converged_at_step
                .map_or("none".to_string(), |s| s.to_string())
        );
        let _ = writeln!(out, "converged={}", m.converged);
        let _ = writeln!(out, "diverged_neurons={:?}", m.diverged_neurons);
        let _ = writeln!(out, "dale_violations={}", m.dale_violations);
        let _ = writeln!(out, "output_spikes={}", m.output_spikes);
        let _ = writeln!(out, "model_time_per_step_s={:?}", m.model_time_per_step);
        out
    }
}

/// Independent random streams derived from the experiment seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Connects input `j` to rows `2j` (excitatory) and `2j + 1` (inhibitory),
/// both driven by select `j` and address `j`, with STP bypassed.
pub fn wire_chip(chip: &mut Chip, n_inputs: usize) -> Result<Vec<RowPair>, ExperimentError> {
    if chip.config().rows < 2 * n_inputs {
        return Err(ExperimentError::Config(format!(
            "{} inputs need {} synapse rows, chip has {}",
            n_inputs,
            2 * n_inputs,
            chip.config().rows
        )));
    }
    let mut pairs = Vec::with_capacity(n_inputs);
    for j in 0..n_inputs {
        let (e, h) = (2 * j, 2 * j + 1);
        for (row, sign) in [(e, RowSign::Excitatory), (h, RowSign::Inhibitory)] {
            let d = &mut chip.drivers_mut()[row];
            d.row_select = j as u8;
            d.select_mask = 0;
            d.enabled_stp = false;
            let array = chip.array_mut();
            array.set_row_sign(row, sign)?;
            array.fill_row_address(row, j as u32)?;
        }
        pairs.push(RowPair {
            excitatory: e,
            inhibitory: h,
        });
    }
    Ok(pairs)
}

/// Playback program for all trials back to back, ending in HALT.
pub fn build_program(
    config: &ExperimentConfig,
    patterns: &Patterns,
    labels: &[Label],
    rng: &mut ChaCha8Rng,
) -> PlaybackProgram {
    let trial_ns = (config.trial_duration * 1e9).round() as u64;
    let mut program = PlaybackProgram::new();
    let mut events: Vec<(u64, usize)> = Vec::new();
    for (k, &label) in labels.iter().enumerate() {
        events.clear();
        let start = k as u64 * trial_ns;
        for (c, train) in generate_stimulus(config, patterns, label, rng)
            .iter()
            .enumerate()
        {
            events.extend(
                train
                    .iter()
                    .map(|t| (start + ((t * 1e9).round() as u64).min(trial_ns - 1), c)),
            );
        }
        events.sort_unstable();
        for &(t, c) in &events {
            let word = EventIfWord::new(c as u8, c as u8).expect("channel < 32");
            program
                .push(t, Instruction::Spike(word))
                .expect("events are sorted");
        }
    }
    program
        .push(labels.len() as u64 * trial_ns, Instruction::Halt)
        .expect("halt is last");
    program
}

pub fn train(
    config: &ExperimentConfig,
    chip_config: &ChipConfig,
    executor: &ExecutorConfig,
) -> Result<TrainingResult, ExperimentError> {
    config.validate()?;
    if chip_config.neurons < config.n_neurons {
        return Err(ExperimentError::Config(format!(
            "{} neurons requested, chip has {}",
            config.n_neurons, chip_config.neurons
        )));
    }
    let mut chip = Chip::new(*chip_config)?;
    let pairs = wire_chip(&mut chip, config.n_inputs)?;

    let patterns = Patterns::generate(config, &mut stream(config.seed, 0));
    let mut label_rng = stream(config.seed, 1);
    let labels: Vec<Label> = (0..config.n_trials())
        .map(|_| [Label::A, Label::B, Label::Background][label_rng.random_range(0..3)])
        .collect();
    let program = build_program(config, &patterns, &labels, &mut stream(config.seed, 2));

    let mut state = RstdpState::new(config.n_neurons, config.n_inputs, config.rstdp_params())?;
    let mut init_rng = stream(config.seed, 3);
    let init = Normal::new(config.init_weight_mean, config.init_weight_sigma)
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    for j in 0..config.n_inputs {
        for i in 0..config.n_neurons {
            state.set_weight(i, j, init.sample(&mut init_rng));
        }
    }
    state.write_signed_weights(chip.array_mut(), &pairs)?;
    let initial_weights = state.weights().to_vec();

    let mut kernel = RstdpKernel::new(
        state,
        pairs,
        TrialRewards {
            labels: labels.clone(),
        },
        config.trials_per_step as u64,
    );
    let started = Instant::now();
    let trace = {
        let mut ppu = Ppu::new();
        ppu.schedule(&mut kernel, config.trial_duration)?;
        Executor::new(*executor).execute(
            &program,
            &mut chip,
            &mut ppu,
            stream(config.seed, 4).random(),
        )?
    };
    let wall = started.elapsed().as_secs_f64();

    let log = &kernel.log;
    let even: Vec<usize> = (0..config.n_neurons).step_by(2).collect();
    let odd: Vec<usize> = (1..config.n_neurons).step_by(2).collect();
    let pick = |row: &[f64], idx: &[usize]| idx.iter().map(|&i| row[i]).collect::<Vec<f64>>();
    let even_band: Vec<Band> = log
        .expected_reward
        .iter()
        .map(|r| Band::of(&pick(r, &even)))
        .collect();
    let odd_band: Vec<Band> = log
        .expected_reward
        .iter()
        .map(|r| Band::of(&pick(r, &odd)))
        .collect();

    let mut weights = vec![(0usize, initial_weights)];
    for (s, w) in log.weights.iter().enumerate() {
        if (s + 1) % config.weight_log_every == 0 {
            weights.push((s + 1, w.clone()));
        }
    }

    let last = log.expected_reward.last().cloned().unwrap_or_default();
    let final_w = kernel.state.weights().to_vec();
    let diverged_neurons = (0..config.n_neurons)
        .filter(|&i| {
            last.get(i).is_some_and(|&r| r < 0.5)
                && (0..config.n_inputs).all(|j| final_w[j * config.n_neurons + i].abs() >= 63.0)
        })
        .collect();
    let single = |b: &[Band]| b.last().copied().unwrap_or(Band::of(&[]));
    let final_even = single(&even_band);
    let final_odd = if odd.is_empty() {
        final_even
    } else {
        single(&odd_band)
    };
    let converged_at_step = even_band
        .iter()
        .zip(&odd_band)
        .position(|(e, o)| e.median >= 0.9 && (odd.is_empty() || o.median >= 0.9));
    let converged = converged_at_step.is_some() && final_even.p15 > 0.8 && final_odd.p15 > 0.8;
    let steps = log.expected_reward.len().max(1) as f64;
    let metrics = Metrics {
        final_even,
        final_odd,
        converged_at_step,
        converged,
        diverged_neurons,
        dale_violations: log.dale_violations,
        model_time_per_step: config.trial_duration * config.trials_per_step as f64,
        wall_time_per_step: wall / steps,
        output_spikes: trace.stats.spikes_out,
    };

    Ok(TrainingResult {
        patterns,
        labels,
        expected_reward: log.expected_reward.clone(),
        rewards: log.rewards.clone(),
        even_band,
        odd_band,
        weights,
        final_weights: final_w,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_overlap() {
        let cfg = ExperimentConfig::default();
        for seed in 0..50 {
            let p = Patterns::generate(&cfg, &mut stream(seed, 0));
            let shared = p.a.iter().filter(|c| p.b.contains(c)).count();
            assert_eq!((p.a.len(), p.b.len(), shared), (5, 5, 2));
        }
        let a = Patterns::generate(&cfg, &mut stream(3, 0));
        assert_eq!(a, Patterns::generate(&cfg, &mut stream(3, 0)));
    }

    #[test]
    fn silent_background_without_rate() {
        let cfg = ExperimentConfig {
            nu: 0.0,
            ..ExperimentConfig::default()
        };
        let p = Patterns::generate(&cfg, &mut stream(0, 0));
        let s = generate_stimulus(&cfg, &p, Label::Background, &mut stream(0, 1));
        assert!(s.iter().all(Vec::is_empty));
        let s = generate_stimulus(&cfg, &p, Label::A, &mut stream(0, 1));
        for (c, t) in s.iter().enumerate() {
            assert_eq!(t.len(), p.a.contains(&c) as usize);
        }
    }

    #[test]
    fn poisson_counts() {
        let cfg = ExperimentConfig {
            nu: 100.0,
            ..ExperimentConfig::default()
        };
        let p = Patterns::generate(&cfg, &mut stream(0, 0));
        let mut rng = stream(0, 1);
        let trials = 10_000;
        let mut counts = vec![0usize; cfg.n_inputs];
        for _ in 0..trials {
            for (c, t) in generate_stimulus(&cfg, &p, Label::Background, &mut rng)
                .iter()
                .enumerate()
            {
                counts[c] += t.len();
            }
        }
        let lambda = cfg.nu * cfg.trial_duration;
        let sigma_mean = (lambda / trials as f64).sqrt();
        for c in counts {
            let mean = c as f64 / trials as f64;
            assert!(
                (mean - lambda).abs() < 3.0 * sigma_mean,
                "{mean} vs {lambda}"
            );
        }
    }

    #[test]
    fn reward_rule_exhaustive() {
        for neuron in 0..2 {
            for label in [Label::A, Label::B, Label::Background] {
                for fired in [false, true] {
                    let own =
                        (neuron == 0 && label == Label::A) || (neuron == 1 && label == Label::B);
                    let want = if own { fired } else { !fired };
                    assert_eq!(assign_reward(role(neuron), label, fired), want as u8 as f64);
                }
            }
        }
        assert_eq!(assign_reward(role(0), Label::A, true), 1.0);
        assert_eq!(assign_reward(role(0), Label::Background, true), 0.0);
        assert_eq!(assign_reward(role(1), Label::A, false), 1.0);
    }

    #[test]
    fn percentiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.5), 2.5);
        assert!((percentile(&v, 0.15) - 1.45).abs() < 1e-12);
        assert_eq!(percentile(&[7.0], 0.85), 7.0);
    }

    #[test]
    fn rejects_fractional_overlap() {
        let cfg = ExperimentConfig {
            overlap_fraction: 0.3,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
