//! Monte-Carlo calibration of driver efficacy offsets over seeded virtual
//! device instances.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stpdriver::{
    extract_stp_params, StpDriverState, StpError, StpParams, CALIB_CODES, NEUTRAL_CODE,
};

pub const CODE_BITS: u32 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibError {
    #[error("instance {instance}: {source}")]
    Fit { instance: u32, source: StpError },
    #[error("instance {instance}: offset is not monotone in the calibration code")]
    NonMonotone { instance: u32 },
    #[error("invalid calibration setup: {0}")]
    Invalid(String),
}

/// Equidistant spike train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub rate_hz: f64,
    pub n_events: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            rate_hz: 10.0,
            n_events: 10,
        }
    }
}

impl TrainSpec {
    pub fn isi(&self) -> f64 {
        1.0 / self.rate_hz
    }
}

/// Driver, one synapse and an ideal integrating neuron.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Testbench {
    pub weight: u8,
    pub i_unit: f64,
    pub tau_syn: f64,
    pub c_mem: f64,
    /// Lumped signal attenuation between driver and synapse.
    pub attenuation: f64,
}

impl Default for Testbench {
    fn default() -> Self {
        Self {
            weight: 32,
            i_unit: 100e-12,
            tau_syn: 1e-3,
            c_mem: 100e-12,
            attenuation: 0.9,
        }
    }
}

impl Testbench {
    /// PSP amplitude per unit efficacy.
    pub fn unit_amplitude(&self) -> f64 {
        self.weight as f64 * self.i_unit * self.tau_syn * self.attenuation / self.c_mem
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibConfig {
    pub stp: StpParams,
    pub mismatch_sigma: f64,
    pub train: TrainSpec,
    pub testbench: Testbench,
    pub target: f64,
    pub hist_bins: usize,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            stp: StpParams::default(),
            mismatch_sigma: 0.02,
            train: TrainSpec::default(),
            testbench: Testbench::default(),
            target: 0.0,
            hist_bins: 21,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<(), CalibError> {
        let bad = |m: &str| Err(CalibError::Invalid(m.into()));
        self.stp
            .validate()
            .map_err(|e| CalibError::Invalid(e.to_string()))?;
        if !(self.mismatch_sigma >= 0.0 && self.mismatch_sigma.is_finite()) {
            return bad("mismatch_sigma must be >= 0");
        }
        if self.train.n_events < 3 {
            return bad("stimulus needs at least 3 events");
        }
        if !(self.train.rate_hz > 0.0 && self.train.rate_hz.is_finite()) {
            return bad("stimulus rate must be > 0");
        }
        if !(self.testbench.unit_amplitude() > 0.0 && self.testbench.unit_amplitude().is_finite()) {
            return bad("testbench gain must be positive");
        }
        if self.hist_bins == 0 {
            return bad("hist_bins must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualInstance {
    pub instance_id: u32,
    pub seed: u64,
    pub driver: StpDriverState,
    pub testbench: Testbench,
}

impl VirtualInstance {
    /// Draws the mismatch from stream `instance_id` of the campaign seed.
    pub fn new(config: &CalibConfig, seed: u64, instance_id: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(instance_id as u64);
        let mismatch = if config.mismatch_sigma > 0.0 {
            rng.sample(Normal::new(0.0, config.mismatch_sigma).expect("sigma validated"))
        } else {
            0.0
        };
        Self::with_mismatch(config, seed, instance_id, mismatch)
    }

    pub fn with_mismatch(config: &CalibConfig, seed: u64, instance_id: u32, mismatch: f64) -> Self {
        let mut driver = StpDriverState::new(&config.stp, 0, 0);
        driver.offset_mismatch = mismatch;
        Self {
            instance_id,
            seed,
            driver,
            testbench: config.testbench,
        }
    }

    pub fn mismatch(&self) -> f64 {
        self.driver.offset_mismatch
    }

    /// PSP amplitudes of the train. Each event's current decays fully
    /// before the next, so the integrator step equals the injected charge.
    pub fn stimulate(&mut self, train: &TrainSpec) -> Vec<f64> {
        self.driver.reset_dynamics();
        let gain = self.testbench.unit_amplitude();
        let mut v = 0.0;
        (0..train.n_events)
            .map(|k| {
                let e = self
                    .driver
                    .on_event(k as f64 * train.isi())
                    .expect("train times increase");
                let before = v;
                v += e * gain;
                v - before
            })
            .collect()
    }
}

/// Efficacy offset of the instance at its current code.
pub fn measure_offset(
    instance: &mut VirtualInstance,
    train: &TrainSpec,
) -> Result<f64, CalibError> {
    if train.n_events < 3 {
        return Err(CalibError::Invalid(
            "stimulus needs at least 3 events".into(),
        ));
    }
    let gain = instance.testbench.unit_amplitude();
    let efficacies: Vec<f64> = instance.stimulate(train).iter().map(|a| a / gain).collect();
    if !instance.driver.enabled_stp {
        return Ok(efficacies[0] - 1.0);
    }
    extract_stp_params(&efficacies, train.isi())
        .map(|f| f.offset)
        .map_err(|source| CalibError::Fit {
            instance: instance.instance_id,
            source,
        })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub instance_id: u32,
    pub mismatch: f64,
    /// Offset at the neutral code.
    pub pre: f64,
    /// Offset at the chosen code.
    pub post: f64,
    pub code: u8,
    pub iterations: u32,
    /// Target lies outside the range reachable by the code.
    pub saturated: bool,
    /// `(code, offset)` for every probe, in probe order.
    pub probes: Vec<(u8, f64)>,
}

fn measure_at(
    instance: &mut VirtualInstance,
    code: u8,
    train: &TrainSpec,
) -> Result<f64, CalibError> {
    instance
        .driver
        .set_calib_code(code)
        .map_err(|e| CalibError::Invalid(e.to_string()))?;
    measure_offset(instance, train)
}

/// Successive approximation from the most significant bit: a bit is kept
/// while the offset still exceeds `target`. The final code is the better of
/// the last code above target and its successor.
pub fn calibrate(
    instance: &mut VirtualInstance,
    target: f64,
    train: &TrainSpec,
) -> Result<CalibrationResult, CalibError> {
    let mut code = 0u8;
    let mut probes = Vec::with_capacity(CODE_BITS as usize);
    for bit in (0..CODE_BITS).rev() {
        let trial = code | (1 << bit);
        let offset = measure_at(instance, trial, train)?;
        probes.push((trial, offset));
        if offset > target {
            code = trial;
        }
    }

    let mut sorted = probes.clone();
    sorted.sort_by_key(|p| p.0);
    if sorted.windows(2).any(|w| w[1].1 >= w[0].1) {
        return Err(CalibError::NonMonotone {
            instance: instance.instance_id,
        });
    }
    let at = |c: u8| probes.iter().find(|p| p.0 == c).map(|p| p.1);
    let (chosen, saturated) = if code == 0 {
        let (o1, o2) = (at(1).expect("probed"), at(2).expect("probed"));
        let o0 = 2.0 * o1 - o2;
        if (o0 - target).abs() < (o1 - target).abs() {
            (0, o0 <= target)
        } else {
            (1, false)
        }
    } else if code == CALIB_CODES - 1 {
        (code, true)
    } else {
        let (lo, hi) = (at(code).expect("probed"), at(code + 1).expect("probed"));
        if (hi - target).abs() < (lo - target).abs() {
            (code + 1, false)
        } else {
            (code, false)
        }
    };

    let pre = at(NEUTRAL_CODE).expect("first probe is the neutral code");
    let post = measure_at(instance, chosen, train)?;
    Ok(CalibrationResult {
        instance_id: instance.instance_id,
        mismatch: instance.mismatch(),
        pre,
        post,
        code: chosen,
        iterations: probes.len() as u32,
        saturated,
        probes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins on `[lo, hi)`; out-of-range values land in the edge bins.
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|k| lo + k as f64 * width).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let k = ((v - lo) / width).floor();
            let k = if k.is_nan() {
                0
            } else {
                (k.max(0.0) as usize).min(bins - 1)
            };
            counts[k] += 1;
        }
        Self { edges, counts }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub seed: u64,
    pub target: f64,
    pub results: Vec<CalibrationResult>,
    pub failures: Vec<(u32, String)>,
    pub pre_mean: f64,
    /// Population standard deviations.
    pub pre_std: f64,
    pub post_mean: f64,
    pub post_std: f64,
    pub pre_hist: Histogram,
    pub post_hist: Histogram,
}

impl CalibrationReport {
    /// `instance_id,pre,post,code,iterations`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("instance_id,pre,post,code,iterations\n");
        for r in &self.results {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{},{}",
                r.instance_id, r.pre, r.post, r.code, r.iterations
            );
        }
        out
    }

    /// `bin_lo,bin_hi,pre_count,post_count`.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,pre_count,post_count\n");
        for k in 0..self.pre_hist.counts.len() {
            let _ = writeln!(
                out,
                "{:?},{:?},{},{}",
                self.pre_hist.edges[k],
                self.pre_hist.edges[k + 1],
                self.pre_hist.counts[k],
                self.post_hist.counts[k]
            );
        }
        out
    }

    /// One `driver,code` line per instance.
    pub fn codes_csv(&self) -> String {
        let mut out = String::from("driver,code\n");
        for r in &self.results {
            let _ = writeln!(out, "{},{}", r.instance_id, r.code);
        }
        out
    }
}

/// Parses a `driver,code` table.
pub fn parse_codes_csv(text: &str) -> Result<Vec<(u32, u8)>, CalibError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("driver")) {
            continue;
        }
        let bad = || CalibError::Invalid(format!("line {}: expected `driver,code`", i + 1));
        let (d, c) = line.split_once(',').ok_or_else(bad)?;
        let d: u32 = d.trim().parse().map_err(|_| bad())?;
        let c: u8 = c.trim().parse().map_err(|_| bad())?;
        if c >= CALIB_CODES {
            return Err(bad());
        }
        out.push((d, c));
    }
    Ok(out)
}

/// Calibrates `n_instances` independent instances. Results are ordered by
/// instance id regardless of scheduling.
pub fn run_campaign(
    config: &CalibConfig,
    n_instances: u32,
    seed: u64,
) -> Result<CalibrationReport, CalibError> {
    config.validate()?;
    if n_instances == 0 {
        return Err(CalibError::Invalid("n_instances must be >= 1".into()));
    }
    let outcomes: Vec<Result<CalibrationResult, CalibError>> = (0..n_instances)
        .into_par_iter()
        .map(|id| {
            let mut inst = VirtualInstance::new(config, seed, id);
            calibrate(&mut inst, config.target, &config.train)
        })
        .collect();

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (id, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => results.push(r),
            Err(e) => failures.push((id as u32, e.to_string())),
        }
    }
    let pre: Vec<f64> = results.iter().map(|r| r.pre - config.target).collect();
    let post: Vec<f64> = results.iter().map(|r| r.post - config.target).collect();
    let (pre_mean, pre_std) = mean_std(&pre);
    let (post_mean, post_std) = mean_std(&post);
    let half = 4.0 * config.mismatch_sigma.max(config.stp.calib_gain.abs());
    let (lo, hi) = (config.target - half, config.target + half);
    let abs_pre: Vec<f64> = results.iter().map(|r| r.pre).collect();
    let abs_post: Vec<f64> = results.iter().map(|r| r.post).collect();
    Ok(CalibrationReport {
        seed,
        target: config.target,
        pre_hist: Histogram::new(&abs_pre, lo, hi, config.hist_bins),
        post_hist: Histogram::new(&abs_post, lo, hi, config.hist_bins),
        results,
        failures,
        pre_mean: pre_mean + config.target,
        pre_std,
        post_mean: post_mean + config.target,
        post_std,
    })
}
