//! Adaptive exponential integrate-and-fire neurons on a fixed time grid.
//!
//! The linear leak and adaptation parts are integrated with exponential
//! Euler, the exponential spike-initiation term is held constant over a
//! step. For `a = b = 0` and `delta_t = 0` this is the exact solution of the
//! leaky integrator under piecewise-constant input.

mod backend;

pub use backend::{arbitrate_spikes, ArbitrationOutcome, SpikeArbiter};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuronError {
    #[error("integration overflow in neuron {neuron} at t={t:e} s (V={v:e}, w={w:e})")]
    IntegrationOverflow {
        neuron: usize,
        t: f64,
        v: f64,
        w: f64,
    },
    #[error("invalid neuron parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
}

/// AdEx constants. All quantities in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub c: f64,
    pub g_l: f64,
    pub e_l: f64,
    pub v_t: f64,
    pub delta_t: f64,
    pub a: f64,
    pub b: f64,
    pub tau_w: f64,
    /// Hard spiking threshold.
    pub v_th: f64,
    pub v_reset: f64,
    pub tau_ref: f64,
    /// Any |V| beyond this after a step is reported as an integration overflow.
    pub v_overflow: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        Self {
            c: 100e-12,
            g_l: 20e-9,
            e_l: -65e-3,
            v_t: -50e-3,
            delta_t: 2e-3,
            a: 2e-9,
            b: 5e-12,
            tau_w: 100e-3,
            v_th: -40e-3,
            v_reset: -65e-3,
            tau_ref: 2e-3,
            v_overflow: 1.0,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<(), NeuronError> {
        let check = |ok: bool, field: &'static str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(NeuronError::InvalidParam {
                    field,
                    reason: reason.to_string(),
                })
            }
        };
        let all = [
            self.c,
            self.g_l,
            self.e_l,
            self.v_t,
            self.delta_t,
            self.a,
            self.b,
            self.tau_w,
            self.v_th,
            self.v_reset,
            self.tau_ref,
            self.v_overflow,
        ];
        check(
            all.iter().all(|x| x.is_finite()),
            "*",
            "all parameters must be finite",
        )?;
        check(self.c > 0.0, "c", "must be > 0")?;
        check(self.g_l >= 0.0, "g_l", "must be >= 0")?;
        check(self.tau_w > 0.0, "tau_w", "must be > 0")?;
        check(self.delta_t >= 0.0, "delta_t", "must be >= 0")?;
        check(self.tau_ref >= 0.0, "tau_ref", "must be >= 0")?;
        check(self.v_overflow > 0.0, "v_overflow", "must be > 0")?;
        Ok(())
    }

    /// Membrane time constant `C / g_L` (infinite for a perfect integrator).
    pub fn tau_m(&self) -> f64 {
        self.c / self.g_l
    }

    /// Ceiling on the voltage fed into the exponential term.
    pub fn divergence_ceiling(&self) -> f64 {
        self.v_th + 10.0 * self.delta_t
    }

    pub fn integrator(&self, dt: f64) -> Result<Integrator, NeuronError> {
        Integrator::new(*self, dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronState {
    pub v: f64,
    pub w: f64,
    pub refractory_until: f64,
    pub spike_count: u64,
}

impl NeuronState {
    pub fn at_rest(params: &NeuronParams) -> Self {
        Self {
            v: params.e_l,
            w: 0.0,
            refractory_until: f64::NEG_INFINITY,
            spike_count: 0,
        }
    }

    pub fn is_refractory(&self, t: f64, dt: f64) -> bool {
        // times on the grid are products k*dt; allow for rounding of the sum
        t < self.refractory_until - 1e-6 * dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeEvent {
    pub neuron: usize,
    pub time: f64,
}

/// `(1 - exp(-x)) / x`, continuous at zero.
fn phi(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    }
}

/// Precomputed step coefficients for one parameter set and grid spacing.
#[derive(Debug, Clone, Copy)]
pub struct Integrator {
    params: NeuronParams,
    dt: f64,
    /// `dt / C * phi(g_L dt / C)`, the response of V to a unit constant drive.
    drive_gain: f64,
    w_decay: f64,
    threshold: f64,
    exp_cap: f64,
}

impl Integrator {
    pub fn new(params: NeuronParams, dt: f64) -> Result<Self, NeuronError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(NeuronError::InvalidStep(dt));
        }
        params.validate()?;
        let k = params.g_l * dt / params.c;
        Ok(Self {
            params,
            dt,
            drive_gain: dt / params.c * phi(k),
            w_decay: (-dt / params.tau_w).exp(),
            threshold: params.v_th,
            exp_cap: params.divergence_ceiling(),
        })
    }

    pub fn params(&self) -> &NeuronParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `state` from `t` to `t + dt` under constant input `i_syn`.
    pub fn step(
        &self,
        state: &mut NeuronState,
        index: usize,
        i_syn: f64,
        t: f64,
    ) -> Result<Option<SpikeEvent>, NeuronError> {
        let p = &self.params;
        let overflow = |v: f64, w: f64| NeuronError::IntegrationOverflow {
            neuron: index,
            t,
            v,
            w,
        };
        if !state.v.is_finite() || !state.w.is_finite() || !i_syn.is_finite() {
            return Err(overflow(state.v, state.w));
        }

        let v0 = state.v;
        let w0 = state.w;
        let w_inf = p.a * (v0 - p.e_l);
        let w1 = w_inf + (w0 - w_inf) * self.w_decay;

        if state.is_refractory(t, self.dt) {
            state.v = p.v_reset;
            state.w = w1;
            return Ok(None);
        }

        let mut drive = i_syn - w0;
        if p.delta_t > 0.0 {
            let arg = (v0.min(self.exp_cap) - p.v_t) / p.delta_t;
            drive += p.g_l * p.delta_t * arg.exp();
        }
        let v1 = v0 + (drive - p.g_l * (v0 - p.e_l)) * self.drive_gain;

        if !v1.is_finite() || !w1.is_finite() || v1.abs() > p.v_overflow {
            return Err(overflow(v1, w1));
        }

        if v1 >= self.threshold {
            let t_spike = t + self.dt;
            state.v = p.v_reset;
            state.w = w1 + p.b;
            state.refractory_until = t_spike + p.tau_ref;
            state.spike_count += 1;
            Ok(Some(SpikeEvent {
                neuron: index,
                time: t_spike,
            }))
        } else {
            state.v = v1;
            state.w = w1;
            Ok(None)
        }
    }
}

/// Single integration step; builds the coefficients on every call. Use an
/// [`Integrator`] in loops.
pub fn step(
    state: &mut NeuronState,
    params: &NeuronParams,
    index: usize,
    i_syn: f64,
    dt: f64,
    t: f64,
) -> Result<Option<SpikeEvent>, NeuronError> {
    Integrator::new(*params, dt)?.step(state, index, i_syn, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lif() -> NeuronParams {
        NeuronParams {
            a: 0.0,
            b: 0.0,
            delta_t: 0.0,
            ..NeuronParams::default()
        }
    }

    #[test]
    fn leak_decays_by_one_over_e_after_tau_m() {
        let p = lif();
        let dt = 1e-6;
        let integ = p.integrator(dt).unwrap();
        let mut s = NeuronState::at_rest(&p);
        s.v = p.e_l + 10e-3;
        let n = (p.tau_m() / dt).round() as usize;
        for k in 0..n {
            integ.step(&mut s, 0, 0.0, k as f64 * dt).unwrap();
        }
        let dv = s.v - p.e_l;
        assert!((dv - 10e-3 * (-1.0f64).exp()).abs() < 1e-12, "dv={dv}");
        assert!((dv * 1e3 - 3.679).abs() < 1e-3);
    }

    #[test]
    fn spike_resets_and_increments_adaptation_by_b() {
        let p = NeuronParams::default();
        let dt = 1e-6;
        let mut s = NeuronState::at_rest(&p);
        s.v = p.v_th - 1e-6;
        s.w = 3e-12;
        let ev = step(&mut s, &p, 4, 5e-9, dt, 0.0).unwrap().expect("spike");
        assert_eq!(ev.neuron, 4);
        assert_eq!(ev.time, dt);
        assert_eq!(s.v, p.v_reset);
        assert_eq!(s.spike_count, 1);
        // w relaxes during the step, then jumps by exactly b
        let w_inf = p.a * (p.v_th - 1e-6 - p.e_l);
        let relaxed = w_inf + (3e-12 - w_inf) * (-dt / p.tau_w).exp();
        assert_eq!(s.w, relaxed + p.b);
        assert_eq!(s.refractory_until, dt + p.tau_ref);
    }

    #[test]
    fn refractory_clamps_and_blocks_spikes() {
        let p = NeuronParams::default();
        let dt = 1e-6;
        let integ = p.integrator(dt).unwrap();
        let mut s = NeuronState::at_rest(&p);
        s.refractory_until = 10e-6;
        for k in 0..10 {
            let ev = integ.step(&mut s, 0, 1e-6, k as f64 * dt).unwrap();
            assert!(ev.is_none());
            assert_eq!(s.v, p.v_reset);
        }
        // a huge drive spikes immediately once refractoriness is over
        assert!(integ.step(&mut s, 0, 5e-6, 10.0 * dt).unwrap().is_some());
    }

    #[test]
    fn delta_t_zero_is_the_lif_limit() {
        let p = lif();
        let integ = p.integrator(1e-6).unwrap();
        let mut s = NeuronState::at_rest(&p);
        s.v = p.v_t + 5e-3;
        integ.step(&mut s, 0, 0.0, 0.0).unwrap();
        assert!(s.v.is_finite());
        assert!(s.v < p.v_t + 5e-3);
    }

    #[test]
    fn perfect_integrator_with_zero_leak() {
        let p = NeuronParams { g_l: 0.0, ..lif() };
        let integ = p.integrator(1e-6).unwrap();
        let mut s = NeuronState::at_rest(&p);
        integ.step(&mut s, 0, 1e-9, 0.0).unwrap();
        assert!((s.v - (p.e_l + 1e-9 * 1e-6 / p.c)).abs() < 1e-15);
    }

    #[test]
    fn overflow_names_the_neuron() {
        let p = NeuronParams {
            c: 1e-15,
            v_th: 1e6,
            ..NeuronParams::default()
        };
        let mut s = NeuronState::at_rest(&p);
        let err = step(&mut s, &p, 7, 1e-3, 1e-3, 0.0).unwrap_err();
        assert!(matches!(
            err,
            NeuronError::IntegrationOverflow { neuron: 7, .. }
        ));
        s.v = f64::NAN;
        let err = step(&mut s, &NeuronParams::default(), 2, 0.0, 1e-6, 0.0).unwrap_err();
        assert!(matches!(
            err,
            NeuronError::IntegrationOverflow { neuron: 2, .. }
        ));
    }

    #[test]
    fn invalid_params_are_rejected() {
        let p = NeuronParams {
            tau_ref: -1.0,
            ..NeuronParams::default()
        };
        assert!(matches!(
            p.validate(),
            Err(NeuronError::InvalidParam {
                field: "tau_ref",
                ..
            })
        ));
        assert!(NeuronParams::default().integrator(0.0).is_err());
    }
}
