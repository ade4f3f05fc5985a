//! Synapse drivers: event-interface row selection and depressing
//! short-term plasticity with a 4-bit efficacy offset calibration.

mod fit;

pub use fit::{extract_stp_params, StpFit};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SELECT_BITS: u32 = 5;
pub const SELECT_MASK_ALL: u8 = (1 << SELECT_BITS) - 1;
pub const CALIB_CODES: u8 = 16;
pub const NEUTRAL_CODE: u8 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StpError {
    #[error("event at t={t:e} s precedes previous event at t={previous:e} s")]
    NonMonotoneEvent { t: f64, previous: f64 },
    #[error("invalid event interface word: {0}")]
    InvalidWord(String),
    #[error("invalid driver parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("fit underdetermined: {0}")]
    FitUnderdetermined(String),
    #[error("fit failed: {0}")]
    FitFailed(String),
}

/// One word on the event interface bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventIfWord {
    pub address: u8,
    pub select: u8,
    pub pulse: bool,
    pub stable: bool,
}

impl EventIfWord {
    /// A strobed, stable word.
    pub fn new(address: u8, select: u8) -> Result<Self, StpError> {
        if address >= 64 {
            return Err(StpError::InvalidWord(format!("address {address} >= 64")));
        }
        if select > SELECT_MASK_ALL {
            return Err(StpError::InvalidWord(format!("select {select} >= 32")));
        }
        Ok(Self {
            address,
            select,
            pulse: true,
            stable: true,
        })
    }

    pub fn is_valid(&self) -> bool {
        self.pulse && self.stable && self.address < 64 && self.select <= SELECT_MASK_ALL
    }
}

/// Static driver configuration shared by many drivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StpParams {
    pub u: f64,
    pub tau_rec: f64,
    /// Efficacy removed per calibration code step.
    pub calib_gain: f64,
    /// Constant added back so that [`NEUTRAL_CODE`] applies no correction.
    pub calib_bias: f64,
    pub enabled_stp: bool,
}

impl Default for StpParams {
    fn default() -> Self {
        let calib_gain = 0.01;
        Self {
            u: 0.5,
            tau_rec: 200e-3,
            calib_gain,
            calib_bias: calib_gain * NEUTRAL_CODE as f64,
            enabled_stp: true,
        }
    }
}

impl StpParams {
    pub fn validate(&self) -> Result<(), StpError> {
        let bad = |field: &'static str, reason: &str| {
            Err(StpError::InvalidParam {
                field,
                reason: reason.into(),
            })
        };
        if !(self.u > 0.0 && self.u <= 1.0) {
            return bad("u", "must be in (0, 1]");
        }
        if !(self.tau_rec > 0.0) {
            return bad("tau_rec", "must be > 0");
        }
        if !self.calib_gain.is_finite() || !self.calib_bias.is_finite() {
            return bad("calib_gain", "must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StpDriverState {
    pub r_avail: f64,
    pub u: f64,
    pub tau_rec: f64,
    pub offset_mismatch: f64,
    pub calib_code: u8,
    pub calib_gain: f64,
    pub calib_bias: f64,
    pub select_mask: u8,
    pub row_select: u8,
    pub enabled_stp: bool,
    pub last_event: Option<f64>,
}

impl StpDriverState {
    pub fn new(params: &StpParams, row_select: u8, select_mask: u8) -> Self {
        Self {
            r_avail: 1.0,
            u: params.u,
            tau_rec: params.tau_rec,
            offset_mismatch: 0.0,
            calib_code: NEUTRAL_CODE,
            calib_gain: params.calib_gain,
            calib_bias: params.calib_bias,
            select_mask: select_mask & SELECT_MASK_ALL,
            row_select: row_select & SELECT_MASK_ALL,
            enabled_stp: params.enabled_stp,
            last_event: None,
        }
    }

    pub fn set_calib_code(&mut self, code: u8) -> Result<(), StpError> {
        if code >= CALIB_CODES {
            return Err(StpError::InvalidParam {
                field: "calib_code",
                reason: format!("{code} exceeds 4-bit range"),
            });
        }
        self.calib_code = code;
        Ok(())
    }

    /// Net additive efficacy term: mismatch minus calibration correction.
    pub fn offset(&self) -> f64 {
        self.offset_mismatch - self.calib_gain * self.calib_code as f64 + self.calib_bias
    }

    /// Forgets event history: resources fully recovered.
    pub fn reset_dynamics(&mut self) {
        self.r_avail = 1.0;
        self.last_event = None;
    }

    pub fn match_select(&self, word: &EventIfWord) -> bool {
        match_select(self, word)
    }

    /// Processes a pre-synaptic event at `t` and returns its efficacy scale.
    pub fn on_event(&mut self, t: f64) -> Result<f64, StpError> {
        if let Some(prev) = self.last_event {
            if t < prev {
                return Err(StpError::NonMonotoneEvent { t, previous: prev });
            }
            let decay = (-(t - prev) / self.tau_rec).exp();
            self.r_avail = 1.0 - (1.0 - self.r_avail) * decay;
        }
        self.last_event = Some(t);
        let offset = self.offset();
        let efficacy = if self.enabled_stp {
            let e = (self.u * self.r_avail + offset).max(0.0);
            self.r_avail *= 1.0 - self.u;
            e
        } else {
            (1.0 + offset).max(0.0)
        };
        self.r_avail = self.r_avail.clamp(0.0, 1.0);
        Ok(efficacy)
    }
}

/// Masked bits of the row select are don't-care.
pub fn match_select(driver: &StpDriverState, word: &EventIfWord) -> bool {
    let care = !driver.select_mask & SELECT_MASK_ALL;
    (word.select & care) == (driver.row_select & care)
}

/// Amplitude of the `n`-th event (1-based) of a periodic train with period
/// `period`, from the closed-form depression recurrence, offsets excluded.
pub fn periodic_amplitude(u: f64, tau_rec: f64, period: f64, n: usize) -> f64 {
    let d = (-period / tau_rec).exp();
    let q = d * (1.0 - u);
    let r_inf = steady_state_resources(u, tau_rec, period);
    // R_n = R_inf + (1 - R_inf) q^(n-1)
    u * (r_inf + (1.0 - r_inf) * q.powi(n as i32 - 1))
}

/// Fixed point of the available resources under a periodic train.
pub fn steady_state_resources(u: f64, tau_rec: f64, period: f64) -> f64 {
    let d = (-period / tau_rec).exp();
    (1.0 - d) / (1.0 - (1.0 - u) * d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn driver(u: f64, tau: f64) -> StpDriverState {
        let p = StpParams {
            u,
            tau_rec: tau,
            ..StpParams::default()
        };
        StpDriverState::new(&p, 0, 0)
    }

    #[test]
    fn select_matching() {
        let mut d = driver(0.5, 0.1);
        d.row_select = 0b10100;
        d.select_mask = 0;
        assert!(d.match_select(&EventIfWord::new(0, 0b10100).unwrap()));
        assert!(!d.match_select(&EventIfWord::new(0, 0b10101).unwrap()));
        d.select_mask = 0b11111;
        for s in 0..32 {
            assert!(d.match_select(&EventIfWord::new(0, s).unwrap()));
        }
        d.select_mask = 0b00011;
        assert!(d.match_select(&EventIfWord::new(0, 0b10111).unwrap()));
        assert!(!d.match_select(&EventIfWord::new(0, 0b11111).unwrap()));
    }

    #[test]
    fn word_validation() {
        assert!(EventIfWord::new(64, 0).is_err());
        assert!(EventIfWord::new(0, 32).is_err());
        assert!(EventIfWord::new(63, 31).unwrap().is_valid());
    }

    #[test]
    fn first_event_uses_full_resources() {
        let mut d = driver(0.5, 0.1);
        assert_eq!(d.on_event(0.0).unwrap(), 0.5);
    }

    #[test]
    fn second_event_follows_closed_form() {
        let (u, tau, dt) = (0.4, 0.2, 0.05);
        let mut d = driver(u, tau);
        d.on_event(1.0).unwrap();
        let e2 = d.on_event(1.0 + dt).unwrap();
        let want = u * (1.0 - u * (-dt / tau).exp());
        assert!((e2 - want).abs() < 1e-15);
    }

    #[test]
    fn bypass_gives_unit_efficacy() {
        let mut d = driver(0.3, 0.1);
        d.enabled_stp = false;
        for k in 0..10 {
            assert_eq!(d.on_event(k as f64 * 1e-3).unwrap(), 1.0);
        }
    }

    #[test]
    fn non_monotone_event_is_rejected() {
        let mut d = driver(0.3, 0.1);
        d.on_event(1.0).unwrap();
        assert!(matches!(
            d.on_event(0.5),
            Err(StpError::NonMonotoneEvent { .. })
        ));
    }

    #[test]
    fn periodic_train_reaches_steady_state() {
        let (u, tau, period) = (0.4, 0.2, 0.05);
        let mut d = driver(u, tau);
        let mut last = 0.0;
        for k in 0..100 {
            last = d.on_event(k as f64 * period).unwrap();
        }
        let r_inf = steady_state_resources(u, tau, period);
        assert!((last - u * r_inf).abs() < 1e-9);
        assert!((last - periodic_amplitude(u, tau, period, 100)).abs() < 1e-12);
    }

    #[test]
    fn neutral_code_applies_no_correction() {
        let d = driver(0.5, 0.1);
        assert_eq!(d.calib_code, NEUTRAL_CODE);
        assert_eq!(d.offset(), 0.0);
    }

    proptest! {
        #[test]
        fn resources_stay_bounded(u in 0.01f64..=1.0, tau in 1e-4f64..1.0, gaps in proptest::collection::vec(0.0f64..0.5, 1..60)) {
            let mut d = driver(u, tau);
            let mut t = 0.0;
            for g in gaps {
                t += g;
                d.on_event(t).unwrap();
                prop_assert!((0.0..=1.0).contains(&d.r_avail));
            }
        }

        #[test]
        fn masked_bits_are_dont_care(mask in 0u8..32, row in 0u8..32, sel in 0u8..32, flip in 0u8..32) {
            let mut d = driver(0.5, 0.1);
            d.select_mask = mask;
            d.row_select = row;
            let w = EventIfWord::new(0, sel).unwrap();
            let flipped = EventIfWord::new(0, sel ^ (flip & mask)).unwrap();
            prop_assert_eq!(d.match_select(&w), d.match_select(&flipped));
            prop_assert_eq!(d.match_select(&w), d.match_select(&w));
        }

        #[test]
        fn efficacy_strictly_decreasing_in_code(mismatch in -0.05f64..0.05) {
            let mut prev = f64::INFINITY;
            for code in 0..CALIB_CODES {
                let mut d = driver(0.5, 0.1);
                d.offset_mismatch = mismatch;
                d.set_calib_code(code).unwrap();
                let e = d.on_event(0.0).unwrap();
                prop_assert!(e < prev);
                prev = e;
            }
        }
    }
}
