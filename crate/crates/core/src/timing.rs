//! Event-interface skew window and anncore setup condition, evaluated per
//! process corner in integer picoseconds.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_SKEW_LIMIT_PS: i64 = 150;
pub const DEFAULT_PIN_BUDGET_PS: i64 = 200;
pub const DEFAULT_CLOCK_SKEW_ALLOWANCE_PS: i64 = 50;

/// Bus signals in canonical order; `pulse` is the strobe reference.
pub fn bus_signal_names() -> Vec<String> {
    let mut v: Vec<String> = (0..6).map(|i| format!("address[{i}]")).collect();
    v.extend((0..5).map(|i| format!("select[{i}]")));
    v.push("stable".into());
    v.push("pulse".into());
    v
}

pub const SETUP_PARAMS: [&str; 8] = [
    "t_cp",
    "delta_t_cp",
    "t_dp",
    "t_dt",
    "t_co",
    "t_sut",
    "t_ct",
    "t_per",
];
const LIMIT_PARAMS: [&str; 3] = ["skew_limit", "pin_budget", "clock_skew_allowance"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimingError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("corner `{corner}`: {msg}")]
    Corner { corner: String, msg: String },
    #[error("invalid timing input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkewCheckInput {
    pub pulse_ps: i64,
    /// Data signals (everything except `pulse`) with absolute arrival times.
    pub signals: Vec<(String, i64)>,
    pub skew_limit_ps: i64,
    pub pin_budget_ps: i64,
    pub clock_skew_allowance_ps: i64,
}

impl SkewCheckInput {
    pub fn new(pulse_ps: i64, signals: Vec<(String, i64)>) -> Self {
        Self {
            pulse_ps,
            signals,
            skew_limit_ps: DEFAULT_SKEW_LIMIT_PS,
            pin_budget_ps: DEFAULT_PIN_BUDGET_PS,
            clock_skew_allowance_ps: DEFAULT_CLOCK_SKEW_ALLOWANCE_PS,
        }
    }

    /// The per-signal window plus the clock skew of the launching registers
    /// must fit into the pin budget.
    pub fn validate(&self) -> Result<(), TimingError> {
        if self.skew_limit_ps < 0 || self.pin_budget_ps < 0 || self.clock_skew_allowance_ps < 0 {
            return Err(TimingError::Invalid("limits must be non-negative".into()));
        }
        if self.skew_limit_ps + self.clock_skew_allowance_ps > self.pin_budget_ps {
            return Err(TimingError::Invalid(format!(
                "skew limit {} ps + clock allowance {} ps exceeds pin budget {} ps",
                self.skew_limit_ps, self.clock_skew_allowance_ps, self.pin_budget_ps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SignalCheck {
    pub name: String,
    /// Arrival relative to `pulse`.
    pub offset_ps: i64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkewReport {
    pub signals: Vec<SignalCheck>,
    /// Max minus min arrival over all bus signals including `pulse`.
    pub spread_ps: i64,
    /// Remaining pin budget after the observed spread.
    pub budget_margin_ps: i64,
    /// Remaining pin budget if the clock allowance were added on top of the
    /// spread; informational.
    pub margin_with_allowance_ps: i64,
    pub pass: bool,
}

impl SkewReport {
    pub fn failing(&self) -> impl Iterator<Item = &str> {
        self.signals
            .iter()
            .filter(|s| !s.pass)
            .map(|s| s.name.as_str())
    }
}

/// Window check of every signal against `pulse` and the observed pin-level
/// spread against the pin budget.
pub fn check_data_skew(input: &SkewCheckInput) -> SkewReport {
    let signals: Vec<SignalCheck> = input
        .signals
        .iter()
        .map(|(name, t)| {
            let offset_ps = t - input.pulse_ps;
            SignalCheck {
                name: name.clone(),
                offset_ps,
                pass: offset_ps.abs() <= input.skew_limit_ps,
            }
        })
        .collect();
    let arrivals = input.signals.iter().map(|s| s.1).chain([input.pulse_ps]);
    let max = arrivals.clone().max().unwrap_or(input.pulse_ps);
    let min = arrivals.min().unwrap_or(input.pulse_ps);
    let spread_ps = max - min;
    let budget_margin_ps = input.pin_budget_ps - spread_ps;
    SkewReport {
        pass: signals.iter().all(|s| s.pass) && budget_margin_ps >= 0,
        margin_with_allowance_ps: budget_margin_ps - input.clock_skew_allowance_ps,
        budget_margin_ps,
        spread_ps,
        signals,
    }
}

/// Terms of the anncore register setup inequality, in picoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SetupCheckInput {
    pub t_cp: i64,
    pub delta_t_cp: i64,
    pub t_dp: i64,
    pub t_dt: i64,
    pub t_co: i64,
    pub t_sut: i64,
    pub t_ct: i64,
    pub t_per: i64,
}

impl SetupCheckInput {
    fn fields(&self) -> [i64; 8] {
        [
            self.t_cp,
            self.delta_t_cp,
            self.t_dp,
            self.t_dt,
            self.t_co,
            self.t_sut,
            self.t_ct,
            self.t_per,
        ]
    }

    fn field_mut(&mut self, name: &str) -> Option<&mut i64> {
        Some(match name {
            "t_cp" => &mut self.t_cp,
            "delta_t_cp" => &mut self.delta_t_cp,
            "t_dp" => &mut self.t_dp,
            "t_dt" => &mut self.t_dt,
            "t_co" => &mut self.t_co,
            "t_sut" => &mut self.t_sut,
            "t_ct" => &mut self.t_ct,
            "t_per" => &mut self.t_per,
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), TimingError> {
        if self.t_per <= 0 {
            return Err(TimingError::Invalid("t_per must be > 0".into()));
        }
        if let Some((name, v)) = SETUP_PARAMS.iter().zip(self.fields()).find(|(_, v)| *v < 0) {
            return Err(TimingError::Invalid(format!("{name} = {v} ps is negative")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SetupResult {
    pub slack_ps: i64,
    pub pass: bool,
}

/// Required time minus arrival time. `t_cp` appears on both sides and
/// cancels exactly in integer arithmetic.
pub fn check_setup(input: &SetupCheckInput) -> SetupResult {
    let required = input.t_cp + input.t_ct + input.t_per;
    let arrival =
        (input.t_cp + input.delta_t_cp) + input.t_dp + input.t_dt + input.t_co + input.t_sut;
    let slack_ps = required - arrival;
    SetupResult {
        slack_ps,
        pass: slack_ps >= 0,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CornerInput {
    pub corner: String,
    pub skew: Option<SkewCheckInput>,
    pub setup: Option<SetupCheckInput>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CornerResult {
    pub corner: String,
    pub skew: Option<SkewReport>,
    pub setup: Option<SetupResult>,
}

impl CornerResult {
    pub fn pass(&self) -> bool {
        self.skew.as_ref().is_none_or(|s| s.pass) && self.setup.is_none_or(|s| s.pass)
    }
}

pub fn check_corner(input: &CornerInput) -> CornerResult {
    CornerResult {
        corner: input.corner.clone(),
        skew: input.skew.as_ref().map(check_data_skew),
        setup: input.setup.as_ref().map(check_setup),
    }
}

#[derive(Default)]
struct Pending {
    signals: Vec<(String, i64)>,
    pulse: Option<i64>,
    limits: [Option<i64>; 3],
    setup: SetupCheckInput,
    setup_seen: [bool; 8],
    names: Vec<String>,
}

/// Parses `corner,name,value_ps` lines. Lines starting with `#` and a
/// leading `corner,...` header are ignored. Corners keep first-seen order.
pub fn parse_timing_report(text: &str) -> Result<Vec<CornerInput>, TimingError> {
    let signal_names = bus_signal_names();
    let mut order: Vec<String> = Vec::new();
    let mut pending: Vec<Pending> = Vec::new();
    let mut seen_data = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let perr = |msg: String| TimingError::Parse { line, msg };
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(perr(format!("expected 3 fields, got {}", fields.len())));
        }
        if !seen_data && fields[0] == "corner" {
            seen_data = true;
            continue;
        }
        seen_data = true;
        let (corner, name, value) = (fields[0], fields[1], fields[2]);
        if corner.is_empty() {
            return Err(perr("empty corner name".into()));
        }
        let value: i64 = value.parse().map_err(|_| {
            perr(format!(
                "malformed value `{value}` (integer picoseconds expected)"
            ))
        })?;
        let k = match order.iter().position(|c| c == corner) {
            Some(k) => k,
            None => {
                order.push(corner.to_string());
                pending.push(Pending::default());
                order.len() - 1
            }
        };
        let p = &mut pending[k];
        if p.names.iter().any(|n| n == name) {
            return Err(perr(format!("duplicate `{name}` for corner `{corner}`")));
        }
        p.names.push(name.to_string());
        if name == "pulse" {
            p.pulse = Some(value);
        } else if signal_names.iter().any(|s| s == name) {
            p.signals.push((name.to_string(), value));
        } else if let Some(i) = LIMIT_PARAMS.iter().position(|l| *l == name) {
            p.limits[i] = Some(value);
        } else if let Some(slot) = p.setup.field_mut(name) {
            *slot = value;
            p.setup_seen[SETUP_PARAMS.iter().position(|s| *s == name).expect("known")] = true;
        } else {
            return Err(perr(format!("unknown field `{name}`")));
        }
    }

    order
        .into_iter()
        .zip(pending)
        .map(|(corner, p)| {
            let cerr = |msg: String| TimingError::Corner {
                corner: corner.clone(),
                msg,
            };
            let has_skew =
                p.pulse.is_some() || !p.signals.is_empty() || p.limits.iter().any(Option::is_some);
            let skew = if has_skew {
                let pulse = p
                    .pulse
                    .ok_or_else(|| cerr("missing `pulse` reference arrival".into()))?;
                let mut s = SkewCheckInput::new(pulse, p.signals);
                s.skew_limit_ps = p.limits[0].unwrap_or(s.skew_limit_ps);
                s.pin_budget_ps = p.limits[1].unwrap_or(s.pin_budget_ps);
                s.clock_skew_allowance_ps = p.limits[2].unwrap_or(s.clock_skew_allowance_ps);
                s.validate().map_err(|e| cerr(e.to_string()))?;
                Some(s)
            } else {
                None
            };
            let setup = if p.setup_seen.iter().any(|&b| b) {
                if let Some(missing) = SETUP_PARAMS.iter().zip(p.setup_seen).find(|(_, s)| !s) {
                    return Err(cerr(format!("setup parameter `{}` missing", missing.0)));
                }
                p.setup.validate().map_err(|e| cerr(e.to_string()))?;
                Some(p.setup)
            } else {
                None
            };
            if skew.is_none() && setup.is_none() {
                return Err(cerr("no data".into()));
            }
            Ok(CornerInput {
                corner,
                skew,
                setup,
            })
        })
        .collect()
}

/// Inverse of [`parse_timing_report`].
pub fn format_timing_report(corners: &[CornerInput]) -> String {
    let mut out = String::from("corner,name,value_ps\n");
    for c in corners {
        if let Some(s) = &c.skew {
            let _ = writeln!(out, "{},pulse,{}", c.corner, s.pulse_ps);
            for (n, v) in &s.signals {
                let _ = writeln!(out, "{},{n},{v}", c.corner);
            }
            for (n, v) in LIMIT_PARAMS.iter().zip([
                s.skew_limit_ps,
                s.pin_budget_ps,
                s.clock_skew_allowance_ps,
            ]) {
                let _ = writeln!(out, "{},{n},{v}", c.corner);
            }
        }
        if let Some(s) = &c.setup {
            for (n, v) in SETUP_PARAMS.iter().zip(s.fields()) {
                let _ = writeln!(out, "{},{n},{v}", c.corner);
            }
        }
    }
    out
}

/// Human-readable per-corner table.
pub fn format_results(results: &[CornerResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>10} {:>10} {:>10} {:>8}  failing",
        "corner", "spread_ps", "margin_ps", "slack_ps", "result"
    );
    for r in results {
        let dash = || "-".to_string();
        let spread = r
            .skew
            .as_ref()
            .map_or_else(dash, |s| s.spread_ps.to_string());
        let margin = r
            .skew
            .as_ref()
            .map_or_else(dash, |s| s.budget_margin_ps.to_string());
        let slack = r.setup.map_or_else(dash, |s| s.slack_ps.to_string());
        let failing: Vec<&str> = r.skew.iter().flat_map(|s| s.failing()).collect();
        let mut failing = failing.join(" ");
        if r.setup.is_some_and(|s| !s.pass) {
            failing.push_str(if failing.is_empty() {
                "setup"
            } else {
                " setup"
            });
        }
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>10} {:>10} {:>8}  {}",
            r.corner,
            spread,
            margin,
            slack,
            if r.pass() { "PASS" } else { "FAIL" },
            failing
        );
    }
    out
}
