//! Experiment trace records and their CSV / JSON-lines encodings.

use std::fmt::Write as _;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    SpikeOut,
    ReadResponse,
    CadcData,
    Error,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::SpikeOut => "spike_out",
            TraceKind::ReadResponse => "read_response",
            TraceKind::CadcData => "cadc_data",
            TraceKind::Error => "error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    UnmappedRegister = 1,
    ValueOutOfRange = 2,
    RowOutOfRange = 3,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(untagged)]
pub enum Payload {
    Spike { neuron: u32 },
    Register { address: u32, value: u32 },
    Cadc { row: u32, codes: Vec<u16> },
    Error { code: ErrorCode, address: u32 },
}

impl Payload {
    /// Big-endian byte image: neuron as u16; address and value as u32;
    /// row as u16 followed by u16 codes; error code as u8 then u32 address.
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Payload::Spike { neuron } => (*neuron as u16).to_be_bytes().to_vec(),
            Payload::Register { address, value } => {
                [address.to_be_bytes(), value.to_be_bytes()].concat()
            }
            Payload::Cadc { row, codes } => {
                let mut b = (*row as u16).to_be_bytes().to_vec();
                codes.iter().for_each(|c| b.extend(c.to_be_bytes()));
                b
            }
            Payload::Error { code, address } => {
                let mut b = vec![*code as u8];
                b.extend(address.to_be_bytes());
                b
            }
        }
    }

    pub fn to_hex(&self) -> String {
        self.to_bytes().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct TraceEntry {
    pub timestamp_ns: u64,
    pub kind: TraceKind,
    #[serde(flatten)]
    pub payload: Payload,
}

/// Executor bookkeeping, kept apart from the observation stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ExecStats {
    pub instructions: u64,
    pub spikes_injected: u64,
    pub bus_events: u64,
    pub driver_matches: u64,
    pub deliveries: u64,
    pub neuron_spikes: u64,
    pub spikes_out: u64,
    pub dropped_spikes: u64,
    pub kernel_invocations: u64,
    pub errors: u64,
    pub steps: u64,
    pub end_time_ns: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
    pub stats: ExecStats,
}

impl Trace {
    pub fn of_kind(&self, kind: TraceKind) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    /// `timestamp,kind,payload_hex` with the timestamp in nanoseconds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp,kind,payload_hex\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{}",
                e.timestamp_ns,
                e.kind.as_str(),
                e.payload.to_hex()
            );
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("trace entries serialize"));
            out.push('\n');
        }
        out
    }
}
