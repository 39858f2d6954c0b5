//! Result documents. Every JSON document the CLI writes is a [`ResultDoc`]
//! and parses back into one.

use std::collections::BTreeMap;

use dfsnet_core::qstate::C64;
use serde::{Deserialize, Serialize};

/// `[re, im]`.
pub type Cplx = [f64; 2];

pub fn cplx(z: C64) -> Cplx {
    [z.re, z.im]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "result", rename_all = "kebab-case")]
pub enum ResultDoc {
    Simulate(SimulateResult),
    TruthTable(TruthTable),
    Sweep(SweepReport),
    Timing(TimingReport),
    Validate(ValidateReport),
    OracleCheck(OracleCheckReport),
}

impl ResultDoc {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probabilities {
    pub dh: f64,
    pub dv: f64,
    pub no_click: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttemptRecord {
    pub which: String,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutRow {
    pub node: usize,
    pub p_zero: f64,
    pub p_one: f64,
    pub p_leak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloReport {
    pub trials: u64,
    pub seed: u64,
    pub success_prob: f64,
    pub success_stderr: f64,
    pub fidelity_mean: f64,
    pub fidelity_stderr: f64,
    pub mean_attempts: f64,
    pub attempt_histogram: BTreeMap<u32, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateResult {
    pub op: String,
    pub mode: String,
    pub nodes: usize,
    pub participants: Vec<usize>,
    pub entry: usize,
    pub encoding: String,
    /// Herald probabilities of one gate attempt.
    pub probabilities: Option<Probabilities>,
    /// Final herald (sampled) or the conditioning herald (exact).
    pub herald: Option<String>,
    pub attempts: Option<u32>,
    pub history: Vec<AttemptRecord>,
    pub exhausted: bool,
    pub fidelity_vs_target: Option<f64>,
    /// Participants' logical amplitudes after the run, when the state stays
    /// in the logical subspace.
    pub output_logical: Option<Vec<Cplx>>,
    pub readout: Vec<ReadoutRow>,
    /// Sampled measurement result of a `readout` op.
    pub measured: Option<String>,
    pub monte_carlo: Option<MonteCarloReport>,
    pub gate_time_s: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRow {
    pub input: String,
    pub p_dv: f64,
    pub p_dh: f64,
    /// Most likely output basis state given `Dv`.
    pub output: String,
    pub output_prob: f64,
    /// Real part of the output phase relative to the `|0…0⟩` row.
    pub sign: f64,
    pub phase_over_pi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthTable {
    pub op: String,
    pub nodes: usize,
    pub participants: Vec<usize>,
    pub encoding: String,
    pub rows: Vec<TruthRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub success_prob: f64,
    pub fidelity_mean: f64,
    pub fidelity_stderr: f64,
    pub trials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepReport {
    pub parameter: String,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingRow {
    pub gate: String,
    pub seconds: f64,
    pub microseconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingReport {
    pub kappa_over_2pi: f64,
    pub g_over_2pi: f64,
    pub gamma_over_2pi: f64,
    pub kappa_t: f64,
    pub rows: Vec<TimingRow>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateCase {
    pub nodes: usize,
    pub participants: Vec<usize>,
    pub entry: usize,
    pub ok: bool,
    pub arrival_tick: Option<u32>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateReport {
    pub passed: usize,
    pub failed: usize,
    pub cases: Vec<ValidateCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleCase {
    pub nodes: usize,
    pub participants: Vec<usize>,
    pub entry: usize,
    pub encoding: String,
    pub ok: bool,
    /// Engine vs oracle, after the best global phase.
    pub dh_deviation: Option<f64>,
    pub dv_deviation: Option<f64>,
    /// Oracle `Dv` map vs `CPZ/√2`; skipped for overridden schedules.
    pub target_deviation: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleMatrices {
    pub detector: String,
    pub engine: Vec<Vec<Cplx>>,
    pub oracle: Vec<Vec<Cplx>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleCheckReport {
    pub tolerance: f64,
    pub passed: usize,
    pub failed: usize,
    pub max_deviation: f64,
    pub cases: Vec<OracleCase>,
    pub matrices: Vec<OracleMatrices>,
}
