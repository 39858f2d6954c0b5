//! Scenario files: JSON in, a validated [`Resolved`] run description out.
//!
//! ```json
//! {
//!   "nodes": 3,
//!   "participants": [0, 1, 2],
//!   "entry": 0,
//!   "protocol": {"op": "cpz"},
//!   "photon": {"port": "0i", "pol": [[0.7071067811865476, 0], [0.7071067811865476, 0]]},
//!   "atom_init": {"1": {"alpha": 1, "beta": 0}, "2": [0, 1]},
//!   "noise": {"dephasing_sigma": 0.5},
//!   "seed": 7
//! }
//! ```

use std::collections::BTreeMap;
use std::str::FromStr;

use dfsnet_core::logical::Encoding;
use dfsnet_core::network::{self, NetworkGraph, SwitchSchedule};
use dfsnet_core::noise_timing::{
    default_detection_window, DephasingScope, DephasingTiming, McScenario, NoiseParams, TimingParams,
};
use dfsnet_core::optics::{CombinerModel, ElementKind, Setting};
use dfsnet_core::protocols::{encode_logical_with, standard_photon};
use dfsnet_core::qstate::{AtomString, RegisterState, C64};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Accepted deviation from unit norm before an amplitude list is rejected;
/// inside it the list is renormalized.
pub const NORM_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComplexSpec {
    Real(f64),
    Pair([f64; 2]),
}

impl ComplexSpec {
    pub fn value(self) -> C64 {
        match self {
            ComplexSpec::Real(r) => C64::new(r, 0.0),
            ComplexSpec::Pair([re, im]) => C64::new(re, im),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProtocolSpec {
    Cpz,
    Toffoli { controls: [usize; 2], target: usize },
    Hadamard { node: usize },
    Readout { node: usize },
}

impl ProtocolSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolSpec::Cpz => "cpz",
            ProtocolSpec::Toffoli { .. } => "toffoli",
            ProtocolSpec::Hadamard { .. } => "hadamard",
            ProtocolSpec::Readout { .. } => "readout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingSpec {
    #[default]
    Dfs,
    Bare,
}

impl From<EncodingSpec> for Encoding {
    fn from(e: EncodingSpec) -> Self {
        match e {
            EncodingSpec::Dfs => Encoding::Dfs,
            EncodingSpec::Bare => Encoding::Bare,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSpec {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhotonSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port: Option<String>,
    pub pol: [ComplexSpec; 2],
}

/// Initial state of one node: raw atom values `[a1, a2]` or a logical qubit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AtomInit {
    Atoms([u8; 2]),
    Logical(LogicalInit),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogicalInit {
    pub alpha: ComplexSpec,
    pub beta: ComplexSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScopeSpec {
    PerNode,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimingSpecKind {
    BoundariesOnly,
    IncludeSandwichWindow,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dephasing_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dephasing_scope: Option<ScopeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dephasing_timing: Option<TimingSpecKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_per_element: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_jitter_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dark_rate: Option<f64>,
    /// Seconds; defaults to a quarter of the single-pulse time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scattering_phase_error: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_over_2pi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_over_2pi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_over_2pi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participants: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolSpec>,
    #[serde(default)]
    pub encoding: EncodingSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photon: Option<PhotonSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub atom_init: BTreeMap<String, AtomInit>,
    /// Amplitudes over the participants' logical basis, first participant
    /// most significant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logical_input: Option<Vec<ComplexSpec>>,
    /// Element label → setting name, applied after compilation.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub schedule_overrides: BTreeMap<String, String>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub timing: TimingSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ModeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_attempts: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

/// Names accepted by [`Scenario::with_parameter`].
pub const SWEEP_PARAMETERS: [&str; 10] = [
    "dephasing_sigma",
    "loss_per_element",
    "path_jitter_sigma",
    "dark_rate",
    "detection_window",
    "scattering_phase_error",
    "kappa_over_2pi",
    "g_over_2pi",
    "gamma_over_2pi",
    "kappa_t",
];

impl Scenario {
    /// Parses JSON; syntax and schema errors carry line and column.
    pub fn from_json(text: &str, origin: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Parse {
            origin: origin.to_string(),
            line: e.line(),
            column: e.column(),
            message: strip_position(&e.to_string()).into(),
        })
    }

    pub fn minimal(nodes: usize) -> Self {
        Scenario {
            nodes,
            participants: None,
            entry: None,
            protocol: None,
            encoding: EncodingSpec::Dfs,
            photon: None,
            atom_init: BTreeMap::new(),
            logical_input: None,
            schedule_overrides: BTreeMap::new(),
            noise: NoiseSpec::default(),
            timing: TimingSpec::default(),
            mode: None,
            trials: None,
            seed: None,
            max_attempts: None,
            sweep: None,
        }
    }

    /// Copy with one noise or timing knob set.
    pub fn with_parameter(&self, name: &str, value: f64) -> Result<Self, CliError> {
        let mut s = self.clone();
        let slot = match name {
            "dephasing_sigma" => &mut s.noise.dephasing_sigma,
            "loss_per_element" => &mut s.noise.loss_per_element,
            "path_jitter_sigma" => &mut s.noise.path_jitter_sigma,
            "dark_rate" => &mut s.noise.dark_rate,
            "detection_window" => &mut s.noise.detection_window,
            "scattering_phase_error" => &mut s.noise.scattering_phase_error,
            "kappa_over_2pi" => &mut s.timing.kappa_over_2pi,
            "g_over_2pi" => &mut s.timing.g_over_2pi,
            "gamma_over_2pi" => &mut s.timing.gamma_over_2pi,
            "kappa_t" => &mut s.timing.kappa_t,
            other => {
                return Err(CliError::config(format!(
                    "unknown sweep parameter {other:?}; expected one of {}",
                    SWEEP_PARAMETERS.join(", ")
                )))
            }
        };
        *slot = Some(value);
        Ok(s)
    }

    pub fn timing_params(&self) -> Result<TimingParams, CliError> {
        let d = TimingParams::default();
        let t = TimingParams {
            kappa_over_2pi: self.timing.kappa_over_2pi.unwrap_or(d.kappa_over_2pi),
            g_over_2pi: self.timing.g_over_2pi.unwrap_or(d.g_over_2pi),
            gamma_over_2pi: self.timing.gamma_over_2pi.unwrap_or(d.gamma_over_2pi),
            kappa_t: self.timing.kappa_t.unwrap_or(d.kappa_t),
        };
        t.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(t)
    }

    pub fn noise_params(&self) -> Result<NoiseParams, CliError> {
        let timing = self.timing_params()?;
        let n = &self.noise;
        let p = NoiseParams {
            dephasing_sigma: n.dephasing_sigma.unwrap_or(0.0),
            dephasing_scope: match n.dephasing_scope {
                Some(ScopeSpec::Global) => DephasingScope::Global,
                _ => DephasingScope::PerNode,
            },
            dephasing_timing: match n.dephasing_timing {
                Some(TimingSpecKind::IncludeSandwichWindow) => DephasingTiming::IncludeSandwichWindow,
                _ => DephasingTiming::BoundariesOnly,
            },
            loss_per_element: n.loss_per_element.unwrap_or(0.0),
            path_jitter_sigma: n.path_jitter_sigma.unwrap_or(0.0),
            dark_rate: n.dark_rate.unwrap_or(0.0),
            detection_window: n.detection_window.unwrap_or_else(|| default_detection_window(&timing)),
            scattering_phase_error: n.scattering_phase_error.unwrap_or(0.0),
        };
        p.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(p)
    }

    /// Checks everything and builds the network, schedule and input state.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let n = self.nodes;
        if n == 0 || n > network::MAX_NODES {
            return Err(CliError::config(format!("nodes must be in 1..={}, got {n}", network::MAX_NODES)));
        }
        let protocol = self.protocol.clone().unwrap_or(ProtocolSpec::Cpz);
        let encoding: Encoding = self.encoding.into();
        let check_node = |what: &str, v: usize| {
            if v < n {
                Ok(v)
            } else {
                Err(CliError::config(format!("{what} {v} is not a node of a {n}-node ring")))
            }
        };
        let participants = match (&protocol, &self.participants) {
            (ProtocolSpec::Toffoli { controls, target }, given) => {
                let mut set = vec![controls[0], controls[1], *target];
                for &v in &set {
                    check_node("toffoli node", v)?;
                }
                set.sort_unstable();
                set.dedup();
                if set.len() != 3 {
                    return Err(CliError::config("toffoli controls and target must be distinct"));
                }
                match given {
                    Some(p) => {
                        let mut sorted = p.clone();
                        sorted.sort_unstable();
                        if sorted != set {
                            return Err(CliError::config("participants must be the toffoli controls and target"));
                        }
                        p.clone()
                    }
                    None => set,
                }
            }
            (ProtocolSpec::Hadamard { node } | ProtocolSpec::Readout { node }, _) => vec![check_node("node", *node)?],
            (ProtocolSpec::Cpz, Some(p)) => p.clone(),
            (ProtocolSpec::Cpz, None) => (0..n).collect(),
        };
        for &p in &participants {
            check_node("participant", p)?;
        }
        let entry = check_node("entry", self.entry.unwrap_or(participants[0]))?;

        let noise = self.noise_params()?;
        let timing = self.timing_params()?;
        let model = if noise.needs_balanced_combiner() {
            CombinerModel::Balanced
        } else {
            CombinerModel::Ideal
        };
        let graph = network::build_ring_network_with(n, model).map_err(|e| CliError::config(e.to_string()))?;
        let mut schedule = network::compile_schedule_with(&graph, &participants, entry, encoding.hook_style())
            .map_err(|e| CliError::config(e.to_string()))?;
        apply_overrides(&graph, &mut schedule, &self.schedule_overrides)?;

        let photon = match &self.photon {
            Some(p) => {
                if let Some(port) = &p.port {
                    let node = parse_port(port, entry)?;
                    if node != entry {
                        return Err(CliError::config(format!(
                            "photon port {port:?} is on node {node} but the entry node is {entry}"
                        )));
                    }
                }
                let v = normalized(&[p.pol[0].value(), p.pol[1].value()], "photon pol")?;
                [v[0], v[1]]
            }
            None => standard_photon(),
        };

        let (input, logical) = build_input(self, &participants, encoding)?;
        Ok(Resolved {
            scenario: self.clone(),
            protocol,
            graph,
            schedule,
            participants,
            entry,
            encoding,
            photon,
            input,
            logical_input: logical,
            noise,
            timing,
        })
    }
}

/// serde_json appends " at line L column C"; the position is reported
/// separately.
fn strip_position(msg: &str) -> &str {
    match msg.rfind(" at line ") {
        Some(i) => &msg[..i],
        None => msg,
    }
}

/// Everything a run needs, validated.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub scenario: Scenario,
    pub protocol: ProtocolSpec,
    pub graph: NetworkGraph,
    pub schedule: SwitchSchedule,
    pub participants: Vec<usize>,
    pub entry: usize,
    pub encoding: Encoding,
    pub photon: [C64; 2],
    pub input: RegisterState,
    /// Participants' logical amplitudes, when the input factorizes as
    /// logical participants times non-participants in logical 0.
    pub logical_input: Option<Vec<C64>>,
    pub noise: NoiseParams,
    pub timing: TimingParams,
}

impl Resolved {
    pub fn is_noisy(&self) -> bool {
        let n = &self.noise;
        n.dephasing_sigma > 0.0
            || n.loss_per_element > 0.0
            || n.path_jitter_sigma > 0.0
            || n.dark_rate > 0.0
            || n.scattering_phase_error != 0.0
    }

    /// Monte Carlo description of this scenario's `CPZ`.
    pub fn mc_scenario(&self) -> Result<McScenario, CliError> {
        if self.protocol != ProtocolSpec::Cpz {
            return Err(CliError::config("Monte Carlo runs need protocol op \"cpz\""));
        }
        if !self.scenario.schedule_overrides.is_empty() {
            return Err(CliError::config("Monte Carlo runs use the compiled schedule; drop schedule_overrides"));
        }
        let input = self.logical_input.clone().ok_or_else(|| {
            CliError::config("Monte Carlo runs need an input on the participants' logical subspace with other nodes in logical 0")
        })?;
        Ok(McScenario {
            nodes: self.graph.node_count(),
            participants: self.participants.clone(),
            entry: self.entry,
            input,
            encoding: self.encoding,
            photon: self.photon,
        })
    }
}

fn apply_overrides(
    graph: &NetworkGraph,
    schedule: &mut SwitchSchedule,
    overrides: &BTreeMap<String, String>,
) -> Result<(), CliError> {
    for (label, value) in overrides {
        let id = graph
            .find(label)
            .ok_or_else(|| CliError::config(format!("schedule_overrides: no element labeled {label:?}")))?;
        let setting =
            Setting::from_str(value).map_err(|e| CliError::config(format!("schedule_overrides.{label}: {e}")))?;
        let fits = matches!(
            (graph.elements()[id].kind, setting),
            (ElementKind::TrSwitch, Setting::Tr(_)) | (ElementKind::StrRouter, Setting::Str(_))
        );
        if !fits {
            return Err(CliError::config(format!(
                "schedule_overrides.{label}: {value} does not apply to a {} element",
                graph.elements()[id].kind.tag()
            )));
        }
        schedule.set(id, setting);
    }
    Ok(())
}

/// `"0"` or `"0i"` name the entry node's port 0; `"0:<n>"` or `"0<n>"` name
/// node `n`'s.
fn parse_port(port: &str, entry: usize) -> Result<usize, CliError> {
    let bad = || CliError::config(format!("photon port {port:?}: expected \"0i\", \"0\" or \"0:<node>\""));
    let rest = port.strip_prefix('0').ok_or_else(bad)?;
    match rest {
        "" | "i" => Ok(entry),
        r => r.trim_start_matches(':').parse().map_err(|_| bad()),
    }
}

fn normalized(v: &[C64], what: &str) -> Result<Vec<C64>, CliError> {
    let n: f64 = v.iter().map(|a| a.norm_sqr()).sum();
    if !n.is_finite() || (n - 1.0).abs() > NORM_SLACK {
        return Err(CliError::config(format!("{what} has squared norm {n}, expected 1")));
    }
    let s = n.sqrt();
    Ok(v.iter().map(|a| a / s).collect())
}

fn build_input(
    sc: &Scenario,
    participants: &[usize],
    enc: Encoding,
) -> Result<(RegisterState, Option<Vec<C64>>), CliError> {
    let n = sc.nodes;
    let mut zero = AtomString::default();
    for k in 0..n {
        zero = zero.with_pair(k, enc.pair(false));
    }
    let mut reg = RegisterState::basis(n, zero).map_err(|e| CliError::config(e.to_string()))?;
    let mut spectators_clean = true;
    let mut per_node: BTreeMap<usize, [C64; 2]> = BTreeMap::new();
    for (key, init) in &sc.atom_init {
        let node: usize = key
            .parse()
            .ok()
            .filter(|&k| k < n)
            .ok_or_else(|| CliError::config(format!("atom_init key {key:?} is not a node index below {n}")))?;
        let in_s = participants.contains(&node);
        match init {
            AtomInit::Atoms([a1, a2]) => {
                if *a1 > 1 || *a2 > 1 {
                    return Err(CliError::config(format!("atom_init.{key}: atom values must be 0 or 1")));
                }
                let pair = a1 | (a2 << 1);
                let terms: Vec<_> = reg.iter().map(|(k, a)| (k.with_pair(node, pair), a)).collect();
                reg = RegisterState::from_amplitudes(n, terms).map_err(|e| CliError::config(e.to_string()))?;
                match enc.decode(pair) {
                    Some(bit) if in_s => {
                        let one = C64::new(1.0, 0.0);
                        let zero = C64::new(0.0, 0.0);
                        per_node.insert(node, if bit { [zero, one] } else { [one, zero] });
                    }
                    Some(false) => {}
                    _ => spectators_clean = false,
                }
            }
            AtomInit::Logical(l) => {
                let v = normalized(&[l.alpha.value(), l.beta.value()], &format!("atom_init.{key}"))?;
                encode_logical_with(&mut reg, node, v[0], v[1], enc).map_err(|e| CliError::config(e.to_string()))?;
                if in_s {
                    per_node.insert(node, [v[0], v[1]]);
                } else if v[1].norm() > 0.0 {
                    spectators_clean = false;
                }
            }
        }
    }

    let k = participants.len();
    if let Some(amps) = &sc.logical_input {
        if let Some(&clash) = per_node.keys().next() {
            return Err(CliError::config(format!(
                "node {clash} is set both by logical_input and atom_init"
            )));
        }
        if amps.len() != 1 << k {
            return Err(CliError::config(format!(
                "logical_input has {} amplitudes, expected {} for {k} participants",
                amps.len(),
                1usize << k
            )));
        }
        let v: Vec<C64> = amps.iter().map(|a| a.value()).collect();
        let v = normalized(&v, "logical_input")?;
        let mut terms = Vec::new();
        for (atoms, a) in reg.iter() {
            for (m, &b) in v.iter().enumerate() {
                let mut x = atoms;
                for (pos, &node) in participants.iter().enumerate() {
                    let bit = (m >> (k - 1 - pos)) & 1 == 1;
                    x = x.with_pair(node, enc.pair(bit));
                }
                terms.push((x, a * b));
            }
        }
        reg = RegisterState::from_amplitudes(n, terms).map_err(|e| CliError::config(e.to_string()))?;
        return Ok((reg, spectators_clean.then_some(v)));
    }

    // product input: participants without an entry sit in logical 0
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let mut amps = vec![one];
    for &node in participants {
        let [a0, a1] = per_node.get(&node).copied().unwrap_or([one, zero]);
        amps = amps.iter().flat_map(|&x| [x * a0, x * a1]).collect();
    }
    let logical = (spectators_clean && per_node.len() == count_logical(sc, participants, enc)).then_some(amps);
    Ok((reg, logical))
}

/// Participants whose `atom_init` entry lies in the logical subspace.
fn count_logical(sc: &Scenario, participants: &[usize], enc: Encoding) -> usize {
    sc.atom_init
        .iter()
        .filter_map(|(k, v)| k.parse::<usize>().ok().map(|n| (n, v)))
        .filter(|(n, _)| participants.contains(n))
        .filter(|(_, v)| match v {
            AtomInit::Atoms([a1, a2]) => enc.decode(a1 | (a2 << 1)).is_some(),
            AtomInit::Logical(_) => true,
        })
        .count()
}
