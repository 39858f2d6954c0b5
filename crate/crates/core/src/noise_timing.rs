//! Noise realizations, Monte Carlo fidelity estimation and the gate-time
//! model.
//!
//! Every trial draws its randomness from a ChaCha8 stream selected by
//! `(seed, trial index)`, so trials can run in any order or in parallel and
//! still merge to the same summary.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};

use crate::logical::{self, Encoding, LogicalError};
use crate::network::{self, NetworkError, NetworkGraph, PropagationPlan, DV};
use crate::optics::CombinerModel;
use crate::protocols::{CpGate, ProtocolError};
use crate::qstate::{RegisterState, StateError, C64};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NoiseError {
    #[error("{name} must be a probability in [0, 1), got {value}")]
    BadProbability { name: &'static str, value: f64 },
    #[error("{name} must be non-negative and finite, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("at least one trial is required")]
    NoTrials,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Logical(#[from] LogicalError),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DephasingScope {
    /// Independent phase per node.
    PerNode,
    /// One phase shared by every node.
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DephasingTiming {
    /// Phases act only between protocol steps.
    BoundariesOnly,
    /// Additionally inside each participant's `σx` window.
    IncludeSandwichWindow,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseParams {
    pub dephasing_sigma: f64,
    pub dephasing_scope: DephasingScope,
    pub dephasing_timing: DephasingTiming,
    /// Loss probability per delay unit travelled.
    pub loss_per_element: f64,
    pub path_jitter_sigma: f64,
    /// Hz.
    pub dark_rate: f64,
    /// Seconds.
    pub detection_window: f64,
    /// Scattering phase is `π + ε`.
    pub scattering_phase_error: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            dephasing_sigma: 0.0,
            dephasing_scope: DephasingScope::PerNode,
            dephasing_timing: DephasingTiming::BoundariesOnly,
            loss_per_element: 0.0,
            path_jitter_sigma: 0.0,
            dark_rate: 0.0,
            detection_window: default_detection_window(&TimingParams::default()),
            scattering_phase_error: 0.0,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(0.0..1.0).contains(&self.loss_per_element) {
            return Err(NoiseError::BadProbability {
                name: "loss_per_element",
                value: self.loss_per_element,
            });
        }
        for (name, value) in [
            ("dephasing_sigma", self.dephasing_sigma),
            ("path_jitter_sigma", self.path_jitter_sigma),
            ("dark_rate", self.dark_rate),
            ("detection_window", self.detection_window),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(NoiseError::Negative { name, value });
            }
        }
        if !self.scattering_phase_error.is_finite() {
            return Err(NoiseError::Negative {
                name: "scattering_phase_error",
                value: self.scattering_phase_error,
            });
        }
        Ok(())
    }

    /// Scattering errors put amplitude on several center paths at once, which
    /// only the balanced combiner can merge.
    pub fn needs_balanced_combiner(&self) -> bool {
        self.scattering_phase_error != 0.0
    }
}

/// One sampled noise configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRealization {
    /// Collective phase `φ_n` per node.
    pub node_phases: Vec<f64>,
    pub dephasing_timing: DephasingTiming,
    /// Survival per delay unit is `1 − loss_per_element`.
    pub loss_per_element: f64,
    /// Extra phase per center path, in center-path order.
    pub path_phases: Vec<f64>,
    pub scattering_phase_error: f64,
    /// Dark-count flag per detector id.
    pub dark_counts: Vec<bool>,
}

impl NoiseRealization {
    /// No noise at all.
    pub fn trivial(node_count: usize) -> Self {
        NoiseRealization {
            node_phases: vec![0.0; node_count],
            dephasing_timing: DephasingTiming::BoundariesOnly,
            loss_per_element: 0.0,
            path_phases: vec![0.0; 2 * node_count],
            scattering_phase_error: 0.0,
            dark_counts: vec![false; 2 + node_count],
        }
    }

    /// Draws a realization for a ring of `node_count` nodes from `rng`.
    pub fn draw<R: Rng + ?Sized>(params: &NoiseParams, node_count: usize, rng: &mut R) -> Result<Self, NoiseError> {
        params.validate()?;
        let mut r = NoiseRealization::trivial(node_count);
        r.dephasing_timing = params.dephasing_timing;
        r.loss_per_element = params.loss_per_element;
        r.scattering_phase_error = params.scattering_phase_error;
        if params.dephasing_sigma > 0.0 {
            let d = normal(params.dephasing_sigma);
            match params.dephasing_scope {
                DephasingScope::PerNode => {
                    for p in r.node_phases.iter_mut() {
                        *p = d.sample(rng);
                    }
                }
                DephasingScope::Global => {
                    let phi = d.sample(rng);
                    r.node_phases.iter_mut().for_each(|p| *p = phi);
                }
            }
        }
        if params.path_jitter_sigma > 0.0 {
            let d = normal(params.path_jitter_sigma);
            for p in r.path_phases.iter_mut() {
                *p = d.sample(rng);
            }
        }
        let p_dark = dark_count_penalty(params.dark_rate, params.detection_window)?;
        if p_dark > 0.0 {
            for f in r.dark_counts.iter_mut() {
                *f = rng.random::<f64>() < p_dark;
            }
        }
        Ok(r)
    }

    pub fn is_dark(&self, detector: u32) -> bool {
        self.dark_counts.get(detector as usize).copied().unwrap_or(false)
    }
}

fn sq(x: f64) -> f64 {
    x * x
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated")
}

/// Generator for trial `trial` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

pub fn sample_realization(params: &NoiseParams, node_count: usize, seed: u64) -> Result<NoiseRealization, NoiseError> {
    NoiseRealization::draw(params, node_count, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `|1⟩ → e^{iφ}|1⟩` on both atoms of `node`.
pub fn apply_collective_dephasing(state: &mut RegisterState, node: usize, phi: f64) -> Result<(), NoiseError> {
    state.apply_collective_phase(node, phi)?;
    Ok(())
}

/// Applies every node's phase from `realization`.
pub fn apply_boundary_dephasing(state: &mut RegisterState, realization: &NoiseRealization) -> Result<(), NoiseError> {
    for (n, &phi) in realization.node_phases.iter().enumerate().take(state.node_count()) {
        if phi != 0.0 {
            state.apply_collective_phase(n, phi)?;
        }
    }
    Ok(())
}

/// A heralded `CPZ` run to be repeated under noise.
#[derive(Clone, Debug, PartialEq)]
pub struct McScenario {
    pub nodes: usize,
    pub participants: Vec<usize>,
    pub entry: usize,
    /// Logical input amplitudes over the participants.
    pub input: Vec<C64>,
    pub encoding: Encoding,
    /// Injected `[h, v]` amplitudes.
    pub photon: [C64; 2],
}

/// Per-trial numbers; merged by [`McSummary::from_trials`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialResult {
    pub trial: u64,
    /// Probability that the controller sees a `Dv` click.
    pub success_prob: f64,
    /// Fidelity with the ideal output given a `Dv` click.
    pub fidelity: f64,
    /// Sampled attempts until the first `Dv` click (`None` if impossible).
    pub attempts: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McSummary {
    pub trials: u64,
    pub success_prob: f64,
    pub success_stderr: f64,
    /// Success-weighted mean fidelity.
    pub fidelity_mean: f64,
    pub fidelity_stderr: f64,
    pub attempt_histogram: BTreeMap<u32, u64>,
    pub mean_attempts: f64,
}

impl McSummary {
    pub fn from_trials(results: &[TrialResult]) -> Self {
        let mut sorted = results.to_vec();
        sorted.sort_by_key(|r| r.trial);
        let n = sorted.len() as f64;
        let p_mean = sorted.iter().map(|r| r.success_prob).sum::<f64>() / n;
        let p_var = if sorted.len() > 1 {
            sorted.iter().map(|r| sq(r.success_prob - p_mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let w: f64 = sorted.iter().map(|r| r.success_prob).sum();
        let (f_mean, f_err) = if w > 0.0 {
            let m = sorted.iter().map(|r| r.success_prob * r.fidelity).sum::<f64>() / w;
            let v = sorted
                .iter()
                .map(|r| sq(r.success_prob * (r.fidelity - m)))
                .sum::<f64>();
            (m, libm::sqrt(v) / w)
        } else {
            (0.0, 0.0)
        };
        let mut hist = BTreeMap::new();
        let mut att_sum = 0u64;
        let mut att_n = 0u64;
        for a in sorted.iter().filter_map(|r| r.attempts) {
            *hist.entry(a).or_insert(0) += 1;
            att_sum += u64::from(a);
            att_n += 1;
        }
        McSummary {
            trials: sorted.len() as u64,
            success_prob: p_mean,
            success_stderr: libm::sqrt(p_var / n),
            fidelity_mean: f_mean,
            fidelity_stderr: f_err,
            attempt_histogram: hist,
            mean_attempts: if att_n > 0 {
                att_sum as f64 / att_n as f64
            } else {
                0.0
            },
        }
    }
}

/// Graph, schedule and targets built once for many trials.
#[derive(Clone, Debug)]
pub struct McPrepared {
    scenario: McScenario,
    params: NoiseParams,
    graph: NetworkGraph,
    plan: PropagationPlan,
    input: RegisterState,
    target: RegisterState,
}

impl McPrepared {
    pub fn new(scenario: &McScenario, params: &NoiseParams) -> Result<Self, NoiseError> {
        params.validate()?;
        let model = if params.needs_balanced_combiner() {
            CombinerModel::Balanced
        } else {
            CombinerModel::Ideal
        };
        let graph = network::build_ring_network_with(scenario.nodes, model)?;
        let schedule = network::compile_schedule_with(
            &graph,
            &scenario.participants,
            scenario.entry,
            scenario.encoding.hook_style(),
        )?;
        let plan = PropagationPlan::new(&graph, &schedule)?;
        let norm: f64 = scenario.input.iter().map(|a| a.norm_sqr()).sum();
        let amps: Vec<C64> = scenario.input.iter().map(|a| a / libm::sqrt(norm)).collect();
        let input = logical::register_from_logical(scenario.nodes, &scenario.participants, &amps, scenario.encoding)?;
        let last = amps.len() - 1;
        let mut flipped = amps;
        flipped[last] = -flipped[last];
        let target = logical::register_from_logical(scenario.nodes, &scenario.participants, &flipped, scenario.encoding)?;
        Ok(McPrepared {
            scenario: scenario.clone(),
            params: *params,
            graph,
            plan,
            input,
            target,
        })
    }

    pub fn trial(&self, seed: u64, trial: u64) -> Result<TrialResult, NoiseError> {
        let mut rng = trial_rng(seed, trial);
        let real = NoiseRealization::draw(&self.params, self.scenario.nodes, &mut rng)?;
        let mut reg = self.input.clone();
        apply_boundary_dephasing(&mut reg, &real)?;
        let gate = CpGate::from_plan(&self.graph, &self.plan, self.scenario.encoding).with_photon(self.scenario.photon);
        let b = gate.branches(&reg, Some(&real))?;
        let f_dv = match &b.dv_joint {
            Some(j) => j.register_fidelity(&self.target)?,
            None => 0.0,
        };
        // a lone dark count on Dv turns a lost photon into a false herald
        let false_dv = real.is_dark(DV) && !real.is_dark(network::DH);
        let (p_nc, f_nc) = match (&b.no_click_joint, false_dv) {
            (Some(j), true) => (b.p_no_click, j.register_fidelity(&self.target)?),
            _ => (0.0, 0.0),
        };
        let p = b.p_dv + p_nc;
        let fidelity = if p > 0.0 { (b.p_dv * f_dv + p_nc * f_nc) / p } else { 0.0 };
        let attempts = if p > 0.0 {
            let g = Geometric::new(p.min(1.0)).expect("p in (0, 1]");
            Some(g.sample(&mut rng).saturating_add(1).min(u64::from(u32::MAX)) as u32)
        } else {
            None
        };
        Ok(TrialResult {
            trial,
            success_prob: p,
            fidelity,
            attempts,
        })
    }
}

/// Runs `trials` independent realizations sequentially.
pub fn monte_carlo_fidelity(scenario: &McScenario, params: &NoiseParams, trials: u64, seed: u64) -> Result<McSummary, NoiseError> {
    if trials == 0 {
        return Err(NoiseError::NoTrials);
    }
    let prep = McPrepared::new(scenario, params)?;
    let results = (0..trials).map(|t| prep.trial(seed, t)).collect::<Result<Vec<_>, _>>()?;
    Ok(McSummary::from_trials(&results))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingParams {
    pub kappa_over_2pi: f64,
    pub g_over_2pi: f64,
    pub gamma_over_2pi: f64,
    pub kappa_t: f64,
}

impl Default for TimingParams {
    /// κ/2π = 4 MHz, g/2π = 30 MHz, Γ/2π = 2.6 MHz, κT = 100.
    fn default() -> Self {
        TimingParams {
            kappa_over_2pi: 4.0e6,
            g_over_2pi: 30.0e6,
            gamma_over_2pi: 2.6e6,
            kappa_t: 100.0,
        }
    }
}

impl TimingParams {
    pub fn validate(&self) -> Result<(), NoiseError> {
        for (name, value) in [
            ("kappa_over_2pi", self.kappa_over_2pi),
            ("g_over_2pi", self.g_over_2pi),
            ("gamma_over_2pi", self.gamma_over_2pi),
            ("kappa_t", self.kappa_t),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(NoiseError::NonPositive { name, value });
            }
        }
        Ok(())
    }

    /// Single scattering pulse length `κT / κ`.
    pub fn pulse(&self) -> Result<f64, NoiseError> {
        self.validate()?;
        Ok(self.kappa_t / (2.0 * PI * self.kappa_over_2pi))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateKind {
    Cpf,
    Hadamard,
    Cpn(usize),
}

pub fn gate_time(kind: GateKind, timing: &TimingParams) -> Result<f64, NoiseError> {
    let t = timing.pulse()?;
    Ok(match kind {
        GateKind::Cpf => t,
        GateKind::Hadamard => 2.0 * t,
        GateKind::Cpn(n) => n as f64 * t,
    })
}

/// Window over which a dark count would be mistaken for the photon.
pub fn default_detection_window(timing: &TimingParams) -> f64 {
    gate_time(GateKind::Cpf, timing).map_or(1e-6, |t| t / 4.0)
}

/// Probability of at least one dark count in `window` seconds.
pub fn dark_count_penalty(rate: f64, window: f64) -> Result<f64, NoiseError> {
    for (name, value) in [("dark_rate", rate), ("detection_window", window)] {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(NoiseError::Negative { name, value });
        }
    }
    Ok(-libm::expm1(-rate * window))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegimeWarning {
    /// `κT` is not much larger than 1.
    ShortPulse { kappa_t: f64 },
    /// `g` is not several times the larger dissipative rate.
    WeakCoupling { g: f64, max_rate: f64 },
}

impl core::fmt::Display for RegimeWarning {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match *self {
            RegimeWarning::ShortPulse { kappa_t } => {
                write!(f, "kappa*T = {kappa_t} is below 10; the slow-pulse limit does not hold")
            }
            RegimeWarning::WeakCoupling { g, max_rate } => write!(
                f,
                "g/2pi = {g} Hz is below 3x the largest dissipative rate ({max_rate} Hz)"
            ),
        }
    }
}

pub fn validate_regime(timing: &TimingParams) -> Vec<RegimeWarning> {
    let mut w = Vec::new();
    if timing.kappa_t < 10.0 {
        w.push(RegimeWarning::ShortPulse {
            kappa_t: timing.kappa_t,
        });
    }
    let max_rate = timing.kappa_over_2pi.max(timing.gamma_over_2pi);
    if timing.g_over_2pi < 3.0 * max_rate {
        w.push(RegimeWarning::WeakCoupling {
            g: timing.g_over_2pi,
            max_rate,
        });
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{AtomString, RegisterState};

    #[test]
    fn nominal_timing() {
        let t = TimingParams::default();
        let cpf = gate_time(GateKind::Cpf, &t).unwrap();
        assert!((cpf - 3.9789e-6).abs() < 1e-9, "{cpf}");
        assert!((gate_time(GateKind::Hadamard, &t).unwrap() - 2.0 * cpf).abs() < 1e-18);
        assert!((gate_time(GateKind::Cpn(5), &t).unwrap() - 19.894e-6).abs() < 1e-8);
        assert!(validate_regime(&t).is_empty());
    }

    #[test]
    fn timing_scales_linearly() {
        let t = TimingParams {
            kappa_t: 10.0,
            ..TimingParams::default()
        };
        let base = gate_time(GateKind::Cpf, &TimingParams::default()).unwrap();
        assert!((gate_time(GateKind::Cpf, &t).unwrap() * 10.0 - base).abs() < 1e-15);
        assert!(validate_regime(&t).is_empty());
    }

    #[test]
    fn regime_warnings() {
        let short = TimingParams {
            kappa_t: 1.0,
            ..TimingParams::default()
        };
        assert!(matches!(validate_regime(&short)[..], [RegimeWarning::ShortPulse { .. }]));
        let weak = TimingParams {
            g_over_2pi: 5.0e6,
            ..TimingParams::default()
        };
        assert!(matches!(validate_regime(&weak)[..], [RegimeWarning::WeakCoupling { .. }]));
    }

    #[test]
    fn non_positive_timing_is_rejected() {
        let bad = TimingParams {
            kappa_over_2pi: 0.0,
            ..TimingParams::default()
        };
        assert!(gate_time(GateKind::Cpf, &bad).is_err());
    }

    #[test]
    fn dark_counts() {
        let p = dark_count_penalty(100.0, 1e-6).unwrap();
        assert!((p - 1e-4).abs() < 1e-8);
        assert_eq!(dark_count_penalty(0.0, 5.0).unwrap(), 0.0);
        assert_eq!(dark_count_penalty(100.0, 0.0).unwrap(), 0.0);
        assert!(dark_count_penalty(-1.0, 1.0).is_err());
        let w = NoiseParams::default().detection_window;
        assert!((w - 0.9947e-6).abs() < 1e-9);
    }

    #[test]
    fn zero_params_give_trivial_realization() {
        let p = NoiseParams::default();
        assert_eq!(sample_realization(&p, 3, 7).unwrap(), NoiseRealization::trivial(3));
    }

    #[test]
    fn realizations_are_reproducible() {
        let p = NoiseParams {
            dephasing_sigma: 0.3,
            path_jitter_sigma: 0.1,
            dark_rate: 1e5,
            ..NoiseParams::default()
        };
        assert_eq!(sample_realization(&p, 4, 11).unwrap(), sample_realization(&p, 4, 11).unwrap());
        assert_ne!(sample_realization(&p, 4, 11).unwrap(), sample_realization(&p, 4, 12).unwrap());
        let mut a = trial_rng(5, 3);
        let mut b = trial_rng(5, 3);
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn global_scope_shares_phase() {
        let p = NoiseParams {
            dephasing_sigma: 1.0,
            dephasing_scope: DephasingScope::Global,
            ..NoiseParams::default()
        };
        let r = sample_realization(&p, 4, 1).unwrap();
        assert!(r.node_phases.iter().all(|&x| x == r.node_phases[0]));
        assert!(r.node_phases[0] != 0.0);
    }

    #[test]
    fn invalid_params() {
        let p = NoiseParams {
            loss_per_element: 1.0,
            ..NoiseParams::default()
        };
        assert!(p.validate().is_err());
        let p = NoiseParams {
            path_jitter_sigma: -0.1,
            ..NoiseParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn collective_phase_on_logical_states() {
        let phi = 0.7;
        for pair in [0b01u8, 0b10] {
            let mut s = RegisterState::basis(1, AtomString(u64::from(pair))).unwrap();
            apply_collective_dephasing(&mut s, 0, phi).unwrap();
            let a = s.amplitude(AtomString(u64::from(pair)));
            assert!((a - C64::from_polar(1.0, phi)).norm() < 1e-15);
        }
        // |11⟩ and |00⟩ split by e^{2iφ}
        let h = C64::new(core::f64::consts::FRAC_1_SQRT_2, 0.0);
        let s0 = RegisterState::from_amplitudes(1, [(AtomString(0b11), h), (AtomString(0b00), h)]).unwrap();
        let mut s = s0.clone();
        apply_collective_dephasing(&mut s, 0, phi).unwrap();
        let ratio = s.amplitude(AtomString(0b11)) / s.amplitude(AtomString(0b00));
        assert!((ratio - C64::from_polar(1.0, 2.0 * phi)).norm() < 1e-15);
        assert!(s.fidelity(&s0).unwrap() < 1.0);
        let mut z = s0.clone();
        apply_collective_dephasing(&mut z, 0, 0.0).unwrap();
        assert_eq!(z, s0);
    }
}
