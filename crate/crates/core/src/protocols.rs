//! Logical-qubit layer: encoding, readout, logical Hadamard, heralded
//! controlled-phase gates and the Toffoli composition.

use alloc::borrow::Cow;
use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::Rng;

use crate::logical::{Encoding, LogicalError};
use crate::network::{self, NetworkError, NetworkGraph, PropagationPlan, PropagationResult, SwitchSchedule, DH, DV};
use crate::noise_timing::{NoiseError, NoiseParams, NoiseRealization};
use crate::qstate::{JointState, Mat4, Outcome, RegisterState, StateError, C64};

/// Largest leakage amplitude tolerated at a protocol boundary.
pub const LEAKAGE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("node {node} has leakage amplitude {amplitude:e}")]
    Leakage { node: usize, amplitude: f64 },
    #[error("logical amplitudes have squared norm {0}")]
    Unnormalized(f64),
    #[error("node {0} is not in a product basis state")]
    NotProduct(usize),
    #[error("nodes {0:?} must be distinct")]
    NotDistinct([usize; 3]),
    #[error("no Dv herald after {attempts} attempts")]
    Exhausted { attempts: u32, last: Box<HeraldedOutcome> },
    #[error("max_attempts must be at least 1")]
    NoAttempts,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Logical(#[from] LogicalError),
    #[error("noise: {0}")]
    Noise(Box<NoiseError>),
}

impl From<NoiseError> for ProtocolError {
    fn from(e: NoiseError) -> Self {
        ProtocolError::Noise(Box::new(e))
    }
}

pub type Result<T> = core::result::Result<T, ProtocolError>;

/// What the controller saw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Herald {
    DvSuccess,
    DhIdentity,
    NoClickLoss,
    /// A dark count on `apparent` while the photon was lost.
    DarkFalse { apparent: u32 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeraldedOutcome {
    pub which: Herald,
    pub probability: f64,
    pub post_state: RegisterState,
    pub attempts_used: u32,
    /// Herald and its probability for every attempt, in order.
    pub history: Vec<(Herald, f64)>,
}

/// Weight outside the encoding's two logical pair values at `node`.
pub fn leakage(state: &RegisterState, node: usize, enc: Encoding) -> Result<f64> {
    let w = state.pair_weights(node)?;
    Ok((0..4u8)
        .filter(|&p| enc.decode(p).is_none())
        .map(|p| w[p as usize])
        .sum())
}

fn check_leakage(state: &RegisterState, nodes: &[usize], enc: Encoding) -> Result<()> {
    for &n in nodes {
        let amplitude = libm::sqrt(leakage(state, n, enc)?);
        if amplitude >= LEAKAGE_TOL {
            return Err(ProtocolError::Leakage { node: n, amplitude });
        }
    }
    Ok(())
}

/// Sets `node`'s pair to `alpha|10⟩ + beta|01⟩`.
pub fn encode_logical(state: &mut RegisterState, node: usize, alpha: C64, beta: C64) -> Result<()> {
    encode_logical_with(state, node, alpha, beta, Encoding::Dfs)
}

pub fn encode_logical_with(state: &mut RegisterState, node: usize, alpha: C64, beta: C64, enc: Encoding) -> Result<()> {
    let n = alpha.norm_sqr() + beta.norm_sqr();
    if (n - 1.0).abs() > 1e-12 {
        return Err(ProtocolError::Unnormalized(n));
    }
    let w = state.pair_weights(node)?;
    let occupied = w.iter().filter(|&&x| x > 0.0).count();
    if occupied != 1 {
        return Err(ProtocolError::NotProduct(node));
    }
    let terms: Vec<_> = state
        .iter()
        .flat_map(|(k, a)| {
            [
                (k.with_pair(node, enc.pair(false)), a * alpha),
                (k.with_pair(node, enc.pair(true)), a * beta),
            ]
        })
        .collect();
    *state = RegisterState::from_amplitudes(state.node_count(), terms)?;
    Ok(())
}

/// Hadamard on `span{|0̃⟩, |1̃⟩}`, identity on `|00⟩` and `|11⟩`.
pub fn logical_hadamard(state: &mut RegisterState, node: usize) -> Result<()> {
    check_leakage(state, &[node], Encoding::Dfs)?;
    let s = C64::new(core::f64::consts::FRAC_1_SQRT_2, 0.0);
    let one = C64::new(1.0, 0.0);
    let mut m = Mat4::zeros();
    m[(0b00, 0b00)] = one;
    m[(0b11, 0b11)] = one;
    m[(0b01, 0b01)] = s;
    m[(0b10, 0b01)] = s;
    m[(0b01, 0b10)] = s;
    m[(0b10, 0b10)] = -s;
    state.apply_pair_matrix(node, &m)?;
    Ok(())
}

/// Exact herald branches of one gate run.
#[derive(Clone, Debug)]
pub struct CpBranches {
    pub p_dh: f64,
    pub p_dv: f64,
    pub p_no_click: f64,
    /// Renormalized joint states; the `Dv` branch has its overall `−1`
    /// removed.
    pub dh_joint: Option<JointState>,
    pub dv_joint: Option<JointState>,
    pub no_click_joint: Option<JointState>,
    pub propagation: PropagationResult,
}

impl CpBranches {
    pub fn dh_state(&self) -> Option<RegisterState> {
        self.dh_joint.as_ref()?.single_mode_register()
    }

    pub fn dv_state(&self) -> Option<RegisterState> {
        self.dv_joint.as_ref()?.single_mode_register()
    }
}

/// A compiled heralded `CPZ` over a participant set.
#[derive(Clone, Debug)]
pub struct CpGate<'g> {
    graph: &'g NetworkGraph,
    plan: Cow<'g, PropagationPlan>,
    encoding: Encoding,
    photon: [C64; 2],
}

/// `(h + v)/√2`.
pub fn standard_photon() -> [C64; 2] {
    let half = C64::new(core::f64::consts::FRAC_1_SQRT_2, 0.0);
    [half, half]
}

impl<'g> CpGate<'g> {
    pub fn new(graph: &'g NetworkGraph, participants: &[usize], entry: usize, encoding: Encoding) -> Result<Self> {
        let schedule = network::compile_schedule_with(graph, participants, entry, encoding.hook_style())?;
        Self::from_parts(graph, &schedule, encoding)
    }

    pub fn from_parts(graph: &'g NetworkGraph, schedule: &SwitchSchedule, encoding: Encoding) -> Result<Self> {
        Ok(CpGate {
            graph,
            plan: Cow::Owned(PropagationPlan::new(graph, schedule)?),
            encoding,
            photon: standard_photon(),
        })
    }

    /// Gate over a plan built for `graph`.
    pub fn from_plan(graph: &'g NetworkGraph, plan: &'g PropagationPlan, encoding: Encoding) -> Self {
        CpGate {
            graph,
            plan: Cow::Borrowed(plan),
            encoding,
            photon: standard_photon(),
        }
    }

    /// Injects `[h, v]` instead of the standard photon.
    pub fn with_photon(mut self, pol: [C64; 2]) -> Self {
        self.photon = pol;
        self
    }

    pub fn schedule(&self) -> &SwitchSchedule {
        self.plan.schedule()
    }

    pub fn participants(&self) -> &[usize] {
        self.schedule().participants()
    }

    /// Injects the photon, propagates and splits on `Dh`, `Dv`, no click.
    pub fn branches(&self, state: &RegisterState, noise: Option<&NoiseRealization>) -> Result<CpBranches> {
        check_leakage(state, self.participants(), self.encoding)?;
        let mut joint = JointState::from_register(state, self.graph.registry());
        network::inject_photon(&mut joint, self.graph, self.schedule().entry(), self.photon)?;
        let propagation = self.plan.run(&joint, noise)?;
        let mut out = CpBranches {
            p_dh: 0.0,
            p_dv: 0.0,
            p_no_click: 0.0,
            dh_joint: None,
            dv_joint: None,
            no_click_joint: None,
            propagation,
        };
        for b in out.propagation.state.detector_branches(&[DH, DV])? {
            match b.outcome {
                Outcome::Click(DH) => {
                    out.p_dh = b.probability;
                    out.dh_joint = b.state;
                }
                Outcome::Click(_) => {
                    out.p_dv = b.probability;
                    out.dv_joint = b.state.map(|mut s| {
                        s.scale(C64::new(-1.0, 0.0));
                        s
                    });
                }
                Outcome::NoClick => {
                    out.p_no_click = b.probability;
                    out.no_click_joint = b.state;
                }
            }
        }
        Ok(out)
    }

    /// One sampled run. Dark counts in `noise` only matter when the photon
    /// is lost; two dark clicks count as no herald.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        state: &RegisterState,
        noise: Option<&NoiseRealization>,
        rng: &mut R,
    ) -> Result<HeraldedOutcome> {
        let b = self.branches(state, noise)?;
        let r: f64 = rng.random::<f64>() * (b.p_dh + b.p_dv + b.p_no_click);
        let (which, probability, joint) = if r < b.p_dv {
            (Herald::DvSuccess, b.p_dv, b.dv_joint)
        } else if r < b.p_dv + b.p_dh {
            (Herald::DhIdentity, b.p_dh, b.dh_joint)
        } else {
            let dark = noise.map(|n| (n.is_dark(DH), n.is_dark(DV)));
            let which = match dark {
                Some((true, false)) => Herald::DarkFalse { apparent: DH },
                Some((false, true)) => Herald::DarkFalse { apparent: DV },
                _ => Herald::NoClickLoss,
            };
            (which, b.p_no_click, b.no_click_joint)
        };
        let joint = joint.ok_or(StateError::ZeroNorm)?;
        let post_state = joint.unravel(rng)?;
        Ok(HeraldedOutcome {
            which,
            probability,
            post_state,
            attempts_used: 1,
            history: alloc::vec![(which, probability)],
        })
    }
}

/// One heralded run of `CPZ` over `participants`.
pub fn u_cp_subset<R: Rng + ?Sized>(
    state: &RegisterState,
    graph: &NetworkGraph,
    participants: &[usize],
    entry: usize,
    rng: &mut R,
) -> Result<HeraldedOutcome> {
    CpGate::new(graph, participants, entry, Encoding::Dfs)?.sample(state, None, rng)
}

/// Reruns the gate after `Dh` or a lost photon until `Dv` clicks (or a dark
/// count fakes it). With `noise`, every attempt draws a fresh realization.
pub fn repeat_until_success<R: Rng + ?Sized>(
    state: &RegisterState,
    graph: &NetworkGraph,
    participants: &[usize],
    entry: usize,
    max_attempts: u32,
    noise: Option<&NoiseParams>,
    rng: &mut R,
) -> Result<HeraldedOutcome> {
    let gate = CpGate::new(graph, participants, entry, Encoding::Dfs)?;
    repeat_gate(&gate, state, max_attempts, noise, rng)
}

pub fn repeat_gate<R: Rng + ?Sized>(
    gate: &CpGate<'_>,
    state: &RegisterState,
    max_attempts: u32,
    noise: Option<&NoiseParams>,
    rng: &mut R,
) -> Result<HeraldedOutcome> {
    if max_attempts == 0 {
        return Err(ProtocolError::NoAttempts);
    }
    let mut current = state.clone();
    let mut last = None;
    for attempt in 1..=max_attempts {
        let real = match noise {
            Some(p) => Some(NoiseRealization::draw(p, gate.graph.node_count(), rng)?),
            None => None,
        };
        let mut out = gate.sample(&current, real.as_ref(), rng)?;
        out.attempts_used = attempt;
        if let Some(prev) = &last {
            let prev: &HeraldedOutcome = prev;
            let mut h = prev.history.clone();
            h.extend(out.history.iter().copied());
            out.history = h;
        }
        match out.which {
            Herald::DvSuccess | Herald::DarkFalse { apparent: DV } => return Ok(out),
            _ => {
                current = out.post_state.clone();
                last = Some(out);
            }
        }
    }
    Err(ProtocolError::Exhausted {
        attempts: max_attempts,
        last: Box::new(last.expect("at least one attempt")),
    })
}

/// The three nodes in ring order; `CPZ` is symmetric, so order is free.
fn distinct(controls: (usize, usize), target: usize) -> Result<[usize; 3]> {
    let mut s = [controls.0, controls.1, target];
    if s[0] == s[1] || s[0] == s[2] || s[1] == s[2] {
        return Err(ProtocolError::NotDistinct(s));
    }
    s.sort_unstable();
    Ok(s)
}

/// `H̃_k · CPZ(i, j, k) · H̃_k` with the `CPZ` repeated until success.
pub fn toffoli<R: Rng + ?Sized>(
    state: &RegisterState,
    graph: &NetworkGraph,
    controls: (usize, usize),
    target: usize,
    max_attempts: u32,
    rng: &mut R,
) -> Result<HeraldedOutcome> {
    let s = distinct(controls, target)?;
    let gate = CpGate::new(graph, &s, s[0], Encoding::Dfs)?;
    let mut st = state.clone();
    logical_hadamard(&mut st, target)?;
    let mut out = match repeat_gate(&gate, &st, max_attempts, None, rng) {
        Ok(o) => o,
        Err(ProtocolError::Exhausted { attempts, mut last }) => {
            logical_hadamard(&mut last.post_state, target)?;
            return Err(ProtocolError::Exhausted { attempts, last });
        }
        Err(e) => return Err(e),
    };
    logical_hadamard(&mut out.post_state, target)?;
    Ok(out)
}

/// Toffoli conditioned on the first `CPZ` attempt succeeding: the success
/// probability of one attempt and the post-state.
pub fn toffoli_exact(
    state: &RegisterState,
    graph: &NetworkGraph,
    controls: (usize, usize),
    target: usize,
) -> Result<(f64, RegisterState)> {
    let s = distinct(controls, target)?;
    let gate = CpGate::new(graph, &s, s[0], Encoding::Dfs)?;
    let mut st = state.clone();
    logical_hadamard(&mut st, target)?;
    let b = gate.branches(&st, None)?;
    let mut post = b.dv_state().ok_or(StateError::ZeroNorm)?;
    logical_hadamard(&mut post, target)?;
    Ok((b.p_dv, post))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadoutValue {
    Zero,
    One,
    Leak00,
    Leak11,
}

impl ReadoutValue {
    fn from_pair(pair: u8) -> Self {
        match pair {
            0b01 => ReadoutValue::Zero,
            0b10 => ReadoutValue::One,
            0b00 => ReadoutValue::Leak00,
            _ => ReadoutValue::Leak11,
        }
    }

    fn pair(self) -> u8 {
        match self {
            ReadoutValue::Zero => 0b01,
            ReadoutValue::One => 0b10,
            ReadoutValue::Leak00 => 0b00,
            ReadoutValue::Leak11 => 0b11,
        }
    }
}

/// Probability of each readout value of `node`.
pub fn readout_distribution(state: &RegisterState, node: usize) -> Result<[(ReadoutValue, f64); 4]> {
    let w = state.pair_weights(node)?;
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(StateError::ZeroNorm.into());
    }
    let mut out = [(ReadoutValue::Zero, 0.0); 4];
    for (i, v) in [ReadoutValue::Zero, ReadoutValue::One, ReadoutValue::Leak00, ReadoutValue::Leak11]
        .into_iter()
        .enumerate()
    {
        out[i] = (v, w[v.pair() as usize] / total);
    }
    Ok(out)
}

/// Projective measurement of `node`'s pair.
pub fn readout_logical<R: Rng + ?Sized>(
    state: &RegisterState,
    node: usize,
    rng: &mut R,
) -> Result<(ReadoutValue, f64, RegisterState)> {
    let dist = readout_distribution(state, node)?;
    let r: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = None;
    for (v, p) in dist {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        chosen = Some((v, p));
        if r < acc {
            break;
        }
    }
    let (v, p) = chosen.ok_or(StateError::ZeroNorm)?;
    let collapsed = state.project_pair(node, v.pair())?.normalized()?;
    debug_assert_eq!(ReadoutValue::from_pair(v.pair()), v);
    Ok((v, p, collapsed))
}
