//! Logical encodings and conditioned maps on the participants' logical basis.
//!
//! Logical basis index `m` over participants `S` reads `S[0]` as the most
//! significant bit, so `|0̃…0̃1̃⟩` is index 1. Nodes outside `S` sit in
//! logical 0.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::network::{self, HookStyle, NetworkError, NetworkGraph, SwitchSchedule, DH, DV};
use crate::noise_timing::NoiseRealization;
use crate::qstate::{AtomString, JointState, RegisterState, StateError, C64};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LogicalError {
    #[error("logical amplitude vector has length {got}, expected {expected}")]
    WrongLength { got: usize, expected: usize },
    #[error("atoms {0:?} are outside the logical subspace")]
    OutsideSubspace(AtomString),
    #[error("detector {detector} received amplitude at ticks {first} and {second}")]
    MixedArrival { detector: u32, first: u32, second: u32 },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    State(#[from] StateError),
}

/// How one qubit is stored in a node's atom pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Encoding {
    /// `|0̃⟩ = |10⟩`, `|1̃⟩ = |01⟩`.
    Dfs,
    /// Comparison encoding: the qubit sits in atom 1 alone, atom 2 is
    /// parked in `|1⟩`. Logical 0 is `|11⟩` and logical 1 is `|01⟩`, so the
    /// cavity phase conditions on logical 0 without any `σx` pulses.
    Bare,
}

impl Encoding {
    /// Pair value (`atom1 | atom2 << 1`) of a logical bit.
    pub fn pair(self, bit: bool) -> u8 {
        match (self, bit) {
            (Encoding::Dfs, false) => 0b01,
            (Encoding::Dfs, true) => 0b10,
            (Encoding::Bare, false) => 0b11,
            (Encoding::Bare, true) => 0b10,
        }
    }

    pub fn decode(self, pair: u8) -> Option<bool> {
        if pair == self.pair(false) {
            Some(false)
        } else if pair == self.pair(true) {
            Some(true)
        } else {
            None
        }
    }

    pub fn hook_style(self) -> HookStyle {
        match self {
            Encoding::Dfs => HookStyle::Sandwich,
            Encoding::Bare => HookStyle::Direct,
        }
    }
}

/// Atom string of logical basis state `index` over `participants`.
pub fn basis_atoms(node_count: usize, participants: &[usize], index: usize, enc: Encoding) -> AtomString {
    let k = participants.len();
    let mut a = AtomString::default();
    for n in 0..node_count {
        a = a.with_pair(n, enc.pair(false));
    }
    for (pos, &n) in participants.iter().enumerate() {
        let bit = (index >> (k - 1 - pos)) & 1 == 1;
        a = a.with_pair(n, enc.pair(bit));
    }
    a
}

/// Inverse of [`basis_atoms`]; `None` if any node is outside the subspace
/// or a non-participant is not in logical 0.
pub fn basis_index(atoms: AtomString, node_count: usize, participants: &[usize], enc: Encoding) -> Option<usize> {
    let k = participants.len();
    let mut index = 0usize;
    for n in 0..node_count {
        let bit = enc.decode(atoms.pair(n))?;
        match participants.iter().position(|&p| p == n) {
            Some(pos) => {
                if bit {
                    index |= 1 << (k - 1 - pos);
                }
            }
            None if bit => return None,
            None => {}
        }
    }
    Some(index)
}

/// Register state `Σ_m amps[m] |m⟩` over the participants' logical basis.
pub fn register_from_logical(
    node_count: usize,
    participants: &[usize],
    amps: &[C64],
    enc: Encoding,
) -> Result<RegisterState, LogicalError> {
    let dim = 1usize << participants.len();
    if amps.len() != dim {
        return Err(LogicalError::WrongLength {
            got: amps.len(),
            expected: dim,
        });
    }
    let terms = amps
        .iter()
        .enumerate()
        .map(|(m, &a)| (basis_atoms(node_count, participants, m, enc), a));
    Ok(RegisterState::from_amplitudes(node_count, terms)?)
}

/// Logical amplitudes of `reg`; errors if any amplitude above `1e-10` lies
/// outside the participants' logical subspace.
pub fn logical_amplitudes(reg: &RegisterState, participants: &[usize], enc: Encoding) -> Result<Vec<C64>, LogicalError> {
    let mut out = alloc::vec![C64::new(0.0, 0.0); 1 << participants.len()];
    for (atoms, a) in reg.iter() {
        match basis_index(atoms, reg.node_count(), participants, enc) {
            Some(m) => out[m] += a,
            None if a.norm() > 1e-10 => return Err(LogicalError::OutsideSubspace(atoms)),
            None => {}
        }
    }
    Ok(out)
}

/// Per detector outcome, the matrix taking logical input to the detector's
/// (unnormalized) logical output amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct LogicalMap {
    pub participants: Vec<usize>,
    pub outcomes: BTreeMap<u32, DMatrix<C64>>,
}

impl LogicalMap {
    pub fn dim(&self) -> usize {
        1 << self.participants.len()
    }

    pub fn get(&self, detector: u32) -> Option<&DMatrix<C64>> {
        self.outcomes.get(&detector)
    }

    /// Probability of each outcome for each basis input: column norms.
    pub fn probabilities(&self, detector: u32) -> Vec<f64> {
        match self.outcomes.get(&detector) {
            Some(m) => (0..m.ncols()).map(|c| m.column(c).norm_squared()).collect(),
            None => alloc::vec![0.0; self.dim()],
        }
    }

    /// `max |Σ_o M_o†M_o − I|`.
    pub fn completeness_deviation(&self) -> f64 {
        let d = self.dim();
        let mut acc = DMatrix::<C64>::zeros(d, d);
        for m in self.outcomes.values() {
            acc += m.adjoint() * m;
        }
        acc -= DMatrix::<C64>::identity(d, d);
        acc.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Adds one input column of detector amplitudes to the map. Amplitude at one
/// detector must arrive at a single tick for every input, otherwise the
/// arrival time itself would carry which-path information.
pub(crate) fn add_column<I>(
    outcomes: &mut BTreeMap<u32, DMatrix<C64>>,
    ticks: &mut BTreeMap<u32, u32>,
    dim: usize,
    column: usize,
    node_count: usize,
    participants: &[usize],
    enc: Encoding,
    hits: I,
) -> Result<(), LogicalError>
where
    I: IntoIterator<Item = (u32, u32, AtomString, C64)>,
{
    for (det, tick, atoms, a) in hits {
        if a.norm() <= 1e-14 {
            continue;
        }
        if let Some(&t) = ticks.get(&det) {
            if t != tick {
                return Err(LogicalError::MixedArrival {
                    detector: det,
                    first: t,
                    second: tick,
                });
            }
        } else {
            ticks.insert(det, tick);
        }
        let row = match basis_index(atoms, node_count, participants, enc) {
            Some(r) => r,
            None if a.norm() <= 1e-10 => continue,
            None => return Err(LogicalError::OutsideSubspace(atoms)),
        };
        let m = outcomes.entry(det).or_insert_with(|| DMatrix::zeros(dim, dim));
        m[(row, column)] += a;
    }
    Ok(())
}

/// The engine's conditioned maps for `Dh` and `Dv`, with the photon injected
/// as `(h + v)/√2` at the schedule's entry node.
pub fn conditioned_map(
    graph: &NetworkGraph,
    schedule: &SwitchSchedule,
    enc: Encoding,
    noise: Option<&NoiseRealization>,
) -> Result<LogicalMap, LogicalError> {
    let n = graph.node_count();
    let s = schedule.participants();
    let dim = 1usize << s.len();
    let half = C64::new(core::f64::consts::FRAC_1_SQRT_2, 0.0);
    let mut outcomes = BTreeMap::new();
    let mut ticks = BTreeMap::new();
    let plan = network::PropagationPlan::new(graph, schedule)?;
    outcomes.insert(DH, DMatrix::zeros(dim, dim));
    outcomes.insert(DV, DMatrix::zeros(dim, dim));
    for m in 0..dim {
        let atoms = basis_atoms(n, s, m, enc);
        let mut st = JointState::new(n, atoms, None, graph.registry())?;
        network::inject_photon(&mut st, graph, schedule.entry(), [half, half])?;
        let res = plan.run(&st, noise)?;
        let hits = res
            .detectors
            .iter()
            .filter(|(&d, _)| d == DH || d == DV)
            .flat_map(|(&d, v)| v.iter().map(move |&(a, t, x)| (d, t, a, x)));
        add_column(&mut outcomes, &mut ticks, dim, m, n, s, enc, hits)?;
    }
    Ok(LogicalMap {
        participants: s.to_vec(),
        outcomes,
    })
}
