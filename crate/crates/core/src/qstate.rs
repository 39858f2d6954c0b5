//! Exact pure states of one photon jointly with a register of two-atom nodes.
//!
//! Amplitudes live in a sparse table keyed by `(AtomString, PhotonMode)`. The
//! key order groups every photon mode of one atomic basis string together,
//! which is what the collision check in [`JointState::relocate_modes`] walks.
//!
//! Atom layout: node `n` owns bits `2n` (atom 1) and `2n + 1` (atom 2), so
//! atom 1 of node 0 is the least significant bit.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::{Matrix2, Matrix4};
use num_complex::Complex64;
use rand::Rng;

pub type C64 = Complex64;
pub type Mat2 = Matrix2<C64>;
pub type Mat4 = Matrix4<C64>;

/// Amplitudes with modulus below this are dropped after every update.
pub const PRUNE_CUTOFF: f64 = 1e-15;
/// Tolerance for unitarity and normalization checks.
pub const UNITARY_TOL: f64 = 1e-12;

const ONE: C64 = C64::new(1.0, 0.0);
const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StateError {
    #[error("a register needs at least one node")]
    NoNodes,
    #[error("node {node} out of range for a {count}-node register")]
    NodeOutOfRange { node: usize, count: usize },
    #[error("atom string {0:#x} does not fit the register")]
    AtomsOutOfRange(u64),
    #[error("matrix is not unitary (max deviation {0:e})")]
    NotUnitary(f64),
    #[error("amplitudes are not normalized (squared norm {0})")]
    NotNormalized(f64),
    #[error("unknown photon mode {0:?}")]
    UnknownMode(PhotonMode),
    #[error("{0:?} is a sink mode")]
    SinkMode(PhotonMode),
    #[error("modes {first:?} and {second:?} merge non-isometrically for atoms {atoms:?}")]
    Collision {
        atoms: AtomString,
        first: PhotonMode,
        second: PhotonMode,
    },
    #[error("photon amplitude is still in flight")]
    PhotonInFlight,
    #[error("a photon is already present")]
    PhotonPresent,
    #[error("register sizes differ ({0} vs {1} nodes)")]
    DimensionMismatch(usize, usize),
    #[error("state has zero norm")]
    ZeroNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarization {
    H,
    V,
}

impl Polarization {
    pub const BOTH: [Polarization; 2] = [Polarization::H, Polarization::V];

    pub fn index(self) -> usize {
        match self {
            Polarization::H => 0,
            Polarization::V => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Polarization::H
        } else {
            Polarization::V
        }
    }
}

/// Where the photon is.
///
/// `Guided` modes are locations inside the optics and carry a polarization.
/// The remaining variants are sinks: once amplitude reaches them it never
/// moves again. Sink keys carry the arrival tick (and for `Lost`, the place
/// the photon left the apparatus) so that physically distinguishable events
/// never interfere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PhotonMode {
    NoPhoton,
    Guided { loc: u32, pol: Polarization },
    Detector { id: u32, tick: u32 },
    Lost { origin: u32, pol: Polarization, tick: u32 },
}

impl PhotonMode {
    pub fn guided(loc: u32, pol: Polarization) -> Self {
        PhotonMode::Guided { loc, pol }
    }

    pub fn is_sink(&self) -> bool {
        !matches!(self, PhotonMode::Guided { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AtomIndex {
    First,
    Second,
}

impl AtomIndex {
    fn offset(self) -> u32 {
        match self {
            AtomIndex::First => 0,
            AtomIndex::Second => 1,
        }
    }
}

/// Computational basis string of the whole atomic register.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AtomString(pub u64);

impl AtomString {
    /// Builds a string from per-node `(atom1, atom2)` bits.
    pub fn from_pairs(pairs: &[(u8, u8)]) -> Self {
        let mut bits = 0u64;
        for (n, &(a1, a2)) in pairs.iter().enumerate() {
            bits |= u64::from(a1 & 1) << (2 * n);
            bits |= u64::from(a2 & 1) << (2 * n + 1);
        }
        AtomString(bits)
    }

    pub fn atom(self, node: usize, atom: AtomIndex) -> bool {
        (self.0 >> (2 * node as u32 + atom.offset())) & 1 == 1
    }

    pub fn flip(self, node: usize, atom: AtomIndex) -> Self {
        AtomString(self.0 ^ (1 << (2 * node as u32 + atom.offset())))
    }

    /// Node pair packed as `atom1 | atom2 << 1`.
    pub fn pair(self, node: usize) -> u8 {
        ((self.0 >> (2 * node)) & 0b11) as u8
    }

    pub fn with_pair(self, node: usize, pair: u8) -> Self {
        let shift = 2 * node;
        AtomString((self.0 & !(0b11 << shift)) | (u64::from(pair & 0b11) << shift))
    }

    pub fn fits(self, node_count: usize) -> bool {
        node_count >= 32 || self.0 >> (2 * node_count) == 0
    }
}

/// Which photon modes a [`JointState`] may hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModeRegistry {
    pub guided_locations: u32,
    pub detectors: u32,
}

impl ModeRegistry {
    pub fn contains(&self, mode: &PhotonMode) -> bool {
        match *mode {
            PhotonMode::NoPhoton | PhotonMode::Lost { .. } => true,
            PhotonMode::Guided { loc, .. } => loc < self.guided_locations,
            PhotonMode::Detector { id, .. } => id < self.detectors,
        }
    }
}

/// Returns the largest entry of `|m†m - I|`.
pub fn unitarity_deviation(m: &Mat2) -> f64 {
    let p = m.adjoint() * m - Mat2::identity();
    p.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn check_unitary(m: &Mat2) -> Result<(), StateError> {
    let dev = unitarity_deviation(m);
    if dev > UNITARY_TOL {
        Err(StateError::NotUnitary(dev))
    } else {
        Ok(())
    }
}

pub fn pauli_x() -> Mat2 {
    Mat2::new(ZERO, ONE, ONE, ZERO)
}

fn check_node(node: usize, count: usize) -> Result<(), StateError> {
    if node >= count {
        Err(StateError::NodeOutOfRange { node, count })
    } else {
        Ok(())
    }
}

/// State of the atomic register alone.
#[derive(Clone, Debug, PartialEq)]
pub struct RegisterState {
    node_count: usize,
    amps: BTreeMap<AtomString, C64>,
}

impl RegisterState {
    pub fn basis(node_count: usize, atoms: AtomString) -> Result<Self, StateError> {
        Self::from_amplitudes(node_count, [(atoms, ONE)])
    }

    /// Collects amplitudes (summing repeats). The result is not renormalized.
    pub fn from_amplitudes<I>(node_count: usize, amps: I) -> Result<Self, StateError>
    where
        I: IntoIterator<Item = (AtomString, C64)>,
    {
        if node_count == 0 {
            return Err(StateError::NoNodes);
        }
        let mut table = BTreeMap::new();
        for (atoms, amp) in amps {
            if !atoms.fits(node_count) {
                return Err(StateError::AtomsOutOfRange(atoms.0));
            }
            *table.entry(atoms).or_insert(ZERO) += amp;
        }
        table.retain(|_, a: &mut C64| a.norm() >= PRUNE_CUTOFF);
        Ok(RegisterState {
            node_count,
            amps: table,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn amplitude(&self, atoms: AtomString) -> C64 {
        self.amps.get(&atoms).copied().unwrap_or(ZERO)
    }

    pub fn iter(&self) -> impl Iterator<Item = (AtomString, C64)> + '_ {
        self.amps.iter().map(|(&k, &v)| (k, v))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalized(mut self) -> Result<Self, StateError> {
        let n = self.norm_sqr();
        if n <= 0.0 {
            return Err(StateError::ZeroNorm);
        }
        let s = 1.0 / libm::sqrt(n);
        for a in self.amps.values_mut() {
            *a *= s;
        }
        Ok(self)
    }

    pub fn scaled(mut self, factor: C64) -> Self {
        for a in self.amps.values_mut() {
            *a *= factor;
        }
        self
    }

    pub fn inner(&self, other: &RegisterState) -> Result<C64, StateError> {
        if self.node_count != other.node_count {
            return Err(StateError::DimensionMismatch(self.node_count, other.node_count));
        }
        Ok(self
            .amps
            .iter()
            .map(|(k, a)| a.conj() * other.amplitude(*k))
            .sum())
    }

    /// `|⟨a|b⟩|² / (⟨a|a⟩⟨b|b⟩)`, insensitive to global phase.
    pub fn fidelity(&self, other: &RegisterState) -> Result<f64, StateError> {
        let ip = self.inner(other)?;
        let norms = self.norm_sqr() * other.norm_sqr();
        if norms <= 0.0 {
            return Err(StateError::ZeroNorm);
        }
        Ok((ip.norm_sqr() / norms).min(1.0))
    }

    /// Probability weight on `{|00⟩, |11⟩}` of one node.
    pub fn leakage(&self, node: usize) -> Result<f64, StateError> {
        check_node(node, self.node_count)?;
        Ok(self
            .amps
            .iter()
            .filter(|(k, _)| matches!(k.pair(node), 0b00 | 0b11))
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    /// Weight of each node pair value `atom1 | atom2 << 1`.
    pub fn pair_weights(&self, node: usize) -> Result<[f64; 4], StateError> {
        check_node(node, self.node_count)?;
        let mut w = [0.0; 4];
        for (k, a) in &self.amps {
            w[k.pair(node) as usize] += a.norm_sqr();
        }
        Ok(w)
    }

    /// Keeps only basis strings whose pair at `node` equals `pair`.
    pub fn project_pair(&self, node: usize, pair: u8) -> Result<Self, StateError> {
        check_node(node, self.node_count)?;
        Ok(RegisterState {
            node_count: self.node_count,
            amps: self
                .amps
                .iter()
                .filter(|(k, _)| k.pair(node) == pair)
                .map(|(&k, &a)| (k, a))
                .collect(),
        })
    }

    pub fn apply_atom_unitary(
        &mut self,
        node: usize,
        atom: AtomIndex,
        u: &Mat2,
    ) -> Result<(), StateError> {
        check_node(node, self.node_count)?;
        check_unitary(u)?;
        let mut out = BTreeMap::new();
        for (&k, &a) in &self.amps {
            let bit = k.atom(node, atom) as usize;
            let partner = k.flip(node, atom);
            // column `bit` of u
            let (same, other) = (u[(bit, bit)], u[(1 - bit, bit)]);
            *out.entry(k).or_insert(ZERO) += same * a;
            *out.entry(partner).or_insert(ZERO) += other * a;
        }
        out.retain(|_, a: &mut C64| a.norm() >= PRUNE_CUTOFF);
        self.amps = out;
        Ok(())
    }

    /// Applies a 4×4 matrix to one node's pair, indexed `atom1 | atom2 << 1`.
    pub fn apply_pair_matrix(&mut self, node: usize, m: &Mat4) -> Result<(), StateError> {
        check_node(node, self.node_count)?;
        let mut out = BTreeMap::new();
        for (&k, &a) in &self.amps {
            let col = k.pair(node) as usize;
            for row in 0..4 {
                let f = m[(row, col)];
                if f != ZERO {
                    *out.entry(k.with_pair(node, row as u8)).or_insert(ZERO) += f * a;
                }
            }
        }
        out.retain(|_, a: &mut C64| a.norm() >= PRUNE_CUTOFF);
        self.amps = out;
        Ok(())
    }

    /// `|1⟩ → e^{iφ}|1⟩` on both atoms of `node`.
    pub fn apply_collective_phase(&mut self, node: usize, phi: f64) -> Result<(), StateError> {
        check_node(node, self.node_count)?;
        for (k, a) in self.amps.iter_mut() {
            let ones = k.atom(node, AtomIndex::First) as i32 + k.atom(node, AtomIndex::Second) as i32;
            if ones > 0 {
                *a *= C64::from_polar(1.0, phi * f64::from(ones));
            }
        }
        Ok(())
    }
}

/// Fidelity between two register states, invariant under global phase.
pub fn fidelity_up_to_global_phase(
    a: &RegisterState,
    b: &RegisterState,
) -> Result<f64, StateError> {
    a.fidelity(b)
}

/// Photon mode relocation table: source mode → image (target, factor) list.
/// Modes absent from the table stay where they are.
pub type ModeMap = BTreeMap<PhotonMode, Vec<(PhotonMode, C64)>>;

/// Outcome of a detector readout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Outcome {
    Click(u32),
    NoClick,
}

/// One measurement branch: its probability and the renormalized joint state
/// restricted to the modes consistent with it (`None` when probability is 0).
#[derive(Clone, Debug)]
pub struct Branch {
    pub outcome: Outcome,
    pub probability: f64,
    pub state: Option<JointState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    node_count: usize,
    registry: ModeRegistry,
    amps: BTreeMap<(AtomString, PhotonMode), C64>,
    pruned: f64,
}

impl JointState {
    /// Product of a basis register and an optional photon `(location, [h, v])`.
    pub fn new(
        node_count: usize,
        atoms: AtomString,
        photon: Option<(u32, [C64; 2])>,
        registry: ModeRegistry,
    ) -> Result<Self, StateError> {
        let reg = RegisterState::basis(node_count, atoms)?;
        let mut s = Self::from_register(&reg, registry);
        if let Some((loc, pol)) = photon {
            s.place_photon(loc, pol)?;
        }
        Ok(s)
    }

    /// The register with no photon.
    pub fn from_register(reg: &RegisterState, registry: ModeRegistry) -> Self {
        JointState {
            node_count: reg.node_count,
            registry,
            amps: reg
                .amps
                .iter()
                .map(|(&k, &a)| ((k, PhotonMode::NoPhoton), a))
                .collect(),
            pruned: 0.0,
        }
    }

    /// Moves the NoPhoton amplitude onto a guided location with the given
    /// polarization amplitudes.
    pub fn place_photon(&mut self, loc: u32, pol: [C64; 2]) -> Result<(), StateError> {
        let n = pol[0].norm_sqr() + pol[1].norm_sqr();
        if (n - 1.0).abs() > UNITARY_TOL {
            return Err(StateError::NotNormalized(n));
        }
        for p in Polarization::BOTH {
            let m = PhotonMode::guided(loc, p);
            if !self.registry.contains(&m) {
                return Err(StateError::UnknownMode(m));
            }
        }
        if self.amps.keys().any(|(_, m)| *m != PhotonMode::NoPhoton) {
            return Err(StateError::PhotonPresent);
        }
        let mut out = BTreeMap::new();
        for (&(atoms, _), &a) in &self.amps {
            for p in Polarization::BOTH {
                let v = a * pol[p.index()];
                if v.norm() >= PRUNE_CUTOFF {
                    out.insert((atoms, PhotonMode::guided(loc, p)), v);
                }
            }
        }
        self.amps = out;
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn registry(&self) -> ModeRegistry {
        self.registry
    }

    pub fn amplitude(&self, atoms: AtomString, mode: PhotonMode) -> C64 {
        self.amps.get(&(atoms, mode)).copied().unwrap_or(ZERO)
    }

    pub fn iter(&self) -> impl Iterator<Item = (AtomString, PhotonMode, C64)> + '_ {
        self.amps.iter().map(|(&(k, m), &a)| (k, m, a))
    }

    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.values().map(|a| a.norm_sqr()).sum()
    }

    /// Total squared amplitude dropped by pruning so far.
    pub fn pruned_weight(&self) -> f64 {
        self.pruned
    }

    pub fn in_flight(&self) -> bool {
        self.amps.keys().any(|(_, m)| matches!(m, PhotonMode::Guided { .. }))
    }

    /// Distinct occupied guided `(location, polarization)` pairs.
    pub fn guided_occupancy(&self) -> Vec<(u32, Polarization)> {
        let mut v: Vec<_> = self
            .amps
            .keys()
            .filter_map(|(_, m)| match *m {
                PhotonMode::Guided { loc, pol } => Some((loc, pol)),
                _ => None,
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    fn prune(&mut self) {
        let mut dropped = 0.0;
        self.amps.retain(|_, a| {
            if a.norm() < PRUNE_CUTOFF {
                dropped += a.norm_sqr();
                false
            } else {
                true
            }
        });
        self.pruned += dropped;
    }

    pub fn apply_atom_unitary(
        &mut self,
        node: usize,
        atom: AtomIndex,
        u: &Mat2,
    ) -> Result<(), StateError> {
        check_node(node, self.node_count)?;
        check_unitary(u)?;
        let mut out = BTreeMap::new();
        for (&(k, m), &a) in &self.amps {
            let bit = k.atom(node, atom) as usize;
            let partner = k.flip(node, atom);
            *out.entry((k, m)).or_insert(ZERO) += u[(bit, bit)] * a;
            *out.entry((partner, m)).or_insert(ZERO) += u[(1 - bit, bit)] * a;
        }
        self.amps = out;
        self.prune();
        Ok(())
    }

    /// Collective dephasing `|1⟩ → e^{iφ}|1⟩` on both atoms of `node`.
    pub fn apply_collective_phase(&mut self, node: usize, phi: f64) -> Result<(), StateError> {
        check_node(node, self.node_count)?;
        for ((k, _), a) in self.amps.iter_mut() {
            let ones = k.atom(node, AtomIndex::First) as i32 + k.atom(node, AtomIndex::Second) as i32;
            if ones > 0 {
                *a *= C64::from_polar(1.0, phi * f64::from(ones));
            }
        }
        Ok(())
    }

    /// Multiplies every amplitude by `factor`.
    pub fn scale(&mut self, factor: C64) {
        for a in self.amps.values_mut() {
            *a *= factor;
        }
    }

    /// Cavity-assisted scattering with the ideal π phase.
    pub fn apply_scattering(&mut self, node: usize, loc: u32) -> Result<(), StateError> {
        self.apply_scattering_phase(node, loc, C64::new(-1.0, 0.0))
    }

    /// Multiplies every term with the photon `h`-polarized at `loc` and both
    /// atoms of `node` in `|1⟩` by `phase`.
    pub fn apply_scattering_phase(
        &mut self,
        node: usize,
        loc: u32,
        phase: C64,
    ) -> Result<(), StateError> {
        check_node(node, self.node_count)?;
        let mode = PhotonMode::guided(loc, Polarization::H);
        if !self.registry.contains(&mode) {
            return Err(StateError::UnknownMode(mode));
        }
        for ((k, m), a) in self.amps.iter_mut() {
            if *m == mode && k.pair(node) == 0b11 {
                *a *= phase;
            }
        }
        Ok(())
    }

    /// Applies `u` to the `(h, v)` amplitude pair at `loc`.
    pub fn apply_pol_unitary(&mut self, loc: u32, u: &Mat2) -> Result<(), StateError> {
        check_unitary(u)?;
        let mut map = ModeMap::new();
        for p in Polarization::BOTH {
            let src = PhotonMode::guided(loc, p);
            if !self.registry.contains(&src) {
                return Err(StateError::UnknownMode(src));
            }
            let img = Polarization::BOTH
                .iter()
                .map(|&q| (PhotonMode::guided(loc, q), u[(q.index(), p.index())]))
                .filter(|(_, f)| *f != ZERO)
                .collect();
            map.insert(src, img);
        }
        self.relocate_modes(&map)
    }

    /// Moves amplitude according to `map`.
    ///
    /// For every atomic basis string the images of the occupied source modes
    /// must be pairwise orthogonal; otherwise two beams would merge into one
    /// mode and the step is rejected with [`StateError::Collision`].
    pub fn relocate_modes(&mut self, map: &ModeMap) -> Result<(), StateError> {
        for (src, img) in map {
            if !self.registry.contains(src) {
                return Err(StateError::UnknownMode(*src));
            }
            if src.is_sink() {
                return Err(StateError::SinkMode(*src));
            }
            if let Some((t, _)) = img.iter().find(|(t, _)| !self.registry.contains(t)) {
                return Err(StateError::UnknownMode(*t));
            }
        }
        let mut out: BTreeMap<(AtomString, PhotonMode), C64> = BTreeMap::new();
        let mut group: Vec<PhotonMode> = Vec::new();
        let mut group_atoms: Option<AtomString> = None;
        for (&(atoms, mode), &amp) in &self.amps {
            if group_atoms != Some(atoms) {
                if let Some(g) = group_atoms {
                    check_isometry(g, &group, map)?;
                }
                group.clear();
                group_atoms = Some(atoms);
            }
            group.push(mode);
            match map.get(&mode) {
                Some(img) => {
                    for &(t, f) in img {
                        *out.entry((atoms, t)).or_insert(ZERO) += amp * f;
                    }
                }
                None => *out.entry((atoms, mode)).or_insert(ZERO) += amp,
            }
        }
        if let Some(g) = group_atoms {
            check_isometry(g, &group, map)?;
        }
        self.amps = out;
        self.prune();
        Ok(())
    }

    /// Projects the photon at `loc` onto `(h + v)/√2`.
    ///
    /// The rejected component is sent to a `Lost` sink; the retained one stays
    /// at `loc` under the label `H` (the polarizer's transmission axis is
    /// relabeled as `H`). Returns the probability of passing and the state
    /// conditioned on passing, or `None` when that probability is zero.
    pub fn project_polarizer(&self, loc: u32) -> Result<(f64, Option<JointState>), StateError> {
        let s = core::f64::consts::FRAC_1_SQRT_2;
        let h = PhotonMode::guided(loc, Polarization::H);
        let v = PhotonMode::guided(loc, Polarization::V);
        if !self.registry.contains(&h) {
            return Err(StateError::UnknownMode(h));
        }
        let total = self.norm_sqr();
        if total <= 0.0 {
            return Err(StateError::ZeroNorm);
        }
        let mut kept = self.clone();
        kept.amps.retain(|(_, m), _| *m != h && *m != v);
        let mut rejected = 0.0;
        let mut atoms: Vec<AtomString> = self
            .amps
            .keys()
            .filter(|(_, m)| *m == h || *m == v)
            .map(|(k, _)| *k)
            .collect();
        atoms.dedup();
        for k in atoms {
            let (ah, av) = (self.amplitude(k, h), self.amplitude(k, v));
            let pass = (ah + av) * s;
            rejected += ((ah - av) * s).norm_sqr();
            if pass.norm() >= PRUNE_CUTOFF {
                kept.amps.insert((k, h), pass);
            }
        }
        let prob = (1.0 - rejected / total).clamp(0.0, 1.0);
        if kept.norm_sqr() <= PRUNE_CUTOFF * PRUNE_CUTOFF || prob <= 0.0 {
            return Ok((0.0, None));
        }
        let scale = 1.0 / libm::sqrt(kept.norm_sqr());
        for a in kept.amps.values_mut() {
            *a *= scale;
        }
        Ok((prob, Some(kept)))
    }

    fn outcome_of(mode: &PhotonMode, detectors: &[u32]) -> Outcome {
        match *mode {
            PhotonMode::Detector { id, .. } if detectors.contains(&id) => Outcome::Click(id),
            _ => Outcome::NoClick,
        }
    }

    /// Enumerates every readout outcome of `detectors` (plus `NoClick`) with
    /// its probability and conditioned state.
    pub fn detector_branches(&self, detectors: &[u32]) -> Result<Vec<Branch>, StateError> {
        if self.in_flight() {
            return Err(StateError::PhotonInFlight);
        }
        let total = self.norm_sqr();
        if total <= 0.0 {
            return Err(StateError::ZeroNorm);
        }
        let mut outcomes: Vec<Outcome> = detectors.iter().map(|&d| Outcome::Click(d)).collect();
        outcomes.push(Outcome::NoClick);
        let mut branches = Vec::with_capacity(outcomes.len());
        for outcome in outcomes {
            let mut part = JointState {
                node_count: self.node_count,
                registry: self.registry,
                amps: self
                    .amps
                    .iter()
                    .filter(|((_, m), _)| Self::outcome_of(m, detectors) == outcome)
                    .map(|(&k, &a)| (k, a))
                    .collect(),
                pruned: self.pruned,
            };
            let w = part.norm_sqr();
            let probability = w / total;
            let state = if w > 0.0 {
                let s = 1.0 / libm::sqrt(w);
                for a in part.amps.values_mut() {
                    *a *= s;
                }
                Some(part)
            } else {
                None
            };
            branches.push(Branch {
                outcome,
                probability,
                state,
            });
        }
        Ok(branches)
    }

    /// Samples one readout outcome.
    pub fn measure_detectors<R: Rng + ?Sized>(
        &self,
        detectors: &[u32],
        rng: &mut R,
    ) -> Result<Branch, StateError> {
        let branches = self.detector_branches(detectors)?;
        let r: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = None;
        for b in branches {
            if b.probability <= 0.0 {
                continue;
            }
            acc += b.probability;
            if r < acc {
                return Ok(b);
            }
            last = Some(b);
        }
        last.ok_or(StateError::ZeroNorm)
    }

    /// Per photon mode, the (unnormalized) atomic amplitudes attached to it.
    fn register_slices(&self) -> BTreeMap<PhotonMode, Vec<(AtomString, C64)>> {
        let mut slices: BTreeMap<PhotonMode, Vec<(AtomString, C64)>> = BTreeMap::new();
        for (&(k, m), &a) in &self.amps {
            slices.entry(m).or_default().push((k, a));
        }
        slices
    }

    /// Fidelity of the reduced atomic state with a pure register state:
    /// `Σ_mode |⟨target|ψ_mode⟩|²` over normalized inputs. Equals the usual
    /// global-phase-free fidelity when the photon occupies a single mode.
    pub fn register_fidelity(&self, target: &RegisterState) -> Result<f64, StateError> {
        if self.node_count != target.node_count {
            return Err(StateError::DimensionMismatch(self.node_count, target.node_count));
        }
        let norms = self.norm_sqr() * target.norm_sqr();
        if norms <= 0.0 {
            return Err(StateError::ZeroNorm);
        }
        let f: f64 = self
            .register_slices()
            .values()
            .map(|slice| {
                slice
                    .iter()
                    .map(|(k, a)| target.amplitude(*k).conj() * a)
                    .sum::<C64>()
                    .norm_sqr()
            })
            .sum();
        Ok((f / norms).min(1.0))
    }

    pub fn overlap(&self, other: &JointState) -> Result<C64, StateError> {
        if self.node_count != other.node_count {
            return Err(StateError::DimensionMismatch(self.node_count, other.node_count));
        }
        Ok(self
            .amps
            .iter()
            .map(|(k, a)| a.conj() * other.amps.get(k).copied().unwrap_or(ZERO))
            .sum())
    }

    pub fn fidelity(&self, other: &JointState) -> Result<f64, StateError> {
        let norms = self.norm_sqr() * other.norm_sqr();
        if norms <= 0.0 {
            return Err(StateError::ZeroNorm);
        }
        Ok((self.overlap(other)?.norm_sqr() / norms).min(1.0))
    }

    /// The register state when the photon occupies exactly one mode.
    pub fn single_mode_register(&self) -> Option<RegisterState> {
        let slices = self.register_slices();
        if slices.len() != 1 {
            return None;
        }
        let (_, slice) = slices.into_iter().next()?;
        RegisterState::from_amplitudes(self.node_count, slice).ok()
    }

    /// Samples which photon mode the environment recorded and returns the
    /// normalized register state attached to it.
    pub fn unravel<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<RegisterState, StateError> {
        let slices = self.register_slices();
        let total = self.norm_sqr();
        if total <= 0.0 {
            return Err(StateError::ZeroNorm);
        }
        let r: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (_, slice) in slices {
            let w: f64 = slice.iter().map(|(_, a)| a.norm_sqr()).sum();
            if w <= 0.0 {
                continue;
            }
            acc += w;
            let done = r < acc;
            chosen = Some(slice);
            if done {
                break;
            }
        }
        let slice = chosen.ok_or(StateError::ZeroNorm)?;
        RegisterState::from_amplitudes(self.node_count, slice)?.normalized()
    }
}

/// Images of the moved sources must be pairwise orthogonal and must not land
/// on a source that stays put. `sources` is sorted (map key order).
fn check_isometry(atoms: AtomString, sources: &[PhotonMode], map: &ModeMap) -> Result<(), StateError> {
    if sources.len() < 2 {
        return Ok(());
    }
    let moved: Vec<(PhotonMode, &Vec<(PhotonMode, C64)>)> = sources
        .iter()
        .filter_map(|m| map.get(m).map(|img| (*m, img)))
        .collect();
    for (i, (sa, a)) in moved.iter().enumerate() {
        for (sb, b) in &moved[i + 1..] {
            let mut ip = ZERO;
            for (ta, xa) in a.iter() {
                for (tb, xb) in b.iter() {
                    if ta == tb {
                        ip += xa.conj() * xb;
                    }
                }
            }
            if ip.norm() > UNITARY_TOL {
                return Err(StateError::Collision {
                    atoms,
                    first: *sa,
                    second: *sb,
                });
            }
        }
        for (t, x) in a.iter() {
            if x.norm() > UNITARY_TOL && !map.contains_key(t) && sources.binary_search(t).is_ok() {
                return Err(StateError::Collision {
                    atoms,
                    first: *sa,
                    second: *t,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_1_SQRT_2 as S;
    use proptest::prelude::*;
    use rand::SeedableRng;

    const REG: ModeRegistry = ModeRegistry {
        guided_locations: 8,
        detectors: 2,
    };

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn plus() -> [C64; 2] {
        [c(S), c(S)]
    }

    fn hwp(theta_deg: f64) -> Mat2 {
        let t = 2.0 * theta_deg.to_radians();
        Mat2::new(c(t.cos()), c(t.sin()), c(t.sin()), c(-t.cos()))
    }

    #[test]
    fn new_state_without_photon() {
        let atoms = AtomString::from_pairs(&[(1, 0)]);
        let s = JointState::new(1, atoms, None, REG).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.amplitude(atoms, PhotonMode::NoPhoton), c(1.0));
    }

    #[test]
    fn new_state_with_photon() {
        let atoms = AtomString::from_pairs(&[(1, 0)]);
        let s = JointState::new(1, atoms, Some((3, plus())), REG).unwrap();
        assert_eq!(s.len(), 2);
        for p in Polarization::BOTH {
            assert!((s.amplitude(atoms, PhotonMode::guided(3, p)) - c(S)).norm() < 1e-15);
        }
    }

    #[test]
    fn new_state_rejects_bad_photon() {
        let atoms = AtomString(0);
        assert!(matches!(
            JointState::new(1, atoms, Some((3, [c(1.0), c(1.0)])), REG),
            Err(StateError::NotNormalized(_))
        ));
        assert!(matches!(
            JointState::new(1, atoms, Some((99, plus())), REG),
            Err(StateError::UnknownMode(_))
        ));
        assert!(matches!(
            JointState::new(0, atoms, None, REG),
            Err(StateError::NoNodes)
        ));
    }

    #[test]
    fn logical_zero_layout() {
        let atoms = AtomString::from_pairs(&[(1, 0), (1, 0), (1, 0)]);
        assert_eq!(atoms.0, 0b01_01_01);
        for n in 0..3 {
            assert_eq!(atoms.pair(n), 0b01);
        }
    }

    #[test]
    fn sigma_x_on_atom_two() {
        let atoms = AtomString::from_pairs(&[(1, 0)]);
        let mut s = JointState::new(1, atoms, None, REG).unwrap();
        s.apply_atom_unitary(0, AtomIndex::Second, &pauli_x()).unwrap();
        let flipped = AtomString::from_pairs(&[(1, 1)]);
        assert_eq!(s.amplitude(flipped, PhotonMode::NoPhoton), c(1.0));
        s.apply_atom_unitary(0, AtomIndex::Second, &pauli_x()).unwrap();
        assert_eq!(s.amplitude(atoms, PhotonMode::NoPhoton), c(1.0));
        let before = s.clone();
        s.apply_atom_unitary(0, AtomIndex::First, &Mat2::identity()).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn atom_unitary_errors() {
        let mut s = JointState::new(1, AtomString(0), None, REG).unwrap();
        let bad = Mat2::new(c(1.0), c(1.0), c(0.0), c(1.0));
        assert!(matches!(
            s.apply_atom_unitary(0, AtomIndex::First, &bad),
            Err(StateError::NotUnitary(_))
        ));
        assert!(matches!(
            s.apply_atom_unitary(4, AtomIndex::First, &pauli_x()),
            Err(StateError::NodeOutOfRange { .. })
        ));
    }

    #[test]
    fn scattering_needs_both_atoms_and_h() {
        let both = AtomString::from_pairs(&[(1, 1)]);
        let mut s = JointState::new(1, both, Some((0, plus())), REG).unwrap();
        s.apply_scattering(0, 0).unwrap();
        assert!((s.amplitude(both, PhotonMode::guided(0, Polarization::H)) - c(-S)).norm() < 1e-15);
        assert!((s.amplitude(both, PhotonMode::guided(0, Polarization::V)) - c(S)).norm() < 1e-15);

        let v_only = JointState::new(1, both, Some((0, [c(0.0), c(1.0)])), REG).unwrap();
        let mut t = v_only.clone();
        t.apply_scattering(0, 0).unwrap();
        assert_eq!(t, v_only);

        let one_zero = AtomString::from_pairs(&[(1, 0)]);
        let h = JointState::new(1, one_zero, Some((0, [c(1.0), c(0.0)])), REG).unwrap();
        let mut t = h.clone();
        t.apply_scattering(0, 0).unwrap();
        assert_eq!(t, h);
    }

    #[test]
    fn hwp_steps_of_single_node_pass() {
        let atoms = AtomString::from_pairs(&[(1, 0)]);
        let mut s = JointState::new(1, atoms, Some((0, [c(-S), c(S)])), REG).unwrap();
        s.apply_pol_unitary(0, &hwp(45.0)).unwrap();
        assert!((s.amplitude(atoms, PhotonMode::guided(0, Polarization::H)) - c(S)).norm() < 1e-15);
        assert!((s.amplitude(atoms, PhotonMode::guided(0, Polarization::V)) - c(-S)).norm() < 1e-15);
        s.apply_pol_unitary(0, &hwp(22.5)).unwrap();
        assert!((s.amplitude(atoms, PhotonMode::guided(0, Polarization::V)) - c(1.0)).norm() < 1e-12);
        assert!(s.amplitude(atoms, PhotonMode::guided(0, Polarization::H)).norm() < 1e-12);
        let before = s.clone();
        s.apply_pol_unitary(0, &Mat2::identity()).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn relocation_and_collision() {
        let atoms = AtomString(0);
        let mut s = JointState::new(1, atoms, Some((1, [c(0.0), c(1.0)])), REG).unwrap();
        let mut map = ModeMap::new();
        map.insert(
            PhotonMode::guided(1, Polarization::V),
            alloc::vec![(PhotonMode::guided(2, Polarization::V), c(1.0))],
        );
        s.relocate_modes(&map).unwrap();
        assert_eq!(s.amplitude(atoms, PhotonMode::guided(2, Polarization::V)), c(1.0));

        // PBS: h transmits to 3, v reflects to 4
        let mut s = JointState::new(1, atoms, Some((1, plus())), REG).unwrap();
        let mut pbs = ModeMap::new();
        pbs.insert(
            PhotonMode::guided(1, Polarization::H),
            alloc::vec![(PhotonMode::guided(3, Polarization::H), c(1.0))],
        );
        pbs.insert(
            PhotonMode::guided(1, Polarization::V),
            alloc::vec![(PhotonMode::guided(4, Polarization::V), c(1.0))],
        );
        s.relocate_modes(&pbs).unwrap();
        assert!((s.amplitude(atoms, PhotonMode::guided(3, Polarization::H)) - c(S)).norm() < 1e-15);
        assert!((s.amplitude(atoms, PhotonMode::guided(4, Polarization::V)) - c(S)).norm() < 1e-15);

        // two occupied modes forced into one target
        let mut s = JointState::new(1, atoms, Some((1, plus())), REG).unwrap();
        let mut merge = ModeMap::new();
        for p in Polarization::BOTH {
            merge.insert(
                PhotonMode::guided(1, p),
                alloc::vec![(PhotonMode::guided(5, Polarization::H), c(1.0))],
            );
        }
        assert!(matches!(
            s.relocate_modes(&merge),
            Err(StateError::Collision { .. })
        ));
    }

    #[test]
    fn polarizer_projection() {
        let atoms = AtomString(0);
        let s = JointState::new(1, atoms, Some((0, plus())), REG).unwrap();
        let (p, kept) = s.project_polarizer(0).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        let kept = kept.unwrap();
        assert!((kept.amplitude(atoms, PhotonMode::guided(0, Polarization::H)).norm() - 1.0).abs() < 1e-12);

        let s = JointState::new(1, atoms, Some((0, [c(S), c(-S)])), REG).unwrap();
        let (p, kept) = s.project_polarizer(0).unwrap();
        assert!(p.abs() < 1e-12);
        assert!(kept.is_none());

        // |⟨+45|h⟩|² from the projector (h+v)(h+v)†/2
        let proj = Mat2::new(c(0.5), c(0.5), c(0.5), c(0.5));
        let h = nalgebra::Vector2::new(c(1.0), c(0.0));
        let expected = (h.adjoint() * proj * h)[(0, 0)].re;
        let s = JointState::new(1, atoms, Some((0, [c(1.0), c(0.0)])), REG).unwrap();
        let (p, _) = s.project_polarizer(0).unwrap();
        assert!((p - expected).abs() < 1e-12);
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn measurement_branches() {
        let atoms = AtomString(0);
        let s = JointState::new(1, atoms, Some((0, plus())), REG).unwrap();
        assert!(matches!(
            s.detector_branches(&[0, 1]),
            Err(StateError::PhotonInFlight)
        ));

        let mut map = ModeMap::new();
        map.insert(
            PhotonMode::guided(0, Polarization::H),
            alloc::vec![(PhotonMode::Lost { origin: 0, pol: Polarization::H, tick: 1 }, c(1.0))],
        );
        map.insert(
            PhotonMode::guided(0, Polarization::V),
            alloc::vec![(PhotonMode::Lost { origin: 0, pol: Polarization::V, tick: 1 }, c(1.0))],
        );
        let mut lost = s.clone();
        lost.relocate_modes(&map).unwrap();
        let b = lost.detector_branches(&[0, 1]).unwrap();
        let none = b.iter().find(|b| b.outcome == Outcome::NoClick).unwrap();
        assert!((none.probability - 1.0).abs() < 1e-12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        assert_eq!(lost.measure_detectors(&[0, 1], &mut rng).unwrap().outcome, Outcome::NoClick);
    }

    #[test]
    fn fidelity_basics() {
        let zero = RegisterState::basis(1, AtomString::from_pairs(&[(1, 0)])).unwrap();
        let one = RegisterState::basis(1, AtomString::from_pairs(&[(0, 1)])).unwrap();
        assert!((zero.fidelity(&zero).unwrap() - 1.0).abs() < 1e-15);
        let rotated = zero.clone().scaled(C64::from_polar(1.0, 0.7));
        assert!((fidelity_up_to_global_phase(&zero, &rotated).unwrap() - 1.0).abs() < 1e-15);
        assert!(zero.fidelity(&one).unwrap().abs() < 1e-15);
        let two = RegisterState::basis(2, AtomString(0)).unwrap();
        assert!(matches!(
            zero.fidelity(&two),
            Err(StateError::DimensionMismatch(1, 2))
        ));
    }

    #[test]
    fn collective_phase_on_register() {
        let mut r = RegisterState::from_amplitudes(
            1,
            [
                (AtomString::from_pairs(&[(1, 1)]), c(S)),
                (AtomString::from_pairs(&[(0, 0)]), c(S)),
            ],
        )
        .unwrap();
        r.apply_collective_phase(0, 0.3).unwrap();
        let ph = r.amplitude(AtomString::from_pairs(&[(1, 1)])) / r.amplitude(AtomString(0));
        assert!((ph - C64::from_polar(1.0, 0.6)).norm() < 1e-14);
    }

    fn arb_complex() -> impl Strategy<Value = C64> {
        (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| C64::new(a, b))
    }

    /// Random normalized state over two nodes and guided locations 0..4.
    fn arb_state() -> impl Strategy<Value = JointState> {
        proptest::collection::vec((0u64..16, 0u32..4, 0usize..2, arb_complex()), 1..12).prop_filter_map(
            "nonzero",
            |terms| {
                let mut s = JointState::from_register(&RegisterState::basis(2, AtomString(0)).ok()?, REG);
                s.amps.clear();
                for (atoms, loc, p, a) in terms {
                    *s.amps
                        .entry((AtomString(atoms), PhotonMode::guided(loc, Polarization::from_index(p))))
                        .or_insert(ZERO) += a;
                }
                let n = s.norm_sqr();
                if n < 1e-6 {
                    return None;
                }
                for a in s.amps.values_mut() {
                    *a /= libm::sqrt(n);
                }
                Some(s)
            },
        )
    }

    fn arb_unitary() -> impl Strategy<Value = Mat2> {
        (0.0f64..6.3, 0.0f64..6.3, 0.0f64..6.3, 0.0f64..6.3).prop_map(|(a, b, g, t)| {
            let e = |x: f64| C64::from_polar(1.0, x);
            Mat2::new(
                e(a) * t.cos(),
                e(b) * t.sin(),
                -e(g - b) * t.sin(),
                e(g - a) * t.cos(),
            )
        })
    }

    proptest! {
        #[test]
        fn unitary_steps_preserve_norm(s in arb_state(), u in arb_unitary(), w in arb_unitary(), loc in 0u32..4) {
            let mut t = s.clone();
            t.apply_atom_unitary(1, AtomIndex::Second, &u).unwrap();
            t.apply_pol_unitary(loc, &w).unwrap();
            t.apply_scattering(0, loc).unwrap();
            prop_assert!((t.norm_sqr() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn scattering_is_an_involution(s in arb_state(), loc in 0u32..4, node in 0usize..2) {
            let mut t = s.clone();
            t.apply_scattering(node, loc).unwrap();
            t.apply_scattering(node, loc).unwrap();
            prop_assert!((t.fidelity(&s).unwrap() - 1.0).abs() < 1e-12);
            for (k, m, a) in s.iter() {
                prop_assert!((t.amplitude(k, m) - a).norm() < 1e-15);
            }
        }

        #[test]
        fn atom_and_polarization_unitaries_commute(s in arb_state(), u in arb_unitary(), w in arb_unitary(), loc in 0u32..4, node in 0usize..2) {
            let mut a = s.clone();
            a.apply_atom_unitary(node, AtomIndex::First, &u).unwrap();
            a.apply_pol_unitary(loc, &w).unwrap();
            let mut b = s.clone();
            b.apply_pol_unitary(loc, &w).unwrap();
            b.apply_atom_unitary(node, AtomIndex::First, &u).unwrap();
            for (k, m, x) in a.iter() {
                prop_assert!((b.amplitude(k, m) - x).norm() < 1e-12);
            }
            prop_assert!((a.overlap(&b).unwrap().norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn unit_modulus_relocation_preserves_overlaps(s in arb_state(), t in arb_state(), phases in proptest::collection::vec(0.0f64..6.3, 8), perm in Just([3u32, 0, 2, 1]).prop_shuffle()) {
            let mut map = ModeMap::new();
            for loc in 0..4u32 {
                for p in Polarization::BOTH {
                    let target = PhotonMode::guided(perm[loc as usize] + 4, p);
                    map.insert(PhotonMode::guided(loc, p), alloc::vec![(target, C64::from_polar(1.0, phases[2 * loc as usize + p.index()]))]);
                }
            }
            let before = s.overlap(&t).unwrap();
            let (mut s2, mut t2) = (s.clone(), t.clone());
            s2.relocate_modes(&map).unwrap();
            t2.relocate_modes(&map).unwrap();
            prop_assert!((s2.overlap(&t2).unwrap() - before).norm() < 1e-12);
        }

        #[test]
        fn measurement_probabilities_sum_to_one(s in arb_state()) {
            let mut map = ModeMap::new();
            for loc in 0..4u32 {
                for p in Polarization::BOTH {
                    let target = if loc < 2 {
                        PhotonMode::Detector { id: loc, tick: 1 }
                    } else {
                        PhotonMode::Lost { origin: loc, pol: p, tick: 1 }
                    };
                    map.insert(PhotonMode::guided(loc, p), alloc::vec![(target, C64::new(1.0, 0.0))]);
                }
            }
            // detectors absorb one polarization each, so route v away first
            let mut s2 = s.clone();
            let mut split = ModeMap::new();
            for loc in 0..2u32 {
                split.insert(PhotonMode::guided(loc, Polarization::V), alloc::vec![(PhotonMode::guided(loc + 6, Polarization::V), C64::new(1.0, 0.0))]);
            }
            s2.relocate_modes(&split).unwrap();
            for loc in 6..8u32 {
                map.insert(PhotonMode::guided(loc, Polarization::V), alloc::vec![(PhotonMode::Lost { origin: loc, pol: Polarization::V, tick: 1 }, C64::new(1.0, 0.0))]);
            }
            s2.relocate_modes(&map).unwrap();
            let total: f64 = s2.detector_branches(&[0, 1]).unwrap().iter().map(|b| b.probability).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
