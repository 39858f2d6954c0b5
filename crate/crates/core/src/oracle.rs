//! Brute-force reference for conditioned logical maps.
//!
//! For each logical basis input the photon is walked edge by edge with a
//! recursive function. A walker carries its own amplitude table over
//! `(atoms, polarization)` and splits whenever an element sends amplitude out
//! of more than one port. Walkers are never merged: detector amplitudes are
//! summed at the end. Only the element transfer tables and the graph data are
//! shared with the propagation engine.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use nalgebra::DMatrix;

use crate::logical::{basis_atoms, basis_index, Encoding, LogicalMap};
use crate::network::{CavityHook, EdgeId, NetworkGraph, SwitchSchedule, DH, DV};
use crate::optics::{self, ElementKind, Exit, OpticsError};
use crate::qstate::{AtomIndex, AtomString, Mat2, Polarization, C64};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("{label}: {err}")]
    Optics { label: String, err: OpticsError },
    #[error("photon still travelling at time {0}")]
    NonTermination(u32),
    #[error("output atoms {0:?} are outside the logical subspace")]
    OutsideSubspace(AtomString),
    #[error("detector {0} is reached at more than one time")]
    MixedArrival(u32),
    #[error("no photon source for node {0}")]
    NoSource(usize),
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("matrices differ by {0:e} after the best global phase")]
    Mismatch(f64),
    #[error("unknown target {0:?}")]
    UnknownTarget(String),
}

type Amps = BTreeMap<(AtomString, Polarization), C64>;

enum Sink {
    Detector(u32),
    Lost,
}

struct Walk<'a> {
    graph: &'a NetworkGraph,
    schedule: &'a SwitchSchedule,
    budget: u32,
    ends: Vec<(Sink, u32, Amps)>,
}

fn pulse(amps: &Amps, node: usize, atom: AtomIndex, u: &Mat2) -> Amps {
    let mut out = Amps::new();
    for (&(k, p), &a) in amps {
        let bit = k.atom(node, atom) as usize;
        for row in 0..2 {
            let f = u[(row, bit)];
            if f.norm() == 0.0 {
                continue;
            }
            let key = if row == bit { k } else { k.flip(node, atom) };
            *out.entry((key, p)).or_insert(C64::new(0.0, 0.0)) += f * a;
        }
    }
    out
}

fn run_hook(amps: Amps, hook: &CavityHook, at_cavity: bool) -> Amps {
    let mut a = amps;
    for p in &hook.before {
        a = pulse(&a, hook.node, p.atom, &p.unitary);
    }
    if at_cavity {
        scatter(&mut a, hook.node);
    }
    for p in &hook.after {
        a = pulse(&a, hook.node, p.atom, &p.unitary);
    }
    a
}

fn scatter(amps: &mut Amps, node: usize) {
    for ((k, p), a) in amps.iter_mut() {
        if *p == Polarization::H && k.pair(node) == 0b11 {
            *a = -*a;
        }
    }
}

impl Walk<'_> {
    /// Walker enters `edge` at time `t0`.
    fn go(&mut self, edge: EdgeId, t0: u32, mut amps: Amps) -> Result<(), OracleError> {
        let e = &self.graph.edges()[edge];
        let t1 = t0 + e.length;
        if t1 > self.budget {
            return Err(OracleError::NonTermination(t1));
        }
        let at = t1 - 1;
        let head = &self.graph.elements()[e.to];
        let cavity = match head.kind {
            ElementKind::CavityPort { node } => Some(node),
            _ => None,
        };
        let mut hooked_here = false;
        for h in self.schedule.hooks() {
            if h.tick >= t0 && h.tick < at {
                amps = run_hook(amps, h, false);
            } else if h.tick == at {
                let here = cavity == Some(h.node);
                hooked_here |= here;
                amps = run_hook(amps, h, here);
            }
        }
        if let (Some(node), false) = (cavity, hooked_here) {
            scatter(&mut amps, node);
        }

        let setting = self.schedule.setting(e.to);
        let mut outs: BTreeMap<Exit, Amps> = BTreeMap::new();
        for (&(k, p), &a) in &amps {
            let ts = optics::transfer(&head.kind, setting, e.to_port, p).map_err(|err| OracleError::Optics {
                label: head.label.clone(),
                err,
            })?;
            for t in ts {
                *outs
                    .entry(t.exit)
                    .or_default()
                    .entry((k, t.pol))
                    .or_insert(C64::new(0.0, 0.0)) += a * t.factor;
            }
        }
        for (exit, next) in outs {
            if next.values().all(|a| a.norm() < 1e-15) {
                continue;
            }
            match exit {
                Exit::Port(p) => match self.graph.out_edge(e.to, p) {
                    Some(ne) => self.go(ne, t1, next)?,
                    None => self.ends.push((Sink::Lost, t1, next)),
                },
                Exit::Detector(d) => self.ends.push((Sink::Detector(d), t1, next)),
                Exit::Lost(_) => self.ends.push((Sink::Lost, t1, next)),
            }
        }
        Ok(())
    }
}

/// Detector amplitudes per atom string for one basis input:
/// `detector → (time, atoms → amplitude)`.
fn walk_input(
    graph: &NetworkGraph,
    schedule: &SwitchSchedule,
    atoms: AtomString,
) -> Result<BTreeMap<u32, (u32, BTreeMap<AtomString, C64>)>, OracleError> {
    let entry = schedule.entry();
    let source = graph
        .elements()
        .iter()
        .position(|el| el.kind == ElementKind::PhotonSource { node: entry })
        .ok_or(OracleError::NoSource(entry))?;
    let start = graph
        .out_edge(source, optics::Port::Out)
        .ok_or(OracleError::NoSource(entry))?;
    let s = C64::new(core::f64::consts::FRAC_1_SQRT_2, 0.0);
    let mut amps = Amps::new();
    amps.insert((atoms, Polarization::H), s);
    amps.insert((atoms, Polarization::V), s);
    let mut w = Walk {
        graph,
        schedule,
        budget: graph.edges().iter().map(|e| e.length).sum(),
        ends: Vec::new(),
    };
    w.go(start, 0, amps)?;

    // hooks keep firing until the last walker lands
    let last = w.ends.iter().map(|(_, t, _)| *t).max().unwrap_or(0);
    let mut out: BTreeMap<u32, (u32, BTreeMap<AtomString, C64>)> = BTreeMap::new();
    for (sink, t, mut a) in w.ends {
        for h in schedule.hooks() {
            if h.tick >= t && h.tick < last {
                a = run_hook(a, h, false);
            }
        }
        let Sink::Detector(d) = sink else { continue };
        let slot = out.entry(d).or_insert((t, BTreeMap::new()));
        if slot.0 != t {
            return Err(OracleError::MixedArrival(d));
        }
        for ((k, _), x) in a {
            *slot.1.entry(k).or_insert(C64::new(0.0, 0.0)) += x;
        }
    }
    Ok(out)
}

/// `Dh` and `Dv` maps of `schedule` on encoded participants.
pub fn enumerate_logical_map(graph: &NetworkGraph, schedule: &SwitchSchedule) -> Result<LogicalMap, OracleError> {
    enumerate_logical_map_with(graph, schedule, Encoding::Dfs)
}

pub fn enumerate_logical_map_with(
    graph: &NetworkGraph,
    schedule: &SwitchSchedule,
    enc: Encoding,
) -> Result<LogicalMap, OracleError> {
    let n = graph.node_count();
    let s = schedule.participants();
    let dim = 1usize << s.len();
    let mut outcomes = BTreeMap::new();
    let mut ticks: BTreeMap<u32, u32> = BTreeMap::new();
    for d in [DH, DV] {
        outcomes.insert(d, DMatrix::<C64>::zeros(dim, dim));
    }
    for col in 0..dim {
        let hits = walk_input(graph, schedule, basis_atoms(n, s, col, enc))?;
        for d in [DH, DV] {
            let Some((t, amps)) = hits.get(&d) else { continue };
            if amps.values().all(|a| a.norm() <= 1e-14) {
                continue;
            }
            if *ticks.entry(d).or_insert(*t) != *t {
                return Err(OracleError::MixedArrival(d));
            }
            let m = outcomes.get_mut(&d).expect("inserted");
            for (&k, &a) in amps {
                match basis_index(k, n, s, enc) {
                    Some(row) => m[(row, col)] += a,
                    None if a.norm() < 1e-10 => {}
                    None => return Err(OracleError::OutsideSubspace(k)),
                }
            }
        }
    }
    Ok(LogicalMap {
        participants: s.to_vec(),
        outcomes,
    })
}

/// Textbook gates on the logical basis (first qubit most significant).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    /// Phase −1 on `|1…1⟩` of `n` qubits.
    Cpz(usize),
    /// Flips the last qubit iff the first two are 1.
    Toffoli,
    Hadamard,
}

impl FromStr for Target {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        match t {
            "Toffoli" | "toffoli" => return Ok(Target::Toffoli),
            "Hadamard" | "hadamard" => return Ok(Target::Hadamard),
            _ => {}
        }
        let inner = t
            .strip_prefix("CPZ(")
            .or_else(|| t.strip_prefix("cpz("))
            .and_then(|r| r.strip_suffix(')'));
        match inner.and_then(|x| x.trim().parse::<usize>().ok()) {
            Some(n) if (1..=20).contains(&n) => Ok(Target::Cpz(n)),
            _ => Err(OracleError::UnknownTarget(s.into())),
        }
    }
}

pub fn standard_target(target: Target) -> DMatrix<C64> {
    let one = C64::new(1.0, 0.0);
    match target {
        Target::Cpz(n) => {
            let d = 1usize << n;
            let mut m = DMatrix::identity(d, d);
            m[(d - 1, d - 1)] = -one;
            m
        }
        Target::Toffoli => {
            let mut m = DMatrix::<C64>::identity(8, 8);
            m[(6, 6)] = C64::new(0.0, 0.0);
            m[(7, 7)] = C64::new(0.0, 0.0);
            m[(6, 7)] = one;
            m[(7, 6)] = one;
            m
        }
        Target::Hadamard => {
            let s = C64::new(core::f64::consts::FRAC_1_SQRT_2, 0.0);
            DMatrix::from_row_slice(2, 2, &[s, s, s, -s])
        }
    }
}

/// Smallest `max |A − λB|` over unit `λ`, with `λ` taken from the
/// least-squares phase `arg tr(B†A)`.
pub fn global_phase_deviation(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Result<f64, OracleError> {
    if a.shape() != b.shape() {
        return Err(OracleError::ShapeMismatch(a.nrows(), a.ncols(), b.nrows(), b.ncols()));
    }
    let ip: C64 = b.iter().zip(a.iter()).map(|(x, y)| x.conj() * y).sum();
    let lambda = if ip.norm() > 0.0 {
        ip / ip.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    Ok(a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - lambda * y).norm())
        .fold(0.0, f64::max))
}

pub fn assert_equal_up_to_global_phase(a: &DMatrix<C64>, b: &DMatrix<C64>, tol: f64) -> Result<f64, OracleError> {
    let d = global_phase_deviation(a, b)?;
    if d <= tol {
        Ok(d)
    } else {
        Err(OracleError::Mismatch(d))
    }
}
