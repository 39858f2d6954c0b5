//! Ring network graph, switch schedules and the tick-based propagation engine.
//!
//! Every edge has an integer length in delay units. A guided photon mode
//! lives on a *slot*: one unit of one edge. Each tick moves every guided mode
//! one slot forward; a mode on the last slot of an edge passes through the
//! head element's transfer table instead.
//!
//! Node `n` of a ring built by [`build_ring_network`]:
//!
//! ```text
//!  source ─P0─┐                         ┌─ gate TR ─X→ P45 → D(n)
//!             STR ─cav→ circ → PBS ⇄ cavity / mirror
//!  ring ─P1───┘ ▲        └──────→ circ → gate TR ─Y→ HWP45 ─┘ (Return)
//!               └ P2 → HWP22.5 → TR(in) ─X→ branch PBS ─h→ TR(out) → next node
//!                                  └──Y── bypass ────────────┘      (ring plate)
//! ```
//!
//! The branch PBS reflects `v` onto the node's branch path; the return switch
//! in front of each node can instead send the ring photon onto that node's
//! return path. Every center path passes a switchable delay bank and a
//! HWP22.5 before the combiner and the readout PBS (`Dh` transmitted,
//! `Dv` reflected).

use alloc::borrow::Cow;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::noise_timing::{DephasingTiming, NoiseRealization};
use crate::optics::{self, CombinerModel, ElementKind, Exit, OpticsError, Port, Setting, StrConfig, TrState};
use crate::qstate::{
    pauli_x, AtomIndex, AtomString, JointState, Mat2, ModeMap, ModeRegistry, PhotonMode, Polarization,
    StateError, C64,
};

/// Largest ring the 64-bit atom strings can hold.
pub const MAX_NODES: usize = 32;

/// Detector ids of a built ring.
pub const DH: u32 = 0;
pub const DV: u32 = 1;

/// Id of the in-node detector behind node `n`'s polarizer.
pub fn node_detector(n: usize) -> u32 {
    2 + n as u32
}

pub type ElementId = usize;
pub type EdgeId = usize;

const LOSS_CODE: u32 = 0xFF;
const OPEN_PORT_CODE: u32 = 0x80;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error("a ring needs at least one node")]
    NoNodes,
    #[error("{0} nodes exceed the supported maximum of {MAX_NODES}")]
    TooManyNodes(usize),
    #[error("node {node} out of range for {count} nodes")]
    NodeOutOfRange { node: usize, count: usize },
    #[error("participant set is empty")]
    EmptySubset,
    #[error("node {0} listed twice")]
    DuplicateNode(usize),
    #[error("entry node {0} is not a participant")]
    EntryNotInSubset(usize),
    #[error("participants {0:?} are not in ring order from the entry node")]
    NotRingOrder(Vec<usize>),
    #[error("{label} has no {dir} port {port:?}")]
    NoSuchPort { label: String, dir: &'static str, port: Port },
    #[error("{dir} port {port:?} of {label} already has an edge")]
    PortInUse { label: String, dir: &'static str, port: Port },
    #[error("edge lengths must be positive")]
    ZeroLength,
    #[error("unknown element {0}")]
    UnknownElement(ElementId),
    #[error("unknown edge {0}")]
    UnknownEdge(EdgeId),
    #[error("no photon source for node {0}")]
    NoSource(usize),
    #[error("graph was not built as a ring")]
    NotARing,
    #[error("{label}: {err}")]
    Optics { label: String, err: OpticsError },
    #[error(transparent)]
    State(#[from] StateError),
    #[error("route re-enters edge {0}")]
    RoutingCycle(String),
    #[error("photon still in flight after {0} ticks")]
    NonTermination(u32),
    #[error("cavity of node {node} is reached at ticks {first} and {second}")]
    AmbiguousCavityTiming { node: usize, first: u32, second: u32 },
    #[error("path {path} needs {needed} units of delay, bank holds {max}")]
    DelayBankExhausted { path: String, needed: u32, max: u32 },
    #[error("no route reaches the readout PBS")]
    NoRoute,
    #[error("unequal arrival at the readout PBS: {0:?}")]
    UnequalArrival(Vec<UnequalPair>),
}

pub type Result<T> = core::result::Result<T, NetworkError>;

#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub kind: ElementKind,
    pub label: String,
}

/// Directed connection `from.from_port → to.to_port`.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub from: ElementId,
    pub from_port: Port,
    pub to: ElementId,
    pub to_port: Port,
    pub length: u32,
    /// Set on the first edge of a center path; jitter is applied on entry.
    pub center_path: Option<usize>,
}

/// Element ids of one ring node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeElements {
    pub source: ElementId,
    pub router: ElementId,
    pub circulator: ElementId,
    pub pbs: ElementId,
    pub cavity: ElementId,
    pub mirror: ElementId,
    pub gate: ElementId,
    pub flip_plate: ElementId,
    pub polarizer: ElementId,
    pub detector: ElementId,
    pub exit_plate: ElementId,
    pub inner_switch: ElementId,
    pub branch_pbs: ElementId,
    pub outer_switch: ElementId,
    /// Switch in front of this node that can divert the ring photon onto
    /// this node's return path.
    pub return_switch: ElementId,
    pub ring_plate: ElementId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum PathKind {
    /// `v` reflected by node `n`'s branch PBS.
    Branch(usize),
    /// Ring photon diverted in front of node `n`.
    Return(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CenterPath {
    pub kind: PathKind,
    pub label: String,
    /// `(in, out)` switch pair of each delay stage; stage `k` adds `2^k`.
    pub stages: Vec<(ElementId, ElementId)>,
    pub plate: ElementId,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    nodes: Vec<NodeElements>,
    paths: Vec<CenterPath>,
    combiner: ElementId,
    readout: ElementId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGraph {
    node_count: usize,
    elements: Vec<Element>,
    edges: Vec<Edge>,
    out_index: BTreeMap<(ElementId, Port), EdgeId>,
    in_index: BTreeMap<(ElementId, Port), EdgeId>,
    detectors: Vec<String>,
    layout: Option<Layout>,
}

impl NetworkGraph {
    /// An empty graph for hand-built topologies over `node_count` atom pairs.
    pub fn new(node_count: usize) -> Result<Self> {
        if node_count == 0 {
            return Err(NetworkError::NoNodes);
        }
        if node_count > MAX_NODES {
            return Err(NetworkError::TooManyNodes(node_count));
        }
        Ok(NetworkGraph {
            node_count,
            elements: Vec::new(),
            edges: Vec::new(),
            out_index: BTreeMap::new(),
            in_index: BTreeMap::new(),
            detectors: Vec::new(),
            layout: None,
        })
    }

    pub fn add_element(&mut self, kind: ElementKind, label: impl Into<String>) -> ElementId {
        self.elements.push(Element {
            kind,
            label: label.into(),
        });
        self.elements.len() - 1
    }

    /// Adds a detector sink element; returns `(element, detector id)`.
    pub fn add_detector(&mut self, name: impl Into<String>) -> (ElementId, u32) {
        let name = name.into();
        let id = self.detectors.len() as u32;
        let el = self.add_element(ElementKind::DetectorSink { detector: id }, name.clone());
        self.detectors.push(name);
        (el, id)
    }

    pub fn connect(
        &mut self,
        from: ElementId,
        from_port: Port,
        to: ElementId,
        to_port: Port,
        length: u32,
    ) -> Result<EdgeId> {
        if length == 0 {
            return Err(NetworkError::ZeroLength);
        }
        let src = self.elements.get(from).ok_or(NetworkError::UnknownElement(from))?;
        if !src.kind.output_ports().contains(&from_port) {
            return Err(NetworkError::NoSuchPort {
                label: src.label.clone(),
                dir: "output",
                port: from_port,
            });
        }
        if self.out_index.contains_key(&(from, from_port)) {
            return Err(NetworkError::PortInUse {
                label: src.label.clone(),
                dir: "output",
                port: from_port,
            });
        }
        let dst = self.elements.get(to).ok_or(NetworkError::UnknownElement(to))?;
        if !dst.kind.input_ports().contains(&to_port) {
            return Err(NetworkError::NoSuchPort {
                label: dst.label.clone(),
                dir: "input",
                port: to_port,
            });
        }
        if self.in_index.contains_key(&(to, to_port)) {
            return Err(NetworkError::PortInUse {
                label: dst.label.clone(),
                dir: "input",
                port: to_port,
            });
        }
        let id = self.edges.len();
        self.edges.push(Edge {
            from,
            from_port,
            to,
            to_port,
            length,
            center_path: None,
        });
        self.out_index.insert((from, from_port), id);
        self.in_index.insert((to, to_port), id);
        Ok(id)
    }

    /// Changes one edge's length (used to break path equality on purpose).
    pub fn set_edge_length(&mut self, edge: EdgeId, length: u32) -> Result<()> {
        if length == 0 {
            return Err(NetworkError::ZeroLength);
        }
        self.edges
            .get_mut(edge)
            .ok_or(NetworkError::UnknownEdge(edge))?
            .length = length;
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element(&self, id: ElementId) -> Option<&Element> {
        self.elements.get(id)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.edges.get(id)
    }

    pub fn out_edge(&self, el: ElementId, port: Port) -> Option<EdgeId> {
        self.out_index.get(&(el, port)).copied()
    }

    pub fn in_edge(&self, el: ElementId, port: Port) -> Option<EdgeId> {
        self.in_index.get(&(el, port)).copied()
    }

    pub fn find(&self, label: &str) -> Option<ElementId> {
        self.elements.iter().position(|e| e.label == label)
    }

    pub fn detector_names(&self) -> &[String] {
        &self.detectors
    }

    pub fn detector_id(&self, name: &str) -> Option<u32> {
        self.detectors.iter().position(|d| d == name).map(|i| i as u32)
    }

    pub fn is_ring(&self) -> bool {
        self.layout.is_some()
    }

    pub fn node(&self, n: usize) -> Option<&NodeElements> {
        self.layout.as_ref()?.nodes.get(n)
    }

    pub fn center_paths(&self) -> &[CenterPath] {
        self.layout.as_ref().map_or(&[], |l| &l.paths)
    }

    /// Index of a center path in [`Self::center_paths`].
    pub fn center_path_index(&self, kind: PathKind) -> Option<usize> {
        self.center_paths().iter().position(|p| p.kind == kind)
    }

    pub fn combiner(&self) -> Option<ElementId> {
        self.layout.as_ref().map(|l| l.combiner)
    }

    pub fn readout_pbs(&self) -> Option<ElementId> {
        self.layout.as_ref().map(|l| l.readout)
    }

    pub fn total_length(&self) -> u32 {
        self.edges.iter().map(|e| e.length).sum()
    }

    /// First slot of every edge, and the total slot count.
    pub fn slot_bases(&self) -> (Vec<u32>, u32) {
        let mut bases = Vec::with_capacity(self.edges.len());
        let mut acc = 0u32;
        for e in &self.edges {
            bases.push(acc);
            acc += e.length;
        }
        (bases, acc)
    }

    pub fn registry(&self) -> ModeRegistry {
        ModeRegistry {
            guided_locations: self.total_length(),
            detectors: self.detectors.len() as u32,
        }
    }

    /// Outgoing edge of node `n`'s photon source.
    pub fn source_edge(&self, node: usize) -> Result<EdgeId> {
        self.elements
            .iter()
            .enumerate()
            .find(|(_, e)| e.kind == ElementKind::PhotonSource { node })
            .and_then(|(id, _)| self.out_edge(id, Port::Out))
            .ok_or(NetworkError::NoSource(node))
    }

    fn label(&self, id: ElementId) -> String {
        self.elements.get(id).map_or_else(|| format!("#{id}"), |e| e.label.clone())
    }

    fn layout(&self) -> Result<&Layout> {
        self.layout.as_ref().ok_or(NetworkError::NotARing)
    }
}

/// Ring of `n` nodes with an ideal combiner.
pub fn build_ring_network(n: usize) -> Result<NetworkGraph> {
    build_ring_network_with(n, CombinerModel::Ideal)
}

pub fn build_ring_network_with(n: usize, model: CombinerModel) -> Result<NetworkGraph> {
    let mut g = NetworkGraph::new(n)?;
    let (dh, _) = g.add_detector("Dh");
    let (dv, _) = g.add_detector("Dv");
    let hwp = |deg: f64| ElementKind::Hwp { theta_deg: deg };

    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let (detector, _) = g.add_detector(format!("D{i}"));
        let l = |s: &str| format!("n{i}.{s}");
        nodes.push(NodeElements {
            source: g.add_element(ElementKind::PhotonSource { node: i }, l("source")),
            router: g.add_element(ElementKind::StrRouter, l("str")),
            circulator: g.add_element(ElementKind::Circulator { ports: 3 }, l("circ")),
            pbs: g.add_element(ElementKind::Pbs, l("pbs")),
            cavity: g.add_element(ElementKind::CavityPort { node: i }, l("cavity")),
            mirror: g.add_element(ElementKind::Mirror, l("mirror")),
            gate: g.add_element(ElementKind::TrSwitch, l("tr0")),
            flip_plate: g.add_element(hwp(45.0), l("hwp45")),
            polarizer: g.add_element(ElementKind::Polarizer45, l("p45")),
            detector,
            exit_plate: g.add_element(hwp(22.5), l("exit_hwp")),
            inner_switch: g.add_element(ElementKind::TrSwitch, l("tr_in")),
            branch_pbs: g.add_element(ElementKind::Pbs, l("branch_pbs")),
            outer_switch: g.add_element(ElementKind::TrSwitch, l("tr_out")),
            return_switch: g.add_element(ElementKind::TrSwitch, l("return_tr")),
            ring_plate: g.add_element(hwp(22.5), l("ring_hwp")),
        });
    }

    for i in 0..n {
        let e = nodes[i].clone();
        let next = &nodes[(i + 1) % n];
        let wires = [
            (e.source, Port::Out, e.router, Port::P0),
            (e.router, Port::Cavity, e.circulator, Port::N(0)),
            (e.circulator, Port::N(1), e.pbs, Port::A),
            (e.pbs, Port::C, e.cavity, Port::In),
            (e.cavity, Port::Out, e.pbs, Port::C),
            (e.pbs, Port::D, e.mirror, Port::In),
            (e.mirror, Port::Out, e.pbs, Port::D),
            (e.pbs, Port::A, e.circulator, Port::N(1)),
            (e.circulator, Port::N(2), e.gate, Port::A),
            (e.gate, Port::X, e.polarizer, Port::In),
            (e.polarizer, Port::Out, e.detector, Port::In),
            (e.gate, Port::Y, e.flip_plate, Port::In),
            (e.flip_plate, Port::Out, e.router, Port::Return),
            (e.router, Port::P2, e.exit_plate, Port::In),
            (e.exit_plate, Port::Out, e.inner_switch, Port::A),
            (e.inner_switch, Port::X, e.branch_pbs, Port::A),
            (e.inner_switch, Port::Y, e.outer_switch, Port::B),
            (e.branch_pbs, Port::C, e.outer_switch, Port::A),
            (e.outer_switch, Port::X, next.return_switch, Port::A),
            (next.return_switch, Port::X, next.ring_plate, Port::In),
            (next.ring_plate, Port::Out, next.router, Port::P1),
        ];
        for (a, pa, b, pb) in wires {
            g.connect(a, pa, b, pb, 1)?;
        }
    }

    // Any two arrival times at the readout differ by less than the whole
    // ring, so a bank covering that span can always equalize them.
    let span = g.total_length();
    let mut stages = 0u32;
    while (1u32 << stages) - 1 < span {
        stages += 1;
    }

    let combiner = g.add_element(
        ElementKind::Combiner {
            fan_in: (2 * n) as u8,
            model,
        },
        "combiner",
    );
    let readout = g.add_element(ElementKind::Pbs, "pbs_d");
    let mut paths = Vec::with_capacity(2 * n);
    let kinds = (0..n).map(PathKind::Branch).chain((0..n).map(PathKind::Return));
    for (idx, kind) in kinds.enumerate() {
        let (start, label) = match kind {
            PathKind::Branch(i) => ((nodes[i].branch_pbs, Port::D), format!("branch{i}")),
            PathKind::Return(i) => ((nodes[i].return_switch, Port::Y), format!("return{i}")),
        };
        let mut prev = start;
        let mut bank = Vec::with_capacity(stages as usize);
        for k in 0..stages {
            let tin = g.add_element(ElementKind::TrSwitch, format!("{label}.delay{k}.in"));
            let tout = g.add_element(ElementKind::TrSwitch, format!("{label}.delay{k}.out"));
            let pad = g.add_element(ElementKind::DelayPad { length: 1 << k }, format!("{label}.delay{k}.pad"));
            let first = g.connect(prev.0, prev.1, tin, Port::A, 1)?;
            if k == 0 {
                g.edges[first].center_path = Some(idx);
            }
            g.connect(tin, Port::X, tout, Port::A, 1)?;
            g.connect(tin, Port::Y, pad, Port::In, 1)?;
            g.connect(pad, Port::Out, tout, Port::B, 1 << k)?;
            bank.push((tin, tout));
            prev = (tout, Port::X);
        }
        let plate = g.add_element(hwp(22.5), format!("{label}.hwp"));
        let first = g.connect(prev.0, prev.1, plate, Port::In, 1)?;
        if stages == 0 {
            g.edges[first].center_path = Some(idx);
        }
        g.connect(plate, Port::Out, combiner, Port::N(idx as u8), 1)?;
        paths.push(CenterPath {
            kind,
            label,
            stages: bank,
            plate,
        });
    }
    g.connect(combiner, Port::Out, readout, Port::A, 1)?;
    g.connect(readout, Port::C, dh, Port::In, 1)?;
    g.connect(readout, Port::D, dv, Port::In, 1)?;

    g.layout = Some(Layout {
        nodes,
        paths,
        combiner,
        readout,
    });
    Ok(g)
}

/// A local gate applied to one atom of the hooked node.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomPulse {
    pub atom: AtomIndex,
    pub unitary: Mat2,
}

/// Atom operations around the photon's visit to a node's cavity.
///
/// Fires at `tick` whether or not the photon is there: `before`, then
/// scattering of whatever amplitude sits at the cavity, then `after`.
#[derive(Clone, Debug, PartialEq)]
pub struct CavityHook {
    pub node: usize,
    pub tick: u32,
    pub before: Vec<AtomPulse>,
    pub after: Vec<AtomPulse>,
}

/// How participant atoms are prepared for scattering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HookStyle {
    /// `σx` on atom 2 before and after the scattering (encoded qubits).
    Sandwich,
    /// Scattering only.
    Direct,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwitchSchedule {
    entry: usize,
    participants: Vec<usize>,
    settings: BTreeMap<ElementId, Setting>,
    hooks: Vec<CavityHook>,
}

impl SwitchSchedule {
    /// An empty schedule, to be filled by hand.
    pub fn new(entry: usize, participants: Vec<usize>) -> Self {
        SwitchSchedule {
            entry,
            participants,
            settings: BTreeMap::new(),
            hooks: Vec::new(),
        }
    }

    pub fn entry(&self) -> usize {
        self.entry
    }

    pub fn participants(&self) -> &[usize] {
        &self.participants
    }

    pub fn set(&mut self, element: ElementId, setting: Setting) {
        self.settings.insert(element, setting);
    }

    pub fn setting(&self, element: ElementId) -> Option<Setting> {
        self.settings.get(&element).copied()
    }

    pub fn settings(&self) -> &BTreeMap<ElementId, Setting> {
        &self.settings
    }

    pub fn hooks(&self) -> &[CavityHook] {
        &self.hooks
    }

    pub fn add_hook(&mut self, hook: CavityHook) {
        self.hooks.push(hook);
        self.hooks.sort_by_key(|h| (h.tick, h.node));
    }
}

/// Checks that `participants` is a valid ordered subset with `entry` in it,
/// and returns it rotated to start at `entry`.
pub fn ring_order(node_count: usize, participants: &[usize], entry: usize) -> Result<Vec<usize>> {
    if participants.is_empty() {
        return Err(NetworkError::EmptySubset);
    }
    let mut seen = BTreeSet::new();
    for &p in participants {
        if p >= node_count {
            return Err(NetworkError::NodeOutOfRange {
                node: p,
                count: node_count,
            });
        }
        if !seen.insert(p) {
            return Err(NetworkError::DuplicateNode(p));
        }
    }
    if entry >= node_count {
        return Err(NetworkError::NodeOutOfRange {
            node: entry,
            count: node_count,
        });
    }
    let at = participants
        .iter()
        .position(|&p| p == entry)
        .ok_or(NetworkError::EntryNotInSubset(entry))?;
    let rotated: Vec<usize> = participants[at..].iter().chain(&participants[..at]).copied().collect();
    let offsets: Vec<usize> = rotated.iter().map(|&p| (p + node_count - entry) % node_count).collect();
    if offsets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(NetworkError::NotRingOrder(participants.to_vec()));
    }
    Ok(rotated)
}

pub fn compile_schedule(graph: &NetworkGraph, participants: &[usize], entry: usize) -> Result<SwitchSchedule> {
    compile_schedule_with(graph, participants, entry, HookStyle::Sandwich)
}

pub fn compile_schedule_with(
    graph: &NetworkGraph,
    participants: &[usize],
    entry: usize,
    style: HookStyle,
) -> Result<SwitchSchedule> {
    let layout = graph.layout()?;
    let n = graph.node_count;
    let order = ring_order(n, participants, entry)?;
    let members: BTreeSet<usize> = order.iter().copied().collect();
    let last = *order.last().expect("non-empty");
    let exit_at = (last + 1) % n;

    let mut s = SwitchSchedule::new(entry, participants.to_vec());
    let tr = |t| Setting::Tr(t);
    for (i, node) in layout.nodes.iter().enumerate() {
        let router = if i == entry {
            StrConfig::Port0Entry
        } else if members.contains(&i) {
            StrConfig::Port1Entry
        } else {
            StrConfig::Bypass1to2
        };
        s.set(node.router, Setting::Str(router));
        s.set(node.gate, tr(TrState::Reflect));
        let pair = if members.contains(&i) {
            TrState::Transmit
        } else {
            TrState::Reflect
        };
        s.set(node.inner_switch, tr(pair));
        s.set(node.outer_switch, tr(pair));
        let ret = if i == exit_at {
            TrState::Reflect
        } else {
            TrState::Transmit
        };
        s.set(node.return_switch, tr(ret));
    }
    for path in &layout.paths {
        for &(a, b) in &path.stages {
            s.set(a, tr(TrState::Transmit));
            s.set(b, tr(TrState::Transmit));
        }
    }

    let walk = walk_routes(graph, &s, entry)?;
    let target = walk
        .routes
        .iter()
        .filter_map(|r| r.readout_arrival)
        .max()
        .ok_or(NetworkError::NoRoute)?;
    let mut pads: BTreeMap<usize, u32> = BTreeMap::new();
    for r in &walk.routes {
        if let (Some(t), Some(p)) = (r.readout_arrival, r.center_path) {
            let need = target - t;
            if let Some(&prev) = pads.get(&p) {
                if prev != need {
                    // same path reached at two times: padding cannot help
                    return Err(unequal(&walk.routes, graph));
                }
            }
            pads.insert(p, need);
        }
    }
    for (&p, &need) in &pads {
        let path = &layout.paths[p];
        let max = (1u32 << path.stages.len()) - 1;
        if need > max {
            return Err(NetworkError::DelayBankExhausted {
                path: path.label.clone(),
                needed: need,
                max,
            });
        }
        for (k, &(a, b)) in path.stages.iter().enumerate() {
            if need >> k & 1 == 1 {
                s.set(a, tr(TrState::Reflect));
                s.set(b, tr(TrState::Reflect));
            }
        }
    }

    for &p in &order {
        let tick = match walk.cavity_arrivals.get(&p) {
            Some(&t) => t - 1,
            None => return Err(NetworkError::NoRoute),
        };
        let (before, after) = match style {
            HookStyle::Sandwich => {
                let x = AtomPulse {
                    atom: AtomIndex::Second,
                    unitary: pauli_x(),
                };
                (vec![x.clone()], vec![x])
            }
            HookStyle::Direct => (Vec::new(), Vec::new()),
        };
        s.add_hook(CavityHook {
            node: p,
            tick,
            before,
            after,
        });
    }
    validate_equal_arrival(graph, &s)?;
    Ok(s)
}

/// Where a structural route ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RouteEnd {
    Detector(u32),
    /// Dumped inside an element or out of an unconnected port.
    Lost,
}

/// One polarization-resolved path through the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    pub edges: Vec<EdgeId>,
    pub end: RouteEnd,
    /// Ticks from injection to the end.
    pub length: u32,
    /// Ticks from injection to arrival at the readout PBS.
    pub readout_arrival: Option<u32>,
    /// First center path entered.
    pub center_path: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnequalPair {
    pub first: String,
    pub first_length: u32,
    pub second: String,
    pub second_length: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RouteWalk {
    pub routes: Vec<Route>,
    /// Arrival tick at each visited cavity (unique per node).
    pub cavity_arrivals: BTreeMap<usize, u32>,
}

/// Enumerates every route a photon injected at `node`'s source can take
/// under `schedule`, ignoring amplitudes. Routes branch wherever the set of
/// polarizations present splits over different output ports.
pub fn walk_routes(graph: &NetworkGraph, schedule: &SwitchSchedule, node: usize) -> Result<RouteWalk> {
    let start = graph.source_edge(node)?;
    let readout = graph.readout_pbs();
    let mut routes = Vec::new();
    let mut cavity_arrivals: BTreeMap<usize, u32> = BTreeMap::new();

    struct Frame {
        edges: Vec<EdgeId>,
        pols: [bool; 2],
        elapsed: u32,
        readout_arrival: Option<u32>,
        center_path: Option<usize>,
    }
    let mut stack = vec![Frame {
        edges: vec![start],
        pols: [true, true],
        elapsed: 0,
        readout_arrival: None,
        center_path: graph.edges[start].center_path,
    }];

    while let Some(f) = stack.pop() {
        let e = &graph.edges[*f.edges.last().expect("non-empty")];
        let t = f.elapsed + e.length;
        let head = &graph.elements[e.to];
        let readout_arrival = if f.readout_arrival.is_none() && Some(e.to) == readout {
            Some(t)
        } else {
            f.readout_arrival
        };
        if let ElementKind::CavityPort { node } = head.kind {
            match cavity_arrivals.get(&node) {
                Some(&first) if first != t => {
                    return Err(NetworkError::AmbiguousCavityTiming {
                        node,
                        first,
                        second: t,
                    })
                }
                _ => {
                    cavity_arrivals.insert(node, t);
                }
            }
        }
        let setting = schedule.setting(e.to);
        // output port (or sink) → set of polarizations leaving through it
        let mut outs: BTreeMap<Exit, [bool; 2]> = BTreeMap::new();
        for pol in Polarization::BOTH {
            if !f.pols[pol.index()] {
                continue;
            }
            let ts = optics::transfer(&head.kind, setting, e.to_port, pol).map_err(|err| NetworkError::Optics {
                label: head.label.clone(),
                err,
            })?;
            for tr in ts {
                outs.entry(tr.exit).or_insert([false; 2])[tr.pol.index()] = true;
            }
        }
        for (exit, pols) in outs {
            let next = match exit {
                Exit::Port(p) => graph.out_edge(e.to, p),
                Exit::Detector(_) | Exit::Lost(_) => None,
            };
            match next {
                Some(ne) => {
                    if f.edges.contains(&ne) {
                        return Err(NetworkError::RoutingCycle(edge_name(graph, ne)));
                    }
                    let mut edges = f.edges.clone();
                    edges.push(ne);
                    stack.push(Frame {
                        edges,
                        pols,
                        elapsed: t,
                        readout_arrival,
                        center_path: f.center_path.or(graph.edges[ne].center_path),
                    });
                }
                None => routes.push(Route {
                    edges: f.edges.clone(),
                    end: match exit {
                        Exit::Detector(d) => RouteEnd::Detector(d),
                        _ => RouteEnd::Lost,
                    },
                    length: t,
                    readout_arrival,
                    center_path: f.center_path,
                }),
            }
        }
    }
    Ok(RouteWalk {
        routes,
        cavity_arrivals,
    })
}

fn edge_name(graph: &NetworkGraph, e: EdgeId) -> String {
    let edge = &graph.edges[e];
    format!(
        "{}.{:?} -> {}.{:?}",
        graph.label(edge.from),
        edge.from_port,
        graph.label(edge.to),
        edge.to_port
    )
}

fn route_name(graph: &NetworkGraph, r: &Route) -> String {
    match r.center_path.and_then(|p| graph.center_paths().get(p)) {
        Some(p) => p.label.clone(),
        None => match r.edges.iter().rev().find(|&&e| graph.edges[e].center_path.is_some()) {
            Some(&e) => edge_name(graph, e),
            None => format!("route via {}", edge_name(graph, *r.edges.last().expect("non-empty"))),
        },
    }
}

fn unequal(routes: &[Route], graph: &NetworkGraph) -> NetworkError {
    let arriving: Vec<&Route> = routes.iter().filter(|r| r.readout_arrival.is_some()).collect();
    let mut pairs = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, a) in arriving.iter().enumerate() {
        for b in &arriving[i + 1..] {
            if a.readout_arrival != b.readout_arrival {
                let (na, nb) = (route_name(graph, a), route_name(graph, b));
                if seen.insert((na.clone(), nb.clone())) {
                    pairs.push(UnequalPair {
                        first: na,
                        first_length: a.readout_arrival.unwrap_or(0),
                        second: nb,
                        second_length: b.readout_arrival.unwrap_or(0),
                    });
                }
            }
        }
    }
    NetworkError::UnequalArrival(pairs)
}

/// Compares the arrival time at the readout PBS over every route from the
/// entry source. Returns the common arrival time.
pub fn validate_equal_arrival(graph: &NetworkGraph, schedule: &SwitchSchedule) -> Result<u32> {
    let walk = walk_routes(graph, schedule, schedule.entry)?;
    let mut times = walk.routes.iter().filter_map(|r| r.readout_arrival);
    let first = times.next().ok_or(NetworkError::NoRoute)?;
    if times.all(|t| t == first) {
        Ok(first)
    } else {
        Err(unequal(&walk.routes, graph))
    }
}

/// Ticks from injection to a click on `Dh`/`Dv`; equals the number of
/// per-tick loss factors the detected amplitude picked up.
pub fn detection_tick(graph: &NetworkGraph, schedule: &SwitchSchedule) -> Result<u32> {
    let walk = walk_routes(graph, schedule, schedule.entry)?;
    let mut ticks = walk.routes.iter().filter_map(|r| match r.end {
        RouteEnd::Detector(d) if d == DH || d == DV => Some(r.length),
        _ => None,
    });
    let first = ticks.next().ok_or(NetworkError::NoRoute)?;
    if ticks.all(|t| t == first) {
        Ok(first)
    } else {
        Err(unequal(&walk.routes, graph))
    }
}

/// Puts a photon with polarization amplitudes `[h, v]` on node `node`'s
/// source edge.
pub fn inject_photon(state: &mut JointState, graph: &NetworkGraph, node: usize, pol: [C64; 2]) -> Result<()> {
    let e = graph.source_edge(node)?;
    let (bases, _) = graph.slot_bases();
    state.place_photon(bases[e], pol)?;
    Ok(())
}

/// Amplitude that reached one detector: `(atoms, tick, amplitude)`.
pub type DetectorAmplitude = (AtomString, u32, C64);

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationResult {
    pub state: JointState,
    pub detectors: BTreeMap<u32, Vec<DetectorAmplitude>>,
    pub ticks: u32,
    /// Guided occupancy at the start of each tick.
    pub trace: Vec<(u32, Vec<(u32, Polarization)>)>,
}

impl PropagationResult {
    pub fn detector_probability(&self, id: u32) -> f64 {
        self.detectors
            .get(&id)
            .map_or(0.0, |v| v.iter().map(|(_, _, a)| a.norm_sqr()).sum())
    }

    /// Total weight absorbed by `Lost` sinks.
    pub fn lost_probability(&self) -> f64 {
        self.state
            .iter()
            .filter(|(_, m, _)| matches!(m, PhotonMode::Lost { .. }))
            .map(|(_, _, a)| a.norm_sqr())
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Dest {
    /// First slot of an edge, with the edge's center path if tagged.
    Slot(u32, Option<usize>),
    Detector(u32),
    Lost(u32),
}

type HeadTable = Vec<[Vec<(Dest, Polarization, C64)>; 2]>;

/// Per edge and input polarization, where the head element sends amplitude.
fn head_table(graph: &NetworkGraph, schedule: &SwitchSchedule, bases: &[u32]) -> Result<HeadTable> {
    let mut table = Vec::with_capacity(graph.edges.len());
    for e in &graph.edges {
        let head = &graph.elements[e.to];
        let setting = schedule.setting(e.to);
        let mut per_pol: [Vec<(Dest, Polarization, C64)>; 2] = [Vec::new(), Vec::new()];
        for pol in Polarization::BOTH {
            let ts = optics::transfer(&head.kind, setting, e.to_port, pol).map_err(|err| NetworkError::Optics {
                label: head.label.clone(),
                err,
            })?;
            for tr in ts {
                let origin = (e.to as u32) << 8;
                let dest = match tr.exit {
                    Exit::Detector(d) => Dest::Detector(d),
                    Exit::Lost(k) => Dest::Lost(origin | u32::from(k)),
                    Exit::Port(p) => match graph.out_edge(e.to, p) {
                        Some(ne) => Dest::Slot(bases[ne], graph.edges[ne].center_path),
                        None => {
                            let code = head.kind.output_ports().iter().position(|&q| q == p).unwrap_or(0) as u32;
                            Dest::Lost(origin | (OPEN_PORT_CODE + code))
                        }
                    },
                };
                per_pol[pol.index()].push((dest, tr.pol, tr.factor));
            }
        }
        table.push(per_pol);
    }
    Ok(table)
}

/// Routing tables for one `(graph, schedule)` pair, reusable across runs.
#[derive(Clone, Debug)]
pub struct PropagationPlan {
    schedule: SwitchSchedule,
    node_count: usize,
    bases: Vec<u32>,
    /// Last slot of each edge.
    edge_last: Vec<u32>,
    registry: ModeRegistry,
    table: HeadTable,
    slot_edge: Vec<usize>,
    cavity_slots: BTreeMap<usize, Vec<u32>>,
    budget: u32,
}

impl PropagationPlan {
    pub fn new(graph: &NetworkGraph, schedule: &SwitchSchedule) -> Result<Self> {
        let (bases, total) = graph.slot_bases();
        for h in schedule.hooks() {
            if h.node >= graph.node_count() {
                return Err(NetworkError::NodeOutOfRange {
                    node: h.node,
                    count: graph.node_count(),
                });
            }
        }
        let table = head_table(graph, schedule, &bases)?;
        let mut slot_edge = vec![0usize; total as usize];
        let mut cavity_slots: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
        for (e, edge) in graph.edges.iter().enumerate() {
            for k in 0..edge.length {
                slot_edge[(bases[e] + k) as usize] = e;
            }
            if let ElementKind::CavityPort { node } = graph.elements[edge.to].kind {
                cavity_slots.entry(node).or_default().push(bases[e] + edge.length - 1);
            }
        }
        let edge_last = graph.edges.iter().zip(&bases).map(|(e, &b)| b + e.length - 1).collect();
        Ok(PropagationPlan {
            schedule: schedule.clone(),
            node_count: graph.node_count(),
            bases,
            edge_last,
            registry: graph.registry(),
            table,
            slot_edge,
            cavity_slots,
            budget: graph.total_length() + 1,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn schedule(&self) -> &SwitchSchedule {
        &self.schedule
    }

    /// Engine positioned at tick 0 on `state`.
    pub fn start<'p>(&'p self, state: &JointState, noise: Option<&'p NoiseRealization>) -> Result<Propagator<'p>> {
        self.check(state)?;
        Ok(Propagator {
            plan: Cow::Borrowed(self),
            noise,
            state: state.clone(),
            tick: 0,
            trace: Vec::new(),
        })
    }

    fn check(&self, state: &JointState) -> Result<()> {
        if state.registry() != self.registry {
            return Err(StateError::DimensionMismatch(
                state.registry().guided_locations as usize,
                self.registry.guided_locations as usize,
            )
            .into());
        }
        match self.schedule.hooks().iter().find(|h| h.node >= state.node_count()) {
            Some(h) => Err(NetworkError::NodeOutOfRange {
                node: h.node,
                count: state.node_count(),
            }),
            None => Ok(()),
        }
    }

    pub fn run(&self, state: &JointState, noise: Option<&NoiseRealization>) -> Result<PropagationResult> {
        self.start(state, noise)?.finish()
    }
}

/// Tick-by-tick engine; [`propagate`] runs it to completion.
#[derive(Clone, Debug)]
pub struct Propagator<'a> {
    plan: Cow<'a, PropagationPlan>,
    noise: Option<&'a NoiseRealization>,
    state: JointState,
    tick: u32,
    trace: Vec<(u32, Vec<(u32, Polarization)>)>,
}

impl<'a> Propagator<'a> {
    pub fn new(
        state: &JointState,
        graph: &NetworkGraph,
        schedule: &SwitchSchedule,
        noise: Option<&'a NoiseRealization>,
    ) -> Result<Self> {
        let plan = PropagationPlan::new(graph, schedule)?;
        plan.check(state)?;
        Ok(Propagator {
            plan: Cow::Owned(plan),
            noise,
            state: state.clone(),
            tick: 0,
            trace: Vec::new(),
        })
    }

    pub fn state(&self) -> &JointState {
        &self.state
    }

    /// Ticks completed so far.
    pub fn tick(&self) -> u32 {
        self.tick
    }

    pub fn done(&self) -> bool {
        !self.state.in_flight()
    }

    /// Slot of progress `k` along `edge`.
    pub fn slot(&self, edge: EdgeId, k: u32) -> u32 {
        self.plan.bases[edge] + k
    }

    /// Advances one tick: hooks and scattering, then every guided mode moves.
    pub fn step(&mut self) -> Result<()> {
        let plan: &PropagationPlan = &self.plan;
        if self.tick >= plan.budget {
            return Err(NetworkError::NonTermination(self.tick));
        }
        let tick = self.tick;
        let noise = self.noise;
        let epsilon = noise.map_or(0.0, |n| n.scattering_phase_error);
        let scatter = C64::from_polar(1.0, core::f64::consts::PI + epsilon);
        let occupancy = self.state.guided_occupancy();
        let occupied: BTreeSet<u32> = occupancy.iter().map(|&(l, _)| l).collect();
        let st = &mut self.state;

        let mut hooked = BTreeSet::new();
        for h in plan.schedule.hooks().iter().filter(|h| h.tick == tick) {
            for p in &h.before {
                st.apply_atom_unitary(h.node, p.atom, &p.unitary)?;
            }
            if let Some(nr) = noise.filter(|n| n.dephasing_timing == DephasingTiming::IncludeSandwichWindow) {
                if let Some(&phi) = nr.node_phases.get(h.node) {
                    st.apply_collective_phase(h.node, phi)?;
                }
            }
            for &s in plan.cavity_slots.get(&h.node).into_iter().flatten() {
                if occupied.contains(&s) {
                    st.apply_scattering_phase(h.node, s, scatter)?;
                }
            }
            for p in &h.after {
                st.apply_atom_unitary(h.node, p.atom, &p.unitary)?;
            }
            hooked.insert(h.node);
        }
        for (&node, slots) in &plan.cavity_slots {
            if hooked.contains(&node) {
                continue;
            }
            for &s in slots {
                if occupied.contains(&s) {
                    st.apply_scattering_phase(node, s, scatter)?;
                }
            }
        }

        let loss = noise.map_or(0.0, |n| n.loss_per_element);
        let keep = libm::sqrt(1.0 - loss);
        let divert = libm::sqrt(loss);
        let next = tick + 1;
        let mut map = ModeMap::new();
        for &(loc, pol) in &occupancy {
            let e = plan.slot_edge[loc as usize];
            let last = plan.edge_last[e];
            let mut img: Vec<(PhotonMode, C64)> = if loc < last {
                vec![(PhotonMode::guided(loc + 1, pol), C64::new(1.0, 0.0))]
            } else {
                plan.table[e][pol.index()]
                    .iter()
                    .map(|&(d, p, mut f)| {
                        let m = match d {
                            Dest::Slot(s, path) => {
                                if let (Some(idx), Some(nr)) = (path, noise) {
                                    let theta = nr.path_phases.get(idx).copied().unwrap_or(0.0);
                                    if theta != 0.0 {
                                        f *= C64::from_polar(1.0, theta);
                                    }
                                }
                                PhotonMode::guided(s, p)
                            }
                            Dest::Detector(id) => PhotonMode::Detector { id, tick: next },
                            Dest::Lost(origin) => PhotonMode::Lost {
                                origin,
                                pol: p,
                                tick: next,
                            },
                        };
                        (m, f)
                    })
                    .collect()
            };
            if loss > 0.0 {
                for (_, f) in img.iter_mut() {
                    *f *= keep;
                }
                img.push((
                    PhotonMode::Lost {
                        origin: (loc << 8) | LOSS_CODE,
                        pol,
                        tick: next,
                    },
                    C64::new(divert, 0.0),
                ));
            }
            map.insert(PhotonMode::guided(loc, pol), img);
        }
        st.relocate_modes(&map)?;
        self.trace.push((tick, occupancy));
        self.tick = next;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PropagationResult> {
        while !self.done() {
            self.step()?;
        }
        let mut detectors: BTreeMap<u32, Vec<DetectorAmplitude>> = BTreeMap::new();
        for (atoms, mode, a) in self.state.iter() {
            if let PhotonMode::Detector { id, tick } = mode {
                detectors.entry(id).or_default().push((atoms, tick, a));
            }
        }
        Ok(PropagationResult {
            state: self.state,
            detectors,
            ticks: self.tick,
            trace: self.trace,
        })
    }
}

/// Runs the photon until all amplitude sits on sinks.
pub fn propagate(
    state: &JointState,
    graph: &NetworkGraph,
    schedule: &SwitchSchedule,
    noise: Option<&NoiseRealization>,
) -> Result<PropagationResult> {
    PropagationPlan::new(graph, schedule)?.run(state, noise)
}
