//! Optical element kinds and their port/polarization transfer tables.
//!
//! Everything here is pure data: the propagation engine and the brute-force
//! oracle both read these tables but route independently.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::qstate::{Mat2, Polarization, C64};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OpticsError {
    #[error("{kind} has no input port {port:?}")]
    IllegalPort { kind: &'static str, port: Port },
    #[error("{0} needs a switch setting")]
    MissingSetting(&'static str),
    #[error("setting {setting:?} does not apply to {kind}")]
    WrongSetting { kind: &'static str, setting: Setting },
    #[error("unknown element kind {0:?}")]
    UnknownKind(alloc::string::String),
    #[error("unknown setting {0:?}")]
    UnknownSetting(alloc::string::String),
}

/// Port names. Which ones exist depends on the element kind:
///
/// * PBS: `A`..`D`; `h` transmits `A↔C`, `B↔D`, `v` reflects `A↔D`, `B↔C`.
/// * TR: inputs `A`, `B`; outputs `X`, `Y`. Transmit is `A→X`, `B→Y`.
/// * STR: inputs `P0`, `P1`, `Return`; outputs `Cavity`, `P2`.
/// * Circulators and combiners use numbered ports `N(k)`.
/// * Everything else has a single `In` and `Out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Port {
    In,
    Out,
    A,
    B,
    C,
    D,
    X,
    Y,
    P0,
    P1,
    P2,
    Cavity,
    Return,
    N(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrState {
    Transmit,
    Reflect,
}

/// External behavior of a node router.
///
/// Both entry configurations also send the photon returning from the cavity
/// side out through port 2, since every entry is followed by an exit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StrConfig {
    Port0Entry,
    Port1Entry,
    ExitToPort2,
    Bypass1to2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Setting {
    Tr(TrState),
    Str(StrConfig),
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Setting::Tr(TrState::Transmit) => "Transmit",
            Setting::Tr(TrState::Reflect) => "Reflect",
            Setting::Str(StrConfig::Port0Entry) => "Port0Entry",
            Setting::Str(StrConfig::Port1Entry) => "Port1Entry",
            Setting::Str(StrConfig::ExitToPort2) => "ExitToPort2",
            Setting::Str(StrConfig::Bypass1to2) => "Bypass1to2",
        };
        f.write_str(s)
    }
}

impl FromStr for Setting {
    type Err = OpticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "Transmit" => Setting::Tr(TrState::Transmit),
            "Reflect" => Setting::Tr(TrState::Reflect),
            "Port0Entry" => Setting::Str(StrConfig::Port0Entry),
            "Port1Entry" => Setting::Str(StrConfig::Port1Entry),
            "ExitToPort2" => Setting::Str(StrConfig::ExitToPort2),
            "Bypass1to2" => Setting::Str(StrConfig::Bypass1to2),
            _ => return Err(OpticsError::UnknownSetting(s.into())),
        })
    }
}

/// How a combiner treats several simultaneously occupied inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CombinerModel {
    /// Every input maps to the output with factor 1. Only valid while at most
    /// one input is occupied per atomic basis string; the engine rejects
    /// anything else as a collision.
    Ideal,
    /// A balanced `k`-port Fourier multiport: input `j` reaches the output
    /// with `1/√k` and lost port `m` with `ω^{jm}/√k`. Unitary for any input.
    Balanced,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementKind {
    Pbs,
    Hwp { theta_deg: f64 },
    Circulator { ports: u8 },
    TrSwitch,
    StrRouter,
    Polarizer45,
    DetectorSink { detector: u32 },
    Mirror,
    Combiner { fan_in: u8, model: CombinerModel },
    CavityPort { node: usize },
    PhotonSource { node: usize },
    DelayPad { length: u32 },
}

impl ElementKind {
    /// Type tag used in config files and graph dumps.
    pub fn tag(&self) -> &'static str {
        match self {
            ElementKind::Pbs => "PBS",
            ElementKind::Hwp { .. } => "HWP",
            ElementKind::Circulator { .. } => "CIRC",
            ElementKind::TrSwitch => "TR",
            ElementKind::StrRouter => "STR",
            ElementKind::Polarizer45 => "P45",
            ElementKind::DetectorSink { .. } => "DET",
            ElementKind::Mirror => "MIRROR",
            ElementKind::Combiner { .. } => "COMBINER",
            ElementKind::CavityPort { .. } => "CAVITY",
            ElementKind::PhotonSource { .. } => "SOURCE",
            ElementKind::DelayPad { .. } => "DELAY",
        }
    }

    pub fn is_configurable(&self) -> bool {
        matches!(self, ElementKind::TrSwitch | ElementKind::StrRouter)
    }

    /// Input ports the transfer table is defined on.
    pub fn input_ports(&self) -> Vec<Port> {
        match *self {
            ElementKind::Pbs => vec![Port::A, Port::B, Port::C, Port::D],
            ElementKind::TrSwitch => vec![Port::A, Port::B],
            ElementKind::StrRouter => vec![Port::P0, Port::P1, Port::Return],
            ElementKind::Circulator { ports } => (0..ports).map(Port::N).collect(),
            ElementKind::Combiner { fan_in, .. } => (0..fan_in).map(Port::N).collect(),
            ElementKind::PhotonSource { .. } => Vec::new(),
            _ => vec![Port::In],
        }
    }

    /// Output ports an edge may leave from.
    pub fn output_ports(&self) -> Vec<Port> {
        match *self {
            ElementKind::Pbs => vec![Port::A, Port::B, Port::C, Port::D],
            ElementKind::TrSwitch => vec![Port::X, Port::Y],
            ElementKind::StrRouter => vec![Port::Cavity, Port::P2],
            ElementKind::Circulator { ports } => (0..ports).map(Port::N).collect(),
            ElementKind::DetectorSink { .. } => Vec::new(),
            _ => vec![Port::Out],
        }
    }
}

/// `(pattern, kind)` parse of a type tag with default parameters.
impl FromStr for ElementKind {
    type Err = OpticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "PBS" => ElementKind::Pbs,
            "HWP" => ElementKind::Hwp { theta_deg: 22.5 },
            "CIRC" => ElementKind::Circulator { ports: 3 },
            "TR" => ElementKind::TrSwitch,
            "STR" => ElementKind::StrRouter,
            "P45" => ElementKind::Polarizer45,
            "DET" => ElementKind::DetectorSink { detector: 0 },
            "MIRROR" => ElementKind::Mirror,
            "COMBINER" => ElementKind::Combiner {
                fan_in: 2,
                model: CombinerModel::Ideal,
            },
            "CAVITY" => ElementKind::CavityPort { node: 0 },
            "SOURCE" => ElementKind::PhotonSource { node: 0 },
            "DELAY" => ElementKind::DelayPad { length: 1 },
            _ => return Err(OpticsError::UnknownKind(s.into())),
        })
    }
}

/// Where a transferred amplitude goes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Exit {
    /// Out through a port; an unconnected port discharges to `Lost`.
    Port(Port),
    /// Absorbed by a detector.
    Detector(u32),
    /// Discarded inside the element (rejected polarizer ray, dump port `k`).
    Lost(u8),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transfer {
    pub exit: Exit,
    pub pol: Polarization,
    pub factor: C64,
}

fn pass(exit: Exit, pol: Polarization) -> Vec<Transfer> {
    vec![Transfer {
        exit,
        pol,
        factor: C64::new(1.0, 0.0),
    }]
}

/// Half-wave plate at `theta_deg` in the `(h, v)` basis:
/// `[[cos 2θ, sin 2θ], [sin 2θ, −cos 2θ]]`.
pub fn hwp_matrix(theta_deg: f64) -> Mat2 {
    let t = 2.0 * theta_deg.to_radians();
    let (s, c) = (libm::sin(t), libm::cos(t));
    // snap the exact zeros at multiples of 45° that rounding would spoil
    let snap = |x: f64| if x.abs() < 1e-15 { 0.0 } else { x };
    let (s, c) = (snap(s), snap(c));
    Mat2::new(
        C64::new(c, 0.0),
        C64::new(s, 0.0),
        C64::new(s, 0.0),
        C64::new(-c, 0.0),
    )
}

fn tr_state(kind: &'static str, setting: Option<Setting>) -> Result<TrState, OpticsError> {
    match setting {
        Some(Setting::Tr(s)) => Ok(s),
        Some(other) => Err(OpticsError::WrongSetting {
            kind,
            setting: other,
        }),
        None => Err(OpticsError::MissingSetting(kind)),
    }
}

fn str_config(setting: Option<Setting>) -> Result<StrConfig, OpticsError> {
    match setting {
        Some(Setting::Str(s)) => Ok(s),
        Some(other) => Err(OpticsError::WrongSetting {
            kind: "STR",
            setting: other,
        }),
        None => Err(OpticsError::MissingSetting("STR")),
    }
}

/// Transfer table lookup: where `(in_port, pol)` goes through `kind`.
///
/// Passive routing carries factor 1 everywhere. An input that the current
/// setting does not route is sent to an internal dump (`Exit::Lost`).
pub fn transfer(
    kind: &ElementKind,
    setting: Option<Setting>,
    in_port: Port,
    pol: Polarization,
) -> Result<Vec<Transfer>, OpticsError> {
    let tag = kind.tag();
    let illegal = || OpticsError::IllegalPort { kind: tag, port: in_port };
    if !kind.input_ports().contains(&in_port) {
        return Err(illegal());
    }
    use Polarization::{H, V};
    Ok(match *kind {
        ElementKind::Pbs => {
            let out = match (in_port, pol) {
                (Port::A, H) => Port::C,
                (Port::C, H) => Port::A,
                (Port::B, H) => Port::D,
                (Port::D, H) => Port::B,
                (Port::A, V) => Port::D,
                (Port::D, V) => Port::A,
                (Port::B, V) => Port::C,
                (Port::C, V) => Port::B,
                _ => return Err(illegal()),
            };
            pass(Exit::Port(out), pol)
        }
        ElementKind::Hwp { theta_deg } => {
            let m = hwp_matrix(theta_deg);
            Polarization::BOTH
                .iter()
                .map(|&q| Transfer {
                    exit: Exit::Port(Port::Out),
                    pol: q,
                    factor: m[(q.index(), pol.index())],
                })
                .filter(|t| t.factor.norm() > 0.0)
                .collect()
        }
        ElementKind::Circulator { ports } => match in_port {
            Port::N(k) => pass(Exit::Port(Port::N((k + 1) % ports)), pol),
            _ => return Err(illegal()),
        },
        ElementKind::TrSwitch => {
            let state = tr_state(tag, setting)?;
            let out = match (state, in_port) {
                (TrState::Transmit, Port::A) | (TrState::Reflect, Port::B) => Port::X,
                _ => Port::Y,
            };
            pass(Exit::Port(out), pol)
        }
        ElementKind::StrRouter => {
            let exit = match (str_config(setting)?, in_port) {
                (StrConfig::Port0Entry, Port::P0) | (StrConfig::Port1Entry, Port::P1) => {
                    Exit::Port(Port::Cavity)
                }
                (
                    StrConfig::Port0Entry | StrConfig::Port1Entry | StrConfig::ExitToPort2,
                    Port::Return,
                ) => Exit::Port(Port::P2),
                (StrConfig::Bypass1to2, Port::P1) => Exit::Port(Port::P2),
                (_, Port::P0) => Exit::Lost(0),
                (_, Port::P1) => Exit::Lost(1),
                _ => Exit::Lost(2),
            };
            pass(exit, pol)
        }
        ElementKind::Polarizer45 => {
            let s = core::f64::consts::FRAC_1_SQRT_2;
            // rejected −45° ray is always labeled v
            let rejected = if pol == H { s } else { -s };
            vec![
                Transfer {
                    exit: Exit::Port(Port::Out),
                    pol: H,
                    factor: C64::new(s, 0.0),
                },
                Transfer {
                    exit: Exit::Lost(0),
                    pol: V,
                    factor: C64::new(rejected, 0.0),
                },
            ]
        }
        ElementKind::DetectorSink { detector } => pass(Exit::Detector(detector), pol),
        ElementKind::Mirror
        | ElementKind::DelayPad { .. }
        | ElementKind::CavityPort { .. } => pass(Exit::Port(Port::Out), pol),
        ElementKind::Combiner { fan_in, model } => {
            let j = match in_port {
                Port::N(j) => j,
                _ => return Err(illegal()),
            };
            match model {
                CombinerModel::Ideal => pass(Exit::Port(Port::Out), pol),
                CombinerModel::Balanced => {
                    let k = f64::from(fan_in);
                    let norm = 1.0 / libm::sqrt(k);
                    let mut out = vec![Transfer {
                        exit: Exit::Port(Port::Out),
                        pol,
                        factor: C64::new(norm, 0.0),
                    }];
                    for m in 1..fan_in {
                        let angle = 2.0 * core::f64::consts::PI * f64::from(j) * f64::from(m) / k;
                        out.push(Transfer {
                            exit: Exit::Lost(m),
                            pol,
                            factor: C64::from_polar(norm, angle),
                        });
                    }
                    out
                }
            }
        }
        ElementKind::PhotonSource { .. } => return Err(illegal()),
    })
}
