//! The commands, as functions from resolved scenarios to result documents.

use dfsnet_core::logical::{conditioned_map, logical_amplitudes, register_from_logical, Encoding};
use dfsnet_core::network::{self, NetworkGraph, SwitchSchedule, DH, DV};
use dfsnet_core::noise_timing::{
    apply_boundary_dephasing, gate_time, validate_regime, GateKind, McPrepared, McSummary, NoiseParams,
    NoiseRealization, TrialResult,
};
use dfsnet_core::oracle::{enumerate_logical_map_with, global_phase_deviation, standard_target, Target};
use dfsnet_core::protocols::{logical_hadamard, CpGate, Herald};
use dfsnet_core::qstate::{fidelity_up_to_global_phase, RegisterState, C64};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::CliError;
use crate::results::*;
use crate::scenario::{ModeSpec, ProtocolSpec, Resolved, Scenario};

pub const DEFAULT_TRIALS: u64 = 1000;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 64;
/// Engine vs oracle tolerance.
pub const ORACLE_TOL: f64 = 1e-10;

/// Run settings after merging the scenario with command-line flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub mode: ModeSpec,
    pub seed: Option<u64>,
    pub trials: Option<u64>,
    pub max_attempts: u32,
}

impl RunOptions {
    pub fn from_scenario(sc: &Scenario) -> Self {
        RunOptions {
            mode: sc.mode.unwrap_or(ModeSpec::Exact),
            seed: sc.seed,
            trials: sc.trials,
            max_attempts: sc.max_attempts.unwrap_or(DEFAULT_MAX_ATTEMPTS),
        }
    }

    fn seed_for(&self, what: &str) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::config(format!("{what} needs a seed (scenario \"seed\" or --seed)")))
    }
}

pub fn encoding_name(e: Encoding) -> &'static str {
    match e {
        Encoding::Dfs => "dfs",
        Encoding::Bare => "bare",
    }
}

pub fn herald_name(h: Herald) -> String {
    match h {
        Herald::DvSuccess => "Dv-success".into(),
        Herald::DhIdentity => "Dh-identity".into(),
        Herald::NoClickLoss => "NoClick-loss".into(),
        Herald::DarkFalse { apparent: DV } => "DarkFalse-Dv".into(),
        Herald::DarkFalse { apparent: DH } => "DarkFalse-Dh".into(),
        Herald::DarkFalse { apparent } => format!("DarkFalse-{apparent}"),
    }
}

/// Drops rounding noise below zero.
fn clean(p: f64) -> f64 {
    if p > 0.0 {
        p
    } else {
        0.0
    }
}

fn has_stochastic_noise(n: &NoiseParams) -> bool {
    n.dephasing_sigma > 0.0 || n.path_jitter_sigma > 0.0 || n.dark_rate > 0.0
}

/// Loss and scattering error need no sampling.
fn fixed_realization(r: &Resolved) -> Option<NoiseRealization> {
    if r.noise.loss_per_element == 0.0 && r.noise.scattering_phase_error == 0.0 {
        return None;
    }
    let mut real = NoiseRealization::trivial(r.graph.node_count());
    real.loss_per_element = r.noise.loss_per_element;
    real.scattering_phase_error = r.noise.scattering_phase_error;
    Some(real)
}

/// `state` with `−1` on every term whose participants are all logical 1.
fn cpz_target(state: &RegisterState, participants: &[usize], enc: Encoding) -> Result<RegisterState, CliError> {
    let terms: Vec<_> = state
        .iter()
        .map(|(k, a)| {
            let all = participants.iter().all(|&p| enc.decode(k.pair(p)) == Some(true));
            (k, if all { -a } else { a })
        })
        .collect();
    Ok(RegisterState::from_amplitudes(state.node_count(), terms)?)
}

fn readout_rows(state: &RegisterState, nodes: &[usize], enc: Encoding) -> Result<Vec<ReadoutRow>, CliError> {
    nodes
        .iter()
        .map(|&node| {
            let w = state.pair_weights(node)?;
            let total: f64 = w.iter().sum();
            let p0 = w[enc.pair(false) as usize] / total;
            let p1 = w[enc.pair(true) as usize] / total;
            Ok(ReadoutRow {
                node,
                p_zero: p0,
                p_one: p1,
                p_leak: (1.0 - p0 - p1).max(0.0),
            })
        })
        .collect()
}

fn logical_out(state: &RegisterState, participants: &[usize], enc: Encoding) -> Option<Vec<Cplx>> {
    let amps = logical_amplitudes(state, participants, enc).ok()?;
    let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    // weight outside the logical subspace means the projection is partial
    if (norm - state.norm_sqr()).abs() > 1e-9 {
        return None;
    }
    Some(amps.into_iter().map(cplx).collect())
}

fn op_time(r: &Resolved) -> Option<f64> {
    let k = match r.protocol {
        ProtocolSpec::Cpz => GateKind::Cpn(r.participants.len()),
        ProtocolSpec::Toffoli { .. } => {
            let h = gate_time(GateKind::Hadamard, &r.timing).ok()?;
            return Some(2.0 * h + gate_time(GateKind::Cpn(3), &r.timing).ok()?);
        }
        ProtocolSpec::Hadamard { .. } => GateKind::Hadamard,
        ProtocolSpec::Readout { .. } => return None,
    };
    gate_time(k, &r.timing).ok()
}

fn monte_carlo(prep: &McPrepared, trials: u64, seed: u64) -> Result<McSummary, CliError> {
    if trials == 0 {
        return Err(CliError::config("trials must be at least 1"));
    }
    let results = (0..trials)
        .into_par_iter()
        .map(|t| prep.trial(seed, t))
        .collect::<Result<Vec<TrialResult>, _>>()?;
    Ok(McSummary::from_trials(&results))
}

fn mc_report(s: &McSummary, seed: u64) -> MonteCarloReport {
    MonteCarloReport {
        trials: s.trials,
        seed,
        success_prob: s.success_prob,
        success_stderr: s.success_stderr,
        fidelity_mean: s.fidelity_mean,
        fidelity_stderr: s.fidelity_stderr,
        mean_attempts: s.mean_attempts,
        attempt_histogram: s.attempt_histogram.clone(),
    }
}

fn require_dfs(r: &Resolved) -> Result<(), CliError> {
    if r.encoding != Encoding::Dfs {
        return Err(CliError::config(format!(
            "op {:?} needs the dfs encoding",
            r.protocol.name()
        )));
    }
    Ok(())
}

pub fn simulate(r: &Resolved, opts: &RunOptions) -> Result<SimulateResult, CliError> {
    let mut out = SimulateResult {
        op: r.protocol.name().into(),
        mode: match opts.mode {
            ModeSpec::Exact => "exact".into(),
            ModeSpec::Sampled => "sampled".into(),
        },
        nodes: r.graph.node_count(),
        participants: r.participants.clone(),
        entry: r.entry,
        encoding: encoding_name(r.encoding).into(),
        probabilities: None,
        herald: None,
        attempts: None,
        history: Vec::new(),
        exhausted: false,
        fidelity_vs_target: None,
        output_logical: None,
        readout: Vec::new(),
        measured: None,
        monte_carlo: None,
        gate_time_s: op_time(r),
        warnings: validate_regime(&r.timing).iter().map(|w| w.to_string()).collect(),
    };
    match r.protocol {
        ProtocolSpec::Cpz => gate_run(r, opts, None, &mut out)?,
        ProtocolSpec::Toffoli { target, .. } => {
            require_dfs(r)?;
            gate_run(r, opts, Some(target), &mut out)?
        }
        ProtocolSpec::Hadamard { node } => {
            require_dfs(r)?;
            let mut st = r.input.clone();
            logical_hadamard(&mut st, node)?;
            out.readout = readout_rows(&st, &[node], r.encoding)?;
            out.output_logical = logical_out(&st, &r.participants, r.encoding);
        }
        ProtocolSpec::Readout { node } => {
            out.readout = readout_rows(&r.input, &[node], r.encoding)?;
            if opts.mode == ModeSpec::Sampled {
                let seed = opts.seed_for("sampled mode")?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                out.measured = Some(sample_readout(&r.input, node, r.encoding, &mut rng)?);
            }
        }
    }
    Ok(out)
}

fn sample_readout(state: &RegisterState, node: usize, enc: Encoding, rng: &mut ChaCha8Rng) -> Result<String, CliError> {
    let w = state.pair_weights(node)?;
    let total: f64 = w.iter().sum();
    let mut x = rng.random::<f64>() * total;
    let mut pair = 3u8;
    for (p, &wp) in w.iter().enumerate() {
        if wp > 0.0 && x < wp {
            pair = p as u8;
            break;
        }
        x -= wp;
    }
    Ok(match enc.decode(pair) {
        Some(false) => "zero".into(),
        Some(true) => "one".into(),
        None => format!("leak-{:02b}", pair),
    })
}

/// `CPZ`, or `H_t · CPZ · H_t` when `hadamard_on` names a Toffoli target.
fn gate_run(
    r: &Resolved,
    opts: &RunOptions,
    hadamard_on: Option<usize>,
    out: &mut SimulateResult,
) -> Result<(), CliError> {
    let gate = CpGate::from_parts(&r.graph, &r.schedule, r.encoding)?.with_photon(r.photon);
    let mut input = r.input.clone();
    if let Some(t) = hadamard_on {
        logical_hadamard(&mut input, t)?;
    }
    // comparing before the final Hadamard gives the same fidelity
    let pre_target = cpz_target(&input, &r.participants, r.encoding)?;
    let finish = |mut st: RegisterState| -> Result<RegisterState, CliError> {
        if let Some(t) = hadamard_on {
            logical_hadamard(&mut st, t)?;
        }
        Ok(st)
    };

    let fixed = fixed_realization(r);
    let b = gate.branches(&input, fixed.as_ref())?;
    out.probabilities = Some(Probabilities {
        dh: b.p_dh,
        dv: b.p_dv,
        no_click: clean(b.p_no_click),
    });
    let stochastic = has_stochastic_noise(&r.noise);

    match opts.mode {
        ModeSpec::Exact => {
            out.herald = Some(herald_name(Herald::DvSuccess));
            out.attempts = Some(1);
            match (&b.dv_joint, b.dv_state()) {
                (Some(j), post) => {
                    out.fidelity_vs_target = Some(j.register_fidelity(&pre_target)?);
                    if let Some(post) = post {
                        let post = finish(post)?;
                        out.readout = readout_rows(&post, &r.participants, r.encoding)?;
                        out.output_logical = logical_out(&post, &r.participants, r.encoding);
                    }
                }
                (None, _) => out.warnings.push("Dv never clicks for this input".into()),
            }
            if stochastic {
                out.warnings.push(
                    "exact probabilities include only loss and scattering error; sampled noise is summarized under monte_carlo"
                        .into(),
                );
                let seed = opts.seed_for("stochastic noise")?;
                match r.mc_scenario() {
                    Ok(mc) => {
                        let prep = McPrepared::new(&mc, &r.noise)?;
                        let trials = opts.trials.unwrap_or(DEFAULT_TRIALS);
                        out.monte_carlo = Some(mc_report(&monte_carlo(&prep, trials, seed)?, seed));
                    }
                    Err(e) => out.warnings.push(format!("no Monte Carlo summary: {e}")),
                }
            }
        }
        ModeSpec::Sampled => {
            let seed = opts.seed_for("sampled mode")?;
            if opts.max_attempts == 0 {
                return Err(CliError::config("max_attempts must be at least 1"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = r.graph.node_count();
            let noisy = r.is_noisy();
            let mut current = input;
            let mut last = None;
            for attempt in 1..=opts.max_attempts {
                let real = if noisy {
                    Some(NoiseRealization::draw(&r.noise, n, &mut rng)?)
                } else {
                    None
                };
                if let Some(re) = &real {
                    apply_boundary_dephasing(&mut current, re)?;
                }
                let o = gate.sample(&current, real.as_ref(), &mut rng)?;
                out.history.push(AttemptRecord {
                    which: herald_name(o.which),
                    probability: o.probability,
                });
                current = o.post_state;
                last = Some(o.which);
                out.attempts = Some(attempt);
                if matches!(o.which, Herald::DvSuccess | Herald::DarkFalse { apparent: DV }) {
                    break;
                }
            }
            let which = last.expect("at least one attempt");
            out.herald = Some(herald_name(which));
            out.exhausted = !matches!(which, Herald::DvSuccess | Herald::DarkFalse { apparent: DV });
            if !out.exhausted {
                out.fidelity_vs_target = Some(fidelity_up_to_global_phase(&current, &pre_target)?);
            }
            let post = finish(current)?;
            out.readout = readout_rows(&post, &r.participants, r.encoding)?;
            out.output_logical = logical_out(&post, &r.participants, r.encoding);
        }
    }
    Ok(())
}

/// One row per logical basis input, conditioned on `Dv`.
pub fn truth_table(r: &Resolved) -> Result<TruthTable, CliError> {
    let hadamard_on = match r.protocol {
        ProtocolSpec::Cpz => None,
        ProtocolSpec::Toffoli { target, .. } => {
            require_dfs(r)?;
            Some(target)
        }
        _ => return Err(CliError::config("truth-table needs protocol op \"cpz\" or \"toffoli\"")),
    };
    let n = r.graph.node_count();
    let s = &r.participants;
    let k = s.len();
    let dim = 1usize << k;
    let gate = CpGate::from_parts(&r.graph, &r.schedule, r.encoding)?.with_photon(r.photon);
    let fixed = fixed_realization(r);
    let zero = C64::new(0.0, 0.0);

    let mut columns = Vec::with_capacity(dim);
    for m in 0..dim {
        let mut e = vec![zero; dim];
        e[m] = C64::new(1.0, 0.0);
        let mut input = register_from_logical(n, s, &e, r.encoding)?;
        if let Some(t) = hadamard_on {
            logical_hadamard(&mut input, t)?;
        }
        let b = gate.branches(&input, fixed.as_ref())?;
        let col = match b.dv_state() {
            Some(mut post) => {
                if let Some(t) = hadamard_on {
                    logical_hadamard(&mut post, t)?;
                }
                logical_amplitudes(&post, s, r.encoding)?
            }
            None => vec![zero; dim],
        };
        columns.push((b.p_dv, b.p_dh, col));
    }

    let peak = |col: &[C64]| -> Option<(usize, f64)> {
        let total: f64 = col.iter().map(|a| a.norm_sqr()).sum();
        if total <= 0.0 {
            return None;
        }
        let (i, a) = col
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.norm_sqr().total_cmp(&y.1.norm_sqr()))?;
        Some((i, a.norm_sqr() / total))
    };
    let reference = peak(&columns[0].2).map(|(i, _)| {
        let a = columns[0].2[i];
        a / a.norm()
    });

    let rows = columns
        .iter()
        .enumerate()
        .map(|(m, (p_dv, p_dh, col))| {
            let (output, output_prob, rel) = match (peak(col), reference) {
                (Some((i, p)), Some(r0)) => (format!("{i:0k$b}"), p, col[i] / col[i].norm() / r0),
                _ => (String::new(), 0.0, C64::new(f64::NAN, 0.0)),
            };
            TruthRow {
                input: format!("{m:0k$b}"),
                p_dv: *p_dv,
                p_dh: *p_dh,
                output,
                output_prob,
                sign: rel.re,
                phase_over_pi: rel.arg() / std::f64::consts::PI,
            }
        })
        .collect();
    Ok(TruthTable {
        op: r.protocol.name().into(),
        nodes: n,
        participants: s.clone(),
        encoding: encoding_name(r.encoding).into(),
        rows,
    })
}

/// Monte Carlo at each value of one noise or timing knob. All values share
/// the seed, so trial `t` sees the same random stream at every value.
pub fn sweep(base: &Scenario, parameter: &str, values: &[f64], trials: u64, seed: u64) -> Result<SweepReport, CliError> {
    if values.is_empty() {
        return Err(CliError::config("sweep needs at least one value"));
    }
    if trials == 0 {
        return Err(CliError::config("trials must be at least 1"));
    }
    let preps = values
        .iter()
        .map(|&v| {
            let r = base.with_parameter(parameter, v)?.resolve()?;
            Ok(McPrepared::new(&r.mc_scenario()?, &r.noise)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let pairs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|i| (0..trials).map(move |t| (i, t)))
        .collect();
    let results = pairs
        .par_iter()
        .map(|&(i, t)| preps[i].trial(seed, t))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = results
        .chunks(trials as usize)
        .zip(values)
        .map(|(chunk, &value)| {
            let s = McSummary::from_trials(chunk);
            SweepRow {
                parameter: parameter.into(),
                value,
                success_prob: s.success_prob,
                fidelity_mean: s.fidelity_mean,
                fidelity_stderr: s.fidelity_stderr,
                trials: s.trials,
            }
        })
        .collect();
    Ok(SweepReport {
        parameter: parameter.into(),
        seed,
        rows,
    })
}

pub fn timing(sc: &Scenario) -> Result<TimingReport, CliError> {
    let t = sc.timing_params()?;
    let mut rows = vec![("T", t.pulse()?)];
    for (name, kind) in [
        ("CPF", GateKind::Cpf),
        ("H", GateKind::Hadamard),
        ("CP3", GateKind::Cpn(3)),
        ("CP4", GateKind::Cpn(4)),
        ("CP5", GateKind::Cpn(5)),
    ] {
        rows.push((name, gate_time(kind, &t)?));
    }
    Ok(TimingReport {
        kappa_over_2pi: t.kappa_over_2pi,
        g_over_2pi: t.g_over_2pi,
        gamma_over_2pi: t.gamma_over_2pi,
        kappa_t: t.kappa_t,
        rows: rows
            .into_iter()
            .map(|(g, s)| TimingRow {
                gate: g.into(),
                seconds: s,
                microseconds: s * 1e6,
            })
            .collect(),
        warnings: validate_regime(&t).iter().map(|w| w.to_string()).collect(),
    })
}

/// Every non-empty participant set of an `n`-node ring, in ring order and
/// rotated to start at each member in turn.
pub fn ring_cases(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 1u64..(1 << n) {
        let s: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        for r in 0..s.len() {
            let mut rot = s.clone();
            rot.rotate_left(r);
            out.push(rot);
        }
    }
    out
}

fn check_nodes(max_nodes: usize) -> Result<(), CliError> {
    // 2^n subsets each; keep the exhaustive sweeps to desk scale
    if !(1..=8).contains(&max_nodes) {
        return Err(CliError::config(format!("--nodes must be in 1..=8, got {max_nodes}")));
    }
    Ok(())
}

fn validate_case(graph: &NetworkGraph, schedule: &SwitchSchedule) -> ValidateCase {
    let res = network::validate_equal_arrival(graph, schedule);
    ValidateCase {
        nodes: graph.node_count(),
        participants: schedule.participants().to_vec(),
        entry: schedule.entry(),
        ok: res.is_ok(),
        arrival_tick: res.as_ref().ok().copied(),
        error: res.err().map(|e| e.to_string()),
    }
}

fn validate_report(cases: Vec<ValidateCase>) -> ValidateReport {
    let passed = cases.iter().filter(|c| c.ok).count();
    ValidateReport {
        passed,
        failed: cases.len() - passed,
        cases,
    }
}

/// Equal-arrival check of every compiled schedule on rings of
/// `1..=max_nodes` nodes.
pub fn validate_all(max_nodes: usize) -> Result<ValidateReport, CliError> {
    check_nodes(max_nodes)?;
    let graphs = (1..=max_nodes)
        .map(network::build_ring_network)
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, Vec<usize>)> = (1..=max_nodes)
        .flat_map(|n| ring_cases(n).into_iter().map(move |s| (n, s)))
        .collect();
    let cases = jobs
        .par_iter()
        .map(|(n, s)| {
            let g = &graphs[n - 1];
            match network::compile_schedule(g, s, s[0]) {
                Ok(sched) => validate_case(g, &sched),
                Err(e) => ValidateCase {
                    nodes: *n,
                    participants: s.clone(),
                    entry: s[0],
                    ok: false,
                    arrival_tick: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(validate_report(cases))
}

pub fn validate_resolved(r: &Resolved) -> ValidateReport {
    validate_report(vec![validate_case(&r.graph, &r.schedule)])
}

fn rows_of(m: &DMatrix<C64>) -> Vec<Vec<Cplx>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| cplx(m[(i, j)])).collect())
        .collect()
}

fn oracle_case(
    graph: &NetworkGraph,
    schedule: &SwitchSchedule,
    enc: Encoding,
    check_target: bool,
    tol: f64,
    matrices: Option<&mut Vec<OracleMatrices>>,
) -> OracleCase {
    let mut case = OracleCase {
        nodes: graph.node_count(),
        participants: schedule.participants().to_vec(),
        entry: schedule.entry(),
        encoding: encoding_name(enc).into(),
        ok: false,
        dh_deviation: None,
        dv_deviation: None,
        target_deviation: None,
        error: None,
    };
    let maps = conditioned_map(graph, schedule, enc, None)
        .map_err(|e| e.to_string())
        .and_then(|e| {
            enumerate_logical_map_with(graph, schedule, enc)
                .map(|o| (e, o))
                .map_err(|e| e.to_string())
        });
    let (engine, oracle) = match maps {
        Ok(m) => m,
        Err(e) => {
            case.error = Some(e);
            return case;
        }
    };
    let dim = engine.dim();
    let empty = DMatrix::<C64>::zeros(dim, dim);
    let dev = |d: u32| {
        global_phase_deviation(engine.get(d).unwrap_or(&empty), oracle.get(d).unwrap_or(&empty)).unwrap_or(f64::INFINITY)
    };
    case.dh_deviation = Some(dev(DH));
    case.dv_deviation = Some(dev(DV));
    let mut ok = dev(DH) <= tol && dev(DV) <= tol;
    if check_target {
        let k = schedule.participants().len();
        let want = standard_target(Target::Cpz(k)) * C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let t = global_phase_deviation(oracle.get(DV).unwrap_or(&empty), &want).unwrap_or(f64::INFINITY);
        case.target_deviation = Some(t);
        ok &= t <= tol;
    }
    case.ok = ok;
    if let Some(out) = matrices {
        for (d, name) in [(DH, "Dh"), (DV, "Dv")] {
            out.push(OracleMatrices {
                detector: name.into(),
                engine: rows_of(engine.get(d).unwrap_or(&empty)),
                oracle: rows_of(oracle.get(d).unwrap_or(&empty)),
            });
        }
    }
    case
}

fn oracle_report(cases: Vec<OracleCase>, matrices: Vec<OracleMatrices>, tol: f64) -> OracleCheckReport {
    let passed = cases.iter().filter(|c| c.ok).count();
    let max_deviation = cases
        .iter()
        .flat_map(|c| [c.dh_deviation, c.dv_deviation, c.target_deviation])
        .flatten()
        .fold(0.0, f64::max);
    OracleCheckReport {
        tolerance: tol,
        passed,
        failed: cases.len() - passed,
        max_deviation,
        cases,
        matrices,
    }
}

/// Engine vs oracle on every compiled schedule of rings up to `max_nodes`.
pub fn oracle_check_all(max_nodes: usize, encodings: &[Encoding]) -> Result<OracleCheckReport, CliError> {
    check_nodes(max_nodes)?;
    let graphs = (1..=max_nodes)
        .map(network::build_ring_network)
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, Vec<usize>, Encoding)> = (1..=max_nodes)
        .flat_map(|n| ring_cases(n).into_iter().map(move |s| (n, s)))
        .flat_map(|(n, s)| encodings.iter().map(move |&e| (n, s.clone(), e)))
        .collect();
    let cases = jobs
        .par_iter()
        .map(|(n, s, enc)| {
            let g = &graphs[n - 1];
            match network::compile_schedule_with(g, s, s[0], enc.hook_style()) {
                Ok(sched) => oracle_case(g, &sched, *enc, true, ORACLE_TOL, None),
                Err(e) => OracleCase {
                    nodes: *n,
                    participants: s.clone(),
                    entry: s[0],
                    encoding: encoding_name(*enc).into(),
                    ok: false,
                    dh_deviation: None,
                    dv_deviation: None,
                    target_deviation: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(oracle_report(cases, Vec::new(), ORACLE_TOL))
}

/// Engine vs oracle for one scenario, with both maps included.
pub fn oracle_check_resolved(r: &Resolved) -> OracleCheckReport {
    let mut matrices = Vec::new();
    let check_target = r.scenario.schedule_overrides.is_empty();
    let case = oracle_case(&r.graph, &r.schedule, r.encoding, check_target, ORACLE_TOL, Some(&mut matrices));
    oracle_report(vec![case], matrices, ORACLE_TOL)
}
