use dfsnet_core::logical::{logical_amplitudes, register_from_logical, Encoding};
use dfsnet_core::network::build_ring_network;
use dfsnet_core::noise_timing::NoiseParams;
use dfsnet_core::oracle::{standard_target, Target};
use dfsnet_core::protocols::{
    leakage, readout_logical, repeat_gate, repeat_until_success, toffoli, toffoli_exact, CpGate, Herald, ProtocolError,
    ReadoutValue,
};
use dfsnet_core::qstate::{fidelity_up_to_global_phase, AtomString, RegisterState, C64};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_amps(rng: &mut ChaCha8Rng, dim: usize) -> Vec<C64> {
    let v: Vec<C64> = (0..dim)
        .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / norm).collect()
}

fn cpz_applied(amps: &[C64]) -> Vec<C64> {
    let mut out = amps.to_vec();
    let last = out.len() - 1;
    out[last] = -out[last];
    out
}

#[test]
fn heralds_are_sound() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (n, s) in [(3usize, vec![0usize, 1, 2]), (4, vec![1, 3]), (5, vec![4, 0, 2, 3]), (2, vec![1])] {
        let g = build_ring_network(n).unwrap();
        let gate = CpGate::new(&g, &s, s[0], Encoding::Dfs).unwrap();
        for _ in 0..10 {
            let amps = random_amps(&mut rng, 1 << s.len());
            let input = register_from_logical(n, &s, &amps, Encoding::Dfs).unwrap();
            let target = register_from_logical(n, &s, &cpz_applied(&amps), Encoding::Dfs).unwrap();
            let b = gate.branches(&input, None).unwrap();
            assert!((b.p_dv - 0.5).abs() < 1e-12 && (b.p_dh - 0.5).abs() < 1e-12);
            assert!(b.p_no_click.abs() < 1e-12);
            let dh = b.dh_state().unwrap();
            let dv = b.dv_state().unwrap();
            assert!((fidelity_up_to_global_phase(&dh, &input).unwrap() - 1.0).abs() < 1e-12);
            assert!((fidelity_up_to_global_phase(&dv, &target).unwrap() - 1.0).abs() < 1e-12);
            for &node in &s {
                assert!(leakage(&dh, node, Encoding::Dfs).unwrap() < 1e-10);
                assert!(leakage(&dv, node, Encoding::Dfs).unwrap() < 1e-10);
            }
        }
    }
}

#[test]
fn sampled_gate_reports_its_branch() {
    let g = build_ring_network(3).unwrap();
    let s = [0, 1, 2];
    let gate = CpGate::new(&g, &s, 0, Encoding::Dfs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let amps = random_amps(&mut rng, 8);
    let input = register_from_logical(3, &s, &amps, Encoding::Dfs).unwrap();
    let target = register_from_logical(3, &s, &cpz_applied(&amps), Encoding::Dfs).unwrap();
    let mut seen = [0; 2];
    for _ in 0..200 {
        let out = gate.sample(&input, None, &mut rng).unwrap();
        assert!((out.probability - 0.5).abs() < 1e-12);
        let want = match out.which {
            Herald::DvSuccess => {
                seen[0] += 1;
                &target
            }
            Herald::DhIdentity => {
                seen[1] += 1;
                &input
            }
            other => panic!("unexpected herald {other:?}"),
        };
        assert!((out.post_state.fidelity(want).unwrap() - 1.0).abs() < 1e-12);
    }
    assert!(seen[0] > 60 && seen[1] > 60, "{seen:?}");
}

#[test]
fn leaked_input_is_rejected() {
    let g = build_ring_network(2).unwrap();
    let gate = CpGate::new(&g, &[0, 1], 0, Encoding::Dfs).unwrap();
    let reg = RegisterState::basis(2, AtomString::from_pairs(&[(1, 1), (1, 0)])).unwrap();
    assert!(matches!(gate.branches(&reg, None), Err(ProtocolError::Leakage { .. })));
}

fn toffoli_matrix_column(col: usize) -> DVector<C64> {
    standard_target(Target::Toffoli).column(col).into_owned()
}

#[test]
fn toffoli_truth_table() {
    let g = build_ring_network(3).unwrap();
    let s = [0, 1, 2];
    for m in 0..8 {
        let mut amps = vec![C64::new(0.0, 0.0); 8];
        amps[m] = C64::new(1.0, 0.0);
        let input = register_from_logical(3, &s, &amps, Encoding::Dfs).unwrap();
        let (p, post) = toffoli_exact(&input, &g, (0, 1), 2).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        let out = logical_amplitudes(&post, &s, Encoding::Dfs).unwrap();
        let want = toffoli_matrix_column(m);
        let overlap: C64 = want.iter().zip(&out).map(|(w, o)| w.conj() * o).sum();
        assert!((overlap.norm_sqr() - 1.0).abs() < 1e-10, "input {m:03b}");
    }
}

#[test]
fn toffoli_on_superpositions() {
    let g = build_ring_network(3).unwrap();
    let s = [0, 1, 2];
    let t = standard_target(Target::Toffoli);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let amps = random_amps(&mut rng, 8);
        let input = register_from_logical(3, &s, &amps, Encoding::Dfs).unwrap();
        let want = &t * DVector::from_vec(amps.clone());
        let target = register_from_logical(3, &s, want.as_slice(), Encoding::Dfs).unwrap();
        let (_, post) = toffoli_exact(&input, &g, (0, 1), 2).unwrap();
        assert!((fidelity_up_to_global_phase(&post, &target).unwrap() - 1.0).abs() < 1e-10);
        let sampled = toffoli(&input, &g, (0, 1), 2, 64, &mut rng).unwrap();
        assert!((fidelity_up_to_global_phase(&sampled.post_state, &target).unwrap() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn toffoli_examples() {
    let g = build_ring_network(3).unwrap();
    let s = [0, 1, 2];
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let basis = |m: usize| {
        let mut a = vec![C64::new(0.0, 0.0); 8];
        a[m] = C64::new(1.0, 0.0);
        register_from_logical(3, &s, &a, Encoding::Dfs).unwrap()
    };
    let (_, out) = toffoli_exact(&basis(0b110), &g, (0, 1), 2).unwrap();
    assert!((out.fidelity(&basis(0b111)).unwrap() - 1.0).abs() < 1e-12);
    let (_, out) = toffoli_exact(&basis(0b011), &g, (0, 1), 2).unwrap();
    assert!((out.fidelity(&basis(0b011)).unwrap() - 1.0).abs() < 1e-12);
    let mut a = vec![C64::new(0.0, 0.0); 8];
    a[0b110] = C64::new(h, 0.0);
    a[0b111] = C64::new(h, 0.0);
    let plus = register_from_logical(3, &s, &a, Encoding::Dfs).unwrap();
    let (_, out) = toffoli_exact(&plus, &g, (0, 1), 2).unwrap();
    assert!((out.fidelity(&plus).unwrap() - 1.0).abs() < 1e-12);
    // readout after the flip is deterministic
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let flipped = toffoli(&basis(0b110), &g, (0, 1), 2, 64, &mut rng).unwrap();
    let (v, p, _) = readout_logical(&flipped.post_state, 2, &mut rng).unwrap();
    assert_eq!((v, p), (ReadoutValue::One, 1.0));
    assert!(matches!(
        toffoli(&basis(0), &g, (0, 0), 2, 4, &mut rng),
        Err(ProtocolError::NotDistinct(_))
    ));
}

#[test]
fn toffoli_target_can_sit_between_controls() {
    let g = build_ring_network(4).unwrap();
    // controls 3 and 0, target 1: flip node 1 iff nodes 3 and 0 are 1̃
    let s = [0, 1, 3];
    for m in 0..8usize {
        let mut a = vec![C64::new(0.0, 0.0); 8];
        a[m] = C64::new(1.0, 0.0);
        let input = register_from_logical(4, &s, &a, Encoding::Dfs).unwrap();
        let (_, post) = toffoli_exact(&input, &g, (3, 0), 1).unwrap();
        let want = if m & 0b101 == 0b101 { m ^ 0b010 } else { m };
        let mut b = vec![C64::new(0.0, 0.0); 8];
        b[want] = C64::new(1.0, 0.0);
        let target = register_from_logical(4, &s, &b, Encoding::Dfs).unwrap();
        assert!((post.fidelity(&target).unwrap() - 1.0).abs() < 1e-12, "{m:03b}");
    }
}

#[test]
fn attempt_history_is_recorded() {
    let g = build_ring_network(2).unwrap();
    let gate = CpGate::new(&g, &[0, 1], 0, Encoding::Dfs).unwrap();
    let input = register_from_logical(2, &[0, 1], &random_amps(&mut ChaCha8Rng::seed_from_u64(1), 4), Encoding::Dfs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let out = repeat_gate(&gate, &input, 100, None, &mut rng).unwrap();
        assert_eq!(out.history.len() as u32, out.attempts_used);
        assert_eq!(out.history.last().unwrap().0, Herald::DvSuccess);
        assert!(out.history[..out.history.len() - 1].iter().all(|h| h.0 == Herald::DhIdentity));
    }
}

#[test]
fn repeat_until_success_averages_two_attempts() {
    let g = build_ring_network(3).unwrap();
    let s = [0, 1, 2];
    let gate = CpGate::new(&g, &s, 0, Encoding::Dfs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let amps = random_amps(&mut rng, 8);
    let input = register_from_logical(3, &s, &amps, Encoding::Dfs).unwrap();
    let trials = 10_000;
    let mut total = 0u64;
    for _ in 0..trials {
        total += u64::from(repeat_gate(&gate, &input, 200, None, &mut rng).unwrap().attempts_used);
    }
    let mean = total as f64 / trials as f64;
    assert!((mean - 2.0).abs() < 0.1, "{mean}");
}

#[test]
fn exhaustion_keeps_the_identity_state() {
    let g = build_ring_network(2).unwrap();
    let s = [0, 1];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let amps = random_amps(&mut rng, 4);
    let input = register_from_logical(2, &s, &amps, Encoding::Dfs).unwrap();
    let mut exhausted = 0;
    for _ in 0..100 {
        match repeat_until_success(&input, &g, &s, 0, 1, None, &mut rng) {
            Ok(out) => assert_eq!(out.which, Herald::DvSuccess),
            Err(ProtocolError::Exhausted { attempts, last }) => {
                assert_eq!(attempts, 1);
                assert_eq!(last.which, Herald::DhIdentity);
                assert!((last.post_state.fidelity(&input).unwrap() - 1.0).abs() < 1e-12);
                exhausted += 1;
            }
            Err(e) => panic!("{e}"),
        }
    }
    assert!(exhausted > 20);
    assert!(matches!(
        repeat_until_success(&input, &g, &s, 0, 0, None, &mut rng),
        Err(ProtocolError::NoAttempts)
    ));
}

#[test]
fn loss_leaves_dv_exact_but_no_click_can_carry_a_phase() {
    let g = build_ring_network(3).unwrap();
    let s = [0, 1, 2];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let amps = random_amps(&mut rng, 8);
    let input = register_from_logical(3, &s, &amps, Encoding::Dfs).unwrap();
    let target = register_from_logical(3, &s, &cpz_applied(&amps), Encoding::Dfs).unwrap();
    let noise = NoiseParams {
        loss_per_element: 0.02,
        ..NoiseParams::default()
    };
    let gate = CpGate::new(&g, &s, 0, Encoding::Dfs).unwrap();
    let real = dfsnet_core::noise_timing::NoiseRealization::draw(&noise, 3, &mut rng).unwrap();
    let b = gate.branches(&input, Some(&real)).unwrap();
    assert!(b.p_no_click > 0.1);
    assert!((fidelity_up_to_global_phase(&b.dv_state().unwrap(), &target).unwrap() - 1.0).abs() < 1e-12);
    // a photon lost after scattering has already marked the register
    let f = b.no_click_joint.as_ref().unwrap().register_fidelity(&input).unwrap();
    assert!(f < 0.99 && f > 0.0, "{f}");

    // retries therefore succeed on whatever state the losses left behind
    let mut attempts = 0;
    let mut damaged = 0;
    for _ in 0..200 {
        let out = repeat_gate(&gate, &input, 10_000, Some(&noise), &mut rng).unwrap();
        assert_eq!(out.which, Herald::DvSuccess);
        attempts += out.attempts_used;
        if fidelity_up_to_global_phase(&out.post_state, &target).unwrap() < 1.0 - 1e-9 {
            damaged += 1;
            assert!(out.attempts_used > 1);
        }
    }
    assert!(attempts > 400);
    assert!(damaged > 0);
}

#[test]
fn readout_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let zero = RegisterState::basis(1, AtomString(0b01)).unwrap();
    let (v, p, _) = readout_logical(&zero, 0, &mut rng).unwrap();
    assert_eq!((v, p), (ReadoutValue::Zero, 1.0));
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let plus = RegisterState::from_amplitudes(1, [(AtomString(0b01), C64::new(h, 0.0)), (AtomString(0b10), C64::new(h, 0.0))]).unwrap();
    let mut ones = 0;
    for _ in 0..2000 {
        let (v, p, post) = readout_logical(&plus, 0, &mut rng).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        if v == ReadoutValue::One {
            ones += 1;
            assert_eq!(post.amplitude(AtomString(0b10)).norm(), 1.0);
        }
    }
    assert!((ones as f64 - 1000.0).abs() < 150.0);
    let leak = RegisterState::basis(1, AtomString(0b11)).unwrap();
    assert_eq!(readout_logical(&leak, 0, &mut rng).unwrap().0, ReadoutValue::Leak11);
}
