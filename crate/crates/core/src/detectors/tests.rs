use super::*;
use crate::channel::{
    apply_channel, sample_channel, ChannelProfile, DdPath, DiscreteChannel, SubChannel,
};
use crate::grid_modem::ModemParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Frame {
    ch: DiscreteChannel,
    x: DdGrid,
    s: TimeSequence,
    r: TimeSequence,
}

fn desk_params() -> ModemParams {
    ModemParams::new(64, 16, 8.333e-6, 8).unwrap()
}

fn eva_desk(p: &ModemParams) -> ChannelProfile {
    ChannelProfile::eva(p.delay_resolution(), 3)
        .unwrap()
        .truncated(9)
        .unwrap()
}

fn random_frame(
    p: ModemParams,
    layout: &FrameLayout,
    alphabet: &Constellation,
    sigma_z2: f64,
    rng: &mut ChaCha8Rng,
) -> Frame {
    let ch = sample_channel(&eva_desk(&p), &p, rng).unwrap();
    let data: Vec<_> = (0..layout.n_data())
        .map(|_| alphabet.points()[rng.random_range(0..alphabet.order())])
        .collect();
    let x = layout.build_frame(&data).unwrap();
    let s = dd_to_time(&x).unwrap();
    let r = apply_channel(&ch, &s, sigma_z2.sqrt(), rng).unwrap();
    Frame { ch, x, s, r }
}

#[test]
fn kind_names_round_trip() {
    for k in DetectorKind::ALL {
        assert_eq!(k.name().parse::<DetectorKind>().unwrap(), k);
    }
    assert!("mpa".parse::<DetectorKind>().is_err());
}

#[test]
fn config_validation() {
    let a = Constellation::qam(4).unwrap();
    let mut cfg = DetectorConfig::new(DetectorKind::MrcSd, 5);
    assert!(cfg.validate(64, &a).is_ok());
    assert!((cfg.dither_bound(&a) - a.d_min() / 9.4).abs() < 1e-15);
    cfg.delta_d = Some(a.d_min() / 2.0);
    assert!(cfg.validate(64, &a).is_err());
    cfg.delta_d = Some(0.0);
    assert!(cfg.validate(64, &a).is_err());
    cfg.delta_d = None;
    cfg.m0 = 64;
    assert!(cfg.validate(64, &a).is_err());
    assert!(DetectorConfig::new(DetectorKind::Mrc, 0)
        .validate(64, &a)
        .is_err());
}

#[test]
fn noiseless_frames_decode_exactly() {
    let p = desk_params();
    let a = Constellation::qam(4).unwrap();
    let layout = FrameLayout::data_only(p);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for kind in DetectorKind::ALL {
        for _ in 0..3 {
            let f = random_frame(p, &layout, &a, 0.0, &mut rng);
            let est = EstimatedChannel::perfect(&f.ch).unwrap();
            let cfg = DetectorConfig::new(kind, 12);
            let res = run_detector(
                &f.r,
                &est,
                &layout,
                &cfg,
                &a,
                0.0,
                &mut rng,
                Some(Truth { x: &f.x, s: &f.s }),
            )
            .unwrap();
            assert_eq!(res.final_bit_errors(), Some(0), "{kind}");
            assert_eq!(res.decisions, f.x, "{kind}");
        }
    }
}

#[test]
fn zero_state_branches_are_raw_slices() {
    let p = desk_params();
    let a = Constellation::qam(4).unwrap();
    let layout = FrameLayout::data_only(p);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = random_frame(p, &layout, &a, 0.01, &mut rng);
    let est = EstimatedChannel::perfect(&f.ch).unwrap();
    let st = init_estimates(&f.r, &est, &layout, InitMode::Zeros, 1.0, 0.01).unwrap();
    assert!(st.var.iter().all(|&v| v == 1.0));
    for q in [0usize, 17, 1023] {
        let rt = stack_branches(&st, est.gains(), q);
        for (l, v) in rt.iter().enumerate() {
            assert_eq!(*v, f.r.as_slice()[(q + l) % 1024]);
        }
    }
}

#[test]
fn exact_priors_leave_only_own_symbol() {
    let p = desk_params();
    let a = Constellation::qam(4).unwrap();
    let layout = FrameLayout::data_only(p);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = random_frame(p, &layout, &a, 0.0, &mut rng);
    let est = EstimatedChannel::perfect(&f.ch).unwrap();
    let st = SymbolState::new(
        f.r.as_slice(),
        est.gains(),
        f.s.as_slice().to_vec(),
        vec![0.0; 1024],
    );
    for q in [0usize, 5, 700, 1023] {
        let rt = stack_branches(&st, est.gains(), q);
        let g = est.gains().spreading_vector(q);
        for (a, b) in rt.iter().zip(&g) {
            assert!((a - b * f.s.as_slice()[q]).norm() < 1e-12);
        }
    }
}

#[test]
fn branch_vector_matches_direct_cancellation() {
    let p = desk_params();
    let a = Constellation::qam(4).unwrap();
    let layout = FrameLayout::data_only(p);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = random_frame(p, &layout, &a, 0.05, &mut rng);
    let est = EstimatedChannel::perfect(&f.ch).unwrap();
    let s_hat: Vec<_> = (0..1024)
        .map(|_| crate::channel::complex_gaussian(&mut rng, 1.0))
        .collect();
    let st = SymbolState::new(f.r.as_slice(), est.gains(), s_hat.clone(), vec![1.0; 1024]);
    let lm = 8i64;
    for _ in 0..100 {
        let q = rng.random_range(0..1024usize);
        let sub = SubChannel::from_gains(est.gains(), q);
        let rt = stack_branches(&st, est.gains(), q);
        for l in 0..=lm {
            let mut want = f.r.as_slice()[(q + l as usize) % 1024];
            for dl in -lm..=lm {
                if dl != 0 {
                    want -= sub.matrix[(l as usize, (dl + lm) as usize)]
                        * s_hat[(q as i64 + dl).rem_euclid(1024) as usize];
                }
            }
            assert!((rt[l as usize] - want).norm() < 1e-12);
        }
    }
}

#[test]
fn residual_stays_consistent_through_sweeps() {
    let p = desk_params();
    let a = Constellation::qam(16).unwrap();
    let layout = FrameLayout::data_only(p);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let f = random_frame(p, &layout, &a, 0.02, &mut rng);
    let est = EstimatedChannel::perfect(&f.ch).unwrap();
    for kind in DetectorKind::ALL {
        let mut st = init_estimates(&f.r, &est, &layout, kind.default_init(), 1.0, 0.02).unwrap();
        let eng = Engine::new(est.gains(), &layout, &a, 0.02, 0, a.d_min() / 9.4);
        for i in 0..3 {
            eng.sweep(&mut st, kind.stage(i), &mut rng, false).unwrap();
            assert!(
                st.residual_drift(f.r.as_slice(), est.gains()) <= 1e-10,
                "{kind}"
            );
        }
    }
}

#[test]
fn known_rows_are_never_touched() {
    let p = desk_params();
    let a = Constellation::qam(4).unwrap();
    let pilot = crate::pilot::PilotConfig::from_pilot_snr(&p, 35.0, 0.05);
    let layout = FrameLayout::with_pilot(p, pilot).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f = random_frame(p, &layout, &a, 0.05, &mut rng);
    let est = EstimatedChannel::perfect(&f.ch).unwrap();
    let cfg = DetectorConfig::new(DetectorKind::SoftSicMmse, 3);
    let res = run_detector(
        &f.r,
        &est,
        &layout,
        &cfg,
        &a,
        0.05,
        &mut rng,
        Some(Truth { x: &f.x, s: &f.s }),
    )
    .unwrap();
    for m in 0..p.m {
        if !layout.is_data_row(m) {
            for nd in 0..p.n {
                let q = nd * p.m + m;
                assert!((res.state.s_hat[q] - f.s.as_slice()[q]).norm() < 1e-12);
                assert_eq!(res.state.var[q], 0.0);
            }
        }
    }
    assert_eq!(res.decisions.get(32, 8), pilot.x_pilot);
}

#[test]
fn scalar_hard_stage_is_scaled_mrc() {
    let p = desk_params();
    let a = Constellation::qam(4).unwrap();
    let layout = FrameLayout::data_only(p);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let f = random_frame(p, &layout, &a, 0.03, &mut rng);
    let est = EstimatedChannel::perfect(&f.ch).unwrap();
    let eng = Engine::new(est.gains(), &layout, &a, 0.03, 0, 0.1);
    let mut st = init_estimates(&f.r, &est, &layout, InitMode::Zeros, 1.0, 0.03).unwrap();
    eng.sweep(&mut st, Stage::HardFirst, &mut rng, false)
        .unwrap();
    let mut st_mrc = st.clone();
    let mut st_hard = st.clone();
    let t_mrc = eng
        .sweep(&mut st_mrc, Stage::Mrc, &mut rng, true)
        .unwrap()
        .trace
        .unwrap();
    let t_hard = eng
        .sweep(&mut st_hard, Stage::HardScalar, &mut rng, true)
        .unwrap()
        .trace
        .unwrap();
    assert_eq!(st_mrc.decisions, st_hard.decisions);
    for (m, h) in t_mrc.symbols.iter().zip(&t_hard.symbols) {
        let ratio = (h.estimate * h.scale) / m.estimate;
        assert!(ratio.re > 0.0 && ratio.im.abs() <= 1e-10);
    }
}

#[test]
fn early_stop_only_at_exact_fixed_points() {
    let p = desk_params();
    let a = Constellation::qam(4).unwrap();
    let layout = FrameLayout::data_only(p);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f = random_frame(p, &layout, &a, 0.01, &mut rng);
    let est = EstimatedChannel::perfect(&f.ch).unwrap();
    let truth = Some(Truth { x: &f.x, s: &f.s });
    let cfg = DetectorConfig::new(DetectorKind::Mrc, 30);
    let res = run_detector(&f.r, &est, &layout, &cfg, &a, 0.01, &mut rng, truth).unwrap();
    assert!(res.iterations < 30);
    assert_eq!(res.bit_errors.len(), 30);
    // running the stopped iteration count again gives the same decisions
    let mut cfg2 = cfg.clone();
    cfg2.n_ite = res.iterations + 3;
    let res2 = run_detector(&f.r, &est, &layout, &cfg2, &a, 0.01, &mut rng, truth).unwrap();
    assert_eq!(res.decisions, res2.decisions);
}

#[test]
fn freq_mmse_limits() {
    let p = ModemParams::new(16, 4, 1e-3, 2).unwrap();
    let a = Constellation::qam(4).unwrap();
    let layout = FrameLayout::data_only(p);
    let ch = DiscreteChannel::new(p, vec![DdPath::new(0, 0, Complex64::new(1.0, 0.0))], 0).unwrap();
    let est = EstimatedChannel::perfect(&ch).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let data: Vec<_> = (0..64)
        .map(|_| a.points()[rng.random_range(0..4)])
        .collect();
    let s = dd_to_time(&layout.build_frame(&data).unwrap()).unwrap();
    for mode in [InitMode::FreqMmse, InitMode::FreqMmseGlobal] {
        let st = init_estimates(&s, &est, &layout, mode, 1.0, 0.0).unwrap();
        for (u, v) in st.s_hat.iter().zip(s.as_slice()) {
            assert!((u - v).norm() < 1e-12);
        }
        let st = init_estimates(&s, &est, &layout, mode, 1.0, 1e12).unwrap();
        assert!(st.s_hat.iter().all(|v| v.norm() < 1e-10));
        assert!(st.var.iter().all(|&v| v == 1.0));
    }
}

#[test]
fn diagonal_of_transformed_diagonal_is_mean() {
    let n = 8;
    let tr = RowTransform::new(n);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mean = v.iter().sum::<f64>() / n as f64;
    // column j of F^H diag(v) F is F^H (v .* F e_j); its j-th entry is the diagonal
    for j in 0..n {
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        col[j] = Complex64::new(1.0, 0.0);
        tr.dft(&mut col);
        for (c, vi) in col.iter_mut().zip(&v) {
            *c *= vi;
        }
        tr.idft(&mut col);
        assert!((col[j] - Complex64::new(mean, 0.0)).norm() < 1e-14);
    }
}

#[test]
fn same_seed_same_result() {
    let p = desk_params();
    let a = Constellation::qam(4).unwrap();
    let layout = FrameLayout::data_only(p);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let f = random_frame(p, &layout, &a, 0.1, &mut rng);
    let est = EstimatedChannel::perfect(&f.ch).unwrap();
    let cfg = DetectorConfig::new(DetectorKind::MrcSd, 6);
    let run = |seed| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        run_detector(
            &f.r,
            &est,
            &layout,
            &cfg,
            &a,
            0.1,
            &mut r,
            Some(Truth { x: &f.x, s: &f.s }),
        )
        .unwrap()
    };
    assert_eq!(run(1), run(1));
}
