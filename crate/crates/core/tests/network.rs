//! Step and rollout semantics: zero propagation, error structure, the
//! same-step alignment the corrected wiring guarantees, provenance
//! tracing, and bitwise determinism.

use ndarray::{Array3, ArrayD, IxDyn};
use pcpredict_core::data::SequenceBatch;
use pcpredict_core::network::{
    compute_error, merge_errors, ErrorMode, NetworkConfig, PcNetwork, RolloutMode,
};
use pcpredict_core::{GradMode, Graph, PcError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> NetworkConfig {
    NetworkConfig {
        levels: 2,
        channels: vec![1, 4],
        input: (1, 8, 8),
        t1: 2,
        t2: 2,
        ..NetworkConfig::desk_default()
    }
}

fn random_seq(c: usize, h: usize, w: usize, t: usize, seed: u64) -> SequenceBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SequenceBatch::new(
        (0..t)
            .map(|_| Array3::from_shape_fn((c, h, w), |_| rng.random_range(0.0..1.0)))
            .collect(),
    )
    .unwrap()
}

#[test]
fn compute_error_splits_signs() {
    let mut g = Graph::<f64>::new(GradMode::Eval);
    let f = g.leaf(ArrayD::from_elem(IxDyn(&[1, 1, 1]), 1.0), false);
    let p = g.leaf(ArrayD::from_elem(IxDyn(&[1, 1, 1]), 0.0), false);
    let e = compute_error(&mut g, f, p, ErrorMode::RectifiedSplit).unwrap();
    assert_eq!(g.value(e).shape(), &[2, 1, 1]);
    assert_eq!(g.value(e)[[0, 0, 0]], 1.0);
    assert_eq!(g.value(e)[[1, 0, 0]], 0.0);

    let p2 = g.leaf(ArrayD::from_elem(IxDyn(&[1, 1, 1]), 3.0), false);
    let e2 = compute_error(&mut g, f, p2, ErrorMode::RectifiedSplit).unwrap();
    assert_eq!(g.value(e2)[[0, 0, 0]], 0.0);
    assert_eq!(g.value(e2)[[1, 0, 0]], 2.0);

    let e3 = compute_error(&mut g, f, f, ErrorMode::RectifiedSplit).unwrap();
    assert!(g.value(e3).iter().all(|&v| v == 0.0));

    // The literal absolute-value variant duplicates |f - P|.
    let e4 = compute_error(&mut g, f, p2, ErrorMode::AbsPair).unwrap();
    assert_eq!(g.value(e4)[[0, 0, 0]], 2.0);
    assert_eq!(g.value(e4)[[1, 0, 0]], 2.0);
}

#[test]
fn merge_errors_is_pointwise_affine() {
    let mut g = Graph::<f64>::new(GradMode::Eval);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let local = g.leaf(
        ArrayD::from_shape_fn(IxDyn(&[2, 3, 3]), |_| rng.random_range(0.0..1.0)),
        false,
    );
    let below = g.leaf(
        ArrayD::from_shape_fn(IxDyn(&[2, 3, 3]), |_| rng.random_range(0.0..1.0)),
        false,
    );
    let one = g.leaf(ArrayD::from_elem(IxDyn(&[1]), 1.0), false);
    let zero = g.leaf(ArrayD::from_elem(IxDyn(&[1]), 0.0), false);
    let keep = merge_errors(&mut g, local, below, one, zero).unwrap();
    assert_eq!(g.value(keep), g.value(local));

    let both = merge_errors(&mut g, local, local, one, one).unwrap();
    let expect = g.value(local) * 2.0;
    assert_eq!(g.value(both), &expect);

    // Random scalars against a pointwise reference computation.
    let a = g.leaf(ArrayD::from_elem(IxDyn(&[1]), 0.7), false);
    let b = g.leaf(ArrayD::from_elem(IxDyn(&[1]), -0.3), false);
    let m = merge_errors(&mut g, local, below, a, b).unwrap();
    for ((&mv, &lv), &bv) in g
        .value(m)
        .iter()
        .zip(g.value(local).iter())
        .zip(g.value(below).iter())
    {
        assert!((mv - (0.7 * lv - 0.3 * bv)).abs() < 1e-15);
    }
}

#[test]
fn zero_network_propagates_zero() {
    let net = PcNetwork::<f64>::zeroed(small_config()).unwrap();
    let mut g = Graph::new(GradMode::Eval);
    let vars = net.bind(&mut g, false);
    let states = net.init_states(&mut g);
    let x = g.zeros(&[1, 8, 8]);
    let out = net.step(&mut g, &vars, x, &states, 0).unwrap();
    for l in 0..2 {
        assert!(g.value(out.p[l]).iter().all(|&v| v == 0.0));
        assert!(g.value(out.e[l]).iter().all(|&v| v == 0.0));
    }
    assert!(g.value(out.prediction).iter().all(|&v| v == 0.0));
}

#[test]
fn errors_double_channels_and_stay_nonnegative() {
    let net = PcNetwork::<f64>::init(small_config(), 3).unwrap();
    let mut g = Graph::new(GradMode::Eval);
    let vars = net.bind(&mut g, false);
    let seq = random_seq(1, 8, 8, 4, 4);
    let states = net.init_states(&mut g);
    let x = g.leaf(seq.frames[0].clone().into_dyn(), false);
    let out = net.step(&mut g, &vars, x, &states, 0).unwrap();
    for l in 0..2 {
        let e = g.value(out.e[l]);
        assert_eq!(e.shape()[0], 2 * net.config.channels[l]);
        if l == 0 {
            assert!(e.iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn exact_predictions_zero_all_errors() {
    let net = PcNetwork::<f64>::init(small_config(), 5).unwrap();
    let mut g = Graph::new(GradMode::Eval);
    let vars = net.bind(&mut g, false);
    let seq = random_seq(1, 8, 8, 2, 6);
    let x = g.leaf(seq.frames[0].clone().into_dyn(), false);
    let f = net.encode_frame(&mut g, &vars, x).unwrap();
    // States whose last predictions are exactly the incoming encodings.
    let mut states = net.init_states(&mut g);
    for l in 0..2 {
        states[l].last_pred = f[l];
    }
    let out = net.step(&mut g, &vars, x, &states, 0).unwrap();
    for l in 0..2 {
        assert!(
            g.value(out.e[l]).iter().all(|&v| v == 0.0),
            "level {} error not zero",
            l
        );
    }
}

#[test]
fn rollout_output_counts_and_modes() {
    let net = PcNetwork::<f64>::init(small_config(), 7).unwrap();
    let seq = random_seq(1, 8, 8, 4, 9);
    let mut g = Graph::new(GradMode::Eval);
    let vars = net.bind(&mut g, false);
    let r = net.rollout(&mut g, &vars, &seq, RolloutMode::ClosedLoop).unwrap();
    assert_eq!(r.predictions.len(), 3); // T1 + T2 - 1
    assert_eq!(r.f_gt.len(), 4);
    assert_eq!(r.f_hat.len(), 2); // horizon encodings for t = 2, 3
    // Closed-loop consumed frames stay in [0, 1].
    for t in 2..r.steps {
        assert!(g
            .value(r.consumed[t])
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }

    // T2 = 0: pure teacher forcing, no horizon cache.
    let mut cfg0 = small_config();
    cfg0.t1 = 4;
    cfg0.t2 = 0;
    let net0 = PcNetwork::<f64>::init(cfg0, 7).unwrap();
    let mut g0 = Graph::new(GradMode::Eval);
    let vars0 = net0.bind(&mut g0, false);
    let r0 = net0
        .rollout(&mut g0, &vars0, &seq, RolloutMode::TeacherForced)
        .unwrap();
    assert_eq!(r0.predictions.len(), 3);
    assert!(r0.f_hat.is_empty());

    // Too-short sequences are rejected.
    let short = random_seq(1, 8, 8, 3, 10);
    let mut g1 = Graph::new(GradMode::Eval);
    let vars1 = net.bind(&mut g1, false);
    assert!(matches!(
        net.rollout(&mut g1, &vars1, &short, RolloutMode::ClosedLoop),
        Err(PcError::InvalidArgument(_))
    ));
}

#[test]
fn same_step_alignment_under_perturbation() {
    // Changing x_t changes f_l^t at every level in the same step and leaves
    // every earlier encoding bitwise untouched.
    let cfg = NetworkConfig {
        levels: 3,
        channels: vec![1, 4, 6],
        input: (1, 16, 16),
        t1: 4,
        t2: 0,
        ..NetworkConfig::desk_default()
    };
    let net = PcNetwork::<f64>::init(cfg, 11).unwrap();
    let seq = random_seq(1, 16, 16, 4, 12);
    let mut perturbed_frames = seq.frames.clone();
    perturbed_frames[2][(0, 5, 5)] += 0.25;
    let seq_p = SequenceBatch::new(perturbed_frames).unwrap();

    let mut ga = Graph::new(GradMode::Eval);
    let va = net.bind(&mut ga, false);
    let ra = net.rollout(&mut ga, &va, &seq, RolloutMode::TeacherForced).unwrap();
    let mut gb = Graph::new(GradMode::Eval);
    let vb = net.bind(&mut gb, false);
    let rb = net.rollout(&mut gb, &vb, &seq_p, RolloutMode::TeacherForced).unwrap();

    for t in 0..2 {
        for l in 0..3 {
            assert_eq!(
                ga.value(ra.step_f[t][l]),
                gb.value(rb.step_f[t][l]),
                "t={} l={} changed by a future perturbation",
                t,
                l
            );
        }
    }
    for l in 0..3 {
        assert_ne!(
            ga.value(ra.step_f[2][l]),
            gb.value(rb.step_f[2][l]),
            "level {} did not see the same-step input",
            l
        );
    }
}

#[test]
fn sensory_stream_is_independent_of_predictions() {
    // f depends only on the consumed frame and encoder parameters:
    // re-encoding the cached input reproduces it bit for bit, at every
    // level and step, including closed-loop steps.
    let net = PcNetwork::<f64>::init(small_config(), 13).unwrap();
    let seq = random_seq(1, 8, 8, 4, 14);
    let mut g = Graph::new(GradMode::Eval);
    let vars = net.bind(&mut g, false);
    let r = net.rollout(&mut g, &vars, &seq, RolloutMode::ClosedLoop).unwrap();
    for t in 0..r.steps {
        for l in 0..2 {
            let rec = net.trace_dependency(&mut g, &vars, &r, l, t).unwrap();
            assert_eq!(rec.source_frame, t);
            assert!(rec.verified, "t={} l={} failed provenance check", t, l);
        }
    }
    assert!(matches!(
        net.trace_dependency(&mut g, &vars, &r, 0, 99),
        Err(PcError::State(_))
    ));
}

#[test]
fn rollouts_are_bitwise_deterministic() {
    let net = PcNetwork::<f32>::init(small_config(), 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let seq = SequenceBatch::new(
        (0..4)
            .map(|_| Array3::from_shape_fn((1, 8, 8), |_| rng.random_range(0.0f32..1.0)))
            .collect(),
    )
    .unwrap();
    let run = || {
        let mut g = Graph::new(GradMode::Eval);
        let vars = net.bind(&mut g, false);
        let r = net.rollout(&mut g, &vars, &seq, RolloutMode::ClosedLoop).unwrap();
        r.predictions
            .iter()
            .map(|&p| g.value(p).clone())
            .collect::<Vec<_>>()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
}

#[test]
fn step_rejects_bad_states_and_frames() {
    let net = PcNetwork::<f64>::init(small_config(), 19).unwrap();
    let mut g = Graph::new(GradMode::Eval);
    let vars = net.bind(&mut g, false);
    let x = g.zeros(&[1, 8, 8]);
    assert!(matches!(
        net.step(&mut g, &vars, x, &[], 0),
        Err(PcError::State(_))
    ));
    let states = net.init_states(&mut g);
    let bad = g.zeros(&[1, 6, 6]);
    assert!(matches!(
        net.step(&mut g, &vars, bad, &states, 0),
        Err(PcError::Shape(_))
    ));
}

#[test]
fn non_finite_values_carry_context() {
    let net = PcNetwork::<f64>::init(small_config(), 23).unwrap();
    let mut g = Graph::new(GradMode::Eval);
    let vars = net.bind(&mut g, false);
    let states = net.init_states(&mut g);
    let mut bad = ArrayD::zeros(IxDyn(&[1, 8, 8]));
    bad[[0, 3, 3]] = f64::NAN;
    let x = g.leaf(bad, false);
    match net.step(&mut g, &vars, x, &states, 7) {
        Err(PcError::Numeric(msg)) => {
            assert!(msg.contains("level"), "missing level context: {}", msg);
            assert!(msg.contains("timestep 7"), "missing timestep: {}", msg);
        }
        other => panic!("expected numeric error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn diagnostics_csv_has_rows_per_level_and_step() {
    let net = PcNetwork::<f64>::init(small_config(), 29).unwrap();
    let seq = random_seq(1, 8, 8, 4, 30);
    let mut g = Graph::new(GradMode::Eval);
    let vars = net.bind(&mut g, false);
    let r = net.rollout(&mut g, &vars, &seq, RolloutMode::ClosedLoop).unwrap();
    let csv = r.diagnostics.to_csv();
    let lines: Vec<&str> = csv.trim().lines().collect();
    assert_eq!(lines[0], "level,t,error_norm");
    assert_eq!(lines.len(), 1 + r.steps * 2);
}

#[test]
fn predict_frames_shapes_and_range() {
    let net = PcNetwork::<f32>::init(small_config(), 31).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let context: Vec<Array3<f32>> = (0..3)
        .map(|_| Array3::from_shape_fn((1, 8, 8), |_| rng.random_range(0.0f32..1.0)))
        .collect();
    let preds = net.predict_frames(&context, 5).unwrap();
    assert_eq!(preds.len(), 5);
    for p in &preds {
        assert_eq!(p.dim(), (1, 8, 8));
        assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
