//! Resampling-chain properties: round-trip reconstruction regression and
//! the initialization-persistence comparison for the interpolation kernel.

use ndarray::{Array3, ArrayD, IxDyn};
use pcpredict_core::filter_design::logit;
use pcpredict_core::resample::{
    init_interp_kernel, lowpass_decimate, upsample, ResampleOpts, UpsampleStage,
};
use pcpredict_core::train::{Adam, TrainConfig};
use pcpredict_core::{GradMode, Graph};
use rand::Rng;

fn band_limited_16() -> Array3<f64> {
    Array3::from_shape_fn((1, 16, 16), |(_, i, j)| {
        0.5 + 0.25 * (2.0 * std::f64::consts::PI * i as f64 / 16.0).sin()
            + 0.2 * (2.0 * std::f64::consts::PI * j as f64 / 16.0).cos()
    })
}

#[test]
fn roundtrip_reconstruction_stays_below_golden_threshold() {
    // Upsample then decimate with identity channel map, init interp kernel
    // and rho = 0.75. Thresholds recorded from the first verified run
    // (0.2538 global, 0.0955 interior); regressions beyond them mean the
    // chain changed structurally.
    let x = band_limited_16();
    let mut rng = pcpredict_core::data::rng_from_seed(1);
    let mut stage = UpsampleStage::<f64>::init(1, 1, 25, true, &mut rng).unwrap();
    stage.map_weight.fill(0.0);
    stage.map_weight[(0, 0, 0, 0)] = 1.0;
    stage.map_bias.fill(0.0);
    for th in stage.lowpass.theta_mut().iter_mut() {
        *th = logit(0.75);
    }

    let mut g = Graph::new(GradMode::Eval);
    let uv = stage.bind(&mut g, false);
    let theta_down = g.leaf(ArrayD::from_elem(IxDyn(&[1]), logit(0.75)), false);
    let xin = g.leaf(x.clone().into_dyn(), false);
    let up = upsample(&mut g, &uv, xin, &ResampleOpts::default()).unwrap();
    assert_eq!(g.value(up).shape(), &[1, 32, 32]);
    let down = lowpass_decimate(&mut g, theta_down, up, &ResampleOpts::default()).unwrap();
    let y = g.value(down);

    let rel = |num: f64, den: f64| (num / den).sqrt();
    let mut num = 0.0;
    let mut den = 0.0;
    for (idx, &v) in y.indexed_iter() {
        let orig = x[(0, idx[1], idx[2])];
        num += (v - orig) * (v - orig);
        den += orig * orig;
    }
    assert!(rel(num, den) < 0.27, "global error {}", rel(num, den));

    let mut num = 0.0;
    let mut den = 0.0;
    for i in 2..14 {
        for j in 2..14 {
            let d = y[[0, i, j]] - x[(0, i, j)];
            num += d * d;
            den += x[(0, i, j)] * x[(0, i, j)];
        }
    }
    assert!(rel(num, den) < 0.105, "interior error {}", rel(num, den));
}

/// Supervised upsampling of smooth signals, shared by both arms of the
/// initialization-persistence comparison.
fn train_upsampler(special_init: bool, steps: usize) -> Array3<f64> {
    let mut rng = pcpredict_core::data::rng_from_seed(17);
    let mut stage = UpsampleStage::<f64>::init(2, 2, 25, special_init, &mut rng).unwrap();
    let cfg = TrainConfig {
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let shapes: Vec<Vec<usize>> = vec![
        stage.interp.shape().to_vec(),
        stage.lowpass.theta().shape().to_vec(),
        stage.map_weight.shape().to_vec(),
        stage.map_bias.shape().to_vec(),
    ];
    let mut opt = Adam::<f64>::new(&cfg, &shapes);

    let mut data_rng = pcpredict_core::data::rng_from_seed(18);
    for _ in 0..steps {
        // Smooth random target: superposition of low-frequency waves.
        let (a, b, ph): (f64, f64, f64) = (
            data_rng.random_range(0.1..0.4),
            data_rng.random_range(0.1..0.4),
            data_rng.random_range(0.0..6.28),
        );
        let target = Array3::<f64>::from_shape_fn((2, 16, 16), |(c, i, j)| {
            0.5 + a * (2.0 * std::f64::consts::PI * (i as f64 + c as f64) / 16.0 + ph).sin()
                + b * (2.0 * std::f64::consts::PI * j as f64 / 16.0).cos()
        });
        let small = Array3::<f64>::from_shape_fn((2, 8, 8), |(c, i, j)| target[(c, 2 * i, 2 * j)]);

        let mut g = Graph::new(GradMode::Train);
        let vars = stage.bind(&mut g, true);
        let xin = g.leaf(small.into_dyn(), false);
        let up = upsample(&mut g, &vars, xin, &ResampleOpts::default()).unwrap();
        let tv = g.leaf(target.into_dyn(), false);
        let diff = g.sub(up, tv).unwrap();
        let loss = g.sum_squares(diff);
        g.backward(loss).unwrap();

        let flat = [vars.interp, vars.theta, vars.map_w, vars.map_b];
        let grads: Vec<ArrayD<f64>> = flat
            .iter()
            .map(|&v| {
                g.grad(v)
                    .map(|x| x.to_owned())
                    .unwrap_or_else(|| ArrayD::zeros(g.value(v).raw_dim()))
            })
            .collect();
        let mut params = vec![
            ("interp".to_string(), stage.interp.view_mut().into_dyn()),
            ("theta".to_string(), stage.lowpass.theta_mut().view_mut().into_dyn()),
            ("map_w".to_string(), stage.map_weight.view_mut().into_dyn()),
            ("map_b".to_string(), stage.map_bias.view_mut().into_dyn()),
        ];
        opt.step(&mut params, &grads).unwrap();
    }

    // Mean learned kernel across channels.
    let mut mean = Array3::<f64>::zeros((1, 7, 7));
    for c in 0..2 {
        for i in 0..7 {
            for j in 0..7 {
                mean[(0, i, j)] += stage.interp[(c, i, j)] / 2.0;
            }
        }
    }
    mean
}

#[test]
fn interp_init_persists_under_training() {
    // After short training on smooth signals, the specially initialized
    // kernel stays near the interpolation init; a Kaiming-initialized
    // control lands strictly farther away.
    let init = init_interp_kernel();
    let dist = |k: &Array3<f64>| -> f64 {
        let mut d = 0.0;
        for i in 0..7 {
            for j in 0..7 {
                let e = k[(0, i, j)] - init[(i, j)];
                d += e * e;
            }
        }
        d.sqrt()
    };
    let special = train_upsampler(true, 60);
    let random = train_upsampler(false, 60);
    let (ds, dr) = (dist(&special), dist(&random));
    assert!(
        ds < dr,
        "special init drifted farther ({}) than the random control ({})",
        ds,
        dr
    );
    // "Generally consistent with the initial data": within a bounded
    // distance of the init kernel, not merely closer than the control.
    assert!(ds < 0.5 * dr, "persistence margin too small: {} vs {}", ds, dr);
}
