//! Randomised invariants of the pipeline stages.

use proptest::prelude::*;

use slosh_core::fit::{loss_eval, model_eval, FitConfig, FitParams};
use slosh_core::kv::{KvMap, KvWriter};
use slosh_core::models::{gpr_train, quad_fit, svm_train, FeatureVector, Model, QuadModel, Regressor};
use slosh_core::signal::{butterworth_lowpass, filtfilt, principal_motion, PrincipalSignal};
use slosh_core::sim::{simulate_nonlinear, MarkerSeries, SimConfig};
use slosh_core::transfer::{transfer_fit, TransferMap};

fn fv() -> impl Strategy<Value = FeatureVector> {
    (0.05f64..2.5, 8.0f64..24.0).prop_map(|(l, w)| FeatureVector::new(l, w))
}

/// Features on a jittered grid, so no two points nearly coincide.
fn spread(n: usize) -> impl Strategy<Value = Vec<FeatureVector>> {
    prop::collection::vec((0.0f64..0.5, 0.0f64..0.5), n).prop_map(move |j| {
        let side = (n as f64).sqrt().ceil() as usize;
        j.iter()
            .enumerate()
            .map(|(i, (a, b))| {
                let (r, c) = (i / side, i % side);
                FeatureVector::new(0.1 + 0.3 * (c as f64 + a), 10.0 + 1.5 * (r as f64 + b))
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kv_floats_round_trip_bitwise(x in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        let mut w = KvWriter::new();
        w.put("x", x);
        let back: f64 = KvMap::parse(&w.to_text()).unwrap().require("x").unwrap();
        prop_assert_eq!(back.to_bits(), x.to_bits());
    }

    #[test]
    fn quadratic_model_is_exact_on_its_span(
        coef in prop::array::uniform6(-5.0f64..5.0),
        xs in spread(12),
    ) {
        let truth = QuadModel { coef };
        let ys: Vec<f64> = xs.iter().map(|x| truth.predict(x)).collect();
        let m = quad_fit(&xs, &ys).unwrap();
        let scale = ys.iter().fold(1.0f64, |a, y| a.max(y.abs()));
        for x in &xs {
            prop_assert!((m.predict(x) - truth.predict(x)).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn filter_is_linear(
        a in prop::collection::vec(-1.0f64..1.0, 120),
        b in prop::collection::vec(-1.0f64..1.0, 120),
        s in -3.0f64..3.0,
    ) {
        let sec = butterworth_lowpass(4, 3.0, 30.0).unwrap();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * y).collect();
        let fa = filtfilt(&sec, &a, 40);
        let fb = filtfilt(&sec, &b, 40);
        let fm = filtfilt(&sec, &mix, 40);
        for i in 0..mix.len() {
            prop_assert!((fm[i] - fa[i] - s * fb[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn filter_keeps_in_band_phase(f in 0.3f64..1.5, phi in 0.0f64..6.2) {
        let fs = 30.0;
        let n = 390;
        let w = 2.0 * std::f64::consts::PI * f;
        let x: Vec<f64> = (0..n).map(|i| (w * i as f64 / fs + phi).cos()).collect();
        let y = filtfilt(&butterworth_lowpass(4, 3.0, fs).unwrap(), &x, 60);
        // forward-backward squares the order-4 bilinear Butterworth magnitude
        // and cancels its phase: interior samples are the input times a real gain
        let pi = std::f64::consts::PI;
        let g = 1.0 / (1.0 + ((pi * f / fs).tan() / (pi * 3.0 / fs).tan()).powi(8));
        for i in 120..n - 120 {
            prop_assert!((y[i] - g * x[i]).abs() < 1e-5, "sample {} off by {}", i, y[i] - g * x[i]);
        }
    }

    #[test]
    fn pca_is_scale_invariant(
        gains in prop::collection::vec(0.2f64..2.0, 4),
        scale in 0.01f64..100.0,
        seed in 0u64..1000,
    ) {
        let n = 90;
        let t: Vec<f64> = (0..n).map(|i| i as f64 / 30.0).collect();
        let mut channels = Vec::new();
        for (k, g) in gains.iter().enumerate() {
            let ph = (seed as f64 * 0.37 + k as f64).sin() * 0.1;
            channels.push(t.iter().map(|t| g * (10.0 * t + ph).cos()).collect::<Vec<f64>>());
            channels.push(t.iter().map(|t| 0.1 * g * (3.0 * t + k as f64).sin()).collect::<Vec<f64>>());
        }
        let scaled: Vec<Vec<f64>> = channels.iter().map(|c| c.iter().map(|v| v * scale).collect()).collect();
        let a = principal_motion(&MarkerSeries::from_channels(30.0, t.clone(), &channels).unwrap()).unwrap();
        let b = principal_motion(&MarkerSeries::from_channels(30.0, t, &scaled).unwrap()).unwrap();
        prop_assert!((0.0..=1.0).contains(&a.variance_ratio));
        prop_assert!((a.variance_ratio - b.variance_ratio).abs() < 1e-9);
        let peak = a.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.u.iter().zip(&b.u) {
            prop_assert!((x * scale - y).abs() < 1e-8 * peak * scale);
        }
    }

    #[test]
    fn exact_model_has_zero_loss(
        b in 0.5f64..2.0, lambda in 0.05f64..1.0, omega in 8.0f64..20.0, psi in -3.0f64..3.0,
        c1 in -0.01f64..0.01,
    ) {
        let p = FitParams { b, lambda, omega, psi, b_p: 0.3, lambda_p: 2.0, omega_p: 12.0, c1, ..Default::default() };
        let t: Vec<f64> = (0..300).map(|i| i as f64 / 30.0).collect();
        let u = model_eval(&p, &t);
        let s = PrincipalSignal::from_samples(30.0, t, u).unwrap();
        prop_assert!(loss_eval(&p, &s, &FitConfig::default()) < 1e-20);
        let off = FitParams { omega: omega * 1.01, ..p };
        prop_assert!(loss_eval(&off, &s, &FitConfig::default()) > 0.0);
    }

    #[test]
    fn sloshing_energy_never_grows(
        h in 0.015f64..0.04, gamma in 0.0f64..4.0, kappa in 0.0f64..800.0, eps0 in 0.001f64..0.01,
    ) {
        let cfg = SimConfig { height: h, gamma, kappa, eps0, duration: 4.0, ..Default::default() };
        let tr = simulate_nonlinear(&cfg).unwrap();
        let e0 = tr.energy[0];
        for w in tr.energy.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * e0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gpr_gram_matrix_is_psd(xs in spread(16), probe in prop::collection::vec(fv(), 25)) {
        let ys: Vec<f64> = xs.iter().map(|x| x.omega.sqrt() + x.lambda * x.lambda).collect();
        let m = gpr_train(&xs, &ys).unwrap();
        let k = m.gram_matrix(&probe);
        let eig = nalgebra::SymmetricEigen::new(k).eigenvalues;
        prop_assert!(eig.min() >= -1e-9 * eig.max().max(1.0));
    }

    #[test]
    fn gpr_is_equivariant_to_affine_targets(xs in spread(12), a in 0.1f64..10.0, b in -50.0f64..50.0) {
        let ys: Vec<f64> = xs.iter().map(|x| (0.3 * x.omega).sin() + x.lambda).collect();
        let ys2: Vec<f64> = ys.iter().map(|y| a * y + b).collect();
        let m1 = gpr_train(&xs, &ys).unwrap();
        let m2 = gpr_train(&xs, &ys2).unwrap();
        let spread = ys.iter().fold(f64::NEG_INFINITY, |m, y| m.max(*y)) - ys.iter().fold(f64::INFINITY, |m, y| m.min(*y));
        for x in &xs {
            let p = FeatureVector::new(x.lambda + 0.05, x.omega - 0.3);
            prop_assert!((m2.predict(&p) - (a * m1.predict(&p) + b)).abs() <= 1e-6 * a * spread);
        }
    }

    #[test]
    fn svm_is_invariant_to_axis_scaling_and_label_permutation(
        jitter in prop::collection::vec((-0.1f64..0.1, -1.0f64..1.0), 18),
        sl in 0.1f64..10.0, sw in 0.01f64..10.0,
        probe in prop::collection::vec(fv(), 20),
    ) {
        let centres = [(0.1, 14.0), (1.0, 18.0), (2.2, 12.0)];
        let xs: Vec<FeatureVector> = jitter
            .iter()
            .enumerate()
            .map(|(i, (dl, dw))| {
                let (l, w) = centres[i % 3];
                FeatureVector::new(l + dl, w + dw)
            })
            .collect();
        let ys: Vec<u32> = (0..xs.len()).map(|i| (i % 3) as u32).collect();
        let base = svm_train(&xs, &ys, 10.0, None).unwrap();

        let scaled: Vec<FeatureVector> = xs.iter().map(|x| FeatureVector::new(sl * x.lambda, sw * x.omega)).collect();
        let m_scaled = svm_train(&scaled, &ys, 10.0, None).unwrap();
        // relabel 0 -> 2, 1 -> 0, 2 -> 1
        let perm = [2u32, 0, 1];
        let ys_perm: Vec<u32> = ys.iter().map(|&y| perm[y as usize]).collect();
        let m_perm = svm_train(&xs, &ys_perm, 10.0, None).unwrap();
        for x in xs.iter().chain(&probe) {
            let c = base.predict(x);
            prop_assert_eq!(m_scaled.predict(&FeatureVector::new(sl * x.lambda, sw * x.omega)), c);
            prop_assert_eq!(m_perm.predict(x), perm[c as usize]);
        }
        for (x, y) in xs.iter().zip(&ys) {
            prop_assert_eq!(base.predict(x), *y);
        }
    }

    #[test]
    fn transfer_never_fits_worse_than_identity(
        beta in 0.7f64..1.4, shift in -0.2f64..0.2, xs in spread(15),
    ) {
        let base = Model::Quad(QuadModel { coef: [0.0, 0.0, 0.0, 8.5e-5, 0.0, 8.5e-5] });
        let tune: Vec<(FeatureVector, f64)> = xs
            .iter()
            .map(|x| (*x, base.predict(&FeatureVector::new(x.lambda + shift, beta * x.omega))))
            .collect();
        let map = transfer_fit(&base, &tune).unwrap();
        let identity = TransferMap::identity(base.clone());
        prop_assert!(map.mse(&tune) <= identity.mse(&tune) + 1e-18);
    }
}
