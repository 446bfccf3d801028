use corrlss::experiments::{artifact_stem, config_hash, ExperimentConfig};
use corrlss::free_conv::GdmModel;
use corrlss::mp_law::{correlation_stieltjes, mp_stieltjes, AspectRatio};
use corrlss::resampling::{decompose, ControlParams};
use corrlss::spectra::{ks_distance, ks_two_sample, spectrum, MatrixKind, Reference};
use corrlss::tail_sampler::{sample_matrix, self_normalize, DataLaw, SlowlyVarying, TailLaw};
use num_complex::Complex64;
use proptest::prelude::*;

fn law(alpha: f64, symmetric: bool) -> DataLaw {
    if alpha > 4.0 {
        DataLaw::Gaussian
    } else {
        DataLaw::RegularlyVarying(TailLaw::new(alpha, SlowlyVarying::Const(1.0), symmetric).unwrap())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn columns_have_unit_norm(alpha in 2.2f64..5.0, n in 5usize..60, p in 2usize..30, seed in any::<u64>(), sym in any::<bool>()) {
        let sn = self_normalize(&sample_matrix(&law(alpha, sym), n, p, seed).unwrap()).unwrap();
        for j in 0..p {
            let norm: f64 = sn.column(j).iter().map(|v| v * v).sum();
            prop_assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_trace_is_p(alpha in 2.2f64..5.0, n in 5usize..60, p in 2usize..30, seed in any::<u64>()) {
        prop_assume!(n != p);
        let sn = self_normalize(&sample_matrix(&law(alpha, true), n, p, seed).unwrap()).unwrap();
        for kind in [MatrixKind::NbyN, MatrixKind::PbyP] {
            let sd = spectrum(&sn, kind).unwrap();
            let tr: f64 = sd.eigenvalues.iter().sum();
            prop_assert!((tr - p as f64).abs() < 1e-9 * p as f64);
            prop_assert!(sd.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn decomposition_reconstructs_bitwise(alpha in 2.2f64..4.0, n in 20usize..120, p in 2usize..40, seed in any::<u64>()) {
        let x = sample_matrix(&law(alpha, true), n, p, seed).unwrap();
        let dec = decompose(&x, &ControlParams::defaults(alpha).unwrap()).unwrap();
        prop_assert!(dec.reconstruct() == x.data);
        prop_assert!(dec.supports_disjoint());
    }

    #[test]
    fn ks_is_a_distance(mut a in prop::collection::vec(0.0f64..10.0, 1..80), b in prop::collection::vec(0.0f64..10.0, 1..80), phi in 0.1f64..5.0) {
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let d = ks_distance(&a, &Reference::Mp(AspectRatio::new(phi).unwrap()));
        prop_assert!((0.0..=1.0).contains(&d));
        let mut b = b;
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let ab = ks_two_sample(&a, &b);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ks_two_sample(&b, &a)).abs() < 1e-15);
        prop_assert!(ks_two_sample(&a, &a) == 0.0);
    }

    #[test]
    fn stieltjes_transforms_are_nevanlinna(phi in 0.05f64..8.0, re in -5.0f64..20.0, im in 1e-4f64..10.0) {
        prop_assume!((phi - 1.0).abs() > 1e-3);
        let z = Complex64::new(re, im);
        let r = AspectRatio::new(phi).unwrap();
        let v = mp_stieltjes(z, &r).unwrap();
        prop_assert!(v.m.im > 0.0);
        prop_assert!(v.residual(phi) < 1e-8 * (1.0 + v.m.norm_sqr()));
        prop_assert!(correlation_stieltjes(z, &r).unwrap().m.im > 0.0);
    }

    #[test]
    fn free_convolution_round_trip(t in 0.02f64..0.4, re in 0.0f64..6.0, im in 0.01f64..3.0, seed in 0u64..1000) {
        let mut base: Vec<f64> = (0..40).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 250.0).collect();
        base.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let model = GdmModel::new(t, base, 0.5).unwrap();
        let z = Complex64::new(re, im);
        let pt = model.solve_mt(z).unwrap();
        prop_assert!(pt.m_t.im > 0.0);
        prop_assert!((model.phi_t(pt.zeta_t).unwrap() - z).norm() < 1e-8);
    }

    #[test]
    fn tail_law_serde_round_trip(alpha in 2.1f64..3.99, g in -2.0f64..2.0, sym in any::<bool>()) {
        let law = TailLaw::new(alpha, SlowlyVarying::LogPower(g), sym).unwrap();
        let back: TailLaw = serde_json::from_str(&serde_json::to_string(&law).unwrap()).unwrap();
        prop_assert_eq!(back, law);
    }

    #[test]
    fn artifact_names_follow_the_pattern(n in 3usize..500, seed in any::<u64>()) {
        let mut c = ExperimentConfig::new(DataLaw::Gaussian, n, 2);
        c.master_seed = seed;
        let stem = artifact_stem("simulate", seed, &c);
        let hash = config_hash(&c);
        prop_assert_eq!(hash.len(), 12);
        prop_assert!(hash.chars().all(|ch| ch.is_ascii_hexdigit()));
        prop_assert_eq!(stem, format!("simulate-{seed}-{hash}"));
        c.workers = 5;
        prop_assert_eq!(config_hash(&c), hash);
    }
}
