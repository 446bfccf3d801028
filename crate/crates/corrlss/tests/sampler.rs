use corrlss::rng::stream;
use corrlss::tail_sampler::{
    fourth_moment_estimate, sample_matrix, self_normalize, DataLaw, SlowlyVarying, TailLaw, TailLawSpec,
};

fn draws(law: &TailLaw, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, 0, 0);
    (0..count).map(|_| law.sample(&mut rng)).collect()
}

#[test]
fn draws_are_standardized() {
    for (alpha, sym) in [(3.5, true), (3.0, false), (4.0, true)] {
        let law = TailLaw::new(alpha, SlowlyVarying::Const(1.0), sym).unwrap();
        let x = draws(&law, 1_000_000, 3);
        let m = x.len() as f64;
        let mean = x.iter().sum::<f64>() / m;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        assert!(mean.abs() < 5.0 / m.sqrt(), "alpha={alpha}: mean {mean}");
        // The fourth moment is infinite or barely finite, so allow a loose band.
        assert!((var - 1.0).abs() < 0.05, "alpha={alpha}: var {var}");
    }
}

#[test]
fn tail_frequency_matches_survival() {
    let law = TailLaw::new(3.0, SlowlyVarying::Const(1.0), true).unwrap();
    let x = draws(&law, 1_000_000, 8);
    for level in [5.0, 10.0, 30.0] {
        let expected = law.survival(level);
        let hits = x.iter().filter(|v| v.abs() > level).count() as f64 / x.len() as f64;
        let se = (expected * (1.0 - expected) / x.len() as f64).sqrt();
        assert!((hits - expected).abs() < 5.0 * se, "level {level}: {hits} vs {expected}");
    }
}

#[test]
fn asymmetric_tails_follow_the_right_weight() {
    let spec = TailLawSpec { alpha: 3.0, slowly_varying: SlowlyVarying::Const(1.0), symmetric: false, x0: Some(5.0), right_weight: Some(0.8) };
    let law = TailLaw::from_spec(&spec).unwrap();
    let x = draws(&law, 2_000_000, 9);
    let right = x.iter().filter(|&&v| v >= law.x0).count() as f64;
    let left = x.iter().filter(|&&v| v <= -law.x0).count() as f64;
    let share = right / (right + left);
    let se = (0.16 / (right + left)).sqrt();
    assert!((share - 0.8).abs() < 5.0 * se, "right share {share}");
}

#[test]
fn column_norms_concentrate() {
    let law = DataLaw::RegularlyVarying(TailLaw::new(3.5, SlowlyVarying::Const(1.0), true).unwrap());
    let n = 10_000;
    let sn = self_normalize(&sample_matrix(&law, n, 20, 4).unwrap()).unwrap();
    for rho in &sn.rho {
        let r = rho / (n as f64).sqrt();
        assert!((r - 1.0).abs() < 0.1, "rho/sqrt(n) = {r}");
    }
}

#[test]
fn heavier_tails_raise_the_fourth_moment() {
    // The ordering is asymptotic: the α = 2.5 law only starts its tail at x₀ ≈ 44, so n must be large.
    let n = 10_000;
    let mut prev = f64::INFINITY;
    for alpha in [2.5, 3.0, 3.5, 4.0] {
        let law = DataLaw::RegularlyVarying(TailLaw::new(alpha, SlowlyVarying::Const(1.0), true).unwrap());
        let (m4, _) = fourth_moment_estimate(&law, n, 4_000, 6).unwrap();
        assert!(m4 < prev, "alpha={alpha}: {m4} !< {prev}");
        prev = m4;
    }
    let (gauss, _) = fourth_moment_estimate(&DataLaw::Gaussian, 100, 50_000, 6).unwrap();
    assert!((gauss * (100 * 102) as f64 / 3.0 - 1.0).abs() < 0.02, "Gaussian {gauss}");
}
