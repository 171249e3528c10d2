use longtrait::baselines::{mean_pool, ridge_fit};
use longtrait::evaluation::{mean_of, pearson_r, r2};
use longtrait::synth::{generate, SynthData, SynthSpec};
use longtrait::TraitId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn targets(d: &SynthData) -> Vec<f64> {
    d.targets.iter().map(|t| t.get(d.spec.signal_trait)).collect()
}

fn planted_rows(d: &SynthData) -> Vec<Vec<f64>> {
    d.sequences
        .iter()
        .zip(&d.truth)
        .map(|(s, t)| s.row(t.planted_indices[0]).iter().map(|&v| f64::from(v)).collect())
        .collect()
}

fn holdout_r2(x: &[Vec<f64>], y: &[f64], split: usize) -> f64 {
    let m = ridge_fit(&x[..split], &y[..split], 1.0).unwrap();
    let p: Vec<f64> = x[split..].iter().map(|v| m.predict(v)).collect();
    r2(&y[split..], &p).unwrap()
}

fn spec(seed: u64) -> SynthSpec {
    SynthSpec {
        snr: 5.0,
        explainable_variance: 0.9,
        seed,
        ..SynthSpec::default()
    }
}

#[test]
fn oracle_readout_matches_explainable_variance() {
    for seed in 0..10 {
        let d = generate(&spec(seed)).unwrap();
        let y = targets(&d);
        let proj: Vec<f64> = planted_rows(&d)
            .iter()
            .map(|x| x.iter().zip(&d.directions.latent).map(|(a, b)| a * b).sum())
            .collect();
        let (r, _) = pearson_r(&proj, &y).unwrap();
        assert!((r * r - 0.9).abs() < 0.05, "seed {seed}: oracle R² {}", r * r);
    }
}

#[test]
fn ridge_on_planted_row_recovers_target() {
    // The population R² of this readout equals the explainable variance, so
    // single draws scatter around 0.9; the in-sample fit clears it on average.
    let mut fits = Vec::new();
    for seed in 0..10 {
        let d = generate(&spec(seed)).unwrap();
        let y = targets(&d);
        let x = planted_rows(&d);
        let m = ridge_fit(&x, &y, 1e-6).unwrap();
        let p: Vec<f64> = x.iter().map(|v| m.predict(v)).collect();
        let fit = r2(&y, &p).unwrap();
        assert!(fit > 0.85, "seed {seed}: {fit}");
        fits.push(fit);
    }
    assert!(mean_of(&fits) > 0.9, "{fits:?}");
}

#[test]
fn mean_pool_sits_between_single_window_and_oracle() {
    for seed in 0..5 {
        let d = generate(&SynthSpec { t_max: 20, ..spec(seed) }).unwrap();
        let y = targets(&d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let single: Vec<Vec<f64>> = d
            .sequences
            .iter()
            .map(|s| s.row(rng.gen_range(0..s.len())).iter().map(|&v| f64::from(v)).collect())
            .collect();
        let pooled: Vec<Vec<f64>> = d.sequences.iter().map(mean_pool).collect();
        let r_single = holdout_r2(&single, &y, 160);
        let r_pooled = holdout_r2(&pooled, &y, 160);
        let r_oracle = holdout_r2(&planted_rows(&d), &y, 160);
        assert!(r_single < r_pooled && r_pooled < r_oracle, "seed {seed}: {r_single} {r_pooled} {r_oracle}");
    }
}

#[test]
fn background_traits_follow_population_scale() {
    let d = generate(&SynthSpec { n: 400, ..SynthSpec::default() }).unwrap();
    let neuro: Vec<f64> = d.targets.iter().map(|t| t.get(TraitId::Neuroticism)).collect();
    assert!((mean_of(&neuro) - 72.97).abs() < 4.0);
    assert!(d.targets.iter().all(|t| t.violations().is_empty()));
}
