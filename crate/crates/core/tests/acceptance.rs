//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints exactly one PASS/FAIL line; exits non-zero if any fails.

use std::time::{Duration, Instant};

use longtrait::baselines::{median_aggregate, ridge_fit};
use longtrait::embedding::{EmbeddingSequence, PaddedBatch};
use longtrait::evaluation::{
    cross_validate, pearson_r, r2, zscore_fit, CvOptions, FfnRecipe, FoldOptions, Recipe, RecipeSpec, RidgeRecipe,
    RnnRecipe, Features,
};
use longtrait::interpret::{attention_profile, removal_impact};
use longtrait::optim::TrainConfig;
use longtrait::seq_head::{
    attention_pool, backward, fit, init_params, loss_mse, masked_softmax, predict, predict_batch, Sample,
    SeqHeadConfig, SeqHeadParams,
};
use longtrait::synth::{generate, SynthSpec};
use longtrait::TraitId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_seq(rng: &mut ChaCha8Rng, id: &str, t: usize, d: usize) -> EmbeddingSequence {
    let rows = (0..t * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    EmbeddingSequence::new(id, d, rows, 200).unwrap()
}

fn batch_loss(params: &SeqHeadParams, batch: &PaddedBatch, y: &[f64]) -> f64 {
    let preds: Vec<f64> = predict_batch(params, batch)
        .unwrap()
        .iter()
        .map(|t| t.prediction[0])
        .collect();
    loss_mse(&preds, y).unwrap()
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for seed in 0..12u64 {
        let cfg = SeqHeadConfig {
            hidden_size: 4,
            num_layers: 2,
            dropout: 0.0,
            seed,
            ..SeqHeadConfig::new(8)
        };
        let params = init_params(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let lengths = [5, rng.gen_range(1..=5), rng.gen_range(1..=5)];
        let seqs: Vec<_> = lengths
            .iter()
            .enumerate()
            .map(|(i, &t)| random_seq(&mut rng, &format!("g{i}"), t, 8))
            .collect();
        let refs: Vec<&EmbeddingSequence> = seqs.iter().collect();
        let batch = PaddedBatch::from_sequences(&refs, Some(5)).unwrap();
        let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (_, grad) = backward(&params, &batch, &y).unwrap();
        for (i, &g) in grad.iter().enumerate() {
            let mut plus = params.clone();
            plus.values_mut()[i] += eps;
            let mut minus = params.clone();
            minus.values_mut()[i] -= eps;
            let fd = (batch_loss(&plus, &batch, &y) - batch_loss(&minus, &batch, &y)) / (2.0 * eps);
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-8);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-4 && elapsed < Duration::from_secs(10),
        format!("12 configs, {checked} partials, max rel err {worst:.2e}, {elapsed:.2?}"),
    )
}

fn attention_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_sum = 0.0f64;
    let mut worst_shift = 0.0f64;
    let cases = 5000;
    for _ in 0..cases {
        let steps = rng.gen_range(1..16);
        let pad = rng.gen_range(0..6);
        let width = rng.gen_range(1..8);
        let total = steps + pad;
        let hidden: Vec<f64> = (0..total * width).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let a: Vec<f64> = (0..width).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mask: Vec<bool> = (0..total).map(|t| t < steps).collect();
        let (alpha, _) = attention_pool(&hidden, &mask, &a).unwrap();
        worst_sum = worst_sum.max((alpha.iter().sum::<f64>() - 1.0).abs());
        if alpha[steps..].iter().any(|&x| x != 0.0) {
            return Err("masked step received weight".into());
        }
        let scores: Vec<f64> = hidden.chunks(width).map(|h| h.iter().zip(&a).map(|(x, y)| x * y).sum()).collect();
        let k = rng.gen_range(-100.0..100.0);
        let shifted: Vec<f64> = scores.iter().map(|s| s + k).collect();
        let base = masked_softmax(&scores, &mask).unwrap();
        let moved = masked_softmax(&shifted, &mask).unwrap();
        for (x, y) in base.iter().zip(&moved) {
            worst_shift = worst_shift.max((x - y).abs());
        }
    }
    let mut padded_equal = 0;
    for seed in 0..200u64 {
        let cfg = SeqHeadConfig {
            hidden_size: 6,
            seed,
            ..SeqHeadConfig::new(5)
        };
        let params = init_params(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.gen_range(1..10);
        let s = random_seq(&mut rng, "p", len, 5);
        let plain = predict(&params, &s).unwrap();
        let other = random_seq(&mut rng, "q", 12, 5);
        let batch = PaddedBatch::from_sequences(&[&s, &other], Some(14)).unwrap();
        let padded = &predict_batch(&params, &batch).unwrap()[0];
        if padded.prediction == plain.prediction && padded.true_alpha() == plain.true_alpha() {
            padded_equal += 1;
        }
    }
    check(
        worst_sum <= 1e-12 && worst_shift <= 1e-12 && padded_equal == 200,
        format!(
            "{cases} cases: max |Σα−1| {worst_sum:.1e}, max shift diff {worst_shift:.1e}; padding bit-exact {padded_equal}/200"
        ),
    )
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let spec = SynthSpec {
        n: 16,
        dim: 8,
        t_min: 3,
        t_max: 8,
        seed: 3,
        ..SynthSpec::default()
    };
    let data = generate(&spec).unwrap();
    let raw: Vec<f64> = data.targets.iter().map(|t| t.get(spec.signal_trait)).collect();
    let st = zscore_fit(&raw).unwrap();
    let samples: Vec<Sample<'_>> = data
        .sequences
        .iter()
        .zip(&raw)
        .map(|(s, &y)| Sample {
            sequence: s,
            target: vec![st.apply(y)],
        })
        .collect();
    let cfg = SeqHeadConfig {
        hidden_size: 16,
        dropout: 0.0,
        ..SeqHeadConfig::new(8)
    };
    let tc = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 16,
        max_epochs: 2000,
        patience: None,
        seed: 1,
        ..TrainConfig::default()
    };
    let a = fit(&cfg, &samples, &[], &tc).map_err(|e| e.to_string())?;
    let b = fit(&cfg, &samples, &[], &tc).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let preds: Vec<f64> = samples.iter().map(|s| a.predict_scalar(s.sequence).unwrap()).collect();
    let targets: Vec<f64> = samples.iter().map(|s| s.target[0]).collect();
    let final_mse = loss_mse(&preds, &targets).unwrap();
    let first = a
        .history
        .as_ref()
        .unwrap()
        .train_loss
        .iter()
        .position(|&l| l < 1e-3);
    check(
        final_mse < 1e-3 && first.is_some() && a == b && elapsed < Duration::from_secs(60),
        format!(
            "train MSE {final_mse:.2e}, first below 1e-3 at epoch {:?}, deterministic {}, {elapsed:.2?} for two fits",
            first.map(|e| e + 1),
            a == b
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn localization() -> Outcome {
    let start = Instant::now();
    let spec = SynthSpec {
        n: 200,
        snr: 10.0,
        raw_mean: Some(100.0),
        raw_sd: Some(50.0),
        seed: 0,
        ..SynthSpec::default()
    };
    let data = generate(&spec).unwrap();
    let raw: Vec<f64> = data.targets.iter().map(|t| t.get(spec.signal_trait)).collect();
    let (train, test) = (0..150, 150..200);
    let st = zscore_fit(&raw[train.clone()]).unwrap();
    let samples: Vec<Sample<'_>> = train
        .map(|i| Sample {
            sequence: &data.sequences[i],
            target: vec![st.apply(raw[i])],
        })
        .collect();
    let cfg = SeqHeadConfig {
        hidden_size: 16,
        dropout: 0.5,
        ..SeqHeadConfig::new(spec.dim)
    };
    let tc = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 16,
        max_epochs: 300,
        patience: None,
        ..TrainConfig::default()
    };
    let model = fit(&cfg, &samples, &[], &tc).map_err(|e| e.to_string())?;

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut hits = 0;
    let mut top_shift = Vec::new();
    let mut other_shift = Vec::new();
    for i in test {
        let seq = &data.sequences[i];
        let profile = attention_profile(&model, seq, Some(&st)).unwrap();
        let top = profile.argmax();
        if top == data.truth[i].planted_indices[0] {
            hits += 1;
        }
        let other = loop {
            let j = rng.gen_range(0..seq.len());
            if j != top {
                break j;
            }
        };
        let pct = |j| {
            removal_impact(&model, seq, j, &st)
                .unwrap()
                .percent_change
                .map_or(0.0, f64::abs)
        };
        top_shift.push(pct(top));
        other_shift.push(pct(other));
    }
    let (top_med, other_med) = (median(top_shift), median(other_shift));
    let elapsed = start.elapsed();
    check(
        hits >= 40 && top_med >= 20.0 && other_med < 5.0 && elapsed < Duration::from_secs(300),
        format!(
            "argmax = planted in {hits}/50, median |Δ| top {top_med:.1}% vs random other {other_med:.1}%, {elapsed:.2?}"
        ),
    )
}

fn ablation() -> Outcome {
    let start = Instant::now();
    let spec = SynthSpec {
        snr: 10.0,
        seed: 1,
        ..SynthSpec::sequential()
    };
    let dataset = generate(&spec).unwrap().to_dataset();
    let opts = CvOptions {
        folds: FoldOptions {
            val_fraction: 0.0,
            seed: 2,
            ..FoldOptions::default()
        },
        traits: vec![spec.signal_trait],
        ..CvOptions::default()
    };
    let rnn = RecipeSpec::Rnn(RnnRecipe {
        hidden_size: 16,
        dropout: 0.5,
        train: TrainConfig {
            learning_rate: 1e-2,
            batch_size: 16,
            max_epochs: 300,
            patience: None,
            ..TrainConfig::default()
        },
        ..RnnRecipe::default()
    });
    let ffn = RecipeSpec::Ffn(FfnRecipe {
        hidden: 64,
        train: TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            max_epochs: 300,
            patience: Some(20),
            ..TrainConfig::default()
        },
        ..FfnRecipe::default()
    });
    let window = RecipeSpec::Ridge(RidgeRecipe {
        features: Features::RandomWindow,
        ..RidgeRecipe::default()
    });
    let mean_r2 = |recipe: &dyn Recipe| -> Result<f64, String> {
        let rep = cross_validate(&dataset, recipe, &opts).map_err(|e| e.to_string())?;
        if let Some(f) = rep.errors().next() {
            return Err(format!("{} fold {}: {:?}", rep.recipe, f.fold, f.error));
        }
        Ok(rep.trait_summary(spec.signal_trait).unwrap().r2.as_ref().unwrap().mean)
    };
    let r_rnn = mean_r2(&rnn)?;
    let r_ffn = mean_r2(&ffn)?;
    let r_win = mean_r2(&window)?;
    check(
        r_rnn >= r_ffn + 0.2 && r_ffn >= r_win,
        format!(
            "5-fold R²: seq head {r_rnn:.3}, FFN {r_ffn:.3}, ridge on one random window {r_win:.3}, {:.2?}",
            start.elapsed()
        ),
    )
}

/// Minimizes `‖Xc w − yc‖² + λ‖w‖²` by plain gradient descent.
fn ridge_by_descent(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let n = x.len();
    let d = x[0].len();
    let xm: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let ym = y.iter().sum::<f64>() / n as f64;
    let xc: Vec<Vec<f64>> = x.iter().map(|r| r.iter().zip(&xm).map(|(a, m)| a - m).collect()).collect();
    // step below 1 / (largest eigenvalue of XᵀX + λ), bounded by the trace
    let trace: f64 = xc.iter().flatten().map(|v| v * v).sum();
    let step = 1.0 / (trace + lambda);
    let mut w = vec![0.0; d];
    for _ in 0..200_000 {
        let mut g: Vec<f64> = w.iter().map(|wi| lambda * wi).collect();
        for (row, &yi) in xc.iter().zip(y) {
            let r: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - (yi - ym);
            for (gj, a) in g.iter_mut().zip(row) {
                *gj += r * a;
            }
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        w.iter_mut().zip(&g).for_each(|(wi, gi)| *wi -= step * gi);
        if norm < 1e-13 {
            break;
        }
    }
    let b = ym - w.iter().zip(&xm).map(|(a, m)| a * m).sum::<f64>();
    (w, b)
}

fn oracle_equivalences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2000 {
        let n = rng.gen_range(1..40);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-10..10) as f64).collect();
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        let expect = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
        if median_aggregate(&v).unwrap() != expect {
            return Err(format!("median mismatch on {v:?}"));
        }
    }
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let (n, d) = (30, 6);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| r.iter().enumerate().map(|(j, v)| (j as f64 - 2.0) * v).sum::<f64>() + rng.gen_range(-0.3..0.3))
            .collect();
        let lambda = rng.gen_range(0.1..3.0);
        let closed = ridge_fit(&x, &y, lambda).unwrap();
        let (w, b) = ridge_by_descent(&x, &y, lambda);
        for (a, c) in closed.weights.iter().zip(&w) {
            worst = worst.max((a - c).abs());
        }
        worst = worst.max((closed.intercept - b).abs());
    }
    let r2_hand = r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap();
    let (r_hand, _) = pearson_r(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
    check(
        worst < 1e-6 && (r2_hand - 0.5).abs() < 1e-12 && (r_hand - 0.5).abs() < 1e-12,
        format!("median ≡ sort on 2000 lists; ridge closed form vs descent max diff {worst:.1e}; R² {r2_hand}, r {r_hand}"),
    )
}

fn protocol_determinism() -> Outcome {
    let dataset = generate(&SynthSpec {
        n: 60,
        seed: 4,
        ..SynthSpec::default()
    })
    .unwrap()
    .to_dataset();
    let opts = CvOptions {
        folds: FoldOptions {
            seed: 11,
            ..FoldOptions::default()
        },
        traits: vec![TraitId::Openness, TraitId::Agreeableness],
        ..CvOptions::default()
    };
    let rnn = RecipeSpec::Rnn(RnnRecipe {
        hidden_size: 4,
        train: TrainConfig {
            learning_rate: 1e-2,
            max_epochs: 6,
            patience: Some(3),
            batch_size: 8,
            ..TrainConfig::default()
        },
        ..RnnRecipe::default()
    });
    let recipes = [rnn, RecipeSpec::named("ridge").unwrap(), RecipeSpec::named("median").unwrap()];
    let mut worst = 0.0f64;
    for recipe in &recipes {
        let a = cross_validate(&dataset, recipe, &opts).map_err(|e| e.to_string())?;
        let b = cross_validate(&dataset, recipe, &opts).map_err(|e| e.to_string())?;
        if a.to_json().unwrap() != b.to_json().unwrap() {
            return Err(format!("{} reports differ between runs", a.recipe));
        }
        for f in &a.folds {
            let m = f.metrics.as_ref().ok_or(format!("{} fold {}: {:?}", a.recipe, f.fold, f.error))?;
            worst = worst.max((m.r2 - (1.0 - m.mse / m.target_variance)).abs());
        }
    }
    check(
        worst < 1e-12,
        format!("rnn, ridge, median: byte-identical reports; max |R² − (1 − MSE/var)| {worst:.1e}"),
    )
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("gradient oracle", gradient_oracle),
        ("attention invariants", attention_invariants),
        ("overfit oracle", overfit),
        ("localization", localization),
        ("ablation ordering", ablation),
        ("oracle equivalences", oracle_equivalences),
        ("protocol determinism", protocol_determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
