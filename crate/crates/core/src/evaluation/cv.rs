//! K-fold cross-validation over a dataset for one model recipe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::folds::{make_folds, FoldOptions};
use super::metrics::{mean_of, mse, pearson_r, r2, r2_about, sample_std, zscore_fit, Standardizer};
use crate::baselines::{ffn_fit, mean_pool, median_aggregate, ridge_fit, FfnConfig};
use crate::error::{Error, Result};
use crate::manifest::Dataset;
use crate::optim::TrainConfig;
use crate::seq_head::{self, Sample, SeqHeadConfig};
use crate::traits::TraitId;

/// Everything a recipe sees for one (fold, trait) job. Targets are already
/// standardized with statistics of the fold's training pool (train + val).
pub struct FoldData<'a> {
    pub dataset: &'a Dataset,
    pub trait_id: TraitId,
    pub fold: usize,
    pub train: &'a [usize],
    pub val: &'a [usize],
    pub test: &'a [usize],
    pub targets: &'a [f64],
    pub standardizer: Standardizer,
    pub seed: u64,
}

impl FoldData<'_> {
    fn targets_of(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.targets[i]).collect()
    }
}

/// A model family that can be trained on one fold and predict its test items
/// on the standardized scale.
pub trait Recipe: Sync {
    fn name(&self) -> String;
    fn config(&self) -> Value;
    fn fit_predict(&self, fold: &FoldData<'_>) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RnnRecipe {
    pub hidden_size: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub init_seed: u64,
    pub train: TrainConfig,
}

impl Default for RnnRecipe {
    fn default() -> Self {
        RnnRecipe {
            hidden_size: 256,
            num_layers: 2,
            dropout: 0.1,
            init_seed: 0,
            train: TrainConfig::default(),
        }
    }
}

impl RnnRecipe {
    pub fn head_config(&self, input_dim: usize) -> SeqHeadConfig {
        SeqHeadConfig {
            hidden_size: self.hidden_size,
            num_layers: self.num_layers,
            dropout: self.dropout,
            seed: self.init_seed,
            ..SeqHeadConfig::new(input_dim)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FfnRecipe {
    pub hidden: usize,
    pub dropout: f64,
    pub init_seed: u64,
    pub train: TrainConfig,
}

impl Default for FfnRecipe {
    fn default() -> Self {
        FfnRecipe {
            hidden: 256,
            dropout: 0.1,
            init_seed: 0,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Features {
    #[default]
    MeanPool,
    /// One window per transcript, drawn uniformly with the fold seed.
    RandomWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RidgeRecipe {
    pub lambda: f64,
    pub features: Features,
}

impl Default for RidgeRecipe {
    fn default() -> Self {
        RidgeRecipe {
            lambda: 1.0,
            features: Features::MeanPool,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecipeSpec {
    Rnn(RnnRecipe),
    Ffn(FfnRecipe),
    Ridge(RidgeRecipe),
    Median,
}

impl RecipeSpec {
    /// Default settings for a recipe name: `rnn`, `ffn`, `ridge`,
    /// `ridge-window` or `median`.
    pub fn named(name: &str) -> Result<Self> {
        Ok(match name {
            "rnn" => RecipeSpec::Rnn(RnnRecipe::default()),
            "ffn" => RecipeSpec::Ffn(FfnRecipe::default()),
            "ridge" => RecipeSpec::Ridge(RidgeRecipe::default()),
            "ridge-window" => RecipeSpec::Ridge(RidgeRecipe {
                features: Features::RandomWindow,
                ..RidgeRecipe::default()
            }),
            "median" => RecipeSpec::Median,
            other => {
                return Err(Error::invalid(format!(
                    "unknown recipe {other:?} (expected rnn, ffn, ridge, ridge-window or median)"
                )))
            }
        })
    }
}

fn features(data: &FoldData<'_>, idx: &[usize], kind: Features) -> Vec<Vec<f64>> {
    idx.iter()
        .map(|&i| {
            let seq = &data.dataset.items[i].sequence;
            match kind {
                Features::MeanPool => mean_pool(seq),
                Features::RandomWindow => {
                    let mut rng = ChaCha8Rng::seed_from_u64(data.seed);
                    rng.set_stream(i as u64);
                    let t = rng.gen_range(0..seq.len());
                    seq.row(t).iter().map(|&v| f64::from(v)).collect()
                }
            }
        })
        .collect()
}

impl Recipe for RecipeSpec {
    fn name(&self) -> String {
        match self {
            RecipeSpec::Rnn(_) => "rnn".into(),
            RecipeSpec::Ffn(_) => "ffn".into(),
            RecipeSpec::Ridge(r) => match r.features {
                Features::MeanPool => "ridge".into(),
                Features::RandomWindow => "ridge-window".into(),
            },
            RecipeSpec::Median => "median".into(),
        }
    }

    fn config(&self) -> Value {
        serde_json::to_value(self).unwrap_or(Value::Null)
    }

    fn fit_predict(&self, data: &FoldData<'_>) -> Result<Vec<f64>> {
        let items = &data.dataset.items;
        match self {
            RecipeSpec::Rnn(r) => {
                let cfg = r.head_config(data.dataset.dim);
                let samples = |idx: &[usize]| -> Vec<Sample<'_>> {
                    idx.iter()
                        .map(|&i| Sample {
                            sequence: &items[i].sequence,
                            target: vec![data.targets[i]],
                        })
                        .collect()
                };
                let model = seq_head::fit(&cfg, &samples(data.train), &samples(data.val), &r.train)?;
                data.test
                    .iter()
                    .map(|&i| model.predict_scalar(&items[i].sequence))
                    .collect()
            }
            RecipeSpec::Ffn(r) => {
                let cfg = FfnConfig {
                    hidden: r.hidden,
                    dropout: r.dropout,
                    seed: r.init_seed,
                    ..FfnConfig::new(data.dataset.dim)
                };
                let f = |idx: &[usize]| features(data, idx, Features::MeanPool);
                let model = ffn_fit(
                    &cfg,
                    &f(data.train),
                    &data.targets_of(data.train),
                    &f(data.val),
                    &data.targets_of(data.val),
                    &r.train,
                )?;
                Ok(f(data.test).iter().map(|x| model.predict(x)).collect())
            }
            RecipeSpec::Ridge(r) => {
                let pool: Vec<usize> = data.train.iter().chain(data.val).copied().collect();
                let model = ridge_fit(&features(data, &pool, r.features), &data.targets_of(&pool), r.lambda)?;
                Ok(features(data, data.test, r.features).iter().map(|x| model.predict(x)).collect())
            }
            RecipeSpec::Median => data
                .test
                .iter()
                .map(|&i| {
                    let preds = items[i].window_predictions.as_ref().ok_or_else(|| {
                        Error::invalid(format!("no window predictions for {}", items[i].id()))
                    })?;
                    let raw: Vec<f64> = preds.iter().map(|&v| f64::from(v)).collect();
                    Ok(data.standardizer.apply(median_aggregate(&raw)?))
                })
                .collect(),
        }
    }
}

/// Predicts the standardized truth; R² = 1 on every fold.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleRecipe;

impl Recipe for OracleRecipe {
    fn name(&self) -> String {
        "oracle".into()
    }
    fn config(&self) -> Value {
        Value::Null
    }
    fn fit_predict(&self, data: &FoldData<'_>) -> Result<Vec<f64>> {
        Ok(data.targets_of(data.test))
    }
}

/// Predicts the training-pool mean (zero on the standardized scale).
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanRecipe;

impl Recipe for MeanRecipe {
    fn name(&self) -> String {
        "mean".into()
    }
    fn config(&self) -> Value {
        Value::Null
    }
    fn fit_predict(&self, data: &FoldData<'_>) -> Result<Vec<f64>> {
        let pool: Vec<usize> = data.train.iter().chain(data.val).copied().collect();
        let m = mean_of(&data.targets_of(&pool));
        Ok(vec![m; data.test.len()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum R2Reference {
    #[default]
    TestMean,
    TrainMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvOptions {
    pub folds: FoldOptions,
    pub traits: Vec<TraitId>,
    pub r2_reference: R2Reference,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            folds: FoldOptions::default(),
            traits: TraitId::ALL.to_vec(),
            r2_reference: R2Reference::TestMean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub mse: f64,
    pub r2: f64,
    /// Population variance of the standardized test targets (`SS_tot / n`).
    pub target_variance: f64,
    pub pearson: Option<Correlation>,
    /// Correlation of predictions with transcript length in tokens.
    pub length_bias: Option<Correlation>,
    pub gender_bias: Option<Correlation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    #[serde(rename = "trait")]
    pub trait_id: TraitId,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub standardizer: Option<Standardizer>,
    pub metrics: Option<FoldMetrics>,
    pub error: Option<String>,
    /// The error was a training divergence.
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation over folds.
    pub std: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Summary> {
        (!values.is_empty()).then(|| Summary {
            mean: mean_of(values),
            std: sample_std(values),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitSummary {
    #[serde(rename = "trait")]
    pub trait_id: TraitId,
    pub folds_ok: usize,
    pub mse: Option<Summary>,
    pub r2: Option<Summary>,
    pub pearson: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recipe: String,
    pub config: Value,
    pub folds: Vec<FoldResult>,
    pub summary: Vec<TraitSummary>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn trait_summary(&self, t: TraitId) -> Option<&TraitSummary> {
        self.summary.iter().find(|s| s.trait_id == t)
    }

    pub fn errors(&self) -> impl Iterator<Item = &FoldResult> {
        self.folds.iter().filter(|f| f.error.is_some())
    }

    pub fn diverged(&self) -> bool {
        self.folds.iter().any(|f| f.diverged)
    }
}

fn correlation(x: &[f64], y: &[f64]) -> Option<Correlation> {
    pearson_r(x, y).ok().map(|(r, p)| Correlation { r, p })
}

fn score(
    data: &Dataset,
    test: &[usize],
    y: &[f64],
    yhat: &[f64],
    reference: R2Reference,
) -> Result<FoldMetrics> {
    if yhat.len() != y.len() {
        return Err(Error::Shape(format!("{} predictions for {} test items", yhat.len(), y.len())));
    }
    if let Some(i) = yhat.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("prediction for {}", data.items[test[i]].id())));
    }
    let m = mean_of(y);
    let target_variance = y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / y.len() as f64;
    let r2 = match reference {
        R2Reference::TestMean => r2(y, yhat)?,
        R2Reference::TrainMean => r2_about(y, yhat, 0.0)?,
    };
    let lengths: Vec<f64> = test.iter().map(|&i| data.items[i].n_tokens as f64).collect();
    let genders: Option<Vec<f64>> = test
        .iter()
        .map(|&i| data.items[i].gender.map(f64::from))
        .collect();
    Ok(FoldMetrics {
        mse: mse(y, yhat)?,
        r2,
        target_variance,
        pearson: correlation(y, yhat),
        length_bias: correlation(yhat, &lengths),
        gender_bias: genders.and_then(|g| correlation(yhat, &g)),
    })
}

/// Runs every (fold, trait) job, in parallel, and assembles the report. A
/// failing job is recorded with its error and the run continues.
pub fn cross_validate(dataset: &Dataset, recipe: &dyn Recipe, opts: &CvOptions) -> Result<EvalReport> {
    if opts.traits.is_empty() {
        return Err(Error::invalid("no traits selected"));
    }
    let ids = dataset.ids();
    let plan = make_folds(&ids, &opts.folds)?;
    let position: std::collections::HashMap<&str, usize> =
        ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let to_idx = |v: &[String]| -> Vec<usize> { v.iter().map(|id| position[id.as_str()]).collect() };
    let splits: Vec<(Vec<usize>, Vec<usize>, Vec<usize>)> = plan
        .folds
        .iter()
        .map(|f| (to_idx(&f.train), to_idx(&f.val), to_idx(&f.test)))
        .collect();

    let jobs: Vec<(usize, TraitId)> = (0..splits.len())
        .flat_map(|f| opts.traits.iter().map(move |&t| (f, t)))
        .collect();

    let folds: Vec<FoldResult> = jobs
        .par_iter()
        .map(|&(fold, trait_id)| {
            let (train, val, test) = &splits[fold];
            let mut result = FoldResult {
                fold,
                trait_id,
                n_train: train.len(),
                n_val: val.len(),
                n_test: test.len(),
                standardizer: None,
                metrics: None,
                error: None,
                diverged: false,
            };
            let run = || -> Result<(Standardizer, FoldMetrics)> {
                let raw: Vec<f64> = dataset.items.iter().map(|it| it.target(trait_id)).collect();
                let pool: Vec<f64> = train.iter().chain(val).map(|&i| raw[i]).collect();
                let st = zscore_fit(&pool)?;
                let targets = st.apply_all(&raw);
                let data = FoldData {
                    dataset,
                    trait_id,
                    fold,
                    train,
                    val,
                    test,
                    targets: &targets,
                    standardizer: st,
                    seed: opts.folds.seed,
                };
                let yhat = recipe.fit_predict(&data)?;
                let y: Vec<f64> = test.iter().map(|&i| targets[i]).collect();
                Ok((st, score(dataset, test, &y, &yhat, opts.r2_reference)?))
            };
            match run() {
                Ok((st, m)) => {
                    result.standardizer = Some(st);
                    result.metrics = Some(m);
                }
                Err(e) => {
                    result.diverged = matches!(e, Error::Divergence { .. });
                    result.error = Some(e.to_string());
                }
            }
            result
        })
        .collect();

    let summary = opts
        .traits
        .iter()
        .map(|&t| {
            let ok: Vec<&FoldMetrics> = folds
                .iter()
                .filter(|f| f.trait_id == t)
                .filter_map(|f| f.metrics.as_ref())
                .collect();
            let pick = |g: fn(&FoldMetrics) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|m| g(m)).collect() };
            TraitSummary {
                trait_id: t,
                folds_ok: ok.len(),
                mse: Summary::of(&pick(|m| Some(m.mse))),
                r2: Summary::of(&pick(|m| Some(m.r2))),
                pearson: Summary::of(&pick(|m| m.pearson.as_ref().map(|c| c.r))),
            }
        })
        .collect();

    Ok(EvalReport {
        recipe: recipe.name(),
        config: json!({ "recipe": recipe.config(), "cv": opts }),
        folds,
        summary,
    })
}

/// One row per report, columns `<trait>_<metric>_{mean,std}` for MSE and R².
pub fn reports_to_csv(reports: &[EvalReport]) -> Result<String> {
    let traits: Vec<TraitId> = reports
        .first()
        .map(|r| r.summary.iter().map(|s| s.trait_id).collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["recipe".to_string()];
    for t in &traits {
        for m in ["mse", "r2"] {
            header.push(format!("{}_{m}_mean", t.name()));
            header.push(format!("{}_{m}_std", t.name()));
        }
    }
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![r.recipe.clone()];
        for &t in &traits {
            let s = r.trait_summary(t);
            for pick in [|s: &TraitSummary| s.mse.clone(), |s: &TraitSummary| s.r2.clone()] {
                match s.and_then(pick) {
                    Some(v) => {
                        row.push(v.mean.to_string());
                        row.push(v.std.to_string());
                    }
                    None => row.extend([String::new(), String::new()]),
                }
            }
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};

    fn data(n: usize) -> Dataset {
        generate(&SynthSpec { n, ..SynthSpec::default() }).unwrap().to_dataset()
    }

    #[test]
    fn oracle_is_perfect() {
        let ds = data(40);
        let rep = cross_validate(&ds, &OracleRecipe, &CvOptions::default()).unwrap();
        assert_eq!(rep.folds.len(), 25);
        for f in &rep.folds {
            let m = f.metrics.as_ref().unwrap();
            assert_eq!(m.mse, 0.0);
            assert_eq!(m.r2, 1.0);
        }
    }

    #[test]
    fn mean_predictor_near_zero() {
        let opts = CvOptions { traits: vec![TraitId::Openness], ..CvOptions::default() };
        let mut means = Vec::new();
        for seed in 0..8 {
            let ds = generate(&SynthSpec { n: 200, seed, ..SynthSpec::default() }).unwrap().to_dataset();
            let rep = cross_validate(&ds, &MeanRecipe, &opts).unwrap();
            for f in &rep.folds {
                let m = f.metrics.as_ref().unwrap();
                assert!((m.r2 - (1.0 - m.mse / m.target_variance)).abs() < 1e-12);
                assert!(m.pearson.is_none());
            }
            means.push(rep.trait_summary(TraitId::Openness).unwrap().r2.as_ref().unwrap().mean);

            let about_train = CvOptions { r2_reference: R2Reference::TrainMean, ..opts.clone() };
            let rep = cross_validate(&ds, &MeanRecipe, &about_train).unwrap();
            for f in &rep.folds {
                assert!(f.metrics.as_ref().unwrap().r2.abs() < 1e-12);
            }
        }
        assert!(mean_of(&means).abs() < 0.05, "{means:?}");
    }

    #[test]
    fn summary_matches_fold_values() {
        let ds = data(60);
        let rep = cross_validate(&ds, &RecipeSpec::named("ridge").unwrap(), &CvOptions::default()).unwrap();
        for s in &rep.summary {
            let r2s: Vec<f64> = rep
                .folds
                .iter()
                .filter(|f| f.trait_id == s.trait_id)
                .map(|f| f.metrics.as_ref().unwrap().r2)
                .collect();
            let got = s.r2.as_ref().unwrap();
            assert_eq!(got.mean, mean_of(&r2s));
            assert_eq!(got.std, sample_std(&r2s));
        }
        let csv = reports_to_csv(&[rep]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), 21);
        assert!(lines[1].starts_with("ridge,"));
    }

    #[test]
    fn median_uses_window_predictions() {
        let mut ds = data(30);
        let opts = CvOptions { traits: vec![TraitId::Openness], ..CvOptions::default() };
        let rep = cross_validate(&ds, &RecipeSpec::Median, &opts).unwrap();
        assert!(rep.errors().next().is_none());
        ds.items[3].window_predictions = None;
        let rep = cross_validate(&ds, &RecipeSpec::Median, &opts).unwrap();
        assert_eq!(rep.errors().count(), 1);
        assert!(rep.errors().next().unwrap().error.as_ref().unwrap().contains("synth-03"));
    }

    #[test]
    fn recipe_json() {
        let spec: RecipeSpec = serde_json::from_str(r#"{"kind":"ridge","lambda":0.5}"#).unwrap();
        assert_eq!(spec, RecipeSpec::Ridge(RidgeRecipe { lambda: 0.5, features: Features::MeanPool }));
        let spec: RecipeSpec =
            serde_json::from_str(r#"{"kind":"rnn","hidden_size":8,"train":{"learning_rate":0.01}}"#).unwrap();
        match spec {
            RecipeSpec::Rnn(r) => {
                assert_eq!(r.hidden_size, 8);
                assert_eq!(r.train.learning_rate, 0.01);
                assert_eq!(r.train.batch_size, TrainConfig::default().batch_size);
            }
            other => panic!("{other:?}"),
        }
        let err = serde_json::from_str::<RecipeSpec>(r#"{"kind":"rnn","train":{"learnign_rate":0.01}}"#).unwrap_err();
        assert!(err.to_string().contains("learnign_rate"), "{err}");
        assert!(RecipeSpec::named("lstm").is_err());
    }

    #[test]
    fn divergence_is_recorded_per_fold() {
        let ds = data(20);
        let recipe = RecipeSpec::Rnn(RnnRecipe {
            hidden_size: 4,
            train: TrainConfig { learning_rate: 1e200, max_epochs: 3, patience: None, ..TrainConfig::default() },
            ..RnnRecipe::default()
        });
        let opts = CvOptions { traits: vec![TraitId::Openness], ..CvOptions::default() };
        let rep = cross_validate(&ds, &recipe, &opts).unwrap();
        assert_eq!(rep.folds.len(), 5);
        assert!(rep.errors().count() > 0);
        assert!(rep.diverged(), "{:?}", rep.errors().map(|f| &f.error).collect::<Vec<_>>());
    }
}
