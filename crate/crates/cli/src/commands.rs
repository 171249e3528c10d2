use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use longtrait::baselines::{ffn_fit, mean_pool, ridge_fit, FfnConfig};
use longtrait::embedding::EmbeddingSequence;
use longtrait::evaluation::{
    cross_validate, mse, r2, reports_to_csv, train_val_split, zscore_fit, CvOptions, EvalReport, Features, Recipe,
    RecipeSpec, Standardizer,
};
use longtrait::interpret::{
    attention_profiles, export_heatmap, export_top_windows, removal_impact, top_k_windows, trait_overlap,
    AttentionProfile, ImpactResult,
};
use longtrait::manifest::{validate_manifest, Dataset, DatasetManifest, ValidationOptions};
use longtrait::seq_head::{self, Sample, SeqHeadModel};
use longtrait::synth::generate;
use longtrait::windowing::plan_windows;
use longtrait::TraitId;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MODEL_FILE: &str = "model.ltrm";

type Predictor<'a> = Box<dyn Fn(usize) -> longtrait::Result<f64> + 'a>;

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

fn open_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    let path = cfg.manifest_path()?;
    if !path.is_file() {
        return Err(CliError::data(format!("manifest {} not found", path.display())));
    }
    Ok(Dataset::open(path)?)
}

pub fn synth(cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.out_dir();
    create_dir(&out)?;
    let data = generate(&cfg.synth)?;
    let manifest = data.write(&out)?;
    cfg.write(&out)?;
    println!("{}", manifest.display());
    eprintln!("wrote {} transcripts (dim {})", data.sequences.len(), cfg.synth.dim);
    Ok(())
}

pub fn plan(cfg: &RunConfig) -> CliResult<()> {
    let tokens = cfg
        .tokens
        .ok_or_else(|| CliError::usage("--tokens is required (flag or config key \"tokens\")"))?;
    let plan = plan_windows(tokens, cfg.window.w, cfg.window.s, cfg.window.cap)
        .map_err(|e| CliError::usage(e.to_string()))?;
    for (start, end) in &plan.spans {
        println!("{start}\t{end}");
    }
    if let Some(out) = &cfg.out {
        create_dir(out)?;
        write_json(&out.join("plan.json"), &plan)?;
        cfg.write(out)?;
    }
    Ok(())
}

pub fn validate(cfg: &RunConfig) -> CliResult<()> {
    let path = cfg.manifest_path()?;
    let manifest = DatasetManifest::read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let report = validate_manifest(&manifest, base, &ValidationOptions::default());
    for f in &report.findings {
        println!("{}\t{}", f.transcript_id, f.violation.describe());
    }
    if let Some(out) = &cfg.out {
        create_dir(out)?;
        write_json(&out.join("validation.json"), &report)?;
        cfg.write(out)?;
    }
    if report.is_valid() {
        eprintln!("{} entries, no findings", manifest.entries.len());
        Ok(())
    } else {
        Err(CliError::data(format!(
            "{} finding(s) in {}",
            report.findings.len(),
            path.display()
        )))
    }
}

#[derive(Debug, Serialize)]
struct FitSummary {
    #[serde(rename = "trait")]
    trait_id: TraitId,
    recipe: String,
    model: PathBuf,
    n_train: usize,
    n_val: usize,
    standardizer: Standardizer,
    train_mse: f64,
    train_r2: Option<f64>,
    val_mse: Option<f64>,
    val_r2: Option<f64>,
    epochs: Option<usize>,
}

fn fit_one(
    recipe: &RecipeSpec,
    dataset: &Dataset,
    trait_id: TraitId,
    train: &[usize],
    val: &[usize],
    dir: &Path,
) -> CliResult<FitSummary> {
    let items = &dataset.items;
    let raw: Vec<f64> = items.iter().map(|it| it.target(trait_id)).collect();
    let pool: Vec<f64> = train.iter().chain(val).map(|&i| raw[i]).collect();
    let st = zscore_fit(&pool)?;
    let z = st.apply_all(&raw);
    let pick = |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| z[i]).collect() };
    let pooled = |idx: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|&i| mean_pool(&items[i].sequence)).collect() };
    create_dir(dir)?;
    let model_path = dir.join(MODEL_FILE);

    let (predict, epochs): (Predictor<'_>, Option<usize>) = match recipe {
        RecipeSpec::Rnn(r) => {
            let samples = |idx: &[usize]| -> Vec<Sample<'_>> {
                idx.iter()
                    .map(|&i| Sample {
                        sequence: &items[i].sequence,
                        target: vec![z[i]],
                    })
                    .collect()
            };
            let mut model = seq_head::fit(&r.head_config(dataset.dim), &samples(train), &samples(val), &r.train)?;
            model.trait_id = Some(trait_id);
            model.standardizer = Some(st);
            model.save(&model_path)?;
            let epochs = model.history.as_ref().map(|h| h.train_loss.len());
            (Box::new(move |i| model.predict_scalar(&items[i].sequence)), epochs)
        }
        RecipeSpec::Ffn(r) => {
            let cfg = FfnConfig {
                hidden: r.hidden,
                dropout: r.dropout,
                seed: r.init_seed,
                ..FfnConfig::new(dataset.dim)
            };
            let mut model = ffn_fit(&cfg, &pooled(train), &pick(train), &pooled(val), &pick(val), &r.train)?;
            model.trait_id = Some(trait_id);
            model.standardizer = Some(st);
            model.to_checkpoint()?.write(&model_path)?;
            let epochs = model.history.as_ref().map(|h| h.train_loss.len());
            (Box::new(move |i| Ok(model.predict(&mean_pool(&items[i].sequence)))), epochs)
        }
        RecipeSpec::Ridge(r) if r.features == Features::MeanPool => {
            let all: Vec<usize> = train.iter().chain(val).copied().collect();
            let mut model = ridge_fit(&pooled(&all), &pick(&all), r.lambda)?;
            model.trait_id = Some(trait_id);
            model.standardizer = Some(st);
            model.to_checkpoint()?.write(&model_path)?;
            (Box::new(move |i| Ok(model.predict(&mean_pool(&items[i].sequence)))), None)
        }
        other => {
            return Err(CliError::usage(format!(
                "recipe {} has nothing to train; use rnn, ffn or ridge",
                other.name()
            )))
        }
    };

    let scores = |idx: &[usize]| -> CliResult<Option<(f64, Option<f64>)>> {
        if idx.is_empty() {
            return Ok(None);
        }
        let yhat: Vec<f64> = idx.iter().map(|&i| predict(i)).collect::<longtrait::Result<_>>()?;
        let y = pick(idx);
        Ok(Some((mse(&y, &yhat)?, r2(&y, &yhat).ok())))
    };
    let (train_mse, train_r2) = scores(train)?.expect("training set is not empty");
    let val_scores = scores(val)?;
    Ok(FitSummary {
        trait_id,
        recipe: recipe.name(),
        model: model_path,
        n_train: train.len(),
        n_val: val.len(),
        standardizer: st,
        train_mse,
        train_r2,
        val_mse: val_scores.map(|s| s.0),
        val_r2: val_scores.and_then(|s| s.1),
        epochs,
    })
}

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    if cfg.recipes.len() != 1 {
        return Err(CliError::usage("train takes exactly one recipe"));
    }
    let recipe = &cfg.recipes[0];
    let dataset = open_dataset(cfg)?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    let ids = dataset.ids();
    let (train_ids, val_ids) = train_val_split(&ids, cfg.folds.val_fraction, cfg.folds.seed)?;
    let position: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let idx = |v: &[String]| -> Vec<usize> { v.iter().map(|id| position[id.as_str()]).collect() };
    let (train, val) = (idx(&train_ids), idx(&val_ids));

    let mut fits = Vec::new();
    for t in cfg.trait_list()? {
        let fit = fit_one(recipe, &dataset, t, &train, &val, &out.join(t.name()))?;
        eprintln!(
            "{:<18} train R² {:>7}  val R² {:>7}",
            t.name(),
            fmt_opt(fit.train_r2),
            fmt_opt(fit.val_r2)
        );
        fits.push(fit);
    }
    cfg.write(&out)?;
    write_json(&out.join("train.json"), &json!({ "config": cfg, "models": fits }))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

pub fn cv(cfg: &RunConfig) -> CliResult<()> {
    let dataset = open_dataset(cfg)?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    cfg.write(&out)?;
    let opts = CvOptions {
        folds: cfg.folds.clone(),
        traits: cfg.trait_list()?,
        r2_reference: cfg.r2_reference,
    };
    let mut reports: Vec<EvalReport> = Vec::new();
    for recipe in &cfg.recipes {
        let report = cross_validate(&dataset, recipe, &opts)?;
        write_text(&out.join(format!("cv_{}.json", report.recipe)), &report.to_json()?)?;
        for s in &report.summary {
            let r2 = s.r2.as_ref().map(|r| format!("{:.3} ± {:.3}", r.mean, r.std));
            println!(
                "{}\t{}\t{}/{} folds\tR² {}",
                report.recipe,
                s.trait_id.name(),
                s.folds_ok,
                cfg.folds.k,
                r2.unwrap_or_else(|| "-".into())
            );
        }
        for f in report.errors() {
            eprintln!(
                "{} fold {} {}: {}",
                report.recipe,
                f.fold,
                f.trait_id.name(),
                f.error.as_deref().unwrap_or_default()
            );
        }
        reports.push(report);
    }
    write_text(&out.join("cv_summary.csv"), &reports_to_csv(&reports)?)?;
    let failed: usize = reports.iter().map(|r| r.errors().count()).sum();
    if reports.iter().any(EvalReport::diverged) {
        Err(CliError::Diverged(format!("training diverged in {failed} fold job(s)")))
    } else if failed > 0 {
        Err(CliError::data(format!("{failed} fold job(s) failed")))
    } else {
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct RemovalRecord {
    transcript_id: String,
    #[serde(rename = "trait")]
    trait_id: TraitId,
    impacts: Vec<ImpactResult>,
}

#[derive(Debug, Serialize)]
struct OverlapRecord {
    transcript_id: String,
    matrix: Vec<Vec<f64>>,
}

fn load_rnn(path: &Path, trait_id: TraitId) -> CliResult<(SeqHeadModel, Standardizer)> {
    let model = SeqHeadModel::load(path)?;
    if model.trait_id.is_some_and(|t| t != trait_id) {
        return Err(CliError::data(format!("{} was trained for another trait", path.display())));
    }
    let st = model
        .standardizer
        .ok_or_else(|| CliError::data(format!("{} has no target standardizer", path.display())))?;
    Ok((model, st))
}

pub fn explain(cfg: &RunConfig) -> CliResult<()> {
    let models = cfg
        .models
        .as_deref()
        .ok_or_else(|| CliError::usage("--models is required (flag or config key \"models\")"))?;
    let dataset = open_dataset(cfg)?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    let explicit = cfg.traits.trim() != "all";
    let mut chosen = Vec::new();
    for t in cfg.trait_list()? {
        let path = models.join(t.name()).join(MODEL_FILE);
        if path.is_file() {
            chosen.push((t, path));
        } else if explicit {
            return Err(CliError::data(format!("no model at {}", path.display())));
        }
    }
    if chosen.is_empty() {
        return Err(CliError::data(format!("no <trait>/{MODEL_FILE} under {}", models.display())));
    }

    let seqs: Vec<&EmbeddingSequence> = dataset.items.iter().map(|it| &it.sequence).collect();
    let mut by_trait: Vec<Vec<AttentionProfile>> = Vec::new();
    for (t, path) in &chosen {
        let (model, st) = load_rnn(path, *t)?;
        let mut profiles = attention_profiles(&model, &seqs, Some(&st))?;
        for (p, item) in profiles.iter_mut().zip(&dataset.items) {
            p.trait_id = Some(*t);
            if let Ok(plan) = dataset.window.plan(item.n_tokens) {
                if plan.len() == p.len() {
                    p.spans = Some(plan.spans);
                }
            }
        }
        export_heatmap(&profiles, cfg.k, &out.join(format!("attention_{}.csv", t.name())))?;
        export_top_windows(&profiles, cfg.k, &out.join(format!("top_windows_{}.jsonl", t.name())))?;

        let mut lines = String::new();
        for (p, seq) in profiles.iter().zip(&seqs) {
            let impacts = if seq.len() > 1 {
                top_k_windows(&p.alpha, cfg.k.min(seq.len()))?
                    .indices
                    .into_iter()
                    .map(|j| removal_impact(&model, seq, j, &st))
                    .collect::<longtrait::Result<_>>()?
            } else {
                Vec::new()
            };
            let record = RemovalRecord {
                transcript_id: p.transcript_id.clone(),
                trait_id: *t,
                impacts,
            };
            lines.push_str(&serde_json::to_string(&record)?);
            lines.push('\n');
        }
        write_text(&out.join(format!("removal_{}.jsonl", t.name())), &lines)?;
        eprintln!("{}: {} profiles", t.name(), profiles.len());
        by_trait.push(profiles);
    }

    if by_trait.len() >= 2 {
        let n = by_trait.len();
        let mut mean = vec![vec![0.0; n]; n];
        let mut records = Vec::new();
        for i in 0..dataset.len() {
            let same: Vec<AttentionProfile> = by_trait.iter().map(|p| p[i].clone()).collect();
            let matrix = trait_overlap(&same, cfg.k)?;
            for (row, m) in mean.iter_mut().zip(&matrix) {
                for (a, b) in row.iter_mut().zip(m) {
                    *a += b / dataset.len() as f64;
                }
            }
            records.push(OverlapRecord {
                transcript_id: same[0].transcript_id.clone(),
                matrix,
            });
        }
        let traits: Vec<TraitId> = chosen.iter().map(|c| c.0).collect();
        write_json(
            &out.join("overlap.json"),
            &json!({ "traits": traits, "k": cfg.k, "mean": mean, "transcripts": records }),
        )?;
    }
    cfg.write(&out)
}
