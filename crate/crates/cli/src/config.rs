//! Run configuration: a JSON file, overridden by flags, then resolved and
//! validated before any work starts.

use std::fs;
use std::path::{Path, PathBuf};

use longtrait::baselines::FfnConfig;
use longtrait::evaluation::{FoldOptions, R2Reference, Recipe, RecipeSpec, RnnRecipe};
use longtrait::optim::TrainConfig;
use longtrait::synth::{SynthSpec, TargetKind};
use longtrait::windowing::WindowParams;
use longtrait::TraitId;
use serde::{Deserialize, Serialize};

use crate::args::{Common, DataArgs, FoldArgs, SynthArgs, TrainArgs, WindowArgs};
use crate::error::{CliError, CliResult};

/// Consulted for the output directory when `--out` is not given.
pub const OUT_ENV: &str = "LONGTRAIT_OUT";
pub const DEFAULT_OUT: &str = "out";
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, replaces every seed below.
    pub seed: Option<u64>,
    /// `all`, or a comma-separated list of trait letters or names.
    #[serde(rename = "trait")]
    pub traits: String,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Directory holding `<trait>/model.ltrm` files, for `explain`.
    pub models: Option<PathBuf>,
    pub recipes: Vec<RecipeSpec>,
    pub window: WindowParams,
    pub tokens: Option<usize>,
    pub k: usize,
    pub folds: FoldOptions,
    pub r2_reference: R2Reference,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            traits: "all".into(),
            manifest: None,
            out: None,
            models: None,
            recipes: vec![RecipeSpec::named("rnn").expect("built-in recipe")],
            window: WindowParams::default(),
            tokens: None,
            k: DEFAULT_TOP_K,
            folds: FoldOptions::default(),
            r2_reference: R2Reference::default(),
            synth: SynthSpec::default(),
        }
    }
}

fn train_of(r: &mut RecipeSpec) -> Option<&mut TrainConfig> {
    match r {
        RecipeSpec::Rnn(x) => Some(&mut x.train),
        RecipeSpec::Ffn(x) => Some(&mut x.train),
        _ => None,
    }
}

pub fn parse_traits(sel: &str) -> CliResult<Vec<TraitId>> {
    if sel.trim().eq_ignore_ascii_case("all") {
        return Ok(TraitId::ALL.to_vec());
    }
    let mut out: Vec<TraitId> = Vec::new();
    for part in sel.split(',') {
        let t: TraitId = part
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("trait: unknown trait {part:?} (use O, C, E, A, N or all)")))?;
        if !out.contains(&t) {
            out.push(t);
        }
    }
    Ok(out)
}

impl RunConfig {
    /// Reads a config file; an empty file means all defaults.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        if text.trim().is_empty() {
            return Ok(RunConfig::default());
        }
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }

    pub fn from_common(common: &Common) -> CliResult<Self> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if common.seed.is_some() {
            cfg.seed = common.seed;
        }
        if let Some(out) = &common.out {
            cfg.out = Some(out.clone());
        } else if let Some(env) = std::env::var_os(OUT_ENV) {
            cfg.out = Some(PathBuf::from(env));
        }
        Ok(cfg)
    }

    pub fn apply_data(&mut self, a: &DataArgs) {
        if let Some(m) = &a.manifest {
            self.manifest = Some(m.clone());
        }
        if let Some(t) = &a.traits {
            self.traits = t.clone();
        }
    }

    pub fn apply_window(&mut self, a: &WindowArgs) {
        if let Some(w) = a.window {
            self.window.w = w;
        }
        if let Some(s) = a.stride {
            self.window.s = s;
        }
        if let Some(c) = a.cap {
            self.window.cap = c;
        }
    }

    pub fn apply_folds(&mut self, a: &FoldArgs) {
        if let Some(k) = a.folds {
            self.folds.k = k;
        }
        if let Some(v) = a.val_fraction {
            self.folds.val_fraction = v;
        }
        if let Some(m) = a.split {
            self.folds.mode = m.into();
        }
    }

    /// `--recipe` picks the recipes by name; a recipe already present in the
    /// file under that name keeps its settings. Training flags then apply to
    /// every recipe they make sense for.
    pub fn apply_train(&mut self, a: &TrainArgs) -> CliResult<()> {
        if !a.recipe.is_empty() {
            let mut picked = Vec::new();
            for name in &a.recipe {
                let from_file = self.recipes.iter().find(|r| r.name() == *name).cloned();
                picked.push(match from_file {
                    Some(r) => r,
                    None => RecipeSpec::named(name).map_err(|e| CliError::usage(format!("recipe: {e}")))?,
                });
            }
            self.recipes = picked;
        }
        for r in &mut self.recipes {
            if let Some(t) = train_of(r) {
                if let Some(v) = a.lr {
                    t.learning_rate = v;
                }
                if let Some(v) = a.epochs {
                    t.max_epochs = v;
                }
                if let Some(v) = a.batch_size {
                    t.batch_size = v;
                }
                if let Some(v) = a.patience {
                    t.patience = (v > 0).then_some(v);
                }
            }
            match r {
                RecipeSpec::Rnn(x) => {
                    if let Some(v) = a.hidden {
                        x.hidden_size = v;
                    }
                    if let Some(v) = a.layers {
                        x.num_layers = v;
                    }
                    if let Some(v) = a.dropout {
                        x.dropout = v;
                    }
                }
                RecipeSpec::Ffn(x) => {
                    if let Some(v) = a.hidden {
                        x.hidden = v;
                    }
                    if let Some(v) = a.dropout {
                        x.dropout = v;
                    }
                }
                RecipeSpec::Ridge(x) => {
                    if let Some(v) = a.lambda {
                        x.lambda = v;
                    }
                }
                RecipeSpec::Median => {}
            }
        }
        Ok(())
    }

    pub fn apply_synth(&mut self, a: &SynthArgs) {
        if a.sequential {
            self.synth.target_kind = TargetKind::Sequential;
        }
        if let Some(v) = a.n {
            self.synth.n = v;
        }
        if let Some(v) = a.dim {
            self.synth.dim = v;
        }
        if let Some(v) = a.snr {
            self.synth.snr = v;
        }
    }

    /// Spreads the master seed and checks every section.
    pub fn resolve(&mut self) -> CliResult<()> {
        if let Some(seed) = self.seed {
            self.synth.seed = seed;
            self.folds.seed = seed;
            for r in &mut self.recipes {
                match r {
                    RecipeSpec::Rnn(x) => {
                        x.init_seed = seed;
                        x.train.seed = seed;
                    }
                    RecipeSpec::Ffn(x) => {
                        x.init_seed = seed;
                        x.train.seed = seed;
                    }
                    _ => {}
                }
            }
        }
        let bad = |section: &str, e: longtrait::Error| CliError::usage(format!("config {section}: {e}"));
        parse_traits(&self.traits)?;
        self.window.validate().map_err(|e| bad("window", e))?;
        self.synth.validate().map_err(|e| bad("synth", e))?;
        if self.k == 0 {
            return Err(CliError::usage("config k: top-k must be at least 1"));
        }
        if self.folds.k < 2 {
            return Err(CliError::usage(format!("config folds.k: {} folds, need at least 2", self.folds.k)));
        }
        if !(0.0..1.0).contains(&self.folds.val_fraction) {
            return Err(CliError::usage(format!(
                "config folds.val_fraction: {} outside [0, 1)",
                self.folds.val_fraction
            )));
        }
        if self.recipes.is_empty() {
            return Err(CliError::usage("config recipes: at least one recipe is required"));
        }
        let mut names: Vec<String> = self.recipes.iter().map(|r| r.name()).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::usage("config recipes: each recipe may appear once"));
        }
        for r in &self.recipes {
            let section = format!("recipes.{}", r.name());
            match r {
                RecipeSpec::Rnn(x) => {
                    x.train.validate().map_err(|e| bad(&section, e))?;
                    RnnRecipe::head_config(x, 1).validate().map_err(|e| bad(&section, e))?;
                }
                RecipeSpec::Ffn(x) => {
                    x.train.validate().map_err(|e| bad(&section, e))?;
                    FfnConfig {
                        hidden: x.hidden,
                        dropout: x.dropout,
                        ..FfnConfig::new(1)
                    }
                    .validate()
                    .map_err(|e| bad(&section, e))?;
                }
                RecipeSpec::Ridge(x) => {
                    if !(x.lambda >= 0.0 && x.lambda.is_finite()) {
                        return Err(CliError::usage(format!("config {section}: lambda {} must be >= 0", x.lambda)));
                    }
                }
                RecipeSpec::Median => {}
            }
        }
        Ok(())
    }

    pub fn trait_list(&self) -> CliResult<Vec<TraitId>> {
        parse_traits(&self.traits)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn manifest_path(&self) -> CliResult<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| CliError::usage("--manifest is required (flag or config key \"manifest\")"))
    }

    pub fn to_json(&self) -> CliResult<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes the resolved config as `config.json` under `dir`.
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join("config.json");
        fs::write(&path, self.to_json()?).map_err(|e| CliError::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = serde_json::from_str::<RunConfig>(r#"{"sead": 3}"#).unwrap_err();
        assert!(err.to_string().contains("sead"), "{err}");
    }

    #[test]
    fn negative_learning_rate_is_named() {
        let mut cfg: RunConfig =
            serde_json::from_str(r#"{"recipes": [{"kind": "rnn", "train": {"learning_rate": -1}}]}"#).unwrap();
        let err = cfg.resolve().unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn seed_reaches_every_section() {
        let mut cfg = RunConfig {
            seed: Some(9),
            recipes: vec![RecipeSpec::named("rnn").unwrap(), RecipeSpec::named("ffn").unwrap()],
            ..RunConfig::default()
        };
        cfg.resolve().unwrap();
        assert_eq!((cfg.synth.seed, cfg.folds.seed), (9, 9));
        for r in &cfg.recipes {
            match r {
                RecipeSpec::Rnn(x) => assert_eq!((x.init_seed, x.train.seed), (9, 9)),
                RecipeSpec::Ffn(x) => assert_eq!((x.init_seed, x.train.seed), (9, 9)),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn trait_selection() {
        assert_eq!(parse_traits("all").unwrap().len(), 5);
        assert_eq!(parse_traits("O,n").unwrap(), vec![TraitId::Openness, TraitId::Neuroticism]);
        assert_eq!(parse_traits("openness").unwrap(), vec![TraitId::Openness]);
        assert!(parse_traits("X").is_err());
    }
}
