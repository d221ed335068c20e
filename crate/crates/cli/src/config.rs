//! Experiment configuration: TOML file, presets and `--set` overrides.

use std::path::{Path, PathBuf};

use crowding_core::analysis::ReportOptions;
use crowding_core::dataset::{BackgroundSource, TrainingSetConfig};
use crowding_core::imaging::{Canvas, ColorScheme, Letter, Mode, Polarity, SceneComposer, Side, StrokeFont};
use crowding_core::nn::{ScheduleMode, SimpleNetPlan, TrainConfig, MIN_SIMPLENET_CANVAS};
use crowding_core::sweep::{all_polarity_pairs, GridConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 64 px canvas with geometry scaled from the full-size setup.
    Desk,
    /// 224 px canvas.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcuitySection {
    pub train: bool,
    pub test: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundKind {
    Synthetic,
    Directories,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSection {
    pub source: BackgroundKind,
    /// Synthetic images per class.
    pub per_class: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class0_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class1_dir: Option<PathBuf>,
    /// Use synthetic backgrounds when a directory is missing.
    pub synthetic_fallback: bool,
    /// Flip training backgrounds upside down.
    pub flip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LetterSection {
    /// Oversample letter images to match the background class size.
    pub balance: bool,
    /// Brightness jitter (grey levels) on oversampled copies.
    pub jitter: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub distances: Vec<u32>,
    pub angle_step_deg: u32,
    pub sizes: Vec<u32>,
    pub polarity_pairs: Vec<(Polarity, Polarity)>,
    pub targets: Vec<Letter>,
    pub flankers: Vec<Letter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub patience: usize,
    pub lr_decay: f32,
    pub schedule: ScheduleMode,
    pub validation_split: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub fit_psychometric: bool,
    pub fix_floor_to_chance: bool,
    /// Spacing for the radial-tangential comparison; the smallest when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radial_spacing_px: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub canvas: u32,
    pub eccentricity_px: u32,
    pub side: Side,
    pub mode: Mode,
    /// Stroke font file replacing the built-in face.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub font: Option<PathBuf>,
    pub acuity: AcuitySection,
    pub background: BackgroundSection,
    pub letters: LetterSection,
    pub grid: GridSection,
    pub train: TrainSection,
    pub network: SimpleNetPlan,
    pub colors: ColorScheme,
    pub analysis: AnalysisSection,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let canonical = GridConfig::canonical(Mode::Pair);
        let desk = GridConfig::desk(Mode::Pair);
        let (canvas, grid) = match preset {
            Preset::Desk => (64, desk),
            Preset::Full => (224, canonical),
        };
        Self {
            preset,
            seed: 0,
            workers: 1,
            out_dir: PathBuf::from("runs"),
            canvas,
            eccentricity_px: grid.eccentricity_px,
            side: Side::Left,
            mode: Mode::Pair,
            font: None,
            acuity: AcuitySection { train: false, test: false },
            background: BackgroundSection {
                source: BackgroundKind::Synthetic,
                per_class: 32,
                class0_dir: None,
                class1_dir: None,
                synthetic_fallback: false,
                flip: false,
            },
            letters: LetterSection { balance: true, jitter: 3 },
            grid: GridSection {
                distances: grid.distances,
                angle_step_deg: grid.angle_step_deg,
                sizes: grid.sizes,
                polarity_pairs: all_polarity_pairs(),
                targets: grid.targets,
                flankers: grid.flankers,
            },
            train: TrainSection {
                epochs: 60,
                batch_size: 16,
                learning_rate: 1e-3,
                patience: 2,
                lr_decay: 1e-2,
                schedule: ScheduleMode::Plain,
                validation_split: 0.1,
            },
            network: SimpleNetPlan::default(),
            colors: ColorScheme::default(),
            analysis: AnalysisSection {
                fit_psychometric: true,
                fix_floor_to_chance: false,
                radial_spacing_px: None,
            },
        }
    }

    /// Resolves a configuration: preset defaults, then the file (if any),
    /// then each `key=value` override in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut user = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            apply_override(&mut user, item)?;
        }
        let preset = match user.get("preset") {
            None => Preset::Desk,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| CliError::Config(format!("preset: {e}")))?,
        };
        let mut merged = match toml::Value::try_from(Self::preset(preset)) {
            Ok(toml::Value::Table(t)) => t,
            _ => unreachable!("configuration serializes to a table"),
        };
        merge(&mut merged, user);
        let config: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn canvas(&self) -> Canvas {
        Canvas::square(self.canvas)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.canvas < MIN_SIMPLENET_CANVAS {
            return bad(format!("canvas {} is below the {MIN_SIMPLENET_CANVAS} px minimum", self.canvas));
        }
        if self.eccentricity_px >= self.canvas / 2 {
            return bad(format!("eccentricity {} leaves the {} px canvas", self.eccentricity_px, self.canvas));
        }
        if self.mode == Mode::Unflanked {
            return bad("mode must be single or pair".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.background.source == BackgroundKind::Synthetic && self.background.per_class == 0 {
            return bad("background.per_class must be positive".into());
        }
        if let Some(font) = &self.font {
            if !font.is_file() {
                return bad(format!("font file {} does not exist", font.display()));
            }
        }
        self.colors.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.grid_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        crowding_core::nn::simplenet_specs(self.canvas(), &self.network, crowding_core::imaging::N_CLASSES)
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.background_source()?;
        Ok(())
    }

    /// The background source after applying the fallback rule.
    pub fn background_source(&self) -> CliResult<BackgroundSource> {
        let b = &self.background;
        match b.source {
            BackgroundKind::Synthetic => Ok(BackgroundSource::Synthetic { per_class: b.per_class }),
            BackgroundKind::Directories => {
                let dirs = [&b.class0_dir, &b.class1_dir];
                let missing: Vec<String> = dirs
                    .iter()
                    .map(|d| match d {
                        Some(p) if p.is_dir() => None,
                        Some(p) => Some(p.display().to_string()),
                        None => Some("(unset)".to_string()),
                    })
                    .flatten()
                    .collect();
                if missing.is_empty() {
                    Ok(BackgroundSource::Directories {
                        class0: b.class0_dir.clone().expect("checked"),
                        class1: b.class1_dir.clone().expect("checked"),
                    })
                } else if b.synthetic_fallback {
                    log::warn!("background directories missing ({}); using synthetic backgrounds", missing.join(", "));
                    Ok(BackgroundSource::Synthetic { per_class: b.per_class.max(1) })
                } else {
                    Err(CliError::Config(format!(
                        "background directories missing: {} (set background.synthetic_fallback = true to use synthetic images)",
                        missing.join(", ")
                    )))
                }
            }
        }
    }

    pub fn grid_config(&self) -> GridConfig {
        GridConfig {
            mode: self.mode,
            side: self.side,
            eccentricity_px: self.eccentricity_px,
            distances: self.grid.distances.clone(),
            angle_step_deg: self.grid.angle_step_deg,
            sizes: self.grid.sizes.clone(),
            polarity_pairs: self.grid.polarity_pairs.clone(),
            flankers: self.grid.flankers.clone(),
            targets: self.grid.targets.clone(),
            acuity: self.acuity.test,
            background_flip: self.background.flip,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: self.seed,
            learning_rate: t.learning_rate,
            patience: t.patience,
            lr_decay: t.lr_decay,
            schedule: t.schedule,
            validation_split: t.validation_split,
        }
    }

    pub fn training_set(&self) -> CliResult<TrainingSetConfig> {
        Ok(TrainingSetConfig {
            side: self.side,
            eccentricity_px: self.eccentricity_px,
            sizes: self.grid.sizes.clone(),
            background: self.background_source()?,
            flip_backgrounds: self.background.flip,
            acuity: self.acuity.train,
            balance_letters: self.letters.balance,
            jitter: self.letters.jitter,
            seed: self.seed,
        })
    }

    pub fn composer(&self) -> CliResult<SceneComposer> {
        let font = match &self.font {
            Some(p) => StrokeFont::from_path(p)?,
            None => StrokeFont::builtin(),
        };
        Ok(SceneComposer::new(self.canvas(), self.colors, font)?)
    }

    pub fn report_options(&self) -> ReportOptions {
        ReportOptions {
            eccentricity_px: self.eccentricity_px,
            radial_spacing_px: self.analysis.radial_spacing_px,
            fit_psychometric: self.analysis.fit_psychometric,
            fix_floor_to_chance: self.analysis.fix_floor_to_chance,
        }
    }
}

/// Parses `a.b.c=value` and stores it in `table`. The value is read as a
/// TOML literal when possible, otherwise as a bare string.
pub fn apply_override(table: &mut toml::Table, item: &str) -> CliResult<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {item:?} is not KEY=VALUE")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(|p| p.trim().is_empty()) {
        return Err(CliError::Config(format!("override {item:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').map(str::trim).collect();
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(CliError::Config(format!("override {item:?}: {part} is not a table"))),
        };
    }
    cursor.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
