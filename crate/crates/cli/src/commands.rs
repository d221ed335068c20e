//! Subcommand implementations. Each one writes a fresh run directory with a
//! manifest listing everything it produced.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use crowding_core::analysis::{build_report, render_report, spearman, BoumaEstimate, CrowdingReport, FlankerFilter};
use crowding_core::dataset::{letter_images, to_dataset, training_images};
use crowding_core::foveation::{apply_acuity, AcuityProfile};
use crowding_core::imaging::{Mode, Side, StimulusSpec, N_CLASSES};
use crowding_core::nn::{build_simplenet, checkpoint_id, encode_checkpoint, evaluate, load_checkpoint, train as fit, EpochLog};
use crowding_core::sweep::{build_grid, read_records, run_sweep, write_records, SweepIds, TrialRecord};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{fresh_dir, RunManifest};

pub const GRID_FILE: &str = "grid.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const RECORDS_FILE: &str = "records.csv";
pub const REPORT_FILE: &str = "report.json";
pub const COMPARISON_FILE: &str = "comparison.md";

/// A finished run: its directory and manifest.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl RunOutput {
    pub fn artifact(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn open_run(command: &str, config: &ExperimentConfig, id_inputs: BTreeMap<String, String>, parent: &Path) -> CliResult<(PathBuf, RunManifest)> {
    let manifest = RunManifest::new(command, config, id_inputs);
    let dir = fresh_dir(parent, &format!("{command}-{}", manifest.run_id))?;
    log::info!("{command} run {} in {}", manifest.run_id, dir.display());
    Ok((dir, manifest))
}

fn close_run(dir: PathBuf, mut manifest: RunManifest) -> CliResult<RunOutput> {
    manifest.stages.insert(manifest.command.clone(), true);
    manifest.write(&dir)?;
    Ok(RunOutput { dir, manifest })
}

/// One line of the grid listing.
pub fn spec_line(spec: &StimulusSpec) -> String {
    let letter = |l: Option<crowding_core::imaging::Letter>| l.map_or("-".to_string(), |l| l.symbol().to_string());
    format!(
        "{} {} {} {} {} {} {} {} {} {} {}",
        spec.target.symbol(),
        spec.target_polarity.as_str(),
        letter(spec.flanker),
        spec.flanker_polarity.map_or("-", |p| p.as_str()),
        spec.size_pt,
        spec.spacing_px,
        spec.angle_deg,
        spec.mode.as_str(),
        spec.side.as_str(),
        spec.eccentricity_px,
        spec.acuity,
    )
}

/// Writes sample stimuli and the full grid listing.
pub fn stimuli(config: &ExperimentConfig, samples: usize, parent: &Path) -> CliResult<RunOutput> {
    let (dir, mut manifest) = open_run("stimuli", config, BTreeMap::new(), parent)?;
    let grid = build_grid(&config.grid_config())?;
    let flanked = grid.iter().filter(|s| s.flanker.is_some()).count();
    let mut listing = String::new();
    writeln!(listing, "flanked {flanked}").unwrap();
    writeln!(listing, "unflanked {}", grid.len() - flanked).unwrap();
    writeln!(listing, "total {}", grid.len()).unwrap();
    listing.push_str("# target target_polarity flanker flanker_polarity size_pt spacing_px angle_deg mode side eccentricity_px acuity\n");
    for spec in &grid {
        listing.push_str(&spec_line(spec));
        listing.push('\n');
    }
    let listing_path = dir.join(GRID_FILE);
    std::fs::write(&listing_path, listing)?;
    manifest.add_artifact(&dir, &listing_path);

    let composer = config.composer()?;
    let profile = AcuityProfile::standard(config.canvas());
    let count = samples.min(grid.len());
    for i in 0..count {
        let spec = &grid[i * grid.len() / count];
        let image = composer.compose(spec)?;
        let path = dir.join(format!("sample_{i:03}.png"));
        image.save_png(&path)?;
        manifest.add_artifact(&dir, &path);
        if spec.acuity {
            let path = dir.join(format!("sample_{i:03}_acuity.png"));
            apply_acuity(&image, &profile).save_png(&path)?;
            manifest.add_artifact(&dir, &path);
        }
    }
    manifest.summary = json!({ "flanked": flanked, "unflanked": grid.len() - flanked, "samples": count });
    close_run(dir, manifest)
}

fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,stage,learning_rate,train_loss,train_accuracy,val_loss,val_accuracy\n");
    for e in log {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.epoch, e.stage, e.learning_rate, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
        )
        .unwrap();
    }
    out
}

/// Builds the training set, trains the reference network and writes the
/// best checkpoint with its training log.
pub fn train(config: &ExperimentConfig, parent: &Path) -> CliResult<RunOutput> {
    let set = config.training_set()?;
    let composer = config.composer()?;
    let (dir, mut manifest) = open_run("train", config, BTreeMap::new(), parent)?;
    let images = training_images(&composer, &set)?;
    let data = to_dataset(&images)?;
    log::info!("training on {} images, class counts {:?}", data.len(), data.class_counts(N_CLASSES));
    let network = build_simplenet(config.canvas(), &config.network, N_CLASSES, config.seed)?;
    let params = network.param_count();
    let train_config = config.train_config();
    let outcome = fit(network, &data, &train_config)?;

    let bytes = encode_checkpoint(&outcome.network, None);
    let ckpt = dir.join(CHECKPOINT_FILE);
    std::fs::write(&ckpt, &bytes)?;
    manifest.add_artifact(&dir, &ckpt);
    let log_path = dir.join(TRAIN_LOG_FILE);
    std::fs::write(&log_path, log_csv(&outcome.log))?;
    manifest.add_artifact(&dir, &log_path);

    let mut letters = letter_images(&composer, config.side, config.eccentricity_px, &config.grid.sizes)?;
    if config.acuity.train {
        let profile = AcuityProfile::standard(config.canvas());
        for l in &mut letters {
            l.image = apply_acuity(&l.image, &profile);
        }
    }
    let (_, letter_accuracy) = evaluate(&outcome.network, &to_dataset(&letters)?, train_config.batch_size)?;
    let best = &outcome.log[outcome.best_epoch - 1];
    log::info!(
        "best epoch {} val accuracy {:.4}, unflanked letter accuracy {:.4}",
        outcome.best_epoch,
        best.val_accuracy,
        letter_accuracy
    );
    manifest.summary = json!({
        "model_id": checkpoint_id(&bytes),
        "parameters": params,
        "training_images": data.len(),
        "epochs_run": outcome.log.len(),
        "best_epoch": outcome.best_epoch,
        "best_val_loss": best.val_loss,
        "best_val_accuracy": best.val_accuracy,
        "best_train_accuracy": best.train_accuracy,
        "unflanked_letter_accuracy": letter_accuracy,
    });
    close_run(dir, manifest)
}

fn accuracy(records: &[TrialRecord], flanked: bool) -> Option<f64> {
    let picked: Vec<_> = records.iter().filter(|r| r.is_flanked() == flanked).collect();
    (!picked.is_empty()).then(|| picked.iter().filter(|r| r.correct).count() as f64 / picked.len() as f64)
}

/// Runs the configured grid through a saved network.
pub fn sweep(config: &ExperimentConfig, checkpoint: &Path, parent: &Path) -> CliResult<RunOutput> {
    let bytes = std::fs::read(checkpoint)?;
    let model_id = checkpoint_id(&bytes);
    let network = load_checkpoint(checkpoint)?.network;
    let c = config.canvas;
    if network.input_shape() != [3, c as usize, c as usize] {
        return Err(CliError::Config(format!(
            "checkpoint input {:?} does not match the configured {c}x{c} canvas",
            network.input_shape()
        )));
    }
    let grid = build_grid(&config.grid_config())?;
    let composer = config.composer()?;
    let ids = BTreeMap::from([("model_id".to_string(), model_id.clone())]);
    let (dir, mut manifest) = open_run("sweep", config, ids, parent)?;
    manifest.inputs.insert("checkpoint".into(), checkpoint.display().to_string());
    let sweep_ids = SweepIds { run_id: manifest.run_id.clone(), model_id };
    let profile = AcuityProfile::standard(config.canvas());
    let records = run_sweep(&network, &grid, &composer, &profile, config.workers, &sweep_ids)?;
    let path = dir.join(RECORDS_FILE);
    write_records(&path, &records)?;
    manifest.add_artifact(&dir, &path);
    manifest.summary = json!({
        "records": records.len(),
        "flanked_records": records.iter().filter(|r| r.is_flanked()).count(),
        "unflanked_accuracy": accuracy(&records, false),
        "flanked_accuracy": accuracy(&records, true),
    });
    close_run(dir, manifest)
}

/// Summary numbers used by the manifest and the reproduce comparison.
pub fn report_summary(report: &CrowdingReport) -> serde_json::Value {
    let curve = |f: FlankerFilter| report.curve(f);
    let trend = curve(FlankerFilter::ExcludeSH).and_then(|c| spearman(&c.distances(), &c.accuracies()));
    let bouma = |b: &BoumaEstimate| match b {
        BoumaEstimate::Spacing(s) => json!(s),
        other => json!(bouma_text(other)),
    };
    json!({
        "records": report.record_count,
        "unflanked_accuracy": curve(FlankerFilter::All).map(|c| c.unflanked_accuracy),
        "flanked_accuracy": curve(FlankerFilter::All).map(|c| c.flanked_accuracy()),
        "flanked_accuracy_exclude_sh": curve(FlankerFilter::ExcludeSH).map(|c| c.flanked_accuracy()),
        "spacing_trend_spearman": trend,
        "bouma_theoretical_px": report.bouma.theoretical_px,
        "bouma_extrapolated_px": bouma(&report.bouma.extrapolated),
        "hemifield_upper": report.hemifield.as_ref().map(|h| h.first),
        "hemifield_lower": report.hemifield.as_ref().map(|h| h.second),
        "confusion_excess_pp": report.confusion.as_ref().map(|c| c.excess_pp),
    })
}

/// Builds the crowding report from one or more record files, concatenated
/// record by record.
pub fn analyze(config: &ExperimentConfig, record_files: &[PathBuf], fits: bool, parent: &Path) -> CliResult<RunOutput> {
    analyze_report(config, record_files, fits, parent).map(|(run, _)| run)
}

fn analyze_report(
    config: &ExperimentConfig,
    record_files: &[PathBuf],
    fits: bool,
    parent: &Path,
) -> CliResult<(RunOutput, CrowdingReport)> {
    if record_files.is_empty() {
        return Err(CliError::Config("no record files given".into()));
    }
    let mut records = Vec::new();
    let mut ids = BTreeMap::new();
    for (i, path) in record_files.iter().enumerate() {
        let bytes = std::fs::read(path)?;
        ids.insert(format!("records.{i}"), checkpoint_id(&bytes));
        records.extend(read_records(path)?);
    }
    let mut options = config.report_options();
    options.fit_psychometric &= fits;
    let report = build_report(&records, &options)?;
    ids.insert("fits".into(), options.fit_psychometric.to_string());
    let (dir, mut manifest) = open_run("analyze", config, ids, parent)?;
    for (i, path) in record_files.iter().enumerate() {
        manifest.inputs.insert(format!("records.{i}.path"), path.display().to_string());
    }
    let json_path = dir.join(REPORT_FILE);
    std::fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n")?;
    manifest.add_artifact(&dir, &json_path);
    let rendered = render_report(&report, &dir)?;
    for p in rendered.svgs.iter().chain(&rendered.csvs) {
        manifest.add_artifact(&dir, p);
    }
    for note in &report.notes {
        log::warn!("{note}");
    }
    manifest.summary = report_summary(&report);
    Ok((close_run(dir, manifest)?, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    LeftSingle,
    LeftPair,
    RightSingle,
    FlippedSingle,
    FullAcuityTrainTest,
    AcuityTrainFullTest,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::LeftSingle => "left-single",
            Profile::LeftPair => "left-pair",
            Profile::RightSingle => "right-single",
            Profile::FlippedSingle => "flipped-single",
            Profile::FullAcuityTrainTest => "full-acuity-train-test",
            Profile::AcuityTrainFullTest => "acuity-train-full-test",
        }
    }

    pub fn from_name(name: &str) -> CliResult<Self> {
        Self::from_str(name, false).map_err(|_| {
            let valid: Vec<&str> = Self::value_variants().iter().map(|p| p.name()).collect();
            CliError::Config(format!("unknown profile {name:?}; valid profiles: {}", valid.join(", ")))
        })
    }

    /// (side, mode, flipped backgrounds, acuity in training, acuity in testing)
    fn settings(self) -> (Side, Mode, bool, bool, bool) {
        match self {
            Profile::LeftSingle => (Side::Left, Mode::Single, false, false, false),
            Profile::LeftPair => (Side::Left, Mode::Pair, false, true, true),
            Profile::RightSingle => (Side::Right, Mode::Single, false, true, true),
            Profile::FlippedSingle => (Side::Left, Mode::Single, true, true, true),
            Profile::FullAcuityTrainTest => (Side::Left, Mode::Single, false, false, false),
            Profile::AcuityTrainFullTest => (Side::Left, Mode::Pair, false, true, false),
        }
    }

    /// Applies the profile's experiment settings on top of `config`.
    pub fn apply(self, config: &ExperimentConfig) -> ExperimentConfig {
        let (side, mode, flip, train, test) = self.settings();
        let mut out = config.clone();
        out.side = side;
        out.mode = mode;
        out.background.flip = flip;
        out.acuity.train = train;
        out.acuity.test = test;
        out
    }

    /// Full-scale reference values (224 px canvas, eccentricity 56 px).
    pub fn references(self) -> Vec<(&'static str, &'static str)> {
        let mut refs = match self {
            Profile::LeftSingle => vec![
                ("unflanked accuracy", "96.97%"),
                ("flanked accuracy", "at most 35%"),
                ("extrapolated uncrowded spacing", "218 px"),
                ("half-eccentricity spacing", "28 px"),
            ],
            Profile::LeftPair => vec![("unflanked accuracy", "96.11%")],
            Profile::RightSingle => vec![("unflanked accuracy", "90.37%")],
            Profile::FlippedSingle => vec![
                ("unflanked accuracy", "97.98%"),
                ("upper-half accuracy", "59.66%"),
                ("lower-half accuracy", "59.42%"),
                ("upper-half accuracy, upright backgrounds", "95.31%"),
                ("lower-half accuracy, upright backgrounds", "89.47%"),
            ],
            Profile::FullAcuityTrainTest => vec![("unflanked accuracy", "99.34%")],
            Profile::AcuityTrainFullTest => vec![("unflanked accuracy", "96.11%")],
        };
        if self.settings().1 == Mode::Single {
            refs.push(("flanker confusion excess", "0.0125 pp"));
        }
        refs
    }
}

fn bouma_text(estimate: &BoumaEstimate) -> String {
    match estimate {
        BoumaEstimate::Spacing(s) => format!("{s:.1} px"),
        BoumaEstimate::AlreadyUncrowded(s) => format!("uncrowded from {s} px"),
        BoumaEstimate::NonConverging => "non-converging".into(),
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{:.2}%", 100.0 * v))
}

/// The comparison note written by `reproduce`.
pub fn comparison_note(profile: Profile, config: &ExperimentConfig, report: &CrowdingReport) -> String {
    let all = report.curve(FlankerFilter::All);
    let exclude = report.curve(FlankerFilter::ExcludeSH);
    let trend = exclude.and_then(|c| spearman(&c.distances(), &c.accuracies()));
    let bouma = bouma_text(&report.bouma.extrapolated);
    let mut out = String::new();
    writeln!(out, "# {}\n", profile.name()).unwrap();
    writeln!(
        out,
        "Canvas {} px, eccentricity {} px, side {}, mode {}, acuity train {} / test {}, flipped backgrounds {}.\n",
        config.canvas,
        config.eccentricity_px,
        config.side.as_str(),
        config.mode.as_str(),
        config.acuity.train,
        config.acuity.test,
        config.background.flip
    )
    .unwrap();
    out.push_str("## This run\n\n| measure | value |\n|---|---|\n");
    let mut row = |k: &str, v: String| writeln!(out, "| {k} | {v} |").unwrap();
    row("records", report.record_count.to_string());
    row("unflanked accuracy", pct(all.map(|c| c.unflanked_accuracy)));
    row("flanked accuracy", pct(all.map(|c| c.flanked_accuracy())));
    row("flanked accuracy, S/H excluded", pct(exclude.map(|c| c.flanked_accuracy())));
    row("spacing-accuracy Spearman, S/H excluded", trend.map_or("n/a".into(), |r| format!("{r:.3}")));
    row("extrapolated uncrowded spacing", bouma);
    row("half-eccentricity spacing", format!("{} px", report.bouma.theoretical_px));
    if let Some(h) = &report.hemifield {
        row("upper-half accuracy", pct(Some(h.first)));
        row("lower-half accuracy", pct(Some(h.second)));
    }
    if let Some(c) = &report.confusion {
        row("flanker confusion excess", format!("{:.4} pp", c.excess_pp));
    }
    out.push_str("\n## Full-scale reference\n\n| measure | value |\n|---|---|\n");
    for (k, v) in profile.references() {
        writeln!(out, "| {k} | {v} |").unwrap();
    }
    let scale = config.canvas as f64 / 224.0;
    writeln!(out, "\nPixel distances scale by {scale:.4} between the full-scale geometry and this canvas.").unwrap();
    out
}

/// Trains, sweeps and analyzes one named experiment.
pub fn reproduce(config: &ExperimentConfig, profile: Profile, parent: &Path) -> CliResult<RunOutput> {
    let config = profile.apply(config);
    config.validate()?;
    let ids = BTreeMap::from([("profile".to_string(), profile.name().to_string())]);
    let (dir, mut manifest) = open_run("reproduce", &config, ids, parent)?;
    let stage = |name: &str, run: &RunOutput, manifest: &mut RunManifest| {
        manifest.stages.insert(name.to_string(), true);
        manifest.add_artifact(&dir, &run.dir.join(crate::manifest::MANIFEST_FILE));
        for a in &run.manifest.artifacts {
            manifest.add_artifact(&dir, &run.dir.join(a));
        }
    };
    let trained = train(&config, &dir)?;
    stage("train", &trained, &mut manifest);
    let swept = sweep(&config, &trained.artifact(CHECKPOINT_FILE), &dir)?;
    stage("sweep", &swept, &mut manifest);
    let (analyzed, report) = analyze_report(&config, &[swept.artifact(RECORDS_FILE)], true, &dir)?;
    stage("analyze", &analyzed, &mut manifest);
    let note = dir.join(COMPARISON_FILE);
    std::fs::write(&note, comparison_note(profile, &config, &report))?;
    manifest.add_artifact(&dir, &note);
    manifest.summary = json!({
        "profile": profile.name(),
        "train": trained.manifest.summary,
        "analysis": analyzed.manifest.summary,
    });
    close_run(dir, manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;

    #[test]
    fn profile_names_round_trip() {
        for &p in Profile::value_variants() {
            assert_eq!(Profile::from_name(p.name()).unwrap(), p);
        }
        match Profile::from_name("upside-down") {
            Err(CliError::Config(m)) => assert!(m.contains("left-single") && m.contains("acuity-train-full-test")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn profiles_set_their_conditions() {
        let base = ExperimentConfig::preset(Preset::Desk);
        let right = Profile::RightSingle.apply(&base);
        assert_eq!((right.side, right.mode), (Side::Right, Mode::Single));
        let composer = right.composer().unwrap();
        let spec = StimulusSpec::unflanked(crowding_core::imaging::Letter::A, crowding_core::imaging::Polarity::White, 6, Side::Right, 16);
        assert_eq!(composer.layout(&spec).unwrap()[0], (32 + 16, 32));
        let mixed = Profile::AcuityTrainFullTest.apply(&base);
        assert!(mixed.acuity.train && !mixed.acuity.test);
        assert!(mixed.training_set().unwrap().acuity && !mixed.grid_config().acuity);
        let flipped = Profile::FlippedSingle.apply(&base);
        assert!(flipped.training_set().unwrap().flip_backgrounds);
    }
}
