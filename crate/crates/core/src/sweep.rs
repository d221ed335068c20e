//! Exhaustive condition grids, their evaluation, and the trial-record file.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::foveation::{apply_acuity, AcuityProfile};
use crate::imaging::{Letter, Mode, Polarity, SceneComposer, Side, StimulusSpec, CLASS_NAMES, N_CLASSES};
use crate::nn::{argmax, Classifier};

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub mode: Mode,
    pub side: Side,
    pub eccentricity_px: u32,
    pub distances: Vec<u32>,
    pub angle_step_deg: u32,
    pub sizes: Vec<u32>,
    /// (target polarity, flanker polarity) combinations.
    pub polarity_pairs: Vec<(Polarity, Polarity)>,
    pub flankers: Vec<Letter>,
    pub targets: Vec<Letter>,
    pub acuity: bool,
    /// Carried into run metadata; test stimuli are letter-on-grey, so the
    /// flip itself only affects training backgrounds.
    pub background_flip: bool,
}

pub fn all_polarity_pairs() -> Vec<(Polarity, Polarity)> {
    Polarity::BOTH
        .iter()
        .flat_map(|&t| Polarity::BOTH.iter().map(move |&f| (t, f)))
        .collect()
}

impl GridConfig {
    /// Full-size grid: 224 px canvas geometry, distances 25..45 step 2,
    /// sizes {20, 26}, every target, flanker and polarity pairing.
    pub fn canonical(mode: Mode) -> Self {
        Self {
            mode,
            side: Side::Left,
            eccentricity_px: 56,
            distances: (25..=45).step_by(2).collect(),
            angle_step_deg: 18,
            sizes: vec![20, 26],
            polarity_pairs: all_polarity_pairs(),
            flankers: Letter::ALPHABET.to_vec(),
            targets: Letter::TARGETS.to_vec(),
            acuity: false,
            background_flip: false,
        }
    }

    /// The canonical grid scaled to a 64 px canvas.
    pub fn desk(mode: Mode) -> Self {
        Self {
            eccentricity_px: 16,
            distances: (7..=13).step_by(2).collect(),
            sizes: vec![6, 8],
            ..Self::canonical(mode)
        }
    }

    /// Flanker directions: half a turn for pairs (the partner covers the
    /// rest), a full turn for single flankers.
    pub fn angles(&self) -> Vec<u32> {
        let span = if self.mode == Mode::Pair { 180 } else { 360 };
        (0..span).step_by(self.angle_step_deg.max(1) as usize).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == Mode::Unflanked {
            return Err(Error::InvalidArgument("grid mode must be single or pair".into()));
        }
        if self.angle_step_deg == 0 || 360 % self.angle_step_deg != 0 {
            return Err(Error::InvalidArgument(format!(
                "angle step {} must divide 360",
                self.angle_step_deg
            )));
        }
        let empty = [
            ("distances", self.distances.is_empty()),
            ("sizes", self.sizes.is_empty()),
            ("polarity pairs", self.polarity_pairs.is_empty()),
            ("flankers", self.flankers.is_empty()),
            ("targets", self.targets.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::InvalidArgument(format!("grid has no {name}")));
        }
        if let Some(t) = self.targets.iter().find(|t| t.is_novel()) {
            return Err(Error::InvalidArgument(format!("{t} cannot be a target")));
        }
        Ok(())
    }
}

/// Every flanked condition in lexicographic factor order (target, target
/// polarity, flanker, flanker polarity, size, spacing, angle), followed by
/// the unflanked baselines (target, polarity, size).
pub fn build_grid(config: &GridConfig) -> Result<Vec<StimulusSpec>> {
    config.validate()?;
    let angles = config.angles();
    let mut specs = Vec::new();
    for &target in &config.targets {
        for tp in Polarity::BOTH {
            for &flanker in &config.flankers {
                for fp in Polarity::BOTH {
                    if !config.polarity_pairs.contains(&(tp, fp)) {
                        continue;
                    }
                    for &size in &config.sizes {
                        for &spacing in &config.distances {
                            for &angle in &angles {
                                specs.push(StimulusSpec {
                                    target,
                                    target_polarity: tp,
                                    flanker: Some(flanker),
                                    flanker_polarity: Some(fp),
                                    size_pt: size,
                                    spacing_px: spacing,
                                    angle_deg: angle as f64,
                                    mode: config.mode,
                                    side: config.side,
                                    eccentricity_px: config.eccentricity_px,
                                    acuity: config.acuity,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    for &target in &config.targets {
        for polarity in Polarity::BOTH {
            for &size in &config.sizes {
                let mut spec = StimulusSpec::unflanked(target, polarity, size, config.side, config.eccentricity_px);
                spec.acuity = config.acuity;
                specs.push(spec);
            }
        }
    }
    Ok(specs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub run_id: String,
    pub model_id: String,
    pub mode: Mode,
    pub side: Side,
    pub acuity: bool,
    pub target: Letter,
    pub target_polarity: Polarity,
    pub flanker: Option<Letter>,
    pub flanker_polarity: Option<Polarity>,
    pub size_pt: u32,
    pub spacing_px: u32,
    pub angle_deg: f64,
    /// Output class index (letters 0..8, backgrounds 8 and 9).
    pub predicted: usize,
    pub correct: bool,
    pub probs: [f32; N_CLASSES],
}

impl TrialRecord {
    pub fn from_prediction(spec: &StimulusSpec, probs: &[f32], run_id: &str, model_id: &str) -> Result<Self> {
        let probs: [f32; N_CLASSES] = probs
            .try_into()
            .map_err(|_| Error::Shape(format!("expected {N_CLASSES} probabilities, got {}", probs.len())))?;
        let predicted = argmax(&probs);
        Ok(Self {
            run_id: run_id.to_string(),
            model_id: model_id.to_string(),
            mode: spec.mode,
            side: spec.side,
            acuity: spec.acuity,
            target: spec.target,
            target_polarity: spec.target_polarity,
            flanker: spec.flanker,
            flanker_polarity: spec.flanker_polarity,
            size_pt: spec.size_pt,
            spacing_px: spec.spacing_px,
            angle_deg: spec.angle_deg,
            predicted,
            correct: Some(predicted) == spec.target.class_index(),
            probs,
        })
    }

    pub fn is_flanked(&self) -> bool {
        self.flanker.is_some()
    }

    pub fn predicted_name(&self) -> &'static str {
        CLASS_NAMES[self.predicted]
    }
}

/// Identifiers stamped on every record of a sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepIds {
    pub run_id: String,
    pub model_id: String,
}

/// Composes, optionally foveates and classifies every spec. Output order
/// equals grid order for any worker count.
pub fn run_sweep<C: Classifier>(
    classifier: &C,
    grid: &[StimulusSpec],
    composer: &SceneComposer,
    profile: &AcuityProfile,
    workers: usize,
    ids: &SweepIds,
) -> Result<Vec<TrialRecord>> {
    if composer.canvas != classifier.canvas() {
        return Err(Error::Shape(format!(
            "stimulus canvas {:?} does not match classifier input {:?}",
            composer.canvas,
            classifier.canvas()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))?;
    let total = grid.len();
    let done = AtomicUsize::new(0);
    let step = (total / 20).max(1);
    let evaluate = |spec: &StimulusSpec| -> Result<TrialRecord> {
        let mut image = composer.compose(spec)?;
        if spec.acuity {
            image = apply_acuity(&image, profile);
        }
        let probs = classifier.predict(&image)?;
        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
        if n % step == 0 {
            log::info!("sweep {n}/{total}");
        }
        TrialRecord::from_prediction(spec, &probs, &ids.run_id, &ids.model_id)
    };
    let results: Vec<Result<TrialRecord>> = pool.install(|| grid.par_iter().map(evaluate).collect());
    let completed = results.iter().filter(|r| r.is_ok()).count();
    let mut records = Vec::with_capacity(total);
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                return Err(Error::Sweep {
                    completed,
                    total,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(records)
}

pub const RECORD_HEADER: [&str; 24] = [
    "run_id",
    "model_id",
    "mode",
    "side",
    "acuity",
    "target",
    "target_polarity",
    "flanker",
    "flanker_polarity",
    "size_pt",
    "spacing_px",
    "angle_deg",
    "predicted",
    "correct",
    "p0",
    "p1",
    "p2",
    "p3",
    "p4",
    "p5",
    "p6",
    "p7",
    "p8",
    "p9",
];

const NONE: &str = "none";

fn record_row(r: &TrialRecord) -> Vec<String> {
    let mut row = vec![
        r.run_id.clone(),
        r.model_id.clone(),
        r.mode.as_str().to_string(),
        r.side.as_str().to_string(),
        r.acuity.to_string(),
        r.target.to_string(),
        r.target_polarity.as_str().to_string(),
        r.flanker.map_or(NONE.to_string(), |f| f.to_string()),
        r.flanker_polarity.map_or(NONE.to_string(), |p| p.as_str().to_string()),
        r.size_pt.to_string(),
        r.spacing_px.to_string(),
        r.angle_deg.to_string(),
        r.predicted_name().to_string(),
        r.correct.to_string(),
    ];
    row.extend(r.probs.iter().map(|p| format!("{p:.6}")));
    row
}

/// Writes records as comma-separated text under [`RECORD_HEADER`].
pub fn write_records_to<W: Write>(writer: W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record(record_row(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_records_to(std::io::BufWriter::new(file), records)
}

fn parse_row(row: &csv::StringRecord) -> std::result::Result<TrialRecord, String> {
    if row.len() != RECORD_HEADER.len() {
        return Err(format!("expected {} fields, found {}", RECORD_HEADER.len(), row.len()));
    }
    let f = |i: usize| &row[i];
    let num = |i: usize| -> std::result::Result<u32, String> {
        f(i).parse().map_err(|_| format!("{} {:?} is not an integer", RECORD_HEADER[i], f(i)))
    };
    let flag = |i: usize| -> std::result::Result<bool, String> {
        f(i).parse().map_err(|_| format!("{} {:?} is not a boolean", RECORD_HEADER[i], f(i)))
    };
    let letter = |i: usize| -> std::result::Result<Letter, String> { f(i).parse().map_err(|e: Error| e.to_string()) };
    let polarity = |i: usize| -> std::result::Result<Polarity, String> { f(i).parse().map_err(|e: Error| e.to_string()) };
    let optional = |i: usize| f(i) != NONE;
    let predicted = CLASS_NAMES
        .iter()
        .position(|&c| c == f(12))
        .ok_or_else(|| format!("unknown predicted class {:?}", f(12)))?;
    let mut probs = [0f32; N_CLASSES];
    for (k, p) in probs.iter_mut().enumerate() {
        *p = f(14 + k)
            .parse()
            .map_err(|_| format!("p{k} {:?} is not a number", f(14 + k)))?;
    }
    let angle_deg: f64 = f(11).parse().map_err(|_| format!("angle_deg {:?} is not a number", f(11)))?;
    let record = TrialRecord {
        run_id: f(0).to_string(),
        model_id: f(1).to_string(),
        mode: f(2).parse().map_err(|e: Error| e.to_string())?,
        side: f(3).parse().map_err(|e: Error| e.to_string())?,
        acuity: flag(4)?,
        target: letter(5)?,
        target_polarity: polarity(6)?,
        flanker: if optional(7) { Some(letter(7)?) } else { None },
        flanker_polarity: if optional(8) { Some(polarity(8)?) } else { None },
        size_pt: num(9)?,
        spacing_px: num(10)?,
        angle_deg,
        predicted,
        correct: flag(13)?,
        probs,
    };
    if record.correct != (Some(record.predicted) == record.target.class_index()) {
        return Err("correct flag disagrees with predicted class".into());
    }
    if record.flanker.is_some() != record.flanker_polarity.is_some() {
        return Err("flanker and flanker_polarity must both be set or both be none".into());
    }
    Ok(record)
}

/// Parses a record stream; `path` is only used in error messages.
pub fn read_records_from<R: Read>(reader: R, path: &Path) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let err = |line: u64, reason: String| Error::Record {
        path: path.to_path_buf(),
        line: line as usize,
        reason,
    };
    let mut rows = rdr.records();
    let header = match rows.next() {
        None => return Err(err(1, "missing header".into())),
        Some(h) => h.map_err(|e| err(1, e.to_string()))?,
    };
    if header.iter().ne(RECORD_HEADER.iter().copied()) {
        return Err(err(1, format!("header mismatch, expected {}", RECORD_HEADER.join(","))));
    }
    let mut records = Vec::new();
    for row in rows {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        records.push(parse_row(&row).map_err(|reason| err(line, reason))?);
    }
    Ok(records)
}

pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let file = std::fs::File::open(path)?;
    read_records_from(std::io::BufReader::new(file), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_sets() {
        assert_eq!(GridConfig::canonical(Mode::Pair).angles().len(), 10);
        let single = GridConfig::canonical(Mode::Single).angles();
        assert_eq!(single.len(), 20);
        assert_eq!(single.last(), Some(&342));
    }

    #[test]
    fn one_of_everything() {
        let config = GridConfig {
            distances: vec![25],
            angle_step_deg: 360,
            sizes: vec![20],
            polarity_pairs: vec![(Polarity::White, Polarity::Black)],
            flankers: vec![Letter::S],
            targets: vec![Letter::A],
            ..GridConfig::canonical(Mode::Single)
        };
        let grid = build_grid(&config).unwrap();
        let flanked: Vec<_> = grid.iter().filter(|s| s.flanker.is_some()).collect();
        assert_eq!(flanked.len(), 1);
        assert_eq!(grid.len(), 1 + 2);
    }

    #[test]
    fn invalid_grids() {
        let mut c = GridConfig::desk(Mode::Pair);
        c.targets = vec![Letter::H];
        assert!(build_grid(&c).is_err());
        let mut c = GridConfig::desk(Mode::Pair);
        c.angle_step_deg = 7;
        assert!(build_grid(&c).is_err());
        let mut c = GridConfig::desk(Mode::Pair);
        c.distances.clear();
        assert!(build_grid(&c).is_err());
    }
}
