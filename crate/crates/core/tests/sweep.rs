use std::collections::HashSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use crowding_core::foveation::AcuityProfile;
use crowding_core::imaging::{Canvas, ImageBuffer, Letter, Mode, Polarity, SceneComposer, N_CLASSES};
use crowding_core::nn::Classifier;
use crowding_core::sweep::*;
use crowding_core::{Error, Result};

/// Deterministic stand-in model: probabilities derived from a pixel checksum.
struct Checksum {
    canvas: Canvas,
    fail_after: Option<usize>,
    calls: AtomicUsize,
}

impl Checksum {
    fn new(canvas: Canvas) -> Self {
        Self { canvas, fail_after: None, calls: AtomicUsize::new(0) }
    }
}

impl Classifier for Checksum {
    fn canvas(&self) -> Canvas {
        self.canvas
    }

    fn predict(&self, image: &ImageBuffer) -> Result<Vec<f32>> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.fail_after.is_some_and(|k| n >= k) {
            return Err(Error::Data("injected failure".into()));
        }
        let sum: u64 = image.data().iter().enumerate().map(|(i, &v)| (i as u64 % 7 + 1) * v as u64).sum();
        let mut probs = vec![0.05f32; N_CLASSES];
        probs[(sum % N_CLASSES as u64) as usize] = 0.55;
        Ok(probs)
    }
}

fn ids() -> SweepIds {
    SweepIds { run_id: "r1".into(), model_id: "m1".into() }
}

#[test]
fn canonical_grid_sizes() {
    let pair = build_grid(&GridConfig::canonical(Mode::Pair)).unwrap();
    let single = build_grid(&GridConfig::canonical(Mode::Single)).unwrap();
    let flanked = |g: &[crowding_core::imaging::StimulusSpec]| g.iter().filter(|s| s.flanker.is_some()).count();
    assert_eq!(flanked(&pair), 8 * 10 * 4 * 2 * 11 * 10);
    assert_eq!(flanked(&pair), 70_400);
    assert_eq!(flanked(&single), 140_800);
    assert_eq!(pair.len() - flanked(&pair), 32);
    assert_eq!(single.len() - flanked(&single), 32);
}

#[test]
fn every_condition_appears_once() {
    let grid = build_grid(&GridConfig::desk(Mode::Single)).unwrap();
    let mut seen = HashSet::new();
    for s in &grid {
        let key = (s.target, s.target_polarity, s.flanker, s.flanker_polarity, s.size_pt, s.spacing_px, s.angle_deg.to_bits(), s.mode);
        assert!(seen.insert(key), "duplicate {s:?}");
    }
    assert!(grid.iter().all(|s| s.eccentricity_px == 16 && s.validate().is_ok()));
    let first = &grid[0];
    assert_eq!((first.target, first.flanker, first.spacing_px, first.angle_deg), (Letter::A, Some(Letter::A), 7, 0.0));
    assert_eq!(grid[1].angle_deg, 18.0);
}

fn small_grid() -> GridConfig {
    GridConfig {
        targets: vec![Letter::A, Letter::Q],
        flankers: vec![Letter::B, Letter::S],
        polarity_pairs: vec![(Polarity::White, Polarity::Black)],
        sizes: vec![6],
        distances: vec![9, 13],
        angle_step_deg: 90,
        ..GridConfig::desk(Mode::Pair)
    }
}

#[test]
fn record_order_ignores_worker_count() {
    let canvas = Canvas::square(64);
    let composer = SceneComposer::with_defaults(canvas);
    let profile = AcuityProfile::standard(canvas);
    let grid = build_grid(&small_grid()).unwrap();
    let one = run_sweep(&Checksum::new(canvas), &grid, &composer, &profile, 1, &ids()).unwrap();
    let three = run_sweep(&Checksum::new(canvas), &grid, &composer, &profile, 3, &ids()).unwrap();
    assert_eq!(one, three);
    assert_eq!(one.len(), grid.len());
    for (r, s) in one.iter().zip(&grid) {
        assert_eq!((r.target, r.flanker, r.spacing_px, r.angle_deg), (s.target, s.flanker, s.spacing_px, s.angle_deg));
        assert_eq!(r.correct, Some(r.predicted) == r.target.class_index());
        assert_eq!((r.run_id.as_str(), r.model_id.as_str()), ("r1", "m1"));
    }
}

#[test]
fn worker_failure_reports_progress() {
    let canvas = Canvas::square(64);
    let composer = SceneComposer::with_defaults(canvas);
    let grid = build_grid(&small_grid()).unwrap();
    let mut model = Checksum::new(canvas);
    model.fail_after = Some(5);
    match run_sweep(&model, &grid, &composer, &AcuityProfile::standard(canvas), 1, &ids()) {
        Err(Error::Sweep { completed, total, .. }) => assert_eq!((completed, total), (5, grid.len())),
        other => panic!("{other:?}"),
    }
    let wrong = Checksum::new(Canvas::square(32));
    assert!(run_sweep(&wrong, &grid, &composer, &AcuityProfile::standard(canvas), 1, &ids()).is_err());
}

#[test]
fn records_survive_a_file_round_trip() {
    let canvas = Canvas::square(64);
    let composer = SceneComposer::with_defaults(canvas);
    let grid = build_grid(&small_grid()).unwrap();
    let records = run_sweep(&Checksum::new(canvas), &grid, &composer, &AcuityProfile::standard(canvas), 2, &ids()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.csv");
    write_records(&path, &records).unwrap();
    let back = read_records(&path).unwrap();
    assert_eq!(back, records);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), RECORD_HEADER.join(","));
    assert!(text.lines().last().unwrap().contains(",none,none,"));
    let again = dir.path().join("again.csv");
    write_records(&again, &back).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(&path).unwrap());
}

fn read_err(text: &str) -> (usize, String) {
    match read_records_from(text.as_bytes(), Path::new("x.csv")) {
        Err(Error::Record { line, reason, .. }) => (line, reason),
        other => panic!("{other:?}"),
    }
}

#[test]
fn malformed_record_files_name_the_line() {
    let header = RECORD_HEADER.join(",");
    let probs = ",0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1";
    let good = format!("r,m,single,left,false,A,white,B,black,6,9,18,A,true{probs}");
    assert_eq!(read_records_from(format!("{header}\n{good}\n").as_bytes(), Path::new("x")).unwrap().len(), 1);
    assert_eq!(read_err("a,b,c\n").0, 1);
    let lying = format!("r,m,single,left,false,A,white,B,black,6,9,18,B,true{probs}");
    let (line, reason) = read_err(&format!("{header}\n{good}\n{lying}\n"));
    assert_eq!(line, 3);
    assert!(reason.contains("correct flag"));
    let half = format!("r,m,single,left,false,A,white,B,none,6,9,18,A,true{probs}");
    assert_eq!(read_err(&format!("{header}\n{half}\n")).0, 2);
    let short = "r,m,single";
    assert_eq!(read_err(&format!("{header}\n{good}\n{good}\n{short}\n")).0, 4);
    assert!(read_err(&format!("{header}\nr,m,single,left,false,S,white,B,black,6,9,18,A,true{probs}\n")).1.len() > 0);
}
