use std::collections::HashMap;

use crowding_core::analysis::*;
use crowding_core::imaging::{Letter, Mode, Polarity, Side, N_CLASSES};
use crowding_core::sweep::TrialRecord;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn record(mode: Mode, target: Letter, flanker: Option<Letter>, spacing: u32, angle: f64, predicted: usize) -> TrialRecord {
    TrialRecord {
        run_id: "run".into(),
        model_id: "model".into(),
        mode,
        side: Side::Left,
        acuity: false,
        target,
        target_polarity: Polarity::White,
        flanker,
        flanker_polarity: flanker.map(|_| Polarity::Black),
        size_pt: 20,
        spacing_px: spacing,
        angle_deg: angle,
        predicted,
        correct: Some(predicted) == target.class_index(),
        probs: [0.1; N_CLASSES],
    }
}

fn class(l: Letter) -> usize {
    l.class_index().unwrap()
}

fn random_records(n: usize, seed: u64) -> Vec<TrialRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mode = if rng.gen_bool(0.5) { Mode::Single } else { Mode::Pair };
            let target = Letter::TARGETS[rng.gen_range(0..8)];
            let flanker = (!rng.gen_bool(0.05)).then(|| Letter::ALPHABET[rng.gen_range(0..10)]);
            let predicted = if rng.gen_bool(0.6) { class(target) } else { rng.gen_range(0..N_CLASSES) };
            let span = if mode == Mode::Pair { 10 } else { 20 };
            let mut r = record(
                mode,
                target,
                flanker,
                25 + 2 * rng.gen_range(0..11),
                18.0 * rng.gen_range(0..span) as f64,
                predicted,
            );
            r.side = if rng.gen_bool(0.5) { Side::Left } else { Side::Right };
            r.target_polarity = Polarity::BOTH[rng.gen_range(0..2)];
            r.flanker_polarity = flanker.map(|_| Polarity::BOTH[rng.gen_range(0..2)]);
            r.size_pt = [20, 26][rng.gen_range(0..2)];
            if flanker.is_none() {
                r.mode = Mode::Unflanked;
                r.spacing_px = 0;
                r.angle_deg = 0.0;
            }
            r
        })
        .collect()
}

fn ratio(c: u64, n: u64) -> f64 {
    c as f64 / n as f64
}

fn is_sh(r: &TrialRecord) -> bool {
    matches!(r.flanker, Some(Letter::S) | Some(Letter::H))
}

#[test]
fn four_record_curve() {
    let recs = vec![
        record(Mode::Single, Letter::A, Some(Letter::B), 25, 0.0, 0),
        record(Mode::Single, Letter::A, Some(Letter::B), 25, 0.0, 0),
        record(Mode::Single, Letter::A, Some(Letter::B), 45, 0.0, 1),
        record(Mode::Single, Letter::A, Some(Letter::B), 45, 0.0, 2),
        record(Mode::Unflanked, Letter::A, None, 0, 0.0, 0),
    ];
    let c = accuracy_by_spacing(&recs, FlankerFilter::All).unwrap();
    assert_eq!(c.accuracies(), vec![1.0, 0.0]);
    assert_eq!(c.distances(), vec![25.0, 45.0]);
    assert_eq!(c.unflanked_accuracy, 1.0);
    assert!(accuracy_by_spacing(&recs, FlankerFilter::OnlySH).is_err());
    assert!(accuracy_by_spacing(&recs[..4], FlankerFilter::All).is_err());
}

#[test]
fn condition_cells_recover_constructed_rates() {
    let mut recs = Vec::new();
    let rates = [(Polarity::White, Polarity::White, 1, 4), (Polarity::White, Polarity::Black, 3, 4), (Polarity::Black, Polarity::Black, 0, 2)];
    for (tp, fp, correct, total) in rates {
        for i in 0..total {
            let mut r = record(Mode::Single, Letter::C, Some(Letter::S), 25, 0.0, if i < correct { class(Letter::C) } else { 9 });
            r.target_polarity = tp;
            r.flanker_polarity = Some(fp);
            recs.push(r);
        }
    }
    let t = condition_table(&recs, false).unwrap();
    assert_eq!(t.cells.len(), 4);
    let key = |tp, fp| ConditionKey { target_polarity: tp, flanker_polarity: fp, size_pt: 20 };
    assert_eq!(t.get(key(Polarity::White, Polarity::White)).unwrap().accuracy, Some(0.25));
    assert_eq!(t.get(key(Polarity::White, Polarity::Black)).unwrap().accuracy, Some(0.75));
    assert_eq!(t.get(key(Polarity::Black, Polarity::Black)).unwrap().accuracy, Some(0.0));
    assert_eq!(t.get(key(Polarity::Black, Polarity::White)).unwrap().accuracy, None);
    assert_eq!(t.cells.iter().map(|c| c.count).sum::<u64>(), 10);
    assert_eq!(key(Polarity::White, Polarity::Black).label(), "W/B 20");
    assert!(condition_table(&recs, true).is_err());
}

#[test]
fn single_mode_polar_map_is_angles_by_distances() {
    let mut recs = Vec::new();
    for a in 0..20 {
        for d in 0..11 {
            recs.push(record(Mode::Single, Letter::A, Some(Letter::B), 25 + 2 * d, 18.0 * a as f64, (a + d) as usize % 2));
        }
    }
    let m = polar_map(&recs, FlankerFilter::All).unwrap();
    assert_eq!((m.angles.len(), m.distances.len(), m.cells.len()), (20, 11, 220));
    assert_eq!(m.cell(18, 27), Some(1.0));
    assert_eq!(m.cell(18, 25), Some(0.0));
}

#[test]
fn pair_records_fill_both_directions() {
    let recs = vec![
        record(Mode::Pair, Letter::A, Some(Letter::B), 25, 18.0, 0),
        record(Mode::Pair, Letter::A, Some(Letter::B), 25, 90.0, 3),
    ];
    let m = polar_map(&recs, FlankerFilter::All).unwrap();
    assert_eq!(m.angles, vec![18, 90, 198, 270]);
    assert_eq!(m.cell(18, 25), Some(1.0));
    assert_eq!(m.cell(198, 25), Some(1.0));
    assert_eq!(m.cell(270, 25), Some(0.0));
}

#[test]
fn worked_extrapolation() {
    let curve = SpacingCurve {
        filter: FlankerFilter::All,
        points: vec![
            SpacingPoint { spacing_px: 25, accuracy: 0.30, count: 1 },
            SpacingPoint { spacing_px: 45, accuracy: 0.32, count: 1 },
        ],
        unflanked_accuracy: 0.9697,
        unflanked_count: 1,
    };
    let (slope, intercept) = ols(&curve.distances(), &curve.accuracies()).unwrap();
    assert!((slope - 0.001).abs() < 1e-12 && (intercept - 0.275).abs() < 1e-12);
    match bouma_extrapolate(&curve).unwrap() {
        BoumaEstimate::Spacing(d) => assert!((d - 694.7).abs() <= 0.1, "{d}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn extrapolation_sentinels() {
    let mut curve = SpacingCurve {
        filter: FlankerFilter::All,
        points: vec![
            SpacingPoint { spacing_px: 25, accuracy: 0.9, count: 1 },
            SpacingPoint { spacing_px: 35, accuracy: 0.9, count: 1 },
        ],
        unflanked_accuracy: 0.9,
        unflanked_count: 1,
    };
    assert_eq!(bouma_extrapolate(&curve).unwrap(), BoumaEstimate::AlreadyUncrowded(25.0));
    curve.points[1].accuracy = 0.5;
    curve.unflanked_accuracy = 0.95;
    assert_eq!(bouma_extrapolate(&curve).unwrap(), BoumaEstimate::NonConverging);
    curve.points.truncate(1);
    assert!(bouma_extrapolate(&curve).is_err());
}

#[test]
fn half_eccentricity() {
    assert_eq!(bouma_theoretical(56.0), 28.0);
    assert_eq!(bouma_theoretical(16.0), 8.0);
}

#[test]
fn radial_and_tangential_buckets() {
    let mut recs = vec![
        record(Mode::Single, Letter::A, Some(Letter::B), 25, 0.0, 1),
        record(Mode::Single, Letter::A, Some(Letter::B), 25, 180.0, 1),
        record(Mode::Single, Letter::A, Some(Letter::B), 25, 90.0, 0),
        record(Mode::Single, Letter::A, Some(Letter::B), 25, 270.0, 1),
        record(Mode::Single, Letter::A, Some(Letter::B), 25, 36.0, 0),
        record(Mode::Single, Letter::A, Some(Letter::B), 27, 0.0, 0),
    ];
    recs.push({
        let mut r = record(Mode::Single, Letter::A, Some(Letter::B), 25, 90.0, 0);
        r.size_pt = 26;
        r
    });
    recs.push({
        let mut r = record(Mode::Single, Letter::A, Some(Letter::B), 25, 0.0, 0);
        r.size_pt = 26;
        r
    });
    let rt = radial_tangential(&recs, 25).unwrap();
    assert_eq!(rt.len(), 2);
    let c = rt[0].contrast;
    assert_eq!((c.first, c.first_count, c.second, c.second_count), (0.0, 2, 0.5, 2));
    assert_eq!(c.difference, 0.5);
    assert!(c.ci95.0 < 0.5 && c.ci95.1 > 0.5);
    assert_eq!(rt[1].contrast.difference, 0.0);
}

#[test]
fn in_out_follows_side() {
    let mut left_inner = record(Mode::Single, Letter::A, Some(Letter::B), 25, 0.0, 0);
    let left_outer = record(Mode::Single, Letter::A, Some(Letter::B), 25, 180.0, 1);
    let c = in_out_asymmetry(&[left_inner.clone(), left_outer.clone()]).unwrap();
    assert_eq!((c.first, c.second), (1.0, 0.0));
    left_inner.side = Side::Right;
    let mut right_outer = left_outer;
    right_outer.side = Side::Right;
    let c = in_out_asymmetry(&[left_inner, right_outer]).unwrap();
    assert_eq!((c.first, c.second), (0.0, 1.0));
    let pair = record(Mode::Pair, Letter::A, Some(Letter::B), 25, 0.0, 0);
    assert!(in_out_asymmetry(&[pair]).is_err());
}

#[test]
fn hemifield_skips_horizontal() {
    let recs = vec![
        record(Mode::Single, Letter::A, Some(Letter::B), 25, 90.0, 0),
        record(Mode::Single, Letter::A, Some(Letter::B), 25, 270.0, 1),
        record(Mode::Single, Letter::A, Some(Letter::B), 25, 0.0, 1),
        record(Mode::Single, Letter::A, Some(Letter::B), 25, 180.0, 1),
        record(Mode::Pair, Letter::A, Some(Letter::B), 25, 36.0, 0),
    ];
    let c = hemifield_split(&recs).unwrap();
    assert_eq!((c.first_count, c.second_count), (2, 2));
    assert_eq!((c.first, c.second), (1.0, 0.5));
}

#[test]
fn substitution_worked_examples() {
    let c = substitution_excess(10, 3, &[1; 7]).unwrap();
    assert!((c.flanker_rate - 0.30).abs() < 1e-15 && (c.other_rate - 0.10).abs() < 1e-15);
    assert!((c.excess_pp - 20.0).abs() < 1e-12);
    let c = substitution_excess(8, 0, &[1, 2, 0, 1, 0, 0, 4, 0]).unwrap();
    assert_eq!(c.excess_pp, -c.other_rate * 100.0);
    assert!(substitution_excess(0, 0, &[0]).is_err());
}

#[test]
fn uniform_errors_show_no_excess() {
    let recs: Vec<TrialRecord> = (0..N_CLASSES)
        .filter(|&p| p != class(Letter::A))
        .map(|p| record(Mode::Single, Letter::A, Some(Letter::B), 25, 0.0, p))
        .collect();
    assert_eq!(recs.len(), 9);
    let c = flanker_confusion(&recs).unwrap();
    assert_eq!(c.error_trials, 9);
    assert_eq!(c.excess_pp, 0.0);
}

#[test]
fn confusion_ignores_unusable_trials() {
    let recs = vec![
        record(Mode::Single, Letter::A, Some(Letter::S), 25, 0.0, 3),
        record(Mode::Single, Letter::A, Some(Letter::A), 25, 0.0, 3),
        record(Mode::Single, Letter::A, Some(Letter::B), 25, 0.0, 0),
        record(Mode::Unflanked, Letter::A, None, 0, 0.0, 3),
    ];
    assert!(flanker_confusion(&recs).is_err());
}

#[test]
fn spearman_cases() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), None);
    let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 3.0]).unwrap();
    // Ranks (1,2,3,4) against (1.5,1.5,3,4).
    let expected = 4.5 / (5.0f64 * 4.5).sqrt();
    assert!((r - expected).abs() < 1e-12);
}

fn curve_from(xs: &[f64], ys: &[f64]) -> SpacingCurve {
    SpacingCurve {
        filter: FlankerFilter::All,
        points: xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| SpacingPoint { spacing_px: x as u32, accuracy: y, count: 100 })
            .collect(),
        unflanked_accuracy: 0.97,
        unflanked_count: 100,
    }
}

#[test]
fn psychometric_zero_noise_recovery() {
    let xs: Vec<f64> = (25..=45).step_by(2).map(f64::from).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| psychometric(x, 35.0, 5.0, 0.125, 0.97)).collect();
    let fit = fit_psychometric(&curve_from(&xs, &ys), false).unwrap();
    for (got, want) in [(fit.mu, 35.0), (fit.sigma, 5.0), (fit.gamma, 0.125), (fit.lambda, 0.97)] {
        assert!((got - want).abs() / want < 0.01, "{fit:?}");
    }
    let fixed = fit_psychometric(&curve_from(&xs, &ys), true).unwrap();
    assert_eq!(fixed.gamma, CHANCE_FLOOR);
    assert!((fixed.sigma - 5.0).abs() < 0.05 && (fixed.lambda - 0.97).abs() < 0.01);
}

#[test]
fn psychometric_rejects_bad_input() {
    let xs = [25.0, 27.0, 29.0, 31.0];
    assert!(matches!(fit_points(&xs, &[0.5; 4], false), Err(crowding_core::Error::Fit(_))));
    assert!(fit_points(&xs[..3], &[0.2, 0.5, 0.9], false).is_err());
    assert!(fit_points(&xs[..3], &[0.2, 0.5, 0.9], true).is_ok());
    assert!(fit_points(&xs[..2], &[0.2, 0.5], true).is_err());
}

#[test]
fn residual_does_not_grow_with_consistent_points() {
    let xs = [25.0, 29.0, 33.0, 37.0, 41.0, 45.0];
    let ys = [0.20, 0.18, 0.45, 0.70, 0.93, 0.90];
    let fit = fit_points(&xs, &ys, false).unwrap();
    let mut xs2 = xs.to_vec();
    let mut ys2 = ys.to_vec();
    for x in [27.0, 31.0, 35.0, 39.0, 43.0] {
        xs2.push(x);
        ys2.push(fit.predict(x));
    }
    let refit = fit_points(&xs2, &ys2, false).unwrap();
    assert!(refit.residual <= fit.residual + 1e-8, "{} > {}", refit.residual, fit.residual);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fits_stay_in_the_box(ys in prop::collection::vec(-0.2f64..1.3, 6)) {
        prop_assume!(ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - ys.iter().cloned().fold(f64::INFINITY, f64::min) > 1e-3);
        let xs: Vec<f64> = (0..6).map(|i| 25.0 + 4.0 * i as f64).collect();
        if let Ok(fit) = fit_points(&xs, &ys, false) {
            prop_assert!(fit.gamma >= 0.0 && fit.lambda <= 1.0 && fit.gamma < fit.lambda && fit.sigma > 0.0);
        }
    }

    #[test]
    fn aggregates_match_brute_force(seed in any::<u64>(), n in 200usize..800) {
        let recs = random_records(n, seed);
        for filter in FlankerFilter::VARIANTS {
            let admitted = |r: &TrialRecord| r.flanker.is_some() && match filter {
                FlankerFilter::All => true,
                FlankerFilter::ExcludeSH => !is_sh(r),
                FlankerFilter::OnlySH => is_sh(r),
            };
            if let Ok(curve) = accuracy_by_spacing(&recs, filter) {
                for p in &curve.points {
                    let hits: Vec<&TrialRecord> = recs.iter().filter(|r| admitted(r) && r.spacing_px == p.spacing_px).collect();
                    let c = hits.iter().filter(|r| r.correct).count() as u64;
                    prop_assert_eq!(p.count, hits.len() as u64);
                    prop_assert_eq!(p.accuracy, ratio(c, hits.len() as u64));
                }
            }
            if let Ok(map) = polar_map(&recs, filter) {
                let mut cells: HashMap<(u32, u32), (u64, u64)> = HashMap::new();
                for r in recs.iter().filter(|r| admitted(r)) {
                    let a = r.angle_deg as u32;
                    let mut dirs = vec![a];
                    if r.mode == Mode::Pair {
                        dirs.push((a + 180) % 360);
                    }
                    for d in dirs {
                        let e = cells.entry((d, r.spacing_px)).or_default();
                        e.0 += r.correct as u64;
                        e.1 += 1;
                    }
                }
                prop_assert_eq!(map.counts.iter().sum::<u64>(), cells.values().map(|v| v.1).sum::<u64>());
                for ((a, d), (c, t)) in cells {
                    prop_assert_eq!(map.cell(a, d), Some(ratio(c, t)));
                }
            }
        }
        let all = accuracy_by_spacing(&recs, FlankerFilter::All).unwrap();
        let ex = accuracy_by_spacing(&recs, FlankerFilter::ExcludeSH).unwrap();
        let only = accuracy_by_spacing(&recs, FlankerFilter::OnlySH).unwrap();
        let total = |c: &SpacingCurve| c.points.iter().map(|p| p.count).sum::<u64>();
        prop_assert_eq!(total(&all), total(&ex) + total(&only));
    }

    #[test]
    fn pair_maps_are_point_symmetric(seed in any::<u64>()) {
        let recs: Vec<TrialRecord> = random_records(400, seed).into_iter().filter(|r| r.mode == Mode::Pair).collect();
        let m = polar_map(&recs, FlankerFilter::All).unwrap();
        for &a in &m.angles {
            for &d in &m.distances {
                prop_assert_eq!(m.cell(a, d), m.cell((a + 180) % 360, d));
            }
        }
    }
}

fn fixture_report() -> CrowdingReport {
    let recs = random_records(3000, 11);
    build_report(
        &recs,
        &ReportOptions { eccentricity_px: 56, radial_spacing_px: None, fit_psychometric: true, fix_floor_to_chance: false },
    )
    .unwrap()
}

#[test]
fn report_components_agree() {
    let report = fixture_report();
    assert_eq!(report.record_count, 3000);
    assert_eq!(report.curves.len(), 3);
    assert_eq!(report.polar_maps.len(), 3);
    assert_eq!(report.bouma.theoretical_px, 28.0);
    assert_eq!(report.radial_tangential[0].spacing_px, 25);
    assert!(report.confusion.is_some() && report.in_out.is_some() && report.hemifield.is_some());
    for m in &report.polar_maps {
        assert!(m.cells.iter().flatten().all(|&a| (0.0..=1.0).contains(&a)));
    }
}

#[test]
fn report_lists_missing_components() {
    let recs: Vec<TrialRecord> = random_records(1000, 3).into_iter().filter(|r| !is_sh(r)).collect();
    let report = build_report(
        &recs,
        &ReportOptions { eccentricity_px: 56, radial_spacing_px: Some(25), fit_psychometric: false, fix_floor_to_chance: false },
    )
    .unwrap();
    assert!(report.curve(FlankerFilter::OnlySH).is_none());
    assert!(report.notes.iter().any(|n| n.contains("only-SH")));
}

#[test]
fn rendering_is_deterministic_and_complete() {
    let report = fixture_report();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = render_report(&report, a.path()).unwrap();
    let fb = render_report(&report, b.path()).unwrap();
    assert_eq!(fa.svgs.len(), 5);
    for (x, y) in fa.svgs.iter().chain(&fa.csvs).zip(fb.svgs.iter().chain(&fb.csvs)) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    for m in &report.polar_maps {
        let svg = polar_svg(m);
        assert_eq!(svg.matches("class=\"cell\"").count(), m.angles.len() * m.distances.len());
    }
    let csv = std::fs::read_to_string(a.path().join("spacing_curve.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().split(',').nth(2).unwrap().split('.').nth(1).unwrap().len() == 4);
}

#[test]
fn two_cell_color_scale() {
    let map = PolarMap {
        filter: FlankerFilter::All,
        angles: vec![0, 180],
        distances: vec![25],
        cells: vec![Some(0.0), Some(1.0)],
        counts: vec![1, 1],
    };
    let hex = |c: [u8; 3]| format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2]);
    let svg = polar_svg(&map);
    let fills: Vec<&str> = svg
        .lines()
        .filter(|l| l.contains("class=\"cell\""))
        .map(|l| l.split("fill=\"").nth(1).unwrap().split('"').next().unwrap())
        .collect();
    assert_eq!(fills, vec![hex(SCALE_MIN_COLOR), hex(SCALE_MAX_COLOR)]);
    assert_eq!(color_for(0.5), hex([161, 116, 61]));
    let empty = PolarMap { cells: vec![None, Some(1.0)], ..map };
    assert!(polar_svg(&empty).contains("fill=\"#bfbfbf\""));
}
