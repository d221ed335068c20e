//! Crowding metrics computed from trial records.
//!
//! Every accuracy is a ratio of integer counts, so aggregates are exact and
//! reproducible regardless of record order.

mod psychometric;
mod render;

use std::collections::BTreeMap;

use serde::Serialize;

pub use psychometric::{fit_psychometric, fit_points, psychometric, PsychometricFit, CHANCE_FLOOR};
pub use render::{color_for, conditions_svg, polar_svg, render_report, spacing_svg, RenderedFiles, SCALE_MAX_COLOR, SCALE_MIN_COLOR};

use crate::error::{Error, Result};
use crate::imaging::{Mode, Polarity, Side, N_CLASSES};
use crate::sweep::TrialRecord;

/// Which flankers an aggregate includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlankerFilter {
    All,
    ExcludeSH,
    OnlySH,
}

impl FlankerFilter {
    pub const VARIANTS: [FlankerFilter; 3] = [FlankerFilter::All, FlankerFilter::ExcludeSH, FlankerFilter::OnlySH];

    pub fn as_str(self) -> &'static str {
        match self {
            FlankerFilter::All => "all",
            FlankerFilter::ExcludeSH => "exclude-SH",
            FlankerFilter::OnlySH => "only-SH",
        }
    }

    /// Whether a flanked record passes; unflanked records never do.
    pub fn admits(self, record: &TrialRecord) -> bool {
        match (self, record.flanker) {
            (_, None) => false,
            (FlankerFilter::All, Some(_)) => true,
            (FlankerFilter::ExcludeSH, Some(f)) => !f.is_novel(),
            (FlankerFilter::OnlySH, Some(f)) => f.is_novel(),
        }
    }
}

/// Correct/total tally.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub correct: u64,
    pub total: u64,
}

impl Tally {
    pub fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += correct as u64;
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Integer degrees in `[0, 360)`.
pub fn angle_key(angle_deg: f64) -> u32 {
    (angle_deg.round() as i64).rem_euclid(360) as u32
}

/// Flanker directions a record occupies: its own angle, plus the
/// diametric partner for pairs.
pub fn occupied_angles(record: &TrialRecord) -> Vec<u32> {
    let a = angle_key(record.angle_deg);
    if record.mode == Mode::Pair {
        vec![a, (a + 180) % 360]
    } else {
        vec![a]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpacingPoint {
    pub spacing_px: u32,
    pub accuracy: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpacingCurve {
    pub filter: FlankerFilter,
    pub points: Vec<SpacingPoint>,
    pub unflanked_accuracy: f64,
    pub unflanked_count: u64,
}

impl SpacingCurve {
    pub fn distances(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.spacing_px as f64).collect()
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.accuracy).collect()
    }

    /// Mean flanked accuracy over all admitted trials.
    pub fn flanked_accuracy(&self) -> f64 {
        let (c, n) = self
            .points
            .iter()
            .fold((0f64, 0u64), |(c, n), p| (c + p.accuracy * p.count as f64, n + p.count));
        c / n as f64
    }
}

/// Accuracy per spacing over admitted flanked trials, with the unflanked
/// accuracy as reference.
pub fn accuracy_by_spacing(records: &[TrialRecord], filter: FlankerFilter) -> Result<SpacingCurve> {
    let mut by_spacing: BTreeMap<u32, Tally> = BTreeMap::new();
    let mut unflanked = Tally::default();
    for r in records {
        if r.flanker.is_none() {
            unflanked.add(r.correct);
        } else if filter.admits(r) {
            by_spacing.entry(r.spacing_px).or_default().add(r.correct);
        }
    }
    if by_spacing.is_empty() {
        return Err(Error::Empty(format!("no flanked records for filter {}", filter.as_str())));
    }
    let unflanked_accuracy = unflanked
        .accuracy()
        .ok_or_else(|| Error::Empty("no unflanked records".into()))?;
    let points = by_spacing
        .into_iter()
        .map(|(spacing_px, t)| SpacingPoint {
            spacing_px,
            accuracy: t.accuracy().expect("bucket is non-empty"),
            count: t.total,
        })
        .collect();
    Ok(SpacingCurve {
        filter,
        points,
        unflanked_accuracy,
        unflanked_count: unflanked.total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct ConditionKey {
    pub target_polarity: Polarity,
    pub flanker_polarity: Polarity,
    pub size_pt: u32,
}

impl ConditionKey {
    /// Label such as `W/B 20`: white target, black flanker, size 20.
    pub fn label(&self) -> String {
        format!(
            "{}/{} {}",
            self.target_polarity.tag(),
            self.flanker_polarity.tag(),
            self.size_pt
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCell {
    pub key: ConditionKey,
    /// `None` when no trial falls in the cell.
    pub accuracy: Option<f64>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionTable {
    pub exclude_sh: bool,
    pub cells: Vec<ConditionCell>,
}

impl ConditionTable {
    pub fn get(&self, key: ConditionKey) -> Option<&ConditionCell> {
        self.cells.iter().find(|c| c.key == key)
    }
}

/// Accuracy per (target polarity, flanker polarity, size), collapsed over
/// spacing and angle. The table spans every polarity pairing and every size
/// present among flanked records; empty cells have no accuracy.
pub fn condition_table(records: &[TrialRecord], exclude_sh: bool) -> Result<ConditionTable> {
    let filter = if exclude_sh { FlankerFilter::ExcludeSH } else { FlankerFilter::All };
    let sizes: Vec<u32> = {
        let mut s: Vec<u32> = records.iter().filter(|r| r.flanker.is_some()).map(|r| r.size_pt).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let mut tallies: BTreeMap<ConditionKey, Tally> = BTreeMap::new();
    for r in records.iter().filter(|r| filter.admits(r)) {
        let key = ConditionKey {
            target_polarity: r.target_polarity,
            flanker_polarity: r.flanker_polarity.expect("flanked record has a polarity"),
            size_pt: r.size_pt,
        };
        tallies.entry(key).or_default().add(r.correct);
    }
    if tallies.is_empty() {
        return Err(Error::Empty(format!("no flanked records for filter {}", filter.as_str())));
    }
    let mut cells = Vec::new();
    for tp in Polarity::BOTH {
        for fp in Polarity::BOTH {
            for &size_pt in &sizes {
                let key = ConditionKey {
                    target_polarity: tp,
                    flanker_polarity: fp,
                    size_pt,
                };
                let t = tallies.get(&key).copied().unwrap_or_default();
                cells.push(ConditionCell {
                    key,
                    accuracy: t.accuracy(),
                    count: t.total,
                });
            }
        }
    }
    Ok(ConditionTable { exclude_sh, cells })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolarMap {
    pub filter: FlankerFilter,
    /// Ascending flanker directions (degrees).
    pub angles: Vec<u32>,
    /// Ascending spacings (px).
    pub distances: Vec<u32>,
    /// Row-major `[angle][distance]` accuracy, `None` for empty cells.
    pub cells: Vec<Option<f64>>,
    pub counts: Vec<u64>,
}

impl PolarMap {
    pub fn cell(&self, angle: u32, distance: u32) -> Option<f64> {
        let a = self.angles.iter().position(|&x| x == angle)?;
        let d = self.distances.iter().position(|&x| x == distance)?;
        self.cells[a * self.distances.len() + d]
    }
}

/// Accuracy per (direction, spacing), collapsed over size and polarity.
/// Pair records fill both their own cell and the diametric one.
pub fn polar_map(records: &[TrialRecord], filter: FlankerFilter) -> Result<PolarMap> {
    let mut tallies: BTreeMap<(u32, u32), Tally> = BTreeMap::new();
    for r in records.iter().filter(|r| filter.admits(r)) {
        for a in occupied_angles(r) {
            tallies.entry((a, r.spacing_px)).or_default().add(r.correct);
        }
    }
    if tallies.is_empty() {
        return Err(Error::Empty(format!("no flanked records for filter {}", filter.as_str())));
    }
    let mut angles: Vec<u32> = tallies.keys().map(|k| k.0).collect();
    angles.dedup();
    let mut distances: Vec<u32> = tallies.keys().map(|k| k.1).collect();
    distances.sort_unstable();
    distances.dedup();
    let mut cells = Vec::with_capacity(angles.len() * distances.len());
    let mut counts = Vec::with_capacity(angles.len() * distances.len());
    for &a in &angles {
        for &d in &distances {
            let t = tallies.get(&(a, d)).copied().unwrap_or_default();
            cells.push(t.accuracy());
            counts.push(t.total);
        }
    }
    Ok(PolarMap {
        filter,
        angles,
        distances,
        cells,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "spacing_px", rename_all = "kebab-case")]
pub enum BoumaEstimate {
    /// Spacing at which the fitted line reaches unflanked accuracy.
    Spacing(f64),
    /// Flanked accuracy already matches unflanked at this spacing.
    AlreadyUncrowded(f64),
    /// Accuracy does not rise with spacing, so the line never gets there.
    NonConverging,
}

/// Ordinary least-squares line through `(x, y)`: `(slope, intercept)`.
pub fn ols(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("OLS needs at least two paired points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("OLS needs at least two distinct x values".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Extrapolates the spacing at which flanked accuracy would equal the
/// unflanked accuracy, from a straight line through the per-spacing points.
pub fn bouma_extrapolate(curve: &SpacingCurve) -> Result<BoumaEstimate> {
    let xs = curve.distances();
    let ys = curve.accuracies();
    let (slope, intercept) = ols(&xs, &ys)?;
    let target = curve.unflanked_accuracy;
    if let Some(p) = curve.points.iter().find(|p| p.accuracy >= target) {
        return Ok(BoumaEstimate::AlreadyUncrowded(p.spacing_px as f64));
    }
    if slope <= 0.0 {
        return Ok(BoumaEstimate::NonConverging);
    }
    Ok(BoumaEstimate::Spacing((target - intercept) / slope))
}

/// Half the eccentricity.
pub fn bouma_theoretical(eccentricity_px: f64) -> f64 {
    eccentricity_px / 2.0
}

/// Difference of two proportions with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Contrast {
    pub first: f64,
    pub first_count: u64,
    pub second: f64,
    pub second_count: u64,
    /// `second - first`.
    pub difference: f64,
    pub ci95: (f64, f64),
}

impl Contrast {
    fn new(first: Tally, second: Tally, what: &str) -> Result<Self> {
        let a = first.accuracy().ok_or_else(|| Error::Empty(format!("no trials in {what} (first bucket)")))?;
        let b = second.accuracy().ok_or_else(|| Error::Empty(format!("no trials in {what} (second bucket)")))?;
        let se = (a * (1.0 - a) / first.total as f64 + b * (1.0 - b) / second.total as f64).sqrt();
        let d = b - a;
        Ok(Self {
            first: a,
            first_count: first.total,
            second: b,
            second_count: second.total,
            difference: d,
            ci95: (d - 1.96 * se, d + 1.96 * se),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialTangential {
    pub size_pt: u32,
    pub spacing_px: u32,
    /// `first` is radial ({0°, 180°}), `second` tangential ({90°, 270°});
    /// the difference is tangential minus radial.
    pub contrast: Contrast,
}

fn tally_angles(records: &[TrialRecord], keep: impl Fn(&TrialRecord) -> bool, angles: &[u32]) -> Tally {
    let mut t = Tally::default();
    for r in records.iter().filter(|r| r.flanker.is_some() && keep(r)) {
        if occupied_angles(r).iter().any(|a| angles.contains(a)) {
            t.add(r.correct);
        }
    }
    t
}

/// Radial versus tangential accuracy at one spacing, per size.
pub fn radial_tangential(records: &[TrialRecord], spacing_px: u32) -> Result<Vec<RadialTangential>> {
    let mut sizes: Vec<u32> = records.iter().filter(|r| r.flanker.is_some()).map(|r| r.size_pt).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.is_empty() {
        return Err(Error::Empty("no flanked records".into()));
    }
    sizes
        .into_iter()
        .map(|size_pt| {
            let keep = |r: &TrialRecord| r.size_pt == size_pt && r.spacing_px == spacing_px;
            let radial = tally_angles(records, keep, &[0, 180]);
            let tangential = tally_angles(records, keep, &[90, 270]);
            Ok(RadialTangential {
                size_pt,
                spacing_px,
                contrast: Contrast::new(radial, tangential, &format!("radial/tangential at {spacing_px}px, size {size_pt}"))?,
            })
        })
        .collect()
}

/// Inner (toward fixation) versus outer flanker accuracy over single-flanker
/// records, collapsed over spacing. `first` is inner, `second` outer.
pub fn in_out_asymmetry(records: &[TrialRecord]) -> Result<Contrast> {
    let (mut inner, mut outer) = (Tally::default(), Tally::default());
    for r in records.iter().filter(|r| r.mode == Mode::Single && r.flanker.is_some()) {
        let (inner_angle, outer_angle) = match r.side {
            Side::Left => (0, 180),
            Side::Right => (180, 0),
        };
        let a = angle_key(r.angle_deg);
        if a == inner_angle {
            inner.add(r.correct);
        } else if a == outer_angle {
            outer.add(r.correct);
        }
    }
    Contrast::new(inner, outer, "in-out asymmetry")
}

/// Upper versus lower visual-field accuracy (`first` upper, `second`
/// lower). Horizontal directions belong to neither half; pair records count
/// once per occupied direction.
pub fn hemifield_split(records: &[TrialRecord]) -> Result<Contrast> {
    let (mut upper, mut lower) = (Tally::default(), Tally::default());
    for r in records.iter().filter(|r| r.flanker.is_some()) {
        for a in occupied_angles(r) {
            match a {
                1..=179 => upper.add(r.correct),
                181..=359 => lower.add(r.correct),
                _ => {}
            }
        }
    }
    Contrast::new(upper, lower, "hemifield split")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Confusion {
    pub error_trials: u64,
    /// Share of error trials reporting the flanker letter.
    pub flanker_rate: f64,
    /// Mean per-class share over classes that are neither target nor flanker.
    pub other_rate: f64,
    /// `flanker_rate - other_rate`, in percentage points.
    pub excess_pp: f64,
}

/// Excess flanker reporting for one (target, flanker) cell: the flanker's
/// share of `errors` minus the mean share of each alternative in
/// `other_counts`.
pub fn substitution_excess(errors: u64, flanker_count: u64, other_counts: &[u64]) -> Result<Confusion> {
    if errors == 0 {
        return Err(Error::Empty("no error trials".into()));
    }
    if other_counts.is_empty() {
        return Err(Error::InvalidArgument("no alternative responses".into()));
    }
    let n = errors as f64;
    let flanker_rate = flanker_count as f64 / n;
    let other_rate = other_counts.iter().map(|&c| c as f64 / n).sum::<f64>() / other_counts.len() as f64;
    Ok(Confusion {
        error_trials: errors,
        flanker_rate,
        other_rate,
        excess_pp: (flanker_rate - other_rate) * 100.0,
    })
}

/// Flanker substitution on error trials whose flanker is a trained letter
/// different from the target. Every output class other than target and
/// flanker, background classes included, is an alternative.
pub fn flanker_confusion(records: &[TrialRecord]) -> Result<Confusion> {
    let alternatives = (N_CLASSES - 2) as u64;
    let (mut n, mut flanker_hits) = (0u64, 0u64);
    for r in records {
        let Some(flanker) = r.flanker else { continue };
        let Some(flanker_class) = flanker.class_index() else { continue };
        if r.correct || flanker == r.target {
            continue;
        }
        n += 1;
        if r.predicted == flanker_class {
            flanker_hits += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("no error trials with a trained, distinct flanker".into()));
    }
    let flanker_rate = flanker_hits as f64 / n as f64;
    let other_rate = (n - flanker_hits) as f64 / (alternatives * n) as f64;
    Ok(Confusion {
        error_trials: n,
        flanker_rate,
        other_rate,
        excess_pp: (flanker_rate - other_rate) * 100.0,
    })
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks). `None` when either
/// side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub eccentricity_px: u32,
    /// Spacing for the radial-tangential comparison; defaults to the smallest.
    pub radial_spacing_px: Option<u32>,
    pub fit_psychometric: bool,
    pub fix_floor_to_chance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoumaBlock {
    pub eccentricity_px: u32,
    pub theoretical_px: f64,
    pub extrapolated: BoumaEstimate,
    pub extrapolated_exclude_sh: Option<BoumaEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrowdingReport {
    pub run_ids: Vec<String>,
    pub model_ids: Vec<String>,
    pub modes: Vec<String>,
    pub record_count: usize,
    pub curves: Vec<SpacingCurve>,
    pub tables: Vec<ConditionTable>,
    pub polar_maps: Vec<PolarMap>,
    pub radial_tangential: Vec<RadialTangential>,
    pub in_out: Option<Contrast>,
    pub hemifield: Option<Contrast>,
    pub bouma: BoumaBlock,
    pub confusion: Option<Confusion>,
    pub fits: Vec<(FlankerFilter, PsychometricFit)>,
    /// Components that could not be computed from these records.
    pub notes: Vec<String>,
}

impl CrowdingReport {
    pub fn curve(&self, filter: FlankerFilter) -> Option<&SpacingCurve> {
        self.curves.iter().find(|c| c.filter == filter)
    }

    pub fn polar(&self, filter: FlankerFilter) -> Option<&PolarMap> {
        self.polar_maps.iter().find(|m| m.filter == filter)
    }
}

fn sorted_unique(items: impl Iterator<Item = String>) -> Vec<String> {
    let mut v: Vec<String> = items.collect();
    v.sort();
    v.dedup();
    v
}

/// Computes every aggregate from one record set. Components whose inputs are
/// absent (for example no S/H flankers, or pair-only records for the in-out
/// comparison) are skipped and listed in `notes`.
pub fn build_report(records: &[TrialRecord], options: &ReportOptions) -> Result<CrowdingReport> {
    if records.is_empty() {
        return Err(Error::Empty("no records".into()));
    }
    let mut notes = Vec::new();
    let mut skip = |what: &str, e: Error| notes.push(format!("{what}: {e}"));

    let all = accuracy_by_spacing(records, FlankerFilter::All)?;
    let mut curves = vec![all.clone()];
    for f in [FlankerFilter::ExcludeSH, FlankerFilter::OnlySH] {
        match accuracy_by_spacing(records, f) {
            Ok(c) => curves.push(c),
            Err(e) => skip(&format!("spacing curve {}", f.as_str()), e),
        }
    }
    let mut tables = vec![condition_table(records, false)?];
    match condition_table(records, true) {
        Ok(t) => tables.push(t),
        Err(e) => skip("condition table exclude-SH", e),
    }
    let mut polar_maps = Vec::new();
    for f in FlankerFilter::VARIANTS {
        match polar_map(records, f) {
            Ok(m) => polar_maps.push(m),
            Err(e) => skip(&format!("polar map {}", f.as_str()), e),
        }
    }
    let spacing = options
        .radial_spacing_px
        .unwrap_or_else(|| all.points.first().map_or(0, |p| p.spacing_px));
    let radial_tangential = radial_tangential(records, spacing).unwrap_or_else(|e| {
        skip("radial-tangential", e);
        Vec::new()
    });
    let in_out = in_out_asymmetry(records).map_err(|e| skip("in-out", e)).ok();
    let hemifield = hemifield_split(records).map_err(|e| skip("hemifield", e)).ok();
    let confusion = flanker_confusion(records).map_err(|e| skip("confusion", e)).ok();
    let extrapolated_exclude_sh = curves
        .iter()
        .find(|c| c.filter == FlankerFilter::ExcludeSH)
        .map(bouma_extrapolate)
        .transpose()?;
    let bouma = BoumaBlock {
        eccentricity_px: options.eccentricity_px,
        theoretical_px: bouma_theoretical(options.eccentricity_px as f64),
        extrapolated: bouma_extrapolate(&all)?,
        extrapolated_exclude_sh,
    };
    let mut fits = Vec::new();
    if options.fit_psychometric {
        for c in &curves {
            match fit_psychometric(c, options.fix_floor_to_chance) {
                Ok(fit) => fits.push((c.filter, fit)),
                Err(e) => skip(&format!("psychometric fit {}", c.filter.as_str()), e),
            }
        }
    }
    Ok(CrowdingReport {
        run_ids: sorted_unique(records.iter().map(|r| r.run_id.clone())),
        model_ids: sorted_unique(records.iter().map(|r| r.model_id.clone())),
        modes: sorted_unique(records.iter().map(|r| r.mode.as_str().to_string())),
        record_count: records.len(),
        curves,
        tables,
        polar_maps,
        radial_tangential,
        in_out,
        hemifield,
        bouma,
        confusion,
        fits,
        notes,
    })
}
