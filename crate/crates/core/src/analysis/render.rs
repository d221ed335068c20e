//! SVG figures and CSV tables for a crowding report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{BoumaEstimate, Contrast, CrowdingReport, PolarMap, SpacingCurve};
use crate::error::Result;

/// RGB at accuracy 0.
pub const SCALE_MIN_COLOR: [u8; 3] = [68, 1, 84];
/// RGB at accuracy 1.
pub const SCALE_MAX_COLOR: [u8; 3] = [253, 231, 37];
const EMPTY_COLOR: &str = "#bfbfbf";
const SERIES_COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedFiles {
    pub svgs: Vec<PathBuf>,
    pub csvs: Vec<PathBuf>,
}

/// Hex color for an accuracy on the shared linear 0-1 scale.
pub fn color_for(accuracy: f64) -> String {
    let t = accuracy.clamp(0.0, 1.0);
    let c: Vec<u8> = SCALE_MIN_COLOR
        .iter()
        .zip(SCALE_MAX_COLOR)
        .map(|(&a, b)| (a as f64 + t * (b as f64 - a as f64)).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

fn svg_open(w: u32, h: u32) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

/// Line chart of accuracy against spacing, one series per flanker filter,
/// each with a dashed unflanked reference.
pub fn spacing_svg(curves: &[SpacingCurve]) -> String {
    let (w, h) = (520.0, 360.0);
    let (left, right, top, bottom) = (60.0, 130.0, 30.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let xs: Vec<u32> = curves.iter().flat_map(|c| c.points.iter().map(|p| p.spacing_px)).collect();
    let lo = xs.iter().copied().min().unwrap_or(0) as f64;
    let hi = xs.iter().copied().max().unwrap_or(1) as f64;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px = |d: f64| left + (d - lo) / span * pw;
    let py = |a: f64| top + (1.0 - a) * ph;

    let mut s = svg_open(w as u32, h as u32);
    let _ = writeln!(s, "<text x=\"{}\" y=\"18\" text-anchor=\"middle\">Accuracy by target-flanker spacing</text>", f4(w / 2.0));
    let _ = writeln!(
        s,
        "<g stroke=\"black\"><line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\"/><line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\"/></g>",
        l = f4(left),
        r = f4(left + pw),
        t = f4(top),
        b = f4(top + ph)
    );
    for i in 0..=4 {
        let a = i as f64 / 4.0;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{a:.2}</text>", f4(left - 6.0), f4(py(a) + 4.0));
    }
    let mut ticks: Vec<u32> = xs.clone();
    ticks.sort_unstable();
    ticks.dedup();
    for d in &ticks {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{d}</text>", f4(px(*d as f64)), f4(top + ph + 16.0));
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">spacing (px)</text>", f4(left + pw / 2.0), f4(h - 10.0));
    let _ = writeln!(s, "<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">accuracy</text>", f4(top + ph / 2.0), f4(top + ph / 2.0));
    for (i, c) in curves.iter().enumerate() {
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        let y = py(c.unflanked_accuracy);
        let _ = writeln!(
            s,
            "<line class=\"reference\" x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{color}\" stroke-dasharray=\"4 3\"/>",
            f4(left),
            f4(left + pw),
            y = f4(y)
        );
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|p| format!("{},{}", f4(px(p.spacing_px as f64)), f4(py(p.accuracy))))
            .collect();
        let _ = writeln!(s, "<polyline class=\"series\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>", pts.join(" "));
        for p in &c.points {
            let _ = writeln!(s, "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>", f4(px(p.spacing_px as f64)), f4(py(p.accuracy)));
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{}\" y=\"{}\">{}</text>",
            f4(w - right + 10.0),
            f4(w - right + 30.0),
            f4(w - right + 36.0),
            f4(ly + 4.0),
            c.filter.as_str(),
            ly = f4(ly)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Bar chart of the condition tables, one bar group per condition.
pub fn conditions_svg(report: &CrowdingReport) -> String {
    let labels: Vec<String> = report.tables.first().map_or_else(Vec::new, |t| t.cells.iter().map(|c| c.key.label()).collect());
    let groups = labels.len().max(1) as f64;
    let series = report.tables.len().max(1) as f64;
    let (left, top, ph, group_w) = (60.0, 30.0, 240.0, 70.0);
    let w = left + groups * group_w + 150.0;
    let h = top + ph + 60.0;
    let bar_w = (group_w - 14.0) / series;
    let mut s = svg_open(w as u32, h as u32);
    let _ = writeln!(s, "<text x=\"{}\" y=\"18\" text-anchor=\"middle\">Accuracy by polarity and size</text>", f4(w / 2.0));
    let _ = writeln!(
        s,
        "<g stroke=\"black\"><line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\"/><line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\"/></g>",
        l = f4(left),
        r = f4(left + groups * group_w),
        t = f4(top),
        b = f4(top + ph)
    );
    for i in 0..=4 {
        let a = i as f64 / 4.0;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{a:.2}</text>", f4(left - 6.0), f4(top + (1.0 - a) * ph + 4.0));
    }
    for (g, label) in labels.iter().enumerate() {
        let x = left + g as f64 * group_w + group_w / 2.0;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{label}</text>", f4(x), f4(top + ph + 16.0));
    }
    for (k, table) in report.tables.iter().enumerate() {
        let color = SERIES_COLORS[k % SERIES_COLORS.len()];
        for (g, cell) in table.cells.iter().enumerate() {
            let Some(a) = cell.accuracy else { continue };
            let x = left + g as f64 * group_w + 7.0 + k as f64 * bar_w;
            let _ = writeln!(
                s,
                "<rect class=\"bar\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{color}\"/>",
                f4(x),
                f4(top + (1.0 - a) * ph),
                f4(bar_w),
                f4(a * ph)
            );
        }
        let ly = top + 14.0 + 18.0 * k as f64;
        let name = if table.exclude_sh { "exclude-SH" } else { "all" };
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{color}\"/><text x=\"{}\" y=\"{}\">{name}</text>",
            f4(w - 130.0),
            f4(ly - 9.0),
            f4(w - 112.0),
            f4(ly + 2.0)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn sector(cx: f64, cy: f64, r0: f64, r1: f64, a0: f64, a1: f64) -> String {
    let pt = |r: f64, a: f64| {
        let t = a.to_radians();
        (cx + r * t.cos(), cy - r * t.sin())
    };
    let large = if a1 - a0 > 180.0 { 1 } else { 0 };
    let (x0, y0) = pt(r1, a0);
    let (x1, y1) = pt(r1, a1);
    let (x2, y2) = pt(r0, a1);
    let (x3, y3) = pt(r0, a0);
    format!(
        "M{} {} A{} {} 0 {large} 0 {} {} L{} {} A{} {} 0 {large} 1 {} {} Z",
        f4(x0),
        f4(y0),
        f4(r1),
        f4(r1),
        f4(x1),
        f4(y1),
        f4(x2),
        f4(y2),
        f4(r0),
        f4(r0),
        f4(x3),
        f4(y3)
    )
}

/// Polar heatmap: one annular sector per (direction, spacing) cell, spacing
/// growing outward, on the shared 0-1 color scale. Directions follow the
/// stimulus convention (0° right, counterclockwise).
pub fn polar_svg(map: &PolarMap) -> String {
    let (w, h) = (420.0, 380.0);
    let (cx, cy, inner, outer) = (180.0, 200.0, 30.0, 150.0);
    let step = if map.angles.len() > 1 {
        map.angles.windows(2).map(|p| p[1] - p[0]).min().unwrap_or(360) as f64
    } else {
        360.0
    };
    let ring = (outer - inner) / map.distances.len().max(1) as f64;
    let mut s = svg_open(w as u32, h as u32);
    let _ = writeln!(s, "<text x=\"{}\" y=\"18\" text-anchor=\"middle\">Accuracy by flanker position ({})</text>", f4(w / 2.0), map.filter.as_str());
    for (ai, &angle) in map.angles.iter().enumerate() {
        for (di, &distance) in map.distances.iter().enumerate() {
            let idx = ai * map.distances.len() + di;
            let fill = map.cells[idx].map_or_else(|| EMPTY_COLOR.to_string(), color_for);
            let (a0, a1) = (angle as f64 - step / 2.0, angle as f64 + step / 2.0);
            let d = if step >= 360.0 {
                format!(
                    "M{} {} a{r} {r} 0 1 0 {} 0 a{r} {r} 0 1 0 {} 0 Z",
                    f4(cx - (inner + ring * (di + 1) as f64)),
                    f4(cy),
                    f4(2.0 * (inner + ring * (di + 1) as f64)),
                    f4(-2.0 * (inner + ring * (di + 1) as f64)),
                    r = f4(inner + ring * (di + 1) as f64)
                )
            } else {
                sector(cx, cy, inner + ring * di as f64, inner + ring * (di + 1) as f64, a0, a1)
            };
            let _ = writeln!(
                s,
                "<path class=\"cell\" d=\"{d}\" fill=\"{fill}\" stroke=\"white\" stroke-width=\"0.5\"><title>{angle}° {distance}px n={}</title></path>",
                map.counts[idx]
            );
        }
    }
    let _ = writeln!(s, "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"black\"/>", f4(cx), f4(cy));
    if let (Some(first), Some(last)) = (map.distances.first(), map.distances.last()) {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{first}-{last} px outward</text>", f4(cx), f4(h - 8.0));
    }
    let (bx, by, bh) = (w - 60.0, 60.0, 240.0);
    let _ = writeln!(s, "<defs><linearGradient id=\"scale\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\"><stop offset=\"0\" stop-color=\"{}\"/><stop offset=\"1\" stop-color=\"{}\"/></linearGradient></defs>", color_for(0.0), color_for(1.0));
    let _ = writeln!(s, "<rect x=\"{}\" y=\"{}\" width=\"16\" height=\"{}\" fill=\"url(#scale)\"/>", f4(bx), f4(by), f4(bh));
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">1.00</text><text x=\"{}\" y=\"{}\">0.00</text>", f4(bx + 20.0), f4(by + 8.0), f4(bx + 20.0), f4(by + bh));
    s.push_str("</svg>\n");
    s
}

fn opt4(v: Option<f64>) -> String {
    v.map_or_else(String::new, f4)
}

fn spacing_csv(curves: &[SpacingCurve]) -> String {
    let mut s = String::from("filter,spacing_px,accuracy,count\n");
    for c in curves {
        for p in &c.points {
            let _ = writeln!(s, "{},{},{},{}", c.filter.as_str(), p.spacing_px, f4(p.accuracy), p.count);
        }
        let _ = writeln!(s, "{},unflanked,{},{}", c.filter.as_str(), f4(c.unflanked_accuracy), c.unflanked_count);
    }
    s
}

fn conditions_csv(report: &CrowdingReport) -> String {
    let mut s = String::from("filter,target_polarity,flanker_polarity,size_pt,accuracy,count\n");
    for t in &report.tables {
        let name = if t.exclude_sh { "exclude-SH" } else { "all" };
        for c in &t.cells {
            let _ = writeln!(
                s,
                "{name},{},{},{},{},{}",
                c.key.target_polarity.as_str(),
                c.key.flanker_polarity.as_str(),
                c.key.size_pt,
                opt4(c.accuracy),
                c.count
            );
        }
    }
    s
}

fn polar_csv(map: &PolarMap) -> String {
    let mut s = String::from("angle_deg,spacing_px,accuracy,count\n");
    for (ai, a) in map.angles.iter().enumerate() {
        for (di, d) in map.distances.iter().enumerate() {
            let idx = ai * map.distances.len() + di;
            let _ = writeln!(s, "{a},{d},{},{}", opt4(map.cells[idx]), map.counts[idx]);
        }
    }
    s
}

fn contrast_rows(s: &mut String, name: &str, c: &Contrast, first: &str, second: &str) {
    let _ = writeln!(s, "{name},{first},{},{}", f4(c.first), c.first_count);
    let _ = writeln!(s, "{name},{second},{},{}", f4(c.second), c.second_count);
    let _ = writeln!(s, "{name},difference,{},", f4(c.difference));
    let _ = writeln!(s, "{name},ci95_low,{},", f4(c.ci95.0));
    let _ = writeln!(s, "{name},ci95_high,{},", f4(c.ci95.1));
}

fn bouma_row(s: &mut String, name: &str, e: &BoumaEstimate) {
    let (kind, v) = match e {
        BoumaEstimate::Spacing(v) => ("spacing", Some(*v)),
        BoumaEstimate::AlreadyUncrowded(v) => ("already-uncrowded", Some(*v)),
        BoumaEstimate::NonConverging => ("non-converging", None),
    };
    let _ = writeln!(s, "bouma,{name}_{kind},{},", opt4(v));
}

fn summary_csv(report: &CrowdingReport) -> String {
    let mut s = String::from("metric,key,value,count\n");
    for rt in &report.radial_tangential {
        let name = format!("radial_tangential_size{}_{}px", rt.size_pt, rt.spacing_px);
        contrast_rows(&mut s, &name, &rt.contrast, "radial", "tangential");
    }
    if let Some(c) = &report.in_out {
        contrast_rows(&mut s, "in_out", c, "inner", "outer");
    }
    if let Some(c) = &report.hemifield {
        contrast_rows(&mut s, "hemifield", c, "upper", "lower");
    }
    let b = &report.bouma;
    let _ = writeln!(s, "bouma,eccentricity_px,{},", b.eccentricity_px);
    let _ = writeln!(s, "bouma,theoretical_px,{},", f4(b.theoretical_px));
    bouma_row(&mut s, "extrapolated", &b.extrapolated);
    if let Some(e) = &b.extrapolated_exclude_sh {
        bouma_row(&mut s, "extrapolated_exclude_sh", e);
    }
    if let Some(c) = &report.confusion {
        let _ = writeln!(s, "confusion,flanker_rate,{},{}", f4(c.flanker_rate), c.error_trials);
        let _ = writeln!(s, "confusion,other_rate,{},{}", f4(c.other_rate), c.error_trials);
        let _ = writeln!(s, "confusion,excess_pp,{},{}", f4(c.excess_pp), c.error_trials);
    }
    for (filter, fit) in &report.fits {
        for (k, v) in [("mu", fit.mu), ("sigma", fit.sigma), ("gamma", fit.gamma), ("lambda", fit.lambda), ("residual", fit.residual)] {
            let _ = writeln!(s, "fit_{},{k},{},", filter.as_str(), f4(v));
        }
    }
    s
}

fn write(dir: &Path, name: &str, body: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body)?;
    out.push(path);
    Ok(())
}

/// Writes every figure and table for `report` into `out_dir`.
pub fn render_report(report: &CrowdingReport, out_dir: &Path) -> Result<RenderedFiles> {
    std::fs::create_dir_all(out_dir)?;
    let (mut svgs, mut csvs) = (Vec::new(), Vec::new());
    write(out_dir, "spacing_curve.svg", &spacing_svg(&report.curves), &mut svgs)?;
    write(out_dir, "conditions.svg", &conditions_svg(report), &mut svgs)?;
    for map in &report.polar_maps {
        write(out_dir, &format!("polar_{}.svg", map.filter.as_str()), &polar_svg(map), &mut svgs)?;
    }
    write(out_dir, "spacing_curve.csv", &spacing_csv(&report.curves), &mut csvs)?;
    write(out_dir, "conditions.csv", &conditions_csv(report), &mut csvs)?;
    for map in &report.polar_maps {
        write(out_dir, &format!("polar_{}.csv", map.filter.as_str()), &polar_csv(map), &mut csvs)?;
    }
    write(out_dir, "summary.csv", &summary_csv(report), &mut csvs)?;
    Ok(RenderedFiles { svgs, csvs })
}
