//! Stroke-outline letter face and its rasterizer.
//!
//! Glyphs are polylines and elliptical arcs in a unit em box. Rasterization
//! marks every pixel whose center lies within half a stroke width of any
//! segment, producing a hard-edged binary mask.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{ColorScheme, Letter, Polarity};

const BUILTIN_FACE: &str = include_str!("../../assets/sans.strokes");

/// Segments per full turn when flattening arcs.
const ARC_SEGMENTS_PER_TURN: f64 = 48.0;

#[derive(Debug, Clone, PartialEq)]
struct GlyphOutline {
    aspect: f64,
    /// Flattened polylines in unit coordinates.
    strokes: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrokeFont {
    glyphs: BTreeMap<char, GlyphOutline>,
}

impl StrokeFont {
    /// The face shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_FACE).expect("built-in stroke face is well formed")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Font {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&text).map_err(|reason| Error::Font {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut glyphs = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| format!("line {}: {msg}", lineno + 1);
            let (head, body) = line.split_once(':').ok_or_else(|| err("missing ':'"))?;
            let mut head_parts = head.split_whitespace();
            let symbol = head_parts
                .next()
                .and_then(|s| {
                    let mut chars = s.chars();
                    let c = chars.next()?;
                    chars.next().is_none().then_some(c)
                })
                .ok_or_else(|| err("expected a single-character symbol"))?;
            let aspect: f64 = head_parts
                .next()
                .and_then(|s| s.parse().ok())
                .filter(|a: &f64| *a > 0.0 && a.is_finite())
                .ok_or_else(|| err("expected a positive advance width"))?;
            let strokes = body
                .split('|')
                .map(|s| parse_stroke(s.trim()).map_err(|m| err(&m)))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            glyphs.insert(symbol, GlyphOutline { aspect, strokes });
        }
        if glyphs.is_empty() {
            return Err("face defines no glyphs".into());
        }
        Ok(Self { glyphs })
    }

    pub fn has_glyph(&self, symbol: char) -> bool {
        self.glyphs.contains_key(&symbol)
    }

    /// Rasterizes `symbol` with an em box `size_px` pixels tall.
    pub fn rasterize(&self, symbol: char, size_px: u32) -> Result<GlyphMask> {
        let outline = self
            .glyphs
            .get(&symbol)
            .ok_or(Error::UnknownSymbol(symbol))?;
        if size_px == 0 {
            return Err(Error::InvalidArgument("glyph size must be > 0".into()));
        }
        let height = size_px as usize;
        let width = ((size_px as f64 * outline.aspect).round() as usize).max(1);
        let size = size_px as f64;
        let half = (0.07 * size).max(0.6);
        let span_x = (width as f64 - 2.0 * half).max(0.0);
        let span_y = (height as f64 - 2.0 * half).max(0.0);

        let segments: Vec<((f64, f64), (f64, f64))> = outline
            .strokes
            .iter()
            .flat_map(|poly| {
                poly.windows(2).map(|w| {
                    let map = |(u, v): (f64, f64)| (half + u * span_x, half + v * span_y);
                    (map(w[0]), map(w[1]))
                })
            })
            .collect();

        let mut mask = vec![false; width * height];
        for y in 0..height {
            for x in 0..width {
                let p = (x as f64 + 0.5, y as f64 + 0.5);
                let hit = segments
                    .iter()
                    .any(|&(a, b)| segment_distance_sq(p, a, b) <= half * half);
                mask[y * width + x] = hit;
            }
        }
        Ok(GlyphMask {
            width,
            height,
            mask,
            fill: 0,
        })
    }
}

impl Default for StrokeFont {
    fn default() -> Self {
        Self::builtin()
    }
}

fn parse_point(tok: &str) -> std::result::Result<(f64, f64), String> {
    let (x, y) = tok
        .split_once(',')
        .ok_or_else(|| format!("bad point {tok:?}"))?;
    let x: f64 = x.parse().map_err(|_| format!("bad coordinate {x:?}"))?;
    let y: f64 = y.parse().map_err(|_| format!("bad coordinate {y:?}"))?;
    Ok((x, y))
}

fn parse_stroke(s: &str) -> std::result::Result<Vec<(f64, f64)>, String> {
    let toks: Vec<&str> = s.split_whitespace().collect();
    if toks.first() == Some(&"arc") {
        if toks.len() != 5 {
            return Err(format!("arc needs 4 arguments: {s:?}"));
        }
        let (cx, cy) = parse_point(toks[1])?;
        let (rx, ry) = parse_point(toks[2])?;
        let a0: f64 = toks[3].parse().map_err(|_| format!("bad angle {:?}", toks[3]))?;
        let a1: f64 = toks[4].parse().map_err(|_| format!("bad angle {:?}", toks[4]))?;
        let n = (((a1 - a0).abs() / 360.0) * ARC_SEGMENTS_PER_TURN).ceil().max(1.0) as usize;
        return Ok((0..=n)
            .map(|i| {
                let a = (a0 + (a1 - a0) * i as f64 / n as f64).to_radians();
                (cx + rx * a.cos(), cy - ry * a.sin())
            })
            .collect());
    }
    let pts = toks
        .iter()
        .map(|t| parse_point(t))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if pts.len() < 2 {
        return Err(format!("polyline needs at least two points: {s:?}"));
    }
    Ok(pts)
}

fn segment_distance_sq(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len_sq).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    qx * qx + qy * qy
}

/// Binary coverage mask of one glyph plus the sample value it is drawn with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlyphMask {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
    pub fill: u8,
}

impl GlyphMask {
    pub fn opaque_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Tight bounds of the opaque pixels as (x0, y0, x1, y1), inclusive.
    pub fn opaque_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.mask[y * self.width + x] {
                    bounds = Some(match bounds {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bounds
    }
}

/// Renders a letter's mask at `size_pt` (one point = one pixel of em height)
/// with the fill value chosen by `polarity`.
pub fn rasterize_glyph(
    font: &StrokeFont,
    letter: Letter,
    size_pt: u32,
    polarity: Polarity,
    scheme: &ColorScheme,
) -> Result<GlyphMask> {
    let mut glyph = font.rasterize(letter.symbol(), size_pt)?;
    glyph.fill = scheme.fill(polarity);
    Ok(glyph)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_face_covers_alphabet() {
        let font = StrokeFont::builtin();
        for letter in Letter::ALPHABET {
            assert!(font.has_glyph(letter.symbol()), "{letter:?}");
        }
    }

    #[test]
    fn fill_follows_polarity() {
        let font = StrokeFont::builtin();
        let scheme = ColorScheme::default();
        let g = rasterize_glyph(&font, Letter::A, 20, Polarity::Black, &scheme).unwrap();
        assert_eq!(g.fill, scheme.near_black);
        let g = rasterize_glyph(&font, Letter::A, 20, Polarity::White, &scheme).unwrap();
        assert_eq!(g.fill, scheme.near_white);
    }

    #[test]
    fn rasterization_is_deterministic() {
        let font = StrokeFont::builtin();
        let a = font.rasterize('A', 20).unwrap();
        let b = font.rasterize('A', 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn height_scales_with_point_size() {
        let font = StrokeFont::builtin();
        for letter in Letter::ALPHABET {
            let h = |size| {
                let (_, y0, _, y1) = font.rasterize(letter.symbol(), size).unwrap().opaque_bounds().unwrap();
                (y1 - y0 + 1) as f64
            };
            let (h20, h26) = (h(20), h(26));
            assert!((h26 - h20 * 26.0 / 20.0).abs() <= 1.0, "{letter:?}: {h20} vs {h26}");
            assert!((h20 - 20.0).abs() <= 1.0, "{letter:?} em height {h20}");
        }
    }

    #[test]
    fn glyphs_are_pairwise_distinct() {
        let font = StrokeFont::builtin();
        for size in [6, 8, 20] {
            let masks: Vec<_> = Letter::ALPHABET
                .iter()
                .map(|l| font.rasterize(l.symbol(), size).unwrap())
                .collect();
            for i in 0..masks.len() {
                for j in i + 1..masks.len() {
                    assert_ne!(masks[i], masks[j], "size {size}: {i} vs {j}");
                }
            }
        }
    }

    #[test]
    fn unknown_symbol_and_bad_faces() {
        let font = StrokeFont::builtin();
        assert!(matches!(font.rasterize('Z', 20), Err(Error::UnknownSymbol('Z'))));
        assert!(StrokeFont::parse("A 0.5 : 0,0").is_err());
        assert!(StrokeFont::parse("# nothing").is_err());
        let missing = Path::new("/nonexistent/face.strokes");
        assert!(matches!(StrokeFont::from_path(missing), Err(Error::Font { .. })));
    }
}
