//! Letter stimuli: glyph rasterization, flanker geometry and scene composition.

mod background;
mod font;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use background::{load_backgrounds, synth_background, LabeledImage};
pub use font::{rasterize_glyph, GlyphMask, StrokeFont};

use crate::error::{Error, Result};

/// Output classes of the classifier: the eight target letters followed by
/// the two background classes.
pub const N_CLASSES: usize = 10;

pub const CLASS_NAMES: [&str; N_CLASSES] = ["A", "B", "C", "E", "G", "M", "Y", "Q", "bg0", "bg1"];

/// Class index of background class `id` (0 or 1).
pub fn background_class(id: u8) -> usize {
    8 + id as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Letter {
    A,
    B,
    C,
    E,
    G,
    M,
    Y,
    Q,
    S,
    H,
}

impl Letter {
    /// Trainable target letters, in class-index order.
    pub const TARGETS: [Letter; 8] = [
        Letter::A,
        Letter::B,
        Letter::C,
        Letter::E,
        Letter::G,
        Letter::M,
        Letter::Y,
        Letter::Q,
    ];

    /// Flanker alphabet: every target plus the two novel letters.
    pub const ALPHABET: [Letter; 10] = [
        Letter::A,
        Letter::B,
        Letter::C,
        Letter::E,
        Letter::G,
        Letter::M,
        Letter::Y,
        Letter::Q,
        Letter::S,
        Letter::H,
    ];

    pub fn symbol(self) -> char {
        match self {
            Letter::A => 'A',
            Letter::B => 'B',
            Letter::C => 'C',
            Letter::E => 'E',
            Letter::G => 'G',
            Letter::M => 'M',
            Letter::Y => 'Y',
            Letter::Q => 'Q',
            Letter::S => 'S',
            Letter::H => 'H',
        }
    }

    pub fn from_symbol(c: char) -> Result<Self> {
        Letter::ALPHABET
            .into_iter()
            .find(|l| l.symbol() == c)
            .ok_or(Error::UnknownSymbol(c))
    }

    /// Output class index, `None` for the novel flankers S and H.
    pub fn class_index(self) -> Option<usize> {
        Letter::TARGETS.iter().position(|&l| l == self)
    }

    pub fn is_novel(self) -> bool {
        self.class_index().is_none()
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

impl FromStr for Letter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Letter::from_symbol(c),
            _ => Err(Error::InvalidArgument(format!("not a letter: {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    White,
    Black,
}

impl Polarity {
    pub const BOTH: [Polarity; 2] = [Polarity::White, Polarity::Black];

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::White => "white",
            Polarity::Black => "black",
        }
    }

    /// Single-letter tag used in condition labels such as `W/B 20`.
    pub fn tag(self) -> char {
        match self {
            Polarity::White => 'W',
            Polarity::Black => 'B',
        }
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(Polarity::White),
            "black" => Ok(Polarity::Black),
            _ => Err(Error::InvalidArgument(format!("unknown polarity {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            _ => Err(Error::InvalidArgument(format!("unknown side {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Unflanked,
    Single,
    Pair,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Unflanked => "unflanked",
            Mode::Single => "single",
            Mode::Pair => "pair",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unflanked" => Ok(Mode::Unflanked),
            "single" => Ok(Mode::Single),
            "pair" => Ok(Mode::Pair),
            _ => Err(Error::InvalidArgument(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
}

impl Canvas {
    pub const LARGE: Canvas = Canvas::square(224);

    pub const fn square(side: u32) -> Self {
        Self {
            width: side,
            height: side,
        }
    }

    pub fn center(self) -> (i32, i32) {
        ((self.width / 2) as i32, (self.height / 2) as i32)
    }

    pub fn contains(self, (x, y): (i32, i32)) -> bool {
        x >= 0 && y >= 0 && (x as u32) < self.width && (y as u32) < self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorScheme {
    pub background_grey: u8,
    pub near_white: u8,
    pub near_black: u8,
}

impl Default for ColorScheme {
    fn default() -> Self {
        Self {
            background_grey: 128,
            near_white: 230,
            near_black: 25,
        }
    }
}

impl ColorScheme {
    pub fn validate(&self) -> Result<()> {
        if self.near_black < self.background_grey && self.background_grey < self.near_white {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "colour scheme needs near_black < background_grey < near_white, got {self:?}"
            )))
        }
    }

    pub fn fill(&self, polarity: Polarity) -> u8 {
        match polarity {
            Polarity::White => self.near_white,
            Polarity::Black => self.near_black,
        }
    }
}

/// Three-channel, row-major, 8-bit image.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ImageBuffer({}x{})", self.width, self.height)
    }
}

impl ImageBuffer {
    pub const CHANNELS: usize = 3;

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height * Self::CHANNELS],
        }
    }

    pub fn for_canvas(canvas: Canvas, value: u8) -> Self {
        Self::filled(canvas.width as usize, canvas.height as usize, value)
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * Self::CHANNELS {
            return Err(Error::Shape(format!(
                "{} samples for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn canvas(&self) -> Canvas {
        Canvas {
            width: self.width as u32,
            height: self.height as u32,
        }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * Self::CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * Self::CHANNELS;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(())
    }
}

/// One experimental condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StimulusSpec {
    pub target: Letter,
    pub target_polarity: Polarity,
    pub flanker: Option<Letter>,
    pub flanker_polarity: Option<Polarity>,
    pub size_pt: u32,
    pub spacing_px: u32,
    pub angle_deg: f64,
    pub mode: Mode,
    pub side: Side,
    pub eccentricity_px: u32,
    pub acuity: bool,
}

impl StimulusSpec {
    /// A target presented alone.
    pub fn unflanked(target: Letter, polarity: Polarity, size_pt: u32, side: Side, eccentricity_px: u32) -> Self {
        Self {
            target,
            target_polarity: polarity,
            flanker: None,
            flanker_polarity: None,
            size_pt,
            spacing_px: 0,
            angle_deg: 0.0,
            mode: Mode::Unflanked,
            side,
            eccentricity_px,
            acuity: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target.is_novel() {
            return Err(Error::InvalidArgument(format!(
                "{} is a novel flanker and cannot be a target",
                self.target
            )));
        }
        if self.size_pt == 0 {
            return Err(Error::InvalidArgument("size_pt must be > 0".into()));
        }
        match (self.mode, self.flanker, self.flanker_polarity) {
            (Mode::Unflanked, None, None) => Ok(()),
            (Mode::Unflanked, _, _) => Err(Error::InvalidArgument(
                "unflanked spec must not carry a flanker".into(),
            )),
            (_, Some(_), Some(_)) if self.spacing_px > 0 => Ok(()),
            (_, Some(_), Some(_)) => Err(Error::InvalidArgument("spacing must be > 0".into())),
            _ => Err(Error::InvalidArgument(
                "flanked spec needs a flanker letter and polarity".into(),
            )),
        }
    }
}

/// Position of the target: `eccentricity_px` left or right of the canvas
/// center along the horizontal meridian.
pub fn target_center(canvas: Canvas, side: Side, eccentricity_px: u32) -> Result<(i32, i32)> {
    if eccentricity_px >= canvas.width / 2 {
        return Err(Error::Placement(format!(
            "eccentricity {eccentricity_px} px does not fit a {}-px-wide canvas",
            canvas.width
        )));
    }
    let (cx, cy) = canvas.center();
    let ecc = eccentricity_px as i32;
    Ok(match side {
        Side::Left => (cx - ecc, cy),
        Side::Right => (cx + ecc, cy),
    })
}

/// Rounded pixel offset of a flanker at `angle_deg`. Angles are
/// counterclockwise in y-up terms with 0° pointing to +x; image y grows
/// downward. The offset at θ+180° is the exact negation of the one at θ.
pub fn flanker_offset(spacing_px: u32, angle_deg: f64) -> (i32, i32) {
    let mut a = angle_deg.rem_euclid(360.0);
    let flip = a >= 180.0;
    if flip {
        a -= 180.0;
    }
    let r = a.to_radians();
    let s = spacing_px as f64;
    let dx = (s * r.cos()).round() as i32;
    let dy = (-s * r.sin()).round() as i32;
    if flip {
        (-dx, -dy)
    } else {
        (dx, dy)
    }
}

pub fn flanker_position(
    canvas: Canvas,
    target_center: (i32, i32),
    spacing_px: u32,
    angle_deg: f64,
) -> Result<(i32, i32)> {
    if spacing_px == 0 {
        return Err(Error::InvalidArgument("spacing must be > 0".into()));
    }
    let (dx, dy) = flanker_offset(spacing_px, angle_deg);
    let pos = (target_center.0 + dx, target_center.1 + dy);
    if !canvas.contains(pos) {
        return Err(Error::Placement(format!(
            "flanker center {pos:?} (spacing {spacing_px}, angle {angle_deg}) lies outside the canvas"
        )));
    }
    Ok(pos)
}

/// Draws `glyph` with its em box centered on `center`, clipping at the edges.
pub fn draw_glyph(image: &mut ImageBuffer, glyph: &GlyphMask, center: (i32, i32)) {
    let left = center.0 - (glyph.width / 2) as i32;
    let top = center.1 - (glyph.height / 2) as i32;
    let fill = [glyph.fill; 3];
    for gy in 0..glyph.height {
        let y = top + gy as i32;
        if y < 0 || y as usize >= image.height {
            continue;
        }
        for gx in 0..glyph.width {
            let x = left + gx as i32;
            if x < 0 || x as usize >= image.width || !glyph.mask[gy * glyph.width + gx] {
                continue;
            }
            image.set_pixel(x as usize, y as usize, fill);
        }
    }
}

/// Composes letter-on-grey stimuli for one canvas, face and colour scheme.
#[derive(Debug, Clone)]
pub struct SceneComposer {
    pub canvas: Canvas,
    pub scheme: ColorScheme,
    pub font: StrokeFont,
}

impl SceneComposer {
    pub fn new(canvas: Canvas, scheme: ColorScheme, font: StrokeFont) -> Result<Self> {
        scheme.validate()?;
        Ok(Self {
            canvas,
            scheme,
            font,
        })
    }

    pub fn with_defaults(canvas: Canvas) -> Self {
        Self {
            canvas,
            scheme: ColorScheme::default(),
            font: StrokeFont::builtin(),
        }
    }

    pub fn glyph(&self, letter: Letter, size_pt: u32, polarity: Polarity) -> Result<GlyphMask> {
        rasterize_glyph(&self.font, letter, size_pt, polarity, &self.scheme)
    }

    /// Glyph centers in draw order: the target first, then flankers.
    pub fn layout(&self, spec: &StimulusSpec) -> Result<Vec<(i32, i32)>> {
        let target = target_center(self.canvas, spec.side, spec.eccentricity_px)?;
        let mut centers = vec![target];
        match spec.mode {
            Mode::Unflanked => {}
            Mode::Single => centers.push(flanker_position(
                self.canvas,
                target,
                spec.spacing_px,
                spec.angle_deg,
            )?),
            Mode::Pair => {
                let a = spec.angle_deg.rem_euclid(360.0);
                let b = (a + 180.0).rem_euclid(360.0);
                let (first, second) = if a <= b { (a, b) } else { (b, a) };
                centers.push(flanker_position(self.canvas, target, spec.spacing_px, first)?);
                centers.push(flanker_position(self.canvas, target, spec.spacing_px, second)?);
            }
        }
        Ok(centers)
    }

    pub fn compose(&self, spec: &StimulusSpec) -> Result<ImageBuffer> {
        spec.validate()?;
        let centers = self.layout(spec)?;
        let mut image = ImageBuffer::for_canvas(self.canvas, self.scheme.background_grey);
        let target = self.glyph(spec.target, spec.size_pt, spec.target_polarity)?;
        draw_glyph(&mut image, &target, centers[0]);
        if let (Some(letter), Some(polarity)) = (spec.flanker, spec.flanker_polarity) {
            let flanker = self.glyph(letter, spec.size_pt, polarity)?;
            for &c in &centers[1..] {
                draw_glyph(&mut image, &flanker, c);
            }
        }
        Ok(image)
    }
}

/// Reverses row order.
pub fn flip_vertical(image: &ImageBuffer) -> ImageBuffer {
    let row = image.width * ImageBuffer::CHANNELS;
    let data = image
        .data
        .chunks_exact(row)
        .rev()
        .flatten()
        .copied()
        .collect();
    ImageBuffer {
        width: image.width,
        height: image.height,
        data,
    }
}
