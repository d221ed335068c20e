//! Background images: loading user-supplied scene directories and the seeded
//! procedural fallback.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Canvas, ImageBuffer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: ImageBuffer,
    /// Background class, 0 or 1.
    pub class_id: u8,
    pub source: String,
}

/// Loads two background classes, one per directory, ordered by filename and
/// center-cropped/resized to `canvas`. Undecodable files are skipped with a
/// warning; a directory that yields no image is an error.
pub fn load_backgrounds(dir_a: &Path, dir_b: &Path, canvas: Canvas) -> Result<Vec<LabeledImage>> {
    let mut out = load_dir(dir_a, 0, canvas)?;
    out.extend(load_dir(dir_b, 1, canvas)?);
    Ok(out)
}

fn load_dir(dir: &Path, class_id: u8, canvas: Canvas) -> Result<Vec<LabeledImage>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("cannot read background dir {dir:?}: {e}")))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("background dir {dir:?} is empty")));
    }
    let mut images = Vec::with_capacity(paths.len());
    for path in &paths {
        match image::open(path) {
            Ok(img) => images.push(LabeledImage {
                image: fit_to_canvas(&img, canvas),
                class_id,
                source: path.display().to_string(),
            }),
            Err(e) => log::warn!("skipping undecodable background {path:?}: {e}"),
        }
    }
    if images.is_empty() {
        return Err(Error::Data(format!(
            "no decodable image in background dir {dir:?}"
        )));
    }
    Ok(images)
}

fn fit_to_canvas(img: &image::DynamicImage, canvas: Canvas) -> ImageBuffer {
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    // Largest centered crop with the canvas aspect ratio.
    let (cw, ch) = if w as u64 * canvas.height as u64 > h as u64 * canvas.width as u64 {
        ((h as u64 * canvas.width as u64 / canvas.height as u64).max(1) as u32, h)
    } else {
        (w, (w as u64 * canvas.height as u64 / canvas.width as u64).max(1) as u32)
    };
    let cropped = image::imageops::crop_imm(&rgb, (w - cw) / 2, (h - ch) / 2, cw, ch).to_image();
    let resized = image::imageops::resize(&cropped, canvas.width, canvas.height, FilterType::Triangle);
    ImageBuffer::from_raw(canvas.width as usize, canvas.height as usize, resized.into_raw())
        .expect("resize yields canvas-sized buffer")
}

/// Seeded procedural background. Class 0 is warm and blocky (overlapping
/// rectangles), class 1 is cool and striated (oriented sinusoidal bands).
pub fn synth_background(class_id: u8, seed: u64, canvas: Canvas) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ class_id as u64);
    let (w, h) = (canvas.width as usize, canvas.height as usize);
    let mut img = ImageBuffer::filled(w, h, 0);
    let mut field = vec![[0f32; 3]; w * h];
    if class_id == 0 {
        let base = [
            rng.gen_range(130.0..170.0),
            rng.gen_range(95.0..125.0),
            rng.gen_range(60.0..90.0),
        ];
        field.iter_mut().for_each(|p| *p = base);
        let n_blocks = rng.gen_range(12..28);
        for _ in 0..n_blocks {
            let bw = rng.gen_range(w / 10..=w / 3).max(1);
            let bh = rng.gen_range(h / 10..=h / 3).max(1);
            let x0 = rng.gen_range(0..w);
            let y0 = rng.gen_range(0..h);
            let shade: f32 = rng.gen_range(-55.0..55.0);
            let tint = [shade + 10.0, shade * 0.8, shade * 0.6 - 10.0];
            for y in y0..(y0 + bh).min(h) {
                for x in x0..(x0 + bw).min(w) {
                    let p = &mut field[y * w + x];
                    for c in 0..3 {
                        p[c] = base[c] + tint[c];
                    }
                }
            }
        }
    } else {
        let base = [
            rng.gen_range(60.0..90.0),
            rng.gen_range(100.0..130.0),
            rng.gen_range(135.0..175.0),
        ];
        let theta: f32 = rng.gen_range(0.0..std::f32::consts::PI);
        let period: f32 = rng.gen_range(4.0..12.0) * w as f32 / 64.0;
        let phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
        let amp: f32 = rng.gen_range(25.0..50.0);
        let (c, s) = (theta.cos(), theta.sin());
        for y in 0..h {
            for x in 0..w {
                let t = (x as f32 * c + y as f32 * s) * std::f32::consts::TAU / period + phase;
                let v = amp * t.sin();
                field[y * w + x] = [base[0] + 0.6 * v, base[1] + 0.8 * v, base[2] + v];
            }
        }
    }
    for (i, p) in field.iter().enumerate() {
        let noise: f32 = rng.gen_range(-8.0..8.0);
        let (x, y) = (i % w, i / w);
        img.set_pixel(
            x,
            y,
            [
                (p[0] + noise).round().clamp(0.0, 255.0) as u8,
                (p[1] + noise).round().clamp(0.0, 255.0) as u8,
                (p[2] + noise).round().clamp(0.0, 255.0) as u8,
            ],
        );
    }
    img
}
