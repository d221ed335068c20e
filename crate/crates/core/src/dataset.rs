//! Training sets: unflanked letter stimuli plus two background classes.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foveation::{apply_acuity, AcuityProfile};
use crate::imaging::{
    background_class, flip_vertical, load_backgrounds, synth_background, ImageBuffer, Letter, Polarity, SceneComposer,
    Side, StimulusSpec,
};
use crate::nn::{image_to_input, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum BackgroundSource {
    /// Procedural backgrounds, this many per class.
    Synthetic { per_class: usize },
    /// One directory of images per background class.
    Directories { class0: PathBuf, class1: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSetConfig {
    pub side: Side,
    pub eccentricity_px: u32,
    pub sizes: Vec<u32>,
    pub background: BackgroundSource,
    pub flip_backgrounds: bool,
    pub acuity: bool,
    /// Replicate letter images (with brightness jitter) up to the per-class
    /// background count.
    pub balance_letters: bool,
    pub jitter: u8,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingImage {
    pub image: ImageBuffer,
    pub label: usize,
    pub name: String,
}

/// The unflanked letter stimuli: every target in both polarities at every size.
pub fn letter_images(composer: &SceneComposer, side: Side, eccentricity_px: u32, sizes: &[u32]) -> Result<Vec<TrainingImage>> {
    let mut out = Vec::new();
    for target in Letter::TARGETS {
        for polarity in Polarity::BOTH {
            for &size in sizes {
                let spec = StimulusSpec::unflanked(target, polarity, size, side, eccentricity_px);
                out.push(TrainingImage {
                    image: composer.compose(&spec)?,
                    label: target.class_index().expect("targets have classes"),
                    name: format!("{target}_{}_{size}", polarity.as_str()),
                });
            }
        }
    }
    Ok(out)
}

/// Adds a uniform brightness offset, saturating at the 8-bit range.
pub fn shift_brightness(image: &ImageBuffer, offset: i16) -> ImageBuffer {
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = (*v as i16 + offset).clamp(0, 255) as u8;
    }
    out
}

/// Builds the labeled training images for `config` on the composer's canvas.
pub fn training_images(composer: &SceneComposer, config: &TrainingSetConfig) -> Result<Vec<TrainingImage>> {
    if config.sizes.is_empty() {
        return Err(Error::InvalidArgument("no letter sizes configured".into()));
    }
    let canvas = composer.canvas;
    let backgrounds: Vec<TrainingImage> = match &config.background {
        BackgroundSource::Synthetic { per_class } => {
            if *per_class == 0 {
                return Err(Error::InvalidArgument("need at least one background per class".into()));
            }
            (0..2u8)
                .flat_map(|class| {
                    (0..*per_class).map(move |i| TrainingImage {
                        image: synth_background(class, config.seed.wrapping_add(i as u64), canvas),
                        label: background_class(class),
                        name: format!("bg{class}_{i:04}"),
                    })
                })
                .collect()
        }
        BackgroundSource::Directories { class0, class1 } => load_backgrounds(class0, class1, canvas)?
            .into_iter()
            .enumerate()
            .map(|(i, b)| TrainingImage {
                image: b.image,
                label: background_class(b.class_id),
                name: format!("bg{}_{i:04}", b.class_id),
            })
            .collect(),
    };
    let backgrounds = backgrounds
        .into_iter()
        .map(|mut b| {
            if config.flip_backgrounds {
                b.image = flip_vertical(&b.image);
            }
            b
        })
        .collect::<Vec<_>>();

    let letters = letter_images(composer, config.side, config.eccentricity_px, &config.sizes)?;
    let per_letter_class = letters.len() / Letter::TARGETS.len();
    let bg_per_class = (0..2u8)
        .map(|c| backgrounds.iter().filter(|b| b.label == background_class(c)).count())
        .max()
        .unwrap_or(0);
    let copies = if config.balance_letters {
        ((bg_per_class as f64 / per_letter_class as f64).round() as usize).max(1)
    } else {
        1
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6A09_E667_F3BC_C908);
    let jitter = config.jitter as i16;
    let mut images = Vec::with_capacity(letters.len() * copies + backgrounds.len());
    for letter in &letters {
        images.push(letter.clone());
        for k in 1..copies {
            let offset = if jitter > 0 { rng.gen_range(-jitter..=jitter) } else { 0 };
            images.push(TrainingImage {
                image: shift_brightness(&letter.image, offset),
                label: letter.label,
                name: format!("{}_j{k}", letter.name),
            });
        }
    }
    images.extend(backgrounds);
    if config.acuity {
        let profile = AcuityProfile::standard(canvas);
        for img in &mut images {
            img.image = apply_acuity(&img.image, &profile);
        }
    }
    Ok(images)
}

/// Converts labeled images to network inputs.
pub fn to_dataset(images: &[TrainingImage]) -> Result<Dataset> {
    let first = images.first().ok_or_else(|| Error::Empty("training images".into()))?;
    let mut data = Dataset::new([3, first.image.height(), first.image.width()]);
    for img in images {
        data.push(image_to_input(&img.image), img.label)?;
    }
    Ok(data)
}
