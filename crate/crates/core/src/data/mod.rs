//! Cluttered multi-glyph scenes.
//!
//! Scenes hold 1–4 glyphs of random size and position plus a few clutter
//! strokes that belong to no class. Labels are drawn uniformly; in set mode
//! they are distinct, in multiset mode repeats are allowed, and in list mode
//! they are reported left to right.

mod cache;
pub mod glyphs;
mod idx;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cache::{load_dataset, save_dataset, Manifest};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels};

use crate::error::{Error, Result};
use crate::multiset::LabelMultiset;
use crate::ndgrad::Tensor;
use crate::parallel;
use crate::rng;
use glyphs::{draw_clutter, draw_glyph, Canvas, ALPHABET_SIZE};

pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
pub const MAX_BOX_OVERLAP: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Set,
    Multiset,
    List,
}

impl std::str::FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "set" => Ok(TaskMode::Set),
            "multiset" => Ok(TaskMode::Multiset),
            "list" => Ok(TaskMode::List),
            other => Err(Error::Config(format!("unknown task mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for TaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskMode::Set => "set",
            TaskMode::Multiset => "multiset",
            TaskMode::List => "list",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub canvas: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub glyph_size_min: usize,
    pub glyph_size_max: usize,
    pub clutter_min: usize,
    pub clutter_max: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            canvas: 64,
            objects_min: 1,
            objects_max: 4,
            glyph_size_min: 13,
            glyph_size_max: 32,
            clutter_min: 2,
            clutter_max: 6,
            classes: 10,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.objects_min == 0 || self.objects_min > self.objects_max {
            return bad("need 1 <= objects_min <= objects_max");
        }
        if self.glyph_size_min < 4 || self.glyph_size_min > self.glyph_size_max {
            return bad("need 4 <= glyph_size_min <= glyph_size_max");
        }
        if self.glyph_size_max > self.canvas {
            return bad("glyphs larger than the canvas");
        }
        if self.clutter_min > self.clutter_max {
            return bad("need clutter_min <= clutter_max");
        }
        if self.classes == 0 || self.classes > ALPHABET_SIZE {
            return bad("classes must be in 1..=10");
        }
        Ok(())
    }
}

/// Axis-aligned square glyph box in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub size: f64,
}

impl BBox {
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.size / 2.0, self.y + self.size / 2.0)
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x + self.size && py >= self.y && py <= self.y + self.size
    }

    /// Intersection area over the smaller box's area.
    pub fn overlap(&self, other: &BBox) -> f64 {
        let w = (self.x + self.size).min(other.x + other.size) - self.x.max(other.x);
        let h = (self.y + self.size).min(other.y + other.size) - self.y.max(other.y);
        if w <= 0.0 || h <= 0.0 {
            return 0.0;
        }
        let smaller = self.size.min(other.size);
        w * h / (smaller * smaller)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// `[1×canvas×canvas]` in `[0, 1]`.
    pub image: Tensor,
    /// In placement order, or left to right in list mode.
    pub labels: Vec<usize>,
    pub boxes: Vec<BBox>,
}

impl Scene {
    pub fn multiset(&self) -> LabelMultiset {
        self.labels.iter().copied().collect()
    }
}

/// Where glyph shapes come from.
#[derive(Clone, Debug, Default)]
pub enum GlyphSource {
    #[default]
    Procedural,
    /// Square bitmaps grouped by class, e.g. digits read from IDX files.
    Bitmaps {
        side: usize,
        by_class: Vec<Vec<Vec<f64>>>,
    },
}

impl GlyphSource {
    /// Groups `(image, label)` pairs by label. Images must be square `[1×s×s]`.
    pub fn from_labeled(samples: &[(Tensor, u8)], classes: usize) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::usage("empty bitmap glyph source"))?;
        let side = first.0.shape()[1];
        let mut by_class = vec![Vec::new(); classes];
        for (img, label) in samples {
            if img.shape() != [1, side, side] {
                return Err(Error::dim("glyph_source", img.shape(), &[1, side, side]));
            }
            if (*label as usize) < classes {
                by_class[*label as usize].push(img.data().to_vec());
            }
        }
        if by_class.iter().any(Vec::is_empty) {
            return Err(Error::usage("bitmap glyph source is missing a class"));
        }
        Ok(GlyphSource::Bitmaps { side, by_class })
    }

    fn draw(&self, canvas: &mut Canvas, label: usize, b: &BBox, rng: &mut impl Rng) {
        match self {
            GlyphSource::Procedural => draw_glyph(canvas, label, b.x, b.y, b.size, rng),
            GlyphSource::Bitmaps { side, by_class } => {
                let pool = &by_class[label];
                let bitmap = &pool[rng.random_range(0..pool.len())];
                canvas.paste(bitmap, *side, b.x, b.y, b.size);
            }
        }
    }
}

fn draw_labels(cfg: &SceneConfig, mode: TaskMode, n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    match mode {
        TaskMode::Set => {
            if n > cfg.classes {
                return Err(Error::Config(format!(
                    "set mode cannot place {n} distinct labels from {} classes",
                    cfg.classes
                )));
            }
            let mut all: Vec<usize> = (0..cfg.classes).collect();
            all.shuffle(rng);
            all.truncate(n);
            Ok(all)
        }
        TaskMode::Multiset | TaskMode::List => {
            Ok((0..n).map(|_| rng.random_range(0..cfg.classes)).collect())
        }
    }
}

fn place_boxes(cfg: &SceneConfig, n: usize, distinct_x: bool, rng: &mut impl Rng) -> Result<Vec<BBox>> {
    let mut boxes: Vec<BBox> = Vec::with_capacity(n);
    let mut attempts = 0;
    while boxes.len() < n {
        attempts += 1;
        if attempts > MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::Generation {
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
        let size = rng.random_range(cfg.glyph_size_min..=cfg.glyph_size_max);
        let slack = cfg.canvas - size;
        let b = BBox {
            x: rng.random_range(0..=slack) as f64,
            y: rng.random_range(0..=slack) as f64,
            size: size as f64,
        };
        let crowded = boxes.iter().any(|o| {
            o.overlap(&b) > MAX_BOX_OVERLAP || (distinct_x && o.center().0 == b.center().0)
        });
        if !crowded {
            boxes.push(b);
        }
    }
    Ok(boxes)
}

fn scatter_clutter(cfg: &SceneConfig, canvas: &mut Canvas, boxes: &[BBox], rng: &mut impl Rng) {
    let count = rng.random_range(cfg.clutter_min..=cfg.clutter_max);
    let margin = 4.0;
    let hi = cfg.canvas as f64 - margin;
    for _ in 0..count {
        // keep clutter off glyphs when there is room for it
        let mut spot = (rng.random_range(margin..hi), rng.random_range(margin..hi));
        for _ in 0..50 {
            if !boxes.iter().any(|b| b.contains(spot.0, spot.1)) {
                break;
            }
            spot = (rng.random_range(margin..hi), rng.random_range(margin..hi));
        }
        draw_clutter(canvas, spot.0, spot.1, rng);
    }
}

fn compose(
    cfg: &SceneConfig,
    mode: TaskMode,
    n: usize,
    source: &GlyphSource,
    rng: &mut impl Rng,
) -> Result<Scene> {
    cfg.validate()?;
    let mut labels = draw_labels(cfg, mode, n, rng)?;
    let mut boxes = place_boxes(cfg, n, mode == TaskMode::List, rng)?;
    if mode == TaskMode::List {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| boxes[a].center().0.total_cmp(&boxes[b].center().0));
        labels = order.iter().map(|&i| labels[i]).collect();
        boxes = order.iter().map(|&i| boxes[i]).collect();
    }
    let mut canvas = Canvas::new(cfg.canvas);
    for (&label, b) in labels.iter().zip(&boxes) {
        source.draw(&mut canvas, label, b, rng);
    }
    scatter_clutter(cfg, &mut canvas, &boxes, rng);
    Ok(Scene {
        image: canvas.into_tensor(),
        labels,
        boxes,
    })
}

pub fn generate_scene(cfg: &SceneConfig, mode: TaskMode, rng: &mut impl Rng) -> Result<Scene> {
    generate_scene_with(cfg, mode, &GlyphSource::Procedural, rng)
}

pub fn generate_scene_with(
    cfg: &SceneConfig,
    mode: TaskMode,
    source: &GlyphSource,
    rng: &mut impl Rng,
) -> Result<Scene> {
    cfg.validate()?;
    let n = rng.random_range(cfg.objects_min..=cfg.objects_max);
    compose(cfg, mode, n, source, rng)
}

/// Exactly one glyph plus clutter.
pub fn generate_single_object(cfg: &SceneConfig, rng: &mut impl Rng) -> Result<Scene> {
    compose(cfg, TaskMode::Set, 1, &GlyphSource::Procedural, rng)
}

/// Which generator a dataset draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    Multi(TaskMode),
    Single,
}

/// `count` scenes, scene `i` drawn from the stream keyed by `(seed, split, i)`.
pub fn generate_dataset(cfg: &SceneConfig, kind: SceneKind, split: u64, count: usize) -> Result<Vec<Scene>> {
    let indices: Vec<usize> = (0..count).collect();
    parallel::map(&indices, |&i| {
        let mut r = rng::keyed(&[rng::domain::SCENES, cfg.seed, split, i as u64]);
        match kind {
            SceneKind::Multi(mode) => generate_scene(cfg, mode, &mut r),
            SceneKind::Single => generate_single_object(cfg, &mut r),
        }
    })
    .into_iter()
    .collect()
}

/// Shuffled index batches over `len` items; the last batch may be short.
pub fn batch_iter(len: usize, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::usage("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
