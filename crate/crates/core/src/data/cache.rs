//! On-disk dataset cache: `images.f32` (little-endian float32, scene-major)
//! next to a `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BBox, Scene, TaskMode};
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub canvas: usize,
    pub count: usize,
    pub mode: TaskMode,
    pub seed: u64,
    pub labels: Vec<Vec<usize>>,
    pub boxes: Vec<Vec<BBox>>,
}

pub fn save_dataset(dir: &Path, scenes: &[Scene], mode: TaskMode, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let canvas = scenes.first().map_or(0, |s| s.image.shape()[1]);
    let mut raw = Vec::with_capacity(scenes.len() * canvas * canvas * 4);
    for s in scenes {
        if s.image.shape() != [1, canvas, canvas] {
            return Err(Error::dim("save_dataset", s.image.shape(), &[1, canvas, canvas]));
        }
        for &v in s.image.data() {
            raw.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        canvas,
        count: scenes.len(),
        mode,
        seed,
        labels: scenes.iter().map(|s| s.labels.clone()).collect(),
        boxes: scenes.iter().map(|s| s.boxes.clone()).collect(),
    };
    let images = dir.join("images.f32");
    fs::write(&images, raw).map_err(|e| Error::io(&images, e))?;
    let mpath = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))
}

/// Loads a cached dataset. Pixels come back at float32 precision.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<Scene>)> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let images = dir.join("images.f32");
    let raw = fs::read(&images).map_err(|e| Error::io(&images, e))?;
    let plane = manifest.canvas * manifest.canvas;
    let expected = manifest.count * plane * 4;
    if raw.len() != expected {
        return Err(Error::Length {
            expected,
            found: raw.len(),
        });
    }
    if manifest.labels.len() != manifest.count || manifest.boxes.len() != manifest.count {
        return Err(Error::Format("manifest counts disagree".into()));
    }
    let scenes = (0..manifest.count)
        .map(|i| {
            let px = raw[i * plane * 4..(i + 1) * plane * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            Ok(Scene {
                image: Tensor::new(vec![1, manifest.canvas, manifest.canvas], px)?,
                labels: manifest.labels[i].clone(),
                boxes: manifest.boxes[i].clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, scenes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_scene, SceneConfig};
    use crate::rng::keyed;

    #[test]
    fn cache_round_trip_at_f32_precision() {
        let cfg = SceneConfig::default();
        let scenes: Vec<Scene> = (0..3)
            .map(|i| generate_scene(&cfg, TaskMode::Multiset, &mut keyed(&[i])).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &scenes, TaskMode::Multiset, 5).unwrap();
        let (manifest, back) = load_dataset(dir.path()).unwrap();
        assert_eq!(manifest.count, 3);
        assert_eq!(manifest.seed, 5);
        for (a, b) in scenes.iter().zip(&back) {
            assert_eq!(a.labels, b.labels);
            let expect: Vec<f64> = a.image.data().iter().map(|&v| v as f32 as f64).collect();
            assert_eq!(b.image.data(), &expect[..]);
        }
    }
}
