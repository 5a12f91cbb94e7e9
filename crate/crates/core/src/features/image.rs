use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::record::{ImageSpec, Record};
use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Row counts and feature widths of the three image groups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageConfig {
    pub patches: usize,
    pub faces: usize,
    pub objects: usize,
    pub patch_width: usize,
    pub face_width: usize,
    pub object_width: usize,
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self { patches: 49, faces: 4, objects: 64, patch_width: 32, face_width: 32, object_width: 32 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageGroup {
    Patches,
    Faces,
    Objects,
}

impl ImageGroup {
    pub const ALL: [ImageGroup; 3] = [Self::Patches, Self::Faces, Self::Objects];

    pub fn name(self) -> &'static str {
        match self {
            Self::Patches => "patches",
            Self::Faces => "faces",
            Self::Objects => "objects",
        }
    }
}

impl ImageConfig {
    pub fn rows(&self, g: ImageGroup) -> usize {
        match g {
            ImageGroup::Patches => self.patches,
            ImageGroup::Faces => self.faces,
            ImageGroup::Objects => self.objects,
        }
    }

    pub fn width(&self, g: ImageGroup) -> usize {
        match g {
            ImageGroup::Patches => self.patch_width,
            ImageGroup::Faces => self.face_width,
            ImageGroup::Objects => self.object_width,
        }
    }
}

/// Zero-padded feature matrices plus how many rows of each are real.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeatures {
    pub patches: Tensor<f32>,
    pub faces: Tensor<f32>,
    pub objects: Tensor<f32>,
    pub present: [usize; 3],
}

impl ImageFeatures {
    pub fn group(&self, g: ImageGroup) -> (&Tensor<f32>, usize) {
        match g {
            ImageGroup::Patches => (&self.patches, self.present[0]),
            ImageGroup::Faces => (&self.faces, self.present[1]),
            ImageGroup::Objects => (&self.objects, self.present[2]),
        }
    }
}

#[derive(Deserialize)]
struct FeatureFile {
    #[serde(default)]
    patches: Vec<Vec<f32>>,
    #[serde(default)]
    faces: Vec<Vec<f32>>,
    #[serde(default)]
    objects: Vec<Vec<f32>>,
}

fn shape_group(rows: &[Vec<f32>], g: ImageGroup, cfg: &ImageConfig) -> Result<(Tensor<f32>, usize)> {
    let (n, w) = (cfg.rows(g), cfg.width(g));
    let mut t = Tensor::zeros(n, w);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != w {
            return Err(Error::Features(format!("{}: row {i} has width {}, expected {w}", g.name(), row.len())));
        }
        if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::Features(format!("{}: row {i} contains non-finite value {bad}", g.name())));
        }
        if i < n {
            t.row_mut(i).copy_from_slice(row);
        }
    }
    Ok((t, rows.len().min(n)))
}

fn seeded_rows(rng: &mut ChaCha8Rng, count: usize, width: usize) -> Vec<Vec<f32>> {
    (0..count).map(|_| (0..width).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).collect()
}

/// Resolves a record's image features. Relative file paths are looked up
/// under `base_dir` when given.
pub fn load_image_features(record: &Record, cfg: &ImageConfig, base_dir: Option<&Path>) -> Result<ImageFeatures> {
    let groups: [Vec<Vec<f32>>; 3] = match &record.image {
        ImageSpec::Seed { seed, faces, objects } => {
            let mut h = Sha256::new();
            h.update(record.id.as_bytes());
            h.update(seed.to_le_bytes());
            let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
            let nf = faces.unwrap_or(cfg.faces).min(cfg.faces);
            let no = objects.unwrap_or(cfg.objects).min(cfg.objects);
            [
                seeded_rows(&mut rng, cfg.patches, cfg.patch_width),
                seeded_rows(&mut rng, nf, cfg.face_width),
                seeded_rows(&mut rng, no, cfg.object_width),
            ]
        }
        ImageSpec::File { path, patches, faces, objects } => {
            let file = match path {
                Some(p) => {
                    let full = match base_dir {
                        Some(b) if p.is_relative() => b.join(p),
                        _ => p.clone(),
                    };
                    let bytes = std::fs::read(&full)
                        .map_err(|e| Error::Features(format!("record {}: {}: {e}", record.id, full.display())))?;
                    Some(serde_json::from_slice::<FeatureFile>(&bytes)?)
                }
                None => None,
            };
            let pick = |inline: &Option<Vec<Vec<f32>>>, from_file: fn(&FeatureFile) -> &Vec<Vec<f32>>| {
                inline.clone().or_else(|| file.as_ref().map(|f| from_file(f).clone())).unwrap_or_default()
            };
            [pick(patches, |f| &f.patches), pick(faces, |f| &f.faces), pick(objects, |f| &f.objects)]
        }
    };
    let (patches, np) = shape_group(&groups[0], ImageGroup::Patches, cfg)?;
    let (faces, nf) = shape_group(&groups[1], ImageGroup::Faces, cfg)?;
    let (objects, no) = shape_group(&groups[2], ImageGroup::Objects, cfg)?;
    Ok(ImageFeatures { patches, faces, objects, present: [np, nf, no] })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(image: ImageSpec) -> Record {
        Record { id: "r1".into(), article: vec![], entities: None, caption: vec![], image }
    }

    #[test]
    fn missing_faces_are_zero_padded() {
        let cfg = ImageConfig::default();
        let f = load_image_features(&record(ImageSpec::Seed { seed: 1, faces: Some(2), objects: None }), &cfg, None).unwrap();
        assert_eq!(f.present, [49, 2, 64]);
        assert_eq!(f.faces.shape(), [4, 32]);
        assert!(f.faces.row(2).iter().chain(f.faces.row(3)).all(|&v| v == 0.0));
        assert!(f.faces.row(1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn seed_mode_is_deterministic_per_id() {
        let cfg = ImageConfig::default();
        let spec = ImageSpec::Seed { seed: 0, faces: None, objects: None };
        let a = load_image_features(&record(spec.clone()), &cfg, None).unwrap();
        let b = load_image_features(&record(spec.clone()), &cfg, None).unwrap();
        assert_eq!(a, b);
        let mut other = record(spec);
        other.id = "r2".into();
        assert_ne!(load_image_features(&other, &cfg, None).unwrap().patches, a.patches);
    }

    #[test]
    fn wrong_width_names_the_group() {
        let cfg = ImageConfig::default();
        let spec = ImageSpec::File { path: None, patches: Some(vec![vec![0.0; 31]]), faces: None, objects: None };
        let err = load_image_features(&record(spec), &cfg, None).unwrap_err();
        assert!(err.to_string().contains("patches"), "{err}");
    }

    #[test]
    fn file_mode_reads_and_truncates() {
        let cfg = ImageConfig { patches: 2, faces: 1, objects: 1, patch_width: 2, face_width: 2, object_width: 2 };
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("img.json"), r#"{"patches":[[1,2],[3,4],[5,6]],"faces":[[7,8]]}"#).unwrap();
        let spec = ImageSpec::File { path: Some("img.json".into()), patches: None, faces: None, objects: None };
        let f = load_image_features(&record(spec), &cfg, Some(dir.path())).unwrap();
        assert_eq!(f.patches.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(f.present, [2, 1, 0]);
        assert_eq!(f.objects.data(), &[0.0, 0.0]);
    }
}
