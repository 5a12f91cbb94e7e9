use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{NumericError, Scalar, Tensor};

/// Named parameter tensors in a stable (lexicographic) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T: Scalar = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}

impl ParamSet<f32> {
    /// Uniform Xavier/Glorot initialisation.
    pub fn init_xavier(&mut self, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) {
        let bound = (6.0 / (rows + cols).max(1) as f64).sqrt() as f32;
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.insert(name, Tensor::from_vec(rows, cols, data).expect("sized"));
    }

    pub fn init_normal(&mut self, name: &str, rows: usize, cols: usize, std: f32, rng: &mut ChaCha8Rng) {
        // Irwin-Hall approximation keeps this free of extra distribution crates.
        let data = (0..rows * cols)
            .map(|_| {
                let s: f32 = (0..12).map(|_| rng.gen::<f32>()).sum();
                (s - 6.0) * std
            })
            .collect();
        self.insert(name, Tensor::from_vec(rows, cols, data).expect("sized"));
    }

    pub fn init_const(&mut self, name: &str, rows: usize, cols: usize, value: f32) {
        self.insert(name, Tensor::filled(rows, cols, value));
    }

    /// Writes `tensors.txt` (name, shape, byte offset per line) and a
    /// little-endian `f32` blob `tensors.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), NumericError> {
        fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        let mut blob: Vec<u8> = Vec::with_capacity(self.numel() * 4);
        for (name, t) in &self.tensors {
            manifest.push_str(&format!("{name}\t{},{}\t{}\n", t.rows(), t.cols(), blob.len()));
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(dir.join(MANIFEST), manifest)?;
        let mut f = fs::File::create(dir.join(BLOB))?;
        f.write_all(&blob)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, NumericError> {
        let manifest = fs::read_to_string(dir.join(MANIFEST))?;
        let blob = fs::read(dir.join(BLOB))?;
        let mut out = Self::new();
        for (lineno, line) in manifest.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || NumericError::Checkpoint(format!("{MANIFEST} line {}: malformed entry", lineno + 1));
            let mut parts = line.split('\t');
            let name = parts.next().ok_or_else(bad)?;
            let (r, c) = parts.next().and_then(|s| s.split_once(',')).ok_or_else(bad)?;
            let rows: usize = r.parse().map_err(|_| bad())?;
            let cols: usize = c.parse().map_err(|_| bad())?;
            let offset: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let end = offset + rows * cols * 4;
            if end > blob.len() {
                return Err(NumericError::Checkpoint(format!("tensor {name} extends past end of {BLOB}")));
            }
            let data = blob[offset..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            out.insert(name, Tensor::from_vec(rows, cols, data)?);
        }
        Ok(out)
    }

    /// Checks that every tensor of `template` exists here with the same shape.
    pub fn check_compatible(&self, template: &ParamSet<f32>) -> Result<(), NumericError> {
        let missing: Vec<&str> = template
            .names()
            .filter(|n| !self.contains(n))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(NumericError::Checkpoint(format!("missing tensors: {}", missing.join(", "))));
        }
        for (name, t) in template.iter() {
            let have = self.get(name).expect("checked").shape();
            if have != t.shape() {
                return Err(NumericError::Checkpoint(format!(
                    "tensor {name} has shape {have:?}, expected {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

const MANIFEST: &str = "tensors.txt";
const BLOB: &str = "tensors.bin";
