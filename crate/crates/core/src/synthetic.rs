//! Seeded synthetic video datasets with a matching linear victim.
//!
//! Class `k` is a bright square at a class-specific position on a noisy
//! gray background, present in every frame. The victim scores each class by
//! the brightness of its square, but only on a subset of "active" frames;
//! the remaining frames are ignored outright, giving the frame-oblivious
//! structure that key-frame selection is meant to discover.
//!
//! On disk a dataset is a directory with `manifest.json`, `victim.json`, one
//! `w###.vbt` weight tensor per class and one `s###.vbt` tensor per sample.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attack::{Dataset, LabeledVideo};
use crate::error::{Error, Result};
use crate::tensor::{Dims, Label, VideoTensor};
use crate::vbt;
use crate::victim::{FrameObliviousVictim, LinearSoftmaxVictim, Victim};

pub const BACKGROUND: f64 = 128.0;
pub const OBJECT_CONTRAST: f64 = 80.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub num_classes: usize,
    pub samples: usize,
    pub dims: Dims,
    /// Frames the victim looks at; `None` means all of them.
    pub active_frames: Option<usize>,
    /// Standard deviation of the per-pixel background noise.
    pub noise: f64,
    /// Clean logit margin between the true class and the others.
    pub margin: f64,
    pub temperature: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            num_classes: 4,
            samples: 20,
            dims: Dims { t: 16, w: 32, h: 32, c: 3 },
            active_frames: Some(8),
            noise: 8.0,
            margin: 5.0,
            temperature: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.num_classes > self.slots() {
            return bad(format!("{} classes do not fit in a {}x{} frame", self.num_classes, self.dims.w, self.dims.h));
        }
        if let Some(a) = self.active_frames {
            if a == 0 || a > self.dims.t {
                return bad(format!("active_frames must be in 1..={}, got {a}", self.dims.t));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be >= 0".into());
        }
        if !(self.margin > 0.0 && self.temperature > 0.0) {
            return bad("margin and temperature must be > 0".into());
        }
        Ok(())
    }

    fn side(&self) -> usize {
        (self.dims.w.min(self.dims.h) / 4).max(1)
    }

    fn slots(&self) -> usize {
        let s = self.side();
        (self.dims.w / s / 2).max(1) * (self.dims.h / s / 2).max(1)
    }

    /// Top-left corner of class `k`'s square; squares sit on a grid with one
    /// square of spacing so they never overlap.
    fn position(&self, k: usize) -> (usize, usize) {
        let s = self.side();
        let per_row = (self.dims.h / s / 2).max(1);
        let (gw, gh) = (k / per_row, k % per_row);
        (gw * 2 * s + s / 2, gh * 2 * s + s / 2)
    }

    fn in_square(&self, k: usize, w: usize, h: usize) -> bool {
        let (pw, ph) = self.position(k);
        let s = self.side();
        (pw..pw + s).contains(&w) && (ph..ph + s).contains(&h)
    }
}

/// Generated data plus the victim's parameters.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub dataset: Dataset,
    pub weights: Vec<VideoTensor>,
    pub biases: Vec<f64>,
    pub ignored_frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VictimFile {
    pub kind: String,
    pub dims: Dims,
    pub biases: Vec<f64>,
    pub temperature: f64,
    pub weights: Vec<String>,
    pub ignored_frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub label: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub spec: SyntheticSpec,
    pub samples: Vec<ManifestRow>,
}

fn to_f32(v: f64) -> f64 {
    v as f32 as f64
}

impl SyntheticData {
    pub fn generate(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.dims;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

        let mut frames: Vec<usize> = (0..d.t).collect();
        let active = spec.active_frames.unwrap_or(d.t);
        // partial Fisher–Yates: the first `active` entries are a random subset
        for i in 0..active {
            let j = rng.random_range(i..d.t);
            frames.swap(i, j);
        }
        let mut ignored_frames: Vec<usize> = frames[active..].to_vec();
        ignored_frames.sort_unstable();
        let is_active = |t: usize| !ignored_frames.contains(&t);

        // Unscaled class score: brightness of the class square on active
        // frames; the clean margin is `OBJECT_CONTRAST` per square entry.
        let square_entries = (spec.side() * spec.side() * d.c * active) as f64;
        let alpha = spec.margin * spec.temperature / (OBJECT_CONTRAST * square_entries);
        let weights: Vec<VideoTensor> = (0..spec.num_classes)
            .map(|k| {
                VideoTensor::from_fn(d, |t, w, h, _| {
                    if is_active(t) && spec.in_square(k, w, h) {
                        to_f32(alpha)
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        let biases = vec![0.0; spec.num_classes];

        let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let samples = (0..spec.samples)
            .map(|i| {
                let k = i % spec.num_classes;
                let video = VideoTensor::from_fn(d, |_, w, h, _| {
                    let base = if spec.in_square(k, w, h) { BACKGROUND + OBJECT_CONTRAST } else { BACKGROUND };
                    to_f32((base + noise.sample(&mut rng)).clamp(0.0, 255.0))
                });
                LabeledVideo { id: format!("s{i:03}"), label: Label(k), video }
            })
            .collect();
        let data = SyntheticData {
            spec: spec.clone(),
            dataset: Dataset::new(samples)?,
            weights,
            biases,
            ignored_frames,
        };
        data.check_accuracy()?;
        Ok(data)
    }

    pub fn victim(&self) -> Result<Arc<dyn Victim>> {
        build_victim(self.weights.clone(), self.biases.clone(), self.spec.temperature, &self.ignored_frames)
    }

    fn check_accuracy(&self) -> Result<()> {
        let v = self.victim()?;
        for s in self.dataset.samples() {
            let got = v.classify(&s.video)?.label;
            if got != s.label {
                return Err(Error::CleanSampleMisclassified { expected: s.label, got });
            }
        }
        Ok(())
    }

    /// Write the dataset directory. Output bytes depend only on the spec.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut weight_files = Vec::new();
        for (k, w) in self.weights.iter().enumerate() {
            let name = format!("w{k:03}.vbt");
            vbt::write_tensor(dir.join(&name), w)?;
            weight_files.push(name);
        }
        let victim = VictimFile {
            kind: "linear_softmax".into(),
            dims: self.spec.dims,
            biases: self.biases.clone(),
            temperature: self.spec.temperature,
            weights: weight_files,
            ignored_frames: self.ignored_frames.clone(),
        };
        fs::write(dir.join("victim.json"), serde_json::to_string_pretty(&victim)? + "\n")?;
        let mut rows = Vec::new();
        for s in self.dataset.samples() {
            let file = format!("{}.vbt", s.id);
            vbt::write_tensor(dir.join(&file), &s.video)?;
            rows.push(ManifestRow { id: s.id.clone(), label: s.label.0, file });
        }
        let manifest = Manifest { spec: self.spec.clone(), samples: rows };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

fn build_victim(
    weights: Vec<VideoTensor>,
    biases: Vec<f64>,
    temperature: f64,
    ignored: &[usize],
) -> Result<Arc<dyn Victim>> {
    let linear: Arc<dyn Victim> = Arc::new(LinearSoftmaxVictim::new(weights, biases, temperature)?);
    if ignored.is_empty() {
        Ok(linear)
    } else {
        Ok(Arc::new(FrameObliviousVictim::new(linear, ignored.iter().copied())?))
    }
}

/// Read the samples listed in `dir/manifest.json`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let samples = manifest
        .samples
        .iter()
        .map(|row| {
            Ok(LabeledVideo { id: row.id.clone(), label: Label(row.label), video: vbt::read_tensor(dir.join(&row.file))? })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples)
}

/// Rebuild the victim described by `dir/victim.json`.
pub fn load_victim(dir: impl AsRef<Path>) -> Result<Arc<dyn Victim>> {
    let dir = dir.as_ref();
    let file: VictimFile = serde_json::from_str(&fs::read_to_string(dir.join("victim.json"))?)?;
    if file.kind != "linear_softmax" {
        return Err(Error::Format(format!("unknown victim kind {:?}", file.kind)));
    }
    let weights = file
        .weights
        .iter()
        .map(|name| {
            let w = vbt::read_tensor(dir.join(name))?;
            if w.dims() != file.dims {
                return Err(Error::ShapeMismatch { expected: file.dims, actual: w.dims() });
            }
            Ok(w)
        })
        .collect::<Result<Vec<_>>>()?;
    build_victim(weights, file.biases, file.temperature, &file.ignored_frames)
}
