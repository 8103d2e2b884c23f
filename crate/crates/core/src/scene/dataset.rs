//! Dataset assembly and the on-disk layout.
//!
//! ```text
//! <dir>/manifest.json          FFUSION-DATASET v1: config, per-sample seed/label/split
//! <dir>/rgb_<id>.ppm           ASCII PPM (P3)
//! <dir>/cloud_<id>.pcd         FFUSION-PCD v1
//! <dir>/depth_<id>.depth       FFUSION-DEPTH v1, ground-truth dense depth
//! <dir>/seg_<id>.txt           FFUSION-SEG v1 8 8, label grid rows
//! <dir>/text_<id>.txt          command text, one line
//! ```
//!
//! `<id>` is the zero-padded five digit sample index.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    derive_command, generate_scene_with, render_depth, render_labels, render_rgb, simulate_lidar,
    CommandLabel, GeneratorConfig, LidarPattern, LABEL_GRID, NUM_SEG_CLASSES,
};
use crate::error::{Error, Result};
use crate::geometry::io::{read_dense, read_pcd, write_dense, write_pcd};
use crate::geometry::{DenseDepthMap, Extrinsics, Image, Intrinsics, PointCloud};
use crate::rng::{derive_seed, Rng};

pub const MANIFEST_TAG: &str = "FFUSION-DATASET v1";
pub const SEG_TAG: &str = "FFUSION-SEG v1";

/// One multimodal example rendered from a single scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub seed: u64,
    pub rgb: Image,
    pub cloud: PointCloud,
    pub gt_depth: DenseDepthMap,
    pub text: String,
    pub label: CommandLabel,
    /// 8×8 class ids, row-major.
    pub seg: Vec<u8>,
    /// Uncorrected depth-to-RGB pixel offset. Zero for clean samples; set
    /// only by miscalibration fault injection.
    pub depth_misregistration: (i32, i32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config("split ratios must be non-negative".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {parts:?} do not sum to 1")));
        }
        Ok(())
    }

    /// `(train, val, test)` counts; the test split takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = ((n as f64 * self.train).round() as usize).min(n);
        let val = ((n as f64 * self.val).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n: usize,
    pub seed: u64,
    pub splits: SplitRatios,
    pub intrinsics: Intrinsics,
    pub lidar_pattern: LidarPattern,
    pub lidar_extrinsics: Extrinsics,
    pub generator: GeneratorConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n: 640,
            seed: 2024,
            splits: SplitRatios::default(),
            intrinsics: Intrinsics::default_camera(),
            lidar_pattern: LidarPattern::default(),
            lidar_extrinsics: Extrinsics::identity(),
            generator: GeneratorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub seed: u64,
    pub split: Split,
    pub label: CommandLabel,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: DatasetConfig,
    pub samples: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn manifest(&self) -> Manifest {
        let entries = [
            (Split::Train, &self.train),
            (Split::Val, &self.val),
            (Split::Test, &self.test),
        ]
        .into_iter()
        .flat_map(|(split, samples)| {
            samples.iter().map(move |s| ManifestEntry {
                id: s.id,
                seed: s.seed,
                split,
                label: s.label,
                text: s.text.clone(),
            })
        })
        .collect();
        Manifest {
            format: MANIFEST_TAG.into(),
            config: self.config.clone(),
            samples: entries,
        }
    }
}

pub fn sample_seed(dataset_seed: u64, index: usize) -> u64 {
    derive_seed(dataset_seed, &format!("sample{index}"))
}

/// Renders sample `id` from its own seed.
pub fn make_sample(id: usize, seed: u64, cfg: &DatasetConfig) -> Result<Sample> {
    let mut rng = Rng::new(seed);
    let scene = generate_scene_with(&mut rng, &cfg.generator)?;
    let (text, label) = derive_command(&scene);
    Ok(Sample {
        id,
        seed,
        rgb: render_rgb(&scene, &cfg.intrinsics).quantized(),
        cloud: simulate_lidar(&scene, &cfg.lidar_pattern, &cfg.lidar_extrinsics)?,
        gt_depth: render_depth(&scene, &cfg.intrinsics),
        text,
        label,
        seg: render_labels(&scene, &cfg.intrinsics),
        depth_misregistration: (0, 0),
    })
}

/// Generates `cfg.n` samples and, when `out_dir` is given, writes them with
/// a manifest. Split membership is by index: train first, then val, then test.
pub fn build_dataset(cfg: &DatasetConfig, out_dir: Option<&Path>) -> Result<Dataset> {
    if cfg.n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    cfg.splits.validate()?;
    cfg.lidar_pattern.validate()?;
    let (n_train, n_val, _) = cfg.splits.sizes(cfg.n);
    let mut ds = Dataset {
        config: cfg.clone(),
        train: Vec::with_capacity(n_train),
        val: Vec::with_capacity(n_val),
        test: Vec::new(),
    };
    for i in 0..cfg.n {
        let s = make_sample(i, sample_seed(cfg.seed, i), cfg)?;
        if i < n_train {
            ds.train.push(s);
        } else if i < n_train + n_val {
            ds.val.push(s);
        } else {
            ds.test.push(s);
        }
    }
    if let Some(dir) = out_dir {
        write_dataset(&ds, dir)?;
    }
    Ok(ds)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn seg_text(seg: &[u8]) -> String {
    let mut s = format!("{SEG_TAG} {LABEL_GRID} {LABEL_GRID}\n");
    for row in seg.chunks(LABEL_GRID) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

fn parse_seg(text: &str) -> Result<Vec<u8>> {
    let mut lines = text.lines();
    if lines.next() != Some(&format!("{SEG_TAG} {LABEL_GRID} {LABEL_GRID}")) {
        return Err(Error::parse("segmentation grid", "missing FFUSION-SEG v1 8 8 header"));
    }
    let seg: Vec<u8> = lines
        .flat_map(str::split_whitespace)
        .map(|t| {
            t.parse::<u8>()
                .ok()
                .filter(|&c| (c as usize) < NUM_SEG_CLASSES)
                .ok_or_else(|| Error::parse("segmentation grid", format!("bad class `{t}`")))
        })
        .collect::<Result<_>>()?;
    if seg.len() != LABEL_GRID * LABEL_GRID {
        return Err(Error::parse("segmentation grid", "wrong cell count"));
    }
    Ok(seg)
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = serde_json::to_string_pretty(&ds.manifest()).expect("manifest serializes");
    write(&dir.join("manifest.json"), manifest + "\n")?;
    for s in ds.train.iter().chain(&ds.val).chain(&ds.test) {
        let id = format!("{:05}", s.id);
        write(&dir.join(format!("rgb_{id}.ppm")), s.rgb.to_ppm())?;
        write(&dir.join(format!("cloud_{id}.pcd")), write_pcd(&s.cloud))?;
        write(&dir.join(format!("depth_{id}.depth")), write_dense(&s.gt_depth))?;
        write(&dir.join(format!("seg_{id}.txt")), seg_text(&s.seg))?;
        write(&dir.join(format!("text_{id}.txt")), format!("{}\n", s.text))?;
    }
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(&read(&path)?)
        .map_err(|e| Error::parse("manifest.json", e.to_string()))?;
    if manifest.format != MANIFEST_TAG {
        return Err(Error::parse(
            "manifest.json",
            format!("unsupported format `{}`", manifest.format),
        ));
    }
    Ok(manifest)
}

pub fn load_sample(dir: &Path, entry: &ManifestEntry) -> Result<Sample> {
    let id = format!("{:05}", entry.id);
    let rgb = Image::from_ppm(&read(&dir.join(format!("rgb_{id}.ppm")))?)?;
    let cloud = read_pcd(&read(&dir.join(format!("cloud_{id}.pcd")))?)?;
    let gt_depth = read_dense(&read(&dir.join(format!("depth_{id}.depth")))?)?;
    let seg = parse_seg(&read(&dir.join(format!("seg_{id}.txt")))?)?;
    let text = read(&dir.join(format!("text_{id}.txt")))?.trim_end().to_string();
    Ok(Sample {
        id: entry.id,
        seed: entry.seed,
        rgb,
        cloud,
        gt_depth,
        text,
        label: entry.label,
        seg,
        depth_misregistration: (0, 0),
    })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = load_manifest(dir)?;
    let mut ds = Dataset {
        config: manifest.config.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for entry in &manifest.samples {
        let s = load_sample(dir, entry)?;
        match entry.split {
            Split::Train => ds.train.push(s),
            Split::Val => ds.val.push(s),
            Split::Test => ds.test.push(s),
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        assert_eq!(SplitRatios::default().sizes(10), (8, 1, 1));
        assert_eq!(SplitRatios::default().sizes(640), (512, 64, 64));
        let bad = SplitRatios {
            train: 0.5,
            val: 0.1,
            test: 0.1,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn seg_file_round_trip() {
        let seg: Vec<u8> = (0..64).map(|i| (i % 4) as u8).collect();
        assert_eq!(parse_seg(&seg_text(&seg)).unwrap(), seg);
    }
}
