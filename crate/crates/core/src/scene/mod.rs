//! Deterministic synthetic driving scenes.
//!
//! A scene is a ground plane plus up to six boxes and spheres, all in the
//! camera frame. Every modality (RGB, LiDAR, ground-truth depth, labels,
//! the text command) is rendered from the same [`SceneSpec`].

mod command;
pub mod dataset;
mod lidar;

pub use command::{derive_command, CommandLabel, COMMAND_WORDS};
pub use dataset::{
    build_dataset, load_dataset, load_manifest, write_dataset, Dataset, DatasetConfig, Manifest, Sample, Split,
    SplitRatios,
};
pub use lidar::{simulate_lidar, LidarPattern};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DenseDepthMap, Image, Intrinsics};
use crate::rng::Rng;

pub const MAX_OBJECTS: usize = 6;
pub const MIN_CENTER_SPACING: f64 = 0.5;
pub const MIN_OBJECT_DEPTH: f64 = 1.0;
pub const MAX_GENERATION_TRIES: usize = 1000;
/// Ray hits beyond this distance count as misses (sky).
pub const MAX_RANGE: f64 = 60.0;
/// Side length of the label grid.
pub const LABEL_GRID: usize = 8;
pub const NUM_SEG_CLASSES: usize = 4;

const SKY: [f64; 3] = [0.55, 0.70, 0.90];
const GROUND_DARK: [f64; 3] = [0.30, 0.30, 0.32];
const GROUND_LIGHT: [f64; 3] = [0.50, 0.50, 0.48];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Pedestrian,
    Vehicle,
    Barrier,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [
        ObjectClass::Pedestrian,
        ObjectClass::Vehicle,
        ObjectClass::Barrier,
    ];

    /// Segmentation id; 0 is background.
    pub fn seg_id(self) -> u8 {
        match self {
            ObjectClass::Pedestrian => 1,
            ObjectClass::Vehicle => 2,
            ObjectClass::Barrier => 3,
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Vehicle => "vehicle",
            ObjectClass::Barrier => "barrier",
        }
    }

    fn base_color(self) -> [f64; 3] {
        match self {
            ObjectClass::Pedestrian => [0.85, 0.20, 0.20],
            ObjectClass::Vehicle => [0.20, 0.35, 0.85],
            ObjectClass::Barrier => [0.95, 0.75, 0.10],
        }
    }

    /// Shape and full extents `(width, height, length)` in meters.
    fn nominal_shape(self) -> (Shape, [f64; 3]) {
        match self {
            ObjectClass::Pedestrian => (Shape::Box, [0.6, 1.7, 0.6]),
            ObjectClass::Vehicle => (Shape::Box, [1.8, 1.4, 3.0]),
            ObjectClass::Barrier => (Shape::Sphere, [1.0, 1.0, 1.0]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Box,
    Sphere,
}

/// One primitive. Boxes are axis-aligned with full extents `size`; spheres
/// use `size[0]` as their diameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub class: ObjectClass,
    pub color: [f64; 3],
}

impl SceneObject {
    pub fn new(class: ObjectClass, center: [f64; 3]) -> Self {
        let (shape, size) = class.nominal_shape();
        Self {
            shape,
            center,
            size,
            class,
            color: class.base_color(),
        }
    }

    pub fn sphere(class: ObjectClass, center: [f64; 3], radius: f64) -> Self {
        Self {
            shape: Shape::Sphere,
            center,
            size: [2.0 * radius; 3],
            class,
            color: class.base_color(),
        }
    }

    fn intersect(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        match self.shape {
            Shape::Sphere => {
                let r = 0.5 * self.size[0];
                let oc = sub(origin, self.center);
                let a = dot(dir, dir);
                let b = dot(oc, dir);
                let c = dot(oc, oc) - r * r;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [(-b - sq) / a, (-b + sq) / a]
                    .into_iter()
                    .find(|&t| t > HIT_EPS)
            }
            Shape::Box => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for k in 0..3 {
                    let lo = self.center[k] - 0.5 * self.size[k];
                    let hi = self.center[k] + 0.5 * self.size[k];
                    if dir[k].abs() < 1e-15 {
                        if origin[k] < lo || origin[k] > hi {
                            return None;
                        }
                        continue;
                    }
                    let (mut t0, mut t1) = ((lo - origin[k]) / dir[k], (hi - origin[k]) / dir[k]);
                    if t0 > t1 {
                        std::mem::swap(&mut t0, &mut t1);
                    }
                    t_near = t_near.max(t0);
                    t_far = t_far.min(t1);
                }
                if t_near > t_far || t_far <= HIT_EPS {
                    return None;
                }
                Some(if t_near > HIT_EPS { t_near } else { t_far })
            }
        }
    }
}

const HIT_EPS: f64 = 1e-9;

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Scene in the camera frame; the ground is the plane `y = ground_height`
/// (camera height above ground, y pointing down).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub ground_height: f64,
    pub objects: Vec<SceneObject>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    Ground,
    Object(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter; equals camera depth when `dir.z == 1`.
    pub t: f64,
    pub point: [f64; 3],
    pub surface: Surface,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.objects.len();
        if n == 0 || n > MAX_OBJECTS {
            return Err(Error::Generation(format!(
                "scene must hold 1..={MAX_OBJECTS} objects, has {n}"
            )));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.center[2] <= MIN_OBJECT_DEPTH {
                return Err(Error::Generation(format!(
                    "object {i} at z = {} is not in front of the camera",
                    o.center[2]
                )));
            }
            for p in &self.objects[..i] {
                if dist(o.center, p.center) < MIN_CENTER_SPACING {
                    return Err(Error::Generation(format!(
                        "object {i} is closer than {MIN_CENTER_SPACING} m to another object"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Nearest hit along `origin + t·dir` within [`MAX_RANGE`] (measured in
    /// the ray's z component when `dir.z == 1`, else along `t·|dir|`).
    pub fn cast(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<Hit> {
        let mut best: Option<(f64, Surface)> = None;
        if dir[1] > 1e-12 {
            let t = (self.ground_height - origin[1]) / dir[1];
            if t > HIT_EPS {
                best = Some((t, Surface::Ground));
            }
        }
        for (i, o) in self.objects.iter().enumerate() {
            if let Some(t) = o.intersect(origin, dir) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, Surface::Object(i)));
                }
            }
        }
        let (t, surface) = best?;
        if t * dot(dir, dir).sqrt() > MAX_RANGE {
            return None;
        }
        let point = [
            origin[0] + t * dir[0],
            origin[1] + t * dir[1],
            origin[2] + t * dir[2],
        ];
        Some(Hit { t, point, surface })
    }

    /// Camera-frame depth of the surface seen through continuous image
    /// coordinates `(u, v)`.
    pub fn depth_at(&self, intr: &Intrinsics, u: f64, v: f64) -> Option<f64> {
        self.cast([0.0; 3], intr.ray(u, v)).map(|h| h.point[2])
    }

    fn pixel_hits(&self, intr: &Intrinsics) -> Vec<Option<Hit>> {
        let mut out = Vec::with_capacity(intr.width * intr.height);
        for row in 0..intr.height {
            for col in 0..intr.width {
                let dir = intr.ray(col as f64 + 0.5, row as f64 + 0.5);
                out.push(self.cast([0.0; 3], dir));
            }
        }
        out
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = sub(a, b);
    dot(d, d).sqrt()
}

/// Sampling ranges for [`generate_scene_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    pub lateral_range: f64,
    pub depth_range: (f64, f64),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            min_objects: 1,
            max_objects: 4,
            lateral_range: 3.5,
            depth_range: (2.5, 14.0),
        }
    }
}

fn place(rng: &mut Rng, class: ObjectClass, x: f64, z: f64, ground: f64) -> SceneObject {
    let (shape, nominal) = class.nominal_shape();
    let scale = rng.range(0.9, 1.1);
    let mut size = nominal.map(|s| s * scale);
    if shape == Shape::Sphere {
        size = [size[0]; 3];
    }
    let base = class.base_color();
    let color = base.map(|c| (c + rng.range(-0.08, 0.08)).clamp(0.0, 1.0));
    SceneObject {
        shape,
        center: [x, ground - 0.5 * size[1], z],
        size,
        class,
        color,
    }
}

/// Samples a scene whose derived command is a uniformly chosen target, so
/// command labels come out balanced. Placement is by rejection.
pub fn generate_scene_with(rng: &mut Rng, cfg: &GeneratorConfig) -> Result<SceneSpec> {
    let seed = rng.seed();
    if cfg.min_objects == 0 || cfg.max_objects > MAX_OBJECTS || cfg.min_objects > cfg.max_objects {
        return Err(Error::Generation(format!(
            "object count range {}..={} violates 1..={MAX_OBJECTS}",
            cfg.min_objects, cfg.max_objects
        )));
    }
    let target = CommandLabel::ALL[rng.below(4)];
    let ground_height = rng.range(1.4, 1.7);
    let (z_lo, z_hi) = cfg.depth_range;
    let lat = cfg.lateral_range;
    for _ in 0..MAX_GENERATION_TRIES {
        let n = cfg.min_objects + rng.below(cfg.max_objects - cfg.min_objects + 1);
        let mut objects = Vec::with_capacity(n);
        let random_class = |rng: &mut Rng| ObjectClass::ALL[rng.below(3)];
        let primary = match target {
            CommandLabel::Stop => {
                let x = rng.range(-0.9, 0.9);
                let z = rng.range(z_lo.max(2.5), 4.8);
                place(rng, ObjectClass::Pedestrian, x, z, ground_height)
            }
            CommandLabel::Go => {
                let class = random_class(rng);
                let x = rng.range(-0.4, 0.4);
                let z = rng.range(z_lo.max(3.0), z_hi.min(10.0));
                place(rng, class, x, z, ground_height)
            }
            CommandLabel::TurnLeft | CommandLabel::TurnRight => {
                let class = random_class(rng);
                let side = if target == CommandLabel::TurnLeft { 1.0 } else { -1.0 };
                let x = side * rng.range(0.8, lat.min(3.0));
                let z = rng.range(z_lo, z_hi.min(8.0));
                place(rng, class, x, z, ground_height)
            }
        };
        objects.push(primary);
        for _ in 1..n {
            let class = random_class(rng);
            let x = rng.range(-lat, lat);
            let z = rng.range(z_lo, z_hi);
            objects.push(place(rng, class, x, z, ground_height));
        }
        let scene = SceneSpec {
            seed,
            ground_height,
            objects,
        };
        if scene.validate().is_ok() && derive_command(&scene).1 == target {
            return Ok(scene);
        }
    }
    Err(Error::Generation(format!(
        "no valid scene for seed {seed} after {MAX_GENERATION_TRIES} tries"
    )))
}

pub fn generate_scene(rng: &mut Rng) -> Result<SceneSpec> {
    generate_scene_with(rng, &GeneratorConfig::default())
}

pub fn render_rgb(scene: &SceneSpec, intr: &Intrinsics) -> Image {
    let mut img = Image::new(intr.width, intr.height);
    for (i, hit) in scene.pixel_hits(intr).into_iter().enumerate() {
        let color = match hit {
            None => SKY,
            Some(Hit {
                surface: Surface::Ground,
                point,
                ..
            }) => {
                let parity = (point[0].floor() as i64 + point[2].floor() as i64).rem_euclid(2);
                if parity == 0 {
                    GROUND_DARK
                } else {
                    GROUND_LIGHT
                }
            }
            Some(Hit {
                surface: Surface::Object(k),
                ..
            }) => scene.objects[k].color,
        };
        img.set_pixel(i % intr.width, i / intr.width, color);
    }
    img
}

pub fn render_depth(scene: &SceneSpec, intr: &Intrinsics) -> DenseDepthMap {
    let depth = scene
        .pixel_hits(intr)
        .into_iter()
        .map(|h| h.map_or(f64::NAN, |h| h.point[2]))
        .collect();
    DenseDepthMap::from_depth(intr.width, intr.height, depth).expect("positive depths")
}

/// Per-pixel class ids (0 = background).
pub fn render_class_mask(scene: &SceneSpec, intr: &Intrinsics) -> Vec<u8> {
    scene
        .pixel_hits(intr)
        .into_iter()
        .map(|h| match h {
            Some(Hit {
                surface: Surface::Object(k),
                ..
            }) => scene.objects[k].class.seg_id(),
            _ => 0,
        })
        .collect()
}

/// 8×8 label grid: the most frequent class id in each pixel block, ties
/// going to the lower id (background first).
pub fn render_labels(scene: &SceneSpec, intr: &Intrinsics) -> Vec<u8> {
    let mask = render_class_mask(scene, intr);
    let (bw, bh) = (intr.width / LABEL_GRID, intr.height / LABEL_GRID);
    let mut grid = vec![0u8; LABEL_GRID * LABEL_GRID];
    for gr in 0..LABEL_GRID {
        for gc in 0..LABEL_GRID {
            let mut counts = [0usize; NUM_SEG_CLASSES];
            for r in gr * bh..(gr + 1) * bh {
                for c in gc * bw..(gc + 1) * bw {
                    counts[mask[r * intr.width + c] as usize] += 1;
                }
            }
            let mut best = 0;
            for k in 1..NUM_SEG_CLASSES {
                if counts[k] > counts[best] {
                    best = k;
                }
            }
            grid[gr * LABEL_GRID + gc] = best as u8;
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ground_only(h: f64) -> SceneSpec {
        SceneSpec {
            seed: 0,
            ground_height: h,
            objects: vec![],
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate_scene(&mut Rng::new(42)).unwrap();
        let b = generate_scene(&mut Rng::new(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn thousand_seeds_respect_invariants() {
        for seed in 0..1000 {
            let s = generate_scene(&mut Rng::new(seed)).unwrap();
            s.validate().unwrap();
            for (i, a) in s.objects.iter().enumerate() {
                for b in &s.objects[..i] {
                    assert!(dist(a.center, b.center) >= MIN_CENTER_SPACING);
                }
            }
        }
    }

    #[test]
    fn zero_objects_is_invalid() {
        let cfg = GeneratorConfig {
            min_objects: 0,
            max_objects: 0,
            ..GeneratorConfig::default()
        };
        assert!(matches!(
            generate_scene_with(&mut Rng::new(1), &cfg),
            Err(Error::Generation(_))
        ));
        assert!(ground_only(1.5).validate().is_err());
    }

    #[test]
    fn impossible_spacing_reports_generation_error() {
        let cfg = GeneratorConfig {
            min_objects: 6,
            max_objects: 6,
            lateral_range: 0.01,
            depth_range: (2.5, 2.51),
        };
        assert!(matches!(
            generate_scene_with(&mut Rng::new(1), &cfg),
            Err(Error::Generation(_))
        ));
    }

    #[test]
    fn ground_depth_matches_closed_form() {
        let intr = Intrinsics::default_camera();
        let h = 1.5;
        let d = render_depth(&ground_only(h), &intr);
        for row in 0..intr.height {
            let dy = (row as f64 + 0.5 - intr.cy) / intr.fy;
            for col in 0..intr.width {
                // plane y = h along a ray with z = 1: depth = h / dy
                let expected = if dy > 0.0 {
                    let t = h / dy;
                    let dx = (col as f64 + 0.5 - intr.cx) / intr.fx;
                    let len = (dx * dx + dy * dy + 1.0).sqrt();
                    (t * len <= MAX_RANGE).then_some(t)
                } else {
                    None
                };
                match (expected, d.get(col, row)) {
                    (Some(e), Some(v)) => assert!((e - v).abs() < 1e-12),
                    (None, None) => {}
                    other => panic!("pixel ({col},{row}): {other:?}"),
                }
            }
        }
    }

    #[test]
    fn sphere_on_axis_gives_front_depth() {
        let intr = Intrinsics {
            fx: 20.0,
            fy: 20.0,
            cx: 15.5,
            cy: 15.5,
            width: 32,
            height: 32,
        };
        let scene = SceneSpec {
            seed: 0,
            ground_height: 50.0,
            objects: vec![SceneObject::sphere(ObjectClass::Barrier, [0.0, 0.0, 6.0], 1.25)],
        };
        let d = render_depth(&scene, &intr);
        assert!((d.get(15, 15).unwrap() - (6.0 - 1.25)).abs() < 1e-12);
    }

    #[test]
    fn objects_low_in_frame_leave_upper_labels_background() {
        let intr = Intrinsics::default_camera();
        let ped = place(&mut Rng::new(0), ObjectClass::Pedestrian, -1.0 / 3.0, 4.0, 1.5);
        assert!(ped.center[1] - 0.5 * ped.size[1] > -0.5);
        let scene = SceneSpec {
            seed: 0,
            ground_height: 1.5,
            objects: vec![ped],
        };
        let labels = render_labels(&scene, &intr);
        assert!(labels[..LABEL_GRID * 3].iter().all(|&c| c == 0));
        assert!(labels.contains(&ObjectClass::Pedestrian.seg_id()));
    }

    #[test]
    fn rgb_separates_sky_ground_and_objects() {
        let intr = Intrinsics::default_camera();
        let scene = SceneSpec {
            seed: 0,
            ground_height: 1.5,
            objects: vec![SceneObject::new(ObjectClass::Vehicle, [0.0, 0.8, 6.0])],
        };
        let img = render_rgb(&scene, &intr);
        assert_eq!(img.pixel(0, 0), SKY);
        assert_eq!(img.pixel(16, 18), ObjectClass::Vehicle.base_color());
    }
}
