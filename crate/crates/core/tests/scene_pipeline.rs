use std::collections::BTreeMap;

use ffusion::geometry::{project_point_cloud, Extrinsics, Intrinsics};
use ffusion::rng::Rng;
use ffusion::scene::{
    build_dataset, derive_command, generate_scene, load_dataset, simulate_lidar, CommandLabel,
    DatasetConfig, LidarPattern, MIN_CENTER_SPACING,
};

/// Co-located LiDAR: every projected cell holds the nearest hit landing in
/// it, and each hit's depth equals the camera ray cast through the hit's
/// own image coordinates.
#[test]
fn projected_lidar_matches_ray_cast_depth() {
    let intr = Intrinsics::default_camera();
    let extr = Extrinsics::identity();
    let pattern = LidarPattern::default();
    let mut checked = 0usize;
    for seed in 0..100u64 {
        let scene = generate_scene(&mut Rng::new(seed)).unwrap();
        let cloud = simulate_lidar(&scene, &pattern, &extr).unwrap();
        let sparse = project_point_cloud(&cloud, &intr, &extr).unwrap();
        let mut expected: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &p in &cloud.points {
            let (u, v) = intr.project(p);
            if u < 0.0 || v < 0.0 || u >= intr.width as f64 || v >= intr.height as f64 {
                continue;
            }
            let cast = scene.depth_at(&intr, u, v).expect("point lies on a surface");
            assert!((cast - p[2]).abs() < 1e-6, "seed {seed}: hit z {} vs cast {cast}", p[2]);
            let cell = expected.entry((u.floor() as usize, v.floor() as usize)).or_insert(cast);
            *cell = cell.min(cast);
        }
        assert_eq!(expected.len(), sparse.valid_count, "seed {seed}");
        for (&(c, r), &d) in &expected {
            let got = sparse.get(c, r).expect("cell populated");
            assert!((got - d).abs() < 1e-6, "seed {seed} cell ({c},{r}): {got} vs {d}");
            checked += 1;
        }
    }
    assert!(checked > 10_000);
}

#[test]
fn generated_scenes_respect_spacing() {
    for seed in 0..1000u64 {
        let scene = generate_scene(&mut Rng::new(seed)).unwrap();
        scene.validate().unwrap();
        for (i, a) in scene.objects.iter().enumerate() {
            assert!(a.center[2] > 1.0);
            for b in &scene.objects[i + 1..] {
                let d: f64 = (0..3).map(|k| (a.center[k] - b.center[k]).powi(2)).sum();
                assert!(d.sqrt() >= MIN_CENTER_SPACING, "seed {seed}");
            }
        }
    }
}

#[test]
fn label_distribution_covers_all_commands() {
    let cfg = DatasetConfig {
        n: 512,
        ..DatasetConfig::default()
    };
    let ds = build_dataset(&cfg, None).unwrap();
    let mut counts = [0usize; CommandLabel::COUNT];
    for s in ds.train.iter().chain(&ds.val).chain(&ds.test) {
        counts[s.label.index()] += 1;
    }
    assert!(counts.iter().all(|&c| c > 64), "{counts:?}");
}

#[test]
fn samples_are_consistent_with_their_scene() {
    let cfg = DatasetConfig {
        n: 20,
        ..DatasetConfig::default()
    };
    let ds = build_dataset(&cfg, None).unwrap();
    for s in &ds.train {
        let mut rng = Rng::new(s.seed);
        let scene = ffusion::scene::generate_scene_with(&mut rng, &cfg.generator).unwrap();
        assert_eq!(derive_command(&scene), (s.text.clone(), s.label));
        assert_eq!(s.rgb.width, 32);
        assert_eq!(s.seg.len(), 64);
    }
}

#[test]
fn dataset_rebuild_is_byte_identical_and_loads_back() {
    let cfg = DatasetConfig {
        n: 12,
        seed: 7,
        ..DatasetConfig::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let built = build_dataset(&cfg, Some(a.path())).unwrap();
    build_dataset(&cfg, Some(b.path())).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 1 + 5 * 12);
    for name in &names {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name:?}");
    }
    let loaded = load_dataset(a.path()).unwrap();
    assert_eq!(loaded, built);
    assert_eq!((loaded.train.len(), loaded.val.len(), loaded.test.len()), (10, 1, 1));
}

#[test]
fn seeds_are_disjoint_across_splits() {
    let ds = build_dataset(&DatasetConfig::default(), None).unwrap();
    let mut seeds: Vec<u64> = ds.manifest().samples.iter().map(|e| e.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds.len(), 640);
}
