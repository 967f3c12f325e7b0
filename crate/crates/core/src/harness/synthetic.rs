//! Synthetic rooms of primitive objects, observed by two overlapping partial views.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

use crate::cloud::{sub, Point3, PointCloud, Pose};
use crate::contrastive::ScenePair;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::instance::OffsetField;
use crate::mining::{CorrespondenceSet, DEFAULT_MATCH_RADIUS};
use crate::parallel::mix_seed;

/// Semantic class of the floor; objects use classes `1..=num_classes`.
pub const FLOOR_CLASS: u32 = 0;

const MIN_OBJECT_SIZE: f64 = 0.2;
const MAX_OBJECT_SIZE: f64 = 0.6;
const OBJECT_GAP: f64 = 0.1;
const PLACEMENT_TRIES: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub num_objects: usize,
    /// Room size in metres; objects stand on the floor `z = 0`.
    pub extent: [f64; 3],
    /// Standard deviation of the per-view Gaussian jitter, metres.
    pub noise: f64,
    pub seed: u64,
    pub num_classes: u32,
    /// Surface samples per square metre.
    pub density: f64,
    /// Width of the band seen by both views as a fraction of the room's x extent.
    /// `>= 1` gives two full views; negative values leave a gap between the views.
    pub view_overlap: f64,
    pub with_floor: bool,
    /// Observe each view under a random yaw and translation instead of the identity.
    pub random_poses: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            num_objects: 8,
            extent: [4.0, 4.0, 2.5],
            noise: 0.0,
            seed: 0,
            num_classes: 5,
            density: 400.0,
            view_overlap: 0.5,
            with_floor: true,
            random_poses: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Cuboid { half: [f64; 3] },
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Object {
    center: Point3,
    shape: Shape,
    class: u32,
}

impl Object {
    fn footprint_radius(&self) -> f64 {
        match self.shape {
            Shape::Cuboid { half } => half[0].hypot(half[1]),
            Shape::Sphere { radius } => radius,
        }
    }

    fn area(&self) -> f64 {
        match self.shape {
            Shape::Cuboid { half: [a, b, c] } => 8.0 * (a * b + b * c + a * c),
            Shape::Sphere { radius } => 4.0 * std::f64::consts::PI * radius * radius,
        }
    }

    fn sample_surface(&self, rng: &mut impl Rng) -> Point3 {
        let c = self.center;
        match self.shape {
            Shape::Cuboid { half } => {
                let faces = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
                let mut pick = rng.random::<f64>() * (faces[0] + faces[1] + faces[2]);
                let mut axis = 0;
                while axis < 2 && pick >= faces[axis] {
                    pick -= faces[axis];
                    axis += 1;
                }
                let mut p = [0.0; 3];
                for (a, v) in p.iter_mut().enumerate() {
                    *v = if a == axis {
                        if rng.random::<bool>() {
                            half[a]
                        } else {
                            -half[a]
                        }
                    } else {
                        rng.random_range(-half[a]..half[a])
                    };
                }
                [c[0] + p[0], c[1] + p[1], c[2] + p[2]]
            }
            Shape::Sphere { radius } => loop {
                let d: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
                let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                if n > 1e-12 {
                    break [c[0] + radius * d[0] / n, c[1] + radius * d[1] / n, c[2] + radius * d[2] / n];
                }
            },
        }
    }
}

/// One generated scene: the full labelled room plus two posed partial views.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    /// Every surface sample in world coordinates, with semantic and instance labels.
    pub world: PointCloud,
    /// Per-point offset to the point's instance centroid in `world`.
    pub world_offsets: OffsetField,
    /// Views in their own sensor frames; `poses[k]` maps view `k` to world.
    pub views: [PointCloud; 2],
    pub poses: [Pose; 2],
    /// Offsets to the view-local instance centroids.
    pub offsets: [OffsetField; 2],
    /// `(index in view 0, index in view 1)` for every world point seen by both views.
    pub correspondences: CorrespondenceSet,
    /// World index of every view point.
    pub sources: [Vec<usize>; 2],
}

impl SyntheticScene {
    /// View `k` transformed back into world coordinates.
    pub fn view_world(&self, k: usize) -> PointCloud {
        self.views[k].transform(&self.poses[k])
    }

    /// The two views in a shared frame with their ground-truth correspondences.
    pub fn scene_pair(&self) -> ScenePair {
        ScenePair {
            anchors: self.view_world(0),
            candidates: self.view_world(1),
            matches: self.correspondences.clone(),
        }
    }
}

fn centroid_offsets(positions: &[Point3], instances: &[u32]) -> Result<OffsetField> {
    let mut sums: BTreeMap<u32, ([f64; 3], usize)> = BTreeMap::new();
    for (p, &id) in positions.iter().zip(instances) {
        let e = sums.entry(id).or_insert(([0.0; 3], 0));
        for a in 0..3 {
            e.0[a] += p[a];
        }
        e.1 += 1;
    }
    let centroids: BTreeMap<u32, Point3> = sums
        .into_iter()
        .map(|(id, (s, n))| (id, [s[0] / n as f64, s[1] / n as f64, s[2] / n as f64]))
        .collect();
    OffsetField::new(
        positions
            .iter()
            .zip(instances)
            .map(|(p, id)| sub(&centroids[id], p))
            .collect(),
    )
}

fn place_objects(spec: &SceneSpec, rng: &mut impl Rng) -> Result<Vec<Object>> {
    let mut objects: Vec<Object> = Vec::with_capacity(spec.num_objects);
    for _ in 0..spec.num_objects {
        let class = rng.random_range(1..=spec.num_classes);
        let mut placed = false;
        for _ in 0..PLACEMENT_TRIES {
            let shape = if rng.random::<bool>() {
                let mut half = [0.0; 3];
                for h in &mut half {
                    *h = rng.random_range(MIN_OBJECT_SIZE..MAX_OBJECT_SIZE) / 2.0;
                }
                half[2] = half[2].min(spec.extent[2] / 2.0);
                Shape::Cuboid { half }
            } else {
                Shape::Sphere {
                    radius: rng.random_range(MIN_OBJECT_SIZE..MAX_OBJECT_SIZE) / 2.0,
                }
            };
            let height = match shape {
                Shape::Cuboid { half } => half[2],
                Shape::Sphere { radius } => radius,
            };
            let mut obj = Object {
                center: [0.0, 0.0, height],
                shape,
                class,
            };
            let r = obj.footprint_radius();
            if 2.0 * r >= spec.extent[0] || 2.0 * r >= spec.extent[1] || 2.0 * height > spec.extent[2] {
                continue;
            }
            obj.center[0] = rng.random_range(r..spec.extent[0] - r);
            obj.center[1] = rng.random_range(r..spec.extent[1] - r);
            let clear = objects.iter().all(|o| {
                let d = (o.center[0] - obj.center[0]).hypot(o.center[1] - obj.center[1]);
                d > o.footprint_radius() + r + OBJECT_GAP
            });
            if clear {
                objects.push(obj);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Config(format!(
                "{} objects do not fit in a {:?} room",
                spec.num_objects, spec.extent
            )));
        }
    }
    Ok(objects)
}

fn random_pose(rng: &mut impl Rng, extent: &[f64; 3]) -> Pose {
    let yaw = rng.random_range(0.0..std::f64::consts::TAU);
    Pose::from_yaw(yaw, [rng.random_range(0.0..extent[0]), rng.random_range(0.0..extent[1]), 0.0])
}

/// Samples a room and renders two partial views by half-space culling along x.
///
/// View 0 keeps `x < mid + w/2` and view 1 keeps `x >= mid − w/2`, where `w` is
/// `view_overlap` times the room's x extent.
pub fn generate_synthetic_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    if spec.num_objects == 0 {
        return Err(Error::Config("a synthetic scene needs at least one object".into()));
    }
    if spec.extent.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::Config(format!("degenerate room extent {:?}", spec.extent)));
    }
    if !(spec.density.is_finite() && spec.density > 0.0) {
        return Err(Error::Config(format!("sampling density must be positive, got {}", spec.density)));
    }
    if !(spec.noise.is_finite() && spec.noise >= 0.0) || !spec.view_overlap.is_finite() {
        return Err(Error::Config("noise and view overlap must be finite, noise non-negative".into()));
    }
    if spec.num_classes == 0 {
        return Err(Error::Config("a synthetic scene needs at least one object class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let objects = place_objects(spec, &mut rng)?;

    let mut positions = Vec::new();
    let mut semantic = Vec::new();
    let mut instance = Vec::new();
    if spec.with_floor {
        let n = (spec.extent[0] * spec.extent[1] * spec.density).round() as usize;
        for _ in 0..n {
            positions.push([
                rng.random_range(0.0..spec.extent[0]),
                rng.random_range(0.0..spec.extent[1]),
                0.0,
            ]);
            semantic.push(FLOOR_CLASS);
            instance.push(0);
        }
    }
    for (k, obj) in objects.iter().enumerate() {
        let n = ((obj.area() * spec.density).round() as usize).max(1);
        for _ in 0..n {
            positions.push(obj.sample_surface(&mut rng));
            semantic.push(obj.class);
            instance.push(k as u32 + 1);
        }
    }
    let world_offsets = centroid_offsets(&positions, &instance)?;
    let world = PointCloud::new(positions)?
        .with_semantic_labels(semantic)?
        .with_instance_labels(instance)?;

    let mid = spec.extent[0] / 2.0;
    let half_band = spec.view_overlap * spec.extent[0] / 2.0;
    let keep = |v: usize, p: &Point3| {
        spec.view_overlap >= 1.0 || if v == 0 { p[0] < mid + half_band } else { p[0] >= mid - half_band }
    };
    let jitter = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;

    let mut views = Vec::with_capacity(2);
    let mut poses = Vec::with_capacity(2);
    let mut offsets = Vec::with_capacity(2);
    let mut sources: Vec<Vec<usize>> = Vec::with_capacity(2);
    for v in 0..2 {
        let idx: Vec<usize> = (0..world.len()).filter(|&i| keep(v, &world.positions()[i])).collect();
        let mut view_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, v as u64, 7));
        let pose = if spec.random_poses {
            random_pose(&mut view_rng, &spec.extent)
        } else {
            Pose::identity()
        };
        let inv = pose.inverse();
        let seen = world.select(&idx);
        let local = seen.map_positions(|_, p| {
            let q = if spec.noise > 0.0 {
                [
                    p[0] + view_rng.sample(jitter),
                    p[1] + view_rng.sample(jitter),
                    p[2] + view_rng.sample(jitter),
                ]
            } else {
                *p
            };
            inv.apply(&q)
        })?;
        let inst = local.instance_labels().expect("world carries instance labels");
        offsets.push(centroid_offsets(local.positions(), inst)?);
        views.push(local);
        poses.push(pose);
        sources.push(idx);
    }

    let mut in_b = vec![usize::MAX; world.len()];
    for (j, &w) in sources[1].iter().enumerate() {
        in_b[w] = j;
    }
    let pairs: Vec<(usize, usize)> = sources[0]
        .iter()
        .enumerate()
        .filter(|&(_, &w)| in_b[w] != usize::MAX)
        .map(|(i, &w)| (i, in_b[w]))
        .collect();

    let [v0, v1]: [PointCloud; 2] = views.try_into().expect("two views");
    let [p0, p1]: [Pose; 2] = poses.try_into().expect("two poses");
    let [o0, o1]: [OffsetField; 2] = offsets.try_into().expect("two offset fields");
    let [s0, s1]: [Vec<usize>; 2] = sources.try_into().expect("two source lists");
    Ok(SyntheticScene {
        world,
        world_offsets,
        views: [v0, v1],
        poses: [p0, p1],
        offsets: [o0, o1],
        correspondences: CorrespondenceSet::new(pairs, DEFAULT_MATCH_RADIUS),
        sources: [s0, s1],
    })
}

/// Scene pairs in the shipped toy pre-training dataset.
pub const TOY_DATASET_PAIRS: usize = 10;

impl SceneSpec {
    /// Scene layout of the shipped toy pre-training dataset (about 1.7k points and 1.1k
    /// ground-truth matches per view pair).
    pub fn toy_dataset(seed: u64) -> Self {
        Self {
            density: 100.0,
            noise: 0.002,
            seed,
            ..Self::default()
        }
    }
}

/// `count` scene pairs from consecutive seeds starting at `spec.seed`.
pub fn synthetic_dataset(spec: &SceneSpec, count: usize) -> Result<Vec<ScenePair>> {
    (0..count)
        .map(|k| {
            let s = SceneSpec {
                seed: spec.seed + k as u64,
                ..spec.clone()
            };
            Ok(generate_synthetic_scene(&s)?.scene_pair())
        })
        .collect()
}

/// Stand-in for learned point features: each instance gets a random unit direction and
/// every point that direction plus isotropic Gaussian noise of the given scale.
pub fn instance_features(cloud: &PointCloud, dim: usize, noise: f64, seed: u64) -> Result<FeatureMatrix> {
    let inst = cloud
        .instance_labels()
        .ok_or_else(|| Error::Input("instance features need instance labels".into()))?;
    if dim == 0 {
        return Err(Error::Config("feature dimension must be positive".into()));
    }
    let mut dirs: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut values = Vec::with_capacity(cloud.len() * dim);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0, 0));
    for &id in inst {
        let dir = dirs.entry(id).or_insert_with(|| {
            let mut r = ChaCha8Rng::seed_from_u64(mix_seed(seed, id as u64 + 1, 1));
            loop {
                let v: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 1e-12 {
                    break v.into_iter().map(|x| x / n).collect();
                }
            }
        });
        values.extend(dir.iter().map(|d| d + noise * rng.sample::<f64, _>(StandardNormal)));
    }
    FeatureMatrix::new(cloud.len(), dim, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::add;
    use crate::mining::{compute_overlap, mine_pairs, DEFAULT_MIN_OVERLAP};

    fn small(seed: u64) -> SceneSpec {
        SceneSpec {
            num_objects: 4,
            density: 200.0,
            seed,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn identical_views_map_points_to_themselves() {
        let spec = SceneSpec {
            num_objects: 1,
            with_floor: false,
            view_overlap: 1.0,
            random_poses: false,
            ..small(3)
        };
        let s = generate_synthetic_scene(&spec).unwrap();
        let n = s.world.len();
        assert_eq!(s.views[0].positions(), s.views[1].positions());
        assert_eq!(s.correspondences.pairs, (0..n).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn disjoint_views_do_not_overlap() {
        let spec = SceneSpec {
            view_overlap: -0.1,
            ..small(5)
        };
        let s = generate_synthetic_scene(&spec).unwrap();
        assert!(s.correspondences.is_empty());
        let (ab, _) = compute_overlap(&s.views[0], &s.poses[0], &s.views[1], &s.poses[1], DEFAULT_MATCH_RADIUS).unwrap();
        assert_eq!(ab, 0.0);
        let frames = [(s.views[0].clone(), s.poses[0]), (s.views[1].clone(), s.poses[1])];
        assert!(mine_pairs(&frames, DEFAULT_MATCH_RADIUS, DEFAULT_MIN_OVERLAP).unwrap().is_empty());
    }

    #[test]
    fn offsets_land_on_centroids() {
        let s = generate_synthetic_scene(&SceneSpec { noise: 0.005, ..small(9) }).unwrap();
        for (cloud, offsets) in [(&s.world, &s.world_offsets), (&s.views[0], &s.offsets[0]), (&s.views[1], &s.offsets[1])] {
            let inst = cloud.instance_labels().unwrap();
            let mut sums: BTreeMap<u32, ([f64; 3], f64)> = BTreeMap::new();
            for (p, id) in cloud.positions().iter().zip(inst) {
                let e = sums.entry(*id).or_default();
                for a in 0..3 {
                    e.0[a] += p[a];
                }
                e.1 += 1.0;
            }
            for ((p, o), id) in cloud.positions().iter().zip(offsets.as_slice()).zip(inst) {
                let (s, n) = sums[id];
                let shifted = add(p, o);
                for a in 0..3 {
                    assert!((shifted[a] - s[a] / n).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn views_agree_in_world_frame_without_noise() {
        let s = generate_synthetic_scene(&small(2)).unwrap();
        let a = s.view_world(0);
        let b = s.view_world(1);
        assert!(!s.correspondences.is_empty());
        for &(i, j) in &s.correspondences.pairs {
            let d = crate::cloud::dist2(&a.positions()[i], &b.positions()[j]).sqrt();
            assert!(d < 1e-9);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate_synthetic_scene(&small(11)).unwrap();
        let b = generate_synthetic_scene(&small(11)).unwrap();
        assert_eq!(a.views[1].positions(), b.views[1].positions());
        let c = generate_synthetic_scene(&small(12)).unwrap();
        assert_ne!(a.world.positions(), c.world.positions());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_synthetic_scene(&SceneSpec { num_objects: 0, ..small(0) }).is_err());
        assert!(generate_synthetic_scene(&SceneSpec { extent: [0.0, 4.0, 2.0], ..small(0) }).is_err());
        assert!(generate_synthetic_scene(&SceneSpec { extent: [0.3, 0.3, 2.0], ..small(0) }).is_err());
        assert!(generate_synthetic_scene(&SceneSpec { density: 0.0, ..small(0) }).is_err());
    }

    #[test]
    fn instance_features_share_direction() {
        let s = generate_synthetic_scene(&small(4)).unwrap();
        let f = instance_features(&s.world, 8, 0.0, 1).unwrap();
        let inst = s.world.instance_labels().unwrap();
        let first = inst.iter().position(|&l| l == inst[inst.len() - 1]).unwrap();
        assert_eq!(f.row(first), f.row(inst.len() - 1));
        assert!((crate::features::l2(f.row(0)) - 1.0).abs() < 1e-12);
    }
}
