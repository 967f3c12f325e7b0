//! One-shot active point selection under a per-scene label budget.
//!
//! Three strategies: uniform random points, k-means over raw color+position, and k-means
//! over (pre-trained) features concatenated with position. The k-means strategies return,
//! for every cluster, the member point nearest to the centroid.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::IGNORE_LABEL;

pub const DEFAULT_KMEANS_ITERATIONS: usize = 50;
pub const BENCHMARK_POINT_BUDGETS: [usize; 4] = [20, 50, 100, 200];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelBudget {
    pub points_per_scene: usize,
}

impl LabelBudget {
    pub fn new(points_per_scene: usize) -> Result<Self> {
        if points_per_scene == 0 {
            return Err(Error::Config("label budget must be positive".into()));
        }
        if !BENCHMARK_POINT_BUDGETS.contains(&points_per_scene) {
            log::warn!("label budget {points_per_scene} is not one of the benchmark budgets {BENCHMARK_POINT_BUDGETS:?}");
        }
        Ok(Self { points_per_scene })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    KmeansRaw,
    KmeansFeatures,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::KmeansRaw => "kmeans_raw",
            Strategy::KmeansFeatures => "kmeans_features",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "kmeans_raw" => Ok(Strategy::KmeansRaw),
            "kmeans_features" => Ok(Strategy::KmeansFeatures),
            other => Err(Error::Config(format!("unknown selection strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionResult {
    pub selected_indices: Vec<usize>,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectOptions {
    pub iterations: usize,
    /// Multiplier on xyz (meters) before concatenation with colors or features.
    pub xyz_weight: f64,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_KMEANS_ITERATIONS,
            xyz_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// `k × dim`.
    pub centroids: FeatureMatrix,
    /// Cluster of every data row under the final centroids.
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned centroid after each assignment step
    /// (`iterations + 1` entries, the last for the final centroids).
    pub objective: Vec<f64>,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign(data: &FeatureMatrix, centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    (0..data.rows())
        .into_par_iter()
        .map(|i| {
            let x = data.row(i);
            let mut best = (0, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(x, centroid);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .collect()
}

/// Lloyd's algorithm with seeded uniform initialization from distinct data rows.
///
/// Empty clusters are re-seeded at the point farthest from its current centroid.
pub fn kmeans(data: &FeatureMatrix, k: usize, iterations: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k > data.rows() {
        return Err(Error::Config(format!("k = {k} exceeds the {} data points", data.rows())));
    }
    if iterations == 0 {
        return Err(Error::Config("k-means needs at least one iteration".into()));
    }
    let dim = data.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = index::sample(&mut rng, data.rows(), k)
        .into_iter()
        .map(|i| data.row(i).to_vec())
        .collect();
    let mut objective = Vec::with_capacity(iterations + 1);

    for _ in 0..iterations {
        let mut assigned = assign(data, &centroids);
        objective.push(assigned.iter().map(|a| a.1).sum());

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in assigned.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(data.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                centroids[c] = sums[c].iter().map(|s| s / n).collect();
            } else {
                let far = (0..assigned.len())
                    .max_by(|&a, &b| assigned[a].1.total_cmp(&assigned[b].1).then(b.cmp(&a)))
                    .unwrap();
                centroids[c] = data.row(far).to_vec();
                assigned[far].1 = 0.0;
            }
        }
    }
    let assigned = assign(data, &centroids);
    objective.push(assigned.iter().map(|a| a.1).sum());
    Ok(KMeans {
        centroids: FeatureMatrix::new(k, dim, centroids.concat())?,
        assignment: assigned.into_iter().map(|a| a.0).collect(),
        objective,
    })
}

/// For each cluster, the member nearest to its centroid (ties to the lower index). A cluster
/// left empty falls back to the nearest point not already chosen.
pub fn cluster_representatives(data: &FeatureMatrix, km: &KMeans) -> Vec<usize> {
    let k = km.centroids.rows();
    let mut best: Vec<Option<(usize, f64)>> = vec![None; k];
    for (i, &c) in km.assignment.iter().enumerate() {
        let d = sq_dist(data.row(i), km.centroids.row(c));
        if best[c].is_none_or(|(_, bd)| d < bd) {
            best[c] = Some((i, d));
        }
    }
    let mut taken: HashSet<usize> = best.iter().flatten().map(|b| b.0).collect();
    best.iter()
        .enumerate()
        .map(|(c, b)| match b {
            Some((i, _)) => *i,
            None => {
                let i = (0..data.rows())
                    .filter(|i| !taken.contains(i))
                    .min_by(|&a, &b| {
                        sq_dist(data.row(a), km.centroids.row(c))
                            .total_cmp(&sq_dist(data.row(b), km.centroids.row(c)))
                    })
                    .expect("k never exceeds the number of points");
                taken.insert(i);
                i
            }
        })
        .collect()
}

/// Rows clustered by the k-means strategies: `[rgb/255, w·xyz]` or
/// `[normalized features, w·xyz]`.
pub fn selection_data(
    scene: &PointCloud,
    features: Option<&FeatureMatrix>,
    strategy: Strategy,
    xyz_weight: f64,
) -> Result<FeatureMatrix> {
    let n = scene.len();
    let (prefix, pdim): (Box<dyn Fn(usize) -> Vec<f64>>, usize) = match strategy {
        Strategy::Random => return Err(Error::Input("random selection has no clustering data".into())),
        Strategy::KmeansRaw => match scene.colors() {
            Some(colors) => (
                Box::new(move |i| colors[i].iter().map(|&c| c as f64 / 255.0).collect()),
                3,
            ),
            None => (Box::new(|_| Vec::new()), 0),
        },
        Strategy::KmeansFeatures => {
            let f = features.ok_or_else(|| Error::Input("kmeans_features needs a feature matrix".into()))?;
            if f.rows() != n {
                return Err(Error::LengthMismatch {
                    what: "feature rows",
                    expected: n,
                    found: f.rows(),
                });
            }
            let f = f.normalized()?;
            let d = f.dim();
            (Box::new(move |i| f.row(i).to_vec()), d)
        }
    };
    let mut values = Vec::with_capacity(n * (pdim + 3));
    for (i, p) in scene.positions().iter().enumerate() {
        values.extend(prefix(i));
        values.extend(p.iter().map(|c| c * xyz_weight));
    }
    FeatureMatrix::new(n, pdim + 3, values)
}

pub fn select_points(
    scene: &PointCloud,
    features: Option<&FeatureMatrix>,
    budget: LabelBudget,
    strategy: Strategy,
    seed: u64,
    opts: &SelectOptions,
) -> Result<SelectionResult> {
    let n = scene.len();
    let k = budget.points_per_scene;
    if k >= n {
        return Ok(SelectionResult {
            selected_indices: (0..n).collect(),
            strategy,
        });
    }
    let selected_indices = match strategy {
        Strategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = index::sample(&mut rng, n, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => {
            let data = selection_data(scene, features, strategy, opts.xyz_weight)?;
            let km = kmeans(&data, k, opts.iterations, seed)?;
            cluster_representatives(&data, &km)
        }
    };
    Ok(SelectionResult {
        selected_indices,
        strategy,
    })
}

/// Fraction of the scene's distinct instances hit by at least one selected point.
pub fn object_coverage(scene: &PointCloud, selection: &SelectionResult) -> Result<f64> {
    let inst = scene
        .instance_labels()
        .ok_or_else(|| Error::Input("object coverage needs instance labels".into()))?;
    let all: HashSet<u32> = inst.iter().copied().collect();
    if all.is_empty() {
        return Err(Error::Input("scene has no instances".into()));
    }
    let mut hit = HashSet::new();
    for &i in &selection.selected_indices {
        let l = *inst
            .get(i)
            .ok_or_else(|| Error::Input(format!("selected index {i} out of range")))?;
        hit.insert(l);
    }
    Ok(hit.len() as f64 / all.len() as f64)
}

/// Ground-truth labels at the selected points, [`IGNORE_LABEL`] elsewhere.
pub fn expand_labels(scene: &PointCloud, selection: &SelectionResult) -> Result<Vec<u32>> {
    let gt = scene
        .semantic_labels()
        .ok_or_else(|| Error::Input("label expansion needs semantic labels".into()))?;
    let mut mask = vec![IGNORE_LABEL; scene.len()];
    for &i in &selection.selected_indices {
        if i >= gt.len() {
            return Err(Error::Input(format!("selected index {i} out of range")));
        }
        mask[i] = gt[i];
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn blobs(n_each: usize, sep: f64, seed: u64) -> (FeatureMatrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::new();
        let mut truth = Vec::new();
        for b in 0..2 {
            for _ in 0..n_each {
                for d in 0..3 {
                    let c = if d == 0 { b as f64 * sep } else { 0.0 };
                    values.push(c + rng.sample::<f64, _>(StandardNormal));
                }
                truth.push(b);
            }
        }
        (FeatureMatrix::new(2 * n_each, 3, values).unwrap(), truth)
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let (data, _) = blobs(50, 4.0, 1);
        let km = kmeans(&data, 1, 5, 0).unwrap();
        for d in 0..3 {
            let mean: f64 = (0..data.rows()).map(|i| data.row(i)[d]).sum::<f64>() / data.rows() as f64;
            assert!((km.centroids.row(0)[d] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn separated_blobs_split_exactly() {
        for seed in 0..10 {
            let (data, truth) = blobs(100, 10.0, seed);
            let km = kmeans(&data, 2, 50, seed).unwrap();
            let cross = (0..truth.len())
                .filter(|&i| (km.assignment[i] == km.assignment[0]) != (truth[i] == truth[0]))
                .count();
            assert_eq!(cross, 0, "seed {seed}");
        }
    }

    #[test]
    fn objective_never_increases() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..300 * 4).map(|_| rng.random()).collect();
            let data = FeatureMatrix::new(300, 4, vals).unwrap();
            let km = kmeans(&data, 12, 50, seed).unwrap();
            for w in km.objective.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{w:?}");
            }
        }
    }

    #[test]
    fn empty_clusters_are_reseeded() {
        // Many duplicates: several initial centroids coincide.
        let mut vals = vec![0.0; 20 * 2];
        vals.extend([5.0, 5.0, 6.0, 6.0]);
        let data = FeatureMatrix::new(22, 2, vals).unwrap();
        let km = kmeans(&data, 3, 10, 4).unwrap();
        let used: HashSet<usize> = km.assignment.iter().copied().collect();
        assert_eq!(used.len(), 3);
    }

    #[test]
    fn kmeans_argument_errors() {
        let (data, _) = blobs(2, 1.0, 0);
        assert!(kmeans(&data, 0, 1, 0).is_err());
        assert!(kmeans(&data, 5, 1, 0).is_err());
    }

    fn two_object_scene() -> (PointCloud, FeatureMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pts = Vec::new();
        let mut inst = Vec::new();
        let mut feats = Vec::new();
        for o in 0..2u32 {
            for _ in 0..200 {
                pts.push([o as f64 * 3.0 + rng.random::<f64>() * 0.3, rng.random::<f64>() * 0.3, 0.0]);
                inst.push(o);
                feats.extend(if o == 0 { [1.0, 0.0] } else { [0.0, 1.0] });
            }
        }
        let cloud = PointCloud::new(pts)
            .unwrap()
            .with_instance_labels(inst.clone())
            .unwrap()
            .with_semantic_labels(inst)
            .unwrap();
        (cloud, FeatureMatrix::new(400, 2, feats).unwrap())
    }

    #[test]
    fn feature_kmeans_picks_one_point_per_object() {
        let (scene, feats) = two_object_scene();
        let sel = select_points(&scene, Some(&feats), LabelBudget::new(2).unwrap(), Strategy::KmeansFeatures, 0, &SelectOptions::default()).unwrap();
        let inst = scene.instance_labels().unwrap();
        let hit: HashSet<u32> = sel.selected_indices.iter().map(|&i| inst[i]).collect();
        assert_eq!(hit.len(), 2);
        assert_eq!(object_coverage(&scene, &sel).unwrap(), 1.0);
    }

    #[test]
    fn budget_covering_scene_selects_everything() {
        let (scene, feats) = two_object_scene();
        for s in [Strategy::Random, Strategy::KmeansRaw, Strategy::KmeansFeatures] {
            let sel = select_points(&scene, Some(&feats), LabelBudget::new(400).unwrap(), s, 1, &SelectOptions::default()).unwrap();
            assert_eq!(sel.selected_indices, (0..400).collect::<Vec<_>>());
            assert!(expand_labels(&scene, &sel).unwrap().iter().all(|&l| l != IGNORE_LABEL));
        }
    }

    #[test]
    fn random_selection_is_seeded() {
        let (scene, _) = two_object_scene();
        let run = |seed| select_points(&scene, None, LabelBudget::new(20).unwrap(), Strategy::Random, seed, &SelectOptions::default()).unwrap();
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn representatives_are_nearest_members() {
        let (scene, feats) = two_object_scene();
        let data = selection_data(&scene, Some(&feats), Strategy::KmeansFeatures, 1.0).unwrap();
        let km = kmeans(&data, 7, 50, 9).unwrap();
        let reps = cluster_representatives(&data, &km);
        for (c, &r) in reps.iter().enumerate() {
            let dr = sq_dist(data.row(r), km.centroids.row(c));
            for i in 0..data.rows() {
                if km.assignment[i] == c {
                    assert!(sq_dist(data.row(i), km.centroids.row(c)) >= dr);
                }
            }
        }
    }

    #[test]
    fn coverage_examples_and_errors() {
        let inst: Vec<u32> = (0..10).flat_map(|i| [i; 5]).collect();
        let scene = PointCloud::new(vec![[0.0; 3]; 50]).unwrap().with_instance_labels(inst).unwrap();
        let all = SelectionResult { selected_indices: (0..10).map(|i| i * 5).collect(), strategy: Strategy::Random };
        assert_eq!(object_coverage(&scene, &all).unwrap(), 1.0);
        let one = SelectionResult { selected_indices: vec![0, 1, 2], strategy: Strategy::Random };
        assert_eq!(object_coverage(&scene, &one).unwrap(), 0.1);
        let bare = PointCloud::new(vec![[0.0; 3]]).unwrap();
        assert!(object_coverage(&bare, &one).is_err());
        assert!(object_coverage(&PointCloud::default().with_instance_labels(vec![]).unwrap(), &one).is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [Strategy::Random, Strategy::KmeansRaw, Strategy::KmeansFeatures] {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert!("kmeans".parse::<Strategy>().is_err());
    }
}
