//! Training pair generation: frame subsampling, cross-frame overlap and correspondences.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cloud::{dist2, voxel_downsample, PointCloud, Pose};
use crate::error::{Error, Result};
use crate::index::SpatialIndex;

pub const DEFAULT_STRIDE: usize = 25;
pub const DEFAULT_MATCH_RADIUS: f64 = 0.025;
pub const DEFAULT_MIN_OVERLAP: f64 = 0.30;
pub const DEFAULT_VOXEL_SIZE: f64 = 0.02;
pub const DEFAULT_SAMPLED_MATCHES: usize = 4096;

/// Matched `(i, j)` index pairs between frame A and frame B.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(usize, usize)>,
    pub match_radius: f64,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<(usize, usize)>, match_radius: f64) -> Self {
        Self {
            pairs,
            match_radius,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub frame_a: usize,
    pub frame_b: usize,
    /// `max(overlap_ab, overlap_ba)`, the value compared against the keep threshold.
    pub overlap_ratio: f64,
    /// Fraction of A points with a B point within the match radius.
    pub overlap_ab: f64,
    pub overlap_ba: f64,
}

/// Every `stride`-th element, starting with the first.
pub fn subsample_frames<T: Clone>(frame_ids: &[T], stride: usize) -> Result<Vec<T>> {
    if stride == 0 {
        return Err(Error::Config("frame stride must be at least 1".into()));
    }
    Ok(frame_ids.iter().step_by(stride).cloned().collect())
}

fn check_radius(radius: f64) -> Result<()> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("match radius must be positive, got {radius}")));
    }
    Ok(())
}

/// Nearest-neighbour matches of `a` into an index over `b` (both in world coordinates).
fn match_into(a: &PointCloud, b: &SpatialIndex, radius: f64) -> Vec<(usize, usize)> {
    let r2 = radius * radius;
    a.positions()
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| match b.nearest(p) {
            Some((j, d)) if d <= r2 => Some((i, j)),
            _ => None,
        })
        .collect()
}

fn ratio(matched: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        matched as f64 / total as f64
    }
}

/// Overlap of A onto B after moving both into world coordinates.
///
/// Each A point is matched to its nearest B point if that lies within `radius`; the ratio
/// is the fraction of A points matched.
pub fn compute_overlap(
    a: &PointCloud,
    pose_a: &Pose,
    b: &PointCloud,
    pose_b: &Pose,
    radius: f64,
) -> Result<(f64, CorrespondenceSet)> {
    check_radius(radius)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Input("overlap needs two non-empty clouds".into()));
    }
    let wa = a.transform(pose_a);
    let wb = b.transform(pose_b);
    let pairs = match_into(&wa, &SpatialIndex::new(wb.positions()), radius);
    Ok((ratio(pairs.len(), a.len()), CorrespondenceSet::new(pairs, radius)))
}

/// Evaluates every unordered frame pair and keeps those whose overlap, taken in the
/// better of the two directions, reaches `min_overlap`. Correspondences are stored in the
/// A→B direction with A the lower frame index. Output is sorted by `(frame_a, frame_b)`.
pub fn mine_pairs(
    frames: &[(PointCloud, Pose)],
    radius: f64,
    min_overlap: f64,
) -> Result<Vec<(FramePair, CorrespondenceSet)>> {
    check_radius(radius)?;
    if !(0.0..=1.0).contains(&min_overlap) {
        return Err(Error::Config(format!("min overlap must lie in [0, 1], got {min_overlap}")));
    }
    let world: Vec<PointCloud> = frames.iter().map(|(c, p)| c.transform(p)).collect();
    let indexes: Vec<SpatialIndex> = world.iter().map(|c| SpatialIndex::new(c.positions())).collect();
    let candidates: Vec<(usize, usize)> = (0..frames.len())
        .flat_map(|a| (a + 1..frames.len()).map(move |b| (a, b)))
        .collect();

    let kept = candidates
        .par_iter()
        .filter_map(|&(a, b)| {
            if world[a].is_empty() || world[b].is_empty() {
                return None;
            }
            let ab = match_into(&world[a], &indexes[b], radius);
            let overlap_ab = ratio(ab.len(), world[a].len());
            let overlap_ba = if overlap_ab >= min_overlap {
                // The keep decision is already made; skip the reverse pass.
                ratio(match_into(&world[b], &indexes[a], radius).len(), world[b].len())
            } else {
                let ba = ratio(match_into(&world[b], &indexes[a], radius).len(), world[b].len());
                if ba < min_overlap {
                    return None;
                }
                ba
            };
            let pair = FramePair {
                frame_a: a,
                frame_b: b,
                overlap_ratio: overlap_ab.max(overlap_ba),
                overlap_ab,
                overlap_ba,
            };
            Some((pair, CorrespondenceSet::new(ab, radius)))
        })
        .collect();
    Ok(kept)
}

/// Voxel-downsamples every frame before mining.
pub fn prepare_frames(frames: &[(PointCloud, Pose)], voxel_size: f64) -> Result<Vec<(PointCloud, Pose)>> {
    frames
        .iter()
        .map(|(c, p)| Ok((voxel_downsample(c, voxel_size)?, *p)))
        .collect()
}

/// Uniform sample of `min(n, |set|)` pairs without replacement, kept in their original order.
pub fn sample_matches(set: &CorrespondenceSet, n: usize, seed: u64) -> Result<CorrespondenceSet> {
    if n == 0 {
        return Err(Error::Config("number of sampled matches must be at least 1".into()));
    }
    if n >= set.len() {
        return Ok(set.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, set.len(), n).into_vec();
    picked.sort_unstable();
    Ok(CorrespondenceSet::new(
        picked.into_iter().map(|k| set.pairs[k]).collect(),
        set.match_radius,
    ))
}

/// Checks the radius bound and uniqueness of every pair against world-space positions.
pub fn verify_correspondences(
    a_world: &PointCloud,
    b_world: &PointCloud,
    set: &CorrespondenceSet,
) -> Result<()> {
    let r2 = set.match_radius * set.match_radius;
    let mut seen = std::collections::HashSet::new();
    for &(i, j) in &set.pairs {
        if i >= a_world.len() || j >= b_world.len() {
            return Err(Error::Input(format!("pair ({i}, {j}) out of range")));
        }
        if dist2(&a_world.positions()[i], &b_world.positions()[j]) > r2 {
            return Err(Error::Input(format!("pair ({i}, {j}) exceeds the match radius")));
        }
        if !seen.insert((i, j)) {
            return Err(Error::Input(format!("duplicate pair ({i}, {j})")));
        }
    }
    Ok(())
}
