use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::mix_seed;

pub const LA_POINT_BUDGETS: [usize; 4] = [20, 50, 100, 200];
pub const LA_BOX_BUDGETS: [usize; 4] = [1, 2, 4, 7];
pub const LR_SEGMENTATION_PERCENTAGES: [usize; 4] = [1, 5, 10, 20];
pub const LR_DETECTION_PERCENTAGES: [usize; 4] = [10, 20, 40, 80];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkMode {
    /// Limited annotations: labelled points per scene.
    LaPoints,
    /// Limited annotations: labelled boxes per scene.
    LaBoxes,
    /// Limited reconstructions: percentage of training scenes.
    Lr,
}

impl fmt::Display for BenchmarkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchmarkMode::LaPoints => "la-points",
            BenchmarkMode::LaBoxes => "la-boxes",
            BenchmarkMode::Lr => "lr",
        })
    }
}

impl FromStr for BenchmarkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "la-points" => Ok(BenchmarkMode::LaPoints),
            "la-boxes" => Ok(BenchmarkMode::LaBoxes),
            "lr" => Ok(BenchmarkMode::Lr),
            other => Err(Error::Config(format!("unknown benchmark mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub mode: BenchmarkMode,
    /// Points or boxes per scene, or a percentage of scenes for [`BenchmarkMode::Lr`].
    pub budget: usize,
    /// One replicate per seed; reported values are means over replicates.
    pub seeds: Vec<u64>,
}

impl BenchmarkConfig {
    /// The canonical configurations of every mode, each with the given seeds.
    pub fn canonical(seeds: &[u64]) -> Vec<Self> {
        let mk = |mode, budgets: &[usize]| {
            budgets
                .iter()
                .map(|&budget| BenchmarkConfig {
                    mode,
                    budget,
                    seeds: seeds.to_vec(),
                })
                .collect::<Vec<_>>()
        };
        let mut all = mk(BenchmarkMode::LaPoints, &LA_POINT_BUDGETS);
        all.extend(mk(BenchmarkMode::LaBoxes, &LA_BOX_BUDGETS));
        all.extend(mk(BenchmarkMode::Lr, &LR_SEGMENTATION_PERCENTAGES));
        all.extend(mk(BenchmarkMode::Lr, &LR_DETECTION_PERCENTAGES));
        all
    }

    pub fn is_canonical(&self) -> bool {
        match self.mode {
            BenchmarkMode::LaPoints => LA_POINT_BUDGETS.contains(&self.budget),
            BenchmarkMode::LaBoxes => LA_BOX_BUDGETS.contains(&self.budget),
            BenchmarkMode::Lr => {
                LR_SEGMENTATION_PERCENTAGES.contains(&self.budget) || LR_DETECTION_PERCENTAGES.contains(&self.budget)
            }
        }
    }

    /// Rejects unusable values and warns about ad-hoc ones.
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("benchmark budget must be positive".into()));
        }
        if self.mode == BenchmarkMode::Lr && self.budget > 100 {
            return Err(Error::Config(format!("scene percentage {} exceeds 100", self.budget)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("benchmark needs at least one seed".into()));
        }
        if !self.is_canonical() {
            log::warn!("ad-hoc benchmark budget {} for mode {}", self.budget, self.mode);
        }
        Ok(())
    }
}

/// Seeded uniform subset of `round(percentage/100 · |scenes|)` scenes, in input order.
pub fn subset_scenes<T: Clone>(scene_ids: &[T], percentage: f64, seed: u64) -> Result<Vec<T>> {
    if scene_ids.is_empty() {
        return Err(Error::Input("no scenes to subset".into()));
    }
    if !(percentage > 0.0 && percentage <= 100.0) {
        return Err(Error::Config(format!("percentage must lie in (0, 100], got {percentage}")));
    }
    let n = (percentage / 100.0 * scene_ids.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, scene_ids.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| scene_ids[i].clone()).collect())
}

/// Axis-aligned 3D box annotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub class: u32,
}

impl Box3 {
    pub fn volume(&self) -> f64 {
        self.size.iter().product()
    }

    /// Intersection over union of two axis-aligned boxes.
    pub fn iou(&self, other: &Box3) -> f64 {
        let mut inter = 1.0;
        for a in 0..3 {
            let lo = (self.center[a] - self.size[a] / 2.0).max(other.center[a] - other.size[a] / 2.0);
            let hi = (self.center[a] + self.size[a] / 2.0).min(other.center[a] + other.size[a] / 2.0);
            inter *= (hi - lo).max(0.0);
        }
        let union = self.volume() + other.volume() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

/// Seeded sample of `min(k, available)` boxes per scene, in annotation order.
pub fn subset_boxes(scenes: &[Vec<Box3>], k: usize, seed: u64) -> Result<Vec<Vec<Box3>>> {
    if k == 0 {
        return Err(Error::Config("box budget must be at least 1".into()));
    }
    Ok(scenes
        .iter()
        .enumerate()
        .map(|(s, boxes)| {
            if k >= boxes.len() {
                return boxes.clone();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, s as u64, 0));
            let mut picked = index::sample(&mut rng, boxes.len(), k).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| boxes[i]).collect()
        })
        .collect())
}
