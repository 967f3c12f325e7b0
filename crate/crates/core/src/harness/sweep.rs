//! Partitions × sampled-points grid over the toy trainer, scored by separation margin.

use std::io::Write;

use rayon::prelude::*;

use crate::context::PartitionConfig;
use crate::contrastive::{separation_margin, train_embeddings, LossConfig, OptimizerConfig, ScenePair};
use crate::error::{Error, Result};
use crate::parallel::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub points: usize,
    pub partitions: usize,
    /// Mean of `matched − random` over the dataset's pairs.
    pub margin: f64,
    pub matched: f64,
    pub random: f64,
}

/// Mean matched and random similarity over all pairs after training.
pub fn dataset_margin(
    pairs: &[ScenePair],
    embeddings: &[(crate::features::FeatureMatrix, crate::features::FeatureMatrix)],
    seed: u64,
) -> Result<(f64, f64)> {
    let mut matched = 0.0;
    let mut random = 0.0;
    for (k, (pair, (f1, f2))) in pairs.iter().zip(embeddings).enumerate() {
        let m = separation_margin(f1, f2, &pair.matches, mix_seed(seed, k as u64, 3))?;
        matched += m.matched;
        random += m.random;
    }
    let n = pairs.len() as f64;
    Ok((matched / n, random / n))
}

/// Trains one model per `(points, partitions)` cell, everything else taken from `loss`
/// and `opt`. Cells come back in row-major order (points outer).
pub fn sweep_partitions(
    points_grid: &[usize],
    partitions_grid: &[usize],
    dataset: &[ScenePair],
    loss: &LossConfig,
    opt: &OptimizerConfig,
) -> Result<Vec<SweepCell>> {
    if points_grid.is_empty() || partitions_grid.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    let cells: Vec<(usize, usize)> = points_grid
        .iter()
        .flat_map(|&n| partitions_grid.iter().map(move |&p| (n, p)))
        .collect();
    cells
        .par_iter()
        .map(|&(points, partitions)| {
            let cfg = LossConfig {
                partition: PartitionConfig::with_partitions(partitions)?,
                num_sampled_matches: points,
                ..loss.clone()
            };
            let out = train_embeddings(dataset, &cfg, opt)?;
            let (matched, random) = dataset_margin(dataset, &out.embeddings, opt.seed)?;
            Ok(SweepCell {
                points,
                partitions,
                margin: matched - random,
                matched,
                random,
            })
        })
        .collect()
}

/// `points,partitions,margin,matched_similarity,random_similarity`
pub fn write_sweep_csv(mut w: impl Write, cells: &[SweepCell]) -> Result<()> {
    writeln!(w, "points,partitions,margin,matched_similarity,random_similarity")?;
    for c in cells {
        writeln!(w, "{},{},{},{},{}", c.points, c.partitions, c.margin, c.matched, c.random)?;
    }
    w.flush()?;
    Ok(())
}
