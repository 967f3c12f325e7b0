//! Toy pre-training: SGD on free per-point embedding tables, one table per frame of
//! every scene pair.

use std::collections::HashSet;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::loss::loss_and_gradient;
use super::rule::{GeometricRule, PartitionRule, PartitionTable};
use super::{LossConfig, OptimizerConfig};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::features::{dot, FeatureMatrix};
use crate::mining::{sample_matches, CorrespondenceSet};
use crate::parallel::mix_seed;

/// Anchor/key tables larger than this are not precomputed.
const MAX_TABLE_ENTRIES: usize = 1 << 24;

/// Two frames of one scene in a shared (world) frame, with their correspondences.
#[derive(Debug, Clone)]
pub struct ScenePair {
    pub anchors: PointCloud,
    pub candidates: PointCloud,
    pub matches: CorrespondenceSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub total: f64,
    pub per_partition: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Row-normalized embeddings `(frame 1, frame 2)` per scene pair.
    pub embeddings: Vec<(FeatureMatrix, FeatureMatrix)>,
    pub curve: Vec<CurvePoint>,
}

fn init_table(rows: usize, dim: usize, seed: u64) -> Result<FeatureMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..rows * dim).map(|_| rng.sample(StandardNormal)).collect();
    FeatureMatrix::new(rows, dim, values)?.normalized()
}

enum Rule<'a> {
    Table(PartitionTable),
    Geometric(GeometricRule<'a>),
}

impl Rule<'_> {
    fn as_dyn(&self) -> &dyn PartitionRule {
        match self {
            Rule::Table(t) => t,
            Rule::Geometric(g) => g,
        }
    }
}

fn rule_for<'a>(pair: &'a ScenePair, cfg: &'a LossConfig) -> Result<Rule<'a>> {
    let anchors: Vec<usize> = pair.matches.pairs.iter().map(|p| p.0).collect();
    let keys: Vec<usize> = pair.matches.pairs.iter().map(|p| p.1).collect();
    let distinct_keys = keys.iter().collect::<HashSet<_>>().len();
    let geometric = GeometricRule::new(&cfg.partition, pair.anchors.positions(), pair.candidates.positions())?;
    if let (Some(&mi), Some(&mj)) = (anchors.iter().max(), keys.iter().max()) {
        geometric.check_bounds(mi, mj)?;
    }
    if anchors.len() * distinct_keys <= MAX_TABLE_ENTRIES {
        Ok(Rule::Table(PartitionTable::build(
            &cfg.partition,
            pair.anchors.positions(),
            pair.candidates.positions(),
            &anchors,
            &keys,
        )?))
    } else {
        Ok(Rule::Geometric(geometric))
    }
}

/// SGD on the partitioned loss.
///
/// Embeddings start as seeded unit-Gaussian rows, normalized. Each step takes the next
/// `batch_size` pairs (cyclically), samples `num_sampled_matches` correspondences per pair,
/// and applies `f ← f − lr·∂L/∂f` followed by row re-normalization. The loss curve records
/// the mean report over the batch.
pub fn train_embeddings(pairs: &[ScenePair], cfg: &LossConfig, opt: &OptimizerConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    opt.validate()?;
    if pairs.is_empty() {
        return Err(Error::Input("training needs at least one scene pair".into()));
    }
    let mut embeddings = pairs
        .iter()
        .enumerate()
        .map(|(k, p)| {
            Ok((
                init_table(p.anchors.len(), opt.dim, mix_seed(opt.seed, k as u64, 1))?,
                init_table(p.candidates.len(), opt.dim, mix_seed(opt.seed, k as u64, 2))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let rules = pairs.iter().map(|p| rule_for(p, cfg)).collect::<Result<Vec<_>>>()?;
    let num_p = cfg.partition.num_partitions();
    let batch = opt.batch_size.min(pairs.len());
    let mut curve = Vec::with_capacity(opt.steps);

    for step in 0..opt.steps {
        let lr = opt.lr_at(step);
        let mut total = 0.0;
        let mut per_partition = vec![0.0; num_p];
        for b in 0..batch {
            let k = (step * batch + b) % pairs.len();
            let seed = mix_seed(opt.seed, step as u64, k as u64);
            let sampled = sample_matches(&pairs[k].matches, cfg.num_sampled_matches, seed)?;
            let (e1, e2) = &mut embeddings[k];
            let (report, g1, g2) = loss_and_gradient(e1, e2, &sampled, rules[k].as_dyn(), cfg)?;
            if !report.total.is_finite() {
                return Err(Error::Diverged {
                    step,
                    loss: report.total,
                });
            }
            total += report.total;
            for (acc, pl) in per_partition.iter_mut().zip(&report.per_partition) {
                *acc += pl.loss;
            }
            sgd_step(e1, &g1, lr)?;
            sgd_step(e2, &g2, lr)?;
        }
        curve.push(CurvePoint {
            step,
            total: total / batch as f64,
            per_partition: per_partition.into_iter().map(|v| v / batch as f64).collect(),
        });
    }
    Ok(TrainOutput { embeddings, curve })
}

fn sgd_step(table: &mut FeatureMatrix, grad: &FeatureMatrix, lr: f64) -> Result<()> {
    for (v, g) in table.values_mut().iter_mut().zip(grad.values()) {
        *v -= lr * g;
    }
    *table = table.normalized()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margin {
    pub matched: f64,
    pub random: f64,
}

impl Margin {
    pub fn margin(&self) -> f64 {
        self.matched - self.random
    }
}

/// Mean cosine similarity of matched pairs versus an equal number of seeded random
/// non-matched pairs.
pub fn separation_margin(
    f1: &FeatureMatrix,
    f2: &FeatureMatrix,
    matches: &CorrespondenceSet,
    seed: u64,
) -> Result<Margin> {
    if matches.is_empty() {
        return Err(Error::Input("margin needs at least one match".into()));
    }
    let u = f1.normalized()?;
    let v = f2.normalized()?;
    let matched_set: HashSet<(usize, usize)> = matches.pairs.iter().copied().collect();
    if matched_set.len() >= f1.rows() * f2.rows() {
        return Err(Error::Input("every pair is matched; no random pairs exist".into()));
    }
    let mut matched = 0.0;
    for &(i, j) in &matches.pairs {
        matched += dot(u.row(i), v.row(j));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random = 0.0;
    let mut drawn = 0;
    while drawn < matches.len() {
        let i = rng.random_range(0..f1.rows());
        let k = rng.random_range(0..f2.rows());
        if matched_set.contains(&(i, k)) {
            continue;
        }
        random += dot(u.row(i), v.row(k));
        drawn += 1;
    }
    let n = matches.len() as f64;
    Ok(Margin {
        matched: matched / n,
        random: random / n,
    })
}

/// `step,total_loss,per_partition_0,...`
pub fn write_curve_csv(mut w: impl Write, curve: &[CurvePoint]) -> Result<()> {
    let num_p = curve.first().map_or(0, |c| c.per_partition.len());
    write!(w, "step,total_loss")?;
    for p in 0..num_p {
        write!(w, ",per_partition_{p}")?;
    }
    writeln!(w)?;
    for c in curve {
        write!(w, "{},{}", c.step, c.total)?;
        for v in &c.per_partition {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::PartitionConfig;

    fn two_match_pair() -> ScenePair {
        let pts = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let cloud = PointCloud::new(pts).unwrap();
        ScenePair {
            anchors: cloud.clone(),
            candidates: cloud,
            matches: CorrespondenceSet::new(vec![(0, 0), (1, 1)], 0.025),
        }
    }

    #[test]
    fn loss_decreases_on_two_opposite_matches() {
        let cfg = LossConfig {
            partition: PartitionConfig::sectors(2).unwrap(),
            ..LossConfig::default()
        };
        let opt = OptimizerConfig {
            steps: 500,
            dim: 4,
            seed: 3,
            ..OptimizerConfig::default()
        };
        let out = train_embeddings(&[two_match_pair()], &cfg, &opt).unwrap();
        let first: f64 = out.curve[..10].iter().map(|c| c.total).sum::<f64>() / 10.0;
        let last: f64 = out.curve[490..].iter().map(|c| c.total).sum::<f64>() / 10.0;
        assert!(last < first, "{first} -> {last}");
        for (e1, e2) in &out.embeddings {
            assert!(e1.is_normalized() && e2.is_normalized());
        }
    }

    #[test]
    fn seeded_runs_are_bitwise_identical() {
        let cfg = LossConfig::default();
        let opt = OptimizerConfig {
            steps: 50,
            dim: 8,
            ..OptimizerConfig::default()
        };
        let a = train_embeddings(&[two_match_pair()], &cfg, &opt).unwrap();
        let b = train_embeddings(&[two_match_pair()], &cfg, &opt).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.embeddings[0].0, b.embeddings[0].0);
    }

    #[test]
    fn rejects_bad_optimizer_settings() {
        let opt = OptimizerConfig {
            dim: 1,
            ..OptimizerConfig::default()
        };
        assert!(train_embeddings(&[two_match_pair()], &LossConfig::default(), &opt).is_err());
        assert!(train_embeddings(&[], &LossConfig::default(), &OptimizerConfig::default()).is_err());
    }

    #[test]
    fn lr_schedule_steps_down() {
        let opt = OptimizerConfig::default();
        assert_eq!(opt.lr_at(999), 0.1);
        assert_eq!(opt.lr_at(1000), 0.1 * 0.99);
    }

    #[test]
    fn curve_csv_header() {
        let mut buf = Vec::new();
        let curve = vec![CurvePoint {
            step: 0,
            total: 1.5,
            per_partition: vec![1.0, 2.0],
        }];
        write_curve_csv(&mut buf, &curve).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,total_loss,per_partition_0,per_partition_1\n0,1.5,1,2\n"
        );
    }
}
