use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rule::{GeometricRule, PartitionRule};
use super::{LossConfig, LossReport};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::features::{dot, dot_rows, FeatureMatrix};
use crate::mining::CorrespondenceSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionLoss {
    pub partition: usize,
    pub loss: f64,
    /// Anchors with at least one negative in this partition.
    pub active_anchors: usize,
}

/// Features after optional row normalization, plus the norms needed for the chain rule.
struct Prepared {
    f1: FeatureMatrix,
    f2: FeatureMatrix,
    norms1: Vec<f64>,
    norms2: Vec<f64>,
}

fn prepare(f1: &FeatureMatrix, f2: &FeatureMatrix, matches: &CorrespondenceSet, cfg: &LossConfig) -> Result<Prepared> {
    cfg.validate()?;
    if f1.dim() != f2.dim() {
        return Err(Error::LengthMismatch {
            what: "feature dimension",
            expected: f1.dim(),
            found: f2.dim(),
        });
    }
    if let Some(&(i, j)) = matches
        .pairs
        .iter()
        .find(|&&(i, j)| i >= f1.rows() || j >= f2.rows())
    {
        return Err(Error::Input(format!(
            "match ({i}, {j}) outside feature rows ({}, {})",
            f1.rows(),
            f2.rows()
        )));
    }
    if cfg.normalize {
        Ok(Prepared {
            norms1: f1.row_norms(),
            norms2: f2.row_norms(),
            f1: if f1.is_normalized() { f1.clone() } else { f1.normalized()? },
            f2: if f2.is_normalized() { f2.clone() } else { f2.normalized()? },
        })
    } else {
        Ok(Prepared {
            f1: f1.clone(),
            f2: f2.clone(),
            norms1: Vec::new(),
            norms2: Vec::new(),
        })
    }
}

/// Distinct frame-2 indices appearing in the matches (ascending) and, per match, the
/// position of its positive key in that list.
fn key_set(matches: &CorrespondenceSet) -> (Vec<usize>, Vec<usize>) {
    let mut keys: Vec<usize> = matches.pairs.iter().map(|&(_, j)| j).collect();
    keys.sort_unstable();
    keys.dedup();
    let pos = matches
        .pairs
        .iter()
        .map(|&(_, j)| keys.binary_search(&j).unwrap())
        .collect();
    (keys, pos)
}

struct AnchorTerms {
    /// Loss term of this match in every partition.
    terms: Vec<f64>,
    /// Negative count per partition.
    negatives: Vec<usize>,
    /// d(term sum over partitions)/d(logit) for each key, when requested.
    coeffs: Option<Vec<f64>>,
}

fn anchor_terms(
    prep: &Prepared,
    rule: &dyn PartitionRule,
    keys: &[usize],
    key_rows: &[f64],
    anchor: usize,
    pos: usize,
    inv_tau: f64,
    want_coeffs: bool,
) -> AnchorTerms {
    let num_p = rule.num_partitions();
    let dim = prep.f1.dim();
    let mut logits = vec![0.0; keys.len()];
    dot_rows(prep.f1.row(anchor), key_rows, dim, &mut logits);
    let mut mx = f64::NEG_INFINITY;
    for l in logits.iter_mut() {
        *l *= inv_tau;
        mx = mx.max(*l);
    }

    let lp = logits[pos];
    let e_pos = (lp - mx).exp();
    let mut sums = vec![0.0; num_p];
    let mut negatives = vec![0usize; num_p];
    let mut part = if want_coeffs { vec![0usize; keys.len()] } else { Vec::new() };
    // Reuse the logit buffer for the exponentials.
    let mut exps = logits;
    for (k, &key) in keys.iter().enumerate() {
        if k == pos {
            exps[k] = 0.0;
            continue;
        }
        let p = rule.partition(anchor, key);
        let e = (exps[k] - mx).exp();
        sums[p] += e;
        negatives[p] += 1;
        exps[k] = e;
        if want_coeffs {
            part[k] = p;
        }
    }
    // The positive key sits in every partition's denominator.
    let terms: Vec<f64> = sums.iter().map(|s| -lp + mx + (e_pos + s).ln()).collect();

    let coeffs = want_coeffs.then(|| {
        let z: Vec<f64> = sums.iter().map(|s| e_pos + s).collect();
        let mut c = exps;
        for k in 0..keys.len() {
            if k != pos {
                c[k] /= z[part[k]];
            }
        }
        c[pos] = z.iter().map(|zp| e_pos / zp - 1.0).sum();
        c
    });
    AnchorTerms {
        terms,
        negatives,
        coeffs,
    }
}

fn gather_rows(f: &FeatureMatrix, ids: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(ids.len() * f.dim());
    for &k in ids {
        out.extend_from_slice(f.row(k));
    }
    out
}

struct Evaluation {
    report: LossReport,
    grads: Option<(FeatureMatrix, FeatureMatrix)>,
}

fn evaluate(
    f1: &FeatureMatrix,
    f2: &FeatureMatrix,
    matches: &CorrespondenceSet,
    rule: &dyn PartitionRule,
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<Evaluation> {
    let prep = prepare(f1, f2, matches, cfg)?;
    let num_p = rule.num_partitions();
    let m = matches.len();
    if m == 0 {
        return Ok(Evaluation {
            report: LossReport {
                per_partition: (0..num_p)
                    .map(|p| PartitionLoss {
                        partition: p,
                        loss: 0.0,
                        active_anchors: 0,
                    })
                    .collect(),
                total: 0.0,
            },
            grads: want_grad.then(|| (FeatureMatrix::zeros(f1.rows(), f1.dim()), FeatureMatrix::zeros(f2.rows(), f2.dim()))),
        });
    }
    let inv_tau = 1.0 / cfg.temperature;
    let (keys, pos) = key_set(matches);
    let key_rows = gather_rows(&prep.f2, &keys);

    // Per-anchor work is independent; sums below run in match order for reproducibility.
    let per_anchor: Vec<AnchorTerms> = (0..m)
        .into_par_iter()
        .map(|a| anchor_terms(&prep, rule, &keys, &key_rows, matches.pairs[a].0, pos[a], inv_tau, want_grad))
        .collect();

    let per_partition: Vec<PartitionLoss> = (0..num_p)
        .map(|p| {
            let mut sum = 0.0;
            let mut active = 0;
            for t in &per_anchor {
                sum += t.terms[p];
                active += (t.negatives[p] > 0) as usize;
            }
            PartitionLoss {
                partition: p,
                loss: sum / m as f64,
                active_anchors: active,
            }
        })
        .collect();
    let mut total = 0.0;
    for pl in &per_partition {
        total += pl.loss;
    }
    total /= num_p as f64;
    let report = LossReport { per_partition, total };

    let grads = want_grad.then(|| {
        let dim = f1.dim();
        let scale = inv_tau / (m as f64 * num_p as f64);
        let coeffs: Vec<&[f64]> = per_anchor.iter().map(|t| t.coeffs.as_deref().unwrap()).collect();

        // d/du_i = scale · Σ_k c_k v_k
        let mut g1 = vec![0.0; f1.rows() * dim];
        for (a, c) in coeffs.iter().enumerate() {
            let i = matches.pairs[a].0;
            let row = &mut g1[i * dim..(i + 1) * dim];
            for (&ck, v) in c.iter().zip(key_rows.chunks_exact(dim)) {
                let w = ck * scale;
                for (g, x) in row.iter_mut().zip(v) {
                    *g += w * x;
                }
            }
        }
        // d/dv_k = scale · Σ_a c_{a,k} u_{i_a}, accumulated in anchor order per key.
        const KEY_BLOCK: usize = 256;
        let key_grads: Vec<Vec<f64>> = (0..keys.len().div_ceil(KEY_BLOCK))
            .into_par_iter()
            .map(|b| {
                let lo = b * KEY_BLOCK;
                let hi = (lo + KEY_BLOCK).min(keys.len());
                let mut g = vec![0.0; (hi - lo) * dim];
                for (a, c) in coeffs.iter().enumerate() {
                    let u = prep.f1.row(matches.pairs[a].0);
                    for (&ck, gk) in c[lo..hi].iter().zip(g.chunks_exact_mut(dim)) {
                        let w = ck * scale;
                        for (gd, x) in gk.iter_mut().zip(u) {
                            *gd += w * x;
                        }
                    }
                }
                g
            })
            .collect();
        let mut g2 = vec![0.0; f2.rows() * dim];
        for (k, row) in key_grads.iter().flat_map(|g| g.chunks_exact(dim)).enumerate() {
            let key = keys[k];
            g2[key * dim..(key + 1) * dim].copy_from_slice(row);
        }

        if cfg.normalize {
            project_through_normalization(&mut g1, &prep.f1, &prep.norms1, dim);
            project_through_normalization(&mut g2, &prep.f2, &prep.norms2, dim);
        }
        (
            FeatureMatrix::new(f1.rows(), dim, g1).expect("finite gradient"),
            FeatureMatrix::new(f2.rows(), dim, g2).expect("finite gradient"),
        )
    });
    Ok(Evaluation { report, grads })
}

/// Chain rule through `u = f / ‖f‖`: `∂L/∂f = (g − (g·u) u) / ‖f‖`.
fn project_through_normalization(g: &mut [f64], unit: &FeatureMatrix, norms: &[f64], dim: usize) {
    for (i, row) in g.chunks_mut(dim).enumerate() {
        if row.iter().all(|&v| v == 0.0) {
            continue;
        }
        let u = unit.row(i);
        let gu = dot(row, u);
        for (gd, ud) in row.iter_mut().zip(u) {
            *gd = (*gd - gu * ud) / norms[i];
        }
    }
}

/// Loss of one partition: mean over matches of
/// `−log(exp(s_ij/τ) / (exp(s_ij/τ) + Σ_{k ∈ par_p(i), k ≠ j} exp(s_ik/τ)))`, where the
/// negatives `k` range over the distinct matched frame-2 points.
pub fn partition_loss(
    f1: &FeatureMatrix,
    f2: &FeatureMatrix,
    matches: &CorrespondenceSet,
    rule: &dyn PartitionRule,
    p: usize,
    cfg: &LossConfig,
) -> Result<f64> {
    if p >= rule.num_partitions() {
        return Err(Error::Input(format!(
            "partition {p} out of range for {} partitions",
            rule.num_partitions()
        )));
    }
    Ok(evaluate(f1, f2, matches, rule, cfg, false)?.report.per_partition[p].loss)
}

pub fn total_loss_with_rule(
    f1: &FeatureMatrix,
    f2: &FeatureMatrix,
    matches: &CorrespondenceSet,
    rule: &dyn PartitionRule,
    cfg: &LossConfig,
) -> Result<LossReport> {
    Ok(evaluate(f1, f2, matches, rule, cfg, false)?.report)
}

fn geometric_rule<'a>(
    anchors: &'a PointCloud,
    candidates: &'a PointCloud,
    matches: &CorrespondenceSet,
    cfg: &'a LossConfig,
) -> Result<GeometricRule<'a>> {
    let rule = GeometricRule::new(&cfg.partition, anchors.positions(), candidates.positions())?;
    if !matches.is_empty() {
        let mi = matches.pairs.iter().map(|p| p.0).max().unwrap();
        let mj = matches.pairs.iter().map(|p| p.1).max().unwrap();
        rule.check_bounds(mi, mj)?;
    }
    Ok(rule)
}

/// Mean of all partition losses, partitioning frame-2 points (`candidates`) around each
/// frame-1 anchor (`anchors`); both clouds must share a coordinate frame.
pub fn total_loss(
    f1: &FeatureMatrix,
    f2: &FeatureMatrix,
    matches: &CorrespondenceSet,
    anchors: &PointCloud,
    candidates: &PointCloud,
    cfg: &LossConfig,
) -> Result<LossReport> {
    let rule = geometric_rule(anchors, candidates, matches, cfg)?;
    total_loss_with_rule(f1, f2, matches, &rule, cfg)
}

/// Loss report and gradients with respect to the raw (unnormalized) feature rows.
pub fn loss_and_gradient(
    f1: &FeatureMatrix,
    f2: &FeatureMatrix,
    matches: &CorrespondenceSet,
    rule: &dyn PartitionRule,
    cfg: &LossConfig,
) -> Result<(LossReport, FeatureMatrix, FeatureMatrix)> {
    let ev = evaluate(f1, f2, matches, rule, cfg, true)?;
    let (g1, g2) = ev.grads.unwrap();
    Ok((ev.report, g1, g2))
}

pub fn loss_gradient(
    f1: &FeatureMatrix,
    f2: &FeatureMatrix,
    matches: &CorrespondenceSet,
    anchors: &PointCloud,
    candidates: &PointCloud,
    cfg: &LossConfig,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let rule = geometric_rule(anchors, candidates, matches, cfg)?;
    let (_, g1, g2) = loss_and_gradient(f1, f2, matches, &rule, cfg)?;
    Ok((g1, g2))
}

/// Unpartitioned PointInfoNCE: every other matched frame-2 point is a negative.
pub fn point_info_nce(
    f1: &FeatureMatrix,
    f2: &FeatureMatrix,
    matches: &CorrespondenceSet,
    temperature: f64,
    normalize: bool,
) -> Result<f64> {
    let cfg = LossConfig {
        temperature,
        normalize,
        partition: crate::context::PartitionConfig::sectors(1)?,
        ..LossConfig::default()
    };
    let prep = prepare(f1, f2, matches, &cfg)?;
    if matches.is_empty() {
        return Ok(0.0);
    }
    let inv_tau = 1.0 / temperature;
    let (keys, pos) = key_set(matches);
    let key_rows = gather_rows(&prep.f2, &keys);
    let mut sum = 0.0;
    for (a, &(i, _)) in matches.pairs.iter().enumerate() {
        let mut logits = vec![0.0; keys.len()];
        dot_rows(prep.f1.row(i), &key_rows, prep.f1.dim(), &mut logits);
        let mut mx = f64::NEG_INFINITY;
        for l in logits.iter_mut() {
            *l *= inv_tau;
            mx = mx.max(*l);
        }
        let lp = logits[pos[a]];
        let mut neg = 0.0;
        for (k, &l) in logits.iter().enumerate() {
            if k != pos[a] {
                neg += (l - mx).exp();
            }
        }
        sum += -lp + mx + ((lp - mx).exp() + neg).ln();
    }
    Ok(sum / matches.len() as f64)
}
