//! Semantic mIoU and instance mAP@0.5.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use super::splits::Box3;
use crate::error::{Error, Result};
use crate::instance::InstancePrediction;
use crate::IGNORE_LABEL;

pub const INSTANCE_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouResult {
    pub miou: f64,
    /// IoU per class; `None` where the class occurs in neither prediction nor ground truth.
    pub per_class: Vec<Option<f64>>,
}

/// Mean IoU over the classes present in the ground truth. Points whose ground truth is
/// `ignore` are excluded; predictions outside `0..num_classes` count as misses.
pub fn miou(pred: &[u32], gt: &[u32], num_classes: usize, ignore: u32) -> Result<MiouResult> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            what: "predicted labels",
            expected: gt.len(),
            found: pred.len(),
        });
    }
    let mut tp = vec![0u64; num_classes];
    let mut fp = vec![0u64; num_classes];
    let mut fn_ = vec![0u64; num_classes];
    let mut valid = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        if g == ignore {
            continue;
        }
        let g = g as usize;
        if g >= num_classes {
            return Err(Error::Input(format!("ground-truth label {g} outside {num_classes} classes")));
        }
        valid += 1;
        let p = p as usize;
        if p == g {
            tp[g] += 1;
        } else {
            fn_[g] += 1;
            if p < num_classes {
                fp[p] += 1;
            }
        }
    }
    if valid == 0 {
        return Err(Error::Input("no labelled points to evaluate".into()));
    }
    let per_class: Vec<Option<f64>> = (0..num_classes)
        .map(|c| {
            let union = tp[c] + fp[c] + fn_[c];
            (union > 0).then(|| tp[c] as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = (0..num_classes)
        .filter(|&c| tp[c] + fn_[c] > 0)
        .map(|c| per_class[c].unwrap())
        .collect();
    Ok(MiouResult {
        miou: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
    })
}

/// Ground-truth instances as point-index sets with a class each.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstances {
    pub classes: Vec<u32>,
    /// Ascending point indices per instance.
    pub members: Vec<Vec<usize>>,
}

impl GtInstances {
    /// Groups points by instance label; the class is the first member's semantic label.
    /// Points with an ignored semantic label are skipped.
    pub fn from_cloud(cloud: &PointCloud) -> Result<Self> {
        let inst = cloud
            .instance_labels()
            .ok_or_else(|| Error::Input("ground truth needs instance labels".into()))?;
        let sem = cloud
            .semantic_labels()
            .ok_or_else(|| Error::Input("ground truth needs semantic labels".into()))?;
        Self::from_labels(inst, sem)
    }

    pub fn from_labels(instance: &[u32], semantic: &[u32]) -> Result<Self> {
        if instance.len() != semantic.len() {
            return Err(Error::LengthMismatch {
                what: "semantic labels",
                expected: instance.len(),
                found: semantic.len(),
            });
        }
        let mut groups: BTreeMap<u32, (u32, Vec<usize>)> = BTreeMap::new();
        for (i, (&id, &class)) in instance.iter().zip(semantic).enumerate() {
            if class == IGNORE_LABEL {
                continue;
            }
            groups.entry(id).or_insert((class, Vec::new())).1.push(i);
        }
        let (classes, members) = groups.into_values().unzip();
        Ok(Self { classes, members })
    }
}

fn intersection(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Point-set IoU of two ascending index lists.
pub fn set_iou(a: &[usize], b: &[usize]) -> f64 {
    let inter = intersection(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Area under the precision/recall curve with the precision envelope (all-point
/// interpolation). `hits` is the TP flag of each ranked prediction.
pub fn average_precision(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (rank, &h) in hits.iter().enumerate() {
        tp += h as usize;
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub map: f64,
    pub per_class: BTreeMap<u32, f64>,
}

/// Instance mAP at point-set IoU 0.5, averaged over classes with ground-truth instances.
///
/// Per class, predictions are ranked by confidence (ties by instance id) and each is
/// matched greedily to the unmatched ground-truth instance of highest IoU, if that IoU is
/// at least 0.5.
pub fn instance_map50(pred: &InstancePrediction, gt: &GtInstances) -> Result<ApResult> {
    let mut per_class = BTreeMap::new();
    let classes: std::collections::BTreeSet<u32> = gt.classes.iter().copied().collect();
    for &class in &classes {
        let gt_ids: Vec<usize> = (0..gt.classes.len()).filter(|&g| gt.classes[g] == class).collect();
        let mut preds: Vec<usize> = (0..pred.instances.len())
            .filter(|&p| pred.instances[p].semantic_label == class)
            .collect();
        preds.sort_by(|&a, &b| {
            pred.instances[b]
                .confidence
                .total_cmp(&pred.instances[a].confidence)
                .then(a.cmp(&b))
        });
        let mut used = vec![false; gt_ids.len()];
        let hits: Vec<bool> = preds
            .iter()
            .map(|&p| {
                let members = &pred.instances[p].members;
                let best = gt_ids
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| !used[*k])
                    .map(|(k, &g)| (k, set_iou(members, &gt.members[g])))
                    .filter(|&(_, iou)| iou >= INSTANCE_IOU_THRESHOLD)
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
                match best {
                    Some((k, _)) => {
                        used[k] = true;
                        true
                    }
                    None => false,
                }
            })
            .collect();
        per_class.insert(class, average_precision(&hits, gt_ids.len()));
    }
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    Ok(ApResult { map, per_class })
}

/// A predicted axis-aligned box with a confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: Box3,
    pub confidence: f64,
}

/// Detection AP over axis-aligned boxes at the given box-IoU threshold, with the same
/// greedy matching and interpolation as [`instance_map50`]. One entry per scene.
pub fn box_map(pred: &[Vec<ScoredBox>], gt: &[Vec<Box3>], iou_threshold: f64) -> Result<ApResult> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            what: "scenes with predictions",
            expected: gt.len(),
            found: pred.len(),
        });
    }
    let classes: std::collections::BTreeSet<u32> = gt.iter().flatten().map(|b| b.class).collect();
    let mut per_class = BTreeMap::new();
    for &class in &classes {
        let mut ranked: Vec<(usize, usize)> = Vec::new();
        for (s, boxes) in pred.iter().enumerate() {
            ranked.extend((0..boxes.len()).filter(|&b| boxes[b].bbox.class == class).map(|b| (s, b)));
        }
        ranked.sort_by(|a, b| pred[b.0][b.1].confidence.total_cmp(&pred[a.0][a.1].confidence).then(a.cmp(b)));
        let mut used: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
        let num_gt = gt.iter().flatten().filter(|b| b.class == class).count();
        let hits: Vec<bool> = ranked
            .iter()
            .map(|&(s, b)| {
                let cand = &pred[s][b].bbox;
                let best = gt[s]
                    .iter()
                    .enumerate()
                    .filter(|(k, g)| g.class == class && !used[s][*k])
                    .map(|(k, g)| (k, cand.iou(g)))
                    .filter(|&(_, iou)| iou >= iou_threshold)
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
                best.map(|(k, _)| used[s][k] = true).is_some()
            })
            .collect();
        per_class.insert(class, average_precision(&hits, num_gt));
    }
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    Ok(ApResult { map, per_class })
}
