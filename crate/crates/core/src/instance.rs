//! Test-time instance decoding: shift points by predicted offsets, grow clusters by BFS
//! over a fixed-radius ball restricted to points of the same semantic class, then score
//! each instance by its members' mean class probability.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::cloud::{add, Point3, PointCloud};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::index::SpatialIndex;
use crate::IGNORE_LABEL;

pub const DEFAULT_CLUSTER_RADIUS: f64 = 0.03;
pub const DEFAULT_MIN_CLUSTER_SIZE: usize = 10;

/// Per-point displacement toward the point's instance center.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField(Vec<Point3>);

impl OffsetField {
    pub fn new(offsets: Vec<Point3>) -> Result<Self> {
        if offsets.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Input("offset field has non-finite entries".into()));
        }
        Ok(Self(offsets))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Point3] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub semantic_label: u32,
    /// Set by [`score_instances`]; 0 until then.
    pub confidence: f64,
    /// Point indices, ascending.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InstancePrediction {
    /// Instance id of every point, `None` for unassigned points.
    pub instance_of: Vec<Option<usize>>,
    pub instances: Vec<Instance>,
}

impl InstancePrediction {
    /// Rebuilds member lists from a per-point assignment.
    pub fn from_assignment(instance_of: Vec<Option<usize>>, labels: Vec<u32>, confidences: Vec<f64>) -> Result<Self> {
        if labels.len() != confidences.len() {
            return Err(Error::LengthMismatch {
                what: "instance confidences",
                expected: labels.len(),
                found: confidences.len(),
            });
        }
        let mut instances: Vec<Instance> = labels
            .into_iter()
            .zip(confidences)
            .map(|(semantic_label, confidence)| Instance {
                semantic_label,
                confidence,
                members: Vec::new(),
            })
            .collect();
        for (i, id) in instance_of.iter().enumerate() {
            if let Some(id) = *id {
                instances
                    .get_mut(id)
                    .ok_or_else(|| Error::Input(format!("point {i} refers to unknown instance {id}")))?
                    .members
                    .push(i);
            }
        }
        Ok(Self {
            instance_of,
            instances,
        })
    }
}

/// `p ↦ p + offset(p)`; attributes are carried over.
pub fn shift_points(cloud: &PointCloud, offsets: &OffsetField) -> Result<PointCloud> {
    if offsets.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            what: "offsets",
            expected: cloud.len(),
            found: offsets.len(),
        });
    }
    cloud.map_positions(|i, p| add(p, &offsets.0[i]))
}

/// Connected components of the graph joining points within `radius` that share a semantic
/// label. Components smaller than `min_cluster_size` stay unassigned. Ids follow discovery
/// order, seeding from the lowest unvisited index. Points labelled [`IGNORE_LABEL`] are
/// never clustered.
pub fn bfs_cluster(
    shifted: &PointCloud,
    semantic_labels: &[u32],
    radius: f64,
    min_cluster_size: usize,
) -> Result<InstancePrediction> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("cluster radius must be positive, got {radius}")));
    }
    let n = shifted.len();
    if semantic_labels.len() != n {
        return Err(Error::LengthMismatch {
            what: "semantic labels",
            expected: n,
            found: semantic_labels.len(),
        });
    }
    let index = SpatialIndex::new(shifted.positions());
    let mut visited = vec![false; n];
    let mut instance_of = vec![None; n];
    let mut instances = Vec::new();
    let mut queue = VecDeque::new();
    let mut neighbours = Vec::new();
    let mut expanded = HashSet::new();

    for seed in 0..n {
        if visited[seed] || semantic_labels[seed] == IGNORE_LABEL {
            continue;
        }
        let label = semantic_labels[seed];
        visited[seed] = true;
        queue.push_back(seed);
        let mut members = Vec::new();
        expanded.clear();
        while let Some(u) = queue.pop_front() {
            members.push(u);
            let p = shifted.positions()[u];
            if !expanded.insert(p.map(f64::to_bits)) {
                continue;
            }
            index.radius_query_into(&p, radius, &mut neighbours);
            for &v in &neighbours {
                if !visited[v] && semantic_labels[v] == label {
                    visited[v] = true;
                    queue.push_back(v);
                }
            }
        }
        if members.len() >= min_cluster_size {
            members.sort_unstable();
            let id = instances.len();
            for &m in &members {
                instance_of[m] = Some(id);
            }
            instances.push(Instance {
                semantic_label: label,
                confidence: 0.0,
                members,
            });
        }
    }
    Ok(InstancePrediction {
        instance_of,
        instances,
    })
}

/// Sets each instance's confidence to the mean probability its members assign to the
/// instance's class. `scores` has one row per point and one column per class.
pub fn score_instances(pred: &InstancePrediction, scores: &FeatureMatrix) -> Result<InstancePrediction> {
    if scores.rows() != pred.instance_of.len() {
        return Err(Error::LengthMismatch {
            what: "semantic score rows",
            expected: pred.instance_of.len(),
            found: scores.rows(),
        });
    }
    let mut out = pred.clone();
    for inst in &mut out.instances {
        let c = inst.semantic_label as usize;
        if c >= scores.dim() {
            return Err(Error::Input(format!(
                "instance class {c} has no score column ({} classes)",
                scores.dim()
            )));
        }
        let sum: f64 = inst.members.iter().map(|&i| scores.row(i)[c]).sum();
        inst.confidence = if inst.members.is_empty() {
            0.0
        } else {
            sum / inst.members.len() as f64
        };
    }
    Ok(out)
}

/// Most probable class per point; ties go to the lower class id.
pub fn semantic_argmax(scores: &FeatureMatrix) -> Vec<u32> {
    (0..scores.rows())
        .map(|i| {
            let row = scores.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best as u32
        })
        .collect()
}
