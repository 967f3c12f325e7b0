//! Point clouds, rigid poses and voxel downsampling.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[inline]
pub fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: &Point3, b: &Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// A point set with optional per-point colors and labels.
///
/// Optional arrays always have the same length as `positions`, and positions are finite.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    positions: Vec<Point3>,
    colors: Option<Vec<[u8; 3]>>,
    semantic_labels: Option<Vec<u32>>,
    instance_labels: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Point3>) -> Result<Self> {
        if let Some(i) = positions
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::Input(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            positions,
            ..Default::default()
        })
    }

    pub fn with_colors(mut self, colors: Vec<[u8; 3]>) -> Result<Self> {
        self.check_len("colors", colors.len())?;
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn with_semantic_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        self.check_len("semantic labels", labels.len())?;
        self.semantic_labels = Some(labels);
        Ok(self)
    }

    pub fn with_instance_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        self.check_len("instance labels", labels.len())?;
        self.instance_labels = Some(labels);
        Ok(self)
    }

    fn check_len(&self, what: &'static str, found: usize) -> Result<()> {
        if found != self.positions.len() {
            return Err(Error::LengthMismatch {
                what,
                expected: self.positions.len(),
                found,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    pub fn semantic_labels(&self) -> Option<&[u32]> {
        self.semantic_labels.as_deref()
    }

    pub fn instance_labels(&self) -> Option<&[u32]> {
        self.instance_labels.as_deref()
    }

    /// Returns a copy with the positions replaced; attributes are carried over.
    pub fn map_positions(&self, mut f: impl FnMut(usize, &Point3) -> Point3) -> Result<Self> {
        let positions = self
            .positions
            .iter()
            .enumerate()
            .map(|(i, p)| f(i, p))
            .collect();
        let mut out = PointCloud::new(positions)?;
        out.colors = self.colors.clone();
        out.semantic_labels = self.semantic_labels.clone();
        out.instance_labels = self.instance_labels.clone();
        Ok(out)
    }

    /// Keeps the points at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let pick = |v: &Option<Vec<u32>>| v.as_ref().map(|v| indices.iter().map(|&i| v[i]).collect());
        Self {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            semantic_labels: pick(&self.semantic_labels),
            instance_labels: pick(&self.instance_labels),
        }
    }

    /// Applies `R·p + t` to every position.
    pub fn transform(&self, pose: &Pose) -> Self {
        let mut out = self.clone();
        for p in &mut out.positions {
            *p = pose.apply(p);
        }
        out
    }
}

/// A rigid transform `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: [[f64; 3]; 3],
    translation: Point3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Validates that `rotation` is orthonormal with determinant +1.
    pub fn new(rotation: [[f64; 3]; 3], translation: Point3) -> Result<Self> {
        let r = &rotation;
        if r.iter().flatten().chain(&translation).any(|c| !c.is_finite()) {
            return Err(Error::Input("pose has non-finite entries".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > Self::ORTHONORMAL_TOLERANCE {
                    return Err(Error::Input("pose rotation is not orthonormal".into()));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > Self::ORTHONORMAL_TOLERANCE {
            return Err(Error::Input(format!("pose rotation has determinant {det}")));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn translation(t: Point3) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Rotation by `angle` radians about the +z axis followed by translation `t`.
    pub fn from_yaw(angle: f64, t: Point3) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            translation: t,
        }
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation_vector(&self) -> &Point3 {
        &self.translation
    }

    #[inline]
    pub fn apply(&self, p: &Point3) -> Point3 {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    pub fn inverse(&self) -> Self {
        let r = &self.rotation;
        let rt = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let t = &self.translation;
        let ti = [
            -(rt[0][0] * t[0] + rt[0][1] * t[1] + rt[0][2] * t[2]),
            -(rt[1][0] * t[0] + rt[1][1] * t[1] + rt[1][2] * t[2]),
            -(rt[2][0] * t[0] + rt[2][1] * t[1] + rt[2][2] * t[2]),
        ];
        Self {
            rotation: rt,
            translation: ti,
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        let a = &self.rotation;
        let b = &other.rotation;
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        Self {
            rotation: r,
            translation: self.apply(&other.translation),
        }
    }

    /// Row-major 4×4 homogeneous matrix.
    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[0][0], r[0][1], r[0][2], t[0]],
            [r[1][0], r[1][1], r[1][2], t[1]],
            [r[2][0], r[2][1], r[2][2], t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_matrix(m: &[[f64; 4]; 4]) -> Result<Self> {
        const TOL: f64 = 1e-9;
        if m[3][0].abs() > TOL || m[3][1].abs() > TOL || m[3][2].abs() > TOL || (m[3][3] - 1.0).abs() > TOL {
            return Err(Error::Input("last pose row must be 0 0 0 1".into()));
        }
        Self::new(
            [
                [m[0][0], m[0][1], m[0][2]],
                [m[1][0], m[1][1], m[1][2]],
                [m[2][0], m[2][1], m[2][2]],
            ],
            [m[0][3], m[1][3], m[2][3]],
        )
    }
}

/// Integer voxel coordinate of `p` (floor convention on each axis).
#[inline]
pub fn voxel_key(p: &Point3, voxel_size: f64) -> [i64; 3] {
    [
        (p[0] / voxel_size).floor() as i64,
        (p[1] / voxel_size).floor() as i64,
        (p[2] / voxel_size).floor() as i64,
    ]
}

/// Majority vote; ties go to the smallest label.
fn majority(labels: impl Iterator<Item = u32>) -> u32 {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(l, _)| l)
        .unwrap_or(0)
}

/// Replaces the points of every occupied voxel by their centroid.
///
/// Output points appear in order of the first input point of each voxel. Colors are
/// averaged (rounded), labels are majority-voted.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::Config(format!("voxel size must be positive, got {voxel_size}")));
    }
    let mut slot: HashMap<[i64; 3], usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, p) in cloud.positions.iter().enumerate() {
        let next = members.len();
        let s = *slot.entry(voxel_key(p, voxel_size)).or_insert(next);
        if s == next {
            members.push(Vec::new());
        }
        members[s].push(i);
    }

    let positions = members
        .iter()
        .map(|m| {
            let mut c = [0.0; 3];
            for &i in m {
                c = add(&c, &cloud.positions[i]);
            }
            let n = m.len() as f64;
            [c[0] / n, c[1] / n, c[2] / n]
        })
        .collect();
    let colors = cloud.colors.as_ref().map(|colors| {
        members
            .iter()
            .map(|m| {
                let mut acc = [0u64; 3];
                for &i in m {
                    for (a, &c) in acc.iter_mut().zip(&colors[i]) {
                        *a += c as u64;
                    }
                }
                let n = m.len() as f64;
                acc.map(|a| (a as f64 / n).round() as u8)
            })
            .collect()
    });
    let vote = |labels: &Option<Vec<u32>>| {
        labels.as_ref().map(|l| {
            members
                .iter()
                .map(|m| majority(m.iter().map(|&i| l[i])))
                .collect()
        })
    };
    Ok(PointCloud {
        positions,
        colors,
        semantic_labels: vote(&cloud.semantic_labels),
        instance_labels: vote(&cloud.instance_labels),
    })
}
