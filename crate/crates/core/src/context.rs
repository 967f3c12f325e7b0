//! Anchor-relative partitioning of space into angular sectors and distance shells.
//!
//! The angle is the azimuth of the displacement in the horizontal plane, so sectors are
//! vertical wedges; shells are bounded by distances measured in full 3D.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};

/// Shell boundary used when eight partitions are requested without explicit boundaries.
pub const DEFAULT_SHELL_BOUNDARY: f64 = 1.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub angular_sectors: usize,
    pub radial_shells: usize,
    /// Strictly increasing, positive, `radial_shells - 1` entries.
    pub shell_boundaries_m: Vec<f64>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self::with_partitions(8).unwrap()
    }
}

impl PartitionConfig {
    pub fn new(angular_sectors: usize, radial_shells: usize, shell_boundaries_m: Vec<f64>) -> Result<Self> {
        let cfg = Self {
            angular_sectors,
            radial_shells,
            shell_boundaries_m,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Only angular sectors, a single unbounded shell.
    pub fn sectors(angular_sectors: usize) -> Result<Self> {
        Self::new(angular_sectors, 1, Vec::new())
    }

    /// Standard layout for a total partition count: up to 4 partitions use sectors only;
    /// larger multiples of 4 use 4 sectors and `P/4` shells spaced uniformly by
    /// [`DEFAULT_SHELL_BOUNDARY`].
    pub fn with_partitions(total: usize) -> Result<Self> {
        match total {
            1..=4 => Self::sectors(total),
            t if t % 4 == 0 => {
                let shells = t / 4;
                Self::new(
                    4,
                    shells,
                    (1..shells).map(|s| s as f64 * DEFAULT_SHELL_BOUNDARY).collect(),
                )
            }
            t => Err(Error::Config(format!(
                "no standard layout for {t} partitions; give sectors and shells explicitly"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.angular_sectors == 0 || self.radial_shells == 0 {
            return Err(Error::Config("partition counts must be positive".into()));
        }
        if self.shell_boundaries_m.len() + 1 != self.radial_shells {
            return Err(Error::Config(format!(
                "{} shells need {} boundaries, got {}",
                self.radial_shells,
                self.radial_shells - 1,
                self.shell_boundaries_m.len()
            )));
        }
        let mut prev = 0.0;
        for &b in &self.shell_boundaries_m {
            if !(b > prev && b.is_finite()) {
                return Err(Error::Config(
                    "shell boundaries must be positive and strictly increasing".into(),
                ));
            }
            prev = b;
        }
        Ok(())
    }

    pub fn num_partitions(&self) -> usize {
        self.angular_sectors * self.radial_shells
    }

    /// Sector width in radians.
    pub fn sector_angle(&self) -> f64 {
        TAU / self.angular_sectors as f64
    }

    #[inline]
    pub fn sector_of(&self, angle: f64) -> usize {
        let s = (angle / self.sector_angle()).floor() as usize;
        s.min(self.angular_sectors - 1)
    }

    #[inline]
    pub fn shell_of(&self, distance: f64) -> usize {
        self.shell_boundaries_m.iter().filter(|&&b| b < distance).count()
    }

    #[inline]
    pub fn partition_id(&self, sector: usize, shell: usize) -> usize {
        sector + self.angular_sectors * shell
    }
}

/// Euclidean distance between anchor and point.
#[inline]
pub fn relative_distance(anchor: &Point3, point: &Point3) -> f64 {
    let dx = point[0] - anchor[0];
    let dy = point[1] - anchor[1];
    let dz = point[2] - anchor[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Azimuth of `point − anchor` in `[0, 2π)`; 0 when the horizontal displacement vanishes.
#[inline]
pub fn relative_angle(anchor: &Point3, point: &Point3) -> f64 {
    let dx = point[0] - anchor[0];
    let dy = point[1] - anchor[1];
    if dx == 0.0 && dy == 0.0 {
        return 0.0;
    }
    let a = dy.atan2(dx);
    if a < 0.0 {
        // a + 2π can round up to exactly 2π for tiny negative angles.
        let wrapped = a + TAU;
        if wrapped >= TAU {
            0.0
        } else {
            wrapped
        }
    } else {
        a
    }
}

#[inline]
pub fn partition_index(cfg: &PartitionConfig, anchor: &Point3, point: &Point3) -> usize {
    let sector = cfg.sector_of(relative_angle(anchor, point));
    let shell = cfg.shell_of(relative_distance(anchor, point));
    cfg.partition_id(sector, shell)
}

/// Partition id of every candidate relative to one anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionAssignment {
    pub anchor_index: usize,
    pub partition_of: Vec<usize>,
}

impl PartitionAssignment {
    /// Candidate indices in partition `p`.
    pub fn members(&self, p: usize) -> Vec<usize> {
        (0..self.partition_of.len())
            .filter(|&k| self.partition_of[k] == p)
            .collect()
    }

    /// Number of candidates per partition.
    pub fn histogram(&self, num_partitions: usize) -> Vec<usize> {
        let mut h = vec![0; num_partitions];
        for &p in &self.partition_of {
            h[p] += 1;
        }
        h
    }
}

pub fn assign_partitions(
    cfg: &PartitionConfig,
    anchor_index: usize,
    anchors: &PointCloud,
    candidates: &PointCloud,
) -> Result<PartitionAssignment> {
    cfg.validate()?;
    let anchor = anchors.positions().get(anchor_index).ok_or_else(|| {
        Error::Input(format!(
            "anchor index {anchor_index} out of range for {} points",
            anchors.len()
        ))
    })?;
    Ok(PartitionAssignment {
        anchor_index,
        partition_of: candidates
            .positions()
            .iter()
            .map(|p| partition_index(cfg, anchor, p))
            .collect(),
    })
}
