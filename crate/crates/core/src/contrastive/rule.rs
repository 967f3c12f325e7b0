use crate::cloud::Point3;
use crate::context::{partition_index, PartitionConfig};
use crate::error::{Error, Result};

/// Maps an (anchor, key) pair to the partition the key occupies relative to the anchor.
///
/// `anchor` indexes frame-1 points, `key` indexes frame-2 points.
pub trait PartitionRule: Sync {
    fn num_partitions(&self) -> usize;
    fn partition(&self, anchor: usize, key: usize) -> usize;
}

/// Computes partitions on the fly from world-space positions.
pub struct GeometricRule<'a> {
    cfg: &'a PartitionConfig,
    anchors: &'a [Point3],
    keys: &'a [Point3],
}

impl<'a> GeometricRule<'a> {
    pub fn new(cfg: &'a PartitionConfig, anchors: &'a [Point3], keys: &'a [Point3]) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, anchors, keys })
    }

    pub(crate) fn check_bounds(&self, max_anchor: usize, max_key: usize) -> Result<()> {
        if max_anchor >= self.anchors.len() || max_key >= self.keys.len() {
            return Err(Error::Input(
                "match indices exceed the anchor/candidate clouds".into(),
            ));
        }
        Ok(())
    }
}

impl PartitionRule for GeometricRule<'_> {
    fn num_partitions(&self) -> usize {
        self.cfg.num_partitions()
    }

    #[inline]
    fn partition(&self, anchor: usize, key: usize) -> usize {
        partition_index(self.cfg, &self.anchors[anchor], &self.keys[key])
    }
}

/// Precomputed partitions for a fixed set of anchors and keys.
pub struct PartitionTable {
    num_partitions: usize,
    anchor_row: Vec<u32>,
    key_col: Vec<u32>,
    cols: usize,
    table: Vec<u16>,
}

impl PartitionTable {
    pub fn build(
        cfg: &PartitionConfig,
        anchors: &[Point3],
        keys: &[Point3],
        anchor_ids: &[usize],
        key_ids: &[usize],
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.num_partitions() > u16::MAX as usize {
            return Err(Error::Config("too many partitions for a table".into()));
        }
        let mut anchor_row = vec![u32::MAX; anchors.len()];
        let mut rows = Vec::new();
        for &a in anchor_ids {
            if a >= anchors.len() {
                return Err(Error::Input(format!("anchor {a} out of range")));
            }
            if anchor_row[a] == u32::MAX {
                anchor_row[a] = rows.len() as u32;
                rows.push(a);
            }
        }
        let mut key_col = vec![u32::MAX; keys.len()];
        let mut cols = Vec::new();
        for &k in key_ids {
            if k >= keys.len() {
                return Err(Error::Input(format!("key {k} out of range")));
            }
            if key_col[k] == u32::MAX {
                key_col[k] = cols.len() as u32;
                cols.push(k);
            }
        }
        let mut table = Vec::with_capacity(rows.len() * cols.len());
        for &a in &rows {
            for &k in &cols {
                table.push(partition_index(cfg, &anchors[a], &keys[k]) as u16);
            }
        }
        Ok(Self {
            num_partitions: cfg.num_partitions(),
            anchor_row,
            key_col,
            cols: cols.len(),
            table,
        })
    }
}

impl PartitionRule for PartitionTable {
    fn num_partitions(&self) -> usize {
        self.num_partitions
    }

    /// Panics if the anchor or key was not part of the table.
    #[inline]
    fn partition(&self, anchor: usize, key: usize) -> usize {
        let r = self.anchor_row[anchor] as usize;
        let c = self.key_col[key] as usize;
        self.table[r * self.cols + c] as usize
    }
}
