use crate::error::{Error, Result};

/// Dense row-major `rows × dim` matrix of per-point feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
    normalized: bool,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * dim {
            return Err(Error::LengthMismatch {
                what: "feature values",
                expected: rows * dim,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("feature matrix contains NaN/Inf".into()));
        }
        Ok(Self {
            rows,
            dim,
            values,
            normalized: false,
        })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            values: vec![0.0; rows * dim],
            normalized: false,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::LengthMismatch {
                what: "feature row",
                expected: dim,
                found: r.len(),
            });
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        self.normalized = false;
        &mut self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Whether every row is known to have unit L2 norm.
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Returns a copy whose rows have unit L2 norm. Zero rows are rejected.
    pub fn normalized(&self) -> Result<Self> {
        let mut out = self.clone();
        for (i, row) in out.values.chunks_mut(self.dim.max(1)).enumerate() {
            let norm = l2(row);
            if norm == 0.0 {
                return Err(Error::Input(format!("feature row {i} has zero norm")));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        out.normalized = true;
        Ok(out)
    }

    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.rows).map(|i| l2(self.row(i))).collect()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// `out[k] = dot(u, rows[k])` for the `dim`-wide rows of `rows`, with every dot product
/// accumulated in the same order as [`dot`].
pub fn dot_rows(u: &[f64], rows: &[f64], dim: usize, out: &mut [f64]) {
    debug_assert_eq!(rows.len(), out.len() * dim);
    let mut chunks = rows.chunks_exact(4 * dim);
    let mut outs = out.chunks_exact_mut(4);
    for (block, o) in (&mut chunks).zip(&mut outs) {
        let (r0, rest) = block.split_at(dim);
        let (r1, rest) = rest.split_at(dim);
        let (r2, r3) = rest.split_at(dim);
        let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
        for d in 0..dim {
            let x = u[d];
            s0 += x * r0[d];
            s1 += x * r1[d];
            s2 += x * r2[d];
            s3 += x * r3[d];
        }
        o.copy_from_slice(&[s0, s1, s2, s3]);
    }
    for (row, o) in chunks.remainder().chunks_exact(dim).zip(outs.into_remainder()) {
        *o = dot(u, row);
    }
}

#[inline]
pub fn l2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
