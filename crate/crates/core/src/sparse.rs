//! Row-compressed sparse operators with provenance fingerprints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Identifies the geometry, energy grid and image grid an operator or a data
/// set was built for.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprints {
    pub geometry: String,
    pub grid: String,
    pub image: String,
    /// Discretization details (subsampling, energy levels); informative only.
    pub sampling: String,
}

impl Fingerprints {
    /// Fails on the first field that differs; empty fields match anything.
    pub fn check(&self, other: &Fingerprints) -> Result<()> {
        for (a, b) in [
            (&self.geometry, &other.geometry),
            (&self.grid, &other.grid),
            (&self.image, &other.image),
        ] {
            if !a.is_empty() && !b.is_empty() && a != b {
                return Err(Error::Fingerprint {
                    expected: a.clone(),
                    found: b.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Image-grid fingerprint: pixel count and field of view.
pub fn image_fingerprint(n: usize, fov: f64) -> String {
    format!("{n}x{n}@{fov}cm")
}

#[derive(Clone, Debug, PartialEq)]
struct Csr {
    ptr: Vec<usize>,
    idx: Vec<u32>,
    val: Vec<f64>,
}

impl Csr {
    fn transpose(&self, n_cols: usize) -> Csr {
        let mut counts = vec![0usize; n_cols + 1];
        for &c in &self.idx {
            counts[c as usize + 1] += 1;
        }
        for k in 0..n_cols {
            counts[k + 1] += counts[k];
        }
        let ptr = counts.clone();
        let mut next = counts;
        let mut idx = vec![0u32; self.idx.len()];
        let mut val = vec![0.0; self.val.len()];
        for row in 0..self.ptr.len() - 1 {
            for k in self.ptr[row]..self.ptr[row + 1] {
                let c = self.idx[k] as usize;
                idx[next[c]] = row as u32;
                val[next[c]] = self.val[k];
                next[c] += 1;
            }
        }
        Csr { ptr, idx, val }
    }

    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        const CHUNK: usize = 64;
        par::for_each_chunk_mut(out, CHUNK, |ci, chunk| {
            for (k, o) in chunk.iter_mut().enumerate() {
                let row = ci * CHUNK + k;
                let (a, b) = (self.ptr[row], self.ptr[row + 1]);
                *o = self.idx[a..b]
                    .iter()
                    .zip(&self.val[a..b])
                    .map(|(&c, &v)| v * x[c as usize])
                    .sum();
            }
        });
    }
}

/// Sparse matrix from pixel values to flattened data, stored row-compressed
/// together with its transpose so that both products are row sweeps.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    n_rows: usize,
    n_cols: usize,
    fwd: Csr,
    adj: Csr,
    pub fingerprints: Fingerprints,
}

impl SparseOperator {
    /// Build from per-row entry lists; entries within a row are sorted by
    /// column and duplicates summed.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>, fingerprints: Fingerprints) -> Result<Self> {
        let n_rows = rows.len();
        let mut ptr = Vec::with_capacity(n_rows + 1);
        ptr.push(0);
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let start = idx.len();
            for (c, v) in row {
                if c >= n_cols {
                    return Err(Error::shape(format!("column {c} out of {n_cols}")));
                }
                if idx.len() > start && *idx.last().unwrap() as usize == c {
                    *val.last_mut().unwrap() += v;
                } else {
                    idx.push(c as u32);
                    val.push(v);
                }
            }
            ptr.push(idx.len());
        }
        Ok(Self::from_csr_unchecked(
            n_rows,
            n_cols,
            Csr { ptr, idx, val },
            fingerprints,
        ))
    }

    /// Build from `(row, col, value)` triplets in any order.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
        fingerprints: Fingerprints,
    ) -> Result<Self> {
        let mut rows = vec![Vec::new(); n_rows];
        for &(r, c, v) in triplets {
            if r >= n_rows {
                return Err(Error::shape(format!("row {r} out of {n_rows}")));
            }
            rows[r].push((c, v));
        }
        Self::from_rows(n_cols, rows, fingerprints)
    }

    /// Build from raw row-compressed arrays, validating their structure.
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        values: Vec<f64>,
        fingerprints: Fingerprints,
    ) -> Result<Self> {
        let ok = row_ptr.len() == n_rows + 1
            && row_ptr[0] == 0
            && row_ptr.windows(2).all(|w| w[0] <= w[1])
            && row_ptr[n_rows] == col_idx.len()
            && col_idx.len() == values.len()
            && col_idx.iter().all(|&c| (c as usize) < n_cols);
        if !ok {
            return Err(Error::Format("inconsistent row-compressed arrays".into()));
        }
        let csr = Csr {
            ptr: row_ptr,
            idx: col_idx,
            val: values,
        };
        Ok(Self::from_csr_unchecked(n_rows, n_cols, csr, fingerprints))
    }

    fn from_csr_unchecked(n_rows: usize, n_cols: usize, fwd: Csr, fingerprints: Fingerprints) -> Self {
        let adj = fwd.transpose(n_cols);
        SparseOperator {
            n_rows,
            n_cols,
            fwd,
            adj,
            fingerprints,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.fwd.val.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.fwd.ptr
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.fwd.idx
    }

    pub fn values(&self) -> &[f64] {
        &self.fwd.val
    }

    /// `(column, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.fwd.ptr[r], self.fwd.ptr[r + 1]);
        self.fwd.idx[a..b]
            .iter()
            .zip(&self.fwd.val[a..b])
            .map(|(&c, &v)| (c as usize, v))
    }

    /// Number of stored entries in each column.
    pub fn column_counts(&self) -> Vec<usize> {
        self.adj.ptr.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::shape(format!(
                "operator has {} columns, image has {} pixels",
                self.n_cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.n_rows];
        self.fwd.matvec(x, &mut out);
        Ok(out)
    }

    /// `Aᵀ y`.
    pub fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n_rows {
            return Err(Error::shape(format!(
                "operator has {} rows, data has {} entries",
                self.n_rows,
                y.len()
            )));
        }
        let mut out = vec![0.0; self.n_cols];
        self.adj.matvec(y, &mut out);
        Ok(out)
    }

    /// `Σ_k c_k A_k` over operators of identical shape and fingerprints.
    pub fn weighted_sum(terms: &[(f64, &SparseOperator)]) -> Result<Self> {
        let (_, first) = terms.first().ok_or_else(|| Error::config("empty operator sum"))?;
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); first.n_rows];
        for &(c, op) in terms {
            if op.n_rows != first.n_rows || op.n_cols != first.n_cols {
                return Err(Error::shape("operators in a sum must share their shape"));
            }
            first.fingerprints.check(&op.fingerprints)?;
            for (r, row) in rows.iter_mut().enumerate() {
                row.extend(op.row(r).map(|(col, v)| (col, c * v)));
            }
        }
        Self::from_rows(first.n_cols, rows, first.fingerprints.clone())
    }
}
