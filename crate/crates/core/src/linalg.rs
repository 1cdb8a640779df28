//! Block-sparse normal equations with a fill-reducing block ordering.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

/// Symmetric block system `H x = b` assembled from per-factor contributions.
pub(crate) struct BlockSystem {
    dims: Vec<usize>,
    /// Scalar offset of each block after reordering.
    offsets: Vec<usize>,
    n: usize,
    /// Accumulated blocks keyed by (row block, col block), upper triangle in
    /// the original block numbering.
    blocks: BTreeMap<(usize, usize), DMatrix<f64>>,
    rhs: DVector<f64>,
}

impl BlockSystem {
    /// `pattern` lists the block pairs that can be non-zero.
    pub fn new(dims: &[usize], pattern: &[(usize, usize)]) -> Self {
        let perm = block_ordering(dims.len(), pattern);
        let mut offsets = vec![0; dims.len()];
        let mut acc = 0;
        for &b in &perm {
            offsets[b] = acc;
            acc += dims[b];
        }
        Self {
            dims: dims.to_vec(),
            offsets,
            n: acc,
            blocks: BTreeMap::new(),
            rhs: DVector::zeros(acc),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn clear(&mut self) {
        self.blocks.clear();
        self.rhs.fill(0.0);
    }

    /// Adds `w J_a^T J_b` for every pair of Jacobian blocks and `w J_a^T r`
    /// to the right-hand side (as the gradient `g`).
    pub fn add_factor(&mut self, jacobians: &[(usize, DMatrix<f64>)], residual: &DVector<f64>, weight: f64) {
        for (ia, (ba, ja)) in jacobians.iter().enumerate() {
            let g = ja.transpose() * residual * weight;
            let off = self.offsets[*ba];
            let mut seg = self.rhs.rows_mut(off, self.dims[*ba]);
            seg += g;
            for (bb, jb) in jacobians.iter().skip(ia) {
                let (key, block) = if ba <= bb {
                    ((*ba, *bb), ja.transpose() * jb * weight)
                } else {
                    ((*bb, *ba), jb.transpose() * ja * weight)
                };
                let entry = self.blocks.entry(key).or_insert_with(|| DMatrix::zeros(block.nrows(), block.ncols()));
                *entry += &block;
            }
        }
    }

    /// Gradient in the original variable order.
    pub fn gradient(&self) -> DVector<f64> {
        self.unpermute(&self.rhs)
    }

    /// Solves `(H + lambda D) x = -g`, `D = max(diag(H), floor)`.
    /// Returns the step in the original variable order, or `None` when the
    /// damped system is not positive definite.
    pub fn solve_damped(&self, lambda: f64) -> Option<DVector<f64>> {
        let mut coo = CooMatrix::new(self.n, self.n);
        let mut diag = vec![0.0; self.n];
        for (&(ba, bb), m) in &self.blocks {
            let (oa, ob) = (self.offsets[ba], self.offsets[bb]);
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    let v = m[(i, j)];
                    if ba == bb {
                        if i == j {
                            diag[oa + i] = v;
                        } else {
                            coo.push(oa + i, ob + j, v);
                        }
                    } else {
                        coo.push(oa + i, ob + j, v);
                        coo.push(ob + j, oa + i, v);
                    }
                }
            }
        }
        for (i, d) in diag.iter().enumerate() {
            coo.push(i, i, d + lambda * d.max(1e-6));
        }
        let h = CscMatrix::from(&coo);
        let chol = CscCholesky::factor(&h).ok()?;
        let neg_g = DMatrix::from_column_slice(self.n, 1, (-&self.rhs).as_slice());
        let x = chol.solve(&neg_g);
        let step = DVector::from_column_slice(x.as_slice());
        if step.iter().all(|v| v.is_finite()) {
            Some(self.unpermute(&step))
        } else {
            None
        }
    }

    fn unpermute(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        let mut k = 0;
        for (b, &d) in self.dims.iter().enumerate() {
            let off = self.offsets[b];
            out.rows_mut(k, d).copy_from(&v.rows(off, d));
            k += d;
        }
        out
    }
}

/// Approximate minimum degree ordering of the block adjacency graph.
/// Falls back to the natural order if the ordering routine rejects the input.
fn block_ordering(n: usize, pattern: &[(usize, usize)]) -> Vec<usize> {
    if n <= 2 {
        return (0..n).collect();
    }
    let mut cols: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for &(a, b) in pattern {
        if a != b {
            cols[a].push(b);
            cols[b].push(a);
        }
    }
    let mut ap = Vec::with_capacity(n + 1);
    let mut ai = Vec::new();
    ap.push(0usize);
    for col in &mut cols {
        col.sort_unstable();
        col.dedup();
        ai.extend_from_slice(col);
        ap.push(ai.len());
    }
    match amd::order(n, &ap, &ai, &amd::Control::default()) {
        Ok((p, _, _)) => p,
        Err(_) => (0..n).collect(),
    }
}
