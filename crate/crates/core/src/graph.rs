//! Episode graph construction and feature diffusion.
//!
//! Pipeline: cosine similarity over stacked features, k-largest
//! sparsification (union of row and column keep sets), symmetric degree
//! normalization `E = D^-1/2 S D^-1/2`, then `V_new = (alpha I + E)^kappa V`
//! evaluated as `kappa` successive block multiplies.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cosine similarity over episode vertices with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: Array2<f64>,
}

impl SimilarityMatrix {
    /// Wraps a precomputed matrix after checking symmetry, zero diagonal and
    /// the `[0, 1]` range.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let (m, m2) = values.dim();
        if m != m2 {
            return Err(Error::Shape(format!("similarity matrix is {m}x{m2}")));
        }
        for i in 0..m {
            if values[[i, i]] != 0.0 {
                return Err(Error::validation(format!("diagonal entry {i} is nonzero")));
            }
            for j in 0..m {
                let v = values[[i, j]];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::validation(format!(
                        "entry ({i}, {j}) = {v} outside [0, 1]"
                    )));
                }
                if v != values[[j, i]] {
                    return Err(Error::validation(format!("entry ({i}, {j}) is not symmetric")));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Compressed sparse rows, square.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    fn from_dense(dense: &Array2<f64>) -> Self {
        let n = dense.nrows();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in dense.rows() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out[[i, j]] = v;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Dense(Array2<f64>),
    Sparse(CsrMatrix),
}

/// `E = D^-1/2 S D^-1/2`. Rows/columns of zero-degree vertices are zero.
///
/// Stored sparse when at most half the entries are nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    storage: Storage,
    degrees: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse(_))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense(d) => d[[i, j]],
            Storage::Sparse(s) => s.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match &self.storage {
            Storage::Dense(d) => d.clone(),
            Storage::Sparse(s) => s.to_dense(),
        }
    }

    /// `E * x` for an `m x h` block.
    pub fn multiply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.len() {
            return Err(Error::Shape(format!(
                "adjacency is {m}x{m}, feature block has {} rows",
                x.nrows(),
                m = self.len()
            )));
        }
        Ok(match &self.storage {
            Storage::Dense(d) => d.dot(&x),
            Storage::Sparse(s) => {
                let mut out = Array2::zeros(x.raw_dim());
                for (i, mut out_row) in out.axis_iter_mut(Axis(0)).enumerate() {
                    for (j, w) in s.row(i) {
                        out_row.scaled_add(w, &x.row(j));
                    }
                }
                out
            }
        })
    }
}

/// Neighbor count `k`, diffusion power `kappa` and self weight `alpha`.
///
/// `kappa = 0` is accepted and turns propagation into the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    pub k: usize,
    pub kappa: u32,
    pub alpha: f64,
}

impl PropagationParams {
    pub fn new(k: usize, kappa: u32, alpha: f64) -> Result<Self> {
        let p = Self { k, kappa, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::validation("k must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::validation(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Pairwise cosine similarity with zero diagonal. All-zero rows have
/// similarity 0 to every other row.
pub fn cosine_similarity_matrix(v: ArrayView2<'_, f64>) -> Result<SimilarityMatrix> {
    let (m, _) = v.dim();
    if m < 2 {
        return Err(Error::validation(format!("need at least 2 vertices, got {m}")));
    }
    for ((row, col), x) in v.indexed_iter() {
        if !x.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
    }
    let mut unit = v.to_owned();
    for mut row in unit.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    let mut values = Array2::zeros((m, m));
    for i in 0..m {
        for j in i + 1..m {
            let s = unit.row(i).dot(&unit.row(j)).clamp(0.0, 1.0);
            values[[i, j]] = s;
            values[[j, i]] = s;
        }
    }
    Ok(SimilarityMatrix { values })
}

/// Off-diagonal columns of row `i` ranked by value (descending), ties to the
/// smaller column index, truncated to `k`.
fn top_k_columns(values: &Array2<f64>, i: usize, k: usize) -> Vec<usize> {
    let row = values.row(i);
    let mut cols: Vec<usize> = (0..row.len()).filter(|&j| j != i).collect();
    cols.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    cols.truncate(k);
    cols
}

/// Keeps `S[i][j]` iff it is among the `k` largest of row `i` or of column
/// `j`. For `k >= m - 1` the input is returned unchanged.
pub fn knn_sparsify(s: &SimilarityMatrix, k: usize) -> Result<SimilarityMatrix> {
    if k < 1 {
        return Err(Error::validation("k must be at least 1"));
    }
    let m = s.len();
    if k >= m.saturating_sub(1) {
        return Ok(s.clone());
    }
    let mut keep = Array2::from_elem((m, m), false);
    for i in 0..m {
        for j in top_k_columns(&s.values, i, k) {
            // S is symmetric: "top-k of column j" is "top-k of row j".
            keep[[i, j]] = true;
            keep[[j, i]] = true;
        }
    }
    let values = Array2::from_shape_fn((m, m), |(i, j)| {
        if keep[[i, j]] {
            s.values[[i, j]]
        } else {
            0.0
        }
    });
    Ok(SimilarityMatrix { values })
}

pub fn symmetric_normalize(s: &SimilarityMatrix) -> NormalizedAdjacency {
    let m = s.len();
    let degrees: Vec<f64> = s.values.rows().into_iter().map(|r| r.sum()).collect();
    let dense = Array2::from_shape_fn((m, m), |(i, j)| {
        let (di, dj) = (degrees[i], degrees[j]);
        if di > 0.0 && dj > 0.0 {
            s.values[[i, j]] / (di * dj).sqrt()
        } else {
            0.0
        }
    });
    let nnz = dense.iter().filter(|&&v| v != 0.0).count();
    let storage = if 2 * nnz <= m * m {
        Storage::Sparse(CsrMatrix::from_dense(&dense))
    } else {
        Storage::Dense(dense)
    };
    NormalizedAdjacency { storage, degrees }
}

/// `(alpha I + E)^kappa V` by repeated multiplication.
pub fn propagate(
    v: ArrayView2<'_, f64>,
    e: &NormalizedAdjacency,
    params: &PropagationParams,
) -> Result<Array2<f64>> {
    params.validate()?;
    if v.nrows() != e.len() {
        return Err(Error::Shape(format!(
            "feature block has {} rows, graph has {} vertices",
            v.nrows(),
            e.len()
        )));
    }
    let mut x = v.to_owned();
    for _ in 0..params.kappa {
        let mut next = e.multiply(x.view())?;
        next.scaled_add(params.alpha, &x);
        x = next;
    }
    Ok(x)
}

/// Cosine similarity, sparsification with `k` clamped to `m - 1`, then
/// normalization. Returns the sparsified similarity alongside `E`.
pub fn build_episode_graph(
    v: ArrayView2<'_, f64>,
    params: &PropagationParams,
) -> Result<(SimilarityMatrix, NormalizedAdjacency)> {
    params.validate()?;
    let s = cosine_similarity_matrix(v)?;
    let k = params.k.min(s.len() - 1);
    let sparse = knn_sparsify(&s, k)?;
    let e = symmetric_normalize(&sparse);
    Ok((sparse, e))
}

/// Vertex coordinates from the nontrivial low end of the spectrum of
/// `L = I - E`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianEmbedding {
    /// `m x dims`, column `c` is the unit eigenvector for `eigenvalues[c]`.
    pub coords: Array2<f64>,
    pub eigenvalues: Vec<f64>,
    /// Largest `||L x - lambda x||` over the returned pairs.
    pub residual: f64,
}

const EMBEDDING_RESIDUAL_TOL: f64 = 1e-6;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenvectors of `L = I - E` for the 2nd..(dims+1)-th smallest
/// eigenvalues, unit norm, with each vector's largest-magnitude entry made
/// positive.
///
/// The trivial vector `D^1/2 1` is shifted past the top of the spectrum
/// before solving, so on graphs with several components the first returned
/// coordinate is still orthogonal to it.
pub fn laplacian_embedding(e: &NormalizedAdjacency, dims: usize) -> Result<LaplacianEmbedding> {
    let m = e.len();
    if dims < 1 {
        return Err(Error::validation("embedding needs at least 1 dimension"));
    }
    if m < dims + 1 {
        return Err(Error::validation(format!(
            "{m} vertices cannot give a {dims}-dimensional embedding"
        )));
    }
    let mut lap = -e.to_dense();
    lap.diag_mut().mapv_inplace(|d| d + 1.0);

    let mut trivial: Vec<f64> = e.degrees().iter().map(|d| d.sqrt()).collect();
    let norm = trivial.iter().map(|x| x * x).sum::<f64>().sqrt();
    let skip = if norm > 0.0 {
        trivial.iter_mut().for_each(|x| *x /= norm);
        0
    } else {
        1
    };
    let mut shifted = lap.clone();
    if skip == 0 {
        // Spectrum of L is in [0, 2]; 3 pushes the trivial pair to the top.
        for i in 0..m {
            for j in 0..m {
                shifted[[i, j]] += 3.0 * trivial[i] * trivial[j];
            }
        }
    }

    let (vals, vecs) = jacobi_eigen(shifted, JACOBI_MAX_SWEEPS)?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));

    let mut coords = Array2::zeros((m, dims));
    let mut eigenvalues = Vec::with_capacity(dims);
    let mut residual: f64 = 0.0;
    for (c, &idx) in order.iter().skip(skip).take(dims).enumerate() {
        let mut x = vecs.column(idx).to_owned();
        let n = x.dot(&x).sqrt();
        x /= n;
        let pivot = x
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &v)| if v.abs() > best.1.abs() { (i, v) } else { best })
            .0;
        if x[pivot] < 0.0 {
            x.mapv_inplace(|v| -v);
        }
        let lx = lap.dot(&x);
        let lambda = x.dot(&lx);
        let r = (&lx - &(&x * lambda)).dot(&(&lx - &(&x * lambda))).sqrt();
        residual = residual.max(r);
        coords.column_mut(c).assign(&x);
        eigenvalues.push(lambda);
    }
    if residual > EMBEDDING_RESIDUAL_TOL {
        return Err(Error::NoConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
            residual,
        });
    }
    Ok(LaplacianEmbedding {
        coords,
        eigenvalues,
        residual,
    })
}

/// Cyclic Jacobi rotations on a dense symmetric matrix. Returns unsorted
/// eigenvalues and the matching eigenvectors as columns.
fn jacobi_eigen(mut a: Array2<f64>, max_sweeps: usize) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    let mut v = Array2::<f64>::eye(n);
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let off_norm = |a: &Array2<f64>| {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        off.sqrt()
    };
    for _ in 0..max_sweeps {
        if off_norm(&a) <= 1e-15 * scale {
            return Ok((a.diag().to_vec(), v));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let residual = off_norm(&a);
    if residual <= 1e-15 * scale {
        Ok((a.diag().to_vec(), v))
    } else {
        Err(Error::NoConvergence {
            sweeps: max_sweeps,
            residual,
        })
    }
}

/// CSV `vertex,label,x0,...` for external plotting.
pub fn embedding_csv(coords: ArrayView2<'_, f64>, labels: &[usize]) -> Result<String> {
    if coords.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} coordinate rows for {} labels",
            coords.nrows(),
            labels.len()
        )));
    }
    let mut out = String::from("vertex,label");
    for c in 0..coords.ncols() {
        write!(out, ",x{c}").unwrap();
    }
    out.push('\n');
    for (i, (row, label)) in coords.rows().into_iter().zip(labels).enumerate() {
        write!(out, "{i},{label}").unwrap();
        for x in row {
            write!(out, ",{x}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}
