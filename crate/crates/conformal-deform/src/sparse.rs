//! Sparse symmetric linear algebra for the desk-scale systems in this crate.
//!
//! Saddle-point metrics and the condensed Stokes system are factorized by a
//! profile (skyline) LDL^T without pivoting. Stability comes from the
//! quasi-definite structure: every row carries an expected pivot sign
//! (+ for primal unknowns, - for multipliers and pressures), tiny pivots are
//! replaced by sign-directed regularization, and iterative refinement
//! against the exact matrix restores the solution to near machine accuracy.
//! Rows are ordered by reverse Cuthill-McKee with dense constraint rows
//! pushed last so the profile stays narrow.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("matrix is structurally singular at row {0}")]
    Singular(usize),
    #[error("iterative refinement stalled at relative residual {0:e}")]
    Refinement(f64),
    #[error("dimension mismatch: matrix is {n}x{n}, vector has {len}")]
    Dimension { n: usize, len: usize },
}

/// Compressed sparse row matrix. Entries within a row are sorted by column.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    /// Build from (row, col, value) triplets, summing duplicates.
    /// Accumulation order is fixed by the sort, so the result is
    /// deterministic no matter how the triplets were produced.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut t: Vec<(usize, usize, f64)>) -> Csr {
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut rows = Vec::with_capacity(t.len());
        let mut indices = Vec::with_capacity(t.len());
        let mut data: Vec<f64> = Vec::with_capacity(t.len());
        for &(r, c, v) in &t {
            debug_assert!(r < n_rows && c < n_cols);
            if rows.last() == Some(&r) && indices.last() == Some(&c) {
                *data.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                indices.push(c);
                data.push(v);
            }
        }
        let mut indptr = vec![0usize; n_rows + 1];
        for &r in &rows {
            indptr[r + 1] += 1;
        }
        for i in 0..n_rows {
            indptr[i + 1] += indptr[i];
        }
        Csr { n_rows, n_cols, indptr, indices, data }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        let mut y = vec![0.0; self.n_rows];
        for r in 0..self.n_rows {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            y[r] = acc;
        }
        y
    }

    /// u^T A v.
    pub fn quadratic_form(&self, u: &[f64], v: &[f64]) -> f64 {
        assert_eq!(u.len(), self.n_rows);
        assert_eq!(v.len(), self.n_cols);
        let mut acc = 0.0;
        for r in 0..self.n_rows {
            let mut row = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                row += self.data[k] * v[self.indices[k]];
            }
            acc += u[r] * row;
        }
        acc
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        match self.indices[lo..hi].binary_search(&c) {
            Ok(k) => self.data[lo + k],
            Err(_) => 0.0,
        }
    }

    /// Scale: A <- A * s.
    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// A + s * B on matching dimensions (patterns may differ).
    pub fn add_scaled(&self, other: &Csr, s: f64) -> Csr {
        assert_eq!(self.n_rows, other.n_rows);
        assert_eq!(self.n_cols, other.n_cols);
        let mut t = Vec::with_capacity(self.data.len() + other.data.len());
        for r in 0..self.n_rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                t.push((r, self.indices[k], self.data[k]));
            }
            for k in other.indptr[r]..other.indptr[r + 1] {
                t.push((r, other.indices[k], s * other.data[k]));
            }
        }
        Csr::from_triplets(self.n_rows, self.n_cols, t)
    }

    /// MatrixMarket coordinate format (1-based, general symmetry not assumed).
    pub fn to_matrix_market(&self) -> String {
        let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
        s.push_str(&format!("{} {} {}\n", self.n_rows, self.n_cols, self.data.len()));
        for r in 0..self.n_rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                s.push_str(&format!("{} {} {}\n", r + 1, self.indices[k] + 1, self.data[k]));
            }
        }
        s
    }
}

/// Reverse Cuthill-McKee ordering of an undirected graph given as adjacency
/// lists. Returns `order` with `order[new] = old`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let degree = |i: usize| adj[i].len();

    // Pseudo-peripheral start: begin at a min-degree node, then restart the
    // BFS from the farthest level once.
    let mut remaining: Vec<usize> = (0..n).collect();
    remaining.sort_by_key(|&i| degree(i));
    for &seed in &remaining {
        if visited[seed] {
            continue;
        }
        let start = {
            let mut s = seed;
            for _ in 0..2 {
                let mut level = vec![usize::MAX; n];
                level[s] = 0;
                let mut queue = std::collections::VecDeque::from([s]);
                let mut last = s;
                while let Some(u) = queue.pop_front() {
                    last = u;
                    for &v in &adj[u] {
                        if !visited[v] && level[v] == usize::MAX {
                            level[v] = level[u] + 1;
                            queue.push_back(v);
                        }
                    }
                }
                s = last;
            }
            s
        };
        let mut queue = std::collections::VecDeque::from([start]);
        visited[start] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree(v), v));
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Skyline LDL^T factorization of a symmetric matrix with a fixed ordering
/// and sign-directed pivot regularization, wrapped with iterative
/// refinement against the exact CSR matrix.
pub struct SymmetricSolver {
    n: usize,
    perm: Vec<usize>,  // perm[new] = old
    first: Vec<usize>, // first column of each profile row
    rowptr: Vec<usize>,
    factor: Vec<f64>, // unit-lower profile entries, diagonal in `diag`
    diag: Vec<f64>,
    matrix: Csr,
    pub rel_tol: f64,
}

impl SymmetricSolver {
    /// `signs[i]` is +1 for rows expected to carry a positive pivot and -1
    /// for multiplier/pressure rows. `perm[new] = old` fixes the elimination
    /// order (see [`reverse_cuthill_mckee`]).
    pub fn new(matrix: Csr, perm: Vec<usize>, signs: &[f64]) -> Result<SymmetricSolver, SolverError> {
        let n = matrix.n_rows;
        assert_eq!(matrix.n_cols, n);
        assert_eq!(perm.len(), n);
        assert_eq!(signs.len(), n);
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        // Profile of the permuted matrix: first[i] = min column index in row i
        // (symmetrized), capped at i.
        let mut first: Vec<usize> = (0..n).collect();
        for r in 0..n {
            let pr = iperm[r];
            for k in matrix.indptr[r]..matrix.indptr[r + 1] {
                let pc = iperm[matrix.indices[k]];
                let (lo, hi) = (pr.min(pc), pr.max(pc));
                if lo < first[hi] {
                    first[hi] = lo;
                }
            }
        }
        let mut rowptr = vec![0usize; n + 1];
        for i in 0..n {
            rowptr[i + 1] = rowptr[i] + (i - first[i]);
        }
        let mut profile = vec![0.0f64; rowptr[n]];
        let mut diag = vec![0.0f64; n];
        for r in 0..n {
            let pr = iperm[r];
            for k in matrix.indptr[r]..matrix.indptr[r + 1] {
                let pc = iperm[matrix.indices[k]];
                if pc == pr {
                    diag[pr] = matrix.data[k];
                } else if pc < pr {
                    profile[rowptr[pr] + (pc - first[pr])] = matrix.data[k];
                }
                // Upper entries are the transposes of lower ones; the input
                // must be symmetric so they carry the same value.
            }
        }

        let scale = diag.iter().fold(0.0f64, |m, &d| m.max(d.abs())).max(1.0);
        let reg = 1e-13 * scale;

        // In-place LDL^T over the profile.
        let mut d = vec![0.0f64; n];
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let mut sum = profile[rowptr[i] + (j - first[i])];
                for k in lo..j {
                    sum -= profile[rowptr[i] + (k - first[i])]
                        * d[k]
                        * profile[rowptr[j] + (k - first[j])];
                }
                if d[j] == 0.0 {
                    return Err(SolverError::Singular(j));
                }
                profile[rowptr[i] + (j - first[i])] = sum / d[j];
            }
            let mut dd = diag[i];
            for k in fi..i {
                let l = profile[rowptr[i] + (k - first[i])];
                dd -= l * l * d[k];
            }
            let sign = signs[perm[i]];
            if dd.abs() < reg || dd * sign < 0.0 {
                dd = sign * reg.max(dd.abs() * 1e-2);
            }
            d[i] = dd;
        }

        Ok(SymmetricSolver {
            n,
            perm,
            first,
            rowptr,
            factor: profile,
            diag: d,
            matrix,
            rel_tol: 1e-12,
        })
    }

    fn solve_factored(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0f64; n];
        for i in 0..n {
            y[i] = b[self.perm[i]];
        }
        for i in 0..n {
            let mut sum = y[i];
            for k in self.first[i]..i {
                sum -= self.factor[self.rowptr[i] + (k - self.first[i])] * y[k];
            }
            y[i] = sum;
        }
        for i in 0..n {
            y[i] /= self.diag[i];
        }
        for i in (0..n).rev() {
            let yi = y[i];
            for k in self.first[i]..i {
                y[k] -= self.factor[self.rowptr[i] + (k - self.first[i])] * yi;
            }
        }
        let mut x = vec![0.0f64; n];
        for i in 0..n {
            x[self.perm[i]] = y[i];
        }
        x
    }

    /// Solve to `rel_tol` relative residual via iterative refinement.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, SolverError> {
        if b.len() != self.n {
            return Err(SolverError::Dimension { n: self.n, len: b.len() });
        }
        let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm_b == 0.0 {
            return Ok(vec![0.0; self.n]);
        }
        let mut x = self.solve_factored(b);
        let mut best_rel = f64::INFINITY;
        for _ in 0..20 {
            let ax = self.matrix.matvec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let rel = r.iter().map(|v| v * v).sum::<f64>().sqrt() / norm_b;
            if rel <= self.rel_tol {
                return Ok(x);
            }
            if rel >= best_rel * 0.5 {
                // stalled
                if rel <= 1e-9 {
                    return Ok(x);
                }
                return Err(SolverError::Refinement(rel));
            }
            best_rel = rel;
            let dx = self.solve_factored(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        let ax = self.matrix.matvec(&x);
        let rel = b
            .iter()
            .zip(&ax)
            .map(|(bi, ai)| (bi - ai) * (bi - ai))
            .sum::<f64>()
            .sqrt()
            / norm_b;
        if rel <= 1e-9 {
            Ok(x)
        } else {
            Err(SolverError::Refinement(rel))
        }
    }

    pub fn matrix(&self) -> &Csr {
        &self.matrix
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn dense_to_csr(a: &[Vec<f64>]) -> Csr {
        let n = a.len();
        let mut t = Vec::new();
        for (i, row) in a.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Csr::from_triplets(n, n, t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = Csr::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 1, 5.0), (0, 1, -1.0)]);
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.get(0, 1), -1.0);
        assert_eq!(a.get(1, 0), 0.0);
        assert_eq!(a.get(1, 1), 5.0);
    }

    #[test]
    fn solves_random_spd_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 40;
        let mut a = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in 0..i {
                if rng.random::<f64>() < 0.2 {
                    let v = rng.random::<f64>() - 0.5;
                    a[i][j] = v;
                    a[j][i] = v;
                }
            }
        }
        for (i, row) in a.iter_mut().enumerate() {
            let off: f64 = row.iter().map(|v| v.abs()).sum();
            row[i] = off + 1.0;
        }
        let csr = dense_to_csr(&a);
        let adj: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| j != i && a[i][j] != 0.0).collect())
            .collect();
        let perm = reverse_cuthill_mckee(&adj);
        let solver = SymmetricSolver::new(csr.clone(), perm, &vec![1.0; n]).unwrap();
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = csr.matvec(&x_true);
        let x = solver.solve(&b).unwrap();
        for (xi, ti) in x.iter().zip(&x_true) {
            assert!((xi - ti).abs() < 1e-9, "{xi} vs {ti}");
        }
    }

    #[test]
    fn solves_saddle_point_with_trailing_multiplier() {
        // [[A, c], [c^T, 0]] with A SPD: multiplier row gets sign -1 and is
        // ordered last.
        let n = 12;
        let mut a = vec![vec![0.0f64; n + 1]; n + 1];
        for i in 0..n {
            a[i][i] = 2.0;
            if i + 1 < n {
                a[i][i + 1] = -1.0;
                a[i + 1][i] = -1.0;
            }
            a[i][n] = 1.0;
            a[n][i] = 1.0;
        }
        let csr = dense_to_csr(&a);
        let perm: Vec<usize> = (0..=n).collect();
        let mut signs = vec![1.0; n + 1];
        signs[n] = -1.0;
        let solver = SymmetricSolver::new(csr.clone(), perm, &signs).unwrap();
        let mut b = vec![1.0; n + 1];
        b[n] = 0.0;
        let x = solver.solve(&b).unwrap();
        let res = csr.matvec(&x);
        for (ri, bi) in res.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-10);
        }
        // constraint row satisfied
        let sum: f64 = x[..n].iter().sum();
        assert!(sum.abs() < 1e-10);
    }

    #[test]
    fn rcm_reduces_bandwidth_on_path_graph_shuffle() {
        let n = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut label: Vec<usize> = (0..n).collect();
        label.shuffle(&mut rng);
        let mut adj = vec![Vec::new(); n];
        for i in 0..n - 1 {
            let (a, b) = (label[i], label[i + 1]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let order = reverse_cuthill_mckee(&adj);
        let mut iperm = vec![0usize; n];
        for (new, &old) in order.iter().enumerate() {
            iperm[old] = new;
        }
        let mut bw = 0;
        for i in 0..n {
            for &j in &adj[i] {
                bw = bw.max((iperm[i] as isize - iperm[j] as isize).abs());
            }
        }
        assert_eq!(bw, 1);
    }

    #[test]
    fn matrix_market_format() {
        let a = Csr::from_triplets(2, 2, vec![(0, 0, 1.5), (1, 0, -2.0)]);
        let s = a.to_matrix_market();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), "%%MatrixMarket matrix coordinate real general");
        assert_eq!(lines.next().unwrap(), "2 2 2");
        assert_eq!(lines.next().unwrap(), "1 1 1.5");
        assert_eq!(lines.next().unwrap(), "2 1 -2");
    }
}
