//! Spatial lattice, CAR precision blocks and the adjacency spectrum.
//!
//! The adjacency spectrum is computed once when a graph is built. All
//! determinant evaluations and the admissible range of the spatial
//! dependence parameter are derived from it.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues smaller than this in magnitude are treated as zero when
/// deriving the admissible interval for zeta.
const ZERO_EIGENVALUE: f64 = 1e-12;

/// Undirected lattice with a cached adjacency spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    neighbors: Vec<Vec<usize>>,
    eigenvalues: Vec<f64>,
}

impl SpatialGraph {
    /// Build from per-node neighbor lists (0-based). Lists must already be
    /// symmetric; duplicates are removed.
    pub fn from_neighbor_lists(mut neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        for (i, list) in neighbors.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if let Some(&j) = list.iter().find(|&&j| j >= n) {
                return Err(Error::Graph(format!(
                    "node {} lists neighbor {} but the graph has {n} nodes",
                    i + 1,
                    j + 1
                )));
            }
            if list.binary_search(&i).is_ok() {
                return Err(Error::Graph(format!("node {} is its own neighbor", i + 1)));
            }
        }
        for (i, list) in neighbors.iter().enumerate() {
            for &j in list {
                if neighbors[j].binary_search(&i).is_err() {
                    return Err(Error::Graph(format!(
                        "asymmetric adjacency: {} lists {} but not the reverse",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let eigenvalues = adjacency_spectrum(&neighbors)?;
        Ok(Self {
            neighbors,
            eigenvalues,
        })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Graph(format!(
                    "edge ({a}, {b}) out of range for {n} nodes"
                )));
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        Self::from_neighbor_lists(neighbors)
    }

    pub fn n_locations(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Adjacency eigenvalues, ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn adjacency_dense(&self) -> DMatrix<f64> {
        let n = self.n_locations();
        let mut a = DMatrix::zeros(n, n);
        for (i, list) in self.neighbors.iter().enumerate() {
            for &j in list {
                a[(i, j)] = 1.0;
            }
        }
        a
    }

    /// Graph with node `i` renamed to `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_locations();
        if perm.len() != n {
            return Err(Error::Dimension(format!(
                "permutation of length {} for {n} nodes",
                perm.len()
            )));
        }
        let mut neighbors = vec![Vec::new(); n];
        for (i, list) in self.neighbors.iter().enumerate() {
            neighbors[perm[i]] = list.iter().map(|&j| perm[j]).collect();
        }
        Self::from_neighbor_lists(neighbors)
    }
}

/// Sorted adjacency eigenvalues, computed per connected component. The
/// dense QR iteration can return NaN on large, very sparse reducible
/// matrices; splitting into blocks avoids that, and a diagonal shift is
/// tried if a block still fails.
fn adjacency_spectrum(neighbors: &[Vec<usize>]) -> Result<Vec<f64>> {
    let n = neighbors.len();
    let mut seen = vec![false; n];
    let mut ev = Vec::with_capacity(n);
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut members = vec![root];
        let mut k = 0;
        while k < members.len() {
            for &j in &neighbors[members[k]] {
                if !seen[j] {
                    seen[j] = true;
                    members.push(j);
                }
            }
            k += 1;
        }
        if members.len() == 1 {
            ev.push(0.0);
            continue;
        }
        members.sort_unstable();
        let m = members.len();
        let mut a = DMatrix::<f64>::zeros(m, m);
        for (r, &i) in members.iter().enumerate() {
            for &j in &neighbors[i] {
                a[(r, members.binary_search(&j).expect("component is closed"))] = 1.0;
            }
        }
        let block: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
        if block.iter().all(|v| v.is_finite()) {
            ev.extend(block);
            continue;
        }
        let shift = 1.0 + neighbors.iter().map(Vec::len).max().unwrap_or(0) as f64;
        let shifted = SymmetricEigen::new(a + DMatrix::identity(m, m) * shift).eigenvalues;
        if shifted.iter().any(|v| !v.is_finite()) {
            return Err(Error::Graph("adjacency eigensolver did not converge".into()));
        }
        ev.extend(shifted.iter().map(|v| v - shift));
    }
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Rook-neighborhood lattice wrapped on a torus. Node `(r, c)` has index
/// `r * cols + c`.
pub fn build_torus_lattice(rows: usize, cols: usize) -> Result<SpatialGraph> {
    if rows < 3 || cols < 3 {
        return Err(Error::Graph(format!(
            "torus lattice needs rows >= 3 and cols >= 3, got {rows} x {cols}"
        )));
    }
    let idx = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::with_capacity(2 * rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            edges.push((idx(r, c), idx((r + 1) % rows, c)));
            edges.push((idx(r, c), idx(r, (c + 1) % cols)));
        }
    }
    SpatialGraph::from_edges(rows * cols, &edges)
}

/// A parsed graph file together with any one-sided neighbor listings that
/// were repaired by symmetrization.
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: SpatialGraph,
    /// 1-based `(node, neighbor)` pairs listed in only one direction.
    pub asymmetric_pairs: Vec<(usize, usize)>,
}

/// Read a graph file: first line the node count, then
/// `<node-id> <num-neighbors> <neighbor-id>...` per node (1-based).
/// Blank lines and `#` comments are ignored. With `strict` set, one-sided
/// neighbor listings are an error; otherwise they are reported and the
/// adjacency is symmetrized.
pub fn load_graph(path: impl AsRef<Path>, strict: bool) -> Result<LoadedGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_graph(&text, path, strict)
}

pub fn parse_graph(text: &str, path: &Path, strict: bool) -> Result<LoadedGraph> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (first_no, first) = lines
        .next()
        .ok_or_else(|| perr(1, "empty graph file".into()))?;
    let n: usize = first
        .split_whitespace()
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| perr(first_no, format!("expected node count, found {first:?}")))?;

    let mut listed: Vec<Option<Vec<usize>>> = vec![None; n];
    for (line_no, line) in lines {
        let fields: Vec<usize> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| perr(line_no, format!("not a non-negative integer: {t:?}")))
            })
            .collect::<Result<_>>()?;
        if fields.len() < 2 {
            return Err(perr(line_no, "expected <node-id> <num-neighbors> ...".into()));
        }
        let (node, count) = (fields[0], fields[1]);
        if node == 0 || node > n {
            return Err(perr(line_no, format!("node id {node} out of range 1..={n}")));
        }
        if fields.len() != count + 2 {
            return Err(perr(
                line_no,
                format!(
                    "node {node} declares {count} neighbors but lists {}",
                    fields.len() - 2
                ),
            ));
        }
        let mut nbrs = Vec::with_capacity(count);
        for &j in &fields[2..] {
            if j == 0 || j > n {
                return Err(perr(line_no, format!("neighbor id {j} out of range 1..={n}")));
            }
            if j == node {
                return Err(perr(line_no, format!("node {node} lists itself")));
            }
            nbrs.push(j - 1);
        }
        if listed[node - 1].is_some() {
            return Err(perr(line_no, format!("node {node} listed twice")));
        }
        listed[node - 1] = Some(nbrs);
    }

    let mut neighbors: Vec<Vec<usize>> = listed.into_iter().map(Option::unwrap_or_default).collect();
    for list in &mut neighbors {
        list.sort_unstable();
        list.dedup();
    }
    let mut asymmetric_pairs = Vec::new();
    for i in 0..n {
        for k in 0..neighbors[i].len() {
            let j = neighbors[i][k];
            if neighbors[j].binary_search(&i).is_err() {
                asymmetric_pairs.push((i + 1, j + 1));
            }
        }
    }
    if !asymmetric_pairs.is_empty() {
        if strict {
            let (a, b) = asymmetric_pairs[0];
            return Err(Error::Graph(format!(
                "{}: node {a} lists {b} but not the reverse ({} one-sided listings)",
                path.display(),
                asymmetric_pairs.len()
            )));
        }
        for &(a, b) in &asymmetric_pairs {
            let list = &mut neighbors[b - 1];
            if let Err(pos) = list.binary_search(&(a - 1)) {
                list.insert(pos, a - 1);
            }
        }
    }
    Ok(LoadedGraph {
        graph: SpatialGraph::from_neighbor_lists(neighbors)?,
        asymmetric_pairs,
    })
}

/// Open interval of admissible zeta values for the precision `I - zeta N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZetaBounds {
    pub lower: f64,
    pub upper: f64,
}

impl ZetaBounds {
    pub fn contains(&self, zeta: f64) -> bool {
        zeta > self.lower && zeta < self.upper
    }

    /// True when the graph has no edges, so every zeta is admissible.
    pub fn is_degenerate(&self) -> bool {
        self.lower == f64::NEG_INFINITY && self.upper == f64::INFINITY
    }

    /// Intersection with another interval.
    pub fn intersect(&self, lower: f64, upper: f64) -> ZetaBounds {
        ZetaBounds {
            lower: self.lower.max(lower),
            upper: self.upper.min(upper),
        }
    }
}

/// A spatial graph together with the derived bounds on zeta.
#[derive(Debug, Clone)]
pub struct CarStructure {
    graph: Arc<SpatialGraph>,
    zeta_bounds: ZetaBounds,
}

impl CarStructure {
    pub fn new(graph: SpatialGraph) -> Self {
        Self::from_shared(Arc::new(graph))
    }

    pub fn from_shared(graph: Arc<SpatialGraph>) -> Self {
        let ev = graph.eigenvalues();
        let lmin = ev.first().copied().unwrap_or(0.0);
        let lmax = ev.last().copied().unwrap_or(0.0);
        let lower = if lmin < -ZERO_EIGENVALUE {
            1.0 / lmin
        } else {
            f64::NEG_INFINITY
        };
        let upper = if lmax > ZERO_EIGENVALUE {
            1.0 / lmax
        } else {
            f64::INFINITY
        };
        Self {
            graph,
            zeta_bounds: ZetaBounds { lower, upper },
        }
    }

    pub fn graph(&self) -> &SpatialGraph {
        &self.graph
    }

    pub fn shared_graph(&self) -> Arc<SpatialGraph> {
        Arc::clone(&self.graph)
    }

    pub fn n_locations(&self) -> usize {
        self.graph.n_locations()
    }

    pub fn zeta_bounds(&self) -> ZetaBounds {
        self.zeta_bounds
    }

    pub fn check_zeta(&self, zeta: f64) -> Result<()> {
        let b = self.zeta_bounds;
        if !zeta.is_finite() {
            return Err(Error::Inadmissible(format!("zeta = {zeta}")));
        }
        if zeta <= b.lower {
            return Err(Error::ZetaOutOfBounds {
                zeta,
                bound: b.lower,
                side: "lower",
            });
        }
        if zeta >= b.upper {
            return Err(Error::ZetaOutOfBounds {
                zeta,
                bound: b.upper,
                side: "upper",
            });
        }
        Ok(())
    }

    /// The block precision `(1/tau2) (I - zeta N)`.
    pub fn precision_block(&self, zeta: f64, tau2: f64) -> Result<CarPrecision<'_>> {
        self.check_zeta(zeta)?;
        check_tau2(tau2)?;
        Ok(CarPrecision {
            graph: &self.graph,
            diag: 1.0 / tau2,
            off: -zeta / tau2,
        })
    }

    /// Log-determinant of the precision over `t_blocks` independent time
    /// blocks, from the cached spectrum:
    /// `T * (-n log tau2 + sum_j log(1 - zeta lambda_j))`.
    pub fn logdet_precision(&self, zeta: f64, tau2: f64, t_blocks: usize) -> Result<f64> {
        check_tau2(tau2)?;
        let mut acc = 0.0;
        for &lam in self.graph.eigenvalues() {
            let factor = 1.0 - zeta * lam;
            if factor <= 0.0 {
                return Err(Error::Domain(format!(
                    "1 - zeta * lambda = {factor} <= 0 for zeta = {zeta}, lambda = {lam}"
                )));
            }
            acc += factor.ln();
        }
        let n = self.graph.n_locations() as f64;
        Ok(t_blocks as f64 * (acc - n * tau2.ln()))
    }

    /// Marginal covariance `tau2 (I - zeta N)^{-1}`, dense.
    pub fn covariance_dense(&self, zeta: f64, tau2: f64) -> Result<DMatrix<f64>> {
        let q = self.precision_block(zeta, tau2)?.to_dense();
        let n = q.nrows();
        q.cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::NotPositiveDefinite(format!("CAR precision ({n} x {n})")))
    }
}

fn check_tau2(tau2: f64) -> Result<()> {
    if tau2 > 0.0 && tau2.is_finite() {
        Ok(())
    } else {
        Err(Error::Inadmissible(format!("tau2 must be positive, got {tau2}")))
    }
}

/// Sparse symmetric CAR precision block: `diag` on the diagonal and `off`
/// at every neighbor pair.
#[derive(Debug, Clone, Copy)]
pub struct CarPrecision<'a> {
    graph: &'a SpatialGraph,
    diag: f64,
    off: f64,
}

impl CarPrecision<'_> {
    pub fn dim(&self) -> usize {
        self.graph.n_locations()
    }

    pub fn diagonal(&self) -> f64 {
        self.diag
    }

    pub fn off_diagonal(&self) -> f64 {
        self.off
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag
        } else if self.graph.is_adjacent(i, j) {
            self.off
        } else {
            0.0
        }
    }

    /// `out = Q x`.
    pub fn mul_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let s: f64 = self.graph.neighbors(i).iter().map(|&j| x[j]).sum();
            *o = self.diag * x[i] + self.off * s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.mul_into(x, &mut out);
        out
    }

    /// `x' Q x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            let s: f64 = self.graph.neighbors(i).iter().map(|&j| x[j]).sum();
            acc += xi * (self.diag * xi + self.off * s);
        }
        acc
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut q = DMatrix::from_diagonal(&DVector::from_element(n, self.diag));
        for i in 0..n {
            for &j in self.graph.neighbors(i) {
                q[(i, j)] = self.off;
            }
        }
        q
    }
}
