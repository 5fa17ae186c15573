//! Undirected social networks.
//!
//! Graphs are stored as a dense boolean adjacency matrix together with
//! sorted neighbour lists. The dense matrix answers `a_ij` in O(1); the
//! lists drive every aggregation. Random geometric graphs keep the node
//! positions and the connection radius so that the distance rule can be
//! re-checked.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::SparseMatrix;

/// Square boolean matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl BoolMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.bits[i * self.n + j] = value;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.n..(i + 1) * self.n]
    }

    /// Column indices of the `true` entries in row `i`.
    pub fn row_indices(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(i)
            .iter()
            .enumerate()
            .filter_map(|(j, &b)| b.then_some(j))
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: BoolMatrix,
    neighbors: Vec<Vec<usize>>,
    positions: Option<Vec<[f64; 2]>>,
    radius: Option<f64>,
}

/// Degrees and the symmetric normalised adjacency `T^{-1/2} A T^{-1/2}`.
///
/// Rows and columns of isolated nodes are zero.
#[derive(Debug, Clone)]
pub struct DegreeInfo {
    pub degrees: Vec<usize>,
    pub normalized_adjacency: Arc<SparseMatrix>,
}

impl Graph {
    /// Graph on `n` nodes with no edges.
    pub fn empty(n: usize) -> Self {
        Self {
            adjacency: BoolMatrix::new(n),
            neighbors: vec![Vec::new(); n],
            positions: None,
            radius: None,
        }
    }

    /// Builds a graph from undirected edges. Duplicate edges are merged;
    /// self-loops and out-of-range endpoints are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(n);
        for &(i, j) in edges {
            g.add_edge(i, j)?;
        }
        g.sort_neighbors();
        Ok(g)
    }

    fn add_edge(&mut self, i: usize, j: usize) -> Result<()> {
        let n = self.n();
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
        }
        if i == j {
            return Err(Error::invalid(format!("self-loop at node {i}")));
        }
        if !self.adjacency.get(i, j) {
            self.adjacency.set(i, j, true);
            self.adjacency.set(j, i, true);
            self.neighbors[i].push(j);
            self.neighbors[j].push(i);
        }
        Ok(())
    }

    fn sort_neighbors(&mut self) {
        for list in &mut self.neighbors {
            list.sort_unstable();
        }
    }

    /// Path graph `0 - 1 - ... - (n-1)`.
    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges).expect("path edges are valid")
    }

    pub fn complete(n: usize) -> Self {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        Self::from_edges(n, &edges).expect("complete edges are valid")
    }

    /// Star with centre 0 and leaves `1..=leaves`.
    pub fn star(leaves: usize) -> Self {
        let edges: Vec<_> = (1..=leaves).map(|j| (0, j)).collect();
        Self::from_edges(leaves + 1, &edges).expect("star edges are valid")
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    #[inline]
    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency.get(i, j)
    }

    pub fn adjacency(&self) -> &BoolMatrix {
        &self.adjacency
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn mean_degree(&self) -> f64 {
        if self.n() == 0 {
            return 0.0;
        }
        2.0 * self.edge_count() as f64 / self.n() as f64
    }

    pub fn positions(&self) -> Option<&[[f64; 2]]> {
        self.positions.as_deref()
    }

    pub fn radius(&self) -> Option<f64> {
        self.radius
    }

    /// Undirected edges `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors.iter().enumerate().flat_map(|(i, list)| {
            list.iter().copied().filter(move |&j| j > i).map(move |j| (i, j))
        })
    }

    /// Relabels nodes: node `i` of `self` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        if perm.len() != n {
            return Err(Error::invalid("permutation length differs from node count"));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid("not a permutation"));
            }
        }
        let edges: Vec<_> = self.edges().map(|(i, j)| (perm[i], perm[j])).collect();
        let mut g = Self::from_edges(n, &edges)?;
        if let Some(pos) = &self.positions {
            let mut moved = vec![[0.0; 2]; n];
            for (i, p) in pos.iter().enumerate() {
                moved[perm[i]] = *p;
            }
            g.positions = Some(moved);
        }
        g.radius = self.radius;
        Ok(g)
    }

    /// Edge-list text form: a header `n=<count> radius=<r>` followed by one
    /// `i j` line per undirected edge (0-based, `i < j`). The radius is
    /// written as `none` when the graph was not built geometrically.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        let radius = match self.radius {
            Some(r) => format!("{r:?}"),
            None => "none".to_string(),
        };
        writeln!(out, "n={} radius={}", self.n(), radius)?;
        let mut buf = String::new();
        for (i, j) in self.edges() {
            buf.clear();
            writeln!(buf, "{i} {j}").expect("writing to a String cannot fail");
            out.write_all(buf.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_edge_list_string(&self) -> String {
        let mut out = Vec::new();
        self.write_edge_list(&mut out).expect("in-memory write");
        String::from_utf8(out).expect("edge list is ASCII")
    }

    pub fn read_edge_list<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty edge list".into()))??;
        let (n, radius) = parse_header(&header)?;
        let mut edges = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<usize> {
                s.ok_or_else(|| Error::Parse(format!("line {}: expected 'i j'", lineno + 2)))?
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))
            };
            let i = parse(parts.next())?;
            let j = parse(parts.next())?;
            edges.push((i, j));
        }
        let mut g = Self::from_edges(n, &edges)?;
        g.radius = radius;
        Ok(g)
    }
}

fn parse_header(header: &str) -> Result<(usize, Option<f64>)> {
    let mut n = None;
    let mut radius = None;
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("n", v)) => {
                n = Some(
                    v.parse::<usize>()
                        .map_err(|e| Error::Parse(format!("bad node count '{v}': {e}")))?,
                )
            }
            Some(("radius", "none")) => radius = None,
            Some(("radius", v)) => {
                radius = Some(
                    v.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad radius '{v}': {e}")))?,
                )
            }
            _ => return Err(Error::Parse(format!("unexpected header field '{field}'"))),
        }
    }
    let n = n.ok_or_else(|| Error::Parse("header is missing n=<count>".into()))?;
    Ok((n, radius))
}

/// Connection radius `(c / (π n))^{1/2}` of the random geometric graph.
pub fn rgg_radius(n: usize, c: f64) -> f64 {
    (c / (std::f64::consts::PI * n as f64)).sqrt()
}

#[inline]
fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Random geometric graph: `n` points uniform on the unit square, joined
/// whenever their Euclidean distance is at most `(c / (π n))^{1/2}`.
pub fn rgg_generate<R: Rng + ?Sized>(n: usize, c: f64, rng: &mut R) -> Result<Graph> {
    if n == 0 {
        return Err(Error::invalid("random geometric graph needs n >= 1"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("radius constant must be positive, got {c}")));
    }
    let radius = rgg_radius(n, c);
    let positions: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
        .collect();

    let mut g = Graph::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            if distance(positions[i], positions[j]) <= radius {
                g.adjacency.set(i, j, true);
                g.adjacency.set(j, i, true);
                g.neighbors[i].push(j);
                g.neighbors[j].push(i);
            }
        }
    }
    g.sort_neighbors();
    g.positions = Some(positions);
    g.radius = Some(radius);
    Ok(g)
}

/// Degrees and normalised adjacency, with zero rows for isolated nodes.
pub fn normalized_adjacency(g: &Graph) -> DegreeInfo {
    let degrees: Vec<usize> = (0..g.n()).map(|i| g.degree(i)).collect();
    let inv_sqrt: Vec<f64> = degrees
        .iter()
        .map(|&d| if d > 0 { 1.0 / (d as f64).sqrt() } else { 0.0 })
        .collect();
    let rows = (0..g.n())
        .map(|i| {
            g.neighbors(i)
                .iter()
                .map(|&j| (j, inv_sqrt[i] * inv_sqrt[j]))
                .collect()
        })
        .collect();
    let normalized = SparseMatrix::from_rows(g.n(), rows).expect("neighbour indices are in range");
    DegreeInfo {
        degrees,
        normalized_adjacency: Arc::new(normalized),
    }
}

/// Second-order neighbourhood: `b_ik = 1` iff `k != i`, `k` is not adjacent
/// to `i`, and some `j` is adjacent to both.
pub fn second_order_matrix(g: &Graph) -> BoolMatrix {
    let n = g.n();
    let mut b = BoolMatrix::new(n);
    for i in 0..n {
        for &j in g.neighbors(i) {
            for &k in g.neighbors(j) {
                if k != i && !g.is_edge(i, k) {
                    b.set(i, k, true);
                }
            }
        }
    }
    b
}
