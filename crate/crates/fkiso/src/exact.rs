//! Exhaustive-enumeration oracle for tiny graphs.
//!
//! Ground truth for every statistical component: partition functions,
//! event probabilities and exact pushforwards of randomized kernels are
//! computed by summing over all 2^E configurations. Deliberately brute
//! force; capped at 26 edges.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("state space 2^{0} exceeds the 2^26 cap")]
    TooManyEdges(usize),
    #[error("kernel output weights sum to {0}, not 1")]
    BadKernel(f64),
}

/// A small graph with per-edge open probabilities.
#[derive(Debug, Clone)]
pub struct SmallGraph {
    pub n_vertices: usize,
    pub edges: Vec<(usize, usize)>,
    pub p: Vec<f64>,
}

impl SmallGraph {
    pub fn new(n_vertices: usize, edges: Vec<(usize, usize)>, p: Vec<f64>) -> Self {
        assert_eq!(edges.len(), p.len());
        SmallGraph {
            n_vertices,
            edges,
            p,
        }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }
}

/// Partition of (a subset of) the vertices into wired classes; the
/// all-singletons partition is free.
#[derive(Debug, Clone, Default)]
pub struct BoundaryCondition {
    pub classes: Vec<Vec<usize>>,
}

impl BoundaryCondition {
    pub fn free() -> Self {
        BoundaryCondition { classes: vec![] }
    }

    pub fn wired(vertices: Vec<usize>) -> Self {
        BoundaryCondition {
            classes: vec![vertices],
        }
    }

    pub fn validate(&self) {
        let mut seen = std::collections::HashSet::new();
        for class in &self.classes {
            for &v in class {
                assert!(seen.insert(v), "vertex {v} in two wired classes");
            }
        }
    }
}

/// Union-find over vertex indices.
pub struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
        }
    }

    pub fn reset(&mut self) {
        for (i, p) in self.parent.iter_mut().enumerate() {
            *p = i as u32;
        }
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    pub fn union(&mut self, a: u32, b: u32) -> bool {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb) as usize] = ra.min(rb);
        true
    }
}

/// Number of clusters of the open subgraph plus boundary wirings.
pub fn cluster_count(g: &SmallGraph, bc: &BoundaryCondition, mask: u64, uf: &mut UnionFind) -> u32 {
    uf.reset();
    let mut k = g.n_vertices as u32;
    for class in &bc.classes {
        for w in class.windows(2) {
            if uf.union(w[0] as u32, w[1] as u32) {
                k -= 1;
            }
        }
    }
    for (e, &(u, v)) in g.edges.iter().enumerate() {
        if mask >> e & 1 == 1 && uf.union(u as u32, v as u32) {
            k -= 1;
        }
    }
    k
}

/// Exact random-cluster measure on a small graph.
pub struct ExactMeasure {
    pub graph: SmallGraph,
    pub q: f64,
    pub bc: BoundaryCondition,
    pub log_z: f64,
    probs: Vec<f64>,
}

impl ExactMeasure {
    pub fn new(graph: SmallGraph, q: f64, bc: BoundaryCondition) -> Result<Self, OracleError> {
        let ne = graph.n_edges();
        if ne > 26 {
            return Err(OracleError::TooManyEdges(ne));
        }
        bc.validate();
        let n = 1u64 << ne;
        let mut uf = UnionFind::new(graph.n_vertices);
        let lq = q.ln();
        let logw_edge: Vec<(f64, f64)> = graph
            .p
            .iter()
            .map(|&p| (p.ln(), (1.0 - p).ln()))
            .collect();
        // log-domain accumulation; masks in lexicographic order so fixture
        // dumps are reproducible.
        let mut logw = vec![0.0f64; n as usize];
        let mut max = f64::NEG_INFINITY;
        for mask in 0..n {
            let k = cluster_count(&graph, &bc, mask, &mut uf);
            let mut lw = k as f64 * lq;
            for e in 0..ne {
                lw += if mask >> e & 1 == 1 {
                    logw_edge[e].0
                } else {
                    logw_edge[e].1
                };
            }
            logw[mask as usize] = lw;
            if lw > max {
                max = lw;
            }
        }
        let mut z = 0.0;
        for lw in &logw {
            z += (lw - max).exp();
        }
        let log_z = max + z.ln();
        let probs: Vec<f64> = logw.iter().map(|lw| (lw - log_z).exp()).collect();
        Ok(ExactMeasure {
            graph,
            q,
            bc,
            log_z,
            probs,
        })
    }

    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }

    #[inline]
    pub fn prob(&self, mask: u64) -> f64 {
        self.probs[mask as usize]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_states(&self) -> u64 {
        1 << self.graph.n_edges()
    }

    /// Probability of an event given as a configuration predicate.
    pub fn probability(&self, event: impl Fn(u64) -> bool) -> f64 {
        (0..self.n_states())
            .filter(|&m| event(m))
            .map(|m| self.prob(m))
            .sum()
    }

    /// CSV fixture dump: mask, probability.
    pub fn dump_csv(&self) -> String {
        let mut s = String::from("mask,probability\n");
        for m in 0..self.n_states() {
            s.push_str(&format!("{},{:.17e}\n", m, self.prob(m)));
        }
        s
    }
}

/// A randomized configuration map with enumerable output distribution.
pub trait ConfigKernel {
    /// Number of binary degrees of freedom in the output state space.
    fn out_bits(&self) -> usize;
    /// Exact output distribution for one input configuration, as
    /// (mask, probability) pairs summing to 1.
    fn output_distribution(&self, input: u64) -> Vec<(u64, f64)>;
}

/// Exact pushforward of a measure under a kernel, as a dense probability
/// vector over output masks.
pub fn exact_pushforward(
    measure: &ExactMeasure,
    kernel: &dyn ConfigKernel,
) -> Result<Vec<f64>, OracleError> {
    let mut out = vec![0.0f64; 1usize << kernel.out_bits()];
    for m in 0..measure.n_states() {
        let pm = measure.prob(m);
        if pm == 0.0 {
            continue;
        }
        let dist = kernel.output_distribution(m);
        let tot: f64 = dist.iter().map(|&(_, w)| w).sum();
        if (tot - 1.0).abs() > 1e-12 {
            return Err(OracleError::BadKernel(tot));
        }
        for (om, w) in dist {
            out[om as usize] += pm * w;
        }
    }
    Ok(out)
}

/// Total-variation distance between two distributions on the same space.
pub fn tv_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    0.5 * a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
}

/// Identity kernel on a fixed number of bits.
pub struct IdentityKernel(pub usize);

impl ConfigKernel for IdentityKernel {
    fn out_bits(&self) -> usize {
        self.0
    }
    fn output_distribution(&self, input: u64) -> Vec<(u64, f64)> {
        vec![(input, 1.0)]
    }
}

/// One heat-bath resampling pass over the edges in index order. Each edge
/// is resampled from its conditional law: open with probability p if the
/// endpoints are connected off the edge (through open edges and wirings),
/// else p / (p + q(1-p)).
pub struct HeatBathSweepKernel<'a> {
    pub graph: &'a SmallGraph,
    pub q: f64,
    pub bc: &'a BoundaryCondition,
    /// Restrict the pass to these edges (defaults to all).
    pub edges: Option<Vec<usize>>,
}

impl HeatBathSweepKernel<'_> {
    fn connected_off(&self, mask: u64, skip: usize, uf: &mut UnionFind) -> bool {
        let m = mask & !(1u64 << skip);
        uf.reset();
        for class in &self.bc.classes {
            for w in class.windows(2) {
                uf.union(w[0] as u32, w[1] as u32);
            }
        }
        for (e, &(u, v)) in self.graph.edges.iter().enumerate() {
            if m >> e & 1 == 1 {
                uf.union(u as u32, v as u32);
            }
        }
        let (u, v) = self.graph.edges[skip];
        uf.find(u as u32) == uf.find(v as u32)
    }
}

impl ConfigKernel for HeatBathSweepKernel<'_> {
    fn out_bits(&self) -> usize {
        self.graph.n_edges()
    }

    fn output_distribution(&self, input: u64) -> Vec<(u64, f64)> {
        let edges: Vec<usize> = self
            .edges
            .clone()
            .unwrap_or_else(|| (0..self.graph.n_edges()).collect());
        let mut uf = UnionFind::new(self.graph.n_vertices);
        let mut dist: Vec<(u64, f64)> = vec![(input, 1.0)];
        for e in edges {
            let mut next: std::collections::HashMap<u64, f64> = std::collections::HashMap::new();
            for &(m, w) in &dist {
                let p = self.graph.p[e];
                let p_open = if self.connected_off(m, e, &mut uf) {
                    p
                } else {
                    p / (p + self.q * (1.0 - p))
                };
                *next.entry(m | 1 << e).or_insert(0.0) += w * p_open;
                *next.entry(m & !(1 << e)).or_insert(0.0) += w * (1.0 - p_open);
            }
            dist = next.into_iter().collect();
            dist.sort_unstable_by_key(|&(m, _)| m);
        }
        dist
    }
}


/// Extract a `SmallGraph` from a lattice patch: vertices are the primal
/// vertices, edges the rhombus diagonals, probabilities the isoradial
/// weights at the given q. Returns the graph and the map from lattice
/// vertex ids to graph indices.
pub fn lattice_patch_graph(
    lat: &crate::lattice::RectLattice,
    q: f64,
) -> (SmallGraph, std::collections::HashMap<crate::lattice::VertexId, usize>) {
    let mut index = std::collections::HashMap::new();
    for v in lat.primal_vertices() {
        let next = index.len();
        index.insert(v, next);
    }
    let mut edges = Vec::with_capacity(lat.n_edges());
    let mut p = Vec::with_capacity(lat.n_edges());
    for e in 0..lat.n_edges() {
        let (u, v) = lat.edge_endpoints(e);
        edges.push((index[&u], index[&v]));
        p.push(crate::weights::isoradial_weight(lat.edge_theta(e), q).unwrap());
    }
    (SmallGraph::new(index.len(), edges, p), index)
}
