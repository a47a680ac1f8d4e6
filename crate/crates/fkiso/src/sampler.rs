//! Markov-chain Monte Carlo sampling of the random-cluster measure.
//!
//! Single-bond heat-bath dynamics: each edge is resampled from its exact
//! conditional law, with the off-edge connectivity query answered by a
//! bidirectional BFS over the current open subgraph plus boundary
//! wirings. Valid for all real q >= 1 and oracle-verifiable.

use crate::lattice::{EdgeId, RectLattice, VertexId};
use crate::rng::Rng;
use crate::weights::WeightTable;
use rand::Rng as _;

/// Wired classes on a lattice patch, plus the lookup structures used by
/// connectivity queries.
#[derive(Debug, Clone, Default)]
pub struct PatchBc {
    /// class id per vertex; usize::MAX when unwired.
    class_of: Vec<usize>,
    /// members of each class.
    pub classes: Vec<Vec<VertexId>>,
}

impl PatchBc {
    pub fn free(lat: &RectLattice) -> Self {
        PatchBc {
            class_of: vec![usize::MAX; lat.n_vertices()],
            classes: vec![],
        }
    }

    pub fn wired_all_boundary(lat: &RectLattice) -> Self {
        Self::from_classes(lat, vec![lat.boundary_vertices()])
    }

    pub fn from_classes(lat: &RectLattice, classes: Vec<Vec<VertexId>>) -> Self {
        let mut class_of = vec![usize::MAX; lat.n_vertices()];
        for (i, class) in classes.iter().enumerate() {
            for &v in class {
                class_of[v] = i;
            }
        }
        PatchBc { class_of, classes }
    }

    pub fn is_free(&self) -> bool {
        self.classes.is_empty()
    }

    #[inline]
    pub fn class(&self, v: VertexId) -> Option<usize> {
        let c = self.class_of[v];
        (c != usize::MAX).then_some(c)
    }
}

/// Open/closed state per edge with a lazily rebuilt cluster labeling.
#[derive(Debug, Clone)]
pub struct Configuration {
    pub open: Vec<bool>,
    generation: u64,
    labels_generation: u64,
    labels: Vec<u32>,
}

impl Configuration {
    pub fn all_closed(n_edges: usize) -> Self {
        Configuration {
            open: vec![false; n_edges],
            generation: 0,
            labels_generation: u64::MAX,
            labels: vec![],
        }
    }

    pub fn all_open(n_edges: usize) -> Self {
        let mut c = Self::all_closed(n_edges);
        c.open.iter_mut().for_each(|b| *b = true);
        c
    }

    #[inline]
    pub fn set(&mut self, e: EdgeId, open: bool) {
        if self.open[e] != open {
            self.open[e] = open;
            self.generation += 1;
        }
    }

    #[inline]
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn touch(&mut self) {
        self.generation += 1;
    }

    /// Cluster labels (root vertex id per vertex) of the open subgraph plus
    /// wirings; rebuilt when stale.
    pub fn labels(&mut self, lat: &RectLattice, bc: &PatchBc) -> &[u32] {
        if self.labels_generation != self.generation || self.labels.len() != lat.n_vertices() {
            self.labels = compute_labels(lat, bc, &self.open);
            self.labels_generation = self.generation;
        }
        &self.labels
    }

    pub fn edge_density(&self) -> f64 {
        let open = self.open.iter().filter(|&&b| b).count();
        open as f64 / self.open.len() as f64
    }

    pub fn as_mask(&self) -> u64 {
        assert!(self.open.len() <= 64);
        self.open
            .iter()
            .enumerate()
            .fold(0u64, |m, (e, &b)| if b { m | 1 << e } else { m })
    }

    pub fn from_mask(n_edges: usize, mask: u64) -> Self {
        let mut c = Self::all_closed(n_edges);
        for e in 0..n_edges {
            c.open[e] = mask >> e & 1 == 1;
        }
        c
    }
}

pub fn compute_labels(lat: &RectLattice, bc: &PatchBc, open: &[bool]) -> Vec<u32> {
    let mut uf = crate::exact::UnionFind::new(lat.n_vertices());
    for class in &bc.classes {
        for w in class.windows(2) {
            uf.union(w[0] as u32, w[1] as u32);
        }
    }
    for e in 0..lat.n_edges() {
        if open[e] {
            let (u, v) = lat.edge_endpoints(e);
            uf.union(u as u32, v as u32);
        }
    }
    (0..lat.n_vertices() as u32).map(|v| uf.find(v)).collect()
}

/// Reusable scratch space for the bidirectional connectivity search.
/// The two searches expand strictly alternately (the side with fewer
/// visited vertices moves one vertex per turn), so the cost of a negative
/// answer is bounded by twice the smaller component.
struct BiBfs {
    stamp_a: Vec<u32>,
    stamp_b: Vec<u32>,
    round: u32,
    queue_a: Vec<VertexId>,
    queue_b: Vec<VertexId>,
}

impl BiBfs {
    fn new(n: usize) -> Self {
        BiBfs {
            stamp_a: vec![0; n],
            stamp_b: vec![0; n],
            round: 0,
            queue_a: Vec::new(),
            queue_b: Vec::new(),
        }
    }

    /// Are `u` and `v` connected through open edges (skipping `skip`) and
    /// boundary wirings?
    #[allow(clippy::too_many_arguments)]
    fn connected(
        &mut self,
        adj: &[Vec<(VertexId, EdgeId)>],
        open: &[bool],
        bc: &PatchBc,
        class_seen_a: &mut [u32],
        class_seen_b: &mut [u32],
        u: VertexId,
        v: VertexId,
        skip: EdgeId,
    ) -> bool {
        if u == v {
            return true;
        }
        self.round += 1;
        let round = self.round;
        self.queue_a.clear();
        self.queue_b.clear();
        self.stamp_a[u] = round;
        self.stamp_b[v] = round;
        self.queue_a.push(u);
        self.queue_b.push(v);
        let mut head_a = 0usize;
        let mut head_b = 0usize;
        loop {
            let expand_a = self.queue_a.len() <= self.queue_b.len();
            let (queue, head, stamp_self, stamp_other, class_seen) = if expand_a {
                (
                    &mut self.queue_a,
                    &mut head_a,
                    &mut self.stamp_a,
                    &self.stamp_b,
                    &mut *class_seen_a,
                )
            } else {
                (
                    &mut self.queue_b,
                    &mut head_b,
                    &mut self.stamp_b,
                    &self.stamp_a,
                    &mut *class_seen_b,
                )
            };
            if *head >= queue.len() {
                return false; // this side is exhausted
            }
            let w = queue[*head];
            *head += 1;
            for &(x, e) in &adj[w] {
                if e == skip || !open[e] || stamp_self[x] == round {
                    continue;
                }
                if stamp_other[x] == round {
                    return true;
                }
                stamp_self[x] = round;
                queue.push(x);
            }
            if let Some(ci) = bc.class(w) {
                if class_seen[ci] != round {
                    class_seen[ci] = round;
                    for &x in &bc.classes[ci] {
                        if stamp_self[x] == round {
                            continue;
                        }
                        if stamp_other[x] == round {
                            return true;
                        }
                        stamp_self[x] = round;
                        queue.push(x);
                    }
                }
            }
        }
    }
}

/// One chain: configuration plus everything needed to advance it.
pub struct ChainState<'a> {
    pub lat: &'a RectLattice,
    pub weights: &'a WeightTable,
    pub bc: PatchBc,
    pub config: Configuration,
    pub sweeps: u64,
    adj: Vec<Vec<(VertexId, EdgeId)>>,
    bfs: BiBfs,
    class_seen_a: Vec<u32>,
    class_seen_b: Vec<u32>,
}

impl<'a> ChainState<'a> {
    pub fn new(lat: &'a RectLattice, weights: &'a WeightTable, bc: PatchBc) -> Self {
        assert_eq!(weights.len(), lat.n_edges());
        let adj = lat.primal_adjacency();
        let ncls = bc.classes.len();
        ChainState {
            lat,
            weights,
            bc,
            config: Configuration::all_closed(lat.n_edges()),
            sweeps: 0,
            adj,
            bfs: BiBfs::new(lat.n_vertices()),
            class_seen_a: vec![0; ncls],
            class_seen_b: vec![0; ncls],
        }
    }

    /// One heat-bath pass over all edges in index order.
    pub fn sweep(&mut self, rng: &mut Rng) {
        let q = self.weights.q;
        for e in 0..self.lat.n_edges() {
            let (u, v) = self.lat.edge_endpoints(e);
            let p = self.weights.p(e);
            let p_open = if q == 1.0 {
                p
            } else {
                let connected = self.bfs.connected(
                    &self.adj,
                    &self.config.open,
                    &self.bc,
                    &mut self.class_seen_a,
                    &mut self.class_seen_b,
                    u,
                    v,
                    e,
                );
                if connected {
                    p
                } else {
                    p / (p + q * (1.0 - p))
                }
            };
            self.config.open[e] = rng.gen::<f64>() < p_open;
        }
        self.config.touch();
        self.sweeps += 1;
    }

    pub fn run(&mut self, sweeps: u64, rng: &mut Rng) {
        for _ in 0..sweeps {
            self.sweep(rng);
        }
    }
}

/// Diagnostics attached to a sample.
#[derive(Debug, Clone)]
pub struct SampleDiagnostics {
    pub tau_int: f64,
    pub burn_in: u64,
    pub converged: bool,
}

/// Integrated autocorrelation time of a series, Sokal-windowed.
pub fn integrated_autocorrelation(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 8 {
        return 1.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var: f64 = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return 1.0;
    }
    let mut tau = 0.5;
    for k in 1..(n / 4) {
        let mut c = 0.0;
        for i in 0..(n - k) {
            c += (series[i] - mean) * (series[i + k] - mean);
        }
        c /= (n - k) as f64 * var;
        if c < 0.05 {
            break;
        }
        tau += c;
        if k as f64 > 6.0 * tau {
            break;
        }
    }
    tau.max(0.5)
}

/// Draw one configuration approximately distributed as the random-cluster
/// measure, with burn-in defaulting to 10x the integrated autocorrelation
/// time of the edge density.
pub fn sample(
    lat: &RectLattice,
    weights: &WeightTable,
    bc: PatchBc,
    min_sweeps: u64,
    rng: &mut Rng,
) -> (Configuration, SampleDiagnostics) {
    let mut chain = ChainState::new(lat, weights, bc);
    let pilot = 64u64.max(min_sweeps / 4);
    let mut densities = Vec::with_capacity(pilot as usize);
    for _ in 0..pilot {
        chain.sweep(rng);
        densities.push(chain.config.edge_density());
    }
    let tau = integrated_autocorrelation(&densities);
    let burn = ((10.0 * tau).ceil() as u64).max(min_sweeps);
    let extra = burn.saturating_sub(pilot);
    chain.run(extra, rng);
    let diag = SampleDiagnostics {
        tau_int: tau,
        burn_in: pilot + extra,
        converged: tau < pilot as f64 / 20.0,
    };
    (chain.config, diag)
}

/// Free half-plane sample: strip of K tracks with free boundary everywhere
/// (in particular on the bottom row, which is the contract that matters).
pub fn sample_half_plane(
    lat: &RectLattice,
    weights: &WeightTable,
    min_sweeps: u64,
    rng: &mut Rng,
) -> (Configuration, SampleDiagnostics) {
    assert_eq!(lat.geometry, crate::lattice::Geometry::Strip);
    sample(lat, weights, PatchBc::free(lat), min_sweeps, rng)
}
