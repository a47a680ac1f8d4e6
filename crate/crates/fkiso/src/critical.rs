//! q = 4 diagnostics: crossing probabilities, three-arm half-plane
//! events, flower-domain exploration, and IIC sampling with increment
//! (drift) measurement.

use crate::dynamics::{sweep_parallel, KernelCache, SweepParity};
use crate::lattice::{Cell, RectLattice, VertexId};
use crate::observables::{extremum_of_vertices, mean_se};
use crate::sampler::{compute_labels, ChainState, Configuration, PatchBc};
use crate::weights::WeightTable;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Left-right open crossing of an axis-aligned rectangle (restricted to
/// edges inside the rectangle).
pub fn has_crossing(
    cfg: &Configuration,
    lat: &RectLattice,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
) -> bool {
    let inside = |v: VertexId| {
        let (x, y) = lat.position(v);
        x >= x0 - 1e-9 && x <= x1 + 1e-9 && y >= y0 - 1e-9 && y <= y1 + 1e-9
    };
    let mut uf = crate::exact::UnionFind::new(lat.n_vertices());
    for e in 0..lat.n_edges() {
        if cfg.open[e] {
            let (u, v) = lat.edge_endpoints(e);
            if inside(u) && inside(v) {
                uf.union(u as u32, v as u32);
            }
        }
    }
    // touching the left/right sides within one edge length
    let mut left_roots = std::collections::HashSet::new();
    for v in 0..lat.n_vertices() {
        if inside(v) {
            let (x, _) = lat.position(v);
            if x <= x0 + 1.0 {
                left_roots.insert(uf.find(v as u32));
            }
        }
    }
    for v in 0..lat.n_vertices() {
        if inside(v) {
            let (x, _) = lat.position(v);
            if x >= x1 - 1.0 && left_roots.contains(&uf.find(v as u32)) {
                return true;
            }
        }
    }
    false
}

#[derive(Debug, Clone)]
pub struct CrossingConfig {
    pub q: f64,
    pub rho: f64,
    pub n: f64,
    pub wired: bool,
    pub replicas: usize,
    pub measurements: usize,
    pub thin: u64,
    pub burn_in: u64,
    pub seed: u64,
    pub stream_base: u64,
}

/// Monte Carlo estimate of the crossing probability of a centred
/// rho*n x n rectangle.
pub fn crossing_probability(lat: &RectLattice, cfg: &CrossingConfig) -> (f64, f64) {
    let weights = WeightTable::from_thetas(lat.edge_thetas(), cfg.q).unwrap();
    let hw = cfg.rho * cfg.n / 2.0;
    let hh = cfg.n / 2.0;
    let per_replica: Vec<f64> = (0..cfg.replicas)
        .into_par_iter()
        .map(|rep| {
            let mut rng = crate::rng::sub(cfg.seed, cfg.stream_base, rep as u64);
            let bc = if cfg.wired {
                PatchBc::wired_all_boundary(lat)
            } else {
                PatchBc::free(lat)
            };
            let mut chain = ChainState::new(lat, &weights, bc);
            chain.run(cfg.burn_in, &mut rng);
            let mut hits = 0.0;
            for _ in 0..cfg.measurements {
                chain.run(cfg.thin, &mut rng);
                if has_crossing(&chain.config, lat, -hw, hw, -hh, hh) {
                    hits += 1.0;
                }
            }
            hits / cfg.measurements as f64
        })
        .collect();
    mean_se(&per_replica)
}

/// A detected three-arm half-plane event: the angular positions (along the
/// inner arc, from one flat end to the other) of the witnessing dual,
/// primal, dual crossings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmEvent3Hp {
    pub z: (f64, f64),
    pub r: f64,
    pub big_r: f64,
    pub theta: f64,
    pub dual_lo: f64,
    pub primal: f64,
    pub dual_hi: f64,
}

fn half_annulus_crossings(
    open: &[bool],
    lat: &RectLattice,
    primal: bool,
    z: (f64, f64),
    r: f64,
    big_r: f64,
    theta: f64,
) -> Vec<f64> {
    let work;
    let lattice = if primal {
        lat
    } else {
        work = lat.dual();
        &work
    };
    // The annulus is fuzzed symmetrically about the nominal inner radius
    // (region from r - 1, contact up to r + 1) so the effective radius of
    // the discrete event is centred on r; an asymmetric margin would bias
    // scaling exponents at small r.
    let e_dir = (theta.cos(), theta.sin());
    let in_region = |x: f64, y: f64| {
        let (dx, dy) = (x - z.0, y - z.1);
        let norm = dx.abs().max(dy.abs());
        norm > r - 1.0 && norm <= big_r && dx * e_dir.0 + dy * e_dir.1 <= 1e-9
    };
    let mut uf = crate::exact::UnionFind::new(lattice.n_vertices());
    for e in 0..lattice.n_edges() {
        let open_here = if primal { open[e] } else { !open[e] };
        if open_here {
            let (u, v) = lattice.edge_endpoints(e);
            let (ux, uy) = lattice.position(u);
            let (vx, vy) = lattice.position(v);
            if in_region(ux, uy) && in_region(vx, vy) {
                uf.union(u as u32, v as u32);
            }
        }
    }
    // angular coordinate sweeping the half annulus
    let base = theta + std::f64::consts::PI / 2.0;
    let ang = |x: f64, y: f64| ((y - z.1).atan2(x - z.0) - base).rem_euclid(2.0 * std::f64::consts::PI);
    let mut inner_min: std::collections::HashMap<u32, f64> = std::collections::HashMap::new();
    let mut outer: std::collections::HashSet<u32> = std::collections::HashSet::new();
    for v in 0..lattice.n_vertices() {
        let (x, y) = lattice.position(v);
        if !in_region(x, y) {
            continue;
        }
        let (rr, cc) = lattice.vertex_rc(v);
        if !lattice.is_primal_rc(rr, cc) {
            continue;
        }
        let norm = (x - z.0).abs().max((y - z.1).abs());
        let root = uf.find(v as u32);
        if norm <= r + 1.01 {
            let a = ang(x, y);
            inner_min
                .entry(root)
                .and_modify(|m| *m = m.min(a))
                .or_insert(a);
        }
        if norm >= big_r - 2.01 {
            outer.insert(root);
        }
    }
    let mut angs: Vec<f64> = inner_min
        .into_iter()
        .filter(|(root, _)| outer.contains(root))
        .map(|(_, a)| a)
        .collect();
    angs.sort_by(f64::total_cmp);
    angs
}

/// Search for the clockwise dual/primal/dual arm triple crossing the half
/// annulus of radii (r, R] around z on the side opposite e_theta. Exact
/// combinatorics: crossings of a topological quadrilateral are linearly
/// ordered, so the event is a [dual, primal, dual] subsequence in the
/// order of inner-arc contact.
pub fn detect_arm3hp(
    cfg: &Configuration,
    lat: &RectLattice,
    z: (f64, f64),
    r: f64,
    big_r: f64,
    theta: f64,
) -> Option<ArmEvent3Hp> {
    let primal = half_annulus_crossings(&cfg.open, lat, true, z, r, big_r, theta);
    let dual = half_annulus_crossings(&cfg.open, lat, false, z, r, big_r, theta);
    for &p in &primal {
        let lo = dual.iter().cloned().find(|&d| d < p);
        let hi = dual.iter().cloned().find(|&d| d > p);
        if let (Some(dual_lo), Some(dual_hi)) = (lo, hi) {
            return Some(ArmEvent3Hp {
                z,
                r,
                big_r,
                theta,
                dual_lo,
                primal: p,
                dual_hi,
            });
        }
    }
    None
}

/// Flower domain around z: the unexplored component after tracing all
/// primal/dual interfaces from the boundary of Lambda_{2R}(z) inwards
/// until they exit or reach Lambda_R(z). Petals are maximal boundary arcs
/// of one type.
#[derive(Debug, Clone)]
pub struct FlowerDomain {
    pub z: (f64, f64),
    pub radius: f64,
    /// Rhombi of the domain (absolute (row, col)).
    pub rhombi: Vec<(i32, i32)>,
    /// Petals in cyclic order: (primal?, endpoints of the arc).
    pub petals: Vec<(bool, (f64, f64), (f64, f64))>,
    pub single_circuit: bool,
    pub circuit_primal: bool,
}

/// Side indices: 0 bottom, 1 right, 2 top, 3 left.
fn side_neighbor(r: i32, c: i32, side: u8) -> (i32, i32) {
    match side {
        0 => (r - 1, c),
        1 => (r, c + 1),
        2 => (r + 1, c),
        _ => (r, c - 1),
    }
}

fn opposite(side: u8) -> u8 {
    (side + 2) % 4
}

/// Interface arc pairing inside a rhombus: if the open diagonal is the
/// main one, arcs join (bottom,right) and (left,top); otherwise
/// (bottom,left) and (right,top).
fn arc_exit(lat: &RectLattice, open: &[bool], r: i32, c: i32, entry: u8) -> u8 {
    let e = lat.edge_id(r, c);
    let main_open = lat.is_primal_rc(r, c) == open[e];
    if main_open {
        match entry {
            0 => 1,
            1 => 0,
            2 => 3,
            _ => 2,
        }
    } else {
        match entry {
            0 => 3,
            3 => 0,
            1 => 2,
            _ => 1,
        }
    }
}

pub fn explore_flower(
    cfg: &Configuration,
    lat: &RectLattice,
    z: (f64, f64),
    big_r: f64,
) -> FlowerDomain {
    let radius = big_r / 2.0;
    let rhombus_center = |r: i32, c: i32| {
        let p00 = lat.position_rc(r, c);
        let p11 = lat.position_rc(r + 1, c + 1);
        ((p00.0 + p11.0) / 2.0, (p00.1 + p11.1) / 2.0)
    };
    let (vr_lo, vr_hi) = lat.vrow_range();
    let (vc_lo, vc_hi) = lat.vcol_range();
    let in_outer = |r: i32, c: i32| {
        if r < vr_lo || r >= vr_hi || c < vc_lo || c >= vc_hi {
            return false;
        }
        let (x, y) = rhombus_center(r, c);
        (x - z.0).abs().max((y - z.1).abs()) <= big_r
    };
    let in_inner = |r: i32, c: i32| {
        let (x, y) = rhombus_center(r, c);
        (x - z.0).abs().max((y - z.1).abs()) <= radius
    };
    let mut explored = std::collections::HashSet::new();
    // trace every interface entering through a boundary side of the region
    for r in vr_lo..vr_hi {
        for c in vc_lo..vc_hi {
            if !in_outer(r, c) {
                continue;
            }
            for side in 0..4u8 {
                let (nr, nc) = side_neighbor(r, c, side);
                if in_outer(nr, nc) {
                    continue; // not a boundary side
                }
                // walk inward from (r, c) entering through `side`
                let (mut cr, mut cc, mut entry) = (r, c, side);
                loop {
                    explored.insert((cr, cc));
                    if in_inner(cr, cc) {
                        break;
                    }
                    let exit = arc_exit(lat, &cfg.open, cr, cc, entry);
                    let (nr, nc) = side_neighbor(cr, cc, exit);
                    if !in_outer(nr, nc) {
                        break;
                    }
                    entry = opposite(exit);
                    cr = nr;
                    cc = nc;
                }
            }
        }
    }
    // flower = component of z's rhombus among unexplored region rhombi
    let zr = {
        // rhombus whose center is nearest to z
        let mut best = None;
        for r in vr_lo..vr_hi {
            for c in vc_lo..vc_hi {
                if !in_outer(r, c) || explored.contains(&(r, c)) {
                    continue;
                }
                let (x, y) = rhombus_center(r, c);
                let d = (x - z.0).powi(2) + (y - z.1).powi(2);
                if best.map_or(true, |(bd, _, _)| d < bd) {
                    best = Some((d, r, c));
                }
            }
        }
        best.map(|(_, r, c)| (r, c))
    };
    let mut members = std::collections::HashSet::new();
    if let Some(start) = zr {
        let mut stack = vec![start];
        members.insert(start);
        while let Some((r, c)) = stack.pop() {
            for side in 0..4u8 {
                let (nr, nc) = side_neighbor(r, c, side);
                if in_outer(nr, nc)
                    && !explored.contains(&(nr, nc))
                    && !members.contains(&(nr, nc))
                {
                    members.insert((nr, nc));
                    stack.push((nr, nc));
                }
            }
        }
    }
    // boundary walk (left hand on the domain), collecting sides in order
    let mut petals = Vec::new();
    let mut single_circuit = false;
    let mut circuit_primal = false;
    if !members.is_empty() {
        // directed boundary edges: (cell, side) with neighbor outside
        let mut boundary: std::collections::HashSet<(i32, i32, u8)> =
            std::collections::HashSet::new();
        for &(r, c) in &members {
            for s in 0..4u8 {
                let (nr, nc) = side_neighbor(r, c, s);
                if !members.contains(&(nr, nc)) {
                    boundary.insert((r, c, s));
                }
            }
        }
        // side type: state of the blocking rhombus outside (or this one at
        // the region boundary): primal petal if its primal edge is open
        let side_type = |r: i32, c: i32, s: u8| -> bool {
            let (nr, nc) = side_neighbor(r, c, s);
            let (er, ec) = if nr >= vr_lo && nr < vr_hi && nc >= vc_lo && nc < vc_hi {
                (nr, nc)
            } else {
                (r, c)
            };
            cfg.open[lat.edge_id(er, ec)]
        };
        // order boundary sides into a cyclic walk
        let start = *boundary.iter().next().unwrap();
        let mut walk = Vec::new();
        let mut cur = start;
        loop {
            walk.push(cur);
            // next boundary side clockwise around the domain: rotate the
            // side within the cell; if the rotated side is interior, move
            // into the adjacent cell and continue from the matching side.
            let (r, c, s) = cur;
            let mut ns = (s + 1) % 4;
            let (mut nr, mut nc) = (r, c);
            loop {
                if boundary.contains(&(nr, nc, ns)) {
                    cur = (nr, nc, ns);
                    break;
                }
                let (ar, ac) = side_neighbor(nr, nc, ns);
                debug_assert!(members.contains(&(ar, ac)));
                nr = ar;
                nc = ac;
                ns = (opposite(ns) + 1) % 4;
            }
            if cur == start {
                break;
            }
        }
        // corner position between side s and the next side (shared diamond
        // vertex in walk order)
        let side_vertices = |r: i32, c: i32, s: u8| -> [(i32, i32); 2] {
            match s {
                0 => [(r, c), (r, c + 1)],
                1 => [(r, c + 1), (r + 1, c + 1)],
                2 => [(r + 1, c), (r + 1, c + 1)],
                _ => [(r, c), (r + 1, c)],
            }
        };
        let types: Vec<bool> = walk.iter().map(|&(r, c, s)| side_type(r, c, s)).collect();
        if types.iter().all(|&t| t == types[0]) {
            single_circuit = true;
            circuit_primal = types[0];
        } else {
            // petal boundaries at type changes
            let n = walk.len();
            let corner = |k: usize| -> (f64, f64) {
                let (r1, c1, s1) = walk[k];
                let (r2, c2, s2) = walk[(k + 1) % n];
                let a = side_vertices(r1, c1, s1);
                let b = side_vertices(r2, c2, s2);
                for &va in &a {
                    for &vb in &b {
                        if va == vb {
                            return lat.position_rc(va.0, va.1);
                        }
                    }
                }
                // non-adjacent in the diamond (cells meet at a corner):
                // fall back to the closest pair midpoint
                let pa = lat.position_rc(a[1].0, a[1].1);
                pa
            };
            let first_change = (0..n)
                .find(|&k| types[k] != types[(k + n - 1) % n])
                .unwrap();
            let mut k = first_change;
            loop {
                let t = types[k];
                let start_pt = corner((k + n - 1) % n);
                let mut end = k;
                while types[(end + 1) % n] == t {
                    end = (end + 1) % n;
                    if end == (first_change + n - 1) % n {
                        break;
                    }
                }
                let end_pt = corner(end);
                petals.push((t, start_pt, end_pt));
                k = (end + 1) % n;
                if k == first_change {
                    break;
                }
            }
        }
    }
    FlowerDomain {
        z,
        radius,
        rhombi: members.into_iter().collect(),
        petals,
        single_circuit,
        circuit_primal,
    }
}

impl FlowerDomain {
    /// Pairwise distances between petal endpoints are all >= eta * R.
    pub fn well_separated(&self, eta: f64) -> bool {
        if self.single_circuit {
            return true;
        }
        let pts: Vec<(f64, f64)> = self
            .petals
            .iter()
            .map(|&(_, s, _)| s)
            .collect();
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let d = ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
                if d < eta * self.radius {
                    return false;
                }
            }
        }
        true
    }
}

/// Exactly two petals, 1/4-well-separated, with the primal petal inside
/// the cone of aperture pi/2 around -e_theta.
pub fn is_good_flower(fd: &FlowerDomain, theta: f64) -> bool {
    if fd.single_circuit || fd.petals.len() != 2 {
        return false;
    }
    if !fd.well_separated(0.25) {
        return false;
    }
    let (bx, by) = (-(theta.cos()), -(theta.sin()));
    let in_cone = |p: (f64, f64)| {
        let (dx, dy) = (p.0 - fd.z.0, p.1 - fd.z.1);
        let nrm = (dx * dx + dy * dy).sqrt();
        if nrm < 1e-9 {
            return true;
        }
        (dx * bx + dy * by) / nrm >= (std::f64::consts::PI / 4.0).cos() - 1e-12
    };
    fd.petals
        .iter()
        .filter(|&&(primal, _, _)| primal)
        .all(|&(_, s, e)| in_cone(s) && in_cone(e))
}

/// One accepted IIC observation: an extremal cell with its cluster depth
/// and measured increment.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IicIncrement {
    pub ext_cell: Cell,
    pub e_value: f64,
    pub depth: f64,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct IicDriftConfig {
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    /// Conditioning distance: clusters of directional depth >= n qualify.
    pub n: f64,
    /// Retained-window radius around the extremum (Euclidean).
    pub window_radius: f64,
    /// Half extents of the simulated window, in tracks/columns.
    pub domain_cols: usize,
    pub domain_rows: usize,
    pub increments: usize,
    pub q: f64,
    pub thin: u64,
    pub burn_in: u64,
    pub seed: u64,
    pub streams: usize,
    pub max_snapshots: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IicDriftResult {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
    pub snapshots: usize,
    pub acceptance: f64,
    pub max_abs_delta: f64,
    pub bound_violations: usize,
}

/// Accepted clusters in one snapshot: directional depth >= n and the
/// extremal cell at least `ext_margin_idx` rows/cols inside the window,
/// so its neighbourhood is bulk, below the top, and far from the lateral
/// closure columns. A positive `defect_margin` additionally rejects
/// clusters touching the outermost columns; the body may always reach
/// the bottom (the limiting conditioned cluster is infinite downward).
fn qualifying_clusters(
    cfg: &mut Configuration,
    lat: &RectLattice,
    bc: &PatchBc,
    theta: f64,
    n: f64,
    ext_margin_idx: i32,
    defect_margin: i32,
) -> Vec<(u32, VertexId)> {
    let e = (theta.cos(), theta.sin());
    let labels = cfg.labels(lat, bc).to_vec();
    let (rlo, rhi) = lat.vrow_range();
    let (clo, chi) = lat.vcol_range();
    #[derive(Clone)]
    struct Acc {
        min_dot: f64,
        // extremum bookkeeping: (value, anchor_y, anchor_row, anchor_col)
        best: (f64, f64, i32, i32),
        lateral: bool,
        seed: VertexId,
        count: u32,
    }
    let mut acc: std::collections::HashMap<u32, Acc> = std::collections::HashMap::new();
    for v in 0..lat.n_vertices() {
        let (r, c) = lat.vertex_rc(v);
        if !lat.is_primal_rc(r, c) {
            continue;
        }
        let (x, y) = lat.position(v);
        let dot = x * e.0 + y * e.1;
        let cell = lat.cell_of_rc(r, c).unwrap();
        let (ax, ay) = lat.cell_anchor_pos(cell);
        let aval = ax * e.0 + ay * e.1;
        let (ar, ac) = lat.cell_anchor_rc(cell);
        let a = acc.entry(labels[v]).or_insert(Acc {
            min_dot: f64::INFINITY,
            best: (f64::NEG_INFINITY, f64::NEG_INFINITY, 0, 0),
            lateral: false,
            seed: v,
            count: 0,
        });
        a.min_dot = a.min_dot.min(dot);
        if aval > a.best.0 + 1e-12 || (aval > a.best.0 - 1e-12 && ay > a.best.1) {
            a.best = (aval, ay, ar, ac);
        }
        a.lateral |= c < clo + defect_margin || c > chi - defect_margin;
        a.count += 1;
    }
    acc.into_iter()
        .filter(|(_, a)| {
            let (_, _, ar, ac) = a.best;
            !a.lateral
                && a.count > 2
                && a.best.0 - a.min_dot >= n
                && ar <= rhi - ext_margin_idx
                && ar >= rlo + ext_margin_idx
                && ac >= clo + ext_margin_idx
                && ac <= chi - ext_margin_idx
        })
        .map(|(root, a)| (root, a.seed))
        .collect()
}

/// Drift of the extremum under S_odd o S_even, measured on recentred deep
/// clusters (each qualifying cluster is an IIC sample at conditioning
/// distance >= n by translation invariance of the mixed lattice).
pub fn iic_drift(cfg: &IicDriftConfig) -> (IicDriftResult, Vec<IicIncrement>) {
    let per_stream: Vec<(Vec<IicIncrement>, usize)> = (0..cfg.streams)
        .into_par_iter()
        .map(|s| {
            let lat0 = RectLattice::build(
                crate::lattice::AngleSequence::Alternating {
                    a: cfg.alpha,
                    b: cfg.beta,
                },
                cfg.domain_cols,
                cfg.domain_rows,
                crate::lattice::Geometry::Window,
            )
            .unwrap();
            let weights = WeightTable::from_thetas(lat0.edge_thetas(), cfg.q).unwrap();
            let mut rng = crate::rng::sub(cfg.seed, 40, s as u64);
            let mut chain = ChainState::new(&lat0, &weights, PatchBc::free(&lat0));
            chain.run(cfg.burn_in, &mut rng);
            let bc = PatchBc::free(&lat0);
            let mut cache = KernelCache::new();
            let per_target = cfg.increments / cfg.streams + 1;
            let mut out = Vec::new();
            let mut snapshots = 0usize;
            let ext_margin_idx = (cfg.window_radius * 1.2) as i32 + 6;
            while out.len() < per_target && snapshots < cfg.max_snapshots / cfg.streams {
                chain.run(cfg.thin, &mut rng);
                snapshots += 1;
                let found = qualifying_clusters(
                    &mut chain.config,
                    &lat0,
                    &bc,
                    cfg.theta,
                    cfg.n,
                    ext_margin_idx,
                    0,
                );
                if found.is_empty() {
                    continue;
                }
                for (_, seed) in found {
                    // increment on a snapshot copy; the chain is untouched
                    let mut work_cfg = chain.config.clone();
                    let mut work_lat = lat0.clone();
                    let vs =
                        crate::observables::cluster_vertices(&mut work_cfg, &work_lat, &bc, seed);
                    let ext = extremum_of_vertices(&work_lat, &vs, cfg.theta);
                    // a vertex on an even row survives S_even
                    let v_even = vs.iter().copied().find(|&v| {
                        let (r, _) = work_lat.vertex_rc(v);
                        r.rem_euclid(2) == 0
                    });
                    let Some(v_even) = v_even else { continue };
                    sweep_parallel(
                        &mut work_cfg,
                        &mut work_lat,
                        SweepParity::Even,
                        cfg.q,
                        &mut cache,
                        &mut rng,
                    )
                    .unwrap();
                    let vs1 = crate::observables::cluster_vertices(
                        &mut work_cfg,
                        &work_lat,
                        &bc,
                        v_even,
                    );
                    let v_odd = vs1.iter().copied().find(|&v| {
                        let (r, _) = work_lat.vertex_rc(v);
                        r.rem_euclid(2) == 1
                    });
                    let Some(v_odd) = v_odd else { continue };
                    sweep_parallel(
                        &mut work_cfg,
                        &mut work_lat,
                        SweepParity::Odd,
                        cfg.q,
                        &mut cache,
                        &mut rng,
                    )
                    .unwrap();
                    let vs2 = crate::observables::cluster_vertices(
                        &mut work_cfg,
                        &work_lat,
                        &bc,
                        v_odd,
                    );
                    let ext2 = extremum_of_vertices(&work_lat, &vs2, cfg.theta);
                    let depth = {
                        let e = (cfg.theta.cos(), cfg.theta.sin());
                        let min_dot = vs
                            .iter()
                            .map(|&v| {
                                let (x, y) = work_lat.position(v);
                                x * e.0 + y * e.1
                            })
                            .fold(f64::INFINITY, f64::min);
                        ext.value - min_dot
                    };
                    out.push(IicIncrement {
                        ext_cell: ext.cell,
                        e_value: ext.value,
                        depth,
                        delta: ext2.value - ext.value,
                    });
                    if out.len() >= per_target {
                        break;
                    }
                }
            }
            (out, snapshots)
        })
        .collect();
    let mut all = Vec::new();
    let mut snapshots = 0;
    let mut batch_means = Vec::new();
    for (v, s) in &per_stream {
        // batch means within each stream: increments along one chain are
        // correlated, so the SE comes from batch spread
        let bs = (v.len() / 8).max(4);
        for chunk in v.chunks(bs) {
            if chunk.len() >= bs / 2 {
                batch_means.push(chunk.iter().map(|x| x.delta).sum::<f64>() / chunk.len() as f64);
            }
        }
        snapshots += s;
    }
    for (v, _) in per_stream {
        all.extend(v);
    }
    let deltas: Vec<f64> = all.iter().map(|x| x.delta).collect();
    let mean = deltas.iter().sum::<f64>() / deltas.len().max(1) as f64;
    let (_, se) = if batch_means.len() >= 2 {
        mean_se(&batch_means)
    } else {
        mean_se(&deltas)
    };
    let max_abs = deltas.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let violations = deltas.iter().filter(|d| d.abs() > 4.0 + 1e-9).count();
    (
        IicDriftResult {
            mean,
            se,
            count: all.len(),
            snapshots,
            acceptance: all.len() as f64 / snapshots.max(1) as f64,
            max_abs_delta: max_abs,
            bound_violations: violations,
        },
        all,
    )
}

/// Literal rejection sampler: accept configurations with
/// Ext_theta(C_{x_n}) equal to the origin cell anchor. Exactly the
/// definition-as-limit; only workable for small n.
pub struct IicLiteral {
    pub accepted: Vec<(Configuration, f64)>,
    pub attempts: usize,
    pub acceptance: f64,
}

pub fn iic_sample_literal(
    lat: &RectLattice,
    q: f64,
    theta: f64,
    n: f64,
    want: usize,
    attempts: usize,
    thin: u64,
    seed: u64,
) -> IicLiteral {
    let weights = WeightTable::from_thetas(lat.edge_thetas(), q).unwrap();
    let mut rng = crate::rng::stream(seed, 77);
    let mut chain = ChainState::new(lat, &weights, PatchBc::free(lat));
    chain.run(200, &mut rng);
    let bc = PatchBc::free(lat);
    let e = (theta.cos(), theta.sin());
    let x_n = lat.nearest_primal_vertex(-n * e.0, -n * e.1);
    let mut accepted = Vec::new();
    let mut tried = 0;
    while tried < attempts && accepted.len() < want {
        chain.run(thin, &mut rng);
        tried += 1;
        let vs = crate::observables::cluster_vertices(&mut chain.config, lat, &bc, x_n);
        let ext = extremum_of_vertices(lat, &vs, theta);
        if ext.truncated {
            continue;
        }
        if ext.cell == (Cell { i: 0, j: 0 }) {
            accepted.push((chain.config.clone(), ext.value));
        }
    }
    IicLiteral {
        acceptance: accepted.len() as f64 / tried.max(1) as f64,
        accepted,
        attempts: tried,
    }
}

/// Free-vs-dual label helper used by flower tests.
pub fn dual_labels(cfg: &Configuration, lat: &RectLattice) -> Vec<u32> {
    let dual = lat.dual();
    let open_dual: Vec<bool> = cfg.open.iter().map(|&b| !b).collect();
    compute_labels(&dual, &PatchBc::free(&dual), &open_dual)
}
