//! Cluster observables: directional extrema, hyperplane connections,
//! decay-rate estimators, convex duality and the Wulff shape.

use crate::lattice::{Cell, RectLattice, VertexId};
use crate::sampler::{ChainState, Configuration, PatchBc};
use crate::weights::WeightTable;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Weighted least squares y ~ intercept + slope x.
/// Returns (slope, intercept, slope_se, intercept_se).
pub fn weighted_least_squares(xs: &[f64], ys: &[f64], ws: &[f64]) -> (f64, f64, f64, f64) {
    assert!(xs.len() == ys.len() && ys.len() == ws.len() && xs.len() >= 2);
    let sw: f64 = ws.iter().sum();
    let xbar = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let ybar = ys.iter().zip(ws).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(ws).map(|(x, w)| w * (x - xbar).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| w * (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let slope_se = (1.0 / sxx).sqrt();
    let intercept_se = (1.0 / sw + xbar * xbar / sxx).sqrt();
    (slope, intercept, slope_se, intercept_se)
}

/// Extremal cell of a cluster in direction theta.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DirectionalExtremum {
    pub theta: f64,
    pub cell: Cell,
    pub anchor: (f64, f64),
    /// E = <anchor, e_theta>.
    pub value: f64,
    /// The cluster touches the window boundary: the extremum may be a
    /// truncation artifact.
    pub truncated: bool,
}

/// Vertices of the primal cluster containing `seed`.
pub fn cluster_vertices(
    cfg: &mut Configuration,
    lat: &RectLattice,
    bc: &PatchBc,
    seed: VertexId,
) -> Vec<VertexId> {
    let labels = cfg.labels(lat, bc);
    let root = labels[seed];
    (0..lat.n_vertices())
        .filter(|&v| {
            labels[v] == root && {
                let (r, c) = lat.vertex_rc(v);
                lat.is_primal_rc(r, c)
            }
        })
        .collect()
}

pub fn touches_boundary(lat: &RectLattice, vs: &[VertexId]) -> bool {
    let (rlo, rhi) = lat.vrow_range();
    let (clo, chi) = lat.vcol_range();
    vs.iter().any(|&v| {
        let (r, c) = lat.vertex_rc(v);
        r == rlo || r == rhi || c == clo || c == chi
    })
}

/// Extremum over the given cluster vertices: among cells intersecting the
/// cluster, the anchor maximizing <., e_theta>, ties to the largest
/// vertical coordinate. The anchor need not belong to the cluster.
pub fn extremum_of_vertices(
    lat: &RectLattice,
    vs: &[VertexId],
    theta: f64,
) -> DirectionalExtremum {
    assert!(!vs.is_empty());
    let e = (theta.cos(), theta.sin());
    let mut best: Option<(f64, f64, Cell, (f64, f64))> = None;
    let mut seen = std::collections::HashSet::new();
    for &v in vs {
        let (r, c) = lat.vertex_rc(v);
        let cell = lat.cell_of_rc(r, c).expect("cluster vertex inside window");
        if !seen.insert(cell) {
            continue;
        }
        let (ax, ay) = lat.cell_anchor_pos(cell);
        let val = ax * e.0 + ay * e.1;
        let better = match &best {
            None => true,
            Some((bv, by, _, _)) => val > bv + 1e-12 || (val > bv - 1e-12 && ay > *by),
        };
        if better {
            best = Some((val, ay, cell, (ax, ay)));
        }
    }
    let (value, _, cell, anchor) = best.unwrap();
    DirectionalExtremum {
        theta,
        cell,
        anchor,
        value,
        truncated: touches_boundary(lat, vs),
    }
}

/// Extremum of the cluster of `seed`.
pub fn extremum(
    cfg: &mut Configuration,
    lat: &RectLattice,
    bc: &PatchBc,
    seed: VertexId,
    theta: f64,
) -> DirectionalExtremum {
    let vs = cluster_vertices(cfg, lat, bc, seed);
    extremum_of_vertices(lat, &vs, theta)
}

/// Does the cluster of the origin meet the half-space <x, e_theta> >= n?
pub fn hyperplane_connected(
    cfg: &mut Configuration,
    lat: &RectLattice,
    bc: &PatchBc,
    theta: f64,
    n: f64,
) -> bool {
    if n <= 0.0 {
        return true;
    }
    let origin = lat.vertex_id(0, 0);
    let e = (theta.cos(), theta.sin());
    let labels = cfg.labels(lat, bc);
    let root = labels[origin];
    (0..lat.n_vertices()).any(|v| {
        labels[v] == root && {
            let (x, y) = lat.position(v);
            x * e.0 + y * e.1 >= n
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecayKind {
    /// Correlation length: P[0 <-> floor(n e_theta)].
    PointToPoint,
    /// Point-to-hyperplane rate: P[0 <-> H_{>= n}].
    PointToHyperplane,
    /// Half-plane analogue on a strip with free bottom boundary.
    HalfPlaneHyperplane,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayPoint {
    pub n: f64,
    pub p_hat: f64,
    pub se: f64,
    pub used: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayEstimate {
    pub kind: DecayKind,
    pub theta: f64,
    pub q: f64,
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// Reported rate = 1/slope with delta-method error.
    pub rate: f64,
    pub rate_se: f64,
    pub points: Vec<DecayPoint>,
    pub replicas: usize,
    pub measurements_per_replica: usize,
    pub flags: Vec<String>,
}

/// Fit -log p over n by weighted least squares; p = 0 points are dropped
/// with a warning flag, a non-positive slope is flagged out-of-regime.
pub fn fit_decay_points(
    points: &[DecayPoint],
    kind: DecayKind,
    theta: f64,
    q: f64,
) -> DecayEstimate {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    let mut flags = Vec::new();
    let mut pts = points.to_vec();
    for p in &mut pts {
        if p.p_hat <= 0.0 {
            flags.push(format!("dropped n={} (zero empirical count)", p.n));
            p.used = false;
            continue;
        }
        p.used = true;
        xs.push(p.n);
        ys.push(-p.p_hat.ln());
        // Var(-log p) ~ (se/p)^2; zero se (synthetic input) gets weight 1
        let se_y = if p.se > 0.0 { p.se / p.p_hat } else { 1.0 };
        ws.push(1.0 / (se_y * se_y));
    }
    if xs.len() < 2 {
        flags.push("fewer than two usable points".into());
        return DecayEstimate {
            kind,
            theta,
            q,
            slope: f64::NAN,
            intercept: f64::NAN,
            slope_se: f64::NAN,
            rate: f64::NAN,
            rate_se: f64::NAN,
            points: pts,
            replicas: 0,
            measurements_per_replica: 0,
            flags,
        };
    }
    let (slope, intercept, slope_se, _) = weighted_least_squares(&xs, &ys, &ws);
    if slope <= 0.0 {
        flags.push("non-positive slope: out of the exponential-decay regime".into());
    }
    DecayEstimate {
        kind,
        theta,
        q,
        slope,
        intercept,
        slope_se,
        rate: 1.0 / slope,
        rate_se: slope_se / (slope * slope),
        points: pts,
        replicas: 0,
        measurements_per_replica: 0,
        flags,
    }
}

#[derive(Debug, Clone)]
pub struct DecayConfig {
    pub kind: DecayKind,
    pub theta: f64,
    pub q: f64,
    pub n_grid: Vec<f64>,
    pub replicas: usize,
    pub measurements: usize,
    pub thin: u64,
    pub burn_in: u64,
    pub seed: u64,
    pub stream_base: u64,
}

/// Monte Carlo decay estimate on a lattice patch with free boundary
/// conditions (the free phase is the relevant one for q > 4 rates).
pub fn estimate_decay(lat: &RectLattice, cfg: &DecayConfig) -> DecayEstimate {
    let mut flags = Vec::new();
    if cfg.kind == DecayKind::HalfPlaneHyperplane {
        assert!(
            (cfg.theta - 3.0 * std::f64::consts::PI / 2.0).abs() > 1e-9,
            "theta = 3pi/2 aims into the missing half-plane"
        );
    }
    let e = (cfg.theta.cos(), cfg.theta.sin());
    let targets: Vec<VertexId> = if cfg.kind == DecayKind::PointToPoint {
        cfg.n_grid
            .iter()
            .map(|&n| lat.nearest_primal_vertex(n * e.0, n * e.1))
            .collect()
    } else {
        vec![]
    };
    if cfg.kind != DecayKind::PointToPoint {
        let (rlo, rhi) = lat.vrow_range();
        let (clo, chi) = lat.vcol_range();
        let mut max_dot: f64 = 0.0;
        for (r, c) in [(rlo, clo), (rlo, chi), (rhi, clo), (rhi, chi)] {
            let (x, y) = lat.position_rc(r, c);
            max_dot = max_dot.max(x * e.0 + y * e.1);
        }
        if cfg.n_grid.iter().cloned().fold(0.0, f64::max) > max_dot - 2.0 {
            flags.push("n-grid reaches the window boundary (truncation)".into());
        }
    }
    let weights = WeightTable::from_thetas(lat.edge_thetas(), cfg.q).unwrap();
    let per_replica: Vec<Vec<f64>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|rep| {
            let mut rng = crate::rng::sub(cfg.seed, cfg.stream_base, rep as u64);
            let mut chain = ChainState::new(lat, &weights, PatchBc::free(lat));
            chain.run(cfg.burn_in, &mut rng);
            let origin = lat.vertex_id(0, 0);
            let bc = PatchBc::free(lat);
            let mut hits = vec![0.0f64; cfg.n_grid.len()];
            for _ in 0..cfg.measurements {
                chain.run(cfg.thin, &mut rng);
                let labels = chain.config.labels(lat, &bc);
                let root = labels[origin];
                match cfg.kind {
                    DecayKind::PointToPoint => {
                        for (k, &t) in targets.iter().enumerate() {
                            if labels[t] == root {
                                hits[k] += 1.0;
                            }
                        }
                    }
                    DecayKind::PointToHyperplane | DecayKind::HalfPlaneHyperplane => {
                        let mut max_dot = f64::NEG_INFINITY;
                        for v in 0..lat.n_vertices() {
                            if labels[v] == root {
                                let (x, y) = lat.position(v);
                                max_dot = max_dot.max(x * e.0 + y * e.1);
                            }
                        }
                        for (k, &n) in cfg.n_grid.iter().enumerate() {
                            if max_dot >= n {
                                hits[k] += 1.0;
                            }
                        }
                    }
                }
            }
            hits.iter().map(|h| h / cfg.measurements as f64).collect()
        })
        .collect();
    let points: Vec<DecayPoint> = cfg
        .n_grid
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let samples: Vec<f64> = per_replica.iter().map(|r| r[k]).collect();
            let (m, se) = mean_se(&samples);
            DecayPoint {
                n,
                p_hat: m,
                se,
                used: false,
            }
        })
        .collect();
    let mut est = fit_decay_points(&points, cfg.kind, cfg.theta, cfg.q);
    est.replicas = cfg.replicas;
    est.measurements_per_replica = cfg.measurements;
    est.flags.extend(flags);
    est
}

impl DecayEstimate {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,p_hat,se,used\n");
        for p in &self.points {
            s.push_str(&format!("{},{:.9e},{:.3e},{}\n", p.n, p.p_hat, p.se, p.used));
        }
        s
    }
}

/// Convex duality: xi^{-1}(theta) = max over the grid of
/// zeta^{-1}(theta') <e_theta, e_theta'>.
pub fn convex_dual(thetas: &[f64], zeta_inv: &[f64]) -> Vec<f64> {
    assert_eq!(thetas.len(), zeta_inv.len());
    thetas
        .iter()
        .map(|&t| {
            thetas
                .iter()
                .zip(zeta_inv)
                .map(|(&tp, &zi)| zi * (t - tp).cos())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Wulff polygon: intersection of half-planes <x, e_theta> <= xi_inv(theta).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WulffPolygon {
    pub thetas: Vec<f64>,
    pub radii: Vec<f64>,
    pub vertices: Vec<(f64, f64)>,
    pub area: f64,
    /// Unit-area rescaled copy.
    pub normalized: Vec<(f64, f64)>,
}

pub fn wulff_shape(thetas: &[f64], xi_inv: &[f64]) -> WulffPolygon {
    assert_eq!(thetas.len(), xi_inv.len());
    assert!(xi_inv.iter().all(|&r| r > 0.0), "radii must be positive");
    let big = xi_inv.iter().cloned().fold(0.0, f64::max) * 4.0;
    let mut poly: Vec<(f64, f64)> = vec![(-big, -big), (big, -big), (big, big), (-big, big)];
    for (&t, &r) in thetas.iter().zip(xi_inv) {
        let (nx, ny) = (t.cos(), t.sin());
        // Sutherland-Hodgman clip to <x, n> <= r
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(poly.len() + 1);
        for i in 0..poly.len() {
            let p = poly[i];
            let s = poly[(i + 1) % poly.len()];
            let dp = p.0 * nx + p.1 * ny - r;
            let ds = s.0 * nx + s.1 * ny - r;
            if dp <= 0.0 {
                out.push(p);
            }
            if (dp < 0.0 && ds > 0.0) || (dp > 0.0 && ds < 0.0) {
                let t = dp / (dp - ds);
                out.push((p.0 + t * (s.0 - p.0), p.1 + t * (s.1 - p.1)));
            }
        }
        poly = out;
        if poly.is_empty() {
            break;
        }
    }
    let area = shoelace(&poly);
    let scale = 1.0 / area.sqrt();
    let normalized = poly.iter().map(|&(x, y)| (x * scale, y * scale)).collect();
    WulffPolygon {
        thetas: thetas.to_vec(),
        radii: xi_inv.to_vec(),
        vertices: poly,
        area,
        normalized,
    }
}

fn shoelace(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    let mut a = 0.0;
    for i in 0..n {
        let p = poly[i];
        let s = poly[(i + 1) % n];
        a += p.0 * s.1 - s.0 * p.1;
    }
    a.abs() / 2.0
}

impl WulffPolygon {
    /// max/min radius of the polygon about the origin; 1 for a disk.
    pub fn roundness(&self) -> f64 {
        let max_r = self
            .vertices
            .iter()
            .map(|&(x, y)| (x * x + y * y).sqrt())
            .fold(0.0, f64::max);
        let n = self.vertices.len();
        let mut min_r = f64::INFINITY;
        for i in 0..n {
            min_r = min_r.min(segment_distance(self.vertices[i], self.vertices[(i + 1) % n]));
        }
        max_r / min_r
    }

    /// Largest violation of a defining half-plane by a vertex.
    pub fn max_constraint_violation(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for &(x, y) in &self.vertices {
            for (&t, &r) in self.thetas.iter().zip(&self.radii) {
                worst = worst.max(x * t.cos() + y * t.sin() - r);
            }
        }
        worst
    }

    pub fn to_svg(&self) -> String {
        let pts: Vec<String> = self
            .normalized
            .iter()
            .map(|&(x, y)| format!("{:.5},{:.5}", x, -y))
            .collect();
        let r = self
            .normalized
            .iter()
            .map(|&(x, y)| (x * x + y * y).sqrt())
            .fold(0.0f64, f64::max)
            * 1.15;
        format!(
            concat!(
                "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{:.5} {:.5} {:.5} {:.5}\">\n",
                "<circle cx=\"0\" cy=\"0\" r=\"{:.5}\" fill=\"none\" stroke=\"#bbbbbb\" stroke-width=\"{:.5}\"/>\n",
                "<polygon points=\"{}\" fill=\"#4878a8\" fill-opacity=\"0.35\" stroke=\"#1f4e79\" stroke-width=\"{:.5}\"/>\n",
                "</svg>\n"
            ),
            -r,
            -r,
            2.0 * r,
            2.0 * r,
            1.0 / std::f64::consts::PI.sqrt(),
            r * 0.005,
            pts.join(" "),
            r * 0.01,
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta,radius\n");
        for (&t, &r) in self.thetas.iter().zip(&self.radii) {
            s.push_str(&format!("{t:.12},{r:.12}\n"));
        }
        s.push_str("vertex_x,vertex_y\n");
        for &(x, y) in &self.vertices {
            s.push_str(&format!("{x:.12},{y:.12}\n"));
        }
        s
    }
}

fn segment_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return (a.0 * a.0 + a.1 * a.1).sqrt();
    }
    let t = (((-a.0) * dx + (-a.1) * dy) / len2).clamp(0.0, 1.0);
    let (px, py) = (a.0 + t * dx, a.1 + t * dy);
    (px * px + py * py).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aiming {
    Upper,
    Lower,
    Ambiguous,
}

/// Classify which half-plane the best-connected shell point lies in.
/// Ambiguous when the top candidates (within one combined SE of the best)
/// disagree in sign or sit on the axis.
pub fn classify_shell(positions: &[(f64, f64)], p_hat: &[f64], se: &[f64]) -> Aiming {
    assert_eq!(positions.len(), p_hat.len());
    let best = p_hat
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let mut signs = std::collections::HashSet::new();
    for i in 0..p_hat.len() {
        let comb = (se[i] * se[i] + se[best] * se[best]).sqrt();
        if p_hat[i] + comb >= p_hat[best] {
            let y = positions[i].1;
            signs.insert(if y > 1e-9 {
                1
            } else if y < -1e-9 {
                -1
            } else {
                0
            });
        }
    }
    if signs.len() == 1 {
        match signs.into_iter().next().unwrap() {
            1 => Aiming::Upper,
            -1 => Aiming::Lower,
            _ => Aiming::Ambiguous,
        }
    } else {
        Aiming::Ambiguous
    }
}

pub struct AimingConfig {
    pub q: f64,
    pub theta: f64,
    pub n: f64,
    pub replicas: usize,
    pub measurements: usize,
    pub thin: u64,
    pub burn_in: u64,
    pub seed: u64,
    pub stream_base: u64,
}

/// Empirical aiming diagnostic: argmax over the discrete shell
/// {n <= <x, e_theta> < n + 1} of P[0 <-> x], classified by the sign of
/// its vertical coordinate.
pub fn aiming_diagnostic(
    lat: &RectLattice,
    cfg: &AimingConfig,
) -> (Aiming, Vec<((f64, f64), f64, f64)>) {
    let e = (cfg.theta.cos(), cfg.theta.sin());
    let shell: Vec<VertexId> = lat
        .primal_vertices()
        .filter(|&v| {
            let (x, y) = lat.position(v);
            let d = x * e.0 + y * e.1;
            d >= cfg.n && d < cfg.n + 1.0
        })
        .collect();
    assert!(!shell.is_empty(), "shell empty: window too small for n");
    let weights = WeightTable::from_thetas(lat.edge_thetas(), cfg.q).unwrap();
    let per_replica: Vec<Vec<f64>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|rep| {
            let mut rng = crate::rng::sub(cfg.seed, cfg.stream_base, rep as u64);
            let mut chain = ChainState::new(lat, &weights, PatchBc::free(lat));
            chain.run(cfg.burn_in, &mut rng);
            let origin = lat.vertex_id(0, 0);
            let bc = PatchBc::free(lat);
            let mut hits = vec![0.0f64; shell.len()];
            for _ in 0..cfg.measurements {
                chain.run(cfg.thin, &mut rng);
                let labels = chain.config.labels(lat, &bc);
                let root = labels[origin];
                for (k, &v) in shell.iter().enumerate() {
                    if labels[v] == root {
                        hits[k] += 1.0;
                    }
                }
            }
            hits.iter().map(|h| h / cfg.measurements as f64).collect()
        })
        .collect();
    let mut stats = Vec::new();
    let mut p_hat = Vec::new();
    let mut se = Vec::new();
    let mut positions = Vec::new();
    for (k, &v) in shell.iter().enumerate() {
        let samples: Vec<f64> = per_replica.iter().map(|r| r[k]).collect();
        let (m, s) = mean_se(&samples);
        let pos = lat.position(v);
        stats.push((pos, m, s));
        positions.push(pos);
        p_hat.push(m);
        se.push(if s.is_nan() { 0.0 } else { s });
    }
    (classify_shell(&positions, &p_hat, &se), stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{AngleSequence, Geometry};
    use std::f64::consts::PI;

    fn mix_window(n: usize) -> RectLattice {
        RectLattice::build(
            AngleSequence::Alternating {
                a: PI / 3.0,
                b: PI / 2.0,
            },
            n,
            n,
            Geometry::Window,
        )
        .unwrap()
    }

    #[test]
    fn cluster_labels_match_bfs() {
        let lat = mix_window(4);
        let mut cfg = Configuration::all_closed(lat.n_edges());
        for e in [0usize, 3, 5, 6, 9, 11] {
            if e < lat.n_edges() {
                cfg.open[e] = true;
            }
        }
        cfg.touch();
        let bc = PatchBc::free(&lat);
        let labels = cfg.labels(&lat, &bc).to_vec();
        // independent traversal oracle
        let adj = lat.primal_adjacency();
        let mut seen = vec![u32::MAX; lat.n_vertices()];
        let mut next = 0;
        for s in 0..lat.n_vertices() {
            if seen[s] != u32::MAX {
                continue;
            }
            let mut stack = vec![s];
            seen[s] = next;
            while let Some(v) = stack.pop() {
                for &(w, e) in &adj[v] {
                    if cfg.open[e] && seen[w] == u32::MAX {
                        seen[w] = next;
                        stack.push(w);
                    }
                }
            }
            next += 1;
        }
        for u in 0..lat.n_vertices() {
            for v in 0..lat.n_vertices() {
                assert_eq!(labels[u] == labels[v], seen[u] == seen[v], "vertices {u},{v}");
            }
        }
    }

    #[test]
    fn all_closed_and_all_open_clusters() {
        let lat = mix_window(4);
        let bc = PatchBc::free(&lat);
        let mut cfg = Configuration::all_closed(lat.n_edges());
        let labels = cfg.labels(&lat, &bc);
        let primal: Vec<_> = lat.primal_vertices().collect();
        let distinct: std::collections::HashSet<_> = primal.iter().map(|&v| labels[v]).collect();
        assert_eq!(distinct.len(), primal.len());
        let mut cfg = Configuration::all_open(lat.n_edges());
        let labels = cfg.labels(&lat, &bc);
        let distinct: std::collections::HashSet<_> = primal.iter().map(|&v| labels[v]).collect();
        assert_eq!(distinct.len(), 1);
    }

    #[test]
    fn extremum_singleton_at_origin() {
        let lat = mix_window(8);
        let mut cfg = Configuration::all_closed(lat.n_edges());
        let bc = PatchBc::free(&lat);
        let origin = lat.vertex_id(0, 0);
        let ext = extremum(&mut cfg, &lat, &bc, origin, 0.0);
        assert_eq!(ext.cell, Cell { i: 0, j: 0 });
        assert!(ext.value.abs() < 1e-12);
        assert!(!ext.truncated);
    }

    #[test]
    fn extremum_tie_break_is_total_and_upward() {
        let lat = mix_window(10);
        let bc = PatchBc::free(&lat);
        let mut cfg = Configuration::all_closed(lat.n_edges());
        for r in 0..3 {
            for c in -1..=1 {
                if r >= lat.vrow_range().0
                    && r < lat.vrow_range().1
                    && c >= lat.vcol_range().0
                    && c < lat.vcol_range().1
                {
                    cfg.open[lat.edge_id(r, c)] = true;
                }
            }
        }
        cfg.touch();
        let origin = lat.vertex_id(0, 0);
        let e1 = extremum(&mut cfg, &lat, &bc, origin, 0.0);
        let e2 = extremum(&mut cfg, &lat, &bc, origin, 0.0);
        assert_eq!(e1.cell, e2.cell);
        let vs = cluster_vertices(&mut cfg, &lat, &bc, origin);
        assert!(vs.len() > 1);
        // among cells with the maximal <a, e>, the chosen one is uppermost
        for &v in &vs {
            let (r, c) = lat.vertex_rc(v);
            let cell = lat.cell_of_rc(r, c).unwrap();
            let (ax, ay) = lat.cell_anchor_pos(cell);
            if (ax - e1.value).abs() < 1e-12 {
                assert!(ay <= e1.anchor.1 + 1e-12);
            } else {
                assert!(ax < e1.value);
            }
        }
    }

    #[test]
    fn extremum_can_sit_outside_cluster() {
        // a singleton at (-1, -1) lies in cell (0,0) whose anchor is the
        // origin, which is not part of the cluster
        let lat = mix_window(10);
        let v = lat.vertex_id(-1, -1);
        let ext = extremum_of_vertices(&lat, &[v], PI / 4.0);
        assert_eq!(ext.cell, Cell { i: 0, j: 0 });
        let (px, py) = lat.position(v);
        assert!(ext.anchor.0.abs() < 1e-12 && ext.anchor.1.abs() < 1e-12);
        assert!((px, py) != ext.anchor);
    }

    #[test]
    fn hyperplane_trivial_at_zero() {
        let lat = mix_window(6);
        let bc = PatchBc::free(&lat);
        let mut cfg = Configuration::all_closed(lat.n_edges());
        assert!(hyperplane_connected(&mut cfg, &lat, &bc, 1.234, 0.0));
    }

    #[test]
    fn hyperplane_vs_extremum_within_cell_diameter() {
        let lat = mix_window(8);
        let bc = PatchBc::free(&lat);
        let mut rng = crate::rng::stream(31, 1);
        use rand::Rng as _;
        for _ in 0..40 {
            let mut cfg = Configuration::all_closed(lat.n_edges());
            for e in 0..lat.n_edges() {
                cfg.open[e] = rng.gen::<f64>() < 0.45;
            }
            cfg.touch();
            let origin = lat.vertex_id(0, 0);
            let theta = rng.gen::<f64>() * 2.0 * PI;
            let vs = cluster_vertices(&mut cfg, &lat, &bc, origin);
            let ext = extremum_of_vertices(&lat, &vs, theta);
            for n in [1.0f64, 2.0, 3.0] {
                let hp = hyperplane_connected(&mut cfg, &lat, &bc, theta, n);
                if ext.value >= n + 4.0 {
                    assert!(hp);
                }
                if ext.value < n - 4.0 {
                    assert!(!hp);
                }
            }
        }
    }

    #[test]
    fn synthetic_decay_fit_is_exact() {
        let points: Vec<DecayPoint> = (4..14)
            .map(|n| DecayPoint {
                n: n as f64,
                p_hat: (-(n as f64) / 5.0).exp(),
                se: 0.0,
                used: false,
            })
            .collect();
        let est = fit_decay_points(&points, DecayKind::PointToPoint, 0.0, 9.0);
        assert!((est.rate - 5.0).abs() < 1e-9);
        assert!(est.intercept.abs() < 1e-9);
    }

    #[test]
    fn zero_count_points_are_dropped() {
        let mut points: Vec<DecayPoint> = (1..6)
            .map(|n| DecayPoint {
                n: n as f64,
                p_hat: (-(n as f64) / 2.0).exp(),
                se: 0.01,
                used: false,
            })
            .collect();
        points.push(DecayPoint {
            n: 30.0,
            p_hat: 0.0,
            se: 0.0,
            used: false,
        });
        let est = fit_decay_points(&points, DecayKind::PointToHyperplane, 0.0, 9.0);
        assert!(est.flags.iter().any(|f| f.contains("dropped")));
        assert!((est.rate - 2.0).abs() < 1e-6);
    }

    #[test]
    fn convex_dual_constant_and_point_mass() {
        let thetas: Vec<f64> = (0..64).map(|k| k as f64 * 2.0 * PI / 64.0).collect();
        let c = 0.37;
        let zi: Vec<f64> = vec![c; 64];
        let xi = convex_dual(&thetas, &zi);
        for &x in &xi {
            assert!((x - c).abs() < 1e-12);
        }
        let mut zi = vec![1e-12; 64];
        zi[0] = c;
        let xi = convex_dual(&thetas, &zi);
        for (k, &t) in thetas.iter().enumerate() {
            if t.cos() > 0.1 {
                assert!((xi[k] - c * t.cos()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn convex_dual_grid_refinement() {
        let f = |t: f64| 0.3 + 0.1 * (2.0 * t).cos().abs();
        let coarse: Vec<f64> = (0..32).map(|k| k as f64 * 2.0 * PI / 32.0).collect();
        let fine: Vec<f64> = (0..64).map(|k| k as f64 * 2.0 * PI / 64.0).collect();
        let xc = convex_dual(&coarse, &coarse.iter().map(|&t| f(t)).collect::<Vec<_>>());
        let xf = convex_dual(&fine, &fine.iter().map(|&t| f(t)).collect::<Vec<_>>());
        // Lipschitz bound of r(theta') cos(theta - theta') per grid step
        let bound = 0.4 * (2.0 * PI / 32.0);
        for k in 0..32 {
            assert!((xc[k] - xf[2 * k]).abs() < bound);
        }
    }

    #[test]
    fn wulff_disk_and_symmetry() {
        let thetas: Vec<f64> = (0..256).map(|k| k as f64 * 2.0 * PI / 256.0).collect();
        let poly = wulff_shape(&thetas, &vec![1.0; 256]);
        assert!((poly.area - PI).abs() < 0.01);
        assert!(poly.roundness() < 1.001);
        assert!(poly.max_constraint_violation() < 1e-9);
        let xi: Vec<f64> = thetas.iter().map(|&t| 1.0 + 0.2 * (4.0 * t).cos()).collect();
        let poly = wulff_shape(&thetas, &xi);
        let r_at = |phi: f64| {
            poly.vertices
                .iter()
                .map(|&(x, y)| {
                    let ang = y.atan2(x);
                    let d = ((ang - phi + PI).rem_euclid(2.0 * PI) - PI).abs();
                    (d, (x * x + y * y).sqrt())
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .unwrap()
                .1
        };
        for k in 1..4 {
            let phi = 0.3 + k as f64 * PI / 2.0;
            assert!((r_at(phi) - r_at(0.3)).abs() < 0.02);
        }
        assert!(poly.roundness() > 1.05);
        assert!(poly.to_svg().contains("polygon"));
    }

    #[test]
    fn shell_classification() {
        let positions = vec![(10.0, 2.0), (10.0, -2.0), (10.0, 0.0)];
        let p = vec![0.5, 0.2, 0.2];
        let se = vec![0.01, 0.01, 0.01];
        assert_eq!(classify_shell(&positions, &p, &se), Aiming::Upper);
        let p = vec![0.3, 0.3, 0.1];
        assert_eq!(classify_shell(&positions, &p, &se), Aiming::Ambiguous);
        let p = vec![0.1, 0.4, 0.1];
        assert_eq!(classify_shell(&positions, &p, &se), Aiming::Lower);
    }
}
