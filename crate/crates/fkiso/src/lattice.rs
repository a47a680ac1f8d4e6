//! Isoradial rectangular lattice patches.
//!
//! The diamond graph is a grid of unit rhombi indexed by (row, col).
//! Vertex (r, c) sits at `(c + X(r), Y(r))` where X, Y accumulate
//! `cos`/`sin` of the row angles. Horizontal track `t_i` is rhombus row
//! `i - 1`; vertical track `s_j` is rhombus column `j - 1`. A diamond
//! vertex is primal when `r + c` is even (roles swap on the dual).
//! Each rhombus holds exactly one primal edge (one of its diagonals),
//! so edges are indexed by rhombus.
//!
//! Combinatorial queries never consult the embedding; coordinates exist
//! for observables and output only.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("angle {0} outside (0, pi)")]
    AngleOutOfRange(f64),
    #[error("more than two distinct angle values in sequence")]
    TooManyValues,
    #[error("empty angle sequence")]
    Empty,
    #[error("track counts must be >= 1")]
    BadSize,
    #[error("point ({0}, {1}) outside the built window")]
    OutsideWindow(i32, i32),
}

/// Sequence of transverse angles for the horizontal tracks, at most two
/// distinct values.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum AngleSequence {
    /// alpha_i = a for all i.
    Constant(f64),
    /// alpha_i = b for even i, a for odd i (the mixed lattice).
    Alternating { a: f64, b: f64 },
    /// Blocks of n: alpha_i = a for 2kn < i <= (2k+1)n, b otherwise.
    Blocks { a: f64, b: f64, n: usize },
    /// Explicit finite sequence for tracks t_1, t_2, ... (strips only).
    Explicit(Vec<f64>),
}

impl AngleSequence {
    pub fn validate(&self) -> Result<(), LatticeError> {
        let vals = self.values();
        if vals.is_empty() {
            return Err(LatticeError::Empty);
        }
        for &v in &vals {
            if !(v > 0.0 && v < PI) {
                return Err(LatticeError::AngleOutOfRange(v));
            }
        }
        let mut distinct: Vec<f64> = Vec::new();
        for &v in &vals {
            if !distinct.iter().any(|&d| d == v) {
                distinct.push(v);
            }
        }
        if distinct.len() > 2 {
            return Err(LatticeError::TooManyValues);
        }
        Ok(())
    }

    fn values(&self) -> Vec<f64> {
        match self {
            AngleSequence::Constant(a) => vec![*a],
            AngleSequence::Alternating { a, b } | AngleSequence::Blocks { a, b, .. } => {
                vec![*a, *b]
            }
            AngleSequence::Explicit(v) => v.clone(),
        }
    }

    /// Period of the sequence, if periodic.
    pub fn period(&self) -> Option<usize> {
        match self {
            AngleSequence::Constant(_) => Some(1),
            AngleSequence::Alternating { .. } => Some(2),
            AngleSequence::Blocks { n, .. } => Some(2 * n),
            AngleSequence::Explicit(_) => None,
        }
    }

    /// Transverse angle of track t_i. Periodic variants accept any i;
    /// explicit sequences are defined for 1 <= i <= len.
    pub fn angle_at(&self, i: i32) -> f64 {
        match self {
            AngleSequence::Constant(a) => *a,
            AngleSequence::Alternating { a, b } => {
                if i.rem_euclid(2) == 0 {
                    *b
                } else {
                    *a
                }
            }
            AngleSequence::Blocks { a, b, n } => {
                let n = *n as i32;
                if (i - 1).div_euclid(n).rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
            AngleSequence::Explicit(v) => {
                assert!(i >= 1 && (i as usize) <= v.len(), "track {i} out of range");
                v[(i - 1) as usize]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Geometry {
    /// Half-plane strip: vertex rows 0..=height, free bottom boundary at row 0.
    Strip,
    /// Full-plane window centered on the origin vertex.
    Window,
}

/// Identifier of a cell: two vertex rows {2j-1, 2j} x two vertex cols
/// {2i-1, 2i}. The anchor is the primal vertex (2j, 2i), so the cell
/// containing the origin has anchor at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub i: i32,
    pub j: i32,
}

#[derive(Debug, Clone)]
pub struct RectLattice {
    pub angles: AngleSequence,
    pub geometry: Geometry,
    /// Angle of rhombus row r, index r - vrow_lo.
    row_angles: Vec<f64>,
    vrow_lo: i32,
    vrow_hi: i32, // inclusive
    vcol_lo: i32,
    vcol_hi: i32, // inclusive
    /// 0: vertex (r, c) primal iff r + c even; 1: the dual.
    parity: u8,
    /// Embedding offsets per vertex row (index r - vrow_lo).
    x_off: Vec<f64>,
    y_off: Vec<f64>,
}

pub type VertexId = usize;
pub type EdgeId = usize;

impl RectLattice {
    /// Build a patch: `width` vertical tracks, `height` horizontal tracks.
    pub fn build(
        angles: AngleSequence,
        width: usize,
        height: usize,
        geometry: Geometry,
    ) -> Result<Self, LatticeError> {
        if width < 1 || height < 1 {
            return Err(LatticeError::BadSize);
        }
        angles.validate()?;
        let (vrow_lo, vrow_hi) = match geometry {
            Geometry::Strip => (0, height as i32),
            Geometry::Window => {
                let h2 = (height / 2) as i32;
                (-h2, height as i32 - h2)
            }
        };
        let (vcol_lo, vcol_hi) = match geometry {
            Geometry::Strip => (0, width as i32),
            Geometry::Window => {
                let w2 = (width / 2) as i32;
                (-w2, width as i32 - w2)
            }
        };
        Self::build_at(angles, geometry, vrow_lo, vrow_hi, vcol_lo, vcol_hi)
    }

    /// Build with explicit vertex ranges (rows/cols inclusive). Used when a
    /// specific column parity is required, e.g. by the track-exchange tests.
    pub fn build_at(
        angles: AngleSequence,
        geometry: Geometry,
        vrow_lo: i32,
        vrow_hi: i32,
        vcol_lo: i32,
        vcol_hi: i32,
    ) -> Result<Self, LatticeError> {
        angles.validate()?;
        assert!(vrow_hi > vrow_lo && vcol_hi > vcol_lo);
        let row_angles: Vec<f64> = (vrow_lo..vrow_hi)
            .map(|r| angles.angle_at(r + 1)) // rhombus row r = track r+1
            .collect();
        let mut lat = RectLattice {
            angles,
            geometry,
            row_angles,
            vrow_lo,
            vrow_hi,
            vcol_lo,
            vcol_hi,
            parity: 0,
            x_off: Vec::new(),
            y_off: Vec::new(),
        };
        lat.rebuild_embedding();
        Ok(lat)
    }

    pub fn rebuild_embedding(&mut self) {
        let n = (self.vrow_hi - self.vrow_lo + 1) as usize;
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        // Row 0 (or vrow_lo if positive) is the reference; accumulate upward
        // and downward from vertex row 0 so the origin stays at (0, 0).
        let base = (-self.vrow_lo).clamp(0, n as i32 - 1) as usize;
        for k in (base + 1)..n {
            let a = self.row_angles[k - 1];
            x[k] = x[k - 1] + a.cos();
            y[k] = y[k - 1] + a.sin();
        }
        for k in (0..base).rev() {
            let a = self.row_angles[k];
            x[k] = x[k + 1] - a.cos();
            y[k] = y[k + 1] - a.sin();
        }
        self.x_off = x;
        self.y_off = y;
    }

    #[inline]
    pub fn vrow_range(&self) -> (i32, i32) {
        (self.vrow_lo, self.vrow_hi)
    }
    #[inline]
    pub fn vcol_range(&self) -> (i32, i32) {
        (self.vcol_lo, self.vcol_hi)
    }
    #[inline]
    pub fn n_vrows(&self) -> usize {
        (self.vrow_hi - self.vrow_lo + 1) as usize
    }
    #[inline]
    pub fn n_vcols(&self) -> usize {
        (self.vcol_hi - self.vcol_lo + 1) as usize
    }
    #[inline]
    pub fn n_vertices(&self) -> usize {
        self.n_vrows() * self.n_vcols()
    }
    #[inline]
    pub fn n_rhombus_rows(&self) -> usize {
        self.n_vrows() - 1
    }
    #[inline]
    pub fn n_rhombus_cols(&self) -> usize {
        self.n_vcols() - 1
    }
    #[inline]
    pub fn n_edges(&self) -> usize {
        self.n_rhombus_rows() * self.n_rhombus_cols()
    }
    pub fn n_tracks(&self) -> usize {
        self.n_rhombus_rows()
    }

    #[inline]
    pub fn vertex_id(&self, r: i32, c: i32) -> VertexId {
        debug_assert!(self.contains_vertex(r, c));
        ((r - self.vrow_lo) as usize) * self.n_vcols() + (c - self.vcol_lo) as usize
    }

    #[inline]
    pub fn vertex_rc(&self, v: VertexId) -> (i32, i32) {
        let w = self.n_vcols();
        (
            self.vrow_lo + (v / w) as i32,
            self.vcol_lo + (v % w) as i32,
        )
    }

    #[inline]
    pub fn contains_vertex(&self, r: i32, c: i32) -> bool {
        r >= self.vrow_lo && r <= self.vrow_hi && c >= self.vcol_lo && c <= self.vcol_hi
    }

    #[inline]
    pub fn is_primal_rc(&self, r: i32, c: i32) -> bool {
        ((r + c).rem_euclid(2) as u8) == self.parity
    }

    /// Rhombus (r, c): r is the rhombus row (between vertex rows r, r+1).
    #[inline]
    pub fn edge_id(&self, r: i32, c: i32) -> EdgeId {
        debug_assert!(r >= self.vrow_lo && r < self.vrow_hi && c >= self.vcol_lo && c < self.vcol_hi);
        ((r - self.vrow_lo) as usize) * self.n_rhombus_cols() + (c - self.vcol_lo) as usize
    }

    #[inline]
    pub fn edge_rc(&self, e: EdgeId) -> (i32, i32) {
        let w = self.n_rhombus_cols();
        (
            self.vrow_lo + (e / w) as i32,
            self.vcol_lo + (e % w) as i32,
        )
    }

    /// Angle of the rhombus row containing edge `e` (the track's transverse angle).
    #[inline]
    pub fn row_angle(&self, rhombus_row: i32) -> f64 {
        self.row_angles[(rhombus_row - self.vrow_lo) as usize]
    }

    pub fn row_angles(&self) -> &[f64] {
        &self.row_angles
    }

    /// Transverse angle of horizontal track t_i (rhombus row i - 1).
    pub fn track_angle(&self, i: i32) -> f64 {
        self.row_angle(i - 1)
    }

    /// Swap the angles of tracks t_i and t_{i-1} (rhombus rows i-1 and i-2).
    pub fn swap_tracks(&mut self, i: i32) {
        let lo = (i - 2 - self.vrow_lo) as usize;
        let hi = (i - 1 - self.vrow_lo) as usize;
        self.row_angles.swap(lo, hi);
        self.rebuild_embedding();
    }

    /// The primal edge of rhombus (r, c) runs along the main diagonal when
    /// the lower-left corner is primal, else along the antidiagonal.
    #[inline]
    pub fn edge_endpoints_rc(&self, r: i32, c: i32) -> ((i32, i32), (i32, i32)) {
        if self.is_primal_rc(r, c) {
            ((r, c), (r + 1, c + 1))
        } else {
            ((r, c + 1), (r + 1, c))
        }
    }

    #[inline]
    pub fn edge_endpoints(&self, e: EdgeId) -> (VertexId, VertexId) {
        let (r, c) = self.edge_rc(e);
        let (a, b) = self.edge_endpoints_rc(r, c);
        (self.vertex_id(a.0, a.1), self.vertex_id(b.0, b.1))
    }

    /// Subtended angle theta_e: `pi - alpha` for main-diagonal edges of a
    /// row with transverse angle alpha, `alpha` for antidiagonal edges.
    #[inline]
    pub fn edge_theta(&self, e: EdgeId) -> f64 {
        let (r, c) = self.edge_rc(e);
        let a = self.row_angle(r);
        if self.is_primal_rc(r, c) {
            PI - a
        } else {
            a
        }
    }

    pub fn edge_thetas(&self) -> Vec<f64> {
        (0..self.n_edges()).map(|e| self.edge_theta(e)).collect()
    }

    /// The dual lattice: primal/dual roles exchanged; each rhombus's edge
    /// becomes the crossing diagonal with theta* = pi - theta.
    pub fn dual(&self) -> RectLattice {
        let mut d = self.clone();
        d.parity = 1 - self.parity;
        d
    }

    #[inline]
    pub fn position_rc(&self, r: i32, c: i32) -> (f64, f64) {
        let k = (r - self.vrow_lo) as usize;
        (c as f64 + self.x_off[k], self.y_off[k])
    }

    #[inline]
    pub fn position(&self, v: VertexId) -> (f64, f64) {
        let (r, c) = self.vertex_rc(v);
        self.position_rc(r, c)
    }

    /// Primal vertices of the patch.
    pub fn primal_vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        (0..self.n_vertices()).filter(move |&v| {
            let (r, c) = self.vertex_rc(v);
            self.is_primal_rc(r, c)
        })
    }

    /// Adjacency over primal edges: for each vertex, (neighbor, edge) pairs.
    pub fn primal_adjacency(&self) -> Vec<Vec<(VertexId, EdgeId)>> {
        let mut adj = vec![Vec::new(); self.n_vertices()];
        for e in 0..self.n_edges() {
            let (u, v) = self.edge_endpoints(e);
            adj[u].push((v, e));
            adj[v].push((u, e));
        }
        adj
    }

    /// Boundary vertices per the patch geometry: for strips, the rows below
    /// t_1 and above t_K; for windows, the perimeter.
    pub fn boundary_vertices(&self) -> Vec<VertexId> {
        let mut out = Vec::new();
        for v in self.primal_vertices() {
            let (r, c) = self.vertex_rc(v);
            let on = match self.geometry {
                Geometry::Strip => r == self.vrow_lo || r == self.vrow_hi,
                Geometry::Window => {
                    r == self.vrow_lo || r == self.vrow_hi || c == self.vcol_lo || c == self.vcol_hi
                }
            };
            if on {
                out.push(v);
            }
        }
        out
    }

    /// Cell containing vertex (r, c): rows {2j-1, 2j}, cols {2i-1, 2i}.
    pub fn cell_of_rc(&self, r: i32, c: i32) -> Result<Cell, LatticeError> {
        if !self.contains_vertex(r, c) {
            return Err(LatticeError::OutsideWindow(r, c));
        }
        Ok(Cell {
            i: (c + 1).div_euclid(2),
            j: (r + 1).div_euclid(2),
        })
    }

    /// Anchor vertex of a cell: the primal vertex (2j, 2i).
    pub fn cell_anchor_rc(&self, cell: Cell) -> (i32, i32) {
        (2 * cell.j, 2 * cell.i)
    }

    /// Embedding position of a cell anchor. Defined even when the anchor
    /// vertex row lies just outside the window (extrapolated), so an
    /// extremal cell on the window edge still has a coordinate.
    pub fn cell_anchor_pos(&self, cell: Cell) -> (f64, f64) {
        let (r, c) = self.cell_anchor_rc(cell);
        let rr = r.clamp(self.vrow_lo, self.vrow_hi);
        let (x, y) = self.position_rc(rr, c);
        if rr == r {
            (x, y)
        } else {
            // extrapolate by whole rows of the (periodic) sequence
            let a = self.angles.angle_at(rr + 1);
            let d = (r - rr) as f64;
            (x + d * a.cos(), y + d * a.sin())
        }
    }

    /// Nearest primal vertex to a plane point, ties broken by
    /// lexicographically smallest position.
    pub fn nearest_primal_vertex(&self, x: f64, y: f64) -> VertexId {
        // Y(r) is strictly increasing; bracket the row by binary search.
        let n = self.n_vrows();
        let mut lo = 0usize;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.y_off[mid] < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut best: Option<(f64, (f64, f64), VertexId)> = None;
        for k in lo.saturating_sub(1)..=(hi + 1).min(n - 1) {
            let r = self.vrow_lo + k as i32;
            let c0 = (x - self.x_off[k]).floor() as i32;
            for c in (c0 - 2)..=(c0 + 2) {
                if !self.contains_vertex(r, c) || !self.is_primal_rc(r, c) {
                    continue;
                }
                let (px, py) = self.position_rc(r, c);
                let d2 = (px - x).powi(2) + (py - y).powi(2);
                let key = (d2, (px, py), self.vertex_id(r, c));
                let better = match &best {
                    None => true,
                    Some((bd, bp, _)) => {
                        d2 < bd - 1e-12 || (d2 < bd + 1e-12 && (px, py) < *bp)
                    }
                };
                if better {
                    best = Some(key);
                }
            }
        }
        best.expect("window contains at least one primal vertex").2
    }

    /// Plain-text record of the lattice spec.
    pub fn spec_record(&self) -> String {
        let (angles, period) = match &self.angles {
            AngleSequence::Constant(a) => (format!("{a:.17}"), "1".to_string()),
            AngleSequence::Alternating { a, b } => (format!("{a:.17},{b:.17}"), "2".to_string()),
            AngleSequence::Blocks { a, b, n } => {
                (format!("{a:.17},{b:.17}"), format!("{}", 2 * n))
            }
            AngleSequence::Explicit(v) => (
                v.iter()
                    .map(|a| format!("{a:.17}"))
                    .collect::<Vec<_>>()
                    .join(","),
                "-".to_string(),
            ),
        };
        format!(
            "angles={angles} period={period} width={} height={} geometry={:?}",
            self.n_rhombus_cols(),
            self.n_tracks(),
            self.geometry
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l_alpha(alpha: f64, w: usize, h: usize) -> RectLattice {
        RectLattice::build(AngleSequence::Constant(alpha), w, h, Geometry::Window).unwrap()
    }

    #[test]
    fn rhombus_sides_are_unit() {
        let lat = l_alpha(PI / 3.0, 6, 6);
        for r in lat.vrow_lo..lat.vrow_hi {
            for c in lat.vcol_lo..lat.vcol_hi {
                let p00 = lat.position_rc(r, c);
                let p01 = lat.position_rc(r, c + 1);
                let p10 = lat.position_rc(r + 1, c);
                let h = ((p01.0 - p00.0).powi(2) + (p01.1 - p00.1).powi(2)).sqrt();
                let s = ((p10.0 - p00.0).powi(2) + (p10.1 - p00.1).powi(2)).sqrt();
                assert!((h - 1.0).abs() < 1e-12);
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn square_lattice_edge_lengths() {
        // alpha = pi/2: all primal edges have length sqrt(2).
        let lat = l_alpha(PI / 2.0, 4, 4);
        for e in 0..lat.n_edges() {
            let (u, v) = lat.edge_endpoints(e);
            let (ux, uy) = lat.position(u);
            let (vx, vy) = lat.position(v);
            let len = ((ux - vx).powi(2) + (uy - vy).powi(2)).sqrt();
            assert!((len - 2.0f64.sqrt()).abs() < 1e-12);
            assert!((lat.edge_theta(e) - PI / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn edge_lengths_match_angle() {
        // horizontal edges 2cos(a/2), vertical 2sin(a/2)
        let a = PI / 3.0;
        let lat = l_alpha(a, 6, 6);
        for e in 0..lat.n_edges() {
            let (u, v) = lat.edge_endpoints(e);
            let (ux, uy) = lat.position(u);
            let (vx, vy) = lat.position(v);
            let len = ((ux - vx).powi(2) + (uy - vy).powi(2)).sqrt();
            let theta = lat.edge_theta(e);
            if (theta - (PI - a)).abs() < 1e-12 {
                assert!((len - 2.0 * (a / 2.0).cos()).abs() < 1e-12);
            } else {
                assert!((theta - a).abs() < 1e-12);
                assert!((len - 2.0 * (a / 2.0).sin()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dual_pairing_thetas() {
        let lat = l_alpha(2.0 * PI / 3.0, 6, 6);
        let dual = lat.dual();
        assert_eq!(lat.n_edges(), dual.n_edges());
        for e in 0..lat.n_edges() {
            assert!((lat.edge_theta(e) + dual.edge_theta(e) - PI).abs() < 1e-12);
            // crossing diagonals share no endpoint
            let (a, b) = lat.edge_endpoints(e);
            let (c, d) = dual.edge_endpoints(e);
            assert!(a != c && a != d && b != c && b != d);
        }
        // involution
        let dd = dual.dual();
        assert_eq!(dd.parity, lat.parity);
    }

    #[test]
    fn origin_is_primal_and_anchor_of_origin_cell() {
        let lat = RectLattice::build(
            AngleSequence::Alternating { a: PI / 3.0, b: PI / 2.0 },
            8,
            8,
            Geometry::Window,
        )
        .unwrap();
        assert!(lat.is_primal_rc(0, 0));
        let cell = lat.cell_of_rc(0, 0).unwrap();
        assert_eq!(cell, Cell { i: 0, j: 0 });
        assert_eq!(lat.cell_anchor_rc(cell), (0, 0));
        // anchors are primal
        for j in -1..2 {
            for i in -1..2 {
                let (r, c) = lat.cell_anchor_rc(Cell { i, j });
                assert!((r + c) % 2 == 0);
            }
        }
    }

    #[test]
    fn every_vertex_in_exactly_one_cell() {
        let lat = RectLattice::build(
            AngleSequence::Alternating { a: PI / 3.0, b: PI / 2.0 },
            8,
            8,
            Geometry::Window,
        )
        .unwrap();
        for v in 0..lat.n_vertices() {
            let (r, c) = lat.vertex_rc(v);
            let cell = lat.cell_of_rc(r, c).unwrap();
            // membership: r in {2j-1, 2j}, c in {2i-1, 2i}
            assert!(r == 2 * cell.j || r == 2 * cell.j - 1);
            assert!(c == 2 * cell.i || c == 2 * cell.i - 1);
        }
    }

    #[test]
    fn mixed_lattice_beta_at_even_tracks() {
        let a = PI / 3.0;
        let b = PI / 2.0;
        let lat = RectLattice::build(
            AngleSequence::Alternating { a, b },
            6,
            6,
            Geometry::Strip,
        )
        .unwrap();
        for i in 1..=6 {
            let expect = if i % 2 == 0 { b } else { a };
            assert_eq!(lat.track_angle(i), expect);
        }
        // cells centred on beta-rhombi: the rhombus row between the cell's
        // vertex rows {2j-1, 2j} is row 2j-1 = track 2j.
        assert_eq!(lat.angles.angle_at(2), b);
    }

    #[test]
    fn cells_tile_window_with_distinct_anchors() {
        let lat = RectLattice::build(
            AngleSequence::Alternating { a: PI / 3.0, b: PI / 2.0 },
            8,
            8,
            Geometry::Window,
        )
        .unwrap();
        let mut anchors = std::collections::HashSet::new();
        let mut cells = std::collections::HashSet::new();
        for v in 0..lat.n_vertices() {
            let (r, c) = lat.vertex_rc(v);
            let cell = lat.cell_of_rc(r, c).unwrap();
            cells.insert(cell);
            anchors.insert(lat.cell_anchor_rc(cell));
        }
        assert_eq!(anchors.len(), cells.len());
    }

    #[test]
    fn reflection_symmetry_of_constant_lattice() {
        // Reflection across the line of direction e^{i a/2} maps L(a) to
        // itself: check that the multiset of (theta, length) pairs of edges
        // incident to the origin is symmetric under the reflection.
        let a = 2.0 * PI / 3.0;
        let lat = l_alpha(a, 8, 8);
        let (ux, uy) = ((a / 2.0).cos(), (a / 2.0).sin());
        let reflect = |x: f64, y: f64| {
            let d = x * ux + y * uy;
            (2.0 * d * ux - x, 2.0 * d * uy - y)
        };
        // collect positions of all primal vertices and reflect them; each
        // image must coincide with a primal vertex position (within the
        // window interior).
        let mut count = 0;
        for v in lat.primal_vertices() {
            let (x, y) = lat.position(v);
            if x.abs() > 2.0 || y.abs() > 2.0 {
                continue;
            }
            let (rx, ry) = reflect(x, y);
            let w = lat.nearest_primal_vertex(rx, ry);
            let (wx, wy) = lat.position(w);
            assert!(
                ((wx - rx).powi(2) + (wy - ry).powi(2)).sqrt() < 1e-9,
                "reflection image of ({x},{y}) not a lattice point"
            );
            count += 1;
        }
        assert!(count > 3);
    }

    #[test]
    fn nearest_vertex_tie_break() {
        let lat = l_alpha(PI / 2.0, 6, 6);
        // midpoint between two primal vertices: pick lexicographically smaller
        let v = lat.vertex_id(0, 0);
        let w = lat.vertex_id(1, 1);
        let (ax, ay) = lat.position(v);
        let (bx, by) = lat.position(w);
        let got = lat.nearest_primal_vertex((ax + bx) / 2.0, (ay + by) / 2.0);
        let (gx, gy) = lat.position(got);
        assert!((gx, gy) <= (bx, by));
    }

    #[test]
    fn rejects_three_values() {
        let seq = AngleSequence::Explicit(vec![1.0, 1.5, 2.0]);
        assert!(matches!(seq.validate(), Err(LatticeError::TooManyValues)));
    }
}
