//! Global degree-of-freedom layout: element-private interior L2 dofs,
//! skeleton û dofs (vertices, edge bubbles, face bubbles) and face σ̂n dofs,
//! with Dirichlet/Neumann elimination by projection-based interpolation of
//! boundary data and one-level hanging-node resolution.
//!
//! Each leaf side carries a `SideClosure` (local 2D H1 closure basis at the
//! interface orders, a local-from-global matrix over free û dofs, plus the
//! prescribed part) and a `SideFlux` (the carrying face's σ̂n dofs).

use super::{edge_constraint_rows, face_constraint_rows, ClosureLayout, EdgeLayout};
use crate::basis::{gauss_rule, lobatto_h1, orthonormal_legendre};
use crate::geom::{Placement, Rect};
use crate::mesh::{
    EdgeEnt, EdgeStatus, ElemId, FaceStatus, Mesh, MeshError, Skeleton, VertStatus,
};
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Boundary condition kind of a boundary face.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcKind {
    Dirichlet,
    Neumann,
}

/// Problem data needed to build a dof map.
pub trait BoundaryData: Sync {
    fn boundary_kind(&self, rect: &Rect, outward: [f64; 3]) -> BcKind;
    /// û data on (the closure of) the Dirichlet boundary.
    fn dirichlet(&self, x: [f64; 3]) -> f64;
    /// σ·n data on the Neumann boundary (n = outward).
    fn neumann(&self, x: [f64; 3], outward: [f64; 3]) -> f64;
}

/// Local closure representation of û on one element side: the local basis
/// lives on the side rectangle at the interface orders; local coefficients
/// are `l_matrix * x_free + fixed`.
#[derive(Clone, Debug)]
pub struct SideClosure {
    /// û trace degrees per side tangent.
    pub orders: [usize; 2],
    /// Global û dof ids referenced by this side.
    pub free_refs: Vec<usize>,
    /// closure dim x free_refs.len()
    pub l_matrix: DMatrix<f64>,
    /// Prescribed (Dirichlet) part of the local closure coefficients.
    pub fixed: DVector<f64>,
}

/// σ̂n on one element side: coefficients live on the carrying face (the side's
/// own face when free, its master when constrained).
#[derive(Clone, Debug)]
pub struct SideFlux {
    /// Carrying face rectangle (basis domain).
    pub rect: Rect,
    /// σ̂n dof counts per carrying-face tangent.
    pub orders: [usize; 2],
    /// Where the side sits inside the carrying face.
    pub sub: Placement,
    /// +1 when the element's outward normal is the +axis direction.
    pub sign: f64,
    /// Global σ̂n dof ids (empty on Neumann data faces).
    pub free_refs: Vec<usize>,
    /// Prescribed coefficients (Neumann data), zero when free.
    pub fixed: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct SideData {
    pub closure: SideClosure,
    pub flux: SideFlux,
}

#[derive(Clone, Debug)]
pub struct ElemTrace {
    pub sides: Vec<SideData>,
}

/// Reference to a free dof or a fixed (eliminated) value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TraceRef {
    Free(usize),
    Fixed(f64),
}

/// Global dof layout for one mesh generation.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub generation: u64,
    pub n_dofs: usize,
    pub n_interior: usize,
    pub n_interface: usize,
    interior_base: BTreeMap<ElemId, usize>,
    pub traces: BTreeMap<ElemId, ElemTrace>,
}

impl DofMap {
    /// Base index of the interior dof block of a leaf; the block holds
    /// 4 * px*py*pz coefficients ordered (u, sigma_x, sigma_y, sigma_z).
    pub fn interior_base(&self, elem: ElemId) -> usize {
        self.interior_base[&elem]
    }

    pub fn trace(&self, elem: ElemId) -> &ElemTrace {
        &self.traces[&elem]
    }

    pub fn build(
        mesh: &Mesh,
        problem: &dyn BoundaryData,
        data_boost: usize,
    ) -> Result<DofMap, MeshError> {
        let skel = mesh.skeleton()?;
        Builder { mesh, skel: skel.clone(), problem, boost: data_boost }.run()
    }
}

/// Linear form over free dofs plus a constant (prescribed) part.
#[derive(Clone, Debug, Default)]
struct LinForm {
    terms: Vec<(usize, f64)>,
    fixed: f64,
}

impl LinForm {
    fn free(dof: usize) -> LinForm {
        LinForm { terms: vec![(dof, 1.0)], fixed: 0.0 }
    }

    fn fixed(v: f64) -> LinForm {
        LinForm { terms: vec![], fixed: v }
    }

    fn zero() -> LinForm {
        LinForm::default()
    }

    fn add_scaled(&mut self, other: &LinForm, c: f64) {
        if c == 0.0 {
            return;
        }
        for &(d, v) in &other.terms {
            self.terms.push((d, c * v));
        }
        self.fixed += c * other.fixed;
    }
}

/// Per-entity û dof storage.
#[derive(Clone, Debug)]
enum UDofs {
    Free { base: usize, count: usize },
    Fixed { values: Vec<f64> },
    Hanging,
}

struct Builder<'a> {
    mesh: &'a Mesh,
    skel: Arc<Skeleton>,
    problem: &'a dyn BoundaryData,
    boost: usize,
}

impl<'a> Builder<'a> {
    fn run(self) -> Result<DofMap, MeshError> {
        let skel = &self.skel;
        let nf = skel.faces.len();
        let ne = skel.edges.len();
        let nv = skel.verts.len();

        // boundary classification
        let mut face_bc: Vec<Option<BcKind>> = vec![None; nf];
        for (i, fe) in skel.faces.iter().enumerate() {
            if fe.boundary {
                let outward = self.outward_of(i);
                face_bc[i] = Some(self.problem.boundary_kind(&fe.rect, outward));
            }
        }
        let diri_rects: Vec<Rect> = skel
            .faces
            .iter()
            .enumerate()
            .filter(|(i, _)| face_bc[*i] == Some(BcKind::Dirichlet))
            .map(|(_, fe)| fe.rect)
            .collect();

        let vert_diri: Vec<bool> = skel
            .verts
            .iter()
            .map(|v| diri_rects.iter().any(|r| rect_contains_point(r, v.point)))
            .collect();
        let edge_diri: Vec<bool> = skel
            .edges
            .iter()
            .map(|e| diri_rects.iter().any(|r| rect_contains_seg(r, &e.seg)))
            .collect();

        // ---- numbering ----------------------------------------------------
        let mut next = 0usize;
        let mut interior_base = BTreeMap::new();
        for el in self.mesh.leaves() {
            interior_base.insert(el.id, next);
            next += 4 * el.order.iter().product::<usize>();
        }
        let n_interior = next;

        let mut vert_dofs: Vec<UDofs> = vec![UDofs::Hanging; nv];
        for (i, v) in skel.verts.iter().enumerate() {
            if matches!(v.status, VertStatus::Free) {
                if vert_diri[i] {
                    vert_dofs[i] =
                        UDofs::Fixed { values: vec![self.problem.dirichlet(v.point)] };
                } else {
                    vert_dofs[i] = UDofs::Free { base: next, count: 1 };
                    next += 1;
                }
            }
        }

        let mut edge_dofs: Vec<UDofs> = vec![UDofs::Hanging; ne];
        for (i, e) in skel.edges.iter().enumerate() {
            if matches!(e.status, EdgeStatus::Free) {
                let count = e.order.saturating_sub(1);
                if edge_diri[i] {
                    edge_dofs[i] = UDofs::Fixed { values: vec![0.0; count] };
                } else {
                    edge_dofs[i] = UDofs::Free { base: next, count };
                    next += count;
                }
            }
        }

        let mut face_udofs: Vec<UDofs> = vec![UDofs::Hanging; nf];
        for (i, f) in skel.faces.iter().enumerate() {
            if matches!(f.status, FaceStatus::Free) {
                let count = f.order[0].saturating_sub(1) * f.order[1].saturating_sub(1);
                if face_bc[i] == Some(BcKind::Dirichlet) {
                    face_udofs[i] = UDofs::Fixed { values: vec![0.0; count] };
                } else {
                    face_udofs[i] = UDofs::Free { base: next, count };
                    next += count;
                }
            }
        }

        let mut face_sdofs: Vec<UDofs> = vec![UDofs::Hanging; nf];
        for (i, f) in skel.faces.iter().enumerate() {
            if matches!(f.status, FaceStatus::Free) {
                let count = f.order[0] * f.order[1];
                if face_bc[i] == Some(BcKind::Neumann) {
                    face_sdofs[i] = UDofs::Fixed { values: vec![0.0; count] };
                } else {
                    face_sdofs[i] = UDofs::Free { base: next, count };
                    next += count;
                }
            }
        }
        let n_dofs = next;

        // ---- Dirichlet data interpolation ----------------------------------
        // edge bubbles: first edges with free endpoints, then the rest (their
        // hanging endpoints resolve through masters computed in pass one)
        let mut edge_fix: Vec<Option<Vec<f64>>> = vec![None; ne];
        for pass in 0..2 {
            for (i, e) in skel.edges.iter().enumerate() {
                if !matches!(e.status, EdgeStatus::Free) || !edge_diri[i] || edge_fix[i].is_some() {
                    continue;
                }
                let endpoints_free = e
                    .verts
                    .iter()
                    .all(|&v| matches!(skel.verts[v.0 as usize].status, VertStatus::Free));
                if pass == 0 && !endpoints_free {
                    continue;
                }
                let v0 = self.prescribed_vertex_value(e.verts[0].0 as usize, &vert_dofs, &edge_fix);
                let v1 = self.prescribed_vertex_value(e.verts[1].0 as usize, &vert_dofs, &edge_fix);
                let vals = self.fit_edge_bubbles(e, v0, v1);
                edge_fix[i] = Some(vals);
            }
        }
        for (i, vals) in edge_fix.iter().enumerate() {
            if let Some(vals) = vals {
                if let UDofs::Fixed { values } = &mut edge_dofs[i] {
                    *values = vals.clone();
                }
            }
        }

        // Dirichlet face interiors: fit u0 minus the resolved closure lift
        for (i, f) in skel.faces.iter().enumerate() {
            if face_bc[i] != Some(BcKind::Dirichlet) {
                continue;
            }
            let layout = ClosureLayout::new(f.order);
            if layout.n_interior() == 0 {
                continue;
            }
            // resolved closure rows for corners and edges (fully prescribed)
            let rows = self.face_closure_rows(i, &vert_dofs, &edge_dofs, &face_udofs, true);
            let rect = f.rect;
            let [t1, t2] = rect.tangents();
            let interior = self.fit_face_interior(&layout, &rect, &mut |x: [f64; 3]| {
                self.problem.dirichlet(x)
            }, &rows, t1.idx(), t2.idx());
            if let UDofs::Fixed { values } = &mut face_udofs[i] {
                *values = interior;
            }
        }

        // Neumann data: orthonormal-face-basis coefficients of the
        // +axis-oriented normal trace
        for (i, f) in skel.faces.iter().enumerate() {
            if face_bc[i] != Some(BcKind::Neumann) {
                continue;
            }
            let outward = self.outward_of(i);
            let flip = if outward[f.rect.axis.idx()] > 0.0 { 1.0 } else { -1.0 };
            let vals = self.fit_flux_face(&f.rect, f.order, &mut |x| {
                flip * self.problem.neumann(x, outward)
            });
            if let UDofs::Fixed { values } = &mut face_sdofs[i] {
                *values = vals;
            }
        }

        // ---- per-side trace layouts ----------------------------------------
        let mut traces = BTreeMap::new();
        for el in self.mesh.leaves() {
            let mut sides = Vec::with_capacity(6);
            for side in 0..6usize {
                let fid = skel.side_face_id(el.id, side);
                let closure =
                    self.side_closure(fid.0 as usize, &vert_dofs, &edge_dofs, &face_udofs)?;
                let flux = self.side_flux(fid.0 as usize, side, &face_sdofs);
                sides.push(SideData { closure, flux });
            }
            traces.insert(el.id, ElemTrace { sides });
        }

        Ok(DofMap {
            generation: self.mesh.generation(),
            n_dofs,
            n_interior,
            n_interface: n_dofs - n_interior,
            interior_base,
            traces,
        })
    }

    fn outward_of(&self, face_idx: usize) -> [f64; 3] {
        let fe = &self.skel.faces[face_idx];
        let mut n = [0.0; 3];
        // the element below the plane looks outward in +axis direction
        n[fe.rect.axis.idx()] = if fe.lo_elem.is_some() { 1.0 } else { -1.0 };
        n
    }

    /// Value of the prescribed û at a vertex entity (resolving hanging
    /// vertices through their masters' prescribed closures). Only used on
    /// the Dirichlet boundary where every reference is prescribed.
    fn prescribed_vertex_value(
        &self,
        v: usize,
        vert_dofs: &[UDofs],
        edge_fix: &[Option<Vec<f64>>],
    ) -> f64 {
        let skel = &self.skel;
        match skel.verts[v].status {
            VertStatus::Free => match &vert_dofs[v] {
                UDofs::Fixed { values } => values[0],
                _ => self.problem.dirichlet(skel.verts[v].point),
            },
            VertStatus::OnEdge { master } => {
                let me = &skel.edges[master.0 as usize];
                let p = skel.verts[v].point;
                let t = (p[me.seg.axis.idx()] - me.seg.range[0]) / me.seg.len();
                let v0 = self.prescribed_vertex_value(me.verts[0].0 as usize, vert_dofs, edge_fix);
                let v1 = self.prescribed_vertex_value(me.verts[1].0 as usize, vert_dofs, edge_fix);
                let (vals, _) = lobatto_h1(me.order.max(1), t);
                let mut s = v0 * vals[0] + v1 * vals[1];
                if let Some(bub) = &edge_fix[master.0 as usize] {
                    for (k, c) in bub.iter().enumerate() {
                        s += c * vals[k + 2];
                    }
                }
                s
            }
            VertStatus::OnFace { .. } => {
                // boundary vertices never hang on faces (root-aligned domains)
                self.problem.dirichlet(skel.verts[v].point)
            }
        }
    }

    /// Projects (u0 - endpoint blend) onto the bubble functions of a free
    /// Dirichlet edge.
    fn fit_edge_bubbles(&self, e: &EdgeEnt, v0: f64, v1: f64) -> Vec<f64> {
        let q = e.order;
        if q < 2 {
            return vec![];
        }
        let n = q + 2 + self.boost;
        let rule = gauss_rule(n);
        let layout = EdgeLayout { order: q };
        let nb = q - 1;
        let mut gram = DMatrix::zeros(nb, nb);
        let mut rhs = DVector::zeros(nb);
        for (qi, &t) in rule.points.iter().enumerate() {
            let w = rule.weights[qi];
            let vals = layout.eval(t);
            let x = e.seg.point_at(e.seg.range[0] + t * e.seg.len());
            let f = self.problem.dirichlet(x) - v0 * vals[0] - v1 * vals[1];
            for a in 0..nb {
                rhs[a] += w * f * vals[a + 2];
                for b in 0..nb {
                    gram[(a, b)] += w * vals[a + 2] * vals[b + 2];
                }
            }
        }
        gram.cholesky()
            .expect("bubble Gram must be SPD")
            .solve(&rhs)
            .iter()
            .copied()
            .collect()
    }

    /// Fits the interior bubbles of a face against data minus the closure
    /// lift described by resolved rows (prescribed case: rows carry only
    /// fixed parts).
    fn fit_face_interior(
        &self,
        layout: &ClosureLayout,
        rect: &Rect,
        data: &mut dyn FnMut([f64; 3]) -> f64,
        rows: &[LinForm],
        t1: usize,
        t2: usize,
    ) -> Vec<f64> {
        let n1 = layout.orders[0] + 2 + self.boost;
        let n2 = layout.orders[1] + 2 + self.boost;
        let r1 = gauss_rule(n1);
        let r2 = gauss_rule(n2);
        let ni = layout.n_interior();
        let io = layout.interior_offset();
        let mut gram = DMatrix::zeros(ni, ni);
        let mut rhs = DVector::zeros(ni);
        for (qj, &x2) in r2.points.iter().enumerate() {
            for (qi, &x1) in r1.points.iter().enumerate() {
                let w = r1.weights[qi] * r2.weights[qj];
                let vals = layout.eval(x1, x2);
                // physical point
                let mut x = [rect.coord; 3];
                x[rect.axis.idx()] = rect.coord;
                x[t1] = rect.lo[0] + x1 * rect.extent(0);
                x[t2] = rect.lo[1] + x2 * rect.extent(1);
                // closure lift from the non-interior rows (prescribed parts)
                let mut lift = 0.0;
                for (pos, row) in rows.iter().enumerate().take(io) {
                    lift += row.fixed * vals[pos];
                }
                let f = data(x) - lift;
                for a in 0..ni {
                    rhs[a] += w * f * vals[io + a];
                    for b in 0..ni {
                        gram[(a, b)] += w * vals[io + a] * vals[io + b];
                    }
                }
            }
        }
        gram.cholesky()
            .expect("interior Gram must be SPD")
            .solve(&rhs)
            .iter()
            .copied()
            .collect()
    }

    /// Coefficients of a scalar face function in the orthonormal tensor
    /// Legendre basis of the face.
    fn fit_flux_face(
        &self,
        rect: &Rect,
        orders: [usize; 2],
        data: &mut dyn FnMut([f64; 3]) -> f64,
    ) -> Vec<f64> {
        let [t1, t2] = rect.tangents();
        let n1 = orders[0] + 1 + self.boost;
        let n2 = orders[1] + 1 + self.boost;
        let r1 = gauss_rule(n1);
        let r2 = gauss_rule(n2);
        let area = rect.extent(0) * rect.extent(1);
        let scale = 1.0 / area.sqrt();
        let mut out = vec![0.0; orders[0] * orders[1]];
        for (qj, &x2) in r2.points.iter().enumerate() {
            let (v2, _) = orthonormal_legendre(orders[1], x2);
            for (qi, &x1) in r1.points.iter().enumerate() {
                let (v1, _) = orthonormal_legendre(orders[0], x1);
                // physical weight = ref weight * area; basis includes 1/sqrt(area):
                // coefficient integral carries area * scale
                let w = r1.weights[qi] * r2.weights[qj] * area;
                let mut x = [rect.coord; 3];
                x[rect.axis.idx()] = rect.coord;
                x[t1.idx()] = rect.lo[0] + x1 * rect.extent(0);
                x[t2.idx()] = rect.lo[1] + x2 * rect.extent(1);
                let f = data(x);
                for j in 0..orders[1] {
                    for i in 0..orders[0] {
                        out[i + orders[0] * j] += w * f * v1[i] * v2[j] * scale;
                    }
                }
            }
        }
        out
    }

    fn lin_of_udofs(&self, dofs: &UDofs, k: usize) -> LinForm {
        match dofs {
            UDofs::Free { base, count } => {
                debug_assert!(k < *count);
                LinForm::free(base + k)
            }
            UDofs::Fixed { values } => LinForm::fixed(values[k]),
            UDofs::Hanging => panic!("hanging entity has no dofs"),
        }
    }

    /// Resolved linear form of the global û value at a vertex entity.
    fn vertex_lin(
        &self,
        v: usize,
        vert_dofs: &[UDofs],
        edge_dofs: &[UDofs],
        face_udofs: &[UDofs],
    ) -> LinForm {
        let skel = &self.skel;
        match skel.verts[v].status {
            VertStatus::Free => self.lin_of_udofs(&vert_dofs[v], 0),
            VertStatus::OnEdge { master } => {
                let me = &skel.edges[master.0 as usize];
                let p = skel.verts[v].point;
                let t = (p[me.seg.axis.idx()] - me.seg.range[0]) / me.seg.len();
                let (vals, _) = lobatto_h1(me.order.max(1), t);
                let mut out = LinForm::zero();
                out.add_scaled(
                    &self.vertex_lin(me.verts[0].0 as usize, vert_dofs, edge_dofs, face_udofs),
                    vals[0],
                );
                out.add_scaled(
                    &self.vertex_lin(me.verts[1].0 as usize, vert_dofs, edge_dofs, face_udofs),
                    vals[1],
                );
                for k in 2..=me.order {
                    out.add_scaled(&self.lin_of_udofs(&edge_dofs[master.0 as usize], k - 2), vals[k]);
                }
                out
            }
            VertStatus::OnFace { master } => {
                let mf = &skel.faces[master.0 as usize];
                let p = skel.verts[v].point;
                let [t1, t2] = mf.rect.tangents();
                let x1 = (p[t1.idx()] - mf.rect.lo[0]) / mf.rect.extent(0);
                let x2 = (p[t2.idx()] - mf.rect.lo[1]) / mf.rect.extent(1);
                self.face_point_lin(master.0 as usize, x1, x2, vert_dofs, edge_dofs, face_udofs)
            }
        }
    }

    /// Linear form of the global û value at a reference point of a free face.
    fn face_point_lin(
        &self,
        f: usize,
        x1: f64,
        x2: f64,
        vert_dofs: &[UDofs],
        edge_dofs: &[UDofs],
        face_udofs: &[UDofs],
    ) -> LinForm {
        let rows = self.face_closure_rows(f, vert_dofs, edge_dofs, face_udofs, false);
        let layout = ClosureLayout::new(self.skel.faces[f].order);
        let vals = layout.eval(x1, x2);
        let mut out = LinForm::zero();
        for (pos, row) in rows.iter().enumerate() {
            out.add_scaled(row, vals[pos]);
        }
        out
    }

    /// Rows of a free face's closure coefficients as linear forms over
    /// global dofs (one row per closure basis function of the face).
    /// With `prescribed_only` the face is on the Dirichlet boundary and all
    /// rows must resolve to fixed values.
    fn face_closure_rows(
        &self,
        f: usize,
        vert_dofs: &[UDofs],
        edge_dofs: &[UDofs],
        face_udofs: &[UDofs],
        prescribed_only: bool,
    ) -> Vec<LinForm> {
        let skel = &self.skel;
        let fe = &skel.faces[f];
        debug_assert!(matches!(fe.status, FaceStatus::Free));
        let layout = ClosureLayout::new(fe.order);
        let mut rows = vec![LinForm::zero(); layout.dim()];

        // corners
        for (k, &v) in fe.verts.iter().enumerate() {
            let (i, j) = match k {
                0 => (0, 0),
                1 => (1, 0),
                2 => (0, 1),
                _ => (1, 1),
            };
            rows[layout.corner(i, j)] =
                self.vertex_lin(v.0 as usize, vert_dofs, edge_dofs, face_udofs);
        }
        // edge blocks: local edge e (bottom, top, left, right), along-order q
        for e in 0..4usize {
            let q_along = if e < 2 { fe.order[0] } else { fe.order[1] };
            if q_along < 2 {
                continue;
            }
            let eid = fe.edges[e];
            let blocks = self.edge_block_rows(
                eid.0 as usize,
                q_along,
                vert_dofs,
                edge_dofs,
                face_udofs,
            );
            for (k, b) in blocks.into_iter().enumerate() {
                rows[layout.edge_offset(e) + k] = b;
            }
        }
        // interior
        for k in 0..layout.n_interior() {
            rows[layout.interior_offset() + k] = self.lin_of_udofs(&face_udofs[f], k);
        }
        if prescribed_only {
            debug_assert!(rows.iter().all(|r| r.terms.is_empty()));
        }
        rows
    }

    /// Bubble-block rows of one edge of a face: the bubble part (relative to
    /// the edge's endpoint values) of the global û restricted to the edge,
    /// expanded in the face-local 1D bubble basis of order `q_along`.
    fn edge_block_rows(
        &self,
        e: usize,
        q_along: usize,
        vert_dofs: &[UDofs],
        edge_dofs: &[UDofs],
        face_udofs: &[UDofs],
    ) -> Vec<LinForm> {
        let skel = &self.skel;
        let ee = &skel.edges[e];
        let nb = q_along - 1;
        let mut rows = vec![LinForm::zero(); nb];
        match ee.status {
            EdgeStatus::Free => {
                // global bubbles coincide with local ones up to the edge order
                for k in 2..=ee.order.min(q_along) {
                    rows[k - 2] = self.lin_of_udofs(&edge_dofs[e], k - 2);
                }
            }
            EdgeStatus::HalfOf { master, which } => {
                let me = &skel.edges[master.0 as usize];
                let r = edge_constraint_rows(me.order, which);
                // master closure refs: endpoints then bubbles
                let mut master_lins = Vec::with_capacity(me.order + 1);
                master_lins.push(self.vertex_lin(
                    me.verts[0].0 as usize,
                    vert_dofs,
                    edge_dofs,
                    face_udofs,
                ));
                master_lins.push(self.vertex_lin(
                    me.verts[1].0 as usize,
                    vert_dofs,
                    edge_dofs,
                    face_udofs,
                ));
                for k in 2..=me.order {
                    master_lins.push(self.lin_of_udofs(&edge_dofs[master.0 as usize], k - 2));
                }
                // slave closure bubble rows are rows 2.. of the constraint matrix
                for k in 0..(me.order - 1).min(nb) {
                    let mut row = LinForm::zero();
                    for (m, ml) in master_lins.iter().enumerate() {
                        row.add_scaled(ml, r[(k + 2, m)]);
                    }
                    rows[k] = row;
                }
            }
            EdgeStatus::InFace { master } => {
                // restriction of the master face polynomial to the edge line
                let mf = &skel.faces[master.0 as usize];
                let mrows =
                    self.face_closure_rows(master.0 as usize, vert_dofs, edge_dofs, face_udofs, false);
                let mlayout = ClosureLayout::new(mf.order);
                let [t1, t2] = mf.rect.tangents();
                // edge runs along one tangent of the master face
                let along_first = ee.seg.axis == t1;
                let (a0, a1);
                let perp_ref;
                if along_first {
                    a0 = (ee.seg.range[0] - mf.rect.lo[0]) / mf.rect.extent(0);
                    a1 = (ee.seg.range[1] - mf.rect.lo[0]) / mf.rect.extent(0);
                    let perp_coord = if t2 == ee.seg.axis.tangents()[0] {
                        ee.seg.at[0]
                    } else {
                        ee.seg.at[1]
                    };
                    perp_ref = (perp_coord - mf.rect.lo[1]) / mf.rect.extent(1);
                } else {
                    a0 = (ee.seg.range[0] - mf.rect.lo[1]) / mf.rect.extent(1);
                    a1 = (ee.seg.range[1] - mf.rect.lo[1]) / mf.rect.extent(1);
                    let perp_coord = if t1 == ee.seg.axis.tangents()[0] {
                        ee.seg.at[0]
                    } else {
                        ee.seg.at[1]
                    };
                    perp_ref = (perp_coord - mf.rect.lo[0]) / mf.rect.extent(0);
                }
                // bubble fit per master closure function
                let edge_layout = EdgeLayout { order: q_along };
                let rule = gauss_rule(q_along + 2);
                let nbub = nb;
                let mut gram = DMatrix::zeros(nbub, nbub);
                let mut rhs_cols = DMatrix::zeros(nbub, mlayout.dim());
                for (qi, &t) in rule.points.iter().enumerate() {
                    let w = rule.weights[qi];
                    let evals = edge_layout.eval(t);
                    let (mx1, mx2) = if along_first {
                        (a0 + t * (a1 - a0), perp_ref)
                    } else {
                        (perp_ref, a0 + t * (a1 - a0))
                    };
                    let mvals = mlayout.eval(mx1, mx2);
                    let (m0x1, m0x2) = if along_first { (a0, perp_ref) } else { (perp_ref, a0) };
                    let (m1x1, m1x2) = if along_first { (a1, perp_ref) } else { (perp_ref, a1) };
                    let mvals0 = mlayout.eval(m0x1, m0x2);
                    let mvals1 = mlayout.eval(m1x1, m1x2);
                    for a in 0..nbub {
                        for b in 0..nbub {
                            gram[(a, b)] += w * evals[a + 2] * evals[b + 2];
                        }
                        for m in 0..mlayout.dim() {
                            let f = mvals[m]
                                - mvals0[m] * evals[0]
                                - mvals1[m] * evals[1];
                            rhs_cols[(a, m)] += w * f * evals[a + 2];
                        }
                    }
                }
                let chol = gram.cholesky().expect("bubble Gram must be SPD");
                let coeffs = chol.solve(&rhs_cols);
                for k in 0..nbub {
                    let mut row = LinForm::zero();
                    for m in 0..mlayout.dim() {
                        row.add_scaled(&mrows[m], coeffs[(k, m)]);
                    }
                    rows[k] = row;
                }
            }
        }
        rows
    }

    /// Builds the û side closure of one leaf side.
    fn side_closure(
        &self,
        f: usize,
        vert_dofs: &[UDofs],
        edge_dofs: &[UDofs],
        face_udofs: &[UDofs],
    ) -> Result<SideClosure, MeshError> {
        let skel = &self.skel;
        let fe = &skel.faces[f];
        let rows: Vec<LinForm>;
        let orders: [usize; 2];
        match fe.status {
            FaceStatus::Free => {
                orders = fe.order;
                rows = self.face_closure_rows(f, vert_dofs, edge_dofs, face_udofs, false);
            }
            FaceStatus::Slave { master, placement } => {
                let mf = &skel.faces[master.0 as usize];
                orders = mf.order;
                let mrows =
                    self.face_closure_rows(master.0 as usize, vert_dofs, edge_dofs, face_udofs, false);
                let r = face_constraint_rows(mf.order, placement);
                let layout = ClosureLayout::new(mf.order);
                let mut out = vec![LinForm::zero(); layout.dim()];
                for (pos, row) in out.iter_mut().enumerate() {
                    for m in 0..layout.dim() {
                        row.add_scaled(&mrows[m], r[(pos, m)]);
                    }
                }
                rows = out;
            }
        }
        // compact rows into (free refs, matrix, fixed vector)
        let dim = rows.len();
        let mut refs: Vec<usize> = vec![];
        for r in &rows {
            for &(d, _) in &r.terms {
                if !refs.contains(&d) {
                    refs.push(d);
                }
            }
        }
        refs.sort_unstable();
        let mut l = DMatrix::zeros(dim, refs.len());
        let mut fixed = DVector::zeros(dim);
        for (pos, r) in rows.iter().enumerate() {
            fixed[pos] = r.fixed;
            for &(d, c) in &r.terms {
                let col = refs.binary_search(&d).unwrap();
                l[(pos, col)] += c;
            }
        }
        Ok(SideClosure { orders, free_refs: refs, l_matrix: l, fixed })
    }

    fn side_flux(&self, f: usize, side: usize, face_sdofs: &[UDofs]) -> SideFlux {
        let skel = &self.skel;
        let fe = &skel.faces[f];
        let (carrier, sub) = match fe.status {
            FaceStatus::Free => (f, Placement::Full),
            FaceStatus::Slave { master, placement } => (master.0 as usize, placement),
        };
        let ce = &skel.faces[carrier];
        let sign = if side % 2 == 1 { 1.0 } else { -1.0 };
        let n = ce.order[0] * ce.order[1];
        let (free_refs, fixed) = match &face_sdofs[carrier] {
            UDofs::Free { base, count } => {
                debug_assert_eq!(*count, n);
                ((*base..*base + *count).collect(), DVector::zeros(n))
            }
            UDofs::Fixed { values } => (vec![], DVector::from_iterator(n, values.iter().copied())),
            UDofs::Hanging => unreachable!("carrier face must be free"),
        };
        SideFlux {
            rect: ce.rect,
            orders: ce.order,
            sub,
            sign,
            free_refs,
            fixed,
        }
    }
}

fn rect_contains_point(r: &Rect, p: [f64; 3]) -> bool {
    let [t1, t2] = r.tangents();
    p[r.axis.idx()] == r.coord
        && r.lo[0] <= p[t1.idx()]
        && p[t1.idx()] <= r.hi[0]
        && r.lo[1] <= p[t2.idx()]
        && p[t2.idx()] <= r.hi[1]
}

fn rect_contains_seg(r: &Rect, s: &crate::geom::Seg) -> bool {
    let [p0, p1] = s.endpoints();
    rect_contains_point(r, p0) && rect_contains_point(r, p1)
}
