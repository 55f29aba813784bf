//! Skeleton entity table: mesh faces, edges, and vertices of the leaf mesh
//! with their constraint status and minimum-rule orders.
//!
//! Constraint depth is one level everywhere: the closure guarantees that the
//! master closure of any constrained entity consists of free entities only.

use super::{ElemId, Mesh, MeshError};
use crate::geom::{Axis, Placement, Rect, RectKey, Seg, SegKey, point_key, PointKey, RefFlag};
use std::collections::{BTreeMap, HashMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FaceId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertId(pub u32);

#[derive(Clone, Debug, PartialEq)]
pub enum FaceStatus {
    Free,
    Slave { master: FaceId, placement: Placement },
}

#[derive(Clone, Debug, PartialEq)]
pub enum EdgeStatus {
    Free,
    /// Exact half of a longer mesh edge.
    HalfOf { master: EdgeId, which: u8 },
    /// Interior to a mesh face (a hanging split line).
    InFace { master: FaceId },
}

#[derive(Clone, Debug, PartialEq)]
pub enum VertStatus {
    Free,
    /// Interior point of a mesh edge.
    OnEdge { master: EdgeId },
    /// Interior point of a mesh face.
    OnFace { master: FaceId },
}

/// A mesh face: every leaf side is exactly one face entity; conforming
/// interior sides merge into a single entity.
#[derive(Clone, Debug)]
pub struct FaceEnt {
    pub rect: Rect,
    /// Leaf below the plane (its upper side is this rect).
    pub lo_elem: Option<ElemId>,
    /// Leaf above the plane.
    pub hi_elem: Option<ElemId>,
    pub status: FaceStatus,
    pub slaves: Vec<FaceId>,
    pub edges: [EdgeId; 4],
    pub verts: [VertId; 4],
    /// Minimum-rule order per tangential direction over all adjacent leaves
    /// (interpreted as the û trace degree and the σ̂n dof count).
    pub order: [usize; 2],
    pub boundary: bool,
}

#[derive(Clone, Debug)]
pub struct EdgeEnt {
    pub seg: Seg,
    pub status: EdgeStatus,
    /// Faces having this segment as a full boundary edge.
    pub faces: Vec<FaceId>,
    pub verts: [VertId; 2],
    /// Minimum-rule û degree along the edge.
    pub order: usize,
}

#[derive(Clone, Debug)]
pub struct VertEnt {
    pub point: [f64; 3],
    pub status: VertStatus,
}

/// Entity table of the current leaf mesh.
#[derive(Clone, Debug)]
pub struct Skeleton {
    pub faces: Vec<FaceEnt>,
    pub edges: Vec<EdgeEnt>,
    pub verts: Vec<VertEnt>,
    /// Face entity of each (leaf, side).
    pub side_face: HashMap<(ElemId, u8), FaceId>,
}

impl Skeleton {
    pub fn face(&self, id: FaceId) -> &FaceEnt {
        &self.faces[id.0 as usize]
    }

    pub fn edge(&self, id: EdgeId) -> &EdgeEnt {
        &self.edges[id.0 as usize]
    }

    pub fn vert(&self, id: VertId) -> &VertEnt {
        &self.verts[id.0 as usize]
    }

    pub fn side_face_id(&self, elem: ElemId, side: usize) -> FaceId {
        self.side_face[&(elem, side as u8)]
    }

    /// True when every constrained entity references only free entities
    /// through its master's closure.
    pub fn is_one_level(&self) -> bool {
        self.violations().is_empty()
    }

    fn face_closure_free(&self, f: FaceId) -> Vec<Offender> {
        let mut out = vec![];
        let fe = self.face(f);
        if !matches!(fe.status, FaceStatus::Free) {
            out.push(Offender::Face(f));
        }
        for &e in &fe.edges {
            if !matches!(self.edge(e).status, EdgeStatus::Free) {
                out.push(Offender::Edge(e));
            }
        }
        for &v in &fe.verts {
            if !matches!(self.vert(v).status, VertStatus::Free) {
                out.push(Offender::Vert(v));
            }
        }
        out
    }

    fn edge_closure_free(&self, e: EdgeId) -> Vec<Offender> {
        let mut out = vec![];
        let ee = self.edge(e);
        if !matches!(ee.status, EdgeStatus::Free) {
            out.push(Offender::Edge(e));
        }
        for &v in &ee.verts {
            if !matches!(self.vert(v).status, VertStatus::Free) {
                out.push(Offender::Vert(v));
            }
        }
        out
    }

    /// Constrained entities appearing inside some master closure.
    pub fn violations(&self) -> Vec<Offender> {
        let mut out = vec![];
        for fe in &self.faces {
            if let FaceStatus::Slave { master, .. } = fe.status {
                out.extend(self.face_closure_free(master));
            }
        }
        for ee in &self.edges {
            match ee.status {
                EdgeStatus::Free => {}
                EdgeStatus::HalfOf { master, .. } => out.extend(self.edge_closure_free(master)),
                EdgeStatus::InFace { master } => out.extend(self.face_closure_free(master)),
            }
        }
        for ve in &self.verts {
            match ve.status {
                VertStatus::Free => {}
                VertStatus::OnEdge { master } => out.extend(self.edge_closure_free(master)),
                VertStatus::OnFace { master } => out.extend(self.face_closure_free(master)),
            }
        }
        out.sort();
        out.dedup();
        out
    }

    /// Refinements that split the masters of offending constrained entities.
    /// Returned sorted and deduplicated by leaf (flags merged).
    pub fn closure_fixes(&self, mesh: &Mesh) -> Vec<(ElemId, RefFlag)> {
        let mut fixes: BTreeMap<ElemId, RefFlag> = BTreeMap::new();
        let add = |id: ElemId, flag: RefFlag, fixes: &mut BTreeMap<ElemId, RefFlag>| {
            let cur = fixes.get(&id).copied().unwrap_or(RefFlag::None);
            fixes.insert(id, cur.merge(flag));
        };
        for off in self.violations() {
            match off {
                Offender::Face(f) => {
                    // face constrained by a bigger face: split that master
                    if let FaceStatus::Slave { master, .. } = self.face(f).status {
                        let me = self.face(master);
                        let [t1, t2] = me.rect.tangents();
                        let flag = RefFlag::from_splits(splits_of(&[t1, t2]));
                        for owner in [me.lo_elem, me.hi_elem].into_iter().flatten() {
                            if mesh.element(owner).map(|e| e.is_leaf()).unwrap_or(false) {
                                add(owner, flag, &mut fixes);
                            }
                        }
                    }
                }
                Offender::Edge(e) => {
                    let ee = self.edge(e);
                    match ee.status {
                        EdgeStatus::Free => {}
                        EdgeStatus::HalfOf { master, .. } => {
                            // split the long master edge along its axis in
                            // every face that carries it in full length
                            let me = self.edge(master);
                            let flag = RefFlag::from_splits(splits_of(&[me.seg.axis]));
                            for &fid in &me.faces {
                                let fe = self.face(fid);
                                for owner in [fe.lo_elem, fe.hi_elem].into_iter().flatten() {
                                    if mesh.element(owner).map(|el| el.is_leaf()).unwrap_or(false) {
                                        add(owner, flag, &mut fixes);
                                    }
                                }
                            }
                        }
                        EdgeStatus::InFace { master } => {
                            // split the master face across the hanging line
                            let fe = self.face(master);
                            let [t1, t2] = fe.rect.tangents();
                            let split = if ee.seg.axis == t1 { t2 } else { t1 };
                            let flag = RefFlag::from_splits(splits_of(&[split]));
                            for owner in [fe.lo_elem, fe.hi_elem].into_iter().flatten() {
                                if mesh.element(owner).map(|el| el.is_leaf()).unwrap_or(false) {
                                    add(owner, flag, &mut fixes);
                                }
                            }
                        }
                    }
                }
                Offender::Vert(v) => {
                    match self.vert(v).status {
                        VertStatus::Free => {}
                        VertStatus::OnEdge { master } => {
                            let me = self.edge(master);
                            let flag = RefFlag::from_splits(splits_of(&[me.seg.axis]));
                            for &fid in &me.faces {
                                let fe = self.face(fid);
                                for owner in [fe.lo_elem, fe.hi_elem].into_iter().flatten() {
                                    if mesh.element(owner).map(|el| el.is_leaf()).unwrap_or(false) {
                                        add(owner, flag, &mut fixes);
                                    }
                                }
                            }
                        }
                        VertStatus::OnFace { master } => {
                            let fe = self.face(master);
                            let [t1, t2] = fe.rect.tangents();
                            let flag = RefFlag::from_splits(splits_of(&[t1, t2]));
                            for owner in [fe.lo_elem, fe.hi_elem].into_iter().flatten() {
                                if mesh.element(owner).map(|el| el.is_leaf()).unwrap_or(false) {
                                    add(owner, flag, &mut fixes);
                                }
                            }
                        }
                    }
                }
            }
        }
        fixes.into_iter().collect()
    }
}

/// A constrained entity found inside a master closure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Offender {
    Face(FaceId),
    Edge(EdgeId),
    Vert(VertId),
}

fn splits_of(axes: &[Axis]) -> [bool; 3] {
    let mut s = [false; 3];
    for a in axes {
        s[a.idx()] = true;
    }
    s
}

/// Builds the skeleton table from the leaf mesh.
pub fn build(mesh: &Mesh) -> Result<Skeleton, MeshError> {
    // --- faces -----------------------------------------------------------
    let mut face_ids: BTreeMap<RectKey, FaceId> = BTreeMap::new();
    let mut faces: Vec<FaceEnt> = vec![];
    let mut side_face: HashMap<(ElemId, u8), FaceId> = HashMap::new();

    for el in mesh.leaves() {
        for side in 0..6usize {
            let rect = el.bbox.face_rect(side);
            let key = rect.key();
            let fid = *face_ids.entry(key).or_insert_with(|| {
                faces.push(FaceEnt {
                    rect,
                    lo_elem: None,
                    hi_elem: None,
                    status: FaceStatus::Free,
                    slaves: vec![],
                    edges: [EdgeId(0); 4],
                    verts: [VertId(0); 4],
                    order: [0, 0],
                    boundary: false,
                });
                FaceId(faces.len() as u32 - 1)
            });
            // upper side of the leaf => the leaf lies below the plane
            if side % 2 == 1 {
                faces[fid.0 as usize].lo_elem = Some(el.id);
            } else {
                faces[fid.0 as usize].hi_elem = Some(el.id);
            }
            side_face.insert((el.id, side as u8), fid);
        }
    }

    // plane groups for containment searches
    let mut planes: BTreeMap<(u8, u64), Vec<FaceId>> = BTreeMap::new();
    for (i, fe) in faces.iter().enumerate() {
        planes
            .entry((fe.rect.axis as u8, fe.rect.coord.to_bits()))
            .or_default()
            .push(FaceId(i as u32));
    }

    // master/slave detection: smallest strictly containing face in-plane
    let mut assignments: Vec<(FaceId, FaceId, Placement)> = vec![];
    for group in planes.values() {
        for &f in group {
            let rect = faces[f.0 as usize].rect;
            let mut best: Option<FaceId> = None;
            for &g in group {
                if g == f {
                    continue;
                }
                let grect = faces[g.0 as usize].rect;
                if grect.contains(&rect) && grect != rect {
                    let replace = match best {
                        None => true,
                        Some(b) => {
                            let brect = faces[b.0 as usize].rect;
                            grect.area() < brect.area()
                        }
                    };
                    if replace {
                        best = Some(g);
                    }
                }
            }
            if let Some(m) = best {
                let mrect = faces[m.0 as usize].rect;
                let placement = mrect.placement_of(&rect).ok_or_else(|| {
                    MeshError::Irregular(format!(
                        "slave face at {:?} is neither half nor quadrant of its master",
                        rect
                    ))
                })?;
                if placement == Placement::Full {
                    return Err(MeshError::Irregular("full-placement slave face".into()));
                }
                assignments.push((f, m, placement));
            }
        }
    }
    for (f, m, placement) in assignments {
        faces[f.0 as usize].status = FaceStatus::Slave { master: m, placement };
        faces[m.0 as usize].slaves.push(f);
    }

    // boundary flags
    for fe in faces.iter_mut() {
        let adj = fe.lo_elem.iter().count() + fe.hi_elem.iter().count();
        fe.boundary =
            adj == 1 && fe.slaves.is_empty() && matches!(fe.status, FaceStatus::Free);
    }
    // a master face's opposite side is covered by its slaves' elements; a
    // slave face's opposite side is the master's element: neither is boundary

    // --- edges ------------------------------------------------------------
    let mut edge_ids: BTreeMap<SegKey, EdgeId> = BTreeMap::new();
    let mut edges: Vec<EdgeEnt> = vec![];
    for i in 0..faces.len() {
        let rect = faces[i].rect;
        for (k, seg) in Seg::edges_of(&rect).into_iter().enumerate() {
            let eid = *edge_ids.entry(seg.key()).or_insert_with(|| {
                edges.push(EdgeEnt {
                    seg,
                    status: EdgeStatus::Free,
                    faces: vec![],
                    verts: [VertId(0); 2],
                    order: 0,
                });
                EdgeId(edges.len() as u32 - 1)
            });
            edges[eid.0 as usize].faces.push(FaceId(i as u32));
            faces[i].edges[k] = eid;
        }
    }

    // line groups for edge containment
    let mut lines: BTreeMap<(u8, [u64; 2]), Vec<EdgeId>> = BTreeMap::new();
    for (i, ee) in edges.iter().enumerate() {
        lines
            .entry((ee.seg.axis as u8, [ee.seg.at[0].to_bits(), ee.seg.at[1].to_bits()]))
            .or_default()
            .push(EdgeId(i as u32));
    }

    // edge constraints: half-of-longer-edge first, then interior-of-face
    let mut edge_status: Vec<EdgeStatus> = vec![EdgeStatus::Free; edges.len()];
    for group in lines.values() {
        for &e in group {
            let seg = edges[e.0 as usize].seg;
            let mut best: Option<EdgeId> = None;
            for &g in group {
                if g == e {
                    continue;
                }
                let gseg = edges[g.0 as usize].seg;
                if gseg.contains_strict(&seg) {
                    let replace = match best {
                        None => true,
                        Some(b) => gseg.len() < edges[b.0 as usize].seg.len(),
                    };
                    if replace {
                        best = Some(g);
                    }
                }
            }
            if let Some(m) = best {
                let ms = edges[m.0 as usize].seg;
                let mid = ms.midpoint();
                let which = if seg.range[0] == ms.range[0] && seg.range[1] == mid {
                    0u8
                } else if seg.range[0] == mid && seg.range[1] == ms.range[1] {
                    1u8
                } else {
                    return Err(MeshError::Irregular(format!(
                        "edge {:?} inside {:?} is not an exact half",
                        seg, ms
                    )));
                };
                edge_status[e.0 as usize] = EdgeStatus::HalfOf { master: m, which };
            }
        }
    }
    // interior-of-face detection for remaining free edges
    for (i, ee) in edges.iter().enumerate() {
        if edge_status[i] != EdgeStatus::Free {
            continue;
        }
        let seg = ee.seg;
        let [b, c] = seg.axis.tangents();
        // the two planes containing this segment
        let candidates = [(b, seg.at[0]), (c, seg.at[1])];
        let mut best: Option<FaceId> = None;
        for (pa, pc) in candidates {
            if let Some(group) = planes.get(&(pa as u8, pc.to_bits())) {
                for &f in group {
                    let rect = faces[f.0 as usize].rect;
                    // rect tangents in ascending order; find the component
                    // along the segment axis and the perpendicular one
                    let [t1, t2] = rect.tangents();
                    let (along, perp) = if t1 == seg.axis { (0, 1) } else { (1, 0) };
                    debug_assert!(if along == 0 { t1 == seg.axis } else { t2 == seg.axis });
                    let perp_axis = if along == 0 { t2 } else { t1 };
                    let perp_coord = if perp_axis == b { seg.at[0] } else { seg.at[1] };
                    let inside_along = rect.lo[along] <= seg.range[0] && seg.range[1] <= rect.hi[along];
                    let strictly_inside_perp =
                        rect.lo[perp] < perp_coord && perp_coord < rect.hi[perp];
                    if inside_along && strictly_inside_perp {
                        let replace = match best {
                            None => true,
                            Some(bf) => rect.area() < faces[bf.0 as usize].rect.area(),
                        };
                        if replace {
                            best = Some(f);
                        }
                    }
                }
            }
        }
        if let Some(m) = best {
            edge_status[i] = EdgeStatus::InFace { master: m };
        }
    }
    for (i, st) in edge_status.into_iter().enumerate() {
        edges[i].status = st;
    }

    // --- vertices ----------------------------------------------------------
    let mut vert_ids: BTreeMap<PointKey, VertId> = BTreeMap::new();
    let mut verts: Vec<VertEnt> = vec![];
    for i in 0..edges.len() {
        let eps = edges[i].seg.endpoints();
        for (k, p) in eps.into_iter().enumerate() {
            let vid = *vert_ids.entry(point_key(p)).or_insert_with(|| {
                verts.push(VertEnt { point: p, status: VertStatus::Free });
                VertId(verts.len() as u32 - 1)
            });
            edges[i].verts[k] = vid;
        }
    }
    // face corner vertices (lexicographic in tangential coords)
    for fe in faces.iter_mut() {
        let rect = fe.rect;
        let corners2 = [
            [rect.lo[0], rect.lo[1]],
            [rect.hi[0], rect.lo[1]],
            [rect.lo[0], rect.hi[1]],
            [rect.hi[0], rect.hi[1]],
        ];
        let [t1, t2] = rect.tangents();
        for (k, c2) in corners2.into_iter().enumerate() {
            let mut p = [0.0; 3];
            p[rect.axis.idx()] = rect.coord;
            p[t1.idx()] = c2[0];
            p[t2.idx()] = c2[1];
            fe.verts[k] = *vert_ids
                .get(&point_key(p))
                .expect("face corner must exist as edge endpoint");
        }
    }
    // vertex constraints: strictly inside an edge, else strictly inside a face
    for ve in verts.iter_mut() {
        let p = ve.point;
        let mut best_edge: Option<EdgeId> = None;
        for (ei, ee) in edges.iter().enumerate() {
            let s = ee.seg;
            let [b, c] = s.axis.tangents();
            if s.at[0] == p[b.idx()]
                && s.at[1] == p[c.idx()]
                && s.range[0] < p[s.axis.idx()]
                && p[s.axis.idx()] < s.range[1]
            {
                let replace = match best_edge {
                    None => true,
                    Some(be) => s.len() < edges[be.0 as usize].seg.len(),
                };
                if replace {
                    best_edge = Some(EdgeId(ei as u32));
                }
            }
        }
        if let Some(m) = best_edge {
            ve.status = VertStatus::OnEdge { master: m };
            continue;
        }
        let mut best_face: Option<FaceId> = None;
        for (fi, fe) in faces.iter().enumerate() {
            let rect = fe.rect;
            if rect.coord != p[rect.axis.idx()] {
                continue;
            }
            let [t1, t2] = rect.tangents();
            let u = p[t1.idx()];
            let v = p[t2.idx()];
            if rect.lo[0] < u && u < rect.hi[0] && rect.lo[1] < v && v < rect.hi[1] {
                let replace = match best_face {
                    None => true,
                    Some(bf) => rect.area() < faces[bf.0 as usize].rect.area(),
                };
                if replace {
                    best_face = Some(FaceId(fi as u32));
                }
            }
        }
        if let Some(m) = best_face {
            ve.status = VertStatus::OnFace { master: m };
        }
    }

    // --- minimum-rule orders -----------------------------------------------
    // face participants: lo/hi elements plus the slaves' elements
    let elem_order = |id: ElemId| mesh.element(id).map(|e| e.order).unwrap_or([1, 1, 1]);
    let face_participants: Vec<Vec<ElemId>> = faces
        .iter()
        .map(|fe| {
            let mut v: Vec<ElemId> = [fe.lo_elem, fe.hi_elem].into_iter().flatten().collect();
            for &s in &fe.slaves {
                let se = &faces[s.0 as usize];
                v.extend([se.lo_elem, se.hi_elem].into_iter().flatten());
            }
            v
        })
        .collect();
    for (i, fe) in faces.iter_mut().enumerate() {
        let [t1, t2] = fe.rect.tangents();
        let mut o = [usize::MAX, usize::MAX];
        for &p in &face_participants[i] {
            let po = elem_order(p);
            o[0] = o[0].min(po[t1.idx()]);
            o[1] = o[1].min(po[t2.idx()]);
        }
        if o[0] == usize::MAX {
            o = [1, 1];
        }
        fe.order = o;
    }
    // edge order: min over leaves touching the edge with positive length
    for ee in edges.iter_mut() {
        let s = ee.seg;
        let a = s.axis.idx();
        let [b, c] = s.axis.tangents();
        let mut o = usize::MAX;
        for el in mesh.leaves() {
            let bb = &el.bbox;
            let touches_line = bb.lo[b.idx()] <= s.at[0]
                && s.at[0] <= bb.hi[b.idx()]
                && bb.lo[c.idx()] <= s.at[1]
                && s.at[1] <= bb.hi[c.idx()];
            let overlap = bb.lo[a].max(s.range[0]) < bb.hi[a].min(s.range[1]);
            if touches_line && overlap {
                o = o.min(el.order[a]);
            }
        }
        ee.order = if o == usize::MAX { 1 } else { o };
    }

    Ok(Skeleton { faces, edges, verts, side_face })
}
