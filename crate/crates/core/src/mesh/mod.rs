//! Hexahedral refinement-forest mesh with anisotropic h-refinements,
//! hanging-node constraint tracking, one-irregularity closure, and
//! unrefinement via snapshots.
//!
//! Closure runs in two steps, looped to a fixed point:
//! 1. the shelf algorithm keeps faces one-irregular while executing a
//!    request list (upgrading flags to match existing face refinements),
//! 2. a global pass eliminates edges and vertices whose constraint chains
//!    are deeper than one level, by refining the owners of the offending
//!    master entities.

mod skeleton;

pub use skeleton::{
    EdgeEnt, EdgeStatus, FaceEnt, FaceStatus, Skeleton, VertEnt, VertStatus,
};

use crate::geom::{Box3, Placement, RefFlag};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use thiserror::Error;

/// Stable element identifier within one mesh lineage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ElemId(pub u32);

impl ElemId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ElemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("unknown element id {0}")]
    UnknownElement(ElemId),
    #[error("element {0} is not a leaf")]
    NotALeaf(ElemId),
    #[error("refinement flag NONE is not a refinement")]
    FlagIsNone,
    #[error("order {order:?} out of range 1..={p_max}")]
    OrderOutOfRange { order: [usize; 3], p_max: usize },
    #[error("snapshot belongs to a different mesh lineage")]
    SnapshotLineageMismatch,
    #[error("closure exceeded its iteration budget ({0} ops): internal invariant violation")]
    ClosureBudget(usize),
    #[error("mesh irregularity invariant violated: {0}")]
    Irregular(String),
    #[error("cannot parse canonical mesh form: {0}")]
    Parse(String),
}

/// Element of the refinement forest.
#[derive(Clone, Debug)]
pub struct Element {
    pub id: ElemId,
    pub bbox: Box3,
    /// Per-direction approximation order (number of 1D L2 functions).
    pub order: [usize; 3],
    pub parent: Option<ElemId>,
    pub children: Vec<ElemId>,
    /// Flag applied to produce the children (None for leaves).
    pub ref_flag: RefFlag,
    /// Per-direction refinement depth.
    pub level: [u8; 3],
}

impl Element {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Policy for refinements forced by closure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnwantedPolicy {
    /// Closure refinements are upgraded to isotropic h8.
    Isotropic,
    /// Closure refinements split only the directions needed.
    Minimal,
}

/// One executed refinement (requested or forced by closure).
#[derive(Clone, Debug, PartialEq)]
pub struct ExecutedRefinement {
    pub elem: ElemId,
    pub flag: RefFlag,
    pub requested: bool,
    pub children: Vec<ElemId>,
}

/// Outcome of `refine_with_closure`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefineReport {
    pub executed: Vec<ExecutedRefinement>,
    /// Requests dropped because an earlier closure refinement already split them.
    pub skipped: Vec<ElemId>,
    pub shelf_ops: usize,
    pub step2_passes: usize,
}

impl RefineReport {
    pub fn children_of_request(&self, elem: ElemId) -> Option<&[ElemId]> {
        self.executed
            .iter()
            .find(|e| e.elem == elem && e.requested)
            .map(|e| e.children.as_slice())
    }

    pub fn unwanted(&self) -> impl Iterator<Item = &ExecutedRefinement> {
        self.executed.iter().filter(|e| !e.requested)
    }
}

/// Serialized coarse-mesh snapshot for exact unrefinement.
#[derive(Clone, Debug)]
pub struct MeshSnapshot {
    lineage: u64,
    p_max: usize,
    canonical: String,
}

static LINEAGE: AtomicU64 = AtomicU64::new(1);

/// Refinement forest of hexahedral elements.
#[derive(Debug)]
pub struct Mesh {
    elements: Vec<Element>,
    generation: u64,
    lineage: u64,
    p_max: usize,
    domain_volume: f64,
    skeleton_cache: RwLock<Option<(u64, Arc<Skeleton>)>>,
}

impl Clone for Mesh {
    fn clone(&self) -> Self {
        Mesh {
            elements: self.elements.clone(),
            generation: self.generation,
            lineage: self.lineage,
            p_max: self.p_max,
            domain_volume: self.domain_volume,
            skeleton_cache: RwLock::new(None),
        }
    }
}

impl Mesh {
    /// Builds a mesh from root boxes, all at the given order.
    pub fn new(roots: &[Box3], order: [usize; 3], p_max: usize) -> Result<Mesh, MeshError> {
        if order.iter().any(|&p| p < 1 || p > p_max) {
            return Err(MeshError::OrderOutOfRange { order, p_max });
        }
        let elements: Vec<Element> = roots
            .iter()
            .enumerate()
            .map(|(i, b)| Element {
                id: ElemId(i as u32),
                bbox: *b,
                order,
                parent: None,
                children: vec![],
                ref_flag: RefFlag::None,
                level: [0; 3],
            })
            .collect();
        let domain_volume = roots.iter().map(|b| b.volume()).sum();
        Ok(Mesh {
            elements,
            generation: 0,
            lineage: LINEAGE.fetch_add(1, Ordering::Relaxed),
            p_max,
            domain_volume,
            skeleton_cache: RwLock::new(None),
        })
    }

    /// Uniform n x n x n subdivision of a box.
    pub fn uniform(bbox: Box3, n: usize, order: [usize; 3], p_max: usize) -> Result<Mesh, MeshError> {
        let mut roots = Vec::with_capacity(n * n * n);
        let ext = bbox.extents();
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let lo = [
                        bbox.lo[0] + ext[0] * i as f64 / n as f64,
                        bbox.lo[1] + ext[1] * j as f64 / n as f64,
                        bbox.lo[2] + ext[2] * k as f64 / n as f64,
                    ];
                    let hi = [
                        bbox.lo[0] + ext[0] * (i + 1) as f64 / n as f64,
                        bbox.lo[1] + ext[1] * (j + 1) as f64 / n as f64,
                        bbox.lo[2] + ext[2] * (k + 1) as f64 / n as f64,
                    ];
                    roots.push(Box3::new(lo, hi));
                }
            }
        }
        Mesh::new(&roots, order, p_max)
    }

    pub fn p_max(&self) -> usize {
        self.p_max
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn lineage(&self) -> u64 {
        self.lineage
    }

    pub fn domain_volume(&self) -> f64 {
        self.domain_volume
    }

    pub fn element(&self, id: ElemId) -> Result<&Element, MeshError> {
        self.elements.get(id.idx()).ok_or(MeshError::UnknownElement(id))
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Leaves in ascending id order.
    pub fn leaves(&self) -> impl Iterator<Item = &Element> {
        self.elements.iter().filter(|e| e.is_leaf())
    }

    pub fn leaf_ids(&self) -> Vec<ElemId> {
        self.leaves().map(|e| e.id).collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().count()
    }

    fn leaf(&self, id: ElemId) -> Result<&Element, MeshError> {
        let e = self.element(id)?;
        if !e.is_leaf() {
            return Err(MeshError::NotALeaf(id));
        }
        Ok(e)
    }

    fn bump(&mut self) {
        self.generation += 1;
        *self.skeleton_cache.write().unwrap() = None;
    }

    /// Sets the approximation order of a leaf.
    pub fn set_order(&mut self, id: ElemId, order: [usize; 3]) -> Result<(), MeshError> {
        self.leaf(id)?;
        if order.iter().any(|&p| p < 1 || p > self.p_max) {
            return Err(MeshError::OrderOutOfRange { order, p_max: self.p_max });
        }
        self.elements[id.idx()].order = order;
        self.bump();
        Ok(())
    }

    /// All leaves geometrically adjacent across `face` with their placements
    /// relative to the queried face rectangle. Empty on the domain boundary.
    pub fn neighbors_across_face(
        &self,
        id: ElemId,
        face: usize,
    ) -> Result<Vec<(ElemId, Placement)>, MeshError> {
        assert!(face < 6, "face index out of range");
        let el = self.leaf(id)?;
        let rect = el.bbox.face_rect(face);
        let axis = face / 2;
        let mut out = vec![];
        for n in self.leaves() {
            if n.id == id {
                continue;
            }
            // the neighbor must present its opposite side in the same plane
            let n_coord = if face % 2 == 1 { n.bbox.lo[axis] } else { n.bbox.hi[axis] };
            if n_coord != rect.coord {
                continue;
            }
            let n_rect = n.bbox.face_rect(2 * axis + (1 - face % 2));
            if !rect.overlaps(&n_rect) {
                continue;
            }
            // overlap region, expressed within the queried face
            let inter = crate::geom::Rect {
                axis: rect.axis,
                coord: rect.coord,
                lo: [rect.lo[0].max(n_rect.lo[0]), rect.lo[1].max(n_rect.lo[1])],
                hi: [rect.hi[0].min(n_rect.hi[0]), rect.hi[1].min(n_rect.hi[1])],
            };
            let placement = rect.placement_of(&inter).ok_or_else(|| {
                MeshError::Irregular(format!(
                    "neighbor {} across face {} of {} is not conforming/half/quadrant",
                    n.id, face, id
                ))
            })?;
            out.push((n.id, placement));
        }
        out.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    /// Directions (tangential to `face`) in which the neighbors across are
    /// strictly finer than `el`, i.e. the face is already subdivided.
    fn existing_face_subdivision(&self, el: &Element, face: usize) -> [bool; 3] {
        let rect = el.bbox.face_rect(face);
        let axis = face / 2;
        let mut dirs = [false; 3];
        for n in self.leaves() {
            if n.id == el.id {
                continue;
            }
            let n_coord = if face % 2 == 1 { n.bbox.lo[axis] } else { n.bbox.hi[axis] };
            if n_coord != rect.coord {
                continue;
            }
            let n_rect = n.bbox.face_rect(2 * axis + (1 - face % 2));
            if !rect.overlaps(&n_rect) {
                continue;
            }
            for t in rect.tangents() {
                if n.bbox.extent(t.idx()) < el.bbox.extent(t.idx()) {
                    dirs[t.idx()] = true;
                }
            }
        }
        dirs
    }

    /// If refining `el` with `flag` would split a constrained face, returns
    /// the blocking (bigger) neighbor and the minimal flag it needs first.
    fn blocking_constraint(&self, el: &Element, flag: RefFlag) -> Option<(ElemId, RefFlag)> {
        let splits = flag.splits();
        for face in 0..6 {
            let rect = el.bbox.face_rect(face);
            let tang = rect.tangents();
            if !tang.iter().any(|t| splits[t.idx()]) {
                continue; // this face is not subdivided by the flag
            }
            let axis = face / 2;
            for n in self.leaves() {
                if n.id == el.id {
                    continue;
                }
                let n_coord = if face % 2 == 1 { n.bbox.lo[axis] } else { n.bbox.hi[axis] };
                if n_coord != rect.coord {
                    continue;
                }
                let n_rect = n.bbox.face_rect(2 * axis + (1 - face % 2));
                if !n_rect.overlaps(&rect) {
                    continue;
                }
                // bigger neighbor: its side strictly contains our face
                if n_rect.contains(&rect) && n_rect != rect {
                    let mut need = [false; 3];
                    for t in tang {
                        if n.bbox.extent(t.idx()) > el.bbox.extent(t.idx()) {
                            need[t.idx()] = true;
                        }
                    }
                    if need.iter().any(|d| *d) {
                        return Some((n.id, RefFlag::from_splits(need)));
                    }
                }
            }
        }
        None
    }

    /// Upgrades `flag` so splits on each face cover the face's existing
    /// subdivision directions (compatibility with existing face refinements).
    fn upgrade_flag(&self, el: &Element, mut flag: RefFlag) -> RefFlag {
        loop {
            let splits = flag.splits();
            let mut add = [false; 3];
            for face in 0..6 {
                let rect = el.bbox.face_rect(face);
                let tang = rect.tangents();
                if !tang.iter().any(|t| splits[t.idx()]) {
                    continue;
                }
                let existing = self.existing_face_subdivision(el, face);
                for t in tang {
                    if existing[t.idx()] && !splits[t.idx()] {
                        add[t.idx()] = true;
                    }
                }
            }
            if !add.iter().any(|d| *d) {
                return flag;
            }
            flag = flag.merge(RefFlag::from_splits(add));
        }
    }

    /// Splits a leaf; children copy the parent's order verbatim.
    fn execute_split(&mut self, id: ElemId, flag: RefFlag) -> Vec<ElemId> {
        let (bbox, order, level) = {
            let e = &self.elements[id.idx()];
            (e.bbox, e.order, e.level)
        };
        let splits = flag.splits();
        let mut child_level = level;
        for a in 0..3 {
            if splits[a] {
                child_level[a] += 1;
            }
        }
        let mut child_ids = vec![];
        for cb in bbox.children(flag) {
            let cid = ElemId(self.elements.len() as u32);
            self.elements.push(Element {
                id: cid,
                bbox: cb,
                order,
                parent: Some(id),
                children: vec![],
                ref_flag: RefFlag::None,
                level: child_level,
            });
            child_ids.push(cid);
        }
        let e = &mut self.elements[id.idx()];
        e.children = child_ids.clone();
        e.ref_flag = flag;
        child_ids
    }

    /// Shelf algorithm: refine `id` by `flag`, first executing whatever
    /// neighbor refinements are needed to keep faces one-irregular.
    fn refine_one_with_shelf(
        &mut self,
        id: ElemId,
        flag: RefFlag,
        policy: UnwantedPolicy,
        requested: bool,
        report: &mut RefineReport,
        budget: usize,
    ) -> Result<(), MeshError> {
        let mut shelf: Vec<(ElemId, RefFlag, bool)> = vec![(id, flag, requested)];
        while let Some(&(el_id, fl, req)) = shelf.last() {
            report.shelf_ops += 1;
            if report.shelf_ops > budget {
                return Err(MeshError::ClosureBudget(budget));
            }
            if !self.elements[el_id.idx()].is_leaf() {
                shelf.pop();
                continue;
            }
            let el = self.elements[el_id.idx()].clone();
            let fl = self.upgrade_flag(&el, fl);
            if let Some((nb, need)) = self.blocking_constraint(&el, fl) {
                let nb_flag = match policy {
                    UnwantedPolicy::Isotropic => RefFlag::H8,
                    UnwantedPolicy::Minimal => need,
                };
                if let Some(last) = shelf.last_mut() {
                    last.1 = fl;
                }
                shelf.push((nb, nb_flag, false));
                continue;
            }
            let children = self.execute_split(el_id, fl);
            report.executed.push(ExecutedRefinement {
                elem: el_id,
                flag: fl,
                requested: req,
                children,
            });
            shelf.pop();
        }
        Ok(())
    }

    /// Executes a list of refinement requests and restores one-irregularity
    /// of faces, edges, and vertices.
    pub fn refine_with_closure(
        &mut self,
        requests: &[(ElemId, RefFlag)],
        policy: UnwantedPolicy,
    ) -> Result<RefineReport, MeshError> {
        for &(id, flag) in requests {
            if flag == RefFlag::None {
                return Err(MeshError::FlagIsNone);
            }
            self.leaf(id)?;
        }
        let mut report = RefineReport::default();
        let budget = (self.elements.len() + requests.len() + 8).pow(2);

        // closure step 1: requests in order, faces kept one-irregular
        for &(id, flag) in requests {
            if !self.elements[id.idx()].is_leaf() {
                report.skipped.push(id);
                continue;
            }
            self.refine_one_with_shelf(id, flag, policy, true, &mut report, budget)?;
        }

        // closure step 2: eliminate multiply constrained edges and vertices,
        // looped to a fixed point (step-2 fixes run through the shelf again)
        loop {
            report.step2_passes += 1;
            if report.step2_passes > budget {
                return Err(MeshError::ClosureBudget(budget));
            }
            let skel = skeleton::build(self)?;
            let fixes = skel.closure_fixes(self);
            if fixes.is_empty() {
                break;
            }
            for (fix_id, fix_flag) in fixes {
                if !self.elements[fix_id.idx()].is_leaf() {
                    continue;
                }
                let fl = match policy {
                    UnwantedPolicy::Isotropic => RefFlag::H8,
                    UnwantedPolicy::Minimal => fix_flag,
                };
                self.refine_one_with_shelf(fix_id, fl, policy, false, &mut report, budget)?;
            }
        }

        if !report.executed.is_empty() {
            self.bump();
        }
        Ok(report)
    }

    /// Derived face/edge/vertex constraint table (cached per generation).
    pub fn skeleton(&self) -> Result<Arc<Skeleton>, MeshError> {
        if let Some((g, s)) = self.skeleton_cache.read().unwrap().as_ref() {
            if *g == self.generation {
                return Ok(s.clone());
            }
        }
        let skel = Arc::new(skeleton::build(self)?);
        *self.skeleton_cache.write().unwrap() = Some((self.generation, skel.clone()));
        Ok(skel)
    }

    /// Canonical deterministic text form: one line per element,
    /// `id parent flag x0 x1 y0 y1 z0 z1 px py pz`, sorted by id.
    pub fn serialize_canonical(&self) -> String {
        let mut s = String::new();
        for e in &self.elements {
            let parent = match e.parent {
                Some(p) => p.0.to_string(),
                None => "-".to_string(),
            };
            s.push_str(&format!(
                "{} {} {} {:?} {:?} {:?} {:?} {:?} {:?} {} {} {}\n",
                e.id.0,
                parent,
                e.ref_flag.name(),
                e.bbox.lo[0],
                e.bbox.hi[0],
                e.bbox.lo[1],
                e.bbox.hi[1],
                e.bbox.lo[2],
                e.bbox.hi[2],
                e.order[0],
                e.order[1],
                e.order[2],
            ));
        }
        s
    }

    /// Takes a snapshot for later exact unrefinement.
    pub fn snapshot(&self) -> MeshSnapshot {
        MeshSnapshot {
            lineage: self.lineage,
            p_max: self.p_max,
            canonical: self.serialize_canonical(),
        }
    }

    /// Restores the mesh to a snapshot taken from this lineage.
    pub fn unrefine(&mut self, snapshot: &MeshSnapshot) -> Result<(), MeshError> {
        if snapshot.lineage != self.lineage {
            return Err(MeshError::SnapshotLineageMismatch);
        }
        let elements = parse_canonical(&snapshot.canonical)?;
        self.elements = elements;
        self.p_max = snapshot.p_max;
        self.bump();
        Ok(())
    }
}

fn parse_canonical(s: &str) -> Result<Vec<Element>, MeshError> {
    let mut elements: Vec<Element> = vec![];
    for (ln, line) in s.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 12 {
            return Err(MeshError::Parse(format!("line {}: expected 12 fields", ln + 1)));
        }
        let bad = |what: &str| MeshError::Parse(format!("line {}: bad {what}", ln + 1));
        let id: u32 = toks[0].parse().map_err(|_| bad("id"))?;
        if id as usize != elements.len() {
            return Err(MeshError::Parse(format!("line {}: ids must be dense and sorted", ln + 1)));
        }
        let parent = if toks[1] == "-" {
            None
        } else {
            Some(ElemId(toks[1].parse().map_err(|_| bad("parent"))?))
        };
        let flag = RefFlag::parse(toks[2]).ok_or_else(|| bad("flag"))?;
        let mut nums = [0.0f64; 6];
        for (i, n) in nums.iter_mut().enumerate() {
            *n = toks[3 + i].parse().map_err(|_| bad("coordinate"))?;
        }
        let mut order = [0usize; 3];
        for (i, p) in order.iter_mut().enumerate() {
            *p = toks[9 + i].parse().map_err(|_| bad("order"))?;
        }
        let bbox = Box3::new([nums[0], nums[2], nums[4]], [nums[1], nums[3], nums[5]]);
        // level reconstructed from the parent chain
        let level = match parent {
            None => [0; 3],
            Some(p) => {
                let pe = elements
                    .get(p.idx())
                    .ok_or_else(|| MeshError::Parse(format!("line {}: parent after child", ln + 1)))?;
                let mut lv = pe.level;
                for (a, s) in pe.ref_flag.splits().iter().enumerate() {
                    if *s {
                        lv[a] += 1;
                    }
                }
                lv
            }
        };
        elements.push(Element {
            id: ElemId(id),
            bbox,
            order,
            parent,
            children: vec![],
            ref_flag: flag,
            level,
        });
    }
    // children lists from parent pointers (creation order == id order)
    let links: Vec<(ElemId, ElemId)> = elements
        .iter()
        .filter_map(|e| e.parent.map(|p| (p, e.id)))
        .collect();
    for (p, c) in links {
        elements[p.idx()].children.push(c);
    }
    Ok(elements)
}

#[cfg(test)]
mod tests;
