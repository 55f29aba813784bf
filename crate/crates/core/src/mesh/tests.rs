use super::*;
use crate::geom::{Box3, Placement, RefFlag};

fn unit_mesh() -> Mesh {
    Mesh::new(&[Box3::unit()], [2, 2, 2], 6).unwrap()
}

fn two_cubes() -> Mesh {
    Mesh::new(
        &[
            Box3::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]),
            Box3::new([1.0, 0.0, 0.0], [2.0, 1.0, 1.0]),
        ],
        [2, 2, 2],
        6,
    )
    .unwrap()
}

#[test]
fn h8_single_element() {
    let mut m = unit_mesh();
    let rep = m
        .refine_with_closure(&[(ElemId(0), RefFlag::H8)], UnwantedPolicy::Minimal)
        .unwrap();
    assert_eq!(m.n_leaves(), 8);
    assert_eq!(rep.executed.len(), 1);
    assert!(rep.executed[0].requested);
    assert_eq!(rep.unwanted().count(), 0);
    let skel = m.skeleton().unwrap();
    assert!(skel.faces.iter().all(|f| matches!(f.status, FaceStatus::Free)));
    assert!(skel.is_one_level());
}

#[test]
fn h2x_next_to_neighbor_keeps_shared_face_conforming() {
    // split plane parallel to the shared face: no constraint may appear
    let mut m = two_cubes();
    m.refine_with_closure(&[(ElemId(0), RefFlag::H2X)], UnwantedPolicy::Minimal)
        .unwrap();
    assert_eq!(m.n_leaves(), 3);
    // derived check: enumerate faces of the 3 leaves and match geometrically
    let leaves: Vec<_> = m.leaves().collect();
    let shared_plane = 1.0;
    let mut at_plane = vec![];
    for l in &leaves {
        for f in 0..6 {
            let r = l.bbox.face_rect(f);
            if r.axis == crate::geom::Axis::X && r.coord == shared_plane {
                at_plane.push(r);
            }
        }
    }
    assert_eq!(at_plane.len(), 2);
    assert_eq!(at_plane[0], at_plane[1]);
    let skel = m.skeleton().unwrap();
    assert!(skel.faces.iter().all(|f| matches!(f.status, FaceStatus::Free)));
}

#[test]
fn corner_cascade_forces_minimal_closure_on_neighbor() {
    let mut m = two_cubes();
    // refine left cube isotropically
    m.refine_with_closure(&[(ElemId(0), RefFlag::H8)], UnwantedPolicy::Minimal)
        .unwrap();
    // find the child touching the right element (face x=1), lower corner
    let child = m
        .leaves()
        .find(|e| e.bbox.hi[0] == 1.0 && e.bbox.lo[1] == 0.0 && e.bbox.lo[2] == 0.0 && e.bbox.lo[0] == 0.5)
        .unwrap()
        .id;
    let rep = m
        .refine_with_closure(&[(child, RefFlag::H8)], UnwantedPolicy::Minimal)
        .unwrap();
    // the right element must have received an unwanted refinement
    let unwanted: Vec<_> = rep.unwanted().collect();
    assert!(
        unwanted.iter().any(|e| e.elem == ElemId(1)),
        "right element not refined: {unwanted:?}"
    );
    // minimal policy: tangential directions of the shared x-face only
    let right = unwanted.iter().find(|e| e.elem == ElemId(1)).unwrap();
    assert_eq!(right.flag, RefFlag::H4YZ);
    audit_one_level_brute_force(&m);
}

#[test]
fn isotropic_policy_upgrades_unwanted_to_h8() {
    let mut m = two_cubes();
    m.refine_with_closure(&[(ElemId(0), RefFlag::H8)], UnwantedPolicy::Isotropic)
        .unwrap();
    let child = m
        .leaves()
        .find(|e| e.bbox.hi[0] == 1.0 && e.bbox.lo[1] == 0.0 && e.bbox.lo[2] == 0.0 && e.bbox.lo[0] == 0.5)
        .unwrap()
        .id;
    let rep = m
        .refine_with_closure(&[(child, RefFlag::H8)], UnwantedPolicy::Isotropic)
        .unwrap();
    let right = rep.unwanted().find(|e| e.elem == ElemId(1)).unwrap();
    assert_eq!(right.flag, RefFlag::H8);
    audit_one_level_brute_force(&m);
}

#[test]
fn unwanted_refinements_retain_parent_order() {
    let mut m = two_cubes();
    m.set_order(ElemId(1), [3, 4, 5]).unwrap();
    m.refine_with_closure(&[(ElemId(0), RefFlag::H8)], UnwantedPolicy::Minimal)
        .unwrap();
    let child = m
        .leaves()
        .find(|e| e.bbox.hi[0] == 1.0 && e.bbox.lo[0] == 0.5 && e.bbox.lo[1] == 0.0 && e.bbox.lo[2] == 0.0)
        .unwrap()
        .id;
    m.refine_with_closure(&[(child, RefFlag::H8)], UnwantedPolicy::Minimal)
        .unwrap();
    for l in m.leaves() {
        if l.bbox.lo[0] >= 1.0 {
            assert_eq!(l.order, [3, 4, 5]);
        }
    }
}

#[test]
fn unrefine_roundtrip_simple() {
    let mut m = unit_mesh();
    let snap = m.snapshot();
    let before = m.serialize_canonical();
    m.refine_with_closure(&[(ElemId(0), RefFlag::H4XY)], UnwantedPolicy::Minimal)
        .unwrap();
    assert_ne!(m.serialize_canonical(), before);
    m.unrefine(&snap).unwrap();
    assert_eq!(m.serialize_canonical(), before);
}

#[test]
fn unrefine_roundtrip_with_closure_effects() {
    let mut m = two_cubes();
    m.refine_with_closure(&[(ElemId(0), RefFlag::H8)], UnwantedPolicy::Minimal)
        .unwrap();
    let snap = m.snapshot();
    let before = m.serialize_canonical();
    let child = m
        .leaves()
        .find(|e| e.bbox.hi[0] == 1.0 && e.bbox.lo[0] == 0.5 && e.bbox.lo[1] == 0.0 && e.bbox.lo[2] == 0.0)
        .unwrap()
        .id;
    m.refine_with_closure(&[(child, RefFlag::H8)], UnwantedPolicy::Minimal)
        .unwrap();
    m.unrefine(&snap).unwrap();
    assert_eq!(m.serialize_canonical(), before);
}

#[test]
fn unrefine_rejects_foreign_snapshot() {
    let m1 = unit_mesh();
    let mut m2 = unit_mesh();
    let err = m2.unrefine(&m1.snapshot()).unwrap_err();
    assert!(matches!(err, MeshError::SnapshotLineageMismatch));
}

#[test]
fn random_refine_unrefine_roundtrips() {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let mut m = two_cubes();
    for _ in 0..100 {
        let snap = m.snapshot();
        let before = m.serialize_canonical();
        let leaves = m.leaf_ids();
        let n_req = rng.gen_range(1..=3.min(leaves.len()));
        let mut reqs = vec![];
        for _ in 0..n_req {
            let id = leaves[rng.gen_range(0..leaves.len())];
            let flag = RefFlag::ALL[rng.gen_range(1..8)];
            if m.element(id).unwrap().is_leaf() && !reqs.iter().any(|(r, _)| *r == id) {
                reqs.push((id, flag));
            }
        }
        let policy = if rng.gen_bool(0.5) {
            UnwantedPolicy::Minimal
        } else {
            UnwantedPolicy::Isotropic
        };
        m.refine_with_closure(&reqs, policy).unwrap();
        m.unrefine(&snap).unwrap();
        assert_eq!(m.serialize_canonical(), before);
        // keep some refinements so later rounds run on deeper meshes
        if !reqs.is_empty() {
            m.refine_with_closure(&reqs[..1], policy).unwrap();
        }
        if m.n_leaves() > 600 {
            m = two_cubes();
        }
    }
}

#[test]
fn set_order_examples() {
    let mut m = unit_mesh();
    m.set_order(ElemId(0), [3, 2, 2]).unwrap();
    assert_eq!(m.element(ElemId(0)).unwrap().order, [3, 2, 2]);
    assert!(matches!(
        m.set_order(ElemId(0), [7, 2, 2]),
        Err(MeshError::OrderOutOfRange { .. })
    ));
    m.refine_with_closure(&[(ElemId(0), RefFlag::H2X)], UnwantedPolicy::Minimal)
        .unwrap();
    assert!(matches!(m.set_order(ElemId(0), [2, 2, 2]), Err(MeshError::NotALeaf(_))));
}

#[test]
fn neighbors_examples() {
    let mut m = two_cubes();
    // boundary face: empty
    assert!(m.neighbors_across_face(ElemId(0), 0).unwrap().is_empty());
    // conforming neighbor: one entry, full placement
    let n = m.neighbors_across_face(ElemId(0), 1).unwrap();
    assert_eq!(n, vec![(ElemId(1), Placement::Full)]);
    // neighbor refined H4_YZ across an x-face: four quadrant entries
    m.refine_with_closure(&[(ElemId(1), RefFlag::H4YZ)], UnwantedPolicy::Minimal)
        .unwrap();
    let n = m.neighbors_across_face(ElemId(0), 1).unwrap();
    assert_eq!(n.len(), 4);
    // oracle: geometric box intersection on the shared plane
    let rect = m.element(ElemId(0)).unwrap().bbox.face_rect(1);
    for (id, p) in &n {
        assert!(matches!(p, Placement::Quadrant { .. }));
        let nb = m.element(*id).unwrap();
        let sub = rect.sub_rect(*p);
        let nrect = nb.bbox.face_rect(0);
        assert_eq!(sub, nrect);
    }
}

#[test]
fn closure_empty_request_is_noop() {
    let mut m = two_cubes();
    let gen0 = m.generation();
    let before = m.serialize_canonical();
    let rep = m.refine_with_closure(&[], UnwantedPolicy::Minimal).unwrap();
    assert!(rep.executed.is_empty());
    assert_eq!(m.generation(), gen0);
    assert_eq!(m.serialize_canonical(), before);
}

#[test]
fn determinism_same_requests_same_report() {
    let m0 = two_cubes();
    let run = |mut m: Mesh| {
        let r1 = m
            .refine_with_closure(&[(ElemId(0), RefFlag::H8), (ElemId(1), RefFlag::H2Y)], UnwantedPolicy::Minimal)
            .unwrap();
        let leaves = m.leaf_ids();
        let r2 = m
            .refine_with_closure(&[(leaves[2], RefFlag::H8)], UnwantedPolicy::Isotropic)
            .unwrap();
        (r1, r2, m.serialize_canonical())
    };
    let a = run(m0.clone());
    let b = run(m0);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}

#[test]
fn tiling_volume_preserved_under_random_ops() {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let mut m = two_cubes();
    for _ in 0..40 {
        let leaves = m.leaf_ids();
        let id = leaves[rng.gen_range(0..leaves.len())];
        let flag = RefFlag::ALL[rng.gen_range(1..8)];
        m.refine_with_closure(&[(id, flag)], UnwantedPolicy::Minimal).unwrap();
        let vol: f64 = m.leaves().map(|l| l.bbox.volume()).sum();
        assert!((vol - m.domain_volume()).abs() <= 1e-12 * m.domain_volume());
    }
    audit_one_level_brute_force(&m);
}

#[test]
fn skeleton_matches_brute_force_on_random_meshes() {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    for trial in 0..25 {
        let mut m = if trial % 2 == 0 { two_cubes() } else { unit_mesh() };
        for _ in 0..5 {
            let leaves = m.leaf_ids();
            let id = leaves[rng.gen_range(0..leaves.len())];
            let flag = RefFlag::ALL[rng.gen_range(1..8)];
            let policy = if rng.gen_bool(0.5) {
                UnwantedPolicy::Minimal
            } else {
                UnwantedPolicy::Isotropic
            };
            m.refine_with_closure(&[(id, flag)], policy).unwrap();
        }
        audit_one_level_brute_force(&m);
    }
}

/// Brute-force constraint-depth audit, independent of the skeleton builder:
/// reconstructs faces/edges/vertices from leaf geometry with O(n^2) scans and
/// checks that no constrained entity's master closure is constrained.
pub fn audit_one_level_brute_force(m: &Mesh) {
    use crate::geom::{Rect, Seg};
    let leaves: Vec<_> = m.leaves().collect();
    // faces
    let mut rects: Vec<Rect> = vec![];
    for l in &leaves {
        for f in 0..6 {
            let r = l.bbox.face_rect(f);
            if !rects.iter().any(|x| *x == r) {
                rects.push(r);
            }
        }
    }
    let face_master = |r: &Rect| -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, c) in rects.iter().enumerate() {
            if c != r && c.contains(r) {
                if best.map_or(true, |b| c.area() < rects[b].area()) {
                    best = Some(i);
                }
            }
        }
        best
    };
    // edges
    let mut segs: Vec<Seg> = vec![];
    for r in &rects {
        for e in Seg::edges_of(r) {
            if !segs.iter().any(|x| *x == e) {
                segs.push(e);
            }
        }
    }
    let seg_in_face = |s: &Seg, r: &Rect| -> bool {
        let [t1, t2] = r.tangents();
        if s.axis == r.axis {
            return false;
        }
        let (along, perp_axis) = if t1 == s.axis { (0, t2) } else { (1, t1) };
        let perp = if perp_axis == s.axis.tangents()[0] {
            s.at[0]
        } else {
            s.at[1]
        };
        let plane_coord = {
            // normal coordinate of the segment in r's plane
            let [b, c] = s.axis.tangents();
            if r.axis == b { s.at[0] } else if r.axis == c { s.at[1] } else { unreachable!() }
        };
        let perp_idx = if along == 0 { 1 } else { 0 };
        plane_coord == r.coord
            && r.lo[along] <= s.range[0]
            && s.range[1] <= r.hi[along]
            && r.lo[perp_idx] < perp
            && perp < r.hi[perp_idx]
    };
    #[derive(PartialEq)]
    enum EdgeM {
        Free,
        InEdge(usize),
        InFace(usize),
    }
    let edge_master = |s: &Seg| -> EdgeM {
        let mut best: Option<usize> = None;
        for (i, c) in segs.iter().enumerate() {
            if c.contains_strict(s) {
                if best.map_or(true, |b| c.len() < segs[b].len()) {
                    best = Some(i);
                }
            }
        }
        if let Some(i) = best {
            return EdgeM::InEdge(i);
        }
        let mut bestf: Option<usize> = None;
        for (i, r) in rects.iter().enumerate() {
            if seg_in_face(s, r) {
                if bestf.map_or(true, |b| r.area() < rects[b].area()) {
                    bestf = Some(i);
                }
            }
        }
        match bestf {
            Some(i) => EdgeM::InFace(i),
            None => EdgeM::Free,
        }
    };
    // vertices
    let mut pts: Vec<[f64; 3]> = vec![];
    for s in &segs {
        for p in s.endpoints() {
            if !pts.iter().any(|x| *x == p) {
                pts.push(p);
            }
        }
    }
    #[derive(PartialEq)]
    enum VertM {
        Free,
        InEdge(usize),
        InFace(usize),
    }
    let vert_master = |p: &[f64; 3]| -> VertM {
        let mut best: Option<usize> = None;
        for (i, s) in segs.iter().enumerate() {
            let [b, c] = s.axis.tangents();
            if s.at[0] == p[b.idx()]
                && s.at[1] == p[c.idx()]
                && s.range[0] < p[s.axis.idx()]
                && p[s.axis.idx()] < s.range[1]
            {
                if best.map_or(true, |x| s.len() < segs[x].len()) {
                    best = Some(i);
                }
            }
        }
        if let Some(i) = best {
            return VertM::InEdge(i);
        }
        let mut bestf: Option<usize> = None;
        for (i, r) in rects.iter().enumerate() {
            let [t1, t2] = r.tangents();
            if r.coord == p[r.axis.idx()]
                && r.lo[0] < p[t1.idx()]
                && p[t1.idx()] < r.hi[0]
                && r.lo[1] < p[t2.idx()]
                && p[t2.idx()] < r.hi[1]
            {
                if bestf.map_or(true, |x| r.area() < rects[x].area()) {
                    bestf = Some(i);
                }
            }
        }
        match bestf {
            Some(i) => VertM::InFace(i),
            None => VertM::Free,
        }
    };

    let face_free = |i: usize| face_master(&rects[i]).is_none();
    let edge_free = |s: &Seg| edge_master(s) == EdgeM::Free;
    let vert_free = |p: &[f64; 3]| vert_master(p) == VertM::Free;
    let face_closure_ok = |i: usize| {
        face_free(i)
            && Seg::edges_of(&rects[i]).iter().all(edge_free)
            && Seg::edges_of(&rects[i])
                .iter()
                .flat_map(|s| s.endpoints())
                .all(|p| vert_free(&p))
    };
    let edge_closure_ok =
        |i: usize| edge_free(&segs[i]) && segs[i].endpoints().iter().all(vert_free);

    for r in &rects {
        if let Some(mi) = face_master(r) {
            // slave faces must be exact halves/quadrants of the master
            assert!(
                rects[mi].placement_of(r).is_some(),
                "slave face {r:?} not half/quadrant of master"
            );
            assert!(face_closure_ok(mi), "multiply constrained face closure at {r:?}");
        }
    }
    for s in &segs {
        match edge_master(s) {
            EdgeM::Free => {}
            EdgeM::InEdge(i) => assert!(edge_closure_ok(i), "multiply constrained edge {s:?}"),
            EdgeM::InFace(i) => assert!(face_closure_ok(i), "edge {s:?} hangs on constrained face"),
        }
    }
    for p in &pts {
        match vert_master(p) {
            VertM::Free => {}
            VertM::InEdge(i) => assert!(edge_closure_ok(i), "multiply constrained vertex {p:?}"),
            VertM::InFace(i) => assert!(face_closure_ok(i), "vertex {p:?} hangs on constrained face"),
        }
    }
}
