//! Axis-aligned geometry primitives for the hexahedral refinement forest.
//!
//! All coordinates produced by refinement are dyadic (exact midpoints of
//! dyadic endpoints), so f64 comparisons below are exact and bit-pattern
//! keys are stable deduplication keys.

/// Coordinate axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn idx(self) -> usize {
        self as usize
    }

    pub fn from_idx(i: usize) -> Axis {
        match i {
            0 => Axis::X,
            1 => Axis::Y,
            2 => Axis::Z,
            _ => panic!("axis index out of range: {i}"),
        }
    }

    /// The two other axes in ascending order.
    pub fn tangents(self) -> [Axis; 2] {
        match self {
            Axis::X => [Axis::Y, Axis::Z],
            Axis::Y => [Axis::X, Axis::Z],
            Axis::Z => [Axis::X, Axis::Y],
        }
    }
}

/// One of the eight h-refinement kinds of a hexahedral element
/// (`None` is the pure-p case: no h-refinement).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RefFlag {
    None,
    H2X,
    H2Y,
    H2Z,
    H4XY,
    H4YZ,
    H4XZ,
    H8,
}

impl RefFlag {
    pub const ALL: [RefFlag; 8] = [
        RefFlag::None,
        RefFlag::H2X,
        RefFlag::H2Y,
        RefFlag::H2Z,
        RefFlag::H4XY,
        RefFlag::H4YZ,
        RefFlag::H4XZ,
        RefFlag::H8,
    ];

    /// Per-axis split mask.
    pub fn splits(self) -> [bool; 3] {
        match self {
            RefFlag::None => [false, false, false],
            RefFlag::H2X => [true, false, false],
            RefFlag::H2Y => [false, true, false],
            RefFlag::H2Z => [false, false, true],
            RefFlag::H4XY => [true, true, false],
            RefFlag::H4YZ => [false, true, true],
            RefFlag::H4XZ => [true, false, true],
            RefFlag::H8 => [true, true, true],
        }
    }

    pub fn from_splits(s: [bool; 3]) -> RefFlag {
        match s {
            [false, false, false] => RefFlag::None,
            [true, false, false] => RefFlag::H2X,
            [false, true, false] => RefFlag::H2Y,
            [false, false, true] => RefFlag::H2Z,
            [true, true, false] => RefFlag::H4XY,
            [false, true, true] => RefFlag::H4YZ,
            [true, false, true] => RefFlag::H4XZ,
            [true, true, true] => RefFlag::H8,
        }
    }

    /// Union of split directions.
    pub fn merge(self, other: RefFlag) -> RefFlag {
        let a = self.splits();
        let b = other.splits();
        RefFlag::from_splits([a[0] || b[0], a[1] || b[1], a[2] || b[2]])
    }

    pub fn child_count(self) -> usize {
        1 << self.splits().iter().filter(|s| **s).count()
    }

    pub fn name(self) -> &'static str {
        match self {
            RefFlag::None => "NONE",
            RefFlag::H2X => "H2_X",
            RefFlag::H2Y => "H2_Y",
            RefFlag::H2Z => "H2_Z",
            RefFlag::H4XY => "H4_XY",
            RefFlag::H4YZ => "H4_YZ",
            RefFlag::H4XZ => "H4_XZ",
            RefFlag::H8 => "H8",
        }
    }

    pub fn parse(s: &str) -> Option<RefFlag> {
        RefFlag::ALL.iter().copied().find(|f| f.name() == s)
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3 {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Box3 {
    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Box3 {
        debug_assert!(lo.iter().zip(&hi).all(|(a, b)| a < b));
        Box3 { lo, hi }
    }

    pub fn unit() -> Box3 {
        Box3::new([0.0; 3], [1.0; 3])
    }

    pub fn extent(&self, a: usize) -> f64 {
        self.hi[a] - self.lo[a]
    }

    pub fn extents(&self) -> [f64; 3] {
        [self.extent(0), self.extent(1), self.extent(2)]
    }

    pub fn volume(&self) -> f64 {
        self.extent(0) * self.extent(1) * self.extent(2)
    }

    pub fn midpoint(&self, a: usize) -> f64 {
        0.5 * (self.lo[a] + self.hi[a])
    }

    pub fn center(&self) -> [f64; 3] {
        [self.midpoint(0), self.midpoint(1), self.midpoint(2)]
    }

    /// Maps reference coordinates in [0,1]^3 to physical coordinates.
    pub fn map_from_ref(&self, xi: [f64; 3]) -> [f64; 3] {
        [
            self.lo[0] + xi[0] * self.extent(0),
            self.lo[1] + xi[1] * self.extent(1),
            self.lo[2] + xi[2] * self.extent(2),
        ]
    }

    /// Child boxes under `flag`, in lexicographic order (x fastest).
    pub fn children(&self, flag: RefFlag) -> Vec<Box3> {
        let s = flag.splits();
        let parts = |a: usize| -> Vec<(f64, f64)> {
            if s[a] {
                let m = self.midpoint(a);
                vec![(self.lo[a], m), (m, self.hi[a])]
            } else {
                vec![(self.lo[a], self.hi[a])]
            }
        };
        let (px, py, pz) = (parts(0), parts(1), parts(2));
        let mut out = Vec::with_capacity(flag.child_count());
        for z in &pz {
            for y in &py {
                for x in &px {
                    out.push(Box3::new([x.0, y.0, z.0], [x.1, y.1, z.1]));
                }
            }
        }
        out
    }

    /// Strict containment (other inside self, possibly sharing boundary).
    pub fn contains_box(&self, other: &Box3) -> bool {
        (0..3).all(|a| self.lo[a] <= other.lo[a] && other.hi[a] <= self.hi[a])
    }

    pub fn contains_point(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| self.lo[a] <= p[a] && p[a] <= self.hi[a])
    }

    /// Face rectangle of side `face` (0..6): axis = face/2, upper side if face%2==1.
    pub fn face_rect(&self, face: usize) -> Rect {
        let axis = Axis::from_idx(face / 2);
        let coord = if face % 2 == 0 {
            self.lo[axis.idx()]
        } else {
            self.hi[axis.idx()]
        };
        let [t1, t2] = axis.tangents();
        Rect {
            axis,
            coord,
            lo: [self.lo[t1.idx()], self.lo[t2.idx()]],
            hi: [self.hi[t1.idx()], self.hi[t2.idx()]],
        }
    }
}

/// Axis-aligned rectangle embedded in a coordinate plane.
/// Tangential coordinates are the two non-normal axes in ascending order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub axis: Axis,
    pub coord: f64,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Rect {
    pub fn tangents(&self) -> [Axis; 2] {
        self.axis.tangents()
    }

    pub fn extent(&self, t: usize) -> f64 {
        self.hi[t] - self.lo[t]
    }

    pub fn area(&self) -> f64 {
        self.extent(0) * self.extent(1)
    }

    pub fn center3(&self) -> [f64; 3] {
        let mut c = [self.coord; 3];
        let [t1, t2] = self.tangents();
        c[t1.idx()] = 0.5 * (self.lo[0] + self.hi[0]);
        c[t2.idx()] = 0.5 * (self.lo[1] + self.hi[1]);
        c[self.axis.idx()] = self.coord;
        c
    }

    pub fn key(&self) -> RectKey {
        RectKey {
            axis: self.axis as u8,
            coord: self.coord.to_bits(),
            lo: [self.lo[0].to_bits(), self.lo[1].to_bits()],
            hi: [self.hi[0].to_bits(), self.hi[1].to_bits()],
        }
    }

    pub fn same_plane(&self, other: &Rect) -> bool {
        self.axis == other.axis && self.coord == other.coord
    }

    /// True if `other` is contained in `self` (same plane required).
    pub fn contains(&self, other: &Rect) -> bool {
        self.same_plane(other)
            && (0..2).all(|t| self.lo[t] <= other.lo[t] && other.hi[t] <= self.hi[t])
    }

    /// Positive-area overlap on the same plane.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.same_plane(other)
            && (0..2).all(|t| self.lo[t] < other.hi[t] && other.lo[t] < self.hi[t])
    }

    /// Placement of `sub` within `self`. Returns `None` when `sub` is not
    /// exactly this rect, an exact half, or an exact quadrant.
    pub fn placement_of(&self, sub: &Rect) -> Option<Placement> {
        if !self.contains(sub) {
            return None;
        }
        if self.lo == sub.lo && self.hi == sub.hi {
            return Some(Placement::Full);
        }
        let mid = [
            0.5 * (self.lo[0] + self.hi[0]),
            0.5 * (self.lo[1] + self.hi[1]),
        ];
        // per tangent direction: 0 = lower half, 1 = upper half, 2 = full span
        let mut part = [2usize; 2];
        for t in 0..2 {
            if sub.lo[t] == self.lo[t] && sub.hi[t] == self.hi[t] {
                part[t] = 2;
            } else if sub.lo[t] == self.lo[t] && sub.hi[t] == mid[t] {
                part[t] = 0;
            } else if sub.lo[t] == mid[t] && sub.hi[t] == self.hi[t] {
                part[t] = 1;
            } else {
                return None;
            }
        }
        match part {
            [2, 2] => Some(Placement::Full),
            [h, 2] => Some(Placement::Half { dir: 0, which: h as u8 }),
            [2, h] => Some(Placement::Half { dir: 1, which: h as u8 }),
            [i, j] => Some(Placement::Quadrant {
                i: i as u8,
                j: j as u8,
            }),
        }
    }

    /// Sub-rectangle described by a placement.
    pub fn sub_rect(&self, p: Placement) -> Rect {
        let mid = [
            0.5 * (self.lo[0] + self.hi[0]),
            0.5 * (self.lo[1] + self.hi[1]),
        ];
        let range = |t: usize, which: Option<u8>| -> (f64, f64) {
            match which {
                None => (self.lo[t], self.hi[t]),
                Some(0) => (self.lo[t], mid[t]),
                Some(_) => (mid[t], self.hi[t]),
            }
        };
        let (w0, w1) = match p {
            Placement::Full => (None, None),
            Placement::Half { dir: 0, which } => (Some(which), None),
            Placement::Half { .. } => {
                let Placement::Half { which, .. } = p else { unreachable!() };
                (None, Some(which))
            }
            Placement::Quadrant { i, j } => (Some(i), Some(j)),
        };
        let r0 = range(0, w0);
        let r1 = range(1, w1);
        Rect {
            axis: self.axis,
            coord: self.coord,
            lo: [r0.0, r1.0],
            hi: [r0.1, r1.1],
        }
    }
}

/// Exact dedup key for a rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RectKey {
    pub axis: u8,
    pub coord: u64,
    pub lo: [u64; 2],
    pub hi: [u64; 2],
}

/// Which part of a master face a slave face occupies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Placement {
    Full,
    /// Half along tangential direction `dir` (0 or 1); `which` picks lower/upper.
    Half {
        dir: u8,
        which: u8,
    },
    /// Quadrant: `i` along tangent 0, `j` along tangent 1.
    Quadrant {
        i: u8,
        j: u8,
    },
}

/// Axis-aligned segment: runs along `axis` over `range`, at fixed coordinates
/// `at` in the two other axes (ascending order).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Seg {
    pub axis: Axis,
    pub range: [f64; 2],
    pub at: [f64; 2],
}

impl Seg {
    pub fn len(&self) -> f64 {
        self.range[1] - self.range[0]
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.range[0] + self.range[1])
    }

    pub fn key(&self) -> SegKey {
        SegKey {
            axis: self.axis as u8,
            range: [self.range[0].to_bits(), self.range[1].to_bits()],
            at: [self.at[0].to_bits(), self.at[1].to_bits()],
        }
    }

    pub fn endpoints(&self) -> [[f64; 3]; 2] {
        let [b, c] = self.axis.tangents();
        let mut p0 = [0.0; 3];
        p0[self.axis.idx()] = self.range[0];
        p0[b.idx()] = self.at[0];
        p0[c.idx()] = self.at[1];
        let mut p1 = p0;
        p1[self.axis.idx()] = self.range[1];
        [p0, p1]
    }

    pub fn point_at(&self, x: f64) -> [f64; 3] {
        let [b, c] = self.axis.tangents();
        let mut p = [0.0; 3];
        p[self.axis.idx()] = x;
        p[b.idx()] = self.at[0];
        p[c.idx()] = self.at[1];
        p
    }

    /// Same line?
    pub fn colinear(&self, other: &Seg) -> bool {
        self.axis == other.axis && self.at == other.at
    }

    /// Strict containment of `other` inside `self` on the same line.
    pub fn contains_strict(&self, other: &Seg) -> bool {
        self.colinear(other)
            && self.range[0] <= other.range[0]
            && other.range[1] <= self.range[1]
            && (self.range[0] != other.range[0] || self.range[1] != other.range[1])
    }

    /// The four boundary edges of a rectangle.
    pub fn edges_of(rect: &Rect) -> [Seg; 4] {
        let [t1, t2] = rect.tangents();
        let at = |a: Axis, v1: f64, v2: f64| -> [f64; 2] {
            // perpendicular coordinates of an edge along `a`, ascending axes
            let mut vals = [(rect.axis, rect.coord), (t1, v1), (t2, v2)];
            vals.sort_by_key(|(ax, _)| ax.idx());
            let other: Vec<f64> = vals
                .iter()
                .filter(|(ax, _)| *ax != a)
                .map(|(_, v)| *v)
                .collect();
            [other[0], other[1]]
        };
        [
            // along t1 at t2=lo, t2=hi
            Seg { axis: t1, range: [rect.lo[0], rect.hi[0]], at: at(t1, 0.0, rect.lo[1]) },
            Seg { axis: t1, range: [rect.lo[0], rect.hi[0]], at: at(t1, 0.0, rect.hi[1]) },
            // along t2 at t1=lo, t1=hi
            Seg { axis: t2, range: [rect.lo[1], rect.hi[1]], at: at(t2, rect.lo[0], 0.0) },
            Seg { axis: t2, range: [rect.lo[1], rect.hi[1]], at: at(t2, rect.hi[0], 0.0) },
        ]
    }
}

/// Exact dedup key for a segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SegKey {
    pub axis: u8,
    pub range: [u64; 2],
    pub at: [u64; 2],
}

/// Exact dedup key for a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PointKey(pub [u64; 3]);

pub fn point_key(p: [f64; 3]) -> PointKey {
    PointKey([p[0].to_bits(), p[1].to_bits(), p[2].to_bits()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_children_counts() {
        assert_eq!(RefFlag::None.child_count(), 1);
        assert_eq!(RefFlag::H2X.child_count(), 2);
        assert_eq!(RefFlag::H4YZ.child_count(), 4);
        assert_eq!(RefFlag::H8.child_count(), 8);
        assert_eq!(RefFlag::ALL.len(), 8);
    }

    #[test]
    fn children_tile_parent() {
        let b = Box3::new([0.0, 0.0, 0.0], [2.0, 1.0, 4.0]);
        for flag in RefFlag::ALL {
            let kids = b.children(flag);
            assert_eq!(kids.len(), flag.child_count());
            let vol: f64 = kids.iter().map(|k| k.volume()).sum();
            assert!((vol - b.volume()).abs() < 1e-12 * b.volume());
            for k in &kids {
                assert!(b.contains_box(k));
            }
            // pairwise disjoint interiors
            for i in 0..kids.len() {
                for j in (i + 1)..kids.len() {
                    let (a, c) = (&kids[i], &kids[j]);
                    let overlap = (0..3)
                        .all(|d| a.lo[d] < c.hi[d] && c.lo[d] < a.hi[d]);
                    assert!(!overlap, "{flag:?} children {i},{j} overlap");
                }
            }
        }
    }

    #[test]
    fn placement_detection() {
        let b = Box3::unit();
        let f = b.face_rect(1); // +x face, tangents (y,z)
        assert_eq!(f.placement_of(&f), Some(Placement::Full));
        let half = Rect { axis: f.axis, coord: f.coord, lo: [0.0, 0.0], hi: [0.5, 1.0] };
        assert_eq!(half.area(), 0.5);
        assert_eq!(f.placement_of(&half), Some(Placement::Half { dir: 0, which: 0 }));
        let quad = Rect { axis: f.axis, coord: f.coord, lo: [0.5, 0.5], hi: [1.0, 1.0] };
        assert_eq!(f.placement_of(&quad), Some(Placement::Quadrant { i: 1, j: 1 }));
        let bad = Rect { axis: f.axis, coord: f.coord, lo: [0.25, 0.0], hi: [0.5, 1.0] };
        assert_eq!(f.placement_of(&bad), None);
        // sub_rect is the inverse of placement_of
        for p in [
            Placement::Full,
            Placement::Half { dir: 0, which: 1 },
            Placement::Half { dir: 1, which: 0 },
            Placement::Quadrant { i: 0, j: 1 },
        ] {
            assert_eq!(f.placement_of(&f.sub_rect(p)), Some(p));
        }
    }

    #[test]
    fn face_rect_orientation() {
        let b = Box3::new([1.0, 2.0, 3.0], [2.0, 4.0, 6.0]);
        let f = b.face_rect(2); // -y face: tangents (x,z)
        assert_eq!(f.axis, Axis::Y);
        assert_eq!(f.coord, 2.0);
        assert_eq!(f.lo, [1.0, 3.0]);
        assert_eq!(f.hi, [2.0, 6.0]);
    }

    #[test]
    fn edges_of_rect() {
        let b = Box3::unit();
        let f = b.face_rect(0); // -x face at x=0, tangents (y,z)
        let edges = Seg::edges_of(&f);
        // edge along y at z=0 has perpendicular coords (x=0, z=0)
        assert_eq!(edges[0].axis, Axis::Y);
        assert_eq!(edges[0].at, [0.0, 0.0]);
        // edge along z at y=1 has perpendicular coords (x=0, y=1)
        assert_eq!(edges[3].axis, Axis::Z);
        assert_eq!(edges[3].at, [0.0, 1.0]);
    }
}
