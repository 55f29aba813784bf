//! Element spaces: tensor-product L2 bases for field variables, enriched
//! broken test spaces, tensor Gauss quadrature, diagonal-mass L2 projection,
//! and the hanging-face constraint rows for trace variables.
//!
//! All reference computations live on the unit cube [0,1]^3. L2 field
//! functions carry the affine Piola scaling phi = (1/jac) phi_hat; test
//! functions are plain pullbacks.

pub mod dofmap;

pub use dofmap::{BcKind, BoundaryData, DofMap, ElemTrace, SideClosure, SideFlux, TraceRef};

use crate::basis::{gauss_rule, lobatto_h1, orthonormal_legendre, BasisTable, BasisKind};
use crate::geom::{Box3, Placement};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("element has zero volume")]
    ZeroVolume,
    #[error("sample count {got} does not match quadrature size {want}")]
    SampleCount { got: usize, want: usize },
}

/// Which L2 field a projection targets. All four share the same scalar
/// tensor basis; sigma components are three copies of it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldComponent {
    U,
    Sigma(usize),
}

impl FieldComponent {
    pub const ALL: [FieldComponent; 4] = [
        FieldComponent::U,
        FieldComponent::Sigma(0),
        FieldComponent::Sigma(1),
        FieldComponent::Sigma(2),
    ];

    pub fn index(self) -> usize {
        match self {
            FieldComponent::U => 0,
            FieldComponent::Sigma(i) => 1 + i,
        }
    }
}

/// Tensor Gauss rule over a box; exact per direction for degree 2(p+dp)+1.
#[derive(Clone, Debug)]
pub struct TensorQuad {
    pub n: [usize; 3],
    /// Reference points in [0,1] per direction.
    pub points: [Vec<f64>; 3],
    /// Reference weights per direction (sum to 1).
    pub weights: [Vec<f64>; 3],
}

impl TensorQuad {
    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened index with x fastest.
    pub fn flat(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n[0] * (j + self.n[1] * k)
    }
}

/// Tensor Gauss rule integrating per-direction polynomials of degree
/// 2(order_d + delta_p) + 1 exactly.
pub fn quadrature_rule(orders: [usize; 3], delta_p: usize) -> TensorQuad {
    let mut n = [0usize; 3];
    let mut points: [Vec<f64>; 3] = Default::default();
    let mut weights: [Vec<f64>; 3] = Default::default();
    for d in 0..3 {
        assert!(orders[d] >= 1, "orders must be >= 1");
        n[d] = orders[d] + delta_p + 1;
        let r = gauss_rule(n[d]);
        points[d] = r.points;
        weights[d] = r.weights;
    }
    TensorQuad { n, points, weights }
}

/// Per-element spaces: trial L2 tensor basis (scalar + three sigma copies),
/// enriched broken test basis, and the quadrature rule.
#[derive(Clone, Debug)]
pub struct ElementSpace {
    pub bbox: Box3,
    /// Trial L2 counts per direction (degree + 1).
    pub orders: [usize; 3],
    pub delta_p: usize,
    pub quad: TensorQuad,
    /// Trial 1D tables at quadrature points (orthonormal Legendre, count p_d).
    pub trial: [BasisTable; 3],
    /// Test 1D tables at quadrature points (orthonormal Legendre, count p_d + dp + 1).
    pub test: [BasisTable; 3],
    pub jac: f64,
}

impl ElementSpace {
    pub fn new(bbox: Box3, orders: [usize; 3], delta_p: usize) -> Result<ElementSpace, SpaceError> {
        let jac = bbox.volume();
        if !(jac > 0.0) {
            return Err(SpaceError::ZeroVolume);
        }
        let quad = quadrature_rule(orders, delta_p);
        let mut trial: [Option<BasisTable>; 3] = Default::default();
        let mut test: [Option<BasisTable>; 3] = Default::default();
        for d in 0..3 {
            trial[d] = Some(BasisTable::tabulate(
                BasisKind::LegendreL2,
                orders[d],
                &quad.points[d],
            ));
            test[d] = Some(BasisTable::tabulate(
                BasisKind::LegendreL2,
                orders[d] + delta_p + 1,
                &quad.points[d],
            ));
        }
        Ok(ElementSpace {
            bbox,
            orders,
            delta_p,
            quad,
            trial: trial.map(|t| t.unwrap()),
            test: test.map(|t| t.unwrap()),
            jac,
        })
    }

    /// Scalar L2 dimension per component.
    pub fn trial_scalar_dim(&self) -> usize {
        self.orders.iter().product()
    }

    /// Total trial dimension over (u, sigma).
    pub fn trial_dim(&self) -> usize {
        4 * self.trial_scalar_dim()
    }

    /// Scalar test dimension per test field.
    pub fn test_scalar_dim(&self) -> usize {
        (0..3).map(|d| self.test_counts()[d]).product()
    }

    pub fn test_counts(&self) -> [usize; 3] {
        [
            self.orders[0] + self.delta_p + 1,
            self.orders[1] + self.delta_p + 1,
            self.orders[2] + self.delta_p + 1,
        ]
    }

    /// Total test dimension over (v, tau).
    pub fn test_dim(&self) -> usize {
        4 * self.test_scalar_dim()
    }

    /// Tensor index helpers (x fastest).
    pub fn trial_flat(&self, a: usize, b: usize, c: usize) -> usize {
        a + self.orders[0] * (b + self.orders[1] * c)
    }

    /// Physical values of the scalar L2 basis at the quadrature grid,
    /// including the Piola factor 1/jac. Row = basis, col = flat point.
    pub fn trial_values_at_quad(&self) -> DMatrix<f64> {
        let nb = self.trial_scalar_dim();
        let nq = self.quad.len();
        let mut m = DMatrix::zeros(nb, nq);
        let inv_jac = 1.0 / self.jac;
        for c in 0..self.orders[2] {
            for b in 0..self.orders[1] {
                for a in 0..self.orders[0] {
                    let row = self.trial_flat(a, b, c);
                    for k in 0..self.quad.n[2] {
                        for j in 0..self.quad.n[1] {
                            for i in 0..self.quad.n[0] {
                                m[(row, self.quad.flat(i, j, k))] = inv_jac
                                    * self.trial[0].values[a][i]
                                    * self.trial[1].values[b][j]
                                    * self.trial[2].values[c][k];
                            }
                        }
                    }
                }
            }
        }
        m
    }

    /// Physical quadrature weights (product weights times the Jacobian).
    pub fn quad_weights_phys(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.quad.len()];
        for k in 0..self.quad.n[2] {
            for j in 0..self.quad.n[1] {
                for i in 0..self.quad.n[0] {
                    w[self.quad.flat(i, j, k)] = self.jac
                        * self.quad.weights[0][i]
                        * self.quad.weights[1][j]
                        * self.quad.weights[2][k];
                }
            }
        }
        w
    }

    /// Physical coordinates of the quadrature grid.
    pub fn quad_points_phys(&self) -> Vec<[f64; 3]> {
        let mut pts = vec![[0.0; 3]; self.quad.len()];
        for k in 0..self.quad.n[2] {
            for j in 0..self.quad.n[1] {
                for i in 0..self.quad.n[0] {
                    pts[self.quad.flat(i, j, k)] = self.bbox.map_from_ref([
                        self.quad.points[0][i],
                        self.quad.points[1][j],
                        self.quad.points[2][k],
                    ]);
                }
            }
        }
        pts
    }

    /// Diagonal entries of the L2 mass matrix of the (Piola-scaled) trial
    /// basis: M_jj = 1/jac for orthonormal reference functions.
    pub fn trial_mass_diag(&self) -> f64 {
        1.0 / self.jac
    }

    /// Evaluates a coefficient vector of one L2 component at a physical point.
    pub fn eval_field(&self, coeffs: &DVector<f64>, x: [f64; 3]) -> f64 {
        let xi = [
            (x[0] - self.bbox.lo[0]) / self.bbox.extent(0),
            (x[1] - self.bbox.lo[1]) / self.bbox.extent(1),
            (x[2] - self.bbox.lo[2]) / self.bbox.extent(2),
        ];
        let (vx, _) = orthonormal_legendre(self.orders[0], xi[0]);
        let (vy, _) = orthonormal_legendre(self.orders[1], xi[1]);
        let (vz, _) = orthonormal_legendre(self.orders[2], xi[2]);
        let mut s = 0.0;
        for c in 0..self.orders[2] {
            for b in 0..self.orders[1] {
                for a in 0..self.orders[0] {
                    s += coeffs[self.trial_flat(a, b, c)] * vx[a] * vy[b] * vz[c];
                }
            }
        }
        s / self.jac
    }

    /// L2 projection of a field sampled at this element's quadrature points:
    /// returns best-approximation coefficients and the squared L2 error.
    /// Computed via the diagonal mass matrix.
    pub fn l2_project(
        &self,
        samples: &[f64],
        component: FieldComponent,
    ) -> Result<(DVector<f64>, f64), SpaceError> {
        let _ = component; // all components share the scalar basis
        if samples.len() != self.quad.len() {
            return Err(SpaceError::SampleCount { got: samples.len(), want: self.quad.len() });
        }
        let w = self.quad_weights_phys();
        let basis = self.trial_values_at_quad();
        let m_diag = self.trial_mass_diag();
        let nb = self.trial_scalar_dim();
        let mut coeffs = DVector::zeros(nb);
        let mut norm2_u = 0.0;
        for q in 0..samples.len() {
            norm2_u += w[q] * samples[q] * samples[q];
        }
        for j in 0..nb {
            let mut s = 0.0;
            for q in 0..samples.len() {
                s += w[q] * samples[q] * basis[(j, q)];
            }
            coeffs[j] = s / m_diag;
        }
        // ||u - Pu||^2 = ||u||^2 - sum_j c_j^2 M_jj
        let mut energy = 0.0;
        for j in 0..nb {
            energy += coeffs[j] * coeffs[j] * m_diag;
        }
        Ok((coeffs, (norm2_u - energy).max(0.0)))
    }
}

// ---------------------------------------------------------------------------
// 2D trace closure basis (hierarchical: corners, edge bubbles, interior)
// ---------------------------------------------------------------------------

/// Layout of the 2D H1 closure basis of order (q1,q2) on the unit square:
/// corners (lexicographic), bottom/top edge bubbles (along dir 0),
/// left/right edge bubbles (along dir 1), interior (dir-0-fastest).
#[derive(Clone, Copy, Debug)]
pub struct ClosureLayout {
    pub orders: [usize; 2],
}

impl ClosureLayout {
    pub fn new(orders: [usize; 2]) -> ClosureLayout {
        assert!(orders[0] >= 1 && orders[1] >= 1);
        ClosureLayout { orders }
    }

    pub fn dim(&self) -> usize {
        (self.orders[0] + 1) * (self.orders[1] + 1)
    }

    pub fn n_edge(&self, dir: usize) -> usize {
        self.orders[dir] - 1
    }

    pub fn corner(&self, i: usize, j: usize) -> usize {
        i + 2 * j
    }

    /// Edge block offset: edges ordered bottom (t2=0), top (t2=1),
    /// left (t1=0), right (t1=1).
    pub fn edge_offset(&self, e: usize) -> usize {
        let nb0 = self.n_edge(0);
        let nb1 = self.n_edge(1);
        4 + match e {
            0 => 0,
            1 => nb0,
            2 => 2 * nb0,
            3 => 2 * nb0 + nb1,
            _ => panic!("edge index out of range"),
        }
    }

    pub fn interior_offset(&self) -> usize {
        4 + 2 * self.n_edge(0) + 2 * self.n_edge(1)
    }

    pub fn n_interior(&self) -> usize {
        self.n_edge(0) * self.n_edge(1)
    }

    /// Values of all closure functions at a reference point (x1, x2).
    pub fn eval(&self, x1: f64, x2: f64) -> Vec<f64> {
        let (v1, _) = lobatto_h1(self.orders[0], x1);
        let (v2, _) = lobatto_h1(self.orders[1], x2);
        let mut out = vec![0.0; self.dim()];
        for j in 0..2 {
            for i in 0..2 {
                out[self.corner(i, j)] = v1[i] * v2[j];
            }
        }
        for k in 2..=self.orders[0] {
            out[self.edge_offset(0) + k - 2] = v1[k] * v2[0];
            out[self.edge_offset(1) + k - 2] = v1[k] * v2[1];
        }
        for k in 2..=self.orders[1] {
            out[self.edge_offset(2) + k - 2] = v1[0] * v2[k];
            out[self.edge_offset(3) + k - 2] = v1[1] * v2[k];
        }
        let io = self.interior_offset();
        let n0 = self.n_edge(0);
        for j in 2..=self.orders[1] {
            for i in 2..=self.orders[0] {
                out[io + (i - 2) + n0 * (j - 2)] = v1[i] * v2[j];
            }
        }
        out
    }

    /// 2D Gram matrix of the closure basis on the unit square.
    pub fn gram(&self) -> DMatrix<f64> {
        let n1 = self.orders[0] + 2;
        let n2 = self.orders[1] + 2;
        let r1 = gauss_rule(n1);
        let r2 = gauss_rule(n2);
        let dim = self.dim();
        let mut g = DMatrix::zeros(dim, dim);
        for (qj, &x2) in r2.points.iter().enumerate() {
            for (qi, &x1) in r1.points.iter().enumerate() {
                let w = r1.weights[qi] * r2.weights[qj];
                let v = self.eval(x1, x2);
                for a in 0..dim {
                    for b in 0..dim {
                        g[(a, b)] += w * v[a] * v[b];
                    }
                }
            }
        }
        g
    }

    /// Expands a function (sampled by the callback at reference points of the
    /// unit square) exactly in the closure basis; exact for polynomials of
    /// the layout's order.
    pub fn fit(&self, f: &mut dyn FnMut(f64, f64) -> f64) -> DVector<f64> {
        let n1 = self.orders[0] + 2;
        let n2 = self.orders[1] + 2;
        let r1 = gauss_rule(n1);
        let r2 = gauss_rule(n2);
        let dim = self.dim();
        let mut rhs = DVector::zeros(dim);
        for (qj, &x2) in r2.points.iter().enumerate() {
            for (qi, &x1) in r1.points.iter().enumerate() {
                let w = r1.weights[qi] * r2.weights[qj];
                let fval = f(x1, x2);
                let v = self.eval(x1, x2);
                for a in 0..dim {
                    rhs[a] += w * fval * v[a];
                }
            }
        }
        self.gram()
            .cholesky()
            .expect("closure Gram must be SPD")
            .solve(&rhs)
    }
}

/// 1D closure layout for edges: [vertex lo, vertex hi, bubbles 2..=q].
#[derive(Clone, Copy, Debug)]
pub struct EdgeLayout {
    pub order: usize,
}

impl EdgeLayout {
    pub fn dim(&self) -> usize {
        self.order + 1
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let (v, _) = lobatto_h1(self.order, x);
        v
    }

    pub fn gram(&self) -> DMatrix<f64> {
        crate::basis::gram_1d(BasisKind::LobattoH1, self.order + 1)
    }

    pub fn fit(&self, f: &mut dyn FnMut(f64) -> f64) -> DVector<f64> {
        let r = gauss_rule(self.order + 2);
        let dim = self.dim();
        let mut rhs = DVector::zeros(dim);
        for (q, &x) in r.points.iter().enumerate() {
            let v = self.eval(x);
            for a in 0..dim {
                rhs[a] += r.weights[q] * f(x) * v[a];
            }
        }
        self.gram()
            .cholesky()
            .expect("edge Gram must be SPD")
            .solve(&rhs)
    }
}

/// Interpolation rows expressing each slave-face closure function's dof
/// values in terms of master-face closure dofs: the returned matrix R
/// satisfies (slave coeffs) = R * (master coeffs) and reproduces the master
/// polynomial restricted to the sub-face exactly. Orders are û trace degrees.
pub fn face_constraint_rows(master_order: [usize; 2], placement: Placement) -> DMatrix<f64> {
    let layout = ClosureLayout::new(master_order);
    let dim = layout.dim();
    // slave reference point -> master reference point
    let map = |p: Placement, x1: f64, x2: f64| -> (f64, f64) {
        match p {
            Placement::Full => (x1, x2),
            Placement::Half { dir: 0, which } => (0.5 * (x1 + which as f64), x2),
            Placement::Half { which, .. } => (x1, 0.5 * (x2 + which as f64)),
            Placement::Quadrant { i, j } => {
                (0.5 * (x1 + i as f64), 0.5 * (x2 + j as f64))
            }
        }
    };
    let mut rows = DMatrix::zeros(dim, dim);
    for m in 0..dim {
        let coeffs = layout.fit(&mut |x1, x2| {
            let (mx1, mx2) = map(placement, x1, x2);
            layout.eval(mx1, mx2)[m]
        });
        rows.set_column(m, &coeffs);
    }
    rows
}

/// 1D analogue: slave-edge closure coefficients from master-edge closure dofs.
pub fn edge_constraint_rows(master_order: usize, which_half: u8) -> DMatrix<f64> {
    let layout = EdgeLayout { order: master_order };
    let dim = layout.dim();
    let mut rows = DMatrix::zeros(dim, dim);
    for m in 0..dim {
        let coeffs = layout.fit(&mut |x| {
            let mx = 0.5 * (x + which_half as f64);
            layout.eval(mx)[m]
        });
        rows.set_column(m, &coeffs);
    }
    rows
}
