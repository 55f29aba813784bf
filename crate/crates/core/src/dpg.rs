//! Element-local ultraweak DPG assembly: Gram matrix under the adjoint graph
//! norm, stiffness blocks for field and trace variables, load vector, local
//! condensation to optimal-test-function stiffness, and the residual error
//! indicator.
//!
//! The first-order system is sigma - eps*grad(u) = 0, beta.grad(u) - div(sigma) = f,
//! whose formal adjoint is A*(v,tau) = (eps*div(tau) - beta.grad(v), grad(v) + tau).
//! Poisson is the special case eps = 1, beta = 0. On axis-aligned boxes every
//! volume term factors into Kronecker products of 1D integrals, so operator
//! blocks are integrated exactly; only the load and boundary data use
//! boosted quadrature.

use crate::basis::{gauss_rule, orthonormal_legendre, BasisKind, BasisTable};
use crate::spaces::{ClosureLayout, ElemTrace, ElementSpace};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DpgError {
    #[error("Gram matrix is not SPD (alpha <= 0 or assembly bug)")]
    GramNotSpd,
    #[error("coefficient dimensions do not match the element system")]
    DimensionMismatch,
}

/// PDE coefficients entering the ultraweak form and the test norm.
#[derive(Clone, Copy, Debug)]
pub struct ProblemCoeffs {
    /// Diffusion parameter (sigma = eps * grad u).
    pub epsilon: f64,
    /// Constant convection vector.
    pub beta: [f64; 3],
    /// Graph-norm scaling, > 0.
    pub alpha: f64,
}

impl ProblemCoeffs {
    pub fn poisson() -> ProblemCoeffs {
        ProblemCoeffs { epsilon: 1.0, beta: [0.0; 3], alpha: 1.0 }
    }
}

/// Element matrices of the ultraweak DPG formulation.
#[derive(Clone, Debug)]
pub struct ElementSystem {
    /// Test-space Gram matrix of the adjoint graph norm.
    pub gram: DMatrix<f64>,
    /// test x field-dof stiffness (4 * px*py*pz columns: u, sx, sy, sz).
    pub b: DMatrix<f64>,
    /// test x trace-dof stiffness over the merged free trace dofs.
    pub bhat: DMatrix<f64>,
    /// Load vector including eliminated-boundary-data corrections.
    pub load: DVector<f64>,
    /// Global ids of the trace columns (sorted).
    pub trace_dofs: Vec<usize>,
    pub coeffs: ProblemCoeffs,
}

/// Statically condensed element: stiffness over (field + trace) dofs.
#[derive(Clone, Debug)]
pub struct CondensedElement {
    pub stiffness: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// l^T G^-1 l, used for the post-solve residual identity.
    pub load_energy: f64,
    pub n_field: usize,
    pub trace_dofs: Vec<usize>,
}

fn mat_1d(av: &[Vec<f64>], bv: &[Vec<f64>], w: &[f64], scale: f64) -> DMatrix<f64> {
    let (na, nb) = (av.len(), bv.len());
    let mut m = DMatrix::zeros(na, nb);
    for a in 0..na {
        for b in 0..nb {
            let mut s = 0.0;
            for q in 0..w.len() {
                s += w[q] * av[a][q] * bv[b][q];
            }
            m[(a, b)] = scale * s;
        }
    }
    m
}

/// dst[(abc),(a'b'c')] += scale * X[a,a'] * Y[b,b'] * Z[c,c'], x fastest.
fn kron3_add(
    dst: &mut DMatrix<f64>,
    row_off: usize,
    col_off: usize,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    scale: f64,
) {
    if scale == 0.0 {
        return;
    }
    let (nxr, nxc) = x.shape();
    let (nyr, nyc) = y.shape();
    let (nzr, nzc) = z.shape();
    for c in 0..nzr {
        for cc in 0..nzc {
            let vz = scale * z[(c, cc)];
            if vz == 0.0 {
                continue;
            }
            for b in 0..nyr {
                for bb in 0..nyc {
                    let vyz = vz * y[(b, bb)];
                    if vyz == 0.0 {
                        continue;
                    }
                    for a in 0..nxr {
                        let row = row_off + a + nxr * (b + nyr * c);
                        for aa in 0..nxc {
                            dst[(row, col_off + aa + nxc * (bb + nyc * cc))] +=
                                vyz * x[(a, aa)];
                        }
                    }
                }
            }
        }
    }
}

struct Tables {
    /// test-test mass per direction (physical: h_d * reference Gram).
    tt_mass: [DMatrix<f64>; 3],
    /// test-test (d/dx, d/dx) per direction.
    tt_stiff: [DMatrix<f64>; 3],
    /// tt_dmix[d][a,b] = int (dT_a/dx) T_b dx (h-free).
    tt_dmix: [DMatrix<f64>; 3],
    tt_dmix_t: [DMatrix<f64>; 3],
    /// trial-test mass per direction (physical).
    ut_mass: [DMatrix<f64>; 3],
    /// ut_dmix[d][a,b] = int U_a (dT_b/dx) dx (h-free).
    ut_dmix: [DMatrix<f64>; 3],
}

fn tables(space: &ElementSpace) -> Tables {
    let mut tt_mass: [DMatrix<f64>; 3] = Default::default();
    let mut tt_stiff: [DMatrix<f64>; 3] = Default::default();
    let mut tt_dmix: [DMatrix<f64>; 3] = Default::default();
    let mut tt_dmix_t: [DMatrix<f64>; 3] = Default::default();
    let mut ut_mass: [DMatrix<f64>; 3] = Default::default();
    let mut ut_dmix: [DMatrix<f64>; 3] = Default::default();
    for d in 0..3 {
        let h = space.bbox.extent(d);
        let w = &space.quad.weights[d];
        let tv = &space.test[d].values;
        let td = &space.test[d].derivs;
        let uv = &space.trial[d].values;
        tt_mass[d] = mat_1d(tv, tv, w, h);
        tt_stiff[d] = mat_1d(td, td, w, 1.0 / h);
        tt_dmix[d] = mat_1d(td, tv, w, 1.0);
        tt_dmix_t[d] = tt_dmix[d].transpose();
        ut_mass[d] = mat_1d(uv, tv, w, h);
        ut_dmix[d] = mat_1d(uv, td, w, 1.0);
    }
    Tables { tt_mass, tt_stiff, tt_dmix, tt_dmix_t, ut_mass, ut_dmix }
}

/// Assembles G, B, B̂, l for one element.
pub fn assemble_element(
    space: &ElementSpace,
    trace: &ElemTrace,
    coeffs: ProblemCoeffs,
    source: &dyn Fn([f64; 3]) -> f64,
    data_boost: usize,
) -> ElementSystem {
    let t = tables(space);
    let m = space.test_scalar_dim();
    let n_test = 4 * m;
    let np = space.trial_scalar_dim();
    let eps = coeffs.epsilon;
    let beta = coeffs.beta;
    let alpha = coeffs.alpha;
    let counts = space.test_counts();

    // per-direction factors of a (d_r ., d_c .) pairing
    let gp = |dr: usize, dc: usize| -> [&DMatrix<f64>; 3] {
        let mut out: [&DMatrix<f64>; 3] = [&t.tt_mass[0], &t.tt_mass[1], &t.tt_mass[2]];
        if dr == dc {
            out[dr] = &t.tt_stiff[dr];
        } else {
            out[dr] = &t.tt_dmix[dr];
            out[dc] = &t.tt_dmix_t[dc];
        }
        out
    };
    let mass3: [&DMatrix<f64>; 3] = [&t.tt_mass[0], &t.tt_mass[1], &t.tt_mass[2]];

    // --- Gram ---------------------------------------------------------------
    let mut g = DMatrix::zeros(n_test, n_test);
    // (v, v'): (beta.grad v, beta.grad v') + (grad v, grad v') + alpha (v, v')
    for dr in 0..3 {
        for dc in 0..3 {
            let s = beta[dr] * beta[dc];
            if s != 0.0 {
                let f = gp(dr, dc);
                kron3_add(&mut g, 0, 0, f[0], f[1], f[2], s);
            }
        }
    }
    for d in 0..3 {
        let f = gp(d, d);
        kron3_add(&mut g, 0, 0, f[0], f[1], f[2], 1.0);
    }
    kron3_add(&mut g, 0, 0, mass3[0], mass3[1], mass3[2], alpha);
    // (v, tau_j): -eps (beta.grad v, d_j tau_j) + (d_j v, tau_j); mirrored
    for j in 0..3 {
        let mut block = DMatrix::zeros(m, m);
        for d in 0..3 {
            if eps * beta[d] != 0.0 {
                let f = gp(d, j);
                kron3_add(&mut block, 0, 0, f[0], f[1], f[2], -eps * beta[d]);
            }
        }
        let mut fk: [&DMatrix<f64>; 3] = mass3;
        fk[j] = &t.tt_dmix[j];
        kron3_add(&mut block, 0, 0, fk[0], fk[1], fk[2], 1.0);
        let col = (1 + j) * m;
        for r in 0..m {
            for c in 0..m {
                g[(r, col + c)] += block[(r, c)];
                g[(col + c, r)] += block[(r, c)];
            }
        }
    }
    // (tau_i, tau_j): eps^2 (d_i tau_i, d_j tau_j) + delta_ij (1 + alpha) mass
    for i in 0..3 {
        for j in 0..3 {
            let (ro, co) = ((1 + i) * m, (1 + j) * m);
            let f = gp(i, j);
            kron3_add(&mut g, ro, co, f[0], f[1], f[2], eps * eps);
            if i == j {
                kron3_add(&mut g, ro, co, mass3[0], mass3[1], mass3[2], 1.0 + alpha);
            }
        }
    }

    // --- B (trial Piola scaling 1/jac applied per term) ---------------------
    let mut b = DMatrix::zeros(n_test, 4 * np);
    let inv_jac = 1.0 / space.jac;
    // u columns: rows tau_j get eps (U, d_j tau_j); rows v get -(U, beta.grad v)
    for j in 0..3 {
        let fk: [&DMatrix<f64>; 3] = [
            if j == 0 { &t.ut_dmix[0] } else { &t.ut_mass[0] },
            if j == 1 { &t.ut_dmix[1] } else { &t.ut_mass[1] },
            if j == 2 { &t.ut_dmix[2] } else { &t.ut_mass[2] },
        ];
        let mut tr = DMatrix::zeros(np, m);
        kron3_add(&mut tr, 0, 0, fk[0], fk[1], fk[2], inv_jac);
        for r in 0..m {
            for cu in 0..np {
                let val = tr[(cu, r)];
                if val != 0.0 {
                    b[((1 + j) * m + r, cu)] += eps * val;
                    if beta[j] != 0.0 {
                        b[(r, cu)] -= beta[j] * val;
                    }
                }
            }
        }
    }
    // sigma_i columns: rows tau_i get (S_i, tau_i); rows v get (S_i, d_i v)
    let mut mass_tr = DMatrix::zeros(np, m);
    kron3_add(&mut mass_tr, 0, 0, &t.ut_mass[0], &t.ut_mass[1], &t.ut_mass[2], inv_jac);
    for i in 0..3 {
        let co = (1 + i) * np;
        let fk: [&DMatrix<f64>; 3] = [
            if i == 0 { &t.ut_dmix[0] } else { &t.ut_mass[0] },
            if i == 1 { &t.ut_dmix[1] } else { &t.ut_mass[1] },
            if i == 2 { &t.ut_dmix[2] } else { &t.ut_mass[2] },
        ];
        let mut dmix_tr = DMatrix::zeros(np, m);
        kron3_add(&mut dmix_tr, 0, 0, fk[0], fk[1], fk[2], inv_jac);
        for r in 0..m {
            for cu in 0..np {
                let mv = mass_tr[(cu, r)];
                if mv != 0.0 {
                    b[((1 + i) * m + r, co + cu)] += mv;
                }
                let dv = dmix_tr[(cu, r)];
                if dv != 0.0 {
                    b[(r, co + cu)] += dv;
                }
            }
        }
    }

    // --- load (f, v), boosted rule -------------------------------------------
    let mut load = DVector::zeros(n_test);
    {
        let nq = [
            space.quad.n[0] + data_boost,
            space.quad.n[1] + data_boost,
            space.quad.n[2] + data_boost,
        ];
        let rules = [gauss_rule(nq[0]), gauss_rule(nq[1]), gauss_rule(nq[2])];
        let tabs: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|d| {
                BasisTable::tabulate(BasisKind::LegendreL2, counts[d], &rules[d].points).values
            })
            .collect();
        for qz in 0..nq[2] {
            for qy in 0..nq[1] {
                for qx in 0..nq[0] {
                    let w = space.jac
                        * rules[0].weights[qx]
                        * rules[1].weights[qy]
                        * rules[2].weights[qz];
                    let x = space.bbox.map_from_ref([
                        rules[0].points[qx],
                        rules[1].points[qy],
                        rules[2].points[qz],
                    ]);
                    let fv = source(x);
                    if fv == 0.0 {
                        continue;
                    }
                    for c in 0..counts[2] {
                        for bq in 0..counts[1] {
                            let vyz = w * fv * tabs[1][bq][qy] * tabs[2][c][qz];
                            if vyz == 0.0 {
                                continue;
                            }
                            for a in 0..counts[0] {
                                load[a + counts[0] * (bq + counts[1] * c)] +=
                                    vyz * tabs[0][a][qx];
                            }
                        }
                    }
                }
            }
        }
    }

    // --- B̂ and data corrections ----------------------------------------------
    let mut trace_dofs: Vec<usize> = vec![];
    for side in &trace.sides {
        for &d in &side.closure.free_refs {
            trace_dofs.push(d);
        }
        for &d in &side.flux.free_refs {
            trace_dofs.push(d);
        }
    }
    trace_dofs.sort_unstable();
    trace_dofs.dedup();
    let mut bhat = DMatrix::zeros(n_test, trace_dofs.len());

    // endpoint values of the 1D test families
    let test_end: Vec<[Vec<f64>; 2]> = (0..3)
        .map(|d| {
            let (v0, _) = orthonormal_legendre(counts[d], 0.0);
            let (v1, _) = orthonormal_legendre(counts[d], 1.0);
            [v0, v1]
        })
        .collect();

    for (side_idx, side) in trace.sides.iter().enumerate() {
        let axis = side_idx / 2;
        let upper = side_idx % 2 == 1;
        let sgn_out = if upper { 1.0 } else { -1.0 };
        let [ta1, ta2] = crate::geom::Axis::from_idx(axis).tangents();
        let (t1, t2) = (ta1.idx(), ta2.idx());
        let (n1, n2) = (space.quad.n[t1], space.quad.n[t2]);
        let ds = space.bbox.extent(t1) * space.bbox.extent(t2);
        let mt = counts[t1] * counts[t2]; // tangential test pairs

        // tangential test pairing with the û closure basis:
        // q2d[(b1,b2), li] = int_side tang1_b1 tang2_b2 mu_li
        let layout = ClosureLayout::new(side.closure.orders);
        let ldim = layout.dim();
        let mut q2d = DMatrix::zeros(mt, ldim);
        // and with the flux basis
        let f_orders = side.flux.orders;
        let f_dim = f_orders[0] * f_orders[1];
        let mut q2f = DMatrix::zeros(mt, f_dim);
        {
            let crect = &side.flux.rect;
            let area = crect.extent(0) * crect.extent(1);
            let fscale = 1.0 / area.sqrt();
            for q2 in 0..n2 {
                for q1 in 0..n1 {
                    let w = ds * space.quad.weights[t1][q1] * space.quad.weights[t2][q2];
                    let mu = layout.eval(space.quad.points[t1][q1], space.quad.points[t2][q2]);
                    // flux basis in carrying-face coordinates
                    let p1 = space.bbox.lo[t1] + space.quad.points[t1][q1] * space.bbox.extent(t1);
                    let p2 = space.bbox.lo[t2] + space.quad.points[t2][q2] * space.bbox.extent(t2);
                    let x1 = (p1 - crect.lo[0]) / crect.extent(0);
                    let x2 = (p2 - crect.lo[1]) / crect.extent(1);
                    let (fv1, _) = orthonormal_legendre(f_orders[0], x1);
                    let (fv2, _) = orthonormal_legendre(f_orders[1], x2);
                    for b2 in 0..counts[t2] {
                        for b1 in 0..counts[t1] {
                            let tw = w * space.test[t1].values[b1][q1] * space.test[t2].values[b2][q2];
                            if tw == 0.0 {
                                continue;
                            }
                            let row = b1 + counts[t1] * b2;
                            for (li, mv) in mu.iter().enumerate() {
                                q2d[(row, li)] += tw * mv;
                            }
                            for j in 0..f_orders[1] {
                                for i in 0..f_orders[0] {
                                    q2f[(row, i + f_orders[0] * j)] +=
                                        tw * fv1[i] * fv2[j] * fscale;
                                }
                            }
                        }
                    }
                }
            }
        }
        // fold the û closure through L and the fixed part
        let pu = &q2d * &side.closure.l_matrix; // mt x n_refs
        let pu_fixed = &q2d * &side.closure.fixed; // mt
        let pf_fixed = &q2f * &side.flux.fixed; // mt

        // scatter helper: tangential row -> full test row for a given
        // normal-direction test index with endpoint value
        let beta_n = beta[axis] * sgn_out;
        let end = &test_end[axis][if upper { 1 } else { 0 }];
        let scatter = |field: usize, tang_row: usize, weight: f64, col: Option<usize>, loadv: &mut DVector<f64>, bh: &mut DMatrix<f64>| {
            if weight == 0.0 {
                return;
            }
            // tang_row = b1 + counts[t1]*b2; full scalar index over (x,y,z)
            let b1 = tang_row % counts[t1];
            let b2 = tang_row / counts[t1];
            for a in 0..counts[axis] {
                let ev = end[a] * weight;
                if ev == 0.0 {
                    continue;
                }
                let mut idx3 = [0usize; 3];
                idx3[axis] = a;
                idx3[t1] = b1;
                idx3[t2] = b2;
                let scalar = idx3[0] + counts[0] * (idx3[1] + counts[1] * idx3[2]);
                match col {
                    Some(c) => bh[(field * m + scalar, c)] += ev,
                    None => loadv[field * m + scalar] -= ev,
                }
            }
        };

        // û columns: rows v get +beta_n * pairing; rows tau_axis get -eps*sgn_out * pairing
        for (jref, &gdof) in side.closure.free_refs.iter().enumerate() {
            let col = trace_dofs.binary_search(&gdof).unwrap();
            for row in 0..mt {
                let p = pu[(row, jref)];
                if p == 0.0 {
                    continue;
                }
                scatter(0, row, beta_n * p, Some(col), &mut load, &mut bhat);
                scatter(1 + axis, row, -eps * sgn_out * p, Some(col), &mut load, &mut bhat);
            }
        }
        for row in 0..mt {
            let p = pu_fixed[row];
            if p != 0.0 {
                scatter(0, row, beta_n * p, None, &mut load, &mut bhat);
                scatter(1 + axis, row, -eps * sgn_out * p, None, &mut load, &mut bhat);
            }
        }
        // σ̂n columns: rows v get -(element sign) * pairing
        for (fi, &gdof) in side.flux.free_refs.iter().enumerate() {
            let col = trace_dofs.binary_search(&gdof).unwrap();
            for row in 0..mt {
                let p = q2f[(row, fi)];
                if p != 0.0 {
                    scatter(0, row, -side.flux.sign * p, Some(col), &mut load, &mut bhat);
                }
            }
        }
        for row in 0..mt {
            let p = pf_fixed[row];
            if p != 0.0 {
                scatter(0, row, -side.flux.sign * p, None, &mut load, &mut bhat);
            }
        }
    }

    ElementSystem { gram: g, b, bhat, load, trace_dofs, coeffs }
}

/// Cholesky-based condensation: stiffness = [B|B̂]^T G^-1 [B|B̂] via one
/// symmetric factorization; no explicit inverse is formed.
pub fn condense(sys: &ElementSystem) -> Result<CondensedElement, DpgError> {
    let chol = Cholesky::new(sys.gram.clone()).ok_or(DpgError::GramNotSpd)?;
    let n_field = sys.b.ncols();
    let n_trace = sys.bhat.ncols();
    let n = n_field + n_trace;
    let n_test = sys.gram.nrows();
    let mut stacked = DMatrix::zeros(n_test, n + 1);
    stacked.view_mut((0, 0), (n_test, n_field)).copy_from(&sys.b);
    stacked.view_mut((0, n_field), (n_test, n_trace)).copy_from(&sys.bhat);
    stacked.view_mut((0, n), (n_test, 1)).copy_from(&sys.load);
    let y = chol
        .l()
        .solve_lower_triangular(&stacked)
        .ok_or(DpgError::GramNotSpd)?;
    let yb = y.view((0, 0), (n_test, n));
    let yl = y.view((0, n), (n_test, 1));
    let stiffness = yb.transpose() * yb;
    let rhs_full = yb.transpose() * yl;
    let load_energy = (yl.transpose() * yl)[(0, 0)];
    Ok(CondensedElement {
        stiffness,
        rhs: DVector::from_column_slice(rhs_full.as_slice()),
        load_energy,
        n_field,
        trace_dofs: sys.trace_dofs.clone(),
    })
}

/// DPG residual indicator eta_K = r^T G^-1 r with r = l - B u - B̂ û
/// (the squared V-norm of the Riesz representer of the residual).
pub fn element_residual(
    sys: &ElementSystem,
    field_coeffs: &DVector<f64>,
    trace_coeffs: &DVector<f64>,
) -> Result<f64, DpgError> {
    if field_coeffs.len() != sys.b.ncols() || trace_coeffs.len() != sys.bhat.ncols() {
        return Err(DpgError::DimensionMismatch);
    }
    let r = &sys.load - &sys.b * field_coeffs - &sys.bhat * trace_coeffs;
    let chol = Cholesky::new(sys.gram.clone()).ok_or(DpgError::GramNotSpd)?;
    let z = chol.solve(&r);
    Ok(r.dot(&z).max(0.0))
}

/// Residual via condensed quantities: eta = l^T G^-1 l - 2 x.rhs + x.A x
/// with x the stacked (field, trace) coefficient vector; algebraically equal
/// to `element_residual` and reuses the per-solve factorization.
pub fn residual_from_condensed(ce: &CondensedElement, x: &DVector<f64>) -> f64 {
    let ax = &ce.stiffness * x;
    (ce.load_energy - 2.0 * ce.rhs.dot(x) + x.dot(&ax)).max(0.0)
}

pub type GramCholesky = Cholesky<f64, Dyn>;

#[cfg(test)]
mod tests;
