use super::*;
use crate::basis::gauss_rule;
use crate::geom::Box3;
use crate::spaces::{ElemTrace, ElementSpace};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn empty_trace() -> ElemTrace {
    ElemTrace { sides: vec![] }
}

/// Independent dense-quadrature oracle for the Gram matrix: evaluates
/// (A* w_l, A* w_j) + alpha (w_l, w_j) pointwise on a boosted tensor rule.
fn oracle_gram(space: &ElementSpace, coeffs: ProblemCoeffs) -> DMatrix<f64> {
    let counts = space.test_counts();
    let m: usize = counts.iter().product();
    let n = 4 * m;
    let nq = [counts[0] + 2, counts[1] + 2, counts[2] + 2];
    let rules = [gauss_rule(nq[0]), gauss_rule(nq[1]), gauss_rule(nq[2])];
    let h = space.bbox.extents();
    let mut g = DMatrix::zeros(n, n);

    // evaluate all test fields at one reference point
    let eval_all = |xi: [f64; 3]| -> Vec<(f64, [f64; 3])> {
        // scalar value and physical gradient of each tensor function
        let mut vals1 = vec![];
        let mut ders1 = vec![];
        for d in 0..3 {
            let (v, dv) = crate::basis::orthonormal_legendre(counts[d], xi[d]);
            vals1.push(v);
            ders1.push(dv);
        }
        let mut out = Vec::with_capacity(m);
        for c in 0..counts[2] {
            for b in 0..counts[1] {
                for a in 0..counts[0] {
                    let v = vals1[0][a] * vals1[1][b] * vals1[2][c];
                    let gx = ders1[0][a] / h[0] * vals1[1][b] * vals1[2][c];
                    let gy = vals1[0][a] * ders1[1][b] / h[1] * vals1[2][c];
                    let gz = vals1[0][a] * vals1[1][b] * ders1[2][c] / h[2];
                    out.push((v, [gx, gy, gz]));
                }
            }
        }
        out
    };

    for qz in 0..nq[2] {
        for qy in 0..nq[1] {
            for qx in 0..nq[0] {
                let w = space.jac
                    * rules[0].weights[qx]
                    * rules[1].weights[qy]
                    * rules[2].weights[qz];
                let scalars =
                    eval_all([rules[0].points[qx], rules[1].points[qy], rules[2].points[qz]]);
                // field l: (v, tau); A* = (eps div tau - beta.grad v, grad v + tau)
                let astar = |field: usize, s: &(f64, [f64; 3])| -> (f64, [f64; 3], f64, [f64; 3]) {
                    // returns (v, tau, A*_scalar, A*_vec)
                    let (val, grad) = *s;
                    match field {
                        0 => {
                            let bg: f64 = (0..3).map(|d| coeffs.beta[d] * grad[d]).sum();
                            (val, [0.0; 3], -bg, grad)
                        }
                        i => {
                            let comp = i - 1;
                            let mut tau = [0.0; 3];
                            tau[comp] = val;
                            let mut vecpart = [0.0; 3];
                            vecpart[comp] = val;
                            (0.0, tau, coeffs.epsilon * grad[comp], vecpart)
                        }
                    }
                };
                for fl in 0..4 {
                    for sl in 0..m {
                        let (vl, taul, al_s, al_v) = astar(fl, &scalars[sl]);
                        let row = fl * m + sl;
                        for fj in 0..4 {
                            for sj in 0..m {
                                let (vj, tauj, aj_s, aj_v) = astar(fj, &scalars[sj]);
                                let col = fj * m + sj;
                                let mut val = al_s * aj_s;
                                for d in 0..3 {
                                    val += al_v[d] * aj_v[d];
                                    val += coeffs.alpha * taul[d] * tauj[d];
                                }
                                val += coeffs.alpha * vl * vj;
                                g[(row, col)] += w * val;
                            }
                        }
                    }
                }
            }
        }
    }
    g
}

/// Independent dense-quadrature oracle for B.
fn oracle_b(space: &ElementSpace, coeffs: ProblemCoeffs) -> DMatrix<f64> {
    let counts = space.test_counts();
    let m: usize = counts.iter().product();
    let np = space.trial_scalar_dim();
    let nq = [counts[0] + 2, counts[1] + 2, counts[2] + 2];
    let rules = [gauss_rule(nq[0]), gauss_rule(nq[1]), gauss_rule(nq[2])];
    let h = space.bbox.extents();
    let mut bm = DMatrix::zeros(4 * m, 4 * np);
    for qz in 0..nq[2] {
        for qy in 0..nq[1] {
            for qx in 0..nq[0] {
                let w = space.jac
                    * rules[0].weights[qx]
                    * rules[1].weights[qy]
                    * rules[2].weights[qz];
                let xi = [rules[0].points[qx], rules[1].points[qy], rules[2].points[qz]];
                let mut tvals = vec![];
                let mut tders = vec![];
                let mut uvals = vec![];
                for d in 0..3 {
                    let (v, dv) = crate::basis::orthonormal_legendre(counts[d], xi[d]);
                    tvals.push(v);
                    tders.push(dv);
                    let (uv, _) = crate::basis::orthonormal_legendre(space.orders[d], xi[d]);
                    uvals.push(uv);
                }
                for c in 0..counts[2] {
                    for b in 0..counts[1] {
                        for a in 0..counts[0] {
                            let srow = a + counts[0] * (b + counts[1] * c);
                            let tv = tvals[0][a] * tvals[1][b] * tvals[2][c];
                            let tg = [
                                tders[0][a] / h[0] * tvals[1][b] * tvals[2][c],
                                tvals[0][a] * tders[1][b] / h[1] * tvals[2][c],
                                tvals[0][a] * tvals[1][b] * tders[2][c] / h[2],
                            ];
                            for cc in 0..space.orders[2] {
                                for bb in 0..space.orders[1] {
                                    for aa in 0..space.orders[0] {
                                        let ucol = space.trial_flat(aa, bb, cc);
                                        let uv = uvals[0][aa] * uvals[1][bb] * uvals[2][cc]
                                            / space.jac;
                                        // u column: eps (u, d_j tau_j) rows tau_j;
                                        // -(u, beta.grad v) rows v
                                        for j in 0..3 {
                                            bm[((1 + j) * m + srow, ucol)] +=
                                                w * coeffs.epsilon * uv * tg[j];
                                        }
                                        let bg: f64 =
                                            (0..3).map(|d| coeffs.beta[d] * tg[d]).sum();
                                        bm[(srow, ucol)] -= w * uv * bg;
                                        // sigma_i columns
                                        for i in 0..3 {
                                            let scol = (1 + i) * np + ucol;
                                            bm[((1 + i) * m + srow, scol)] += w * uv * tv;
                                            bm[(srow, scol)] += w * uv * tg[i];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    bm
}

#[test]
fn gram_matches_dense_oracle_poisson() {
    // order-(1,1,1) trial, dp = 1 on the unit cube, alpha = 1
    let sp = ElementSpace::new(Box3::unit(), [1, 1, 1], 1).unwrap();
    let coeffs = ProblemCoeffs::poisson();
    let sys = assemble_element(&sp, &empty_trace(), coeffs, &|_| 0.0, 2);
    let want = oracle_gram(&sp, coeffs);
    let scale = want.amax();
    assert_eq!(sys.gram.shape(), want.shape());
    let diff = (&sys.gram - &want).amax();
    assert!(diff < 1e-12 * scale, "diff {diff} scale {scale}");
}

#[test]
fn gram_and_b_match_oracle_general_coeffs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..4 {
        let lo = [rng.gen_range(-1.0..0.0), 0.0, rng.gen_range(-0.5..0.5)];
        let hi = [
            lo[0] + rng.gen_range(0.3..1.5),
            1.0 + rng.gen_range(0.0..1.0),
            lo[2] + rng.gen_range(0.25..0.75),
        ];
        let orders = [rng.gen_range(1..4), rng.gen_range(1..3), rng.gen_range(1..3)];
        let sp = ElementSpace::new(Box3::new(lo, hi), orders, 1).unwrap();
        let coeffs = ProblemCoeffs { epsilon: 0.3, beta: [1.0, 0.0, 0.0], alpha: 1.0 };
        let sys = assemble_element(&sp, &empty_trace(), coeffs, &|_| 0.0, 2);
        let gw = oracle_gram(&sp, coeffs);
        let bw = oracle_b(&sp, coeffs);
        assert!((&sys.gram - &gw).amax() < 1e-12 * gw.amax());
        assert!((&sys.b - &bw).amax() < 1e-12 * bw.amax().max(1.0));
    }
}

#[test]
fn gram_symmetry_random_elements() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let lo = [0.0, rng.gen_range(-2.0..0.0), 0.25];
        let hi = [
            rng.gen_range(0.1..2.0),
            lo[1] + rng.gen_range(0.1..1.0),
            0.25 + rng.gen_range(0.1..0.9),
        ];
        let orders = [rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..4)];
        let sp = ElementSpace::new(Box3::new(lo, hi), orders, 1).unwrap();
        let coeffs = ProblemCoeffs { epsilon: 1.0, beta: [0.7, 0.0, 0.0], alpha: 1.0 };
        let sys = assemble_element(&sp, &empty_trace(), coeffs, &|_| 0.0, 1);
        let asym = (&sys.gram - sys.gram.transpose()).amax();
        assert!(asym < 1e-13 * sys.gram.amax(), "asym {asym}");
    }
}

#[test]
fn zero_source_gives_zero_load() {
    let sp = ElementSpace::new(Box3::unit(), [2, 2, 2], 1).unwrap();
    let sys = assemble_element(&sp, &empty_trace(), ProblemCoeffs::poisson(), &|_| 0.0, 3);
    assert_eq!(sys.load.amax(), 0.0);
}

#[test]
fn condense_zero_b_gives_zero() {
    let sp = ElementSpace::new(Box3::unit(), [1, 1, 1], 1).unwrap();
    let mut sys = assemble_element(&sp, &empty_trace(), ProblemCoeffs::poisson(), &|_| 0.0, 1);
    sys.b.fill(0.0);
    let ce = condense(&sys).unwrap();
    assert!(ce.stiffness.amax() == 0.0);
    assert!(ce.rhs.amax() == 0.0);
}

#[test]
fn condense_scalar_case() {
    // 1x1 G = [4], B = [2] -> stiffness [1]
    let sys = ElementSystem {
        gram: DMatrix::from_element(1, 1, 4.0),
        b: DMatrix::from_element(1, 1, 2.0),
        bhat: DMatrix::zeros(1, 0),
        load: DVector::zeros(1),
        trace_dofs: vec![],
        coeffs: ProblemCoeffs::poisson(),
    };
    let ce = condense(&sys).unwrap();
    assert!((ce.stiffness[(0, 0)] - 1.0).abs() < 1e-15);
}

#[test]
fn condense_matches_dense_solve_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..6 {
        let n = rng.gen_range(5..25);
        let k = rng.gen_range(1..10);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let gram = &a * a.transpose() + DMatrix::identity(n, n) * (n as f64);
        let b = DMatrix::from_fn(n, k, |_, _| rng.gen_range(-1.0..1.0));
        let load = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let sys = ElementSystem {
            gram: gram.clone(),
            b: b.clone(),
            bhat: DMatrix::zeros(n, 0),
            load: load.clone(),
            trace_dofs: vec![],
            coeffs: ProblemCoeffs::poisson(),
        };
        let ce = condense(&sys).unwrap();
        // oracle: dense LU solve
        let ginv_b = gram.clone().lu().solve(&b).unwrap();
        let want = b.transpose() * &ginv_b;
        let diff = (&ce.stiffness - &want).amax() / want.amax();
        assert!(diff < 1e-11, "rel diff {diff}");
        let ginv_l = gram.clone().lu().solve(&load).unwrap();
        let want_rhs = b.transpose() * &ginv_l;
        assert!((&ce.rhs - &want_rhs).amax() < 1e-11 * want_rhs.amax().max(1.0));
    }
}

#[test]
fn residual_matches_dense_solve_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..6 {
        let n = rng.gen_range(4..20);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let gram = &a * a.transpose() + DMatrix::identity(n, n) * (n as f64);
        let r = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let sys = ElementSystem {
            gram: gram.clone(),
            b: DMatrix::zeros(n, 0),
            bhat: DMatrix::zeros(n, 0),
            load: r.clone(),
            trace_dofs: vec![],
            coeffs: ProblemCoeffs::poisson(),
        };
        let eta = element_residual(&sys, &DVector::zeros(0), &DVector::zeros(0)).unwrap();
        let want = r.dot(&gram.clone().lu().solve(&r).unwrap());
        assert!((eta - want).abs() < 1e-12 * want.abs().max(1.0));
    }
}

#[test]
fn residual_zero_for_zero_r() {
    let sp = ElementSpace::new(Box3::unit(), [2, 2, 2], 1).unwrap();
    let sys = assemble_element(&sp, &empty_trace(), ProblemCoeffs::poisson(), &|_| 0.0, 1);
    let eta = element_residual(
        &sys,
        &DVector::zeros(sys.b.ncols()),
        &DVector::zeros(0),
    )
    .unwrap();
    assert_eq!(eta, 0.0);
}

#[test]
fn residual_identity_matches_direct() {
    // eta from condensed quantities equals the direct r^T G^-1 r
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let sp = ElementSpace::new(Box3::new([0.0; 3], [1.0, 0.5, 2.0]), [2, 1, 2], 1).unwrap();
    let sys = assemble_element(
        &sp,
        &empty_trace(),
        ProblemCoeffs::poisson(),
        &|x| x[0] + x[1] * x[2],
        2,
    );
    let ce = condense(&sys).unwrap();
    let x = DVector::from_fn(sys.b.ncols(), |_, _| rng.gen_range(-1.0..1.0));
    let direct = element_residual(&sys, &x, &DVector::zeros(0)).unwrap();
    let via_cond = residual_from_condensed(&ce, &x);
    assert!(
        (direct - via_cond).abs() < 1e-10 * direct.max(1.0),
        "{direct} vs {via_cond}"
    );
}

#[test]
fn residual_minimizer_property() {
    // the solution of the local normal equations minimizes eta over coefficients
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let sp = ElementSpace::new(Box3::unit(), [2, 2, 1], 1).unwrap();
    let sys = assemble_element(
        &sp,
        &empty_trace(),
        ProblemCoeffs::poisson(),
        &|x| (x[0] * 2.0 - x[1]).cos(),
        3,
    );
    let ce = condense(&sys).unwrap();
    let xstar = ce
        .stiffness
        .clone()
        .cholesky()
        .expect("local normal equations SPD")
        .solve(&ce.rhs);
    let eta_star = element_residual(&sys, &xstar, &DVector::zeros(0)).unwrap();
    for _ in 0..20 {
        let pert = DVector::from_fn(xstar.len(), |_, _| rng.gen_range(-0.1..0.1));
        let eta_pert = element_residual(&sys, &(&xstar + pert), &DVector::zeros(0)).unwrap();
        assert!(eta_pert >= eta_star - 1e-12);
    }
}

#[test]
fn scaling_linearity_of_solution_and_residual() {
    // scaling f by c scales coefficients by c and eta by c^2
    let sp = ElementSpace::new(Box3::unit(), [2, 2, 2], 1).unwrap();
    let f1 = |x: [f64; 3]| x[0] * x[1] + 1.0;
    let c = 3.5;
    let sys1 = assemble_element(&sp, &empty_trace(), ProblemCoeffs::poisson(), &f1, 2);
    let sys2 = assemble_element(&sp, &empty_trace(), ProblemCoeffs::poisson(), &|x| c * f1(x), 2);
    let ce1 = condense(&sys1).unwrap();
    let ce2 = condense(&sys2).unwrap();
    let x1 = ce1.stiffness.clone().cholesky().unwrap().solve(&ce1.rhs);
    let x2 = ce2.stiffness.clone().cholesky().unwrap().solve(&ce2.rhs);
    assert!((&x2 - &x1 * c).amax() < 1e-10 * x2.amax().max(1e-30));
    let e1 = element_residual(&sys1, &x1, &DVector::zeros(0)).unwrap();
    let e2 = element_residual(&sys2, &x2, &DVector::zeros(0)).unwrap();
    assert!((e2 - c * c * e1).abs() < 1e-9 * e2.abs().max(1e-30));
}

#[test]
fn enrichment_monotonicity_in_delta_p() {
    // for a fixed trial solution the residual is non-decreasing in dp
    // (test-space nesting: the sup is taken over a larger space)
    let f = |x: [f64; 3]| (x[0] * 3.0).sin() + x[2];
    let mut etas = vec![];
    for dp in 1..=3usize {
        let sp = ElementSpace::new(Box3::unit(), [2, 2, 2], dp).unwrap();
        let sys = assemble_element(&sp, &empty_trace(), ProblemCoeffs::poisson(), &f, 4 - dp);
        let x = DVector::from_element(sys.b.ncols(), 0.1);
        etas.push(element_residual(&sys, &x, &DVector::zeros(0)).unwrap());
    }
    assert!(etas[1] >= etas[0] - 1e-12, "{etas:?}");
    assert!(etas[2] >= etas[1] - 1e-12, "{etas:?}");
}
