use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type C = Cx<f64>;

fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::from_fn(rows, cols, |_, _| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

fn rel(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    (a - b).norm_fro() / b.norm_fro().max(1e-300)
}

#[test]
fn svd_reconstructs_tall_and_wide() {
    for (m, n, seed) in [(7, 4, 1), (4, 7, 2), (5, 5, 3), (30, 10, 4)] {
        let a = random_mat(m, n, seed);
        let s = svd(&a).unwrap();
        assert!(rel(&s.reconstruct(), &a) < 1e-13, "{m}x{n}");
        let r = m.min(n);
        assert!(rel(&s.u.adjoint().matmul(&s.u), &Mat::identity(r)) < 1e-13);
        assert!(rel(&s.v.adjoint().matmul(&s.v), &Mat::identity(r)) < 1e-13);
        assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn svd_of_diagonal_gives_sorted_moduli() {
    let a = Mat::diag(&[C::new(0.5, 0.0), C::new(0.0, -3.0), C::new(2.0, 0.0)]);
    let s = svd(&a).unwrap();
    for (got, want) in s.sigma.iter().zip([3.0, 2.0, 0.5]) {
        assert!((got - want).abs() < 1e-15);
    }
}

#[test]
fn svd_rank_deficient_completes_u() {
    // rank one: outer product
    let x = random_mat(6, 1, 9);
    let y = random_mat(1, 4, 10);
    let a = x.matmul(&y);
    let s = svd(&a).unwrap();
    assert_eq!(s.rank(1e-10), 1);
    assert!(rel(&s.u.adjoint().matmul(&s.u), &Mat::identity(4)) < 1e-12);
    assert!(rel(&s.reconstruct(), &a) < 1e-13);
}

#[test]
fn svd_f32_path() {
    let a: Mat<f32> = random_mat(6, 3, 5).convert();
    let s = svd(&a).unwrap();
    let err = (&s.reconstruct() - &a).norm_fro() / a.norm_fro();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn eig_of_companion_matches_roots() {
    // roots 1, -2, 3i, 0.5 - i of a monic quartic
    let roots = [C::new(1.0, 0.0), C::new(-2.0, 0.0), C::new(0.0, 3.0), C::new(0.5, -1.0)];
    let mut coef = vec![C::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![C::new(0.0, 0.0); coef.len() + 1];
        for (k, &c) in coef.iter().enumerate() {
            next[k] += c;
            next[k + 1] -= c * r;
        }
        coef = next;
    }
    let n = roots.len();
    let comp = Mat::from_fn(n, n, |i, j| {
        if i == 0 {
            -coef[j + 1]
        } else if i == j + 1 {
            C::new(1.0, 0.0)
        } else {
            C::new(0.0, 0.0)
        }
    });
    let e = eig(&comp).unwrap();
    for r in roots {
        let best = e.values.iter().map(|&v| (v - r).norm()).fold(f64::INFINITY, f64::min);
        assert!(best < 1e-12, "root {r} missed by {best}");
    }
    for k in 0..n {
        let v = e.vectors.columns(k, k + 1);
        let res = &comp.matmul(&v) - &v.scale(e.values[k]);
        assert!(res.norm_fro() < 1e-12);
    }
}

#[test]
fn schur_reconstructs_and_reorders() {
    let a = random_mat(8, 8, 11);
    let mut s = schur(&a).unwrap();
    let back = s.z.matmul(&s.t).matmul(&s.z.adjoint());
    assert!(rel(&back, &a) < 1e-13);
    let before = s.eigenvalues();
    reorder_schur(&mut s, |z| z.re < 0.0);
    let back = s.z.matmul(&s.t).matmul(&s.z.adjoint());
    assert!(rel(&back, &a) < 1e-12);
    let after = s.eigenvalues();
    let nneg = before.iter().filter(|z| z.re < 0.0).count();
    assert!(after[..nneg].iter().all(|z| z.re < 0.0));
    assert!(after[nneg..].iter().all(|z| z.re >= 0.0));
    for i in 0..8 {
        for j in 0..i {
            assert_eq!(s.t[(i, j)], C::new(0.0, 0.0));
        }
    }
    // leading columns of Z span an invariant subspace
    let zk = s.z.columns(0, nneg);
    let az = a.matmul(&zk);
    let proj = zk.matmul(&zk.adjoint().matmul(&az));
    assert!((&az - &proj).norm_fro() < 1e-12 * a.norm_fro());
}

#[test]
fn adjugate_identity_including_singular() {
    let a = random_mat(4, 4, 21);
    let adj = adjugate(&a);
    let d = det_cofactor(&a);
    assert!(rel(&adj.matmul(&a), &Mat::identity(4).scale(d)) < 1e-13);
    assert!((d - det(&a).unwrap()).norm() < 1e-13 * d.norm());

    // rank 3: adjugate is rank one, v w^T with A v = 0
    let mut s = a.clone();
    for i in 0..4 {
        s[(i, 3)] = s[(i, 0)] * 2.0 - s[(i, 1)];
    }
    let adj = adjugate(&s);
    assert!(adj.matmul(&s).norm_fro() < 1e-13);
    assert!(s.matmul(&adj).norm_fro() < 1e-13);
    let sv = svd(&adj).unwrap();
    assert!(sv.sigma[1] < 1e-13 * sv.sigma[0]);
}

#[test]
fn lu_solves_and_detects_singular() {
    let a = random_mat(6, 6, 31);
    let b = random_mat(6, 2, 32);
    let x = Lu::new(&a).unwrap().solve(&b).unwrap();
    assert!(rel(&a.matmul(&x), &b) < 1e-13);
    let z = Mat::<f64>::zeros(3, 3);
    assert!(Lu::new(&z).unwrap().is_singular());
}

fn random_block_system(d: usize, n: usize, seed: u64) -> BlockBidiagonal<f64> {
    let mut k = seed;
    let mut next = || {
        k += 1;
        random_mat(d, d, k)
    };
    let left = next();
    let right = next();
    let lower = (0..n).map(|_| next()).collect();
    let upper = (0..n).map(|_| next()).collect();
    BlockBidiagonal::new(left, right, lower, upper).unwrap()
}

fn dense_of(sys: &BlockBidiagonal<f64>) -> Mat<f64> {
    let nn = sys.unknowns();
    let mut m = Mat::zeros(nn, nn);
    for j in 0..nn {
        let mut e = vec![C::new(0.0, 0.0); nn];
        e[j] = C::new(1.0, 0.0);
        m.set_col(j, &sys.apply(&e));
    }
    m
}

#[test]
fn banded_matches_dense() {
    for (d, n) in [(1, 5), (2, 1), (2, 9), (3, 12), (5, 7)] {
        let sys = random_block_system(d, n, 100 * d as u64 + n as u64);
        let dense = dense_of(&sys);
        let lu = sys.factor().unwrap();
        let b = random_mat(sys.unknowns(), 1, 7).col(0);
        let x = lu.solve(&b);
        let xd = Lu::new(&dense).unwrap().solve_vec(&b).unwrap();
        let err = x.iter().zip(&xd).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let scale = xd.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-10 * scale, "d={d} n={n} err={err}");
        let r = sys.apply(&x);
        let res = r.iter().zip(&b).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(res < 1e-11, "residual {res}");
    }
}

#[test]
fn banded_singular_is_reported() {
    let mut sys = random_block_system(2, 4, 3);
    sys = BlockBidiagonal::new(
        Mat::zeros(2, 2),
        Mat::zeros(2, 2),
        (0..4).map(|i| random_mat(2, 2, 50 + i)).collect(),
        (0..4).map(|i| random_mat(2, 2, 60 + i)).collect(),
    )
    .unwrap_or(sys);
    assert!(sys.factor().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn svd_invariants(m in 1usize..9, n in 1usize..9, seed in 0u64..10_000) {
        let a = random_mat(m, n, seed);
        let s = svd(&a).unwrap();
        prop_assert!(rel(&s.reconstruct(), &a) < 1e-12);
        prop_assert!(s.sigma.iter().all(|&x| x >= 0.0));
        let fro: f64 = s.sigma.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((fro - a.norm_fro()).abs() < 1e-12 * a.norm_fro());
    }

    #[test]
    fn eig_trace_and_det(n in 1usize..8, seed in 0u64..10_000) {
        let a = random_mat(n, n, seed);
        let e = eig(&a).unwrap();
        let tr = e.values.iter().fold(C::new(0.0, 0.0), |s, &v| s + v);
        let pr = e.values.iter().fold(C::new(1.0, 0.0), |s, &v| s * v);
        prop_assert!((tr - a.trace()).norm() < 1e-11 * (1.0 + a.norm_fro()));
        let d = det(&a).unwrap();
        prop_assert!((pr - d).norm() < 1e-10 * (1.0 + d.norm()));
    }

    #[test]
    fn adjugate_times_matrix_is_det(n in 1usize..5, seed in 0u64..10_000) {
        let a = random_mat(n, n, seed);
        let lhs = adjugate(&a).matmul(&a);
        let rhs = Mat::identity(n).scale(det_cofactor(&a));
        prop_assert!((&lhs - &rhs).norm_fro() < 1e-12 * (1.0 + rhs.norm_fro()));
    }

    #[test]
    fn banded_solve_residual(d in 1usize..4, n in 1usize..20, seed in 0u64..10_000) {
        let sys = random_block_system(d, n, seed);
        if let Ok(lu) = sys.factor() {
            let b = random_mat(sys.unknowns(), 1, seed + 1).col(0);
            let x = lu.solve(&b);
            let r = sys.apply(&x);
            let xs = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let res = r.iter().zip(&b).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            prop_assert!(res < 1e-9 * (1.0 + xs));
        }
    }
}

#[test]
fn qr_is_orthonormal_with_positive_diagonal() {
    let a = random_mat(6, 3, 11);
    let (q, r) = qr(&a).unwrap();
    assert!(rel(&q.matmul(&r), &a) < 1e-14);
    assert!((&q.adjoint().matmul(&q) - &Mat::identity(3)).norm_max() < 1e-14);
    for i in 0..3 {
        assert!(r[(i, i)].im == 0.0 && r[(i, i)].re > 0.0);
        for j in 0..i {
            assert_eq!(r[(i, j)], C::new(0.0, 0.0));
        }
    }
    let mut dep = a.clone();
    let c0 = dep.col(0);
    dep.set_col(2, &c0);
    assert!(qr(&dep).is_none());
}

proptest! {
    #[test]
    fn adjugate_determinant_power(n in 1usize..4, seed in 0u64..10_000) {
        let a = random_mat(n, n, seed);
        let d = det_cofactor(&a);
        let lhs = det_cofactor(&adjugate(&a));
        let rhs = d.powi(n as i32 - 1);
        prop_assert!((lhs - rhs).norm() <= 1e-8 * rhs.norm().max(1e-300));
    }
}

#[test]
fn expm_matches_eigen_decomposition() {
    let a = random_mat(4, 4, 21).scale(C::new(3.0, 0.0));
    let e = eig(&a).unwrap();
    let x = &e.vectors;
    let xi = Lu::new(x).unwrap().inverse().unwrap();
    let d: Vec<C> = e.values.iter().map(|z| z.exp()).collect();
    let want = x.matmul(&Mat::diag(&d)).matmul(&xi);
    assert!(rel(&expm(&a), &want) < 1e-12);
    let rot = Mat::from_rows(&[vec![C::new(0.0, 0.0), C::new(1.0, 0.0)], vec![C::new(-1.0, 0.0), C::new(0.0, 0.0)]]);
    let r = expm(&rot);
    assert!((r[(0, 0)].re - 1f64.cos()).abs() < 1e-15 && (r[(0, 1)].re - 1f64.sin()).abs() < 1e-15);
}
