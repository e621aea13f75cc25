use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stiefel_svrg::linalg::{expm, frob_inner, polar_project, qr_positive, skew, sqrt_psd};
use stiefel_svrg::manifold::{d_rho, inner_x, random_tangent, riemannian_grad, tangent_project};
use stiefel_svrg::optimizers::{gamma, recursion_lemma_check, svrg_euclidean, theorem1_schedule};
use stiefel_svrg::retraction::{apply, declared_derivative};
use stiefel_svrg::rng::gaussian_matrix;
use stiefel_svrg::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const RHOS: [f64; 4] = [0.0, 0.125, 0.25, 1.0];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn norm_equivalence(seed in any::<u64>(), ri in 0usize..4, d in 3usize..12, r in 1usize..3) {
        let rho = RHOS[ri];
        let mut g = rng(seed);
        let x = StiefelPoint::random(&mut g, d, r);
        let m = MetricParams::new(rho);
        let e = tangent_project(&x, &gaussian_matrix(&mut g, d, r), m.space());
        let fro = e.norm().powi(2);
        let ex = inner_x(&x, &e, &e, rho);
        prop_assert!(m.nu * fro <= ex * (1.0 + 1e-12));
        prop_assert!(ex <= m.gamma * fro * (1.0 + 1e-12));
    }
}

#[test]
fn upper_norm_constant_exceeds_one_below_quarter() {
    // E = XΩ with Ω skew is tangent and ‖E‖²_X = ‖E‖²/(4ρ)
    let mut g = rng(7);
    let x = StiefelPoint::random(&mut g, 6, 3);
    let om = skew(&gaussian_matrix(&mut g, 3, 3));
    let e = TangentVector::new(&x, x.matrix() * om, TangentSpace::StiefelTangent).unwrap();
    let ratio = inner_x(&x, &e, &e, 0.125) / e.norm().powi(2);
    assert!((ratio - 2.0).abs() < 1e-12);
    assert_eq!(MetricParams::new(0.125).gamma, 2.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn d_rho_lands_in_its_space(seed in any::<u64>(), ri in 0usize..4, scale in 1e-3f64..1e3) {
        let rho = RHOS[ri];
        let mut g = rng(seed);
        let x = StiefelPoint::random(&mut g, 9, 3);
        let y = gaussian_matrix(&mut g, 9, 3) * scale;
        let e = d_rho(&x, &y, rho);
        prop_assert!(e.space().violation(x.matrix(), e.matrix()) <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn gradient_identity(seed in any::<u64>(), ri in 1usize..4) {
        let rho = RHOS[ri];
        let mut g = rng(seed);
        let x = StiefelPoint::random(&mut g, 8, 3);
        let egrad = gaussian_matrix(&mut g, 8, 3);
        let gr = riemannian_grad(&x, &egrad, rho);
        for _ in 0..5 {
            let e = random_tangent(&mut g, &x, TangentSpace::StiefelTangent);
            let lhs = inner_x(&x, &gr, &e, rho);
            let rhs = frob_inner(&egrad, e.matrix());
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn gradient_identity_grassmann(seed in any::<u64>()) {
        let mut g = rng(seed);
        let x = StiefelPoint::random(&mut g, 8, 3);
        let egrad = gaussian_matrix(&mut g, 8, 3);
        let gr = riemannian_grad(&x, &egrad, 0.0);
        let e = random_tangent(&mut g, &x, TangentSpace::GrassmannHorizontal);
        let lhs = inner_x(&x, &gr, &e, 0.0);
        prop_assert!((lhs - frob_inner(&egrad, e.matrix())).abs() <= 1e-10);
    }

    #[test]
    fn riemannian_grad_is_linear(seed in any::<u64>(), ri in 0usize..4, lam in 1e-3f64..1e3) {
        let rho = RHOS[ri];
        let mut g = rng(seed);
        let x = StiefelPoint::random(&mut g, 7, 2);
        let egrad = gaussian_matrix(&mut g, 7, 2);
        let a = riemannian_grad(&x, &(&egrad * lam), rho).into_matrix();
        let b = riemannian_grad(&x, &egrad, rho).into_matrix() * lam;
        prop_assert!((a - &b).norm() <= 1e-13 * b.norm());
    }

    #[test]
    fn qr_positive_invariants(seed in any::<u64>(), d in 2usize..20, r in 1usize..6) {
        prop_assume!(r <= d);
        let mut g = rng(seed);
        let a = gaussian_matrix(&mut g, d, r);
        let (q, rr) = qr_positive(&a).unwrap();
        prop_assert!((&q * &rr - &a).norm() <= 1e-12 * a.norm());
        prop_assert!(rr.diagonal().iter().all(|&v| v > 0.0));
        prop_assert!((q.transpose() * &q - DenseMatrix::identity(r, r)).norm() <= 1e-12);
    }

    #[test]
    fn polar_reconstructs(seed in any::<u64>(), d in 2usize..20, r in 1usize..6) {
        prop_assume!(r <= d);
        let mut g = rng(seed);
        let a = gaussian_matrix(&mut g, d, r);
        let p = polar_project(&a).unwrap();
        let h = sqrt_psd(&a.tr_mul(&a));
        prop_assert!((&a - p * h).norm() <= 1e-10 * a.norm());
    }

    #[test]
    fn expm_inverse(seed in any::<u64>(), m in 1usize..8, nrm in 0.0f64..5.0) {
        let mut g = rng(seed);
        let mut a = gaussian_matrix(&mut g, m, m);
        let an = a.norm();
        if an > 0.0 {
            a *= nrm / an;
        }
        let prod = expm(&a).unwrap() * expm(&(-&a)).unwrap();
        prop_assert!((prod - DenseMatrix::identity(m, m)).norm() <= 1e-10);
    }

    #[test]
    fn retractions_stay_feasible(seed in any::<u64>(), ki in 0usize..8, t in 0.0f64..10.0) {
        let kind = RetractionKind::ALL[ki];
        let mut g = rng(seed);
        let x = StiefelPoint::random(&mut g, 12, 3);
        let space = if kind == RetractionKind::Exp2 { TangentSpace::GrassmannHorizontal } else { TangentSpace::StiefelTangent };
        let dir = if kind.is_gradient_coupled() {
            gaussian_matrix(&mut g, 12, 3)
        } else {
            random_tangent(&mut g, &x, space).into_matrix() * g.random_range(0.1..3.0)
        };
        let y = apply(kind, &x, &dir, t).unwrap();
        prop_assert!(y.feasibility_error() <= 1e-10);
        let y0 = apply(kind, &x, &dir, 0.0).unwrap();
        prop_assert!((y0.matrix() - x.matrix()).norm() <= 1e-12);
        let dd = declared_derivative(kind, x.matrix(), &dir);
        prop_assert!(dd.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn schedule_delta_is_monotone(n in 10usize..5000, mu in 0.0f64..0.66, kappa in 0.1f64..3.0, l in 0.5f64..50.0, cr in 0.1f64..3.0, rho in 0.0f64..2.0) {
        let nu = MetricParams::new(rho).nu;
        let s = theorem1_schedule(n, mu, kappa, l, cr * l, 1.0, 0.5, 3, nu).unwrap();
        for w in s.delta.windows(2) {
            prop_assert!(w[0] <= w[1] * (1.0 + 1e-14));
        }
        prop_assert!(s.delta[0] >= 0.5 * nu * s.tau * (1.0 - 1e-12));
        prop_assert!((s.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recursion_bound_holds(seed in any::<u64>(), k in 1usize..50) {
        let mut g = rng(seed);
        let a_seq: Vec<f64> = (0..k).map(|_| g.random_range(0.0..2.0)).collect();
        let (a, b, c, d) = (g.random_range(0.0..1.0), g.random_range(1e-3..1.0), g.random_range(0.0..1.0), g.random_range(0.0..1.0));
        let chk = recursion_lemma_check(&a_seq, g.random_range(-5.0..5.0), a, b, c, d);
        prop_assert!(chk.holds, "{chk:?}");
    }

    #[test]
    fn gamma_recurrence(z in 1e-6f64..5.0, i in 1usize..30) {
        // Γ(z, i+1) = (1+z) Γ(z, i) + 1
        let lhs = gamma(z, i + 1);
        let rhs = (1.0 + z) * gamma(z, i) + 1.0;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn svrg_anchor_identity(seed in any::<u64>(), bs in 1usize..10) {
        let p = PcaInstance::generate(10, 30, 2, seed).unwrap();
        let mut g = rng(seed);
        let x = StiefelPoint::random(&mut g, 10, 2);
        let full = p.full_grad(x.matrix());
        let batch: Vec<usize> = (0..bs).map(|_| g.random_range(0..30)).collect();
        prop_assert_eq!(svrg_euclidean(&p, x.matrix(), x.matrix(), &full, &batch), full);
    }

    #[test]
    fn pca_finite_sum_consistency(seed in any::<u64>()) {
        let p = PcaInstance::generate(12, 25, 3, seed).unwrap();
        let x = StiefelPoint::random(&mut rng(seed), 12, 3);
        let n = p.n_components();
        let f: f64 = (0..n).map(|i| p.component_value(x.matrix(), i)).sum::<f64>() / n as f64;
        let mut gsum = DenseMatrix::zeros(12, 3);
        for i in 0..n {
            gsum += p.component_grad(x.matrix(), i);
        }
        gsum /= n as f64;
        let (fv, gv) = p.value_and_grad(x.matrix());
        prop_assert!((f - fv).abs() <= 1e-10 * (1.0 + fv.abs()));
        prop_assert!((gsum - &gv).norm() <= 1e-10 * (1.0 + gv.norm()));
        let xtg = x.matrix().tr_mul(&gv);
        prop_assert!((&xtg - xtg.transpose()).norm() <= 1e-12 * (1.0 + xtg.norm()));
    }

    #[test]
    fn mc_finite_sum_consistency(seed in any::<u64>()) {
        let p = McInstance::generate(15, 20, 2, 3.0, seed).unwrap();
        let x = StiefelPoint::random(&mut rng(seed), 15, 2);
        let n = p.n_components();
        let vals: Vec<f64> = (0..n).map(|i| p.component_value(x.matrix(), i)).collect();
        prop_assert!(vals.iter().all(|&v| v >= 0.0));
        let f = vals.iter().sum::<f64>() / n as f64;
        let mut gsum = DenseMatrix::zeros(15, 2);
        for i in 0..n {
            gsum += p.component_grad(x.matrix(), i);
        }
        gsum /= n as f64;
        let (fv, gv) = p.value_and_grad(x.matrix());
        prop_assert!((f - fv).abs() <= 1e-10 * (1.0 + fv.abs()));
        prop_assert!((gsum - &gv).norm() <= 1e-10 * (1.0 + gv.norm()));
    }
}
