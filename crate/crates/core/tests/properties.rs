use deepam::cascade::{ArchConfig, IterationNet, Task};
use deepam::classic::prox::{hard_threshold, lp_scalar, soft_threshold};
use deepam::image::{gradient, gradient_adjoint, inner};
use deepam::nn::{l1_loss, Mode, Tensor4};
use deepam::solver::{assemble, pcg_solve, GammaMap, Ic0, GAMMA_FLOOR};
use deepam::{GradientField, Image};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image_strategy() -> impl Strategy<Value = Image> {
    (1usize..9, 1usize..9, 1usize..3).prop_flat_map(|(h, w, c)| {
        prop::collection::vec(-100.0f64..100.0, h * w * c).prop_map(move |d| Image::new(h, w, c, d).unwrap())
    })
}

fn gamma_strategy() -> impl Strategy<Value = GammaMap> {
    (1usize..8, 1usize..8).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f64..10.0, h * w)
            .prop_filter("not all zero", |g| g.iter().any(|&v| v > 0.0))
            .prop_map(move |g| GammaMap::new(h, w, g).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_adjoint_identity(u in image_strategy(), seed in any::<u64>()) {
        let (h, w, c) = u.shape();
        let other = deepam::nn::gradcheck::random_input(2, c, h, w, seed);
        let n = h * w * c;
        let v = GradientField::new(h, w, c, other.data()[..n].to_vec(), other.data()[n..].to_vec()).unwrap();
        let du = gradient(&u);
        let lhs = inner(&du.dx, &v.dx) + inner(&du.dy, &v.dy);
        let rhs = inner(u.data(), gradient_adjoint(&v).data());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn gradient_of_constant_is_zero(h in 1usize..9, w in 1usize..9, c in -50.0f64..50.0) {
        let g = gradient(&Image::filled(h, w, 1, c));
        prop_assert!(g.dx.iter().chain(&g.dy).all(|&v| v == 0.0));
    }

    #[test]
    fn system_is_symmetric_with_gamma_surplus(gamma in gamma_strategy()) {
        let l = assemble(&gamma).unwrap();
        let n = l.dim();
        let dense = l.to_dense();
        for i in 0..n {
            let mut off = 0.0;
            for j in 0..n {
                prop_assert_eq!(dense[i * n + j], dense[j * n + i]);
                if i != j {
                    off += dense[i * n + j].abs();
                }
            }
            let surplus = dense[i * n + i] - off;
            prop_assert!((surplus - gamma.values()[i].max(GAMMA_FLOOR)).abs() < 1e-12);
        }
    }

    #[test]
    fn pcg_reaches_requested_residual(gamma in gamma_strategy(), seed in any::<u64>()) {
        let a = assemble(&gamma).unwrap();
        let b = deepam::nn::gradcheck::random_input(1, 1, gamma.height(), gamma.width(), seed).data().to_vec();
        let (x, rep) = pcg_solve(&a, &Ic0::factorize(&a).unwrap(), &b, 1e-10, 2000).unwrap();
        prop_assert!(rep.converged);
        let mut ax = vec![0.0; b.len()];
        a.matvec(&x, &mut ax);
        let r: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(r <= 1e-8 * bn.max(1e-300) + 1e-300);
    }

    #[test]
    fn prox_outputs_beat_their_neighbours(z in -5.0f64..5.0, beta in 0.05f64..20.0, d in 1e-4f64..0.5) {
        let quad = |v: f64| 0.5 * beta * (v - z) * (v - z);
        let checks: [(f64, Box<dyn Fn(f64) -> f64>); 4] = [
            (soft_threshold(z, 1.0 / beta), Box::new(|v: f64| v.abs())),
            (hard_threshold(z, 2.0 / beta), Box::new(|v: f64| (v != 0.0) as u8 as f64)),
            (lp_scalar(z, beta, 0.5).unwrap(), Box::new(|v: f64| v.abs().sqrt())),
            (lp_scalar(z, beta, 2.0 / 3.0).unwrap(), Box::new(|v: f64| v.abs().powf(2.0 / 3.0))),
        ];
        for (v, phi) in checks.iter() {
            let cost = |x: f64| phi(x) + quad(x);
            prop_assert!(cost(*v) <= cost(*v + d) + 1e-12);
            prop_assert!(cost(*v) <= cost(*v - d) + 1e-12);
            prop_assert!(cost(*v) <= cost(0.0) + 1e-12);
        }
    }

    #[test]
    fn l1_loss_is_nonnegative_with_bounded_gradient(u in image_strategy(), shift in -3.0f64..3.0) {
        let t = u.map(|v| (v * 0.7 + shift).round());
        let (loss, grads) = l1_loss(std::slice::from_ref(&u), std::slice::from_ref(&t)).unwrap();
        prop_assert!(loss >= 0.0);
        let bound = 1.0 / u.data().len() as f64;
        prop_assert!(grads[0].data().iter().all(|g| g.abs() <= bound + 1e-15));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gamma_output_is_nonnegative(seed in any::<u64>(), scale in 0.1f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = IterationNet::new("it0", &ArchConfig::tiny(Task::Denoise), &mut rng);
        let x = deepam::nn::gradcheck::random_input(2, 1, 10, 10, seed ^ 1);
        let x = Tensor4::new(2, 1, 10, 10, x.data().iter().map(|v| v * scale).collect()).unwrap();
        for mode in [Mode::Train, Mode::Eval] {
            let (_, gamma, _) = net.forward(&x, None, mode).unwrap();
            prop_assert!(gamma.data().iter().all(|&g| g >= 0.0));
        }
    }
}
