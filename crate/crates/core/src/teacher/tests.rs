use ndarray::{array, Array2};

use super::*;
use crate::diffcore::gradient_check;
use crate::nets::init_weight;

fn build(tuple: &[usize], seed: u64) -> (ParamStore, Teacher) {
    let dims = TeacherDims::from_tuple(tuple).unwrap();
    let mut rng = Stream::new(seed);
    let mut store = ParamStore::new();
    let head = GaussianHead::new(&mut store, "head", dims.rep_dim, dims.y_dim, &mut rng);
    let t = Teacher::new(&mut store, dims, head, &mut rng).unwrap();
    (store, t)
}

fn zero(store: &mut ParamStore) {
    for v in store.values_mut() {
        v.fill(0.0);
    }
}

fn random_gaussian(rng: &mut Stream, dim: usize) -> GaussianParams {
    GaussianParams {
        mean: (0..dim).map(|_| rng.uniform_range(-3.0, 3.0)).collect(),
        logvar: (0..dim).map(|_| rng.uniform_range(-4.0, 4.0)).collect(),
    }
}

#[test]
fn tuple_reading_matches_the_representation_widths() {
    let d = TeacherDims::from_tuple(&[1, 15, 60, 30, 1]).unwrap();
    assert_eq!((d.hidden, d.z_dim, d.rep_dim), (15, 15, 30));
    assert_eq!(d.projection_hidden, vec![60]);
    let d = TeacherDims::from_tuple(&[1, 25, 45, 45, 10, 1]).unwrap();
    assert_eq!((d.hidden, d.rep_dim), (25, 10));
    assert_eq!(d.projection_hidden, vec![45, 45]);
    assert!(TeacherDims::from_tuple(&[1, 15, 1]).is_err());
}

#[test]
fn zero_cell_hidden_update_halves_state() {
    let (mut store, t) = build(&[1, 3, 4, 2, 1], 1);
    zero(&mut store);
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let h = g.constant(array![[2.0, -4.0, 1.0]]);
    let y = g.constant(array![[0.7]]);
    let z = g.constant(array![[0.1, 0.2, 0.3]]);
    let out = t.hidden_update(&mut g, &p, h, y, z).unwrap();
    assert_eq!(g.value(out), &array![[1.0, -2.0, 0.5]]);
    let again = t.hidden_update(&mut g, &p, h, y, z).unwrap();
    assert_eq!(g.value(out), g.value(again));
}

#[test]
fn zero_prior_and_encoder_are_standard_normal() {
    let (mut store, t) = build(&[1, 15, 60, 30, 1], 2);
    zero(&mut store);
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let h = g.constant(Array2::from_elem((2, 15), 0.3));
    let y = g.constant(array![[1.0], [-1.0]]);
    let prior = t.prior(&mut g, &p, h).unwrap();
    assert_eq!(g.shape(prior.mean), (2, 15));
    assert!(g.value(prior.mean).iter().all(|&v| v == 0.0));
    assert!(g.value(prior.logvar).iter().all(|&v| v == 0.0));
    let post = t.encode(&mut g, &p, y, h).unwrap();
    assert!(g.value(post.mean).iter().all(|&v| v == 0.0));
    assert!(g.value(post.logvar).iter().all(|&v| v == 0.0));
}

#[test]
fn prior_and_encoder_gradient_checks() {
    let (store, t) = build(&[1, 3, 4, 2, 1], 3);
    let mut rng = Stream::new(30);
    let h = init_weight(2, 3, &mut rng) * 3.0;
    let y = init_weight(2, 1, &mut rng) * 2.0;
    let rep = gradient_check(
        |g, ids| {
            let p = Bound::from_nodes(ids.to_vec());
            let hn = g.constant(h.clone());
            let yn = g.constant(y.clone());
            let prior = t.prior(g, &p, hn)?;
            let post = t.encode(g, &p, yn, hn)?;
            kl_gaussian(g, post, prior)
        },
        store.values(),
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(rep.passed, "{rep:?}");
}

#[test]
fn kl_is_nonnegative_and_zero_on_equality() {
    let mut rng = Stream::new(4);
    for _ in 0..10_000 {
        let dim = 1 + rng.below(4);
        let q = random_gaussian(&mut rng, dim);
        let p = random_gaussian(&mut rng, dim);
        assert!(kl_diag(&q, &p).unwrap() >= 0.0);
        assert!(kl_diag(&q, &q).unwrap().abs() < 1e-12);
    }
}

#[test]
fn kl_closed_form_values() {
    let n01 = GaussianParams::standard(1);
    let n11 = GaussianParams::new(vec![1.0], vec![0.0]).unwrap();
    assert!((kl_diag(&n11, &n01).unwrap() - 0.5).abs() < 1e-15);
    let n04 = GaussianParams::new(vec![0.0], vec![4f64.ln()]).unwrap();
    let closed = kl_diag(&n04, &n01).unwrap();
    assert!((closed - 0.5 * (-(4f64.ln()) - 1.0 + 4.0)).abs() < 1e-15);
    assert!((closed - 0.806_852_8).abs() < 1e-6);

    // ∫ q log(q/p) by the trapezoid rule on [-40, 40]
    let q = |x: f64| (-x * x / 8.0).exp() / (8.0 * std::f64::consts::PI).sqrt();
    let logp = |x: f64| -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let logq = |x: f64| -x * x / 8.0 - 0.5 * (8.0 * std::f64::consts::PI).ln();
    let n = 400_000;
    let h = 80.0 / n as f64;
    let integral: f64 = (0..=n)
        .map(|i| {
            let x = -40.0 + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * q(x) * (logq(x) - logp(x))
        })
        .sum::<f64>()
        * h;
    assert!((integral - closed).abs() < 1e-8, "{integral} vs {closed}");
}

#[test]
fn kl_dimension_mismatch() {
    let a = GaussianParams::standard(2);
    let b = GaussianParams::standard(3);
    assert!(kl_diag(&a, &b).is_err());
    assert!(nll_diag(&[0.0], &a).is_err());
}

#[test]
fn nll_values_and_density_oracle() {
    let n01 = GaussianParams::standard(1);
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    assert!((nll_diag(&[0.0], &n01).unwrap() - half_ln_2pi).abs() < 1e-15);
    assert!((half_ln_2pi - 0.918_94).abs() < 1e-5);
    for mu in [-3.0, 0.5, 12.0] {
        let g = GaussianParams::new(vec![mu], vec![0.0]).unwrap();
        assert!((nll_diag(&[mu], &g).unwrap() - half_ln_2pi).abs() < 1e-15);
    }
    let mut rng = Stream::new(5);
    for _ in 0..100 {
        let dim = 1 + rng.below(3);
        let g = random_gaussian(&mut rng, dim);
        // residuals within ±4σ keep the density itself representable
        let y: Vec<f64> = (0..dim)
            .map(|d| g.mean[d] + rng.uniform_range(-4.0, 4.0) * (0.5 * g.logvar[d]).exp())
            .collect();
        let density: f64 = (0..dim)
            .map(|d| {
                let var = g.logvar[d].exp();
                (-(y[d] - g.mean[d]).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
            })
            .product();
        assert!((nll_diag(&y, &g).unwrap() + density.ln()).abs() < 1e-10);
    }
}

#[test]
fn graph_and_plain_probability_terms_agree() {
    let mut rng = Stream::new(6);
    for _ in 0..50 {
        let q = random_gaussian(&mut rng, 3);
        let p = random_gaussian(&mut rng, 3);
        let y: Vec<f64> = (0..3).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
        let mut g = Graph::new();
        let qn = GaussianNodes {
            mean: g.row(&q.mean),
            logvar: g.row(&q.logvar),
        };
        let pn = GaussianNodes {
            mean: g.row(&p.mean),
            logvar: g.row(&p.logvar),
        };
        let yn = g.row(&y);
        let kl = kl_gaussian(&mut g, qn, pn).unwrap();
        let nll = nll_gaussian(&mut g, yn, qn).unwrap();
        assert!((g.scalar_value(kl) - kl_diag(&q, &p).unwrap()).abs() < 1e-12);
        assert!((g.scalar_value(nll) - nll_diag(&y, &q).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn reparameterization_cases() {
    let mut g = Graph::new();
    let d = GaussianNodes {
        mean: g.row(&[1.5, -2.0]),
        logvar: g.row(&[0.3, 4f64.ln()]),
    };
    let zero = g.row(&[0.0, 0.0]);
    let z = reparam_sample(&mut g, d, zero).unwrap();
    assert_eq!(g.value(z), &array![[1.5, -2.0]]);

    let d = GaussianNodes {
        mean: g.row(&[0.0]),
        logvar: g.row(&[4f64.ln()]),
    };
    let one = g.row(&[1.0]);
    let z = reparam_sample(&mut g, d, one).unwrap();
    assert!((g.scalar_value(z) - 2.0).abs() < 1e-15);
    let bad = g.row(&[1.0, 1.0]);
    assert!(reparam_sample(&mut g, d, bad).is_err());
}

#[test]
fn reparameterized_samples_have_the_stated_variance() {
    let n = 100_000;
    let logvar = 0.7f64;
    let mut rng = Stream::new(8);
    let eps = Array2::from_shape_simple_fn((n, 1), || rng.normal());
    let mut g = Graph::new();
    let d = GaussianNodes {
        mean: g.constant(Array2::from_elem((n, 1), 0.4)),
        logvar: g.constant(Array2::from_elem((n, 1), logvar)),
    };
    let e = g.constant(eps);
    let z = reparam_sample(&mut g, d, e).unwrap();
    let zs = g.value(z);
    let mean = zs.sum() / n as f64;
    let var = zs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((var / logvar.exp() - 1.0).abs() < 0.05, "{var}");
}

fn rollout_values(store: &ParamStore, t: &Teacher, ys: &[Array2<f64>], eps: &[Array2<f64>]) -> (Vec<Array2<f64>>, Array2<f64>, f64) {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let yn: Vec<_> = ys.iter().map(|y| g.constant(y.clone())).collect();
    let en: Vec<_> = eps.iter().map(|e| g.constant(e.clone())).collect();
    let r = t.rollout(&mut g, &p, &yn, &en).unwrap();
    let phi = g.value(r.phi);
    let phis = (0..r.steps)
        .map(|t| phi.slice(ndarray::s![t * r.batch..(t + 1) * r.batch, ..]).to_owned())
        .collect();
    (phis, g.value(r.decoded.mean).clone(), g.scalar_value(r.kl))
}

#[test]
fn single_step_rollout_of_zero_teacher() {
    let (mut store, t) = build(&[1, 3, 4, 2, 1], 9);
    zero(&mut store);
    let eps = array![[0.3, -1.2, 0.8]];
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let y = g.constant(array![[2.5]]);
    let e = g.constant(eps.clone());
    let r = t.rollout(&mut g, &p, &[y], &[e]).unwrap();
    assert_eq!((r.steps, r.batch), (1, 1));
    // h_1 = 0.5 * h_0 = 0 and the standard-normal posterior gives z = eps
    let post_sample = {
        let m = g.value(r.posterior.mean).clone();
        m + &eps
    };
    assert_eq!(post_sample, eps);
    assert!(g.value(r.phi).iter().all(|&v| v == 0.0));
    assert_eq!(g.value(r.decoded.mean)[[0, 0]], 0.0);
    assert_eq!(g.value(r.decoded.logvar)[[0, 0]], 0.0);
    assert_eq!(g.scalar_value(r.kl), 0.0);
}

#[test]
fn rollouts_are_deterministic_and_causal() {
    let (store, t) = build(&[1, 4, 6, 3, 1], 10);
    let mut rng = Stream::new(11);
    let steps = 8;
    let ys: Vec<_> = (0..steps).map(|_| init_weight(2, 1, &mut rng) * 2.0).collect();
    let eps: Vec<_> = (0..steps).map(|_| Array2::from_shape_simple_fn((2, 4), || rng.normal())).collect();
    let (a, da, ka) = rollout_values(&store, &t, &ys, &eps);
    let (b, db, kb) = rollout_values(&store, &t, &ys, &eps);
    assert_eq!(a, b);
    assert_eq!(da, db);
    assert_eq!(ka.to_bits(), kb.to_bits());

    let mut perturbed = ys.clone();
    for y in perturbed.iter_mut().skip(5) {
        y.mapv_inplace(|v| v + 3.0);
    }
    let (c, _, _) = rollout_values(&store, &t, &perturbed, &eps);
    for k in 0..5 {
        assert_eq!(a[k], c[k], "step {k} changed");
    }
    assert_ne!(a[5], c[5]);
}

#[test]
fn empty_rollout_is_an_error() {
    let (store, t) = build(&[1, 3, 4, 2, 1], 12);
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    assert!(t.rollout(&mut g, &p, &[], &[]).is_err());
}

#[test]
fn full_rollout_gradient_check() {
    let (store, t) = build(&[1, 3, 4, 2, 1], 13);
    let mut rng = Stream::new(14);
    let ys: Vec<_> = (0..3).map(|_| init_weight(2, 1, &mut rng) * 2.0).collect();
    let eps: Vec<_> = (0..3).map(|_| Array2::from_shape_simple_fn((2, 3), || rng.normal())).collect();
    let rep = gradient_check(
        |g, ids| {
            let p = Bound::from_nodes(ids.to_vec());
            let yn: Vec<_> = ys.iter().map(|y| g.constant(y.clone())).collect();
            let en: Vec<_> = eps.iter().map(|e| g.constant(e.clone())).collect();
            let r = t.rollout(g, &p, &yn, &en)?;
            let y_all = g.concat(&yn, Axis::Rows)?;
            let nll = nll_gaussian(g, y_all, r.decoded)?;
            g.add(nll, r.kl)
        },
        store.values(),
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(rep.passed, "{rep:?}");
}

/// One-step linear-Gaussian teacher: z ~ N(m, s²) from a fixed prior, y | z ~
/// N(a z + c, σ²). Its marginal likelihood is N(a m + c, a² s² + σ²), so the
/// negative ELBO can be compared against the exact negative log-likelihood.
#[test]
fn negative_elbo_bounds_exact_nll() {
    let dims = TeacherDims {
        y_dim: 1,
        hidden: 1,
        z_dim: 1,
        prior_hidden: vec![2],
        projection_hidden: vec![],
        rep_dim: 2,
        raw_representation: true,
    };
    let mut rng = Stream::new(15);
    let mut store = ParamStore::new();
    let head = GaussianHead::new(&mut store, "head", 2, 1, &mut rng);
    let t = Teacher::new(&mut store, dims, head.clone(), &mut rng).unwrap();
    // h_1 = GRU(0, 0) = 0 with zero biases, so the prior is the prior net's bias
    for v in store.values_mut() {
        v.mapv_inplace(|w| w * 2.0);
    }
    store.get_mut(t.gru.b_h).fill(0.0);
    store.get_mut(t.gru.b_z).fill(0.0);
    let prior_bias = t.prior_net.out.b;
    *store.get_mut(prior_bias) = array![[0.4, 0.6f64.ln()]];
    let (a, c, noise_var) = (1.7, -0.3, 0.5f64);
    *store.get_mut(head.mean.w) = array![[0.9, a]];
    *store.get_mut(head.mean.b) = array![[c]];
    store.get_mut(head.logvar.w).fill(0.0);
    *store.get_mut(head.logvar.b) = array![[noise_var.ln()]];

    let y_obs = 1.3;
    let (m, s2) = (0.4, 0.6);
    let marg_var = a * a * s2 + noise_var;
    let exact = nll_diag(&[y_obs], &GaussianParams::new(vec![a * m + c], vec![marg_var.ln()]).unwrap()).unwrap();

    let n = 10_000;
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let y = g.constant(Array2::from_elem((n, 1), y_obs));
    let eps = g.constant(Array2::from_shape_simple_fn((n, 1), || rng.normal()));
    let r = t.rollout(&mut g, &p, &[y], &[eps]).unwrap();
    assert!(g.value(r.prior.mean).iter().all(|&v| (v - m).abs() < 1e-12));
    let nll = nll_gaussian(&mut g, y, r.decoded).unwrap();
    let nelbo = (g.scalar_value(nll) + g.scalar_value(r.kl)) / n as f64;
    assert!(nelbo >= exact - 1e-3, "{nelbo} < {exact}");
}
