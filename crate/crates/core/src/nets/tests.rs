use super::*;
use crate::numkit::{max_abs_diff_vec, Rng};
use ModuleKind::{Low, Up};

fn random_spec(rng: &mut Rng, kind: NetKind) -> NetSpec {
    let dims = [2, 3, 4, 6];
    let n = dims[rng.next_uniform(0.0, 4.0) as usize];
    let m = 1 + rng.next_uniform(0.0, 6.0) as usize;
    match kind {
        NetKind::Vpnn => {
            let mut spec = NetSpec::vpnn(n, 1 + rng.next_uniform(0.0, 4.0) as usize, 1 + rng.next_uniform(0.0, 2.0) as usize, m);
            spec.s = Some(1 + rng.next_uniform(0.0, (n - 1) as f64) as usize);
            spec
        }
        _ => NetSpec {
            k: 1 + rng.next_uniform(0.0, 2.0) as usize,
            ..NetSpec::base(kind, n, m)
        },
    }
}

fn random_params(rng: &mut Rng, net: &Network) -> Vec<f64> {
    rng.normal(0.0, 0.5, net.param_count())
}

#[test]
fn parameter_counts() {
    assert_eq!(param_count(&NetSpec::loc_symp(3, 2, 16)).unwrap(), 512);
    assert_eq!(param_count(&NetSpec::sym_loc_symp(3, 1, 16)).unwrap(), 256);
    assert_eq!(param_count(&NetSpec::sym_loc_symp(3, 2, 16)).unwrap(), 512);
    // one Up coupling: [n + 1 + (m + 1)(l - 1)] m + s
    let mut one_up = NetSpec::vpnn(3, 1, 1, 16);
    one_up.s = Some(1);
    assert_eq!(param_count(&one_up).unwrap(), 65);
    let (n, m, l, s) = (5usize, 7usize, 3usize, 2usize);
    let mut spec = NetSpec::vpnn(n, 2, l, m);
    spec.s = Some(s);
    let per = (n + 1 + (m + 1) * (l - 1)) * m;
    assert_eq!(param_count(&spec).unwrap(), (per + s) + (per + n - s));
}

#[test]
fn tied_repeats_share_blocks() {
    let mut spec = NetSpec::loc_symp(4, 3, 5);
    spec.tie_repeats = true;
    let net = spec.build().unwrap();
    assert_eq!(net.param_count(), 6 * 5 * 5);
    assert_eq!(net.depth(), 18);
}

#[test]
fn application_order_for_three_dimensions() {
    let net = NetSpec::loc_symp(3, 1, 4).build().unwrap();
    assert_eq!(net.application_order(), vec![(Up, 2, 1.0), (Low, 2, 1.0), (Up, 1, 1.0), (Low, 1, 1.0)]);

    let sym = NetSpec::sym_loc_symp(3, 1, 4).build().unwrap();
    assert_eq!(
        sym.application_order(),
        vec![
            (Up, 2, 0.5),
            (Low, 2, 0.5),
            (Up, 1, 0.5),
            (Low, 1, 0.5),
            (Low, 1, 0.5),
            (Up, 1, 0.5),
            (Low, 2, 0.5),
            (Up, 2, 0.5),
        ]
    );
}

// Reference composition with explicit owned modules.
#[test]
fn forward_matches_explicit_module_composition() {
    let mut rng = Rng::new(11);
    let spec = NetSpec::loc_symp(4, 2, 3);
    let net = spec.build().unwrap();
    let p = random_params(&mut rng, &net);
    let store = ParamStore::from_values(&spec, p.clone()).unwrap();
    let y = rng.normal(0.0, 1.0, 4);
    let h = 0.3;
    let mut expected = y.clone();
    for i in 0..12 {
        expected = store.grad_module(i).unwrap().forward(&expected, h).unwrap();
    }
    assert_eq!(net.forward(&p, &y, h).unwrap(), expected);
    assert_eq!(net_forward(&store, &y, h).unwrap(), expected);
}

#[test]
fn zero_output_weights_give_identity() {
    let mut rng = Rng::new(12);
    for kind in [NetKind::LocSympNet, NetKind::SymLocSympNet] {
        let spec = random_spec(&mut rng, kind);
        let net = spec.build().unwrap();
        let mut p = random_params(&mut rng, &net);
        for (shape, off) in net.grad_blocks() {
            let wo = off + shape.m * (shape.n - 1);
            p[wo..wo + shape.m].iter_mut().for_each(|v| *v = 0.0);
        }
        let y = rng.normal(0.0, 1.0, spec.n);
        assert_eq!(net.forward(&p, &y, 0.7).unwrap(), y);
    }
    let spec = NetSpec::vpnn(4, 3, 2, 5);
    let net = spec.build().unwrap();
    let y = rng.normal(0.0, 1.0, 4);
    assert_eq!(net.forward(&vec![0.0; net.param_count()], &y, 0.1).unwrap(), y);
}

#[test]
fn round_trips_and_symmetry() {
    let mut rng = Rng::new(13);
    for kind in [NetKind::LocSympNet, NetKind::SymLocSympNet, NetKind::Vpnn] {
        for _ in 0..40 {
            let spec = random_spec(&mut rng, kind);
            let net = spec.build().unwrap();
            let p = random_params(&mut rng, &net);
            let y = rng.normal(0.0, 1.0, spec.n);
            let h = rng.next_uniform(-0.5, 0.5);
            let fwd = net.forward(&p, &y, h).unwrap();
            let back = net.inverse(&p, &fwd, h).unwrap();
            assert!(max_abs_diff_vec(&back, &y) < 1e-12, "{kind:?}");
            if kind == NetKind::SymLocSympNet {
                let a = net.inverse(&p, &y, h).unwrap();
                let b = net.forward(&p, &y, -h).unwrap();
                assert_eq!(a, b);
                let twice = net.forward(&p, &fwd, -h).unwrap();
                assert!(max_abs_diff_vec(&twice, &y) < 1e-12);
            }
        }
    }
}

#[test]
fn loc_symp_net_is_not_symmetric() {
    let mut rng = Rng::new(14);
    let spec = NetSpec::loc_symp(3, 2, 8);
    let net = spec.build().unwrap();
    let p = random_params(&mut rng, &net);
    let y = rng.normal(0.0, 1.0, 3);
    let a = net.inverse(&p, &y, 0.5).unwrap();
    let b = net.forward(&p, &y, -0.5).unwrap();
    assert!(max_abs_diff_vec(&a, &b) > 1e-6);
}

#[test]
fn finite_difference_determinant_is_one() {
    let mut rng = Rng::new(15);
    for kind in [NetKind::LocSympNet, NetKind::SymLocSympNet, NetKind::Vpnn] {
        for _ in 0..20 {
            let spec = random_spec(&mut rng, kind);
            let net = spec.build().unwrap();
            let p = random_params(&mut rng, &net);
            let y = rng.normal(0.0, 1.0, spec.n);
            let jac = net.jacobian_fd(&p, &y, 0.2, 1e-5).unwrap();
            let det = jac.det().unwrap();
            assert!((det - 1.0).abs() < 1e-8, "{kind:?} det {det}");
        }
    }
}

#[test]
fn coupling_jacobian_is_block_unit_triangular() {
    let mut rng = Rng::new(16);
    let mut spec = NetSpec::vpnn(5, 1, 2, 4);
    spec.s = Some(2);
    let net = spec.build().unwrap();
    let p = random_params(&mut rng, &net);
    let y = rng.normal(0.0, 1.0, 5);
    let jac = net.jacobian_fd(&p, &y, 0.0, 1e-6).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            let expected_fixed = i == j || (i >= 2 && j != i) || (i < 2 && j < 2);
            if expected_fixed {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((jac[(i, j)] - want).abs() < 1e-9, "({i},{j}) = {}", jac[(i, j)]);
            }
        }
    }
}

#[test]
fn increment_is_proportional_to_step() {
    let mut rng = Rng::new(17);
    let spec = NetSpec::sym_loc_symp(3, 1, 8);
    let net = spec.build().unwrap();
    let p = random_params(&mut rng, &net);
    let y = rng.normal(0.0, 1.0, 3);
    let d3 = max_abs_diff_vec(&net.forward(&p, &y, 1e-3).unwrap(), &y);
    let d6 = max_abs_diff_vec(&net.forward(&p, &y, 1e-6).unwrap(), &y);
    assert!(d3 > 0.0 && d6 > 0.0);
    assert!((d3 / d6 / 1e3 - 1.0).abs() < 1e-2, "ratio {}", d3 / d6);
}

fn vjp_check(spec: &NetSpec, rng: &mut Rng) -> f64 {
    let net = spec.build().unwrap();
    let p = random_params(rng, &net);
    let y = rng.normal(0.0, 1.0, spec.n);
    let ybar = rng.normal(0.0, 1.0, spec.n);
    let h = 0.4;
    let (_, yadj, g) = net.vjp(&p, &y, h, &ybar).unwrap();
    let f = |p: &[f64], y: &[f64]| -> f64 {
        let out = net.forward(p, y, h).unwrap();
        out.iter().zip(&ybar).map(|(a, b)| a * b).sum()
    };
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for j in 0..p.len() {
        let (mut pp, mut pm) = (p.clone(), p.clone());
        pp[j] += eps;
        pm[j] -= eps;
        let fd = (f(&pp, &y) - f(&pm, &y)) / (2.0 * eps);
        worst = worst.max((fd - g[j]).abs());
    }
    for j in 0..y.len() {
        let (mut yp, mut ym) = (y.clone(), y.clone());
        yp[j] += eps;
        ym[j] -= eps;
        let fd = (f(&p, &yp) - f(&p, &ym)) / (2.0 * eps);
        worst = worst.max((fd - yadj[j]).abs());
    }
    worst
}

#[test]
fn vector_jacobian_products_match_finite_differences() {
    let mut rng = Rng::new(18);
    for kind in [NetKind::LocSympNet, NetKind::SymLocSympNet, NetKind::Vpnn] {
        for _ in 0..10 {
            let spec = random_spec(&mut rng, kind);
            let err = vjp_check(&spec, &mut rng);
            assert!(err < 1e-7, "{spec:?}: {err}");
        }
    }
}

#[test]
fn linear_mode_leaves_bias_gradient_zero() {
    let mut rng = Rng::new(19);
    let spec = NetSpec::sym_loc_symp(4, 1, 3).with_activation(Activation::Linear);
    let net = spec.build().unwrap();
    let p = random_params(&mut rng, &net);
    let (_, _, g) = net.vjp(&p, &[0.3, -0.2, 0.5, 1.0], 0.1, &[1.0, 1.0, -1.0, 0.5]).unwrap();
    for (shape, off) in net.grad_blocks() {
        let bo = off + shape.m * shape.n;
        assert!(g[bo..bo + shape.m].iter().all(|&v| v == 0.0));
        assert!(g[off..bo].iter().any(|&v| v != 0.0));
    }
}

#[test]
fn tied_gradient_is_sum_of_untied_passes() {
    let mut rng = Rng::new(20);
    let spec = NetSpec::sym_loc_symp(3, 2, 4);
    let tied = spec.build().unwrap();
    let blocks: Vec<ModuleShape> = tied.grad_blocks().into_iter().map(|(s, _)| s).collect();
    let nb = blocks.len();
    // same modules, but the adjoint pass reads a second copy of every block
    let mut untied_blocks = blocks.clone();
    untied_blocks.extend(blocks.iter().copied());
    let depth = tied.depth();
    let mut steps: Vec<Step> = (0..nb).map(|b| Step { block: b, h_scale: 0.5 }).collect();
    steps.extend((0..nb).rev().map(|b| Step {
        block: nb + b,
        h_scale: 0.5,
    }));
    assert_eq!(steps.len(), depth);
    let untied = Network::from_grad_plan(untied_blocks, steps).unwrap();

    let p = random_params(&mut rng, &tied);
    let mut p2 = p.clone();
    p2.extend_from_slice(&p);
    let y = rng.normal(0.0, 1.0, 3);
    let ybar = rng.normal(0.0, 1.0, 3);
    let (out_t, _, g_t) = tied.vjp(&p, &y, 0.3, &ybar).unwrap();
    let (out_u, _, g_u) = untied.vjp(&p2, &y, 0.3, &ybar).unwrap();
    assert_eq!(out_t, out_u);
    let half = p.len();
    for j in 0..half {
        let sum = g_u[j] + g_u[half + j];
        assert!((g_t[j] - sum).abs() < 1e-10);
    }
}

#[test]
fn invalid_specs() {
    assert!(NetSpec::loc_symp(1, 1, 4).build().is_err());
    assert!(NetSpec::loc_symp(3, 0, 4).build().is_err());
    assert!(NetSpec::sym_loc_symp(3, 1, 0).build().is_err());
    let mut v = NetSpec::vpnn(3, 2, 1, 4);
    v.s = Some(3);
    assert!(v.build().is_err());
    assert!(NetSpec::vpnn(3, 2, 0, 4).build().is_err());
    let net = NetSpec::loc_symp(3, 1, 2).build().unwrap();
    assert!(net.forward(&[0.0; 5], &[0.0; 3], 0.1).is_err());
    assert!(net.forward(&vec![0.0; net.param_count()], &[0.0; 2], 0.1).is_err());
}

#[test]
fn spec_serde_defaults() {
    let spec: NetSpec = serde_json::from_str(r#"{"kind": "SymLocSympNet", "n": 3, "m": 16}"#).unwrap();
    assert_eq!(spec, NetSpec::sym_loc_symp(3, 1, 16));
    let v: NetSpec = serde_json::from_str(r#"{"kind": "VPNN", "n": 3, "m": 16, "layers": 6, "hidden": 2}"#).unwrap();
    assert_eq!(v, NetSpec::vpnn(3, 6, 2, 16));
    assert_eq!(v.partition(), 1);
}

#[test]
fn non_finite_forward_names_module() {
    let spec = NetSpec::loc_symp(3, 1, 1).with_activation(Activation::Linear);
    let net = spec.build().unwrap();
    let p = vec![1e200; net.param_count()];
    let mut ws = net.workspace();
    let mut y = vec![1e200, 1e200, 1e200];
    let err = net.forward_taped(&p, &mut y, 1.0, &mut ws).unwrap_err();
    assert!(err.to_string().contains("module 0"), "{err}");
}
