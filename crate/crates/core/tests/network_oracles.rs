//! Convolution and stage networks against direct nested-loop evaluation.

use deepam::cascade::{cascade_forward, ArchConfig, Block, CascadeModel, IterationNet, Task};
use deepam::image::gradient;
use deepam::nn::gradcheck::random_input;
use deepam::nn::{BatchNorm, Conv2d, Mode, Tensor4};
use deepam::solver::{reconstruct, GammaMap, SolverConfig};
use deepam::GradientField;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BN_EPS: f64 = 1e-5;

fn naive_conv(conv: &Conv2d, x: &Tensor4) -> Tensor4 {
    let (n, cin, h, w) = x.shape();
    let cout = conv.out_channels;
    let mut y = Tensor4::zeros(n, cout, h, w);
    for s in 0..n {
        for o in 0..cout {
            for yy in 0..h {
                for xx in 0..w {
                    let mut acc = conv.bias.value[o];
                    for i in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (yy as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let wv = conv.weight.value[((o * cin + i) * 3 + ky) * 3 + kx];
                                acc += wv * x.plane(s, i)[sy as usize * w + sx as usize];
                            }
                        }
                    }
                    y.plane_mut(s, o)[yy * w + xx] = acc;
                }
            }
        }
    }
    y
}

fn naive_eval_norm(norm: &BatchNorm, x: &Tensor4) -> Tensor4 {
    let mut y = x.clone();
    for s in 0..x.batch() {
        for c in 0..x.channels() {
            let k = norm.scale.value[c] / (norm.running_var[c] + BN_EPS).sqrt();
            for v in y.plane_mut(s, c) {
                *v = k * (*v - norm.running_mean[c]) + norm.shift.value[c];
            }
        }
    }
    y
}

fn naive_block(b: &Block, x: &Tensor4) -> Tensor4 {
    let y = naive_conv(&b.conv, x);
    match &b.norm {
        Some(n) => {
            let mut z = naive_eval_norm(n, &y);
            z.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            z
        }
        None => y,
    }
}

fn max_diff(a: &Tensor4, b: &Tensor4) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut conv = Conv2d::new("c", 3, 4, 1.0, &mut rng);
    conv.bias.value.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
    let x = random_input(2, 3, 7, 5, 2);
    assert!(max_diff(&conv.forward(&x).unwrap(), &naive_conv(&conv, &x)) < 1e-12);
}

#[test]
fn conv_backward_is_linear_in_upstream() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let conv = Conv2d::new("c", 2, 3, 1.0, &mut rng);
    let x = random_input(1, 2, 5, 5, 3);
    let (a, b) = (random_input(1, 3, 5, 5, 4), random_input(1, 3, 5, 5, 5));
    let mut sum = a.clone();
    sum.add_assign(&b).unwrap();
    let grads = |dy: &Tensor4| {
        let mut c = conv.clone();
        let dx = c.backward(&x, dy, true).unwrap().unwrap();
        (dx, c.weight.grad.clone(), c.bias.grad.clone())
    };
    let (ga, gb, gs) = (grads(&a), grads(&b), grads(&sum));
    let mut dx = ga.0.clone();
    dx.add_assign(&gb.0).unwrap();
    assert!(max_diff(&dx, &gs.0) < 1e-10);
    for (i, s) in gs.1.iter().enumerate() {
        assert!((ga.1[i] + gb.1[i] - s).abs() < 1e-10);
    }
    for (i, s) in gs.2.iter().enumerate() {
        assert!((ga.2[i] + gb.2[i] - s).abs() < 1e-10);
    }
}

fn randomize_stats(net: &mut IterationNet, rng: &mut ChaCha8Rng) {
    for b in net.trunk.iter_mut().chain(net.gamma.iter_mut()).chain(net.guide.iter_mut()) {
        b.conv.bias.value.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        if let Some(n) = &mut b.norm {
            for c in 0..n.channels {
                n.running_mean[c] = rng.random_range(-0.5..0.5);
                n.running_var[c] = rng.random_range(0.5..2.0);
                n.scale.value[c] = rng.random_range(0.5..1.5);
                n.shift.value[c] = rng.random_range(-0.3..0.3);
            }
        }
    }
}

#[test]
fn stage_network_matches_layerwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let arch = ArchConfig::desk(Task::Denoise);
    let mut net = IterationNet::new("it0", &arch, &mut rng);
    randomize_stats(&mut net, &mut rng);
    let u = random_input(1, 1, 16, 16, 4);
    let (v, gamma, _) = net.forward(&u, None, Mode::Eval).unwrap();
    let mut x = u.clone();
    let mut tap = None;
    for (l, b) in net.trunk.iter().enumerate() {
        x = naive_block(b, &x);
        if l + 1 == arch.gamma_tap() {
            tap = Some(x.clone());
        }
    }
    let mut t = tap.unwrap();
    for b in &net.gamma {
        t = naive_block(b, &t);
    }
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    assert!(max_diff(&v, &x) < 1e-10);
    assert!(max_diff(&gamma, &t) < 1e-10);
}

#[test]
fn zeroed_heads_emit_bias_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut net = IterationNet::new("it0", &ArchConfig::tiny(Task::Denoise), &mut rng);
    let head = net.trunk.last_mut().unwrap();
    head.conv.weight.value.fill(0.0);
    head.conv.bias.value.copy_from_slice(&[0.3, -0.7]);
    let gh = net.gamma.last_mut().unwrap();
    gh.conv.weight.value.fill(0.0);
    gh.conv.bias.value[0] = -0.2;
    let (v, gamma, _) = net.forward(&random_input(2, 1, 6, 6, 1), None, Mode::Train).unwrap();
    assert!(v.plane(1, 0).iter().all(|&x| x == 0.3));
    assert!(v.plane(0, 1).iter().all(|&x| x == -0.7));
    assert!(gamma.data().iter().all(|&g| g == 0.0));
}

#[test]
fn single_stage_is_network_then_reconstruction() {
    let arch = ArchConfig { k: 1, ..ArchConfig::tiny(Task::Denoise) };
    let model = CascadeModel::new(arch, 9).unwrap();
    let f = Tensor4::new(1, 1, 8, 8, random_input(1, 1, 8, 8, 2).data().iter().map(|v| 0.5 + 0.3 * v).collect()).unwrap();
    let (u, _) = cascade_forward(&model, &f, None, Mode::Eval, &SolverConfig::EXACT).unwrap();
    let (v, gamma, _) = model.nets[0].forward(&f, None, Mode::Eval).unwrap();
    let floor = deepam::solver::GAMMA_FLOOR;
    let g = GammaMap::new(8, 8, gamma.data().iter().map(|x| x.max(floor)).collect()).unwrap();
    let field = GradientField::new(8, 8, 1, v.plane(0, 0).to_vec(), v.plane(0, 1).to_vec()).unwrap();
    let (expected, _) = reconstruct(&f.image(0), &field, &g, 1e-13, 10_000).unwrap();
    let got = u.image(0);
    assert!(got.data().iter().zip(expected.data()).all(|(a, b)| (a - b).abs() < 1e-9));
}

#[test]
fn constant_input_with_flat_heads_is_a_fixed_point() {
    let mut model = CascadeModel::new(ArchConfig::tiny(Task::Denoise), 3).unwrap();
    for net in &mut model.nets {
        let head = net.trunk.last_mut().unwrap();
        head.conv.weight.value.fill(0.0);
        head.conv.bias.value.fill(0.0);
        let gh = net.gamma.last_mut().unwrap();
        gh.conv.weight.value.fill(0.0);
        gh.conv.bias.value[0] = 1.0;
    }
    let f = Tensor4::new(1, 1, 6, 6, vec![0.4; 36]).unwrap();
    let (u, _) = cascade_forward(&model, &f, None, Mode::Train, &SolverConfig::EXACT).unwrap();
    assert!(u.data().iter().all(|v| (v - 0.4).abs() < 1e-10));
    // with v = D f exactly, any γ reproduces f
    let img = f.image(0);
    let (u, _) = reconstruct(&img, &gradient(&img), &GammaMap::constant(6, 6, 0.01).unwrap(), 1e-12, 1000).unwrap();
    assert!(u.data().iter().all(|v| (v - 0.4).abs() < 1e-9));
}

#[test]
fn joint_model_tolerates_blank_guidance() {
    let model = CascadeModel::new(ArchConfig::tiny(Task::SrDepth), 5).unwrap();
    let f = random_input(1, 1, 8, 8, 6);
    let g = Tensor4::zeros(1, 3, 8, 8);
    let (u, _) = cascade_forward(&model, &f, Some(&g), Mode::Eval, &SolverConfig::FORWARD).unwrap();
    assert!(u.data().iter().all(|v| v.is_finite()));
}

#[test]
fn residual_cascade_with_silent_heads_is_identity() {
    let arch = ArchConfig { residual_v: true, ..ArchConfig::tiny(Task::SrDepth) };
    let mut model = CascadeModel::new(arch, 8).unwrap();
    for net in &mut model.nets {
        let head = net.trunk.last_mut().unwrap();
        head.conv.weight.value.fill(0.0);
        head.conv.bias.value.fill(0.0);
    }
    let f = random_input(2, 1, 9, 7, 3);
    let g = random_input(2, 3, 9, 7, 4);
    let (u, _) = cascade_forward(&model, &f, Some(&g), Mode::Train, &SolverConfig::EXACT).unwrap();
    assert!(max_diff(&u, &f) < 1e-9);
}
