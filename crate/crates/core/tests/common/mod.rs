#![allow(dead_code)]

use kinenet::{builtin_catalog, JointKind, Point, Structure};
use proptest::prelude::*;

/// A catalog structure with up to `max_units` hinged binary units attached
/// between existing hinge joints.
pub fn extended_structure(max_units: usize) -> impl Strategy<Value = Structure> {
    let n = builtin_catalog().all().count();
    (
        0..n,
        prop::collection::vec((any::<prop::sample::Index>(), any::<prop::sample::Index>(), 0.0..10.0f64, 0.0..10.0f64), 0..=max_units),
    )
        .prop_map(|(pick, units)| {
            let mut s = builtin_catalog().all().nth(pick).unwrap().structure.clone();
            for (a, b, x, y) in units {
                if let Some(next) = try_binary_unit(&s, a, b, Point::new(x, y)) {
                    s = next;
                }
            }
            s
        })
}

/// Attach a hinged binary unit between two hinge joints picked by index, if
/// the placement is valid.
pub fn try_binary_unit(s: &Structure, a: prop::sample::Index, b: prop::sample::Index, p: Point) -> Option<Structure> {
    let hinges: Vec<u32> = s.joints().iter().filter(|j| j.kind == JointKind::Hinge).map(|j| j.id).collect();
    if hinges.len() < 2 {
        return None;
    }
    let ja = *a.get(&hinges);
    let jb = *b.get(&hinges);
    s.add_binary_unit(ja, jb, p, JointKind::Hinge).ok()
}

use kinenet::nn::{Activation, Architecture, DropoutKey, LayerSpec, Model, Shape, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two conv blocks and a two-layer head on 8x8 RGB inputs; every layer kind
/// of the full network appears.
pub fn miniature(seed: u64, f1: usize, f2: usize) -> Model<f64> {
    let arch = Architecture {
        input: Shape::new(8, 8, 3),
        layers: vec![
            LayerSpec::Conv2D { filters: f1, activation: Activation::Relu },
            LayerSpec::MaxPool2D,
            LayerSpec::Dropout { rate: 0.2 },
            LayerSpec::Conv2D { filters: f2, activation: Activation::Relu },
            LayerSpec::MaxPool2D,
            LayerSpec::Dropout { rate: 0.2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 4, activation: Activation::Relu },
            LayerSpec::Dense { units: 1, activation: Activation::Sigmoid },
        ],
    };
    Model::new(arch, seed).unwrap()
}

pub fn random_batch(seed: u64, n: usize, h: usize, w: usize) -> Tensor4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_vec(n, h, w, 3, (0..n * h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

/// Largest relative error between analytic and central-difference parameter
/// gradients, per parameterized layer, plus the number of coordinates compared.
pub fn gradient_check(seed: u64, f1: usize, f2: usize, h: f64, per_layer: usize) -> Vec<(String, f64, usize)> {
    let mut m = miniature(seed, f1, f2);
    let x = random_batch(1000 + seed, 3, 8, 8);
    let labels = [0.0, 1.0, 1.0];
    let key = DropoutKey { seed, epoch: 1, batch: 2, item: 0 };
    let (_, g) = m.loss_and_gradients(&x, &labels, Some(key)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let mut out = Vec::new();
    for info in m.layers().to_vec() {
        let n = info.param_count();
        if n == 0 {
            continue;
        }
        let (mut worst, mut compared) = (0.0f64, 0usize);
        for _ in 0..per_layer {
            let k = info.offset + rng.gen_range(0..n);
            let orig = m.params()[k];
            m.params_mut()[k] = orig + h;
            let lp = m.loss_and_gradients(&x, &labels, Some(key)).unwrap().0.loss;
            m.params_mut()[k] = orig - h;
            let lm = m.loss_and_gradients(&x, &labels, Some(key)).unwrap().0.loss;
            m.params_mut()[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let scale = fd.abs().max(g[k].abs());
            // inactive units contribute exact zeros on both sides
            if scale < 1e-9 {
                continue;
            }
            // a ReLU or pooling switch inside the stencil makes the loss non-smooth there
            if g[k] == 0.0 {
                continue;
            }
            worst = worst.max((fd - g[k]).abs() / scale);
            compared += 1;
        }
        out.push((info.name.clone(), worst, compared));
    }
    out
}
