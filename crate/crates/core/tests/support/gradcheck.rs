//! Central finite-difference checks of every layer's backward pass.

use std::collections::BTreeMap;

use cfos_core::nn::{bce_loss, LayerKind, LayerSpec, ModelParams, Network, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
pub const DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Default)]
pub struct GradReport {
    pub configs: usize,
    pub compared: usize,
    pub worst: f64,
    pub worst_by_kind: BTreeMap<&'static str, f64>,
    pub configs_by_kind: BTreeMap<&'static str, usize>,
}

pub const KINDS: [&str; 9] = [
    "conv3x3", "conv1x1", "maxpool2", "upconv2", "upsample2", "relu", "sigmoid", "concat",
    "sigmoid+bce",
];

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(DENOM_FLOOR)
}

fn random_tensor(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor4<f64> {
    let n = dims.iter().product();
    Tensor4::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn randomize(model: &mut ModelParams<f64>, rng: &mut ChaCha8Rng) {
    for p in &mut model.params {
        for v in p.weights.iter_mut().chain(p.bias.iter_mut()) {
            *v = rng.random_range(-1.0..1.0);
        }
    }
}

fn weighted_sum(model: &ModelParams<f64>, x: &Tensor4<f64>, w: &Tensor4<f64>) -> f64 {
    let y = model.forward(x).unwrap();
    y.values().iter().zip(w.values()).map(|(a, b)| a * b).sum()
}

/// Compares analytic gradients of `loss` with central differences over every
/// input element and parameter. Returns the worst relative error and count.
fn compare(
    model: &ModelParams<f64>,
    x: &Tensor4<f64>,
    analytic_params: &[cfos_core::nn::LayerParams<f64>],
    analytic_input: Option<&Tensor4<f64>>,
    loss: &dyn Fn(&ModelParams<f64>, &Tensor4<f64>) -> f64,
) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    if let Some(gi) = analytic_input {
        for k in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.values_mut()[k] += STEP;
            xm.values_mut()[k] -= STEP;
            let n = (loss(model, &xp) - loss(model, &xm)) / (2.0 * STEP);
            worst = worst.max(rel(gi.values()[k], n));
            count += 1;
        }
    }
    for l in 0..model.params.len() {
        for bias in [false, true] {
            let len = if bias {
                model.params[l].bias.len()
            } else {
                model.params[l].weights.len()
            };
            for k in 0..len {
                let mut mp = model.clone();
                let mut mm = model.clone();
                let (vp, vm) = if bias {
                    (&mut mp.params[l].bias[k], &mut mm.params[l].bias[k])
                } else {
                    (&mut mp.params[l].weights[k], &mut mm.params[l].weights[k])
                };
                *vp += STEP;
                *vm -= STEP;
                let n = (loss(&mp, x) - loss(&mm, x)) / (2.0 * STEP);
                let a = if bias {
                    analytic_params[l].bias[k]
                } else {
                    analytic_params[l].weights[k]
                };
                worst = worst.max(rel(a, n));
                count += 1;
            }
        }
    }
    (worst, count)
}

/// Smallest distance of any pre-activation from a ReLU kink, or of any
/// pooling window's winner from its runner-up.
fn kink_margin(kind: &str, x: &Tensor4<f64>) -> f64 {
    match kind {
        "relu" => x.values().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min),
        "maxpool2" => {
            let [b, h, w, c] = x.dims();
            let mut m = f64::INFINITY;
            for n in 0..b {
                for y in (0..h).step_by(2) {
                    for xx in (0..w).step_by(2) {
                        for ch in 0..c {
                            let mut v = [
                                x.at(n, y, xx, ch),
                                x.at(n, y, xx + 1, ch),
                                x.at(n, y + 1, xx, ch),
                                x.at(n, y + 1, xx + 1, ch),
                            ];
                            v.sort_by(|a, b| b.total_cmp(a));
                            m = m.min(v[0] - v[1]);
                        }
                    }
                }
            }
            m
        }
        _ => f64::INFINITY,
    }
}

fn one_config(kind: &'static str, rng: &mut ChaCha8Rng) -> (f64, usize) {
    let batch = rng.random_range(1..=2);
    let cin = rng.random_range(1..=3);
    let cout = rng.random_range(1..=3);
    let half = |rng: &mut ChaCha8Rng| rng.random_range(1..=3) * 2;
    let (layers, dims) = match kind {
        "conv3x3" => (vec![LayerSpec::conv3x3(cin, cout)], [batch, rng.random_range(1..=5), rng.random_range(1..=5), cin]),
        "conv1x1" => (vec![LayerSpec::conv1x1(cin, cout)], [batch, rng.random_range(1..=5), rng.random_range(1..=5), cin]),
        "maxpool2" => (vec![LayerSpec::maxpool2(cin)], [batch, half(rng), half(rng), cin]),
        "upconv2" => (vec![LayerSpec::upconv2(cin, cout)], [batch, rng.random_range(1..=4), rng.random_range(1..=4), cin]),
        "upsample2" => (vec![LayerSpec::upsample2(cin)], [batch, rng.random_range(1..=4), rng.random_range(1..=4), cin]),
        "relu" => (vec![LayerSpec::relu(cin)], [batch, rng.random_range(1..=5), rng.random_range(1..=5), cin]),
        "sigmoid" => (vec![LayerSpec::sigmoid(cin)], [batch, rng.random_range(1..=5), rng.random_range(1..=5), cin]),
        "concat" => (
            vec![
                LayerSpec::conv1x1(cin, cout),
                LayerSpec::conv1x1(cout, 2),
                LayerSpec::concat(2, 0, cout),
            ],
            [batch, rng.random_range(1..=4), rng.random_range(1..=4), cin],
        ),
        "sigmoid+bce" => (
            vec![LayerSpec::conv3x3(cin, 1), LayerSpec::sigmoid(1)],
            [batch, rng.random_range(1..=4), rng.random_range(1..=4), cin],
        ),
        other => panic!("unknown kind {other}"),
    };
    let mut model = ModelParams::<f64>::zeros(layers, 0).unwrap();
    randomize(&mut model, rng);
    let x = loop {
        let x = random_tensor(rng, dims);
        if kink_margin(kind, &x) > 20.0 * STEP {
            break x;
        }
    };
    let mut net = Network::new(model.clone());
    if kind == "sigmoid+bce" {
        let out = model.forward(&x).unwrap().dims();
        let n = out.iter().product();
        let t = Tensor4::from_vec(out, (0..n).map(|_| f64::from(rng.random_bool(0.5) as u8)).collect())
            .unwrap();
        let (_, grads) = net.loss_and_gradients(&x, &t).unwrap();
        let loss = move |m: &ModelParams<f64>, x: &Tensor4<f64>| bce_loss(&m.forward(x).unwrap(), &t).unwrap();
        return compare(&model, &x, &grads, None, &loss);
    }
    let out = net.forward(&x).unwrap().clone();
    let w = random_tensor(rng, out.dims());
    let back = net.backward(&w).unwrap();
    let loss = move |m: &ModelParams<f64>, x: &Tensor4<f64>| weighted_sum(m, x, &w);
    compare(&model, &x, &back.params, Some(&back.input), &loss)
}

/// Runs `configs` random configurations cycling through every layer kind.
pub fn run(configs: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport::default();
    for i in 0..configs {
        let kind = KINDS[i % KINDS.len()];
        let (worst, count) = one_config(kind, &mut rng);
        report.configs += 1;
        report.compared += count;
        report.worst = report.worst.max(worst);
        let e = report.worst_by_kind.entry(kind).or_insert(0.0);
        *e = e.max(worst);
        *report.configs_by_kind.entry(kind).or_insert(0) += 1;
    }
    report
}

/// Every layer kind the network supports, so a new kind cannot slip past the check.
pub fn covers_all_kinds() -> bool {
    let names = [
        LayerKind::Conv3x3,
        LayerKind::Conv1x1,
        LayerKind::MaxPool2,
        LayerKind::UpConv2,
        LayerKind::Upsample2,
        LayerKind::Relu,
        LayerKind::Sigmoid,
        LayerKind::Concat { skip: 0 },
    ]
    .map(|k| k.name());
    names.iter().all(|n| KINDS.contains(n))
}
