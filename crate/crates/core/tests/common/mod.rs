//! Independent oracles and check routines shared by the integration tests
//! and the acceptance target. Each check returns a summary value so callers
//! can either assert on it or print it.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use taco_core::analysis::{Granularity, KnnIndex};
use taco_core::corpus::{Corpus, CorpusSpec, DatasetSpec, Sample};
use taco_core::image::{Image, Mask};
use taco_core::model::{EmbeddingRecord, EncoderConfig, Model};
use taco_core::nn::gradcheck::{max_relative_error, relative_error};
use taco_core::nn::{
    global_avg_pool, global_avg_pool_backward, residual_add, BatchNorm2d, Conv2d, L2Normalize, Linear, MaxPool2,
    ParamId, ParamSet, Relu, Tensor4,
};
use taco_core::sampling::{BalancedSampler, CorpusIndex};
use taco_core::seed::Rng;
use taco_core::task_synth::{TaskParams, TaskType, VisualTaskKey};
use taco_core::training::{self_contrastive_loss, sup_contrastive_loss, Aggregation};

pub const EPS: f64 = 1e-3;
/// Probe step for the whole-network check: at `EPS` a perturbed early-layer
/// weight moves enough downstream activations across ReLU and max-pool kinks
/// to bias central differences at the 1e-3 level.
pub const MODEL_EPS: f64 = 1e-5;

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn tensor(rng: &mut Rng, shape: [usize; 4]) -> Tensor4<f64> {
    let n = shape.iter().product();
    Tensor4::from_vec(shape, uniform(rng, n, -1.0, 1.0)).unwrap()
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Contrastive loss oracle: plain double loop, no log-sum-exp shift.

pub fn oracle_loss(z: &[f64], dim: usize, positives: &[Vec<usize>], tau: f64, agg: Aggregation) -> f64 {
    let n = positives.len();
    let s = |i: usize, j: usize| -> f64 { (0..dim).map(|d| z[i * dim + d] * z[j * dim + d]).sum::<f64>() / tau };
    let mut total = 0.0;
    let mut contributing = 0;
    for i in 0..n {
        if positives[i].is_empty() {
            continue;
        }
        let mut denom = 0.0;
        for a in 0..n {
            if a != i {
                denom += s(i, a).exp();
            }
        }
        let mut pos = 0.0;
        for &p in &positives[i] {
            pos += s(i, p);
        }
        total += denom.ln() - pos / positives[i].len() as f64;
        contributing += 1;
    }
    match agg {
        Aggregation::Sum => total,
        Aggregation::Mean => total / contributing as f64,
    }
}

pub fn label_positives(labels: &[usize]) -> Vec<Vec<usize>> {
    (0..labels.len())
        .map(|i| (0..labels.len()).filter(|&p| p != i && labels[p] == labels[i]).collect())
        .collect()
}

/// Random batch with at least one positive pair: `(z, dim, labels, tau)`.
pub fn random_batch(rng: &mut Rng, max_n: usize, max_dim: usize) -> (Vec<f64>, usize, Vec<usize>, f64) {
    let n = rng.gen_range(2..=max_n);
    let dim = rng.gen_range(1..=max_dim);
    let classes = rng.gen_range(1..=n.div_ceil(2).max(1));
    let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    labels[1] = labels[0];
    labels.shuffle(rng);
    let tau = [0.07, 0.1, 0.5, 0.7, 1.0][rng.gen_range(0..5)];
    (uniform(rng, n * dim, -1.0, 1.0), dim, labels, tau)
}

/// Largest absolute deviation between both losses and the oracle over `batches` random batches.
pub fn loss_oracle_deviation(batches: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..batches {
        let (z, dim, labels, tau) = random_batch(&mut rng, 8, 8);
        let n = labels.len();
        for agg in [Aggregation::Mean, Aggregation::Sum] {
            let (r, _) = sup_contrastive_loss(&z, dim, &labels, tau, agg).unwrap();
            worst = worst.max((r.loss - oracle_loss(&z, dim, &label_positives(&labels), tau, agg)).abs());
            let pair_of: Vec<usize> = (0..n).map(|i| (i + 1 + rng.gen_range(0..n - 1)) % n).collect();
            let pos: Vec<Vec<usize>> = pair_of.iter().map(|&p| vec![p]).collect();
            let (r, _) = self_contrastive_loss(&z, dim, &pair_of, tau, agg).unwrap();
            worst = worst.max((r.loss - oracle_loss(&z, dim, &pos, tau, agg)).abs());
        }
    }
    worst
}

/// Largest difference between the two losses on batches where every class has two members.
pub fn reduction_deviation(batches: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..batches {
        let pairs = rng.gen_range(1..=6);
        let n = 2 * pairs;
        let dim = rng.gen_range(1..=8);
        let mut labels: Vec<usize> = (0..n).map(|i| i / 2).collect();
        labels.shuffle(&mut rng);
        let pair_of: Vec<usize> = (0..n).map(|i| (0..n).find(|&j| j != i && labels[j] == labels[i]).unwrap()).collect();
        let z = uniform(&mut rng, n * dim, -1.0, 1.0);
        let tau = rng.gen_range(0.05..1.0);
        for agg in [Aggregation::Mean, Aggregation::Sum] {
            let (a, ga) = sup_contrastive_loss(&z, dim, &labels, tau, agg).unwrap();
            let (b, gb) = self_contrastive_loss(&z, dim, &pair_of, tau, agg).unwrap();
            worst = worst.max((a.loss - b.loss).abs());
            worst = ga.iter().zip(&gb).fold(worst, |w, (x, y)| w.max((x - y).abs()));
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Finite-difference checks. Every op is probed through the scalar objective
// `sum(R * y)` with a fixed random `R`.

fn param_error<F>(ps: &mut ParamSet<f64>, id: ParamId, analytic: &[f64], mut objective: F) -> f64
where
    F: FnMut(&mut ParamSet<f64>) -> f64,
{
    let x = ps.value(id).data().to_vec();
    max_relative_error(&x, analytic, EPS, |p| {
        ps.value_mut(id).data_mut().copy_from_slice(p);
        let v = objective(ps);
        ps.value_mut(id).data_mut().copy_from_slice(&x);
        v
    })
}

pub fn check_conv(rng: &mut Rng) -> f64 {
    let n = rng.gen_range(1..=2);
    let cin = rng.gen_range(1..=3);
    let cout = rng.gen_range(1..=4);
    let k = [1, 3][rng.gen_range(0..2)];
    let stride = rng.gen_range(1..=2);
    let pad = rng.gen_range(0..=k / 2);
    let (h, w) = (rng.gen_range(k..=6), rng.gen_range(k..=6));
    let mut ps = ParamSet::<f64>::new();
    let mut conv = Conv2d::new(&mut ps, "c", cin, cout, k, stride, pad, true, rng);
    let b = conv.bias.unwrap();
    ps.value_mut(b).data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    let x = tensor(rng, [n, cin, h, w]);
    let y = conv.forward(&ps, &x).unwrap();
    let r = tensor(rng, y.shape());
    ps.zero_grads();
    let dx = conv.backward(&mut ps, &r).unwrap();
    let probe = conv.clone();
    let mut worst = max_relative_error(x.data(), dx.data(), EPS, |v| {
        let xt = Tensor4::from_vec(x.shape(), v.to_vec()).unwrap();
        dot(&probe.infer(&ps, &xt).unwrap(), &r)
    });
    for id in [conv.weight, b] {
        let g = ps.grad(id).data().to_vec();
        worst = worst.max(param_error(&mut ps, id, &g, |ps| dot(&probe.infer(ps, &x).unwrap(), &r)));
    }
    worst
}

pub fn check_batchnorm(rng: &mut Rng) -> f64 {
    let shape = [rng.gen_range(2..=4), rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=4)];
    let mut ps = ParamSet::<f64>::new();
    let mut bn = BatchNorm2d::new(&mut ps, "bn", shape[1]);
    for id in [bn.gamma, bn.beta] {
        ps.value_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
    }
    let x = tensor(rng, shape);
    let y = bn.forward(&mut ps, &x).unwrap();
    let r = tensor(rng, y.shape());
    ps.zero_grads();
    let dx = bn.backward(&mut ps, &r).unwrap();
    let mut probe = bn.clone();
    let mut worst = max_relative_error(x.data(), dx.data(), EPS, |v| {
        let xt = Tensor4::from_vec(shape, v.to_vec()).unwrap();
        dot(&probe.forward(&mut ps, &xt).unwrap(), &r)
    });
    for id in [bn.gamma, bn.beta] {
        let g = ps.grad(id).data().to_vec();
        worst = worst.max(param_error(&mut ps, id, &g, |ps| dot(&probe.forward(ps, &x).unwrap(), &r)));
    }
    worst
}

pub fn check_relu(rng: &mut Rng) -> f64 {
    let shape = [rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=4)];
    let len: usize = shape.iter().product();
    // Keep inputs away from the kink so central differences are exact.
    let data = (0..len)
        .map(|_| rng.gen_range(0.05..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let x = Tensor4::from_vec(shape, data).unwrap();
    let mut relu = Relu::default();
    let y = relu.forward(&x);
    let r = tensor(rng, y.shape());
    let dx = relu.backward(&r).unwrap();
    max_relative_error(x.data(), dx.data(), EPS, |v| {
        dot(&Relu::infer(&Tensor4::from_vec(shape, v.to_vec()).unwrap()), &r)
    })
}

pub fn check_maxpool(rng: &mut Rng) -> f64 {
    let shape = [rng.gen_range(1..=2), rng.gen_range(1..=3), 2 * rng.gen_range(1..=3), 2 * rng.gen_range(1..=3)];
    let len: usize = shape.iter().product();
    // Distinct values spaced well beyond the probe step.
    let mut values: Vec<f64> = (0..len).map(|i| i as f64 * 0.01).collect();
    values.shuffle(rng);
    let x = Tensor4::from_vec(shape, values).unwrap();
    let mut pool = MaxPool2::default();
    let y = pool.forward(&x).unwrap();
    let r = tensor(rng, y.shape());
    let dx = pool.backward(&r).unwrap();
    max_relative_error(x.data(), dx.data(), EPS, |v| {
        dot(&MaxPool2::infer(&Tensor4::from_vec(shape, v.to_vec()).unwrap()).unwrap(), &r)
    })
}

pub fn check_gap(rng: &mut Rng) -> f64 {
    let shape = [rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=5), rng.gen_range(1..=5)];
    let x = tensor(rng, shape);
    let y = global_avg_pool(&x);
    let r = tensor(rng, y.shape());
    let dx = global_avg_pool_backward(&r, shape).unwrap();
    max_relative_error(x.data(), dx.data(), EPS, |v| {
        dot(&global_avg_pool(&Tensor4::from_vec(shape, v.to_vec()).unwrap()), &r)
    })
}

pub fn check_residual(rng: &mut Rng) -> f64 {
    let shape = [rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=4)];
    let (a, b) = (tensor(rng, shape), tensor(rng, shape));
    let r = tensor(rng, shape);
    // d(sum(R * (a + b)))/da = R
    let ea = max_relative_error(a.data(), r.data(), EPS, |v| {
        dot(&residual_add(&Tensor4::from_vec(shape, v.to_vec()).unwrap(), &b).unwrap(), &r)
    });
    let eb = max_relative_error(b.data(), r.data(), EPS, |v| {
        dot(&residual_add(&a, &Tensor4::from_vec(shape, v.to_vec()).unwrap()).unwrap(), &r)
    });
    ea.max(eb)
}

pub fn check_linear(rng: &mut Rng) -> f64 {
    let (n, fin, fout) = (rng.gen_range(1..=4), rng.gen_range(1..=6), rng.gen_range(1..=5));
    let mut ps = ParamSet::<f64>::new();
    let mut lin = Linear::new(&mut ps, "fc", fin, fout, rng);
    let bias = lin.bias;
    ps.value_mut(bias).data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    let x = tensor(rng, [n, fin, 1, 1]);
    let y = lin.forward(&ps, &x).unwrap();
    let r = tensor(rng, y.shape());
    ps.zero_grads();
    let dx = lin.backward(&mut ps, &r).unwrap();
    let probe = lin.clone();
    let mut worst = max_relative_error(x.data(), dx.data(), EPS, |v| {
        dot(&probe.infer(&ps, &Tensor4::from_vec(x.shape(), v.to_vec()).unwrap()).unwrap(), &r)
    });
    for id in [lin.weight, lin.bias] {
        let g = ps.grad(id).data().to_vec();
        worst = worst.max(param_error(&mut ps, id, &g, |ps| dot(&probe.infer(ps, &x).unwrap(), &r)));
    }
    worst
}

pub fn check_l2(rng: &mut Rng) -> f64 {
    let shape = [rng.gen_range(1..=4), rng.gen_range(1..=6), 1, 1];
    let x = tensor(rng, shape);
    let mut l2 = L2Normalize::default();
    let y = l2.forward(&x);
    let r = tensor(rng, y.shape());
    let dx = l2.backward(&r).unwrap();
    max_relative_error(x.data(), dx.data(), EPS, |v| {
        dot(&L2Normalize::infer(&Tensor4::from_vec(shape, v.to_vec()).unwrap()), &r)
    })
}

/// Rows scaled to unit length, the regime the losses see behind the projector.
pub fn unit_rows(mut z: Vec<f64>, dim: usize) -> Vec<f64> {
    for row in z.chunks_exact_mut(dim) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|v| *v /= n);
    }
    z
}

/// Loss gradient check regime. The central-difference truncation error of the
/// losses grows like `eps^2 / tau^3`, so the default temperature is probed
/// with a proportionally finer step on unit rows.
#[derive(Clone, Copy, Debug)]
pub struct LossProbe {
    pub taus: &'static [f64],
    pub eps: f64,
    pub unit: bool,
}

pub const LOSS_PROBE: LossProbe = LossProbe {
    taus: &[0.5, 0.7, 1.0],
    eps: EPS,
    unit: false,
};

pub const LOSS_PROBE_SHARP: LossProbe = LossProbe {
    taus: &[0.07],
    eps: 1e-5,
    unit: true,
};

fn loss_batch(rng: &mut Rng, probe: LossProbe) -> (Vec<f64>, usize, Vec<usize>, f64) {
    let (z, dim, labels, _) = random_batch(rng, 8, 8);
    let tau = probe.taus[rng.gen_range(0..probe.taus.len())];
    let z = if probe.unit { unit_rows(z, dim) } else { z };
    (z, dim, labels, tau)
}

pub fn check_self_loss(rng: &mut Rng, probe: LossProbe) -> f64 {
    let (z, dim, labels, tau) = loss_batch(rng, probe);
    let n = labels.len();
    let pair_of: Vec<usize> = (0..n).map(|i| (i + 1 + rng.gen_range(0..n - 1)) % n).collect();
    let (_, g) = self_contrastive_loss(&z, dim, &pair_of, tau, Aggregation::Mean).unwrap();
    max_relative_error(&z, &g, probe.eps, |v| {
        self_contrastive_loss(v, dim, &pair_of, tau, Aggregation::Mean).unwrap().0.loss
    })
}

pub fn check_sup_loss(rng: &mut Rng, probe: LossProbe) -> f64 {
    let (z, dim, labels, tau) = loss_batch(rng, probe);
    let (_, g) = sup_contrastive_loss(&z, dim, &labels, tau, Aggregation::Mean).unwrap();
    max_relative_error(&z, &g, probe.eps, |v| {
        sup_contrastive_loss(v, dim, &labels, tau, Aggregation::Mean).unwrap().0.loss
    })
}

pub fn tiny_config(in_channels: usize, side: usize) -> EncoderConfig {
    EncoderConfig {
        input_side: side,
        in_channels,
        widths: vec![3, 4],
        blocks_per_stage: 1,
        feature_dim: 8,
        projector_hidden: 6,
        projector_dim: 4,
        ..EncoderConfig::default()
    }
}

/// Zero biases put all-zero feature rows exactly on a ReLU kink and zero
/// projection rows on the non-differentiable point of l2 normalization.
pub fn randomize_projector_biases(model: &mut Model<f64>, rng: &mut Rng) {
    for name in ["projector.fc1.bias", "projector.fc2.bias"] {
        let bias = model.params.id(name).unwrap();
        model.params.value_mut(bias).data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.2..0.5));
    }
}

/// Gradient of the supervised loss through projector and l2 normalization,
/// with respect to the encoder features.
pub fn check_projector_chain(rng: &mut Rng, probe: LossProbe) -> f64 {
    let mut model = Model::<f64>::new(tiny_config(6, 8), rng.gen()).unwrap();
    randomize_projector_biases(&mut model, rng);
    let n = rng.gen_range(3..=6);
    let f = Tensor4::from_vec([n, 8, 1, 1], uniform(rng, n * 8, 0.0, 1.0)).unwrap();
    let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    labels[1] = labels[0];
    let tau = probe.taus[rng.gen_range(0..probe.taus.len())];
    let dim = model.config().projector_dim;
    let z = model.project_train(&f).unwrap();
    let (_, g) = sup_contrastive_loss(z.data(), dim, &labels, tau, Aggregation::Mean).unwrap();
    model.params.zero_grads();
    let df = model.project_backward(&Tensor4::from_vec(z.shape(), g).unwrap()).unwrap();
    let frozen = model.clone();
    let (worst, skipped) = kink_free_error(f.data(), df.data(), probe.eps, |v| {
        let z = frozen.project(&Tensor4::from_vec(f.shape(), v.to_vec()).unwrap()).unwrap();
        sup_contrastive_loss(z.data(), dim, &labels, tau, Aggregation::Mean).unwrap().0.loss
    });
    assert!(2 * skipped <= f.len(), "{skipped} of {} coordinates sit near a kink", f.len());
    worst
}

/// Worst relative error over the coordinates of `x` whose probe interval is
/// free of kinks, plus the number of coordinates skipped.
pub fn kink_free_error(x: &[f64], analytic: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> (f64, usize) {
    let base = f(x);
    let mut v = x.to_vec();
    let (mut worst, mut skipped) = (0.0f64, 0);
    for (j, &a) in analytic.iter().enumerate() {
        let mut at = |h: f64| {
            v[j] = x[j] + h;
            let plus = f(&v);
            v[j] = x[j] - h;
            let minus = f(&v);
            v[j] = x[j];
            (plus, minus)
        };
        let (plus, minus) = at(eps);
        let (plus_half, minus_half) = at(eps / 2.0);
        if kinked(base, (plus, minus), (plus_half, minus_half), eps) {
            skipped += 1;
            continue;
        }
        worst = worst.max(relative_error(a, (plus - minus) / (2.0 * eps)));
    }
    (worst, skipped)
}

/// Either the one-sided differences disagree (kink at the probe point) or
/// central differences at `eps` and `eps / 2` do (kink inside the interval).
fn kinked(base: f64, full: (f64, f64), half: (f64, f64), eps: f64) -> bool {
    let central = (full.0 - full.1) / (2.0 * eps);
    let central_half = (half.0 - half.1) / eps;
    let one_sided = ((full.0 - base) / eps, (base - full.1) / eps);
    relative_error(central, central_half) > 5e-4 || relative_error(one_sided.0, one_sided.1) > 0.02
}

/// End-to-end check of the whole training graph (residual blocks included)
/// on sampled parameter coordinates. Returns the worst relative error and the
/// number of coordinates skipped because the probe crossed a ReLU or max-pool
/// kink.
pub fn check_model(rng: &mut Rng, coords: usize) -> (f64, usize) {
    check_model_with(rng, coords, 16, 4, MODEL_EPS)
}

pub fn check_model_with(rng: &mut Rng, coords: usize, side: usize, n: usize, eps: f64) -> (f64, usize) {
    let mut model = Model::<f64>::new(tiny_config(6, side), rng.gen()).unwrap();
    randomize_projector_biases(&mut model, rng);
    let x = Tensor4::from_vec([n, 6, side, side], uniform(rng, n * 6 * side * side, 0.0, 1.0)).unwrap();
    let z = model.forward_train(&x).unwrap();
    let r = tensor(rng, z.shape());
    model.params.zero_grads();
    model.project_backward(&r).map(|df| model.encode_backward(&df)).unwrap().unwrap();
    let mut probe = model.clone();
    let objective = |m: &mut Model<f64>| dot(&m.forward_train(&x).unwrap(), &r);
    let base = objective(&mut probe);
    let ids: Vec<ParamId> = model
        .params
        .entries()
        .iter()
        .filter(|e| e.trainable)
        .map(|e| model.params.id(&e.name).unwrap())
        .collect();
    let (mut worst, mut skipped) = (0.0f64, 0);
    for _ in 0..coords {
        let id = ids[rng.gen_range(0..ids.len())];
        let j = rng.gen_range(0..model.params.value(id).len());
        let analytic = model.params.grad(id).data()[j];
        let orig = probe.params.value(id).data()[j];
        let mut probe_at = |h: f64| {
            probe.params.value_mut(id).data_mut()[j] = orig + h;
            let plus = objective(&mut probe);
            probe.params.value_mut(id).data_mut()[j] = orig - h;
            let minus = objective(&mut probe);
            probe.params.value_mut(id).data_mut()[j] = orig;
            (plus, minus)
        };
        let full = probe_at(eps);
        if kinked(base, full, probe_at(eps / 2.0), eps) {
            skipped += 1;
            continue;
        }
        worst = worst.max(relative_error(analytic, (full.0 - full.1) / (2.0 * eps)));
    }
    (worst, skipped)
}

// ---------------------------------------------------------------------------
// Sampling.

/// Index over one fake dataset whose visual tasks have the given sizes.
pub fn sized_index(sizes: &[usize]) -> CorpusIndex {
    let placeholder = |i: usize| Sample {
        image: Image::new(1, 1),
        mask: Mask::new(1, 1),
        dataset_id: "d".into(),
        sample_id: format!("s{i}"),
    };
    let corpus = Arc::new(Corpus {
        datasets: Vec::new(),
        samples: (0..sizes.iter().copied().max().unwrap_or(0)).map(placeholder).collect(),
    });
    let entries = sizes
        .iter()
        .enumerate()
        .map(|(t, &s)| (VisualTaskKey::new(TaskType::ALL[t], format!("d{t}")), (0..s).collect()))
        .collect();
    CorpusIndex::from_entries(corpus, TaskParams::default(), entries).unwrap()
}

/// Per-task draw frequencies over `draws` draws, in index order.
pub fn draw_frequencies(index: &CorpusIndex, draws: usize, seed: u64) -> Vec<f64> {
    let sampler = BalancedSampler::new(index).unwrap();
    let mut rng = rng(seed);
    let mut counts = vec![0usize; index.len()];
    for _ in 0..draws {
        counts[sampler.draw(&mut rng).0] += 1;
    }
    counts.iter().map(|&c| c as f64 / draws as f64).collect()
}

// ---------------------------------------------------------------------------
// kNN oracle: exhaustive scan with an explicit vote table.

pub fn oracle_knn(query: &[f32], reference: &[EmbeddingRecord], k: usize, granularity: Granularity) -> String {
    let cos = |u: &[f32], v: &[f32]| -> f64 {
        let mut uv = 0.0;
        let mut uu = 0.0;
        let mut vv = 0.0;
        for i in 0..u.len() {
            uv += u[i] as f64 * v[i] as f64;
            uu += u[i] as f64 * u[i] as f64;
            vv += v[i] as f64 * v[i] as f64;
        }
        1.0 - uv / (uu.sqrt() * vv.sqrt())
    };
    let mut scored: Vec<(f64, String)> = reference.iter().map(|r| (cos(query, &r.vector), granularity.label(r))).collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    let mut votes: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for (d, l) in scored.into_iter().take(k) {
        let e = votes.entry(l).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += d;
    }
    let mut best: Option<(String, usize, f64)> = None;
    for (l, (c, s)) in votes {
        let better = match &best {
            None => true,
            Some((_, bc, bs)) => c > *bc || (c == *bc && s < *bs),
        };
        if better {
            best = Some((l, c, s));
        }
    }
    best.unwrap().0
}

pub fn random_records(rng: &mut Rng, n: usize, dim: usize, prefix: &str) -> Vec<EmbeddingRecord> {
    let tasks = [TaskType::Identity, TaskType::Invert, TaskType::Rotate90, TaskType::Segmentation];
    (0..n)
        .map(|i| EmbeddingRecord {
            vector: (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
            key: VisualTaskKey::new(tasks[rng.gen_range(0..tasks.len())], format!("d{}", rng.gen_range(0..3))),
            sample_id: format!("{prefix}{i}"),
            split: taco_core::corpus::Split::Test,
            is_failure: false,
            seen_task: rng.gen_bool(0.7),
            seen_dataset: rng.gen_bool(0.7),
        })
        .collect()
}

/// Number of `(query, k, granularity)` predictions differing from the oracle
/// over `corpora` random reference sets of up to 1,000 records.
pub fn knn_disagreements(corpora: usize, seed: u64) -> (usize, usize) {
    let mut rng = rng(seed);
    let (mut bad, mut total) = (0, 0);
    for c in 0..corpora {
        let dim = rng.gen_range(2..=16);
        let n = rng.gen_range(5..=1000);
        let reference = random_records(&mut rng, n, dim, &format!("r{c}_"));
        let queries = random_records(&mut rng, 25, dim, &format!("q{c}_"));
        let index = KnnIndex::new(&reference).unwrap();
        for g in Granularity::ALL {
            for q in &queries {
                let got = index.classify(q, &[1, 3, 5], g).unwrap();
                for (i, k) in [1, 3, 5].into_iter().enumerate() {
                    total += 1;
                    if got[i] != oracle_knn(&q.vector, &reference, k, g) {
                        bad += 1;
                    }
                }
            }
        }
    }
    (bad, total)
}

// ---------------------------------------------------------------------------
// Raster oracles.

pub fn brute_force_edt(fg: &[bool], h: usize, w: usize) -> Vec<f64> {
    let pts: Vec<(usize, usize)> = (0..h * w).filter(|&i| fg[i]).map(|i| (i / w, i % w)).collect();
    (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            pts.iter()
                .map(|&(py, px)| {
                    let dy = py as f64 - y as f64;
                    let dx = px as f64 - x as f64;
                    (dy * dy + dx * dx).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn random_image(rng: &mut Rng, h: usize, w: usize) -> Image {
    Image::from_vec(h, w, (0..h * w * 3).map(|_| rng.gen_range(0.0f32..1.0)).collect()).unwrap()
}

pub fn random_blob_mask(rng: &mut Rng, h: usize, w: usize, blobs: usize) -> Mask {
    let mut m = Mask::new(h, w);
    for b in 0..blobs {
        let (cy, cx) = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
        let (ry, rx) = (rng.gen_range(2.0..h as f64 / 3.0), rng.gen_range(2.0..w as f64 / 3.0));
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                if dy * dy + dx * dx <= 1.0 {
                    m.set(y, x, 1 + (b % 2) as u8);
                }
            }
        }
    }
    m
}

pub fn small_corpus(seed: u64, samples: usize, side: usize) -> Corpus {
    let spec = CorpusSpec {
        datasets: vec![
            DatasetSpec::new("alpha", side, samples),
            DatasetSpec {
                grayscale: true,
                ..DatasetSpec::new("beta", side, samples)
            },
        ],
        seed,
    };
    taco_core::corpus::generate_synthetic_corpus(&spec).unwrap()
}

pub fn sample_refs(corpus: &Corpus) -> Vec<&Sample> {
    corpus.samples.iter().collect()
}
