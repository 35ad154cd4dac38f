#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikedisc::tensor::BatchNormStats;
use spikedisc::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Norm-wise relative error `|a - b| / max(|a| + |b|, 1e-12)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

/// Builds a scalar from the inputs on the given tape.
pub type Graph<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

fn eval(f: &Graph<'_>, inputs: &[Tensor], relaxed: bool) -> f64 {
    let mut tape = if relaxed { Tape::relaxed() } else { Tape::new() };
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.value(out).item()
}

/// Compares reverse-mode gradients of every input with central finite
/// differences. Returns the worst relative error over the inputs.
pub fn gradcheck(f: &Graph<'_>, inputs: &[Tensor], relaxed: bool) -> f64 {
    let mut tape = if relaxed { Tape::relaxed() } else { Tape::new() };
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (k, (v, x)) in vars.iter().zip(inputs).enumerate() {
        let analytic = grads.get_or_zeros(*v, x.shape());
        let mut numeric = vec![0.0; x.numel()];
        for i in 0..x.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            numeric[i] = (eval(f, &plus, relaxed) - eval(f, &minus, relaxed)) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_err(analytic.data(), &numeric));
    }
    worst
}

/// Contracts any tensor with fixed random weights so its gradient is
/// non-trivial: `sum(x * r)`.
pub fn probe(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let mut r = rng(seed);
    let n = tape.value(x).numel();
    let w: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let y = tape.mul_const(x, w).unwrap();
    tape.sum(y)
}

/// One named gradient case: graph and inputs.
pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub relaxed: bool,
    pub graph: Box<Graph<'static>>,
}

/// Gradient cases for every differentiable op.
pub fn op_cases() -> Vec<Case> {
    let mut r = rng(7);
    let mut cases = Vec::new();
    let mut add = |name, inputs, graph: Box<Graph<'static>>| cases.push(Case { name, inputs, relaxed: false, graph });

    add("matmul", vec![uniform(&[3, 4], -1.0, 1.0, &mut r), uniform(&[4, 2], -1.0, 1.0, &mut r)], Box::new(|t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        probe(t, y, 1)
    }));
    add("conv2d stride 1 pad 1", vec![uniform(&[2, 2, 5, 5], -1.0, 1.0, &mut r), uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut r)], Box::new(|t, v| {
        let y = t.conv2d(v[0], v[1], 1, 1).unwrap();
        probe(t, y, 2)
    }));
    add("conv2d stride 2 pad 0", vec![uniform(&[2, 2, 6, 5], -1.0, 1.0, &mut r), uniform(&[2, 2, 1, 1], -1.0, 1.0, &mut r)], Box::new(|t, v| {
        let y = t.conv2d(v[0], v[1], 2, 0).unwrap();
        probe(t, y, 3)
    }));
    add(
        "batch norm train (B,C,H,W)",
        vec![uniform(&[3, 2, 2, 2], -1.0, 1.0, &mut r), uniform(&[2], 0.5, 1.5, &mut r), uniform(&[2], -0.5, 0.5, &mut r)],
        Box::new(|t, v| {
            let mut stats = BatchNormStats::new(2);
            let y = t.batch_norm(v[0], v[1], v[2], &mut stats, true).unwrap();
            probe(t, y, 4)
        }),
    );
    add(
        "batch norm train (B,F)",
        vec![uniform(&[4, 3], -1.0, 1.0, &mut r), uniform(&[3], 0.5, 1.5, &mut r), uniform(&[3], -0.5, 0.5, &mut r)],
        Box::new(|t, v| {
            let mut stats = BatchNormStats::new(3);
            let y = t.batch_norm(v[0], v[1], v[2], &mut stats, true).unwrap();
            probe(t, y, 5)
        }),
    );
    add(
        "batch norm eval",
        vec![uniform(&[3, 2, 2, 2], -1.0, 1.0, &mut r), uniform(&[2], 0.5, 1.5, &mut r), uniform(&[2], -0.5, 0.5, &mut r)],
        Box::new(|t, v| {
            let mut stats = BatchNormStats { mean: vec![0.2, -0.1], var: vec![0.5, 2.0] };
            let y = t.batch_norm(v[0], v[1], v[2], &mut stats, false).unwrap();
            probe(t, y, 6)
        }),
    );
    // Distinct, well separated values keep every pooling window's argmax
    // stable under the finite-difference step.
    let pool_in = {
        let mut vals: Vec<f64> = (0..2 * 2 * 4 * 4).map(|i| i as f64 * 0.1).collect();
        let mut rr = rng(11);
        for i in (1..vals.len()).rev() {
            vals.swap(i, rr.random_range(0..=i));
        }
        Tensor::new(vec![2, 2, 4, 4], vals).unwrap()
    };
    add("max pool 2x2", vec![pool_in], Box::new(|t, v| {
        let y = t.max_pool2d(v[0], 2).unwrap();
        probe(t, y, 7)
    }));
    add("global average pool", vec![uniform(&[2, 3, 3, 2], -1.0, 1.0, &mut r)], Box::new(|t, v| {
        let y = t.global_avg_pool(v[0]).unwrap();
        probe(t, y, 8)
    }));
    add("dropout (eval identity and train mask)", vec![uniform(&[3, 4], -1.0, 1.0, &mut r)], Box::new(|t, v| {
        let mut mr = rng(9);
        let mask = spikedisc::layers::dropout_mask(12, 0.5, &mut mr);
        let y = t.mul_const(v[0], mask).unwrap();
        let z = t.add(y, v[0]).unwrap();
        probe(t, z, 9)
    }));
    add(
        "l2 head",
        vec![uniform(&[3, 5], 0.1, 1.0, &mut r), uniform(&[5, 4], -1.0, 1.0, &mut r)],
        Box::new(|t, v| {
            let (z, _) = t.l2_normalize(v[0], 1, false).unwrap();
            let (w, _) = t.l2_normalize(v[1], 0, false).unwrap();
            let cos = t.matmul(z, w).unwrap();
            let y = t.clamp_unit(cos);
            probe(t, y, 10)
        }),
    );
    add("mse count loss", vec![uniform(&[3, 4], 0.0, 8.0, &mut r)], Box::new(|t, v| {
        let target = spikedisc::loss::spike_targets(&[0, 3, 1], &spikedisc::loss::RateTargets::new(0.9, 0.1, 8).unwrap(), 4).unwrap();
        t.mse(v[0], &target).unwrap()
    }));
    add(
        "bias, concat, transpose, reshape",
        vec![uniform(&[2, 3], -1.0, 1.0, &mut r), uniform(&[2, 2], -1.0, 1.0, &mut r), uniform(&[5], -1.0, 1.0, &mut r)],
        Box::new(|t, v| {
            let c = t.concat(&[v[0], v[1]]).unwrap();
            let b = t.add_bias(c, v[2]).unwrap();
            let tr = t.transpose(b).unwrap();
            let y = t.reshape(tr, &[10]).unwrap();
            probe(t, y, 11)
        }),
    );
    add(
        "row stack and split",
        vec![uniform(&[2, 3, 2], -1.0, 1.0, &mut r), uniform(&[1, 3, 2], -1.0, 1.0, &mut r)],
        Box::new(|t, v| {
            let s = t.stack_rows(&[v[0], v[1], v[0]]).unwrap();
            let parts = t.split_rows(s, 5).unwrap();
            let mid = t.slice_rows(s, 1, 3).unwrap();
            let a = probe(t, parts[4], 12);
            let b = probe(t, mid, 13);
            t.add(a, b).unwrap()
        }),
    );
    cases
}
