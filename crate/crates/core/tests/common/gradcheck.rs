//! Analytic gradients against central finite differences (step 1e-5, f64).

use ecgnet::autograd::{Tape, Var};
use ecgnet::data::{synth_corpus, EcgRecord, Profile, Scheme};
use ecgnet::models::{build, Architecture, ArchitectureSpec, Mode, ModelBundle};
use ecgnet::tensor::{Activation, BnMode, LayerParams, Padding, Pool2d, Tensor};
use ecgnet::train::{collect_grads, record_loss, LossKind};
use ecgnet::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely. A loss summed
/// over thousands of terms carries round-off near 1e-15, which the central
/// difference divides by STEP; conv biases feeding a batch norm have a true
/// gradient of zero and sit entirely in that noise.
pub const FLOOR: f64 = 1e-5;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Values bounded away from zero so a step cannot cross the ReLU kink.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    randn(shape, seed).map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

/// Contracts any output with a fixed random tensor so every element of the
/// output contributes a distinct weight to the scalar.
pub fn project(tape: &mut Tape, y: Var) -> Result<Var> {
    let n = tape.value(y).numel();
    let flat = tape.reshape(y, vec![1, n])?;
    let w = tape.constant(randn(&[1, n], 0x9e01));
    let b = tape.constant(Tensor::zeros(vec![1]));
    let s = tape.dense(flat, w, b)?;
    Ok(tape.sum(s))
}

/// Max relative error over every element of every input.
pub fn check(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let eval = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let root = f(&mut tape, &vars).unwrap();
        tape.value(root).item().unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let root = f(&mut tape, &vars).unwrap();
    tape.backward(root).unwrap();
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let g = tape.grad(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
        for i in 0..x.numel() {
            let mut xs = inputs.to_vec();
            xs[k].make_mut()[i] += STEP;
            let up = eval(&xs);
            xs[k].make_mut()[i] -= 2.0 * STEP;
            let down = eval(&xs);
            worst = worst.max(rel_err(g.data()[i], (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

/// Worst error of each differentiable primitive on small random tensors.
pub fn primitive_errors() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let mut push = |name: String, e: f64| out.push((name, e));

    let x = randn(&[2, 2, 3, 7], 1);
    let w = randn(&[3, 2, 2, 3], 2);
    let b = randn(&[3], 3);
    for (stride, pad) in [((1, 1), Padding::Same), ((1, 2), Padding::Same), ((1, 1), Padding::Valid), ((2, 2), Padding::Valid)] {
        let e = check(&[x.clone(), w.clone(), b.clone()], |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], stride, pad)?;
            project(t, y)
        });
        push(format!("conv2d stride {stride:?} {pad:?}"), e);
    }

    let x = randn(&[2, 2, 3, 9], 4);
    for pool in [Pool2d::floor((1, 2)), Pool2d::floor((3, 4)), Pool2d { window: (1, 2), ceil: true }] {
        let e = check(&[x.clone()], |t, v| {
            let y = t.maxpool(v[0], pool)?;
            project(t, y)
        });
        push(format!("maxpool {:?} ceil={}", pool.window, pool.ceil), e);
        let e = check(&[x.clone()], |t, v| {
            let y = t.avgpool(v[0], pool)?;
            project(t, y)
        });
        push(format!("avgpool {:?} ceil={}", pool.window, pool.ceil), e);
    }
    let e = check(&[x], |t, v| {
        let y = t.adaptive_maxpool_time(v[0])?;
        project(t, y)
    });
    push("adaptive maxpool".into(), e);

    let x = away_from_zero(&[3, 5], 5);
    for kind in [Activation::Relu, Activation::leaky(), Activation::LeakyRelu(0.3)] {
        let e = check(&[x.clone()], |t, v| {
            let y = t.activation(v[0], kind);
            project(t, y)
        });
        push(format!("{kind:?}"), e);
    }

    let x = randn(&[3, 2, 2, 4], 6);
    let gamma = randn(&[2], 7).map(|v| v + 1.5);
    let beta = randn(&[2], 8);
    let mut stats = LayerParams::batchnorm("bn", 2);
    stats.running_mean = Some(Tensor::new(vec![2], vec![0.3, -0.2]).unwrap());
    stats.running_var = Some(Tensor::new(vec![2], vec![1.7, 0.4]).unwrap());
    for mode in [BnMode::Train, BnMode::Infer] {
        let e = check(&[x.clone(), gamma.clone(), beta.clone()], |t, v| {
            let (y, _, _) = t.batchnorm(v[0], v[1], v[2], &stats, mode)?;
            project(t, y)
        });
        push(format!("batchnorm {mode:?}"), e);
    }
    let feats = randn(&[4, 2], 9);
    let e = check(&[feats, gamma, beta], |t, v| {
        let (y, _, _) = t.batchnorm(v[0], v[1], v[2], &stats, BnMode::Train)?;
        project(t, y)
    });
    push("batchnorm over features".into(), e);

    let x = randn(&[3, 4], 10);
    let w = randn(&[5, 4], 11);
    let b = randn(&[5], 12);
    let e = check(&[x.clone(), w, b], |t, v| {
        let y = t.dense(v[0], v[1], v[2])?;
        project(t, y)
    });
    push("dense".into(), e);
    let e = check(&[x.clone()], |t, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = t.dropout(v[0], 0.5, &mut rng)?;
        project(t, y)
    });
    push("dropout (fixed mask)".into(), e);
    for axis in [0, 1] {
        let e = check(&[x.clone()], |t, v| {
            let y = t.softmax(v[0], axis)?;
            project(t, y)
        });
        push(format!("softmax axis {axis}"), e);
    }
    let e = check(&[x.clone()], |t, v| {
        let y = t.sigmoid(v[0]);
        project(t, y)
    });
    push("sigmoid".into(), e);

    let a = randn(&[2, 3], 13);
    let e = check(&[a.clone(), randn(&[2, 4], 14)], |t, v| {
        let y = t.concat(&[v[0], v[1]])?;
        project(t, y)
    });
    push("concat".into(), e);
    let e = check(&[a, randn(&[2, 3], 15)], |t, v| {
        let s = t.add(v[0], v[1])?;
        let s = t.scale(s, -0.7);
        let r = t.reshape(s, vec![3, 2])?;
        project(t, r)
    });
    push("add, scale, reshape".into(), e);
    let e = check(&[randn(&[2, 2, 1, 3], 16)], |t, v| {
        let y = t.flatten(v[0])?;
        project(t, y)
    });
    push("flatten".into(), e);

    let logits = randn(&[3, 4], 17);
    let mut onehot = vec![0.0; 12];
    for (i, k) in [1usize, 3, 0].iter().enumerate() {
        onehot[i * 4 + k] = 1.0;
    }
    let targets = Tensor::new(vec![3, 4], onehot).unwrap();
    let e = check(&[logits.clone()], |t, v| {
        let p = t.softmax(v[0], 1)?;
        t.cross_entropy(p, targets.clone())
    });
    push("cross entropy".into(), e);
    let labels = Tensor::new(vec![3, 4], vec![1., 0., 0., 1., 1., 1., 0., 0., 0., 1., 0., 1.]).unwrap();
    let e = check(&[logits], |t, v| {
        let p = t.sigmoid(v[0]);
        t.bce(p, labels.clone())
    });
    push("binary cross entropy".into(), e);
    out
}

/// Loss and branch fingerprint of one recorded pass with a fixed dropout seed.
fn loss_of(model: &ModelBundle, records: &[&EcgRecord], kind: LossKind) -> (f64, u64) {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (l, _) = record_loss(model, &mut tape, records, kind, BnMode::Train, &mut rng).unwrap();
    (tape.value(l).item().unwrap(), tape.branch_fingerprint())
}

pub struct ArchCheck {
    pub data_seed: u64,
    pub worst: f64,
    pub worst_at: String,
    pub tensors: usize,
    /// Probes redrawn because the step crossed a ReLU or pooling kink.
    pub redrawn: usize,
}

const PROBES_PER_TENSOR: usize = 2;
/// One record per class; batch norm over dense features then yields exactly
/// +-1 per unit, far from the following ReLU kink.
const BATCH: usize = 2;
const MAX_DRAWS: usize = 64;
/// Evaluation points closer than this to an activation kink are skipped:
/// a step of 1e-5 in one weight moves pre-activations by about that much,
/// so the loss would not be differentiable across the probe.
const MIN_MARGIN: f64 = 1e-6;

/// For random coordinates of every parameter tensor, compares the analytic
/// partial derivative with the central difference of the loss. A probe that
/// misses the tolerance is redrawn only when its two ends take different
/// ReLU or max-pool branches than the base pass, since the loss is not
/// differentiable across such a kink; a miss on a kink-free segment is a
/// failure. Dropout masks are fixed by reseeding for every pass.
pub fn architecture_gradient_check(arch: Architecture) -> ArchCheck {
    let spec = ArchitectureSpec::new(arch).with_samples(320).with_seed(5).with_demographics(true);
    let mut model = build(&spec).unwrap();
    model.set_mode(Mode::Train);
    let kind = LossKind::CrossEntropy;

    let (data_seed, records, tape, rec, base) = (8..40)
        .find_map(|seed| {
            let records = synth_corpus(&[Profile::Sr, Profile::WideQrs], Scheme::Binary, BATCH, 320, seed).unwrap();
            let refs: Vec<&EcgRecord> = records.iter().collect();
            let mut tape = Tape::new();
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let (l, rec) = record_loss(&model, &mut tape, &refs, kind, BnMode::Train, &mut rng).unwrap();
            if tape.kink_margin() < MIN_MARGIN {
                return None;
            }
            tape.backward(l).unwrap();
            let base = tape.branch_fingerprint();
            Some((seed, records, tape, rec, base))
        })
        .expect("no evaluation point away from activation kinks");
    let refs: Vec<&EcgRecord> = records.iter().collect();
    let grads = collect_grads(&model, &tape, &rec);
    drop(tape);

    let mut pick = ChaCha8Rng::seed_from_u64(99);
    let mut out = ArchCheck { data_seed, worst: 0.0, worst_at: String::new(), tensors: grads.len(), redrawn: 0 };
    for (gi, g) in grads.iter().enumerate() {
        let (layer, is_bias) = (gi / 2, gi % 2 == 1);
        let name = format!("{}.{}", model.params[layer].name, if is_bias { "bias" } else { "weights" });
        let (mut accepted, mut draws) = (0, 0);
        while accepted < PROBES_PER_TENSOR.min(g.numel()) {
            draws += 1;
            assert!(draws <= MAX_DRAWS, "{arch}: every probe of {name} crossed a kink");
            let i = pick.random_range(0..g.numel());
            let shifted = |delta: f64| {
                let mut m = model.clone();
                let p = &mut m.params[layer];
                let t = if is_bias { &mut p.bias } else { &mut p.weights };
                t.make_mut()[i] += delta;
                loss_of(&m, &refs, kind)
            };
            let ((up, fu), (down, fd)) = (shifted(STEP), shifted(-STEP));
            let e = rel_err(g.data()[i], (up - down) / (2.0 * STEP));
            if e >= TOL && (fu != base || fd != base) {
                out.redrawn += 1;
                continue;
            }
            accepted += 1;
            if e > out.worst {
                out.worst = e;
                out.worst_at = format!("{name}[{i}]");
            }
        }
    }
    out
}
