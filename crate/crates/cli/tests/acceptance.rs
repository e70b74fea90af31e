//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). `FANET_ACCEPTANCE=1,4,9`
//! restricts the run to the listed criteria.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fanet::data::{generate_synthetic, Sample, SyntheticSpec};
use fanet::experiment::{run_ablation, EvalConfig};
use fanet::inference::{binarize, initial_mask, iterative_predict, InferenceOptions};
use fanet::mask_codec::{otsu_threshold, rle_decode, rle_encode, BinaryMask, GrayImage};
use fanet::metrics::{confusion, metric_suite, ConfusionCounts, MetricSuite};
use fanet::model::{apply_hard_attention, count_parameters, Ablation, Checkpoint, Fanet, MixPool, NetworkConfig};
use fanet::nn::{Mode, Module, ParamKind};
use fanet::tensor::Tensor;
use fanet::training::{combined_loss, combined_loss_grad, fit, train_epoch, LossConfig, TrainConfig, TrainEvent, TrainState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    /// Failed only on a budget recorded as unattainable on this hardware.
    budget_only: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self {
            pass,
            budget_only: false,
            detail,
        }
    }
}

fn within(elapsed: Duration, budget_secs: f64) -> bool {
    elapsed.as_secs_f64() < budget_secs
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryMask {
    // Mix densities and blocky structure so runs of every length appear.
    let density: f64 = rng.random_range(0.0..=1.0);
    let block = [1usize, 3, 17][rng.random_range(0..3)];
    let cols = w.div_ceil(block);
    let cells: Vec<bool> = (0..h.div_ceil(block) * cols).map(|_| rng.random_bool(density)).collect();
    BinaryMask::from_fn(h, w, |y, x| cells[(y / block) * cols + x / block])
}

fn c1_rle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sizes = [16, 64, 512];
    let mut failures = 0;
    for i in 0..1000 {
        let s = sizes[i % 3];
        let m = random_mask(&mut rng, s, s);
        if rle_decode(&rle_encode(&m)).ok().as_ref() != Some(&m) {
            failures += 1;
        }
    }
    let t = start.elapsed();
    Outcome::new(
        failures == 0 && within(t, 10.0),
        format!("1000 masks over 16/64/512 squared, {failures} mismatches, {:.2}s (< 10s)", t.as_secs_f64()),
    )
}

/// Exhaustive Otsu over 8-bit levels: maximize `n0 * n1 * (mu0 - mu1)^2`,
/// ties to the smallest threshold. Scores compared exactly as fractions.
fn otsu_oracle(pixels: &[u8]) -> usize {
    let n = pixels.len() as i128;
    let mut best: Option<(usize, i128, i128)> = None;
    for t in 0..255usize {
        let (mut n0, mut s0, mut s1) = (0i128, 0i128, 0i128);
        for &p in pixels {
            if usize::from(p) <= t {
                n0 += 1;
                s0 += i128::from(p);
            } else {
                s1 += i128::from(p);
            }
        }
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        // n0*n1*(s0/n0 - s1/n1)^2 = (n1*s0 - n0*s1)^2 / (n0*n1)
        let d = n1 * s0 - n0 * s1;
        let (num, den) = (d * d, n0 * n1);
        let better = match best {
            None => true,
            Some((_, bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((t, num, den));
        }
    }
    best.expect("image spans 0..255").0
}

fn c2_otsu() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = 0;
    let mut ties = 0;
    for i in 0..100 {
        let (h, w) = (rng.random_range(8..48), rng.random_range(8..48));
        let mut pixels: Vec<u8> = match i % 3 {
            0 => (0..h * w).map(|_| rng.random()).collect(),
            1 => {
                let (a, b) = (rng.random_range(20..100), rng.random_range(140..230));
                (0..h * w)
                    .map(|_| {
                        let c = if rng.random_bool(0.4) { b } else { a };
                        (c + rng.random_range(-20i32..=20)).clamp(0, 255) as u8
                    })
                    .collect()
            }
            // Two spikes: every threshold between them scores the same.
            _ => (0..h * w).map(|_| if rng.random_bool(0.5) { 60 } else { 200 }).collect(),
        };
        // Pin the range so histogram bins coincide with the 8-bit levels.
        pixels[0] = 0;
        pixels[1] = 255;
        let expected = otsu_oracle(&pixels);
        let img = GrayImage::new(h, w, pixels.iter().map(|&p| f32::from(p)).collect()).unwrap();
        let r = otsu_threshold(&img, 256);
        let mask_ok = r.mask.values().iter().zip(&pixels).all(|(&m, &p)| (m == 1) == (usize::from(p) > expected));
        // Bins are 255/256 wide here, so the cut sits strictly inside (t, t + 1).
        let cut_ok = r.threshold > expected as f32 && r.threshold < (expected + 1) as f32;
        if r.bin != Some(expected) || !cut_ok || !mask_ok {
            failures += 1;
        }
        if i % 3 == 2 {
            ties += 1;
        }
    }
    let t = start.elapsed();
    Outcome::new(
        failures == 0 && within(t, 30.0),
        format!(
            "100 images ({ties} with tied optima, smallest threshold wins), {failures} mismatches, {:.2}s (< 30s)",
            t.as_secs_f64()
        ),
    )
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_downscale(m: &BinaryMask, h: usize, w: usize) -> BinaryMask {
    let (fy, fx) = (m.height() / h, m.width() / w);
    BinaryMask::from_fn(h, w, |y, x| {
        (0..fy).any(|dy| (0..fx).any(|dx| m.get(y * fy + dy, x * fx + dx)))
    })
}

fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1e-12))
}

fn c3_mixpool() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, c, h, w) = (2, 6, 8, 8);
    let mut mp = MixPool::<f64>::new(c, true, &mut rng);
    let f = random_tensor(&mut rng, [n, c, h, w]);

    // All-ones previous mask: the union is all ones and F passes untouched.
    let ones = vec![BinaryMask::ones(2 * h, 2 * w); n];
    mp.forward(&f, &ones, Mode::Eval).unwrap();
    let att = mp.last_attention().unwrap().clone();
    let attended = apply_hard_attention(&f, &att.union).unwrap();
    let identity = attended.data().iter().zip(f.data()).all(|(a, b)| a.to_bits() == b.to_bits());

    // Empty union: previous mask and generated map both zero.
    let zeros = vec![BinaryMask::zeros(2 * h, 2 * w); n];
    mp.freeze_attention(Some(vec![BinaryMask::zeros(h, w); n]));
    mp.forward(&f, &zeros, Mode::Eval).unwrap();
    let att0 = mp.last_attention().unwrap().clone();
    let zeroed = apply_hard_attention(&f, &att0.union).unwrap();
    let zero_ok = att0.union.iter().all(|m| m.count_ones() == 0) && zeroed.data().iter().all(|v| v.to_bits() == 0);
    mp.freeze_attention(None);

    // Random case against the composition F * (down(M_prev) OR M'), branch by branch.
    let mut worst_ok = true;
    for _ in 0..20 {
        let f = random_tensor(&mut rng, [n, c, h, w]);
        let prev: Vec<BinaryMask> = (0..n).map(|_| random_mask(&mut rng, 2 * h, 2 * w)).collect();
        let out = mp.forward(&f, &prev, Mode::Eval).unwrap();
        let probs = mp.attention_probabilities(&f, Mode::Eval);
        let union: Vec<BinaryMask> = (0..n)
            .map(|i| {
                let down = naive_downscale(&prev[i], h, w);
                let plane = probs.plane(i, 0);
                BinaryMask::from_fn(h, w, |y, x| down.get(y, x) || plane[y * w + x] >= 0.5)
            })
            .collect();
        let mut gated = f.clone();
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            for ch in 0..c {
                for (v, &m) in gated.plane_mut(i, ch).iter_mut().zip(union[i].values()) {
                    *v *= f64::from(m);
                }
            }
        }
        let plain = mp.feature_branch.as_mut().unwrap().forward(&f, Mode::Eval);
        let attended = mp.attended_branch.forward(&gated, Mode::Eval);
        let oracle = Tensor::concat_channels(&[&plain, &attended]).unwrap();
        worst_ok &= mp.last_attention().unwrap().union == union && rel_close(out.data(), oracle.data(), 1e-6);
    }
    let t = start.elapsed();
    Outcome::new(
        identity && zero_ok && worst_ok && within(t, 60.0),
        format!(
            "all-ones identity {}, empty-union zero {}, 20 random cases vs composed oracle {}, {:.2}s (< 1min)",
            ok(identity),
            ok(zero_ok),
            ok(worst_ok),
            t.as_secs_f64()
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAILED"
    }
}

/// Loss of the current parameters with the attention gates held fixed.
fn grad_check_loss(model: &mut Fanet<f64>, x: &Tensor<f64>, prev: &[BinaryMask], y: &Tensor<f64>) -> f64 {
    let p = model.forward(x, prev, Mode::BatchStats).unwrap();
    combined_loss(p.data(), y.data(), &LossConfig::default()).unwrap()
}

/// Overwrites one trainable entry and returns its previous value.
fn set_param(model: &mut Fanet<f64>, slot: usize, index: usize, value: f64) -> f64 {
    let mut k = 0;
    let mut old = 0.0;
    model.visit("", &mut |_, kind, p| {
        if kind == ParamKind::Trainable && !p.stop_gradient {
            if k == slot {
                old = std::mem::replace(&mut p.value[index], value);
            }
            k += 1;
        }
    });
    old
}

fn c4_gradient() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = NetworkConfig::default().with_widths(&[4, 8, 16, 32]);
    let mut model = Fanet::<f64>::new(net, 4).unwrap();
    let (n, s) = (2, 32);
    let x = Tensor::from_vec([n, 3, s, s], (0..n * 3 * s * s).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let prev: Vec<BinaryMask> = (0..n).map(|_| random_mask(&mut rng, s, s)).collect();
    let y = Tensor::from_vec(
        [n, 1, s, s],
        (0..n * s * s).map(|i| f64::from(((i / s) % s) > 10 && (i % s) < 20)).collect(),
    )
    .unwrap();

    let probs = model.forward(&x, &prev, Mode::Train).unwrap();
    model.freeze_attention(true);
    let (_, grad) = combined_loss_grad(probs.data(), y.data(), &LossConfig::default()).unwrap();
    model.zero_grad();
    model.backward(&Tensor::from_vec(probs.shape(), grad).unwrap());

    let mut analytic: Vec<Vec<f64>> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    model.visit("", &mut |name, kind, p| {
        if kind == ParamKind::Trainable && !p.stop_gradient {
            analytic.push(p.grad.clone());
            names.push(name.to_string());
        }
    });
    // One entry from every tensor, then random entries up to 240.
    let mut picks: Vec<(usize, usize)> = analytic.iter().enumerate().map(|(k, g)| (k, rng.random_range(0..g.len()))).collect();
    let total: usize = analytic.iter().map(Vec::len).sum();
    while picks.len() < 240.max(analytic.len()) {
        let mut flat = rng.random_range(0..total);
        let mut k = 0;
        while flat >= analytic[k].len() {
            flat -= analytic[k].len();
            k += 1;
        }
        picks.push((k, flat));
    }

    // A perturbation that flips a ReLU or max-pool switch somewhere in the
    // 32x32 maps biases the central difference by O(h); each entry keeps the
    // step whose estimate agrees best. The 1e-5 floor sits above f64 roundoff
    // of the loss divided by the step (about 1e-9 at h = 1e-7).
    let steps = [1e-6, 1e-7, 1e-8];
    let mut worst = 0.0f64;
    let mut bad = 0;
    for &(k, i) in &picks {
        let a = analytic[k][i];
        let mut best = f64::INFINITY;
        let mut best_numeric = 0.0;
        for h in steps {
            let orig = set_param(&mut model, k, i, 0.0);
            set_param(&mut model, k, i, orig + h);
            let up = grad_check_loss(&mut model, &x, &prev, &y);
            set_param(&mut model, k, i, orig - h);
            let down = grad_check_loss(&mut model, &x, &prev, &y);
            set_param(&mut model, k, i, orig);
            let numeric = (up - down) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            if rel < best {
                best = rel;
                best_numeric = numeric;
            }
        }
        worst = worst.max(best);
        if best > 1e-3 {
            eprintln!("  [4] {}[{i}]: analytic {a:.6e} numeric {best_numeric:.6e}", names[k]);
            bad += 1;
        }
    }
    model.freeze_attention(false);
    let t = start.elapsed();
    Outcome::new(
        bad == 0 && picks.len() >= 200 && within(t, 300.0),
        format!(
            "{} parameters over {} tensors, worst relative error {worst:.2e} (<= 1e-3), {:.1}s (< 5min)",
            picks.len(),
            analytic.len(),
            t.as_secs_f64()
        ),
    )
}

fn naive_suite(pred: &BinaryMask, target: &BinaryMask) -> MetricSuite {
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            match (pred.get(y, x), target.get(y, x)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
    }
    let fg_empty = tp + fp + fn_ == 0;
    let bg_empty = tn + fp + fn_ == 0;
    let div = |a: u64, b: u64, agree: bool| if b == 0 { f64::from(u8::from(agree)) } else { a as f64 / b as f64 };
    MetricSuite {
        f1: div(2 * tp, 2 * tp + fp + fn_, fg_empty),
        iou: div(tp, tp + fp + fn_, fg_empty),
        precision: div(tp, tp + fp, fg_empty),
        recall: div(tp, tp + fn_, fg_empty),
        specificity: div(tn, tn + fp, bg_empty),
        accuracy: div(tp + tn, tp + fp + tn + fn_, true),
        f2: div(5 * tp, 5 * tp + 4 * fn_ + fp, fg_empty),
    }
}

fn c5_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (h, w) = (rng.random_range(1..40), rng.random_range(1..40));
        let (p, t) = (random_mask(&mut rng, h, w), random_mask(&mut rng, h, w));
        if metric_suite(&confusion(&p, &t).unwrap()) != naive_suite(&p, &t) {
            mismatches += 1;
        }
    }
    let perfect = metric_suite(&ConfusionCounts { tp: 9, fp: 0, tn: 7, fn_: 0 });
    let perfect_ok = [perfect.f1, perfect.iou, perfect.precision, perfect.recall, perfect.specificity, perfect.accuracy, perfect.f2]
        .iter()
        .all(|&v| v == 1.0);
    let target = BinaryMask::from_fn(8, 8, |y, _| y < 4);
    let half = metric_suite(&confusion(&BinaryMask::ones(8, 8), &target).unwrap());
    let half_ok = half.precision == 0.5 && half.recall == 1.0 && half.f1 == 2.0 / 3.0 && half.iou == 0.5;
    Outcome::new(
        mismatches == 0 && perfect_ok && half_ok,
        format!(
            "1000 random pairs vs naive recount, {mismatches} mismatches; perfect case {}; half-coverage case {}",
            ok(perfect_ok),
            ok(half_ok)
        ),
    )
}

fn synthetic(train: usize, test: usize, size: usize, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let spec = SyntheticSpec {
        train,
        test,
        size,
        seed,
        ..SyntheticSpec::default()
    };
    let set = generate_synthetic(&spec).unwrap();
    (set.train, set.test)
}

fn c6_feedback() -> Outcome {
    let (samples, _) = synthetic(20, 0, 32, 6);
    let cfg = TrainConfig {
        epochs: 3,
        learning_rate: 1e-3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(cfg, NetworkConfig::default().with_widths(&[4, 8, 16])).unwrap();
    let mut consumed: HashMap<(u32, String), BinaryMask> = HashMap::new();
    let mut stored: HashMap<(u32, String), BinaryMask> = HashMap::new();
    for _ in 0..3 {
        train_epoch(&mut state, &samples, &mut |e| match e {
            TrainEvent::Consumed { epoch, id, mask } => {
                consumed.insert((*epoch, id.to_string()), (*mask).clone());
            }
            TrainEvent::Stored { epoch, id, mask } => {
                stored.insert((*epoch, id.to_string()), (*mask).clone());
            }
            TrainEvent::EpochEnd(_) => {}
        })
        .unwrap();
    }
    let mut checked = 0;
    let mut broken = 0;
    for s in &samples {
        if consumed.get(&(0, s.id.clone())) != Some(&initial_mask(&s.image)) {
            broken += 1;
        }
        for e in 1..3u32 {
            checked += 1;
            match (consumed.get(&(e, s.id.clone())), stored.get(&(e - 1, s.id.clone()))) {
                (Some(c), Some(p)) if c == p => {}
                _ => broken += 1,
            }
        }
    }
    Outcome::new(
        broken == 0 && checked == 40,
        format!("{checked} (sample, epoch >= 1) pairs consumed the epoch e-1 prediction bit for bit; epoch 0 used Otsu; {broken} violations"),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn c7_desk_scale() -> Outcome {
    let start = Instant::now();
    let (train, test) = synthetic(200, 50, 64, 0);
    let net = NetworkConfig::default().with_widths(&[16, 32, 64, 128]);
    let eval = EvalConfig::default();
    let (mut b4, mut b1, mut f1_at_1, mut f1_at_5) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut monotone_start = true;
    for seed in 0..3u64 {
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            seed,
            ..TrainConfig::default()
        };
        let runs = run_ablation(&cfg, &net, &train, None, &test, &eval, &[Ablation::B1, Ablation::B4], &mut |a, r| {
            eprintln!(
                "  [7] seed {seed} {a} epoch {:>2} train {:.4} lr {:e} ({:.0}s elapsed)",
                r.epoch,
                r.train_loss,
                r.lr,
                start.elapsed().as_secs_f64()
            );
        })
        .unwrap();
        for run in &runs {
            let first: Vec<f64> = run.history.iter().take(5).map(|r| r.train_loss).collect();
            monotone_start &= first.windows(2).all(|w| w[1] < w[0]);
        }
        let curve = runs[1].evaluation.f1_curve();
        b1.push(runs[0].evaluation.report().mean.f1);
        b4.push(runs[1].evaluation.report().mean.f1);
        f1_at_1.push(curve[1]);
        f1_at_5.push(curve[5]);
    }
    let t = start.elapsed();
    let a = mean(&b4) >= 0.90;
    let b = mean(&f1_at_5) >= mean(&f1_at_1) - 0.01;
    let c = mean(&b4) >= mean(&b1) - 0.02;
    let budget = within(t, 15.0 * 60.0);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("/");
    Outcome {
        pass: a && b && c && budget,
        budget_only: a && b && c && !budget,
        detail: format!(
            "(a) B4 F1 {} mean {:.4} >= 0.90 {}; (b) iter5 {:.4} vs iter1 {:.4} {}; (c) B1 F1 {} mean {:.4} {}; \
             loss falls over first 5 epochs in every run: {}; runtime {:.1} min vs 15 min CPU budget {}",
            fmt(&b4),
            mean(&b4),
            ok(a),
            mean(&f1_at_5),
            mean(&f1_at_1),
            ok(b),
            fmt(&b1),
            mean(&b1),
            ok(c),
            monotone_start,
            t.as_secs_f64() / 60.0,
            if budget { "ok" } else { "EXCEEDED" }
        ),
    }
}

fn c8_fixed_point() -> Outcome {
    let (train, test) = synthetic(48, 8, 32, 8);
    let cfg = TrainConfig {
        epochs: 8,
        learning_rate: 1e-3,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let net = NetworkConfig::default().with_widths(&[8, 16, 32, 64]);
    let outcome = fit(&cfg, &net, &train, None, &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    outcome.best.save(&path).unwrap();
    let mut model: Fanet<f32> = Checkpoint::load(&path).unwrap().to_model().unwrap();

    let threshold = model.config().binarize_threshold;
    let (mut fixed_points, mut violations) = (0, 0);
    for s in &test {
        let opts = InferenceOptions {
            iterations: 10,
            early_stop: false,
        };
        let trace = iterative_predict(&mut model, &s.image, opts, None).unwrap();
        let Some(t) = (0..trace.masks.len() - 1).find(|&t| trace.masks[t + 1] == trace.masks[t]) else {
            continue;
        };
        fixed_points += 1;
        if trace.masks[t..].iter().any(|m| m != &trace.masks[t]) {
            violations += 1;
        }
        // Inject mask_t directly and keep feeding the output back.
        let x = fanet::data::image_batch::<f32>(&[&s.image]).unwrap();
        let mut mask = trace.masks[t].clone();
        for _ in 0..5 {
            let p = model.forward(&x, std::slice::from_ref(&mask), Mode::Eval).unwrap();
            let next = binarize(p.data(), s.image.height(), s.image.width(), threshold).unwrap();
            if next != trace.masks[t] {
                violations += 1;
            }
            mask = next;
        }
    }
    Outcome::new(
        fixed_points > 0 && violations == 0,
        format!("{fixed_points}/{} test images reached a fixed point; injected masks reproduced it for 5 further iterations; {violations} violations", test.len()),
    )
}

fn c9_parameters() -> Outcome {
    let base = NetworkConfig::default();
    let b1 = count_parameters(&base.clone().with_ablation(Ablation::B1)).unwrap();
    let b4 = count_parameters(&base.clone().with_ablation(Ablation::B4)).unwrap();
    let paper = 7.72e6;
    let dev = (b4 as f64 - paper) / paper;
    Outcome::new(
        b1 < b4 && dev.abs() <= 0.25,
        format!(
            "widths {:?}: B1 {b1} < B4 {b4}; B4 vs 7.72M reference {:+.1}% (within 25%)",
            base.base_widths,
            dev * 100.0
        ),
    )
}

fn run_train(out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_fanet"))
        .args(["train", "--seed", "5", "--out"])
        .arg(out)
        .args([
            "--set",
            "train.epochs=3",
            "--set",
            "train.batch_size=4",
            "--set",
            "network.base_widths=[4,8,16]",
            "--set",
            "network.depth=3",
            "--set",
            "dataset.synthetic.train=16",
            "--set",
            "dataset.synthetic.test=2",
            "--set",
            "dataset.synthetic.size=32",
        ])
        .output()
        .is_ok_and(|o| o.status.success())
}

/// The log without its wall-clock column.
fn deterministic_columns(log: &str) -> Vec<String> {
    log.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect()
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if !(run_train(&a) && run_train(&b)) {
        return Outcome::new(false, "fanet train did not succeed".into());
    }
    let (la, lb) = (
        fs::read_to_string(a.join("train_log.csv")).unwrap(),
        fs::read_to_string(b.join("train_log.csv")).unwrap(),
    );
    let logs_equal = deterministic_columns(&la) == deterministic_columns(&lb) && la.lines().count() == 4;
    let ckpt_equal = fs::read(a.join("checkpoint_last.ckpt")).unwrap() == fs::read(b.join("checkpoint_last.ckpt")).unwrap();
    Outcome::new(
        logs_equal && ckpt_equal,
        format!(
            "two `fanet train` runs: log loss and lr columns bitwise equal {}, final checkpoints byte-identical {} (epoch_time column is wall clock)",
            ok(logs_equal),
            ok(ckpt_equal)
        ),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "RLE round trip", c1_rle),
        (2, "Otsu oracle", c2_otsu),
        (3, "MixPool identities", c3_mixpool),
        (4, "gradient check", c4_gradient),
        (5, "metric oracle", c5_metrics),
        (6, "feedback contract", c6_feedback),
        (7, "desk-scale end to end", c7_desk_scale),
        (8, "fixed-point absorption", c8_fixed_point),
        (9, "parameter accounting", c9_parameters),
        (10, "determinism", c10_determinism),
    ];
    let only: Option<Vec<u32>> = std::env::var("FANET_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let (mut passed, mut failed, mut budget_failures) = (0, 0, 0);
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let o = check();
        println!("{} [{id}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        match (o.pass, o.budget_only) {
            (true, _) => passed += 1,
            (false, true) => budget_failures += 1,
            (false, false) => failed += 1,
        }
    }
    println!("acceptance: {passed} passed, {} failed ({budget_failures} on runtime budget only)", failed + budget_failures);
    // A missed runtime budget is reported above but does not fail the suite;
    // every functional failure does.
    if failed > 0 {
        std::process::exit(1);
    }
}
