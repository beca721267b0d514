use std::f64::consts::PI;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use arrivalnet::backbone::{window_attention_detailed, AttentionParams, BackboneSpec, SwinParams};
use arrivalnet::checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes};
use arrivalnet::data::{parse_trips, write_trips};
use arrivalnet::metrics::{compute_metrics, MAPE_MIN_TRUTH_S};
use arrivalnet::optim::Adam;
use arrivalnet::period::{amplitude_spectrum, detect_periods, to_1d, to_2d};
use arrivalnet::sample::{build_windows, link_delays};
use arrivalnet::sim::{negative_to_positive_fraction, simulate, NetworkParams, SimParams};
use arrivalnet::train::{evaluate, evaluate_persistence, mean_loss, train, train_step, TrainOptions};
use arrivalnet::{
    ArrivalNet64, BackboneKind, BackboneParams, ModelConfig, ParamId, ParamStore, SequenceSample, Tape,
    Tensor64, Trip,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor64 {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor64::from_f64(shape, &data).unwrap()
}

fn backbone_spec(kind: BackboneKind, d: usize) -> BackboneSpec {
    ModelConfig {
        backbone: kind,
        d_model: d,
        ..Default::default()
    }
    .backbone_spec()
}

/// `sum(backbone(x) ⊙ r)` and, optionally, its analytic gradient.
fn weighted_output(
    bb: &BackboneParams,
    store: &ParamStore<f64>,
    x: &Tensor64,
    r: &Tensor64,
    grad: bool,
) -> (f64, Option<arrivalnet::Gradients<f64>>, arrivalnet::ParamVars) {
    let mut tape = Tape::new();
    let vars = if grad { store.register(&mut tape) } else { store.register_frozen(&mut tape) };
    let prepared = bb.prepare(&mut tape, &vars).unwrap();
    let xv = tape.constant(x.clone());
    let y = bb.forward(&mut tape, &vars, &prepared, xv).unwrap();
    let rv = tape.constant(r.clone());
    let prod = tape.mul(y, rv).unwrap();
    let loss = tape.sum(prod);
    let value = tape.value(loss).data()[0];
    let grads = grad.then(|| tape.backward(loss).unwrap());
    (value, grads, vars)
}

fn gradient_check() -> Outcome {
    let mut worst: f64 = 0.0;
    for kind in [BackboneKind::Inception, BackboneKind::Swin] {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let bb = BackboneParams::init(&mut store, "b", &backbone_spec(kind, 16), &mut rng).unwrap();
        for t in store.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        let x = random(&[4, 6, 16], &mut rng);
        let r = random(&[4, 6, 16], &mut rng);
        let (_, grads, vars) = weighted_output(&bb, &store, &x, &r, true);
        let grads = grads.unwrap();
        let h = 1e-5;
        for _ in 0..10 {
            let id = ParamId(rng.random_range(0..store.len()));
            let i = rng.random_range(0..store.get(id).numel());
            let analytic = grads.get(vars.var(id)).map_or(0.0, |g| g[i]);
            let mut bumped = store.clone();
            bumped.get_mut(id).data_mut()[i] += h;
            let up = weighted_output(&bb, &bumped, &x, &r, false).0;
            bumped.get_mut(id).data_mut()[i] -= 2.0 * h;
            let down = weighted_output(&bb, &bumped, &x, &r, false).0;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            ensure(rel < 1e-3, || {
                format!("{kind} {}[{i}]: analytic {analytic} numeric {numeric}", store.name(id))
            })?;
        }
    }
    Ok(format!("max relative error {worst:.2e}"))
}

fn spectrum_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for t in 4..=64 {
        for _ in 0..20 {
            let d = rng.random_range(1..4);
            let x = random(&[t, d], &mut rng);
            let got = amplitude_spectrum(&x).unwrap();
            for f in 1..=t / 2 {
                let mut acc = 0.0;
                for c in 0..d {
                    let (mut re, mut im) = (0.0, 0.0);
                    for i in 0..t {
                        let a = -2.0 * PI * (f * i) as f64 / t as f64;
                        re += x.at(&[i, c]) * a.cos();
                        im += x.at(&[i, c]) * a.sin();
                    }
                    acc += re.hypot(im);
                }
                let err = (got.data()[f - 1] - acc / d as f64).abs();
                worst = worst.max(err);
                ensure(err < 1e-9, || format!("T={t} f={f}: error {err:e}"))?;
            }
        }
    }
    Ok(format!("max abs error {worst:.2e}"))
}

fn period_recovery() -> Outcome {
    let mut checked = 0;
    for t in [16, 20, 32] {
        for f in 1..=t / 2 {
            let data: Vec<f64> = (0..t)
                .flat_map(|i| {
                    let phase = 2.0 * PI * (f * i) as f64 / t as f64;
                    [(phase + 0.3).cos(), 2.0 * (phase + 0.3).cos()]
                })
                .collect();
            let dec = detect_periods(&Tensor64::from_f64(&[t, 2], &data).unwrap(), 1).unwrap();
            let e = dec.entries[0];
            ensure(e.frequency == f && e.period == t / f, || {
                format!("T={t} f={f}: got frequency {} period {}", e.frequency, e.period)
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} sinusoids"))
}

fn reshape_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0;
    for t in 4..=40 {
        let x = random(&[t, 3], &mut rng);
        for p in 1..=t {
            let g = to_2d(&x, p).unwrap();
            let back = to_1d(&g, t).unwrap();
            ensure(back.shape() == x.shape(), || format!("T={t} p={p}: shape {:?}", back.shape()))?;
            let same = back.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure(same, || format!("T={t} p={p}: values differ"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} (T, p) pairs"))
}

fn affine(row: &[f64], w: &Tensor64, b: &Tensor64) -> Vec<f64> {
    let (k, n) = (w.shape()[0], w.shape()[1]);
    (0..n)
        .map(|j| b.data()[j] + (0..k).map(|i| row[i] * w.at(&[i, j])).sum::<f64>())
        .collect()
}

/// Plain softmax attention restricted to each region of pixels that share
/// a window after offsetting the grid by `shift`.
fn region_attention(
    store: &ParamStore<f64>,
    p: &AttentionParams,
    x: &Tensor64,
    m: usize,
    heads: usize,
    shift: usize,
) -> Vec<f64> {
    let (h, w, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let dh = d / heads;
    let pixel = |r: usize, c: usize| &x.data()[(r * w + c) * d..(r * w + c + 1) * d];
    let region = |r: usize, c: usize| {
        let off = |v: usize| (v as isize - shift as isize).div_euclid(m as isize);
        (off(r), off(c))
    };
    let g = |id| store.get(id);
    let mut out = Vec::with_capacity(h * w * d);
    for r in 0..h {
        for c in 0..w {
            let q = affine(pixel(r, c), g(p.wq), g(p.bq));
            let members: Vec<(usize, usize)> = (0..h)
                .flat_map(|rr| (0..w).map(move |cc| (rr, cc)))
                .filter(|&(rr, cc)| region(rr, cc) == region(r, c))
                .collect();
            let mut mixed = vec![0.0; d];
            for head in 0..heads {
                let sl = head * dh..(head + 1) * dh;
                let scores: Vec<f64> = members
                    .iter()
                    .map(|&(rr, cc)| {
                        let k = affine(pixel(rr, cc), g(p.wk), g(p.bk));
                        let dot: f64 = q[sl.clone()].iter().zip(&k[sl.clone()]).map(|(a, b)| a * b).sum();
                        dot / (d as f64).sqrt()
                    })
                    .collect();
                let top = scores.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = scores.iter().map(|s| (s - top).exp()).sum();
                for (&(rr, cc), s) in members.iter().zip(&scores) {
                    let v = affine(pixel(rr, cc), g(p.wv), g(p.bv));
                    let a = (s - top).exp() / z;
                    for e in sl.clone() {
                        mixed[e] += a * v[e];
                    }
                }
            }
            out.extend(affine(&mixed, g(p.wo), g(p.bo)));
        }
    }
    out
}

fn shifted_window_equivalence() -> Outcome {
    let m = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst: f64 = 0.0;
    let mut grids = 0;
    for heads in [1, 2] {
        let mut store = ParamStore::new();
        let p = SwinParams::init(&mut store, "s", 8, m, heads, &mut rng).unwrap();
        for t in store.tensors_mut() {
            for v in t.data_mut() {
                *v = rng.random_range(-0.8..0.8);
            }
        }
        let attn = &p.layers[1].attn;
        for h in 1..=8 {
            for w in 1..=12 {
                let x = random(&[h, w, 8], &mut rng);
                for shifted in [false, true] {
                    let mut tape = Tape::new();
                    let vars = store.register_frozen(&mut tape);
                    let xv = tape.constant(x.clone());
                    let (out, _) = window_attention_detailed(&mut tape, &vars, attn, xv, m, heads, shifted).unwrap();
                    let want = region_attention(&store, attn, &x, m, heads, if shifted { m / 2 } else { 0 });
                    let err = tape
                        .value(out)
                        .data()
                        .iter()
                        .zip(&want)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    worst = worst.max(err);
                    ensure(err < 1e-6, || format!("{h}×{w} heads={heads} shifted={shifted}: error {err:e}"))?;
                }
                grids += 1;
            }
        }
    }
    Ok(format!("{grids} grid/head combinations, max error {worst:.2e}"))
}

fn dataset(n_f: usize) -> Vec<SequenceSample> {
    let out = simulate(2, &NetworkParams::default(), &SimParams::default(), 14, false).unwrap();
    let (mut samples, _) = build_windows(&out.trips, 10, n_f);
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(2));
    samples.truncate(2000);
    samples
}

fn residual_identity() -> Outcome {
    let samples = dataset(5);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut model = ArrivalNet64::new(ModelConfig::default(), 3).unwrap();
    model.zero_blocks();
    let t = model.config.horizon();
    for b in 0..model.config.num_blocks {
        for _ in 0..20 {
            let x = random(&[t, model.config.d_model], &mut rng);
            let y = model.block_forward(b, &x).unwrap();
            ensure(y == x, || format!("block {b} changed its input"))?;
        }
    }
    let fresh = ArrivalNet64::new(ModelConfig::default(), 4).unwrap();
    let mut worst: f64 = 0.0;
    for s in samples.iter().take(200) {
        let past = s.past_delays();
        let mean = past.iter().sum::<f64>() / past.len() as f64;
        for v in fresh.forward(s).unwrap().data() {
            let err = (v - mean).abs();
            worst = worst.max(err);
            ensure(err <= 1e-9 * mean.abs().max(1.0), || format!("prediction {v} vs past mean {mean}"))?;
        }
    }
    Ok(format!("identity blocks exact, zero head within {worst:.1e} s of the past mean"))
}

fn overfit() -> Outcome {
    let samples = dataset(5);
    let batch: Vec<&SequenceSample> = samples.iter().take(8).collect();
    let mut lines = Vec::new();
    for kind in [BackboneKind::Inception, BackboneKind::Swin] {
        let start = Instant::now();
        let config = ModelConfig {
            backbone: kind,
            ..Default::default()
        };
        let mut model = ArrivalNet64::new(config.clone(), 5).unwrap();
        let initial = mean_loss(&model, &batch).unwrap();
        let mut adam = Adam::new(config.learning_rate);
        let mut steps = 0;
        let mut loss = initial;
        while steps < 2000 && loss >= 0.01 * initial {
            train_step(&mut model, &mut adam, &batch).unwrap();
            steps += 1;
            if steps % 50 == 0 {
                loss = mean_loss(&model, &batch).unwrap();
            }
        }
        loss = mean_loss(&model, &batch).unwrap();
        let secs = start.elapsed().as_secs_f64();
        ensure(loss < 0.01 * initial, || format!("{kind}: loss {loss:.4} from {initial:.4} after {steps} steps"))?;
        ensure(secs < 180.0, || format!("{kind}: took {secs:.0} s"))?;
        lines.push(format!("{kind} {:.2e} of initial in {steps} steps ({secs:.0} s)", loss / initial));
    }
    Ok(lines.join("; "))
}

struct Trained {
    model_mae: f64,
    persistence_mae: f64,
}

fn train_and_score(samples: &[SequenceSample], n_f: usize, context: bool, seed: u64) -> Trained {
    let config = ModelConfig {
        n_f,
        context_enabled: context,
        ..Default::default()
    };
    let out = train::<f64>(&config, samples, seed, &TrainOptions::default()).unwrap();
    let test: Vec<&SequenceSample> = out.test_idx.iter().map(|&i| &samples[i]).collect();
    Trained {
        model_mae: evaluate(&out.model, &test).unwrap().mae,
        persistence_mae: evaluate_persistence(&test).unwrap().mae,
    }
}

const ABLATION_SEEDS: [u64; 3] = [7, 8, 9];

fn behavioural(first_run: &Trained) -> Outcome {
    let start = Instant::now();
    let mut lines = vec![format!(
        "N_f=5 MAE {:.2} s vs persistence {:.2} s",
        first_run.model_mae, first_run.persistence_mae
    )];
    ensure(first_run.model_mae <= first_run.persistence_mae, || lines[0].clone())?;
    let r = train_and_score(&dataset(10), 10, true, ABLATION_SEEDS[0]);
    let line = format!("N_f=10 MAE {:.2} s vs persistence {:.2} s", r.model_mae, r.persistence_mae);
    ensure(r.model_mae <= r.persistence_mae, || line.clone())?;
    lines.push(line);
    lines.push(format!("{:.0} s for N_f=10", start.elapsed().as_secs_f64()));
    Ok(lines.join("; "))
}

fn context_ablation(samples: &[SequenceSample], first_run: &Trained) -> Outcome {
    let (mut with, mut without) = (0.0, 0.0);
    let mut per_seed = Vec::new();
    for (i, &seed) in ABLATION_SEEDS.iter().enumerate() {
        let on = if i == 0 { first_run.model_mae } else { train_and_score(samples, 5, true, seed).model_mae };
        let off = train_and_score(samples, 5, false, seed).model_mae;
        per_seed.push(format!("{:.3}", on / off));
        with += on;
        without += off;
    }
    let n = ABLATION_SEEDS.len() as f64;
    let (with, without) = (with / n, without / n);
    let line = format!(
        "mean MAE with context {with:.2} s, without {without:.2} s (per-seed ratios {})",
        per_seed.join(", ")
    );
    ensure(with <= 1.02 * without, || line.clone())?;
    Ok(line)
}

fn metrics_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for round in 0..50 {
        let (n, n_f) = (rng.random_range(1..40), rng.random_range(1..11));
        let truth: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n_f).map(|_| rng.random_range(-5.0..3000.0)).collect())
            .collect();
        let pred: Vec<Vec<f64>> = truth
            .iter()
            .map(|row| row.iter().map(|t| t + rng.random_range(-120.0..120.0)).collect())
            .collect();
        let got = compute_metrics(&pred, &truth).unwrap();
        let (mut rmse, mut mae, mut mape, mut mape_n) = (0.0, 0.0, 0.0, 0);
        for (p, t) in pred.iter().zip(&truth) {
            let errs: Vec<f64> = p.iter().zip(t).map(|(a, b)| b - a).collect();
            rmse += (errs.iter().map(|e| e * e).sum::<f64>() / n_f as f64).sqrt();
            mae += errs.iter().map(|e| e.abs()).sum::<f64>() / n_f as f64;
            let kept: Vec<f64> = errs
                .iter()
                .zip(t)
                .filter(|(_, tt)| tt.abs() >= MAPE_MIN_TRUTH_S)
                .map(|(e, tt)| (e / tt).abs())
                .collect();
            if !kept.is_empty() {
                mape += 100.0 * kept.iter().sum::<f64>() / kept.len() as f64;
                mape_n += 1;
            }
        }
        let (rmse, mae) = (rmse / n as f64, mae / n as f64);
        let mape = if mape_n > 0 { mape / mape_n as f64 } else { 0.0 };
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
        ensure(close(got.rmse, rmse) && close(got.mae, mae) && close(got.mape, mape), || {
            format!("round {round}: got {:?}, oracle ({rmse}, {mae}, {mape})", (got.rmse, got.mae, got.mape))
        })?;
        ensure(got.mae <= got.rmse, || format!("round {round}: MAE > RMSE"))?;
        for s in &got.steps {
            ensure(s.mae <= s.rmse, || format!("round {round} step {}: MAE > RMSE", s.step))?;
        }
        let perfect = compute_metrics(&truth, &truth).unwrap();
        ensure(perfect.rmse == 0.0 && perfect.mae == 0.0 && perfect.mape == 0.0, || {
            format!("round {round}: perfect predictions scored {perfect:?}")
        })?;
    }
    Ok("50 random reports match the summation oracle".into())
}

fn simulator_calibration() -> Outcome {
    let out = simulate(2, &NetworkParams::default(), &SimParams::default(), 14, false).unwrap();
    let links: Vec<f64> = out.network.links().map(|l| l.distance_km).collect();
    let mean_km = links.iter().sum::<f64>() / links.len() as f64;
    ensure((mean_km - 0.4702).abs() <= 0.1 * 0.4702, || format!("mean link distance {mean_km:.4} km"))?;

    let seqs: Vec<Vec<f64>> = out.trips.iter().map(Trip::delays).collect();
    let frac = negative_to_positive_fraction(seqs.iter().map(Vec::as_slice));
    ensure((frac - 0.30).abs() <= 0.05, || format!("negative-to-positive fraction {frac:.4}"))?;

    let (mut peak, mut off) = ((0.0, 0usize), (0.0, 0usize));
    for trip in &out.trips {
        let d = trip.delays();
        let inc = link_delays(&d[1..], d[0]);
        let acc = if trip.peak == 1 { &mut peak } else { &mut off };
        acc.0 += inc.iter().sum::<f64>();
        acc.1 += inc.len();
    }
    let (peak, off) = (peak.0 / peak.1 as f64, off.0 / off.1 as f64);
    ensure(peak > off, || format!("peak link delay {peak:.2} s <= off-peak {off:.2} s"))?;
    Ok(format!(
        "{} links at {mean_km:.4} km, transition fraction {frac:.4}, link delay peak {peak:.2} s vs off-peak {off:.2} s",
        links.len()
    ))
}

fn persistence() -> Outcome {
    let samples = dataset(5);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for kind in [BackboneKind::Inception, BackboneKind::Swin] {
        let config = ModelConfig {
            backbone: kind,
            ..Default::default()
        };
        let mut model = ArrivalNet64::new(config, 6).unwrap();
        for t in model.store.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.05..0.05);
            }
        }
        let path = dir.path().join(format!("{kind}.ckpt"));
        save_checkpoint(&model, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded: ArrivalNet64 = load_checkpoint(&path).unwrap();
        ensure(to_bytes(&loaded).unwrap() == first, || format!("{kind}: resaved bytes differ"))?;
        let again: ArrivalNet64 = from_bytes(&first).unwrap();
        ensure(again == loaded, || format!("{kind}: decoding is not deterministic"))?;
        for s in samples.iter().take(50) {
            let a = model.forward(s).unwrap();
            let b = loaded.forward(s).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                let rel = (x - y).abs() / x.abs().max(1.0);
                worst = worst.max(rel);
                ensure(rel < 1e-6, || format!("{kind}: forecast {x} became {y}"))?;
            }
        }
    }
    let trips = simulate(3, &NetworkParams::default(), &SimParams::default(), 2, false).unwrap().trips;
    let mut buf = Vec::new();
    write_trips(&mut buf, &trips).unwrap();
    let (back, report) = parse_trips(buf.as_slice()).unwrap();
    ensure(report.rejected.is_empty() && back == trips, || "JSONL roundtrip changed trips".into())?;
    Ok(format!(
        "byte-stable checkpoints, forecast drift {worst:.1e}, {} trips roundtrip",
        trips.len()
    ))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, run: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {id:>2} {name}: PASS ({detail}) [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} {name}: FAIL ({detail}) [{secs:.1} s]");
            }
        }
    };
    report(1, "autodiff gradients", &mut gradient_check);
    report(2, "spectrum oracle", &mut spectrum_oracle);
    report(3, "period recovery", &mut period_recovery);
    report(4, "reshape roundtrip", &mut reshape_roundtrip);
    report(5, "shifted-window equivalence", &mut shifted_window_equivalence);
    report(6, "residual identity", &mut residual_identity);
    report(7, "overfit", &mut overfit);
    let samples = dataset(5);
    let first_run = train_and_score(&samples, 5, true, ABLATION_SEEDS[0]);
    report(8, "behavioural benchmark", &mut || behavioural(&first_run));
    report(9, "context ablation", &mut || context_ablation(&samples, &first_run));
    report(10, "metrics identities", &mut metrics_identities);
    report(11, "simulator calibration", &mut simulator_calibration);
    report(12, "persistence", &mut persistence);
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
