use proptest::collection::vec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use arrivalnet::backbone::{window_attention_detailed, window_masks, SwinParams};
use arrivalnet::embedding::{positional_encoding, value_encoding};
use arrivalnet::metrics::{compute_metrics, MAPE_MIN_TRUTH_S};
use arrivalnet::period::{detect_periods, to_1d, to_2d};
use arrivalnet::sample::{build_windows, FEATURE_CHANNELS};
use arrivalnet::sim::{simulate, NetworkParams, SimParams};
use arrivalnet::train::evaluate;
use arrivalnet::{ArrivalNet64, BackboneKind, ModelConfig, ParamId, ParamStore, SequenceSample, Tape, Tensor64};

fn tensor(shape: &[usize], data: &[f64]) -> Tensor64 {
    Tensor64::from_f64(shape, data).unwrap()
}

fn samples(n_f: usize, count: usize) -> Vec<SequenceSample> {
    let out = simulate(4, &NetworkParams::default(), &SimParams::default(), 1, false).unwrap();
    let (mut s, _) = build_windows(&out.trips, 10, n_f);
    s.truncate(count);
    s
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(
        data in vec(-30.0f64..30.0, 24),
        axis in 0usize..3,
    ) {
        let mut tape = Tape::new();
        let x = tape.constant(tensor(&[2, 3, 4], &data));
        let y = tape.softmax(x, axis).unwrap();
        let y = tape.value(y);
        let shape = [2, 3, 4];
        let mut sums = std::collections::HashMap::new();
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    let mut key = vec![i, j, k];
                    key[axis] = 0;
                    *sums.entry(key).or_insert(0.0) += y.at(&[i, j, k]);
                }
            }
        }
        prop_assert_eq!(sums.len(), 24 / shape[axis]);
        for s in sums.values() {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_same_preserves_spatial_shape(
        h in 1usize..7,
        w in 1usize..7,
        half in 0usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 2 * half + 1;
        let x: Vec<f64> = (0..h * w * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kern: Vec<f64> = (0..k * k * 2 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let xv = tape.constant(tensor(&[h, w, 2], &x));
        let kv = tape.constant(tensor(&[k, k, 2, 3], &kern));
        let y = tape.conv2d_same(xv, kv).unwrap();
        prop_assert_eq!(tape.shape(y), &[h, w, 3]);
    }

    #[test]
    fn periods_ignore_constant_offsets(
        data in vec(-5.0f64..5.0, 20 * 3),
        offset in -1000.0f64..1000.0,
        k in 1usize..=10,
    ) {
        let x = tensor(&[20, 3], &data);
        let shifted: Vec<f64> = data.iter().map(|v| v + offset).collect();
        let a = detect_periods(&x, k).unwrap();
        let b = detect_periods(&tensor(&[20, 3], &shifted), k).unwrap();
        let close = a.entries.iter().zip(&b.entries).all(|(p, q)| {
            p.frequency == q.frequency || (p.amplitude - q.amplitude).abs() < 1e-9 * p.amplitude.max(1.0)
        });
        prop_assert!(close, "{:?} vs {:?}", a.frequencies(), b.frequencies());
        prop_assert!(a.entries.iter().all(|e| e.frequency >= 1 && e.frequency <= 10));
    }

    #[test]
    fn fold_unfold_is_exact(
        t in 4usize..48,
        p_frac in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = 1 + ((t - 1) as f64 * p_frac) as usize;
        let data: Vec<f64> = (0..t * 4).map(|_| rng.random_range(-1e6..1e6)).collect();
        let x = tensor(&[t, 4], &data);
        let back = to_1d(&to_2d(&x, p).unwrap(), t).unwrap();
        prop_assert!(back.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn value_encoding_is_linear(
        a in vec(-3.0f64..3.0, 10 * 7),
        b in vec(-3.0f64..3.0, 10 * 7),
        k in vec(-1.0f64..1.0, 3 * 7 * 8),
    ) {
        let kern = tensor(&[3, 7, 8], &k);
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let ea = value_encoding(&tensor(&[10, 7], &a), &kern).unwrap();
        let eb = value_encoding(&tensor(&[10, 7], &b), &kern).unwrap();
        let es = value_encoding(&tensor(&[10, 7], &sum), &kern).unwrap();
        for ((s, x), y) in es.data().iter().zip(ea.data()).zip(eb.data()) {
            prop_assert!((s - x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_normalised_and_masked(
        h in 1usize..7,
        w in 1usize..9,
        shifted in any::<bool>(),
        heads in prop_oneof![Just(1usize), Just(2), Just(4)],
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = SwinParams::init(&mut store, "s", 8, 2, heads, &mut rng).unwrap();
        let x: Vec<f64> = (0..h * w * 8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut tape = Tape::new();
        let vars = store.register_frozen(&mut tape);
        let xv = tape.constant(tensor(&[h, w, 8], &x));
        let (_, attn) = window_attention_detailed(&mut tape, &vars, &p.layers[0].attn, xv, 2, heads, shifted).unwrap();
        let attn = tape.value(attn);
        let masks = window_masks(h, w, 2, shifted);
        let n = 4;
        prop_assert_eq!(attn.shape(), &[masks.len() * heads, n, n]);
        for (wi, mask) in masks.iter().enumerate() {
            for head in 0..heads {
                let b = wi * heads + head;
                for i in 0..n {
                    let row: f64 = (0..n).map(|j| attn.at(&[b, i, j])).sum();
                    prop_assert!((row - 1.0).abs() < 1e-12);
                    let blocked: f64 = (0..n).filter(|&j| mask.at(i, j) != 0.0).map(|j| attn.at(&[b, i, j])).sum();
                    prop_assert!(blocked < 1e-20);
                }
            }
        }
    }

    #[test]
    fn mae_never_exceeds_rmse(
        errs in vec(vec(-500.0f64..500.0, 5), 1..20),
        base in 0.0f64..5000.0,
    ) {
        let truth: Vec<Vec<f64>> = errs.iter().map(|r| r.iter().enumerate().map(|(h, _)| base + 60.0 * h as f64).collect()).collect();
        let pred: Vec<Vec<f64>> = truth.iter().zip(&errs).map(|(t, e)| t.iter().zip(e).map(|(a, b)| a + b).collect()).collect();
        let r = compute_metrics(&pred, &truth).unwrap();
        prop_assert!(r.mae <= r.rmse + 1e-12);
        let excluded = truth.iter().flatten().filter(|t| t.abs() < MAPE_MIN_TRUTH_S).count();
        prop_assert_eq!(r.mape_excluded, excluded);
    }
}

#[test]
fn positional_encoding_is_deterministic() {
    let a = positional_encoding::<f64>(10, 16).unwrap();
    let b = positional_encoding::<f64>(10, 16).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn zero_blocks_pass_the_embedding_through() {
    let s = samples(5, 20);
    let mut model = ArrivalNet64::new(ModelConfig::default(), 1).unwrap();
    model.zero_blocks();
    for x in &s {
        let (embedded, repr) = model.representations(x).unwrap();
        assert_eq!(embedded, repr);
    }
}

#[test]
fn output_lengths_match_horizon() {
    for kind in [BackboneKind::Inception, BackboneKind::Swin] {
        for n_f in [5, 10] {
            let config = ModelConfig { n_f, backbone: kind, ..Default::default() };
            let model = ArrivalNet64::new(config, 2).unwrap();
            for x in samples(n_f, 5) {
                assert_eq!(model.forward(&x).unwrap().numel(), n_f);
                assert_eq!(model.predict_arrivals(&x).unwrap().numel(), n_f);
            }
        }
    }
}

#[test]
fn model_gradients_match_finite_differences() {
    let s = samples(5, 3);
    for kind in [BackboneKind::Inception, BackboneKind::Swin] {
        let config = ModelConfig { backbone: kind, ..Default::default() };
        let mut model = ArrivalNet64::new(config, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for t in model.store.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        let loss = |m: &ArrivalNet64, grad: bool| {
            let mut tape = Tape::new();
            let vars = if grad { m.store.register(&mut tape) } else { m.store.register_frozen(&mut tape) };
            let mut total = None;
            for x in &s {
                let l = m.loss_var(&mut tape, &vars, x).unwrap();
                total = Some(match total {
                    Some(t) => tape.add(t, l).unwrap(),
                    None => l,
                });
            }
            let total = total.unwrap();
            let value = tape.value(total).data()[0];
            (value, grad.then(|| (tape.backward(total).unwrap(), vars)))
        };
        let (_, g) = loss(&model, true);
        let (grads, vars) = g.unwrap();
        let h = 1e-5;
        for _ in 0..10 {
            let id = ParamId(rng.random_range(0..model.store.len()));
            let i = rng.random_range(0..model.store.get(id).numel());
            let analytic = grads.get(vars.var(id)).map_or(0.0, |g| g[i]);
            let mut m = model.clone();
            m.store.get_mut(id).data_mut()[i] += h;
            let up = loss(&m, false).0;
            m.store.get_mut(id).data_mut()[i] -= 2.0 * h;
            let down = loss(&m, false).0;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-3, "{kind} {}[{i}]: {analytic} vs {numeric}", model.store.name(id));
        }
    }
}

#[test]
fn evaluation_is_pure() {
    let s = samples(5, 30);
    let refs: Vec<&SequenceSample> = s.iter().collect();
    let model = ArrivalNet64::new(ModelConfig::default(), 3).unwrap();
    let a = evaluate(&model, &refs).unwrap();
    let b = evaluate(&model, &refs).unwrap();
    assert_eq!(a, b);
}

#[test]
fn simulation_is_seeded_and_well_formed() {
    let a = simulate(5, &NetworkParams::default(), &SimParams::default(), 2, false).unwrap();
    let b = simulate(5, &NetworkParams::default(), &SimParams::default(), 2, false).unwrap();
    assert_eq!(a.trips, b.trips);
    let (windows, _) = build_windows(&a.trips, 10, 5);
    for w in windows.iter().take(500) {
        assert!(w.past.iter().all(|r| r.features().len() == FEATURE_CHANNELS && r.features().iter().all(|v| v.is_finite())));
        assert_eq!(w.window::<f64>().numel() + w.context::<f64>().numel(), 10 * (5 + 2));
    }
}
