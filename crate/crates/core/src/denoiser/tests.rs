use super::*;
use rand::Rng as _;
use crate::rng::rng_for;
use proptest::prelude::*;
use rand_distr::StandardNormal;

fn spec(widths: &[usize]) -> DenoiserSpec {
    DenoiserSpec::new(2, widths.to_vec(), 4).unwrap()
}

fn random_batch(n: usize, dim: usize, timesteps: usize, seed: u64) -> Vec<Example> {
    let mut rng = rng_for(seed, "test-batch", 0);
    (0..n)
        .map(|_| Example {
            x0: (0..dim).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect(),
            t: rng.gen_range(0..timesteps),
            eps: (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        })
        .collect()
}

/// Independent f64 evaluation of the network and loss, used as the
/// finite-difference oracle.
struct Oracle {
    shapes: Vec<(usize, usize)>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    embed: usize,
}

impl Oracle {
    fn from(p: &Parameters) -> Self {
        Self {
            shapes: p.spec().layer_shapes(),
            weights: p.layers().iter().map(|l| l.weight.iter().map(|&w| w as f64).collect()).collect(),
            biases: p.layers().iter().map(|l| l.bias.iter().map(|&b| b as f64).collect()).collect(),
            embed: p.spec().time_embed_dim,
        }
    }

    fn coord(&mut self, (l, bias, j): (usize, bool, usize)) -> &mut f64 {
        if bias {
            &mut self.biases[l][j]
        } else {
            &mut self.weights[l][j]
        }
    }

    fn forward(&self, x: &[f64], t: usize) -> Vec<f64> {
        let mut a: Vec<f64> = x.to_vec();
        let half = self.embed / 2;
        let mut sins = Vec::new();
        let mut coss = Vec::new();
        for j in 0..half {
            let w = (10000f64).powf(-((2 * j) as f64) / self.embed as f64);
            sins.push((t as f64 * w).sin());
            coss.push((t as f64 * w).cos());
        }
        a.extend(sins);
        a.extend(coss);
        let n = self.shapes.len();
        for l in 0..n {
            let (o, i) = self.shapes[l];
            let mut z = vec![0.0; o];
            for r in 0..o {
                let mut s = self.biases[l][r];
                for c in 0..i {
                    s += self.weights[l][r * i + c] * a[c];
                }
                z[r] = if l + 1 < n { s / (1.0 + (-s).exp()) } else { s };
            }
            a = z;
        }
        a
    }

    fn loss(&self, batch: &[Example], s: &NoiseSchedule) -> f64 {
        let mut total = 0.0;
        for ex in batch {
            let ab = s.alpha_bars()[ex.t];
            let xt: Vec<f64> = ex
                .x0
                .iter()
                .zip(&ex.eps)
                .map(|(x, e)| ab.sqrt() * x + (1.0 - ab).sqrt() * e)
                .collect();
            // The model sees x_t rounded to f32.
            let xt: Vec<f64> = xt.iter().map(|&v| v as f32 as f64).collect();
            let out = self.forward(&xt, ex.t);
            let mut se = 0.0;
            for (o, e) in out.iter().zip(&ex.eps) {
                se += (o - e) * (o - e);
            }
            total += se / ex.eps.len() as f64;
        }
        total / batch.len() as f64
    }
}

/// Central differences on the f64 oracle against the analytic f32 gradient.
fn gradient_check(widths: &[usize], seed: u64, coords: usize) -> Vec<(f64, f64)> {
    let s = NoiseSchedule::cosine(50, 0.008).unwrap();
    let sp = spec(widths);
    let p = Parameters::init(&sp, seed).unwrap();
    let batch = random_batch(6, 2, 50, seed + 1);
    let g = grad(&p, &batch, &s).unwrap();
    let mut oracle = Oracle::from(&p);
    let mut rng = rng_for(seed, "coords", 0);
    let h = 1e-3;
    let mut out = Vec::new();
    for _ in 0..coords {
        let l = rng.gen_range(0..oracle.shapes.len());
        let is_bias = rng.gen_bool(0.2);
        let (analytic, base) = if is_bias {
            let j = rng.gen_range(0..oracle.biases[l].len());
            (g.layers[l].bias[j] as f64, (l, true, j))
        } else {
            let j = rng.gen_range(0..oracle.weights[l].len());
            (g.layers[l].weight[j] as f64, (l, false, j))
        };
        let orig = *oracle.coord(base);
        *oracle.coord(base) = orig + h;
        let up = oracle.loss(&batch, &s);
        *oracle.coord(base) = orig - h;
        let down = oracle.loss(&batch, &s);
        *oracle.coord(base) = orig;
        out.push((analytic, (up - down) / (2.0 * h)));
    }
    out
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[test]
fn gradients_match_finite_differences() {
    for (i, widths) in [vec![8], vec![6, 5], vec![16, 8, 4]].iter().enumerate() {
        for (a, n) in gradient_check(widths, 11 + i as u64, 20) {
            assert!(rel_err(a, n) <= 1e-3, "{widths:?}: analytic {a} vs numeric {n}");
        }
    }
}

#[test]
fn init_is_deterministic_and_bounded() {
    let sp = spec(&[16, 8]);
    let a = Parameters::init(&sp, 5).unwrap();
    let b = Parameters::init(&sp, 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, Parameters::init(&sp, 6).unwrap());
    for layer in a.layers() {
        assert!(layer.bias.iter().all(|&x| x == 0.0));
        let bound = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt() as f32;
        assert!(layer.weight.iter().all(|w| w.abs() <= bound));
    }
}

#[test]
fn time_embedding_contract() {
    let e = time_embedding(0, 10, 8).unwrap();
    assert_eq!(&e[..4], &[0.0; 4]);
    assert_eq!(&e[4..], &[1.0; 4]);
    assert!(matches!(time_embedding(0, 10, 7), Err(DenoiserError::OddEmbedding(7))));
    assert!(matches!(
        time_embedding(10, 10, 8),
        Err(DenoiserError::TimestepOutOfRange { t: 10, len: 10 })
    ));
    // Exhaustive distinctness over the grid for the smallest dimension.
    let timesteps = 10_000;
    let mut seen: Vec<(u64, u64)> = (0..timesteps)
        .map(|t| {
            let e = time_embedding(t, timesteps, 2).unwrap();
            assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
            (e[0].to_bits(), e[1].to_bits())
        })
        .collect();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen.len(), timesteps);
}

#[test]
fn zero_network_outputs_zero() {
    let sp = spec(&[8, 8]);
    let p = Parameters::zeros(&sp).unwrap();
    assert_eq!(p.forward(&[0.3, -1.0], 7).unwrap(), vec![0.0, 0.0]);
    let p = Parameters::init(&DenoiserSpec::new(5, vec![3], 2).unwrap(), 1).unwrap();
    assert_eq!(p.forward(&[0.0; 5], 0).unwrap().len(), 5);
    assert!(matches!(p.forward(&[0.0; 4], 0), Err(DenoiserError::Shape { .. })));
}

#[test]
fn hand_computed_forward() {
    // input_dim 1, embedding dim 2 (t = 0 gives [sin 0, cos 0] = [0, 1]), two hidden units.
    let sp = DenoiserSpec::new(1, vec![2], 2).unwrap();
    let layers = vec![
        LayerParams {
            out_dim: 2,
            in_dim: 3,
            weight: vec![1.0, 0.0, 0.5, -1.0, 0.0, 0.25],
            bias: vec![0.1, -0.2],
        },
        LayerParams {
            out_dim: 1,
            in_dim: 2,
            weight: vec![2.0, -3.0],
            bias: vec![0.05],
        },
    ];
    let p = Parameters::from_layers(sp, layers).unwrap();
    let x = 0.3;
    let z0: f64 = x + 0.5 + 0.1;
    let z1: f64 = -x + 0.25 - 0.2;
    let h0 = z0 / (1.0 + (-z0).exp());
    let h1 = z1 / (1.0 + (-z1).exp());
    let expected = 2.0 * h0 - 3.0 * h1 + 0.05;
    let got = p.forward(&[x], 0).unwrap()[0];
    assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
}

struct Perfect<'a> {
    schedule: &'a NoiseSchedule,
    batch: &'a [Example],
}

impl EpsModel for Perfect<'_> {
    fn predict_eps(&self, x_t: &[f64], t: usize) -> Vec<f64> {
        // Look up the example that produced this x_t and return its noise.
        self.batch
            .iter()
            .find(|ex| ex.t == t && self.schedule.forward_diffuse(&ex.x0, t, &ex.eps).unwrap() == x_t)
            .map(|ex| ex.eps.clone())
            .unwrap()
    }
}

#[test]
fn loss_cases() {
    let s = NoiseSchedule::cosine(100, 0.008).unwrap();
    let batch = random_batch(16, 2, 100, 3);
    let perfect = Perfect {
        schedule: &s,
        batch: &batch,
    };
    assert_eq!(loss_with(&perfect, 2, &batch, &s).unwrap(), 0.0);

    let zero = Parameters::zeros(&spec(&[4])).unwrap();
    let big = random_batch(8192, 2, 100, 4);
    let l = loss(&zero, &big, &s).unwrap();
    assert!((l - 1.0).abs() < 0.05, "{l}");

    assert_eq!(loss(&zero, &[], &s), Err(DenoiserError::EmptyBatch));
    let p = Parameters::init(&spec(&[8]), 1).unwrap();
    assert!(loss(&p, &batch, &s).unwrap() >= 0.0);
    let (l1, _) = loss_and_grad(&p, &batch, &s).unwrap();
    assert_eq!(l1, loss(&p, &batch, &s).unwrap());
}

#[test]
fn zero_loss_has_zero_gradient() {
    let s = NoiseSchedule::cosine(20, 0.008).unwrap();
    let p = Parameters::zeros(&spec(&[4, 4])).unwrap();
    let batch: Vec<Example> = (0..4)
        .map(|t| Example {
            x0: vec![0.5, -0.5],
            t,
            eps: vec![0.0, 0.0],
        })
        .collect();
    let (l, g) = loss_and_grad(&p, &batch, &s).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.is_zero());
}

#[test]
fn gradient_is_linear_in_the_loss() {
    // The batch loss is a mean, so |B|·grad(B) = |B1|·grad(B1) + |B2|·grad(B2).
    let s = NoiseSchedule::cosine(20, 0.008).unwrap();
    let p = Parameters::init(&spec(&[6]), 2).unwrap();
    let batch = random_batch(6, 2, 20, 9);
    let mut whole = grad(&p, &batch, &s).unwrap();
    whole.scale(6.0);
    let mut first = grad(&p, &batch[..3], &s).unwrap();
    let mut second = grad(&p, &batch[3..], &s).unwrap();
    first.scale(3.0);
    second.scale(3.0);
    for ((w, a), b) in whole.layers.iter().zip(&first.layers).zip(&second.layers) {
        for ((x, y), z) in w.weight.iter().zip(&a.weight).zip(&b.weight) {
            assert!((x - (y + z)).abs() <= 1e-5 * (1.0 + x.abs()));
        }
    }
    let mut doubled = grad(&p, &batch, &s).unwrap();
    let single = doubled.clone();
    doubled.scale(2.0);
    for (a, b) in doubled.layers.iter().zip(&single.layers) {
        assert!(a.weight.iter().zip(&b.weight).all(|(x, y)| *x == 2.0 * y));
    }
}

#[test]
fn adam_contracts() {
    let sp = spec(&[6]);
    let p0 = Parameters::init(&sp, 1).unwrap();
    let mut p = p0.clone();
    let mut state = AdamState::new(&p);
    let zero = Gradients::zeros_like(&p);
    state.step(&mut p, &zero, &AdamConfig::default());
    assert_eq!(p, p0);

    let s = NoiseSchedule::cosine(20, 0.008).unwrap();
    let batch = random_batch(8, 2, 20, 2);
    let g = grad(&p0, &batch, &s).unwrap();
    let mut p = p0.clone();
    let mut state = AdamState::new(&p);
    let cfg = AdamConfig::default();
    state.step(&mut p, &g, &cfg);
    for ((after, before), gl) in p.layers().iter().zip(p0.layers()).zip(&g.layers) {
        for ((a, b), gr) in after.weight.iter().zip(&before.weight).zip(&gl.weight) {
            if gr.abs() > 1e-4 {
                let moved = (a - b) as f64;
                assert!((moved + cfg.lr * gr.signum() as f64).abs() < 1e-5, "{moved} {gr}");
            }
        }
    }

    let run = || {
        let mut p = p0.clone();
        let mut st = AdamState::new(&p);
        for _ in 0..5 {
            let g = grad(&p, &batch, &s).unwrap();
            st.step(&mut p, &g, &cfg);
        }
        p
    };
    assert_eq!(run(), run());
}

#[test]
fn training_sanity_on_tiny_batch() {
    let s = NoiseSchedule::cosine(50, 0.008).unwrap();
    let mut p = Parameters::init(&spec(&[32, 32]), 3).unwrap();
    let batch = random_batch(8, 2, 50, 5);
    let initial = loss(&p, &batch, &s).unwrap();
    let mut st = AdamState::new(&p);
    let cfg = AdamConfig::default();
    for _ in 0..500 {
        let g = grad(&p, &batch, &s).unwrap();
        st.step(&mut p, &g, &cfg);
    }
    let fin = loss(&p, &batch, &s).unwrap();
    assert!(fin <= 0.5 * initial, "{initial} -> {fin}");
}

#[test]
fn flops_counting() {
    assert_eq!(2 * 4 * 8, 64);
    assert_eq!(layer_flops(4, 8, false) - 8, 64);
    let sp = spec(&[8, 6, 4]);
    let full = count_flops(&sp, None).unwrap();
    assert_eq!(full, count_flops(&sp, Some(&PruneMask::full(&sp))).unwrap());

    // Half of every hidden layer kept; count connections one by one.
    let mask = PruneMask {
        kept: vec![vec![0, 2, 4, 6], vec![1, 3, 5], vec![0, 3]],
    };
    let widths = [6usize, 4, 3, 2, 2];
    let mut edges = 0u64;
    let mut outputs = 0u64;
    let mut hidden_units = 0u64;
    for l in 0..4 {
        for _o in 0..widths[l + 1] {
            for _i in 0..widths[l] {
                edges += 1;
            }
            outputs += 1;
            if l < 3 {
                hidden_units += 1;
            }
        }
    }
    assert_eq!(count_flops(&sp, Some(&mask)).unwrap(), 2 * edges + outputs + 4 * hidden_units);

    let bad = PruneMask {
        kept: vec![vec![], vec![0], vec![0]],
    };
    assert!(count_flops(&sp, Some(&bad)).is_err());
}

#[test]
fn mask_application() {
    let sp = spec(&[6, 5]);
    let p = Parameters::init(&sp, 4).unwrap();
    assert_eq!(apply_mask(&p, &PruneMask::full(&sp)).unwrap(), p);

    let mask = PruneMask {
        kept: vec![vec![0, 2, 3], vec![1, 4]],
    };
    let pruned = apply_mask(&p, &mask).unwrap();
    assert_eq!(pruned.spec(), &mask.masked_spec(&sp));
    for (layer, (o, i)) in pruned.layers().iter().zip(pruned.spec().layer_shapes()) {
        assert_eq!((layer.out_dim, layer.in_dim), (o, i));
        assert_eq!(layer.weight.len(), o * i);
    }

    // Zero the channels the mask drops: the pruned and full nets then agree.
    let mut dead = p.clone();
    for (l, kept) in mask.kept.iter().enumerate() {
        for j in 0..sp.hidden_widths[l] {
            if kept.contains(&j) {
                continue;
            }
            let layer = &mut dead.layers_mut()[l];
            let cols = layer.in_dim;
            layer.weight[j * cols..(j + 1) * cols].iter_mut().for_each(|w| *w = 0.0);
            layer.bias[j] = 0.0;
            let next = &mut dead.layers_mut()[l + 1];
            let cols = next.in_dim;
            for r in 0..next.out_dim {
                next.weight[r * cols + j] = 0.0;
            }
        }
    }
    let small = apply_mask(&dead, &mask).unwrap();
    for t in [0, 5, 17] {
        let a = dead.forward(&[0.4, -1.2], t).unwrap();
        let b = small.forward(&[0.4, -1.2], t).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    let empty = PruneMask {
        kept: vec![vec![], vec![0]],
    };
    assert!(matches!(apply_mask(&p, &empty), Err(DenoiserError::InvalidMask { layer: 0, .. })));
}

#[test]
fn removals_roundtrip_to_mask() {
    let sp = spec(&[4, 3]);
    let mut remove = BTreeMap::new();
    remove.insert(0, vec![1, 3]);
    let m = PruneMask::from_removals(&sp, &remove).unwrap();
    assert_eq!(m.kept, vec![vec![0, 2], vec![0, 1, 2]]);
    assert_eq!(m.removed_count(&sp), 2);
    remove.insert(1, vec![0, 1, 2]);
    assert!(PruneMask::from_removals(&sp, &remove).is_err());
    let mut bad = BTreeMap::new();
    bad.insert(0, vec![9]);
    assert!(PruneMask::from_removals(&sp, &bad).is_err());
}

#[test]
fn checkpoint_roundtrip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    let sp = spec(&[7, 3]);
    let p = Parameters::init(&sp, 8).unwrap();
    save_checkpoint(&p, &path).unwrap();
    let (back, back_spec) = load_checkpoint(&path).unwrap();
    assert_eq!(back_spec, sp);
    for (a, b) in back.layers().iter().zip(p.layers()) {
        assert!(a.weight.iter().zip(&b.weight).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    let pruned = apply_mask(
        &p,
        &PruneMask {
            kept: vec![vec![0, 1, 5], vec![2]],
        },
    )
    .unwrap();
    save_checkpoint(&pruned, &path).unwrap();
    let (_, masked_spec) = load_checkpoint(&path).unwrap();
    assert_eq!(masked_spec.hidden_widths, vec![3, 1]);

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    match load_checkpoint(&path) {
        Err(CheckpointError::ShapeMismatch { field, .. }) => assert_eq!(field, "layer2.bias"),
        other => panic!("unexpected {other:?}"),
    }
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    std::fs::write(&path, &wrong).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic)));
    let mut wrong = bytes.clone();
    wrong[8] = 9;
    std::fs::write(&path, &wrong).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Version(9))));
    std::fs::write(&path, &bytes[..12]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Truncated(_))));
}

fn arb_mask(widths: Vec<usize>) -> impl Strategy<Value = PruneMask> {
    widths
        .into_iter()
        .map(|w| proptest::sample::subsequence((0..w).collect::<Vec<_>>(), 1..=w))
        .collect::<Vec<_>>()
        .prop_map(|kept| PruneMask { kept })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_composition(seed in any::<u64>(), (a, b) in arb_mask(vec![6, 5, 4]).prop_flat_map(|a| {
        let widths: Vec<usize> = a.kept.iter().map(Vec::len).collect();
        (Just(a), arb_mask(widths))
    })) {
        let sp = spec(&[6, 5, 4]);
        let p = Parameters::init(&sp, seed).unwrap();
        let twice = apply_mask(&apply_mask(&p, &a).unwrap(), &b).unwrap();
        let once = apply_mask(&p, &a.compose(&b).unwrap()).unwrap();
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn removing_a_channel_reduces_flops(widths in proptest::collection::vec(2usize..10, 1..4), pick in any::<prop::sample::Index>(), idx in any::<prop::sample::Index>()) {
        let sp = DenoiserSpec::new(3, widths.clone(), 4).unwrap();
        let full = PruneMask::full(&sp);
        let l = pick.index(widths.len());
        let mut m = full.clone();
        m.kept[l].remove(idx.index(widths[l]));
        prop_assert!(count_flops(&sp, Some(&m)).unwrap() < count_flops(&sp, Some(&full)).unwrap());
    }
}
