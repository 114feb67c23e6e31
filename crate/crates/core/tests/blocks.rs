use dpsnet::blocks::{
    correlation_responses, global_templates, reference_grid, Ablation, Aggregator, Bfm, BoundaryDecoder,
    CorrelationMap, DpsNet, DpsTransformer, LocalExtractor, Mffm, NetConfig,
};
use dpsnet::gradcheck::{random_input, suite, GradCheck};
use dpsnet::nn::{Conv2d, Ctx, ParamStore};
use dpsnet::{rng, Tape, Tensor};

fn block_config(channels: usize, patch_grid: usize, ref_grid: usize) -> NetConfig {
    NetConfig {
        channels,
        patch_grid,
        ref_grid,
        heads: 2,
        offset_hidden: 4,
        ..NetConfig::desk()
    }
}

fn randomize(store: &mut ParamStore, conv: &Conv2d, lo: f64, hi: f64, seed: u64) {
    let w = store.get_mut(conv.weight);
    let shape = w.shape().to_vec();
    *w = rng::uniform(&shape, lo, hi, &mut rng::seeded(seed));
}

/// Plain bilinear read with border clamping, written against raw indices.
fn bilinear_oracle(x: &Tensor, c: usize, y: f64, xx: f64) -> f64 {
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let y = y.clamp(0.0, (h - 1) as f64);
    let xx = xx.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, xx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, xx - x0 as f64);
    x.get(&[c, y0, x0]) * (1.0 - fy) * (1.0 - fx)
        + x.get(&[c, y0, x1]) * (1.0 - fy) * fx
        + x.get(&[c, y1, x0]) * fy * (1.0 - fx)
        + x.get(&[c, y1, x1]) * fy * fx
}

// ---- global extractor ----

#[test]
fn global_templates_match_loop_oracle() {
    let x = random_input(&[8, 6, 6], &mut rng::seeded(11));
    let tape = Tape::new();
    let tg = tape.to_tensor(global_templates(&tape, tape.constant(x.clone()), false).unwrap());
    assert_eq!(tg.shape(), &[8, 8]);
    let hw = 36.0;
    for i in 0..8 {
        let max = (0..36).map(|p| x.data()[i * 36 + p]).fold(f64::MIN, f64::max);
        let z: f64 = (0..36).map(|p| (x.data()[i * 36 + p] - max).exp()).sum();
        for j in 0..8 {
            let mut acc = 0.0;
            for p in 0..36 {
                let mask = (x.data()[i * 36 + p] - max).exp() / z;
                acc += x.data()[j * 36 + p] * mask;
            }
            assert!((tg.get(&[i, j]) - acc / hw).abs() < 1e-12);
        }
    }
}

#[test]
fn global_templates_constant_and_spike() {
    let tape = Tape::new();
    let c = 0.7;
    let x = tape.constant(Tensor::full(&[4, 5, 5], c));
    let tg = tape.to_tensor(global_templates(&tape, x, false).unwrap());
    for v in tg.data() {
        assert!((v - c / 25.0).abs() < 1e-15);
    }

    let mut spiked = random_input(&[4, 5, 5], &mut rng::seeded(3));
    spiked.set(&[2, 1, 3], 200.0);
    let tg = tape.to_tensor(global_templates(&tape, tape.constant(spiked.clone()), false).unwrap());
    for j in 0..4 {
        let expected = spiked.get(&[j, 1, 3]) / 25.0;
        assert!((tg.get(&[2, j]) - expected).abs() < 1e-9, "{} vs {expected}", tg.get(&[2, j]));
    }

    // normalized pooling divides by the softmax mass, which is 1
    let tn = tape.to_tensor(global_templates(&tape, tape.constant(spiked), true).unwrap());
    for j in 0..4 {
        assert!((tn.get(&[2, j]) - tg.get(&[2, j]) * 25.0).abs() < 1e-9);
    }
}

// ---- local extractor ----

#[test]
fn zero_offsets_sample_the_reference_grid() {
    let cfg = block_config(4, 3, 2);
    let mut store = ParamStore::new();
    let local = LocalExtractor::new(&mut store, &mut rng::seeded(0), "local", &cfg);
    let x = random_input(&[4, 12, 12], &mut rng::seeded(5));
    let tape = Tape::new();
    let out = local.forward(&Ctx::eval(&tape, &store), tape.constant(x.clone())).unwrap();
    let offsets = tape.to_tensor(out.offsets);
    assert_eq!(offsets.shape(), &[9, 2, 2, 2]);
    assert!(offsets.data().iter().all(|&v| v == 0.0));
    let grid = reference_grid(3, 2, 12, 12);
    assert_eq!(tape.to_tensor(out.points), grid);

    let templates = tape.to_tensor(out.templates);
    assert_eq!(templates.shape(), &[4, 9, 4]);
    for c in 0..4 {
        for patch in 0..9 {
            for point in 0..4 {
                let k = patch * 4 + point;
                let expected = bilinear_oracle(&x, c, grid.get(&[k, 0]), grid.get(&[k, 1]));
                assert!((templates.get(&[c, patch, point]) - expected).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn lattice_aligned_grid_reads_raw_pixels() {
    // 12x12 map, 2x2 patches of 6x6, 2x2 points: spacing 3 lands on pixel centers
    let cfg = block_config(3, 2, 2);
    let mut store = ParamStore::new();
    let local = LocalExtractor::new(&mut store, &mut rng::seeded(0), "local", &cfg);
    let x = random_input(&[3, 12, 12], &mut rng::seeded(9));
    let tape = Tape::new();
    let out = local.forward(&Ctx::eval(&tape, &store), tape.constant(x.clone())).unwrap();
    let templates = tape.to_tensor(out.templates);
    for c in 0..3 {
        for py in 0..2 {
            for px in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        let (y, xx) = (py * 6 + 1 + 3 * a, px * 6 + 1 + 3 * b);
                        let got = templates.get(&[c, py * 2 + px, a * 2 + b]);
                        assert_eq!(got, x.get(&[c, y, xx]));
                    }
                }
            }
        }
    }
}

#[test]
fn offsets_stay_strictly_inside_the_scale() {
    for (scale, weight) in [(0.5, 0.5), (0.5, 1e3), (1.0, 50.0), (0.25, 1e6)] {
        let cfg = NetConfig {
            offset_scale: scale,
            ..block_config(4, 3, 3)
        };
        let mut store = ParamStore::new();
        let local = LocalExtractor::new(&mut store, &mut rng::seeded(1), "local", &cfg);
        randomize(&mut store, &local.conv2, -weight, weight, 2);
        let x = rng::uniform(&[4, 18, 18], -3.0, 3.0, &mut rng::seeded(4));
        let tape = Tape::new();
        let out = local.forward(&Ctx::eval(&tape, &store), tape.constant(x)).unwrap();
        let offsets = tape.to_tensor(out.offsets);
        assert!(offsets.data().iter().all(|v| v.abs() < scale), "scale {scale}");
        if weight > 100.0 {
            // saturated: right up against the bound
            assert!(offsets.data().iter().any(|v| v.abs() > 0.99 * scale));
        }
    }
}

#[test]
fn untileable_map_is_rejected() {
    let cfg = block_config(4, 3, 2);
    let mut store = ParamStore::new();
    let local = LocalExtractor::new(&mut store, &mut rng::seeded(0), "local", &cfg);
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[4, 10, 12]));
    assert!(local.forward(&Ctx::eval(&tape, &store), x).is_err());
}

// ---- aggregator ----

#[test]
fn aggregator_zero_inputs_give_uniform_scores() {
    let cfg = block_config(8, 3, 2);
    let mut store = ParamStore::new();
    let agg = Aggregator::new(&mut store, &mut rng::seeded(0), "agg", &cfg);
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, &store);
    let out = agg
        .forward(&ctx, tape.constant(Tensor::zeros(&[8, 8])), tape.constant(Tensor::zeros(&[8, 9, 4])))
        .unwrap();
    let inter = tape.to_tensor(out.inter_scores);
    let intra = tape.to_tensor(out.intra_scores);
    assert_eq!(inter.shape(), &[8, 4]);
    assert_eq!(intra.shape(), &[8, 9]);
    assert!(inter.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    assert!(intra.data().iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));
    let agg_out = tape.to_tensor(out.aggregated);
    assert_eq!(agg_out.shape(), &[8, 8]);
    assert!(agg_out.is_finite());
}

#[test]
fn aggregator_score_rows_are_distributions() {
    let cfg = block_config(8, 3, 2);
    let mut store = ParamStore::new();
    let agg = Aggregator::new(&mut store, &mut rng::seeded(3), "agg", &cfg);
    let mut r = rng::seeded(8);
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, &store);
    let out = agg
        .forward(&ctx, tape.constant(random_input(&[8, 8], &mut r)), tape.constant(random_input(&[8, 9, 4], &mut r)))
        .unwrap();
    assert_eq!(tape.shape(out.aggregated), vec![8, 8]);
    assert_eq!(tape.shape(out.inter_templates), vec![8, 4]);
    assert_eq!(tape.shape(out.intra_templates), vec![8, 9]);
    for scores in [tape.to_tensor(out.inter_scores), tape.to_tensor(out.intra_scores)] {
        let cols = scores.shape()[1];
        for row in scores.data().chunks(cols) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }
}

// ---- correlation map ----

#[test]
fn identity_templates_reproduce_the_input() {
    let x = random_input(&[6, 7, 5], &mut rng::seeded(2));
    let tape = Tape::new();
    let responses = correlation_responses(&tape, tape.constant(Tensor::eye(6)), tape.constant(x.clone())).unwrap();
    assert_eq!(tape.to_tensor(responses), x);
}

#[test]
fn zero_templates_leave_only_the_input_branch() {
    let mut store = ParamStore::new();
    let corr = CorrelationMap::new(&mut store, &mut rng::seeded(1), "corr", 4);
    let x = random_input(&[4, 6, 6], &mut rng::seeded(2));
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, &store);
    let (out, responses) = corr.forward(&ctx, tape.constant(Tensor::zeros(&[4, 4])), tape.constant(x.clone())).unwrap();
    assert!(tape.to_tensor(responses).data().iter().all(|&v| v == 0.0));
    // 1x1 conv over [0; X] uses only the second half of the kernel's input channels
    let w = store.get(corr.fuse.weight);
    let out = tape.to_tensor(out);
    for o in 0..4 {
        for p in 0..36 {
            let expected: f64 = (0..4).map(|i| w.get(&[o, 4 + i, 0, 0]) * x.data()[i * 36 + p]).sum();
            assert!((out.data()[o * 36 + p] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn responses_match_matmul_oracle() {
    let mut r = rng::seeded(12);
    let ta = random_input(&[5, 5], &mut r);
    let x = random_input(&[5, 4, 3], &mut r);
    let tape = Tape::new();
    let got = tape.to_tensor(correlation_responses(&tape, tape.constant(ta.clone()), tape.constant(x.clone())).unwrap());
    for i in 0..5 {
        for p in 0..12 {
            let expected: f64 = (0..5).map(|j| ta.get(&[i, j]) * x.data()[j * 12 + p]).sum();
            assert!((got.data()[i * 12 + p] - expected).abs() < 1e-12);
        }
    }
    assert!(correlation_responses(&tape, tape.constant(Tensor::zeros(&[5, 4])), tape.constant(x)).is_err());
}

// ---- transformer ----

#[test]
fn transformer_preserves_shape_and_bypasses() {
    let cfg = block_config(8, 3, 2);
    let mut store = ParamStore::new();
    let dps = DpsTransformer::new(&mut store, &mut rng::seeded(0), "dps", &cfg);
    let x = random_input(&[8, 24, 24], &mut rng::seeded(1));
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, &store);
    let xv = tape.constant(x.clone());
    let out = dps.forward(&ctx, xv).unwrap();
    assert_eq!(tape.shape(out.output), vec![8, 24, 24]);
    assert_eq!(tape.shape(out.global), vec![8, 8]);
    assert_eq!(tape.shape(out.local.templates), vec![8, 9, 4]);
    assert_eq!(tape.shape(out.aggregator.aggregated), vec![8, 8]);
    assert_eq!(tape.shape(out.responses), vec![8, 24, 24]);
    assert!(tape.to_tensor(out.output).is_finite());
    let bypass = dps.apply(&ctx, xv, false).unwrap();
    assert_eq!(tape.to_tensor(bypass), x);
}

#[test]
fn transformer_input_gradient_matches_finite_differences() {
    let cfg = block_config(4, 3, 2);
    let mut store = ParamStore::new();
    let dps = DpsTransformer::new(&mut store, &mut rng::seeded(4), "dps", &cfg);
    randomize(&mut store, &dps.local.conv2, -0.5, 0.5, 6);
    let x = random_input(&[4, 12, 12], &mut rng::seeded(7));
    let report = GradCheck::default()
        .run("dps_transformer", &[x], |tape, v| {
            dps.forward(&Ctx::eval(tape, &store), v[0]).map(|o| o.output)
        })
        .unwrap();
    assert_eq!(report.checked, 576);
    assert!(report.passed(), "{report}");
}

// ---- multi-scale fusion ----

#[test]
fn mffm_zero_in_zero_out_and_shape() {
    let mut store = ParamStore::new();
    let mffm = Mffm::new(&mut store, &mut rng::seeded(0), "mffm", 96, 64);
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, &store);
    let zero = mffm.forward(&ctx, tape.constant(Tensor::zeros(&[96, 22, 22])), true).unwrap();
    let zero = tape.to_tensor(zero);
    assert_eq!(zero.shape(), &[64, 22, 22]);
    assert!(zero.data().iter().all(|&v| v == 0.0));
    let random = mffm.forward(&ctx, tape.constant(random_input(&[96, 22, 22], &mut rng::seeded(1))), true).unwrap();
    assert_eq!(tape.shape(random), vec![64, 22, 22]);
}

#[test]
fn mffm_receptive_field() {
    // analytic: each 3x3 layer at rate r widens the window by 2r
    let analytic: usize = 1 + [6, 12, 18].iter().map(|r| (3 - 1) * r).sum::<usize>();
    assert_eq!(Mffm::receptive_field(), analytic);
    assert_eq!(analytic, 73);

    // empirical: gradient support of the center output pixel along its row;
    // positive weights and inputs keep every ReLU open
    let mut store = ParamStore::new();
    let mffm = Mffm::new(&mut store, &mut rng::seeded(2), "mffm", 1, 2);
    for (i, t) in store.tensors_mut().iter_mut().enumerate() {
        *t = rng::uniform(t.shape(), 0.01, 0.1, &mut rng::seeded(100 + i as u64));
    }
    let size = 81;
    let x = rng::uniform(&[1, size, size], 0.5, 1.5, &mut rng::seeded(3));
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, &store);
    let xv = tape.leaf(x);
    let y = mffm.forward(&ctx, xv, true).unwrap();
    let center = tape.narrow(tape.narrow(y, 1, size / 2, 1).unwrap(), 2, size / 2, 1).unwrap();
    let g = tape.backward(tape.sum_all(center)).unwrap().wrt(xv, &[1, size, size]);
    let row: Vec<usize> = (0..size).filter(|&c| g.get(&[0, size / 2, c]) != 0.0).collect();
    let extent = row.last().unwrap() - row.first().unwrap() + 1;
    assert_eq!(extent, Mffm::receptive_field());
}

// ---- boundary decoder and fusion ----

fn zero_biases(store: &mut ParamStore) {
    for (name, t) in store.names().to_vec().iter().zip(store.tensors_mut()) {
        if name.ends_with(".bias") {
            *t = Tensor::zeros(t.shape());
        }
    }
}

#[test]
fn boundary_decoder_zero_and_shape() {
    let c = 8;
    let mut store = ParamStore::new();
    let bd = BoundaryDecoder::new(&mut store, &mut rng::seeded(0), "bd", c);
    zero_biases(&mut store);
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, &store);
    // a 352x352 input gives stride-4..32 maps of 88, 44, 22, 11
    let zeros: Vec<_> = [88, 44, 22, 11].iter().map(|&s| tape.constant(Tensor::zeros(&[c, s, s]))).collect();
    let e = tape.to_tensor(bd.forward(&ctx, &zeros).unwrap());
    assert_eq!(e.shape(), &[1, 88, 88]);
    assert!(e.data().iter().all(|&v| v == 0.5));

    let mut r = rng::seeded(1);
    let random: Vec<_> = [88, 44, 22, 11].iter().map(|&s| tape.constant(random_input(&[c, s, s], &mut r))).collect();
    let e = tape.to_tensor(bd.forward(&ctx, &random).unwrap());
    assert!(e.data().iter().all(|&v| v > 0.0 && v < 1.0));
    assert!(bd.forward(&ctx, &random[..3]).is_err());
}

#[test]
fn bfm_with_empty_boundary_is_a_pointwise_conv() {
    let mut store = ParamStore::new();
    let bfm = Bfm::new(&mut store, &mut rng::seeded(0), "bfm", 4);
    let x = random_input(&[4, 44, 44], &mut rng::seeded(1));
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, &store);
    let out = bfm.forward(&ctx, tape.constant(x.clone()), tape.constant(Tensor::zeros(&[1, 11, 11]))).unwrap();
    let direct = bfm.out.forward(&ctx, tape.constant(x)).unwrap();
    let (out, direct) = (tape.to_tensor(out), tape.to_tensor(direct));
    assert_eq!(out.shape(), &[4, 44, 44]);
    assert!(out.max_abs_diff(&direct) < 1e-12);
}

#[test]
fn bfm_with_full_boundary_pools_globally() {
    let x = random_input(&[4, 44, 44], &mut rng::seeded(2));
    let tape = Tape::new();
    let pooled = dpsnet::blocks::weighted_pool(&tape, tape.constant(x.clone()), tape.constant(Tensor::ones(&[1, 44, 44])))
        .unwrap();
    let pooled = tape.to_tensor(pooled);
    assert_eq!(pooled.shape(), &[4, 1, 1]);
    for c in 0..4 {
        let gap = x.data()[c * 1936..(c + 1) * 1936].iter().sum::<f64>() / 1936.0;
        assert!((pooled.data()[c] - gap).abs() < 1e-10);
    }
}

// ---- full network ----

fn toy_net_config() -> NetConfig {
    NetConfig {
        patch_grid: 2,
        ..suite::toy_config()
    }
}

#[test]
fn network_outputs_are_probabilities() {
    let cfg = toy_net_config();
    let (net, params) = DpsNet::new(cfg, 0).unwrap();
    let image = rng::uniform(&[3, 64, 64], 0.0, 1.0, &mut rng::seeded(1));
    let (mask, boundary) = net.predict(&params, &image).unwrap();
    assert_eq!(mask.shape(), &[1, 64, 64]);
    let boundary = boundary.unwrap();
    assert_eq!(boundary.shape(), &[1, 16, 16]);
    for v in mask.data().iter().chain(boundary.data()) {
        assert!(*v > 0.0 && *v < 1.0);
    }
    assert!(net.predict(&params, &Tensor::zeros(&[3, 64, 96])).is_err());
}

#[test]
fn network_parameter_gradients_match_finite_differences() {
    let report = suite::full_network(3, 20, 1e-3).unwrap();
    assert_eq!(report.checked, 20);
    assert!(report.passed(), "{report}");
}

#[test]
fn every_ablation_combination_runs() {
    let image = rng::uniform(&[3, 64, 64], 0.0, 1.0, &mut rng::seeded(1));
    for bits in 0..16u8 {
        let ablation = Ablation {
            mffm: bits & 1 != 0,
            dps: bits & 2 != 0,
            boundary_decoder: bits & 4 != 0,
            bfm: bits & 8 != 0,
        };
        let cfg = NetConfig {
            ablation,
            ..toy_net_config()
        };
        let (net, params) = DpsNet::new(cfg, 0).unwrap();
        let (mask, boundary) = net.predict(&params, &image).unwrap();
        assert_eq!(mask.shape(), &[1, 64, 64], "{ablation:?}");
        assert!(mask.is_finite());
        assert_eq!(boundary.is_some(), ablation.boundary_decoder);
        if let Some(b) = boundary {
            assert_eq!(b.shape(), &[1, 16, 16]);
        }
    }
}

#[test]
fn input_size_must_be_a_multiple_of_32() {
    let cfg = NetConfig {
        input_size: (80, 64),
        ..toy_net_config()
    };
    assert!(DpsNet::new(cfg, 0).is_err());
}
