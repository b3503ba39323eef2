use fragnet::layers::{
    activation, batch_norm, depthwise_conv1d, group_norm, maxpool1d, pointwise_conv1d,
    Activation, Mode,
};
use fragnet::models::{
    inception_block_forward, load_checkpoint, save_checkpoint, stem_forward, transfer_load,
    Architecture, BlockCtx, Checkpoint, Model, ModelConfig, TrainingMeta,
};
use fragnet::tensor::{add_n, Tape, Tensor, Var};
use fragnet::testutil::{check_gradients_sampled, Lcg};
use fragnet::Error;

const PAPER_DSC_75: f64 = 103_083.0;

fn small(arch: Architecture, blocks: [usize; 3]) -> ModelConfig {
    let mut c = ModelConfig::new(arch, 64, 3);
    c.embed_dim = 4;
    c.stem_out_channels = 4;
    c.block_channels = blocks.to_vec();
    c.head_channels = blocks[2];
    c.norm_groups = 2;
    c.se_reduction = 2;
    c
}

fn ctx<'a, T: fragnet::tensor::Scalar>(m: &'a Model<T>, mode: Mode) -> BlockCtx<'a, T> {
    let c = m.config();
    BlockCtx {
        store: m.store(),
        mode,
        modified: c.architecture.is_modified(),
        groups: c.norm_groups,
        se_reduction: c.se_reduction,
        pool_window: c.pool_window,
        stats: Vec::new(),
    }
}

fn se_params(c: usize, r: usize) -> usize {
    2 * c * c / r + c / r + c
}

#[test]
fn logits_shape() {
    let m = Model::<f32>::build(&ModelConfig::new(Architecture::Dsc, 4096, 75), 1).unwrap();
    let mut rng = Lcg::new(1);
    let a = rng.bytes(4096);
    let b = rng.bytes(4096);
    let logits = m.forward_eval(&[&a, &b]).unwrap();
    assert_eq!(logits.shape(), [2, 75]);
}

#[test]
fn default_plan_lands_near_published_size() {
    let n = Model::<f32>::build(&ModelConfig::new(Architecture::Dsc, 512, 75), 0)
        .unwrap()
        .num_params();
    let rel = (n as f64 - PAPER_DSC_75).abs() / PAPER_DSC_75;
    assert!(rel <= 0.25, "{n} params is {:.1}% away", rel * 100.0);
}

#[test]
fn se_variant_adds_exactly_the_se_parameters() {
    for k in [2, 11, 75] {
        let dsc = Model::<f32>::build(&ModelConfig::new(Architecture::Dsc, 512, k), 0).unwrap();
        let se = Model::<f32>::build(&ModelConfig::new(Architecture::DscSe, 512, k), 0).unwrap();
        let extra: usize = [64, 96, 128].iter().map(|&c| se_params(c, 16)).sum();
        assert_eq!(se.num_params() - dsc.num_params(), extra);
    }
}

#[test]
fn head_delta_law() {
    for arch in Architecture::ALL {
        for size in [512, 4096] {
            let count = |k| {
                Model::<f32>::build(&ModelConfig::new(arch, size, k), 0)
                    .unwrap()
                    .num_params()
            };
            let counts: Vec<(usize, usize)> = [2, 5, 11, 25, 75].iter().map(|&k| (k, count(k))).collect();
            for &(k1, p1) in &counts {
                for &(k2, p2) in &counts {
                    assert_eq!(p1 as i64 - p2 as i64, 129 * (k1 as i64 - k2 as i64));
                }
            }
            assert_eq!(count(75) - count(11), 8_256);
        }
    }
}

#[test]
fn weight_shapes_do_not_depend_on_fragment_size() {
    for arch in Architecture::ALL {
        let a = Model::<f32>::build(&ModelConfig::new(arch, 512, 6), 0).unwrap();
        let b = Model::<f32>::build(&ModelConfig::new(arch, 4096, 6), 0).unwrap();
        let shapes = |m: &Model<f32>| {
            m.store()
                .entries()
                .iter()
                .map(|e| (e.name.clone(), e.tensor.shape().to_vec()))
                .collect::<Vec<_>>()
        };
        assert_eq!(shapes(&a), shapes(&b));
    }
}

#[test]
fn spatial_lengths_through_the_network() {
    for (size, want) in [(512, [512, 128, 32, 8]), (4096, [4096, 1024, 256, 64])] {
        for arch in Architecture::ALL {
            let m = Model::<f32>::build(&ModelConfig::new(arch, size, 5), 0).unwrap();
            let mut tape = Tape::no_grad();
            let vars = m.store().bind(&mut tape);
            let lay = m.layout().map(|id| vars[id.index()]);
            let mut ctx = ctx(&m, Mode::Eval);
            let x = tape.constant(Tensor::zeros(&[size, 32]));
            let mut h = stem_forward(&mut tape, &mut ctx, x, &lay.stem).unwrap();
            let mut lens = vec![tape.shape(h)[0]];
            for block in &lay.blocks {
                h = inception_block_forward(&mut tape, &mut ctx, h, block).unwrap();
                lens.push(tape.shape(h)[0]);
            }
            assert_eq!(lens, want);
            assert_eq!(tape.shape(h)[1], 128);
        }
    }
}

#[test]
fn inception_block_matches_straight_line_composition() {
    let m = Model::<f64>::build(&small(Architecture::Dsc, [6, 6, 8]), 3)
        .unwrap()
        .cast::<f64>();
    let mut rng = Lcg::new(5);
    let x = rng.tensor(&[2, 16, 4], -1.0, 1.0);
    let mut tape = Tape::new();
    let vars = m.store().bind(&mut tape);
    let lay = m.layout().map(|id| vars[id.index()]);
    let xv = tape.constant(x);
    let mut c = ctx(&m, Mode::Train);
    let got = inception_block_forward(&mut tape, &mut c, xv, &lay.blocks[0]).unwrap();
    assert_eq!(tape.shape(got), [2, 4, 6]);

    let block = &m.layout().blocks[0];
    let bn = |tape: &mut Tape<f64>, h: Var, n: &fragnet::models::Norm<fragnet::tensor::ParamId>| {
        let (rm, rv) = n.running.unwrap();
        let (y, _) = batch_norm(
            tape,
            h,
            vars[n.gamma.index()],
            vars[n.beta.index()],
            m.store().get(rm).data(),
            m.store().get(rv).data(),
            1e-5,
            Mode::Train,
        )
        .unwrap();
        activation(tape, y, Activation::Hardswish)
    };
    let mut outs = Vec::new();
    for br in &block.branches {
        let h = depthwise_conv1d(&mut tape, xv, vars[br.dw.index()], 1).unwrap();
        let h = bn(&mut tape, h, &br.dw_norm);
        let h = pointwise_conv1d(&mut tape, h, vars[br.pw.index()], None, 1).unwrap();
        outs.push(bn(&mut tape, h, &br.pw_norm));
    }
    let s = add_n(&mut tape, &outs).unwrap();
    let p = maxpool1d(&mut tape, s, 4, 4).unwrap();
    let (sw, sb) = block.shortcut.unwrap();
    let sc = pointwise_conv1d(&mut tape, xv, vars[sw.index()], Some(vars[sb.index()]), 4).unwrap();
    let want = add_n(&mut tape, &[p, sc]).unwrap();
    for (a, b) in tape.value(got).data().iter().zip(tape.value(want).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zero_branches_leave_the_residual() {
    for arch in [Architecture::Dsc, Architecture::MDsc] {
        let mut m = Model::<f64>::build(&small(arch, [4, 4, 8]), 4).unwrap();
        let block = m.layout().blocks[0].clone();
        assert!(block.shortcut.is_none(), "same width uses direct addition");
        for br in &block.branches {
            m.store_mut().get_mut(br.dw).data_mut().fill(0.0);
            m.store_mut().get_mut(br.pw).data_mut().fill(0.0);
        }
        let x = Lcg::new(6).tensor(&[2, 16, 4], -2.0, 2.0);
        let mut tape = Tape::no_grad();
        let vars = m.store().bind(&mut tape);
        let lay = m.layout().map(|id| vars[id.index()]);
        let xv = tape.constant(x);
        let mut c = ctx(&m, Mode::Train);
        let y = inception_block_forward(&mut tape, &mut c, xv, &lay.blocks[0]).unwrap();
        let pooled = maxpool1d(&mut tape, xv, 4, 4).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(pooled).data());
    }
}

#[test]
fn modified_block_zero_input_and_shape() {
    let m = Model::<f64>::build(&small(Architecture::MDsc, [8, 8, 16]), 7).unwrap();
    let mut tape = Tape::no_grad();
    let vars = m.store().bind(&mut tape);
    let lay = m.layout().map(|id| vars[id.index()]);
    let mut c = ctx(&m, Mode::Eval);
    let x = tape.constant(Tensor::zeros(&[16, 4]));
    let y = inception_block_forward(&mut tape, &mut c, x, &lay.blocks[0]).unwrap();
    assert_eq!(tape.shape(y), [4, 8]);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    let bad = tape.constant(Tensor::zeros(&[18, 4]));
    assert!(inception_block_forward(&mut tape, &mut c, bad, &lay.blocks[0]).is_err());
}

#[test]
fn modified_block_normalization_ignores_group_offsets() {
    // The block's group norm removes any constant added to every channel of one group.
    let m = Model::<f64>::build(&small(Architecture::MDsc, [8, 8, 16]), 8).unwrap();
    let br = &m.layout().blocks[0].branches[0];
    let x = Lcg::new(9).tensor(&[2, 16, 8], -1.0, 1.0);
    let mut shifted = x.clone();
    for (i, v) in shifted.data_mut().iter_mut().enumerate() {
        if (4..8).contains(&(i % 8)) {
            *v += 3.5;
        }
    }
    let run = |t: &Tensor<f64>| {
        let mut tape = Tape::no_grad();
        let vars = m.store().bind(&mut tape);
        let lay = m.layout().map(|id| vars[id.index()]);
        let xv = tape.constant(t.clone());
        let mut c = ctx(&m, Mode::Eval);
        let n = &lay.blocks[0].branches[0].pw_norm;
        assert_eq!(vars[br.pw_norm.gamma.index()], n.gamma);
        let y = c.norm_act(&mut tape, xv, n).unwrap();
        let direct = group_norm(&mut tape, xv, n.gamma, n.beta, 2, 1e-5).unwrap();
        let direct = activation(&mut tape, direct, Activation::Relu);
        assert_eq!(tape.value(y).data(), tape.value(direct).data());
        tape.value(y).data().to_vec()
    };
    for (a, b) in run(&x).iter().zip(run(&shifted)) {
        assert!((a - b).abs() < 1e-4);
    }
}

#[test]
fn forward_is_deterministic_and_batch_independent() {
    for arch in Architecture::ALL {
        let m = Model::<f32>::build(&ModelConfig::new(arch, 512, 7), 11).unwrap();
        let mut rng = Lcg::new(12);
        let frags: Vec<Vec<u8>> = (0..4).map(|_| rng.bytes(512)).collect();
        let refs: Vec<&[u8]> = frags.iter().map(|f| f.as_slice()).collect();
        let same = m.forward_eval(&[refs[0], refs[0]]).unwrap();
        assert_eq!(same.data()[..7], same.data()[7..]);
        let fwd = m.forward_eval(&refs).unwrap();
        let perm = [2, 0, 3, 1];
        let permuted: Vec<&[u8]> = perm.iter().map(|&i| refs[i]).collect();
        let back = m.forward_eval(&permuted).unwrap();
        for (row, &src) in perm.iter().enumerate() {
            let a = &back.data()[row * 7..(row + 1) * 7];
            let b = &fwd.data()[src * 7..(src + 1) * 7];
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0), "{arch}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn fresh_model_predicts_near_uniformly() {
    let k = 5;
    let mut rng = Lcg::new(13);
    let frags: Vec<Vec<u8>> = (0..1000).map(|_| rng.bytes(512)).collect();
    let refs: Vec<&[u8]> = frags.iter().map(|f| f.as_slice()).collect();
    for arch in Architecture::ALL {
        let m = Model::<f32>::build(&ModelConfig::new(arch, 512, k), 14).unwrap();
        let mut mean = vec![0.0f64; k];
        for chunk in refs.chunks(100) {
            let p = m.predict_proba(chunk).unwrap();
            for row in p.data().chunks(k) {
                for (acc, &v) in mean.iter_mut().zip(row) {
                    *acc += v as f64 / refs.len() as f64;
                }
            }
        }
        for v in mean {
            assert!((v - 1.0 / k as f64).abs() < 0.02, "{arch}: {v}");
        }
    }
}

#[test]
fn wrong_fragment_length_names_the_expected_size() {
    let m = Model::<f32>::build(&ModelConfig::new(Architecture::Dsc, 512, 3), 0).unwrap();
    let short = vec![0u8; 500];
    let err = m.forward_eval(&[&short]).unwrap_err();
    assert!(err.to_string().contains("512"), "{err}");
}

#[test]
fn every_trainable_tensor_receives_gradient() {
    for arch in Architecture::ALL {
        let mut cfg = ModelConfig::new(arch, 64, 4);
        cfg.dropout_p = 0.0;
        let mut m = Model::<f32>::build(&cfg, 15).unwrap();
        let mut rng = Lcg::new(16);
        let frags: Vec<Vec<u8>> = (0..4).map(|_| rng.bytes(64)).collect();
        let refs: Vec<&[u8]> = frags.iter().map(|f| f.as_slice()).collect();
        let mut pass = m.forward(&refs).unwrap();
        let (loss, _) =
            fragnet::layers::softmax_cross_entropy(&mut pass.tape, pass.logits, &[0, 1, 2, 3]).unwrap();
        pass.tape.backward(loss).unwrap();
        for (e, &v) in m.store().entries().iter().zip(&pass.bound) {
            if !e.trainable {
                continue;
            }
            let g = pass.tape.grad(v).unwrap_or(&[]);
            assert!(g.iter().any(|&x| x != 0.0), "{arch}: {} has no gradient", e.name);
        }
    }
}

#[test]
fn training_forward_updates_running_statistics_only_for_batch_norm() {
    let mut m = Model::<f32>::build(&ModelConfig::new(Architecture::Dsc, 64, 3), 0).unwrap();
    let before = m.store().clone();
    let mut rng = Lcg::new(17);
    let frags: Vec<Vec<u8>> = (0..2).map(|_| rng.bytes(64)).collect();
    let refs: Vec<&[u8]> = frags.iter().map(|f| f.as_slice()).collect();
    m.forward(&refs).unwrap();
    for (a, b) in before.entries().iter().zip(m.store().entries()) {
        let changed = a.tensor.data() != b.tensor.data();
        assert_eq!(changed, a.name.contains("running"), "{}", a.name);
    }
    m.forward_eval(&refs).unwrap();
}

#[test]
fn full_network_gradients_match_finite_differences() {
    for (arch, blocks) in [
        (Architecture::Dsc, [8, 8, 8]),
        (Architecture::DscSe, [8, 8, 8]),
        (Architecture::MDsc, [8, 8, 8]),
    ] {
        let mut cfg = small(arch, blocks);
        cfg.dropout_p = if arch.is_modified() { 0.2 } else { 0.0 };
        let m = Model::<f64>::build(&cfg, 21).unwrap();
        let mut rng = Lcg::new(22);
        let frags: Vec<Vec<u8>> = (0..3).map(|_| rng.bytes(64)).collect();
        let refs: Vec<&[u8]> = frags.iter().map(|f| f.as_slice()).collect();
        let inputs: Vec<Tensor<f64>> = m.store().entries().iter().map(|e| e.tensor.clone()).collect();
        let rep = check_gradients_sampled(&inputs, 3, 23, |tape, vars| {
            use rand::SeedableRng;
            let mut drop_rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
            let (logits, _) = m.forward_on(tape, vars, &refs, Mode::Train, &mut drop_rng)?;
            Ok(fragnet::layers::softmax_cross_entropy(tape, logits, &[0, 2, 1])?.0)
        })
        .unwrap();
        assert!(rep.max_rel_err < 1e-4, "{arch}: {rep:?}");
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    for arch in Architecture::ALL {
        let mut m = Model::<f32>::build(&ModelConfig::new(arch, 512, 6), 31).unwrap();
        let mut rng = Lcg::new(32);
        let frags: Vec<Vec<u8>> = (0..2).map(|_| rng.bytes(512)).collect();
        let refs: Vec<&[u8]> = frags.iter().map(|f| f.as_slice()).collect();
        m.forward(&refs).unwrap();
        let path = dir.path().join(format!("{arch}.ffck"));
        let meta = TrainingMeta { seed: 31, epochs: 1, corpus_digest: "abc".into(), class_names: vec![] };
        save_checkpoint(&m, &path, Some(meta.clone())).unwrap();
        let back = load_checkpoint(&path, None).unwrap();
        assert_eq!(back.config(), m.config());
        for (a, b) in m.store().entries().iter().zip(back.store().entries()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.tensor), bits(&b.tensor));
        }
        let la = m.forward_eval(&refs).unwrap();
        let lb = back.forward_eval(&refs).unwrap();
        assert_eq!(la.data(), lb.data());
        assert_eq!(Checkpoint::read(&path).unwrap().manifest.training, Some(meta));
    }
}

#[test]
fn checkpoint_corruption_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let m = Model::<f32>::build(&ModelConfig::new(Architecture::Dsc, 512, 3), 0).unwrap();
    let path = dir.path().join("m.ffck");
    save_checkpoint(&m, &path, None).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let mut tampered = bytes.clone();
    let last = tampered.len() - 5;
    tampered[last] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&tampered), Err(Error::Integrity(_))));

    let truncated = &bytes[..bytes.len() - 4];
    assert!(matches!(Checkpoint::from_bytes(truncated), Err(Error::Integrity(_))));
    assert!(Checkpoint::from_bytes(&bytes[..6]).is_err());
    assert!(Checkpoint::from_bytes(b"NOPE\0\0\0\0").is_err());
}

#[test]
fn mismatched_load_fails_without_partial_writes() {
    let small_ck = Checkpoint::from_model(
        &Model::<f32>::build(&ModelConfig::new(Architecture::Dsc, 512, 3), 1).unwrap(),
        None,
    )
    .unwrap();
    let mut target = Model::<f32>::build(&ModelConfig::new(Architecture::Dsc, 512, 4), 2).unwrap();
    let before = target.store().clone();
    assert!(transfer_load(&mut target, &small_ck).is_err());
    assert_eq!(target.store(), &before);

    let mut se = Model::<f32>::build(&ModelConfig::new(Architecture::DscSe, 512, 3), 2).unwrap();
    assert!(transfer_load(&mut se, &small_ck).is_err());
    let want = ModelConfig::new(Architecture::MDsc, 512, 3);
    assert!(small_ck.clone().into_model(Some(&want)).is_err());
}

#[test]
fn transfer_between_fragment_sizes_copies_everything() {
    for arch in Architecture::ALL {
        let src = Model::<f32>::build(&ModelConfig::new(arch, 512, 5), 41).unwrap();
        let ck = Checkpoint::from_model(&src, None).unwrap();
        let mut dst = Model::<f32>::build(&ModelConfig::new(arch, 4096, 5), 42).unwrap();
        let report = transfer_load(&mut dst, &ck).unwrap();
        assert_eq!(report.copied.len(), report.total);
        assert_eq!(report.total, src.store().len());
        assert_eq!((report.source_fragment_size, report.target_fragment_size), (512, 4096));
        assert_eq!(src.store().entries(), dst.store().entries());

        let loaded = ck.into_model(Some(&ModelConfig::new(arch, 4096, 5))).unwrap();
        assert_eq!(loaded.config().fragment_size, 4096);
    }
}
