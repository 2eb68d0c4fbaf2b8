use super::*;
use crate::ops;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(size: usize) -> UvmNetConfig {
    UvmNetConfig {
        base_width: 4,
        stages: size.trailing_zeros() as usize - 2,
        state_dim: 2,
        expansion: 1,
        ..UvmNetConfig::default()
    }
}

#[test]
fn preserves_shape_across_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for size in [16, 32, 64, 128] {
        let cfg = small(size);
        let mut p = UvmNetParams::<Tensor<f32>>::init(&cfg, &mut rng).unwrap();
        p.head.weight = Tensor::rand_uniform(p.head.weight.shape(), -0.1, 0.1, &mut rng);
        let x = Tensor::rand_uniform(&[1, 3, size, size], 0.0, 1.0, &mut rng);
        assert_eq!(uvm_forward(&x, &cfg, &p).unwrap().shape(), x.shape(), "size {size}");
    }
}

#[test]
fn zero_head_with_global_residual_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = small(32);
    let p = UvmNetParams::<Tensor<f32>>::init(&cfg, &mut rng).unwrap();
    let x = Tensor::rand_uniform(&[2, 3, 32, 32], 0.0, 1.0, &mut rng);
    assert_eq!(uvm_forward(&x, &cfg, &p).unwrap(), x);
}

#[test]
fn rejects_indivisible_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = small(32);
    let p = UvmNetParams::<Tensor<f32>>::init(&cfg, &mut rng).unwrap();
    let err = uvm_forward(&Tensor::zeros(&[1, 3, 30, 32]), &cfg, &p).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("divisible by 4"), "{err}");
}

#[test]
fn every_parameter_receives_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = UvmNetConfig::tiny();
    let mut p = UvmNetParams::<Tensor<f32>>::init(&cfg, &mut rng).unwrap();
    // a zero head would block every upstream gradient
    p.head.weight = Tensor::rand_uniform(p.head.weight.shape(), -0.2, 0.2, &mut rng);
    let x = Tensor::rand_uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut rng);
    let w = Tensor::rand_uniform(&[1, 3, 16, 16], -1.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let vars = p.to_tape(&mut tape).unwrap();
    let xv = tape.leaf(x);
    let y = uvm_forward_on(&mut tape, xv, &vars, &cfg).unwrap();
    assert!(tape.value(y).all_finite());
    let loss = tape.weighted_sum(y, w).unwrap();
    let grads = tape.backward_scalar(loss).unwrap().params(&tape);
    assert_eq!(grads.len(), p.named().len());
    for (name, g) in grads.iter() {
        assert!(g.all_finite(), "{name}");
        assert!(g.max_abs() > 0.0, "all-zero gradient for {name}");
    }
}

#[test]
fn batch_elements_are_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = small(16);
    let mut p = UvmNetParams::<Tensor<f32>>::init(&cfg, &mut rng).unwrap();
    p.head.weight = Tensor::rand_uniform(p.head.weight.shape(), -0.2, 0.2, &mut rng);
    let a = Tensor::rand_uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut rng);
    let b = Tensor::rand_uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut rng);
    let both = Tensor::from_vec(&[2, 3, 16, 16], [a.data(), b.data()].concat()).unwrap();
    let ya = uvm_forward(&a, &cfg, &p).unwrap();
    let yb = uvm_forward(&b, &cfg, &p).unwrap();
    let y = uvm_forward(&both, &cfg, &p).unwrap();
    let joined = Tensor::from_vec(&[2, 3, 16, 16], [ya.data(), yb.data()].concat()).unwrap();
    assert!(y.max_abs_diff(&joined).unwrap() < 1e-6);
}

#[test]
fn analytic_count_matches_allocation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let variants = [Variant::Ssm, Variant::Conv1d, Variant::Sdp];
    for i in 0..8 {
        let cfg = UvmNetConfig {
            base_width: rng.random_range(1..9),
            stages: rng.random_range(1..6),
            convs_per_block: rng.random_range(0..3),
            state_dim: rng.random_range(1..5),
            expansion: rng.random_range(1..3),
            variant: variants[i % 3],
            ssm_mode: if i % 2 == 0 { SsmMode::Selective } else { SsmMode::Fixed },
            skip_mode: if i % 4 < 2 { SkipMode::Concat } else { SkipMode::Add },
            ..UvmNetConfig::default()
        };
        let p = UvmNetParams::<Tensor<f32>>::init(&cfg, &mut rng).unwrap();
        assert_eq!(count_params(&cfg), p.numel(), "{cfg:?}");
    }
}

#[test]
fn hand_counted_layers() {
    assert_eq!(conv_macs(1, 1, 3, 8, 8), 576);
    assert_eq!(conv_params(1, 1, 3), 10);
    assert_eq!(linear_macs(4, 4, 10), 160);
    assert_eq!(linear_params(4, 4), 20);
    // a padded 3×3 conv on 8×8 really performs 64·9 multiplies
    let x = Tensor::<f32>::ones(&[1, 1, 8, 8]);
    let w = Tensor::<f32>::ones(&[1, 1, 3, 3]);
    let y = ops::conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 1).unwrap();
    assert_eq!(y.shape(), &[1, 1, 8, 8]);
}

#[test]
fn single_stage_macs_by_hand() {
    // stem + head convs and a conv1d-variant block with E = 1, C = 2, L = 16
    let cfg = UvmNetConfig {
        base_width: 2,
        stages: 1,
        convs_per_block: 0,
        expansion: 1,
        variant: Variant::Conv1d,
        ..UvmNetConfig::default()
    };
    let l = 16u64;
    let convs = 2 * (27 * 2 * l);
    let linears = 3 * (2 * 2 * l);
    let mixers = 2 * (3 * l * 2) + l * 3 * 2;
    assert_eq!(count_macs(&cfg, 4, 4), convs + linears + mixers);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = UvmNetConfig::tiny();
    let p = UvmNetParams::<Tensor<f32>>::init(&cfg, &mut rng)
        .unwrap()
        .try_map(&mut |_, t| Ok(Tensor::rand_uniform(t.shape(), -1.0, 1.0, &mut rng)))
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.uvmc");
    save_checkpoint(&p, &path).unwrap();
    let q = load_checkpoint(&path, &cfg).unwrap();
    for ((na, a), (nb, b)) in p.named().iter().zip(q.named()) {
        assert_eq!(na, &nb);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b), "{na}");
    }
}

#[test]
fn checkpoint_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = UvmNetConfig::tiny();
    let p = UvmNetParams::<Tensor<f32>>::init(&cfg, &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.uvmc");
    save_checkpoint(&p, &path).unwrap();

    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.uvmc");
    std::fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
    match read_checkpoint(&cut) {
        Err(Error::Format { offset, .. }) => assert!(offset > 8 && offset as usize <= bytes.len()),
        other => panic!("expected format error, got {other:?}"),
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&cut, &bad).unwrap();
    assert!(matches!(read_checkpoint(&cut), Err(Error::Format { offset: 0, .. })));

    let wider = UvmNetConfig { base_width: 16, ..cfg.clone() };
    let err = load_checkpoint(&path, &wider).unwrap_err();
    assert!(matches!(err, Error::Schema(_)));
    assert!(err.to_string().contains("stem.weight"), "{err}");

    let named = p.named();
    let extra = Tensor::zeros(&[1]);
    let mut items: Vec<(&str, &Tensor<f32>)> = named.iter().map(|(n, t)| (n.as_str(), *t)).collect();
    items.push(("bogus.weight", &extra));
    write_checkpoint(items, &cut).unwrap();
    let err = load_checkpoint(&cut, &cfg).unwrap_err();
    assert!(err.to_string().contains("bogus.weight"), "{err}");
}

#[test]
fn parameter_names_are_unique_and_dotted() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = UvmNetConfig { stages: 3, ..UvmNetConfig::tiny() };
    let p = UvmNetParams::<Tensor<f32>>::init(&cfg, &mut rng).unwrap();
    let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
    let unique: std::collections::HashSet<_> = names.iter().collect();
    assert_eq!(unique.len(), names.len());
    for expected in ["stem.weight", "enc0.conv1.bias", "enc2.block.mix_seq.a_log", "enc1.down.weight", "dec0.fuse.weight", "head.bias"] {
        assert!(names.iter().any(|n| n == expected), "missing {expected}");
    }
}
