use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{decode, encode};
use super::*;
use crate::data::Split;
use crate::error::Error;
use crate::model::{build_model, Arch, BuildOptions, DatasetKind, Model, ModelKind, Variant};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;

fn kind(dataset: DatasetKind, arch: Arch, variant: Variant) -> ModelKind {
    ModelKind { dataset, arch, variant }
}

fn build<T: crate::Scalar>(k: ModelKind, seed: u64) -> Model<T> {
    build_model(
        k,
        &BuildOptions::defaults(k.dataset),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

#[test]
fn first_mnist_layer_counts() {
    let dense = count_forward_ops(&build::<f32>(kind(DatasetKind::Mnist, Arch::ConvPool, Variant::Cnn), 0)).unwrap();
    let binary = count_forward_ops(&build::<f32>(kind(DatasetKind::Mnist, Arch::ConvPool, Variant::Bwn), 0)).unwrap();
    let d = dense.conv_layers().next().unwrap();
    let b = binary.conv_layers().next().unwrap();
    // 28·28·6 = 4704 output elements, 36 taps each
    assert_eq!(d.ops.mults, 169_344);
    assert_eq!(b.ops.mults, 4_704);
    assert_eq!(d.ops.mults / b.ops.mults, 36);
    assert_eq!(b.ops.adds, 4_704 * 35);
    assert_eq!(d.ops.adds, 4_704 * 35 + 4_704);
}

#[test]
fn dense_to_binary_ratio_is_fan_in_for_every_conv_layer() {
    for d in DatasetKind::ALL {
        for a in Arch::ALL {
            let dense = count_forward_ops(&build::<f32>(kind(*d, *a, Variant::Cnn), 0)).unwrap();
            let binary = count_forward_ops(&build::<f32>(kind(*d, *a, Variant::Bwn), 0)).unwrap();
            let pairs: Vec<_> = dense.conv_layers().zip(binary.conv_layers()).collect();
            assert_eq!(pairs.len(), if *d == DatasetKind::Cifar10 { 4 } else { 3 });
            for (x, y) in pairs {
                let n = x.fan_in.unwrap();
                assert_eq!(x.ops.mults, n * y.ops.mults, "{}", x.label);
            }
        }
    }
}

#[test]
fn bwn_conv_multiplies_equal_output_elements() {
    let r = count_forward_ops(&build::<f32>(kind(DatasetKind::Mnist, Arch::ConvPool, Variant::Bwn), 0)).unwrap();
    let total: u64 = r.conv_layers().map(|l| l.ops.mults).sum();
    assert_eq!(total, 28 * 28 * 6 + 28 * 28 * 12 + 14 * 14 * 24);
}

#[test]
fn relu_and_pool_only_compare() {
    let r = count_forward_ops(&build::<f32>(kind(DatasetKind::Mnist, Arch::ConvPool, Variant::Cnn), 0)).unwrap();
    for l in &r.layers {
        match l.kind {
            OpKind::Relu | OpKind::MaxPool => assert_eq!((l.ops.mults, l.ops.adds), (0, 0)),
            _ => assert_eq!(l.ops.comparisons, 0),
        }
    }
    // last pool: 7·7·24 = 1176 outputs, three comparisons each
    let pool = r.layers.iter().rfind(|l| l.kind == OpKind::MaxPool).unwrap();
    assert_eq!(pool.ops.comparisons, 3 * 1176);
    let relu = r.layers.iter().rfind(|l| l.kind == OpKind::Relu).unwrap();
    assert_eq!(relu.ops.comparisons, 200);
}

#[test]
fn hadamard_preprocessing_is_counted() {
    let r = count_forward_ops(&build::<f32>(kind(DatasetKind::Mnist, Arch::ConvPool, Variant::Hin), 0)).unwrap();
    let pre = &r.layers[0];
    assert_eq!(pre.kind, OpKind::Preprocess);
    // 32 row passes and 32 column passes of 32·log2(32) adds each
    assert_eq!(pre.ops.adds, 2 * 32 * 32 * 5);
    assert_eq!(pre.ops.mults, 32 * 32);
    assert_eq!(r.total(), r.network_total() + pre.ops);
}

fn counted_inputs(m: &Model<Counted>, n: usize, seed: u64) -> Vec<Tensor<Counted>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [c, h, w] = m.kind.dataset.image_shape();
    let raw = Tensor::from_vec(
        &[n, c, h, w],
        (0..n * c * h * w).map(|_| Counted(rng.random::<f64>())).collect(),
    )
    .unwrap();
    m.prepare_inputs(&raw).unwrap()
}

#[test]
fn static_counts_match_instrumented_execution() {
    for a in Arch::ALL {
        for v in Variant::ALL {
            let k = kind(DatasetKind::Mnist, *a, *v);
            let m = build::<Counted>(k, 1);
            let inputs = counted_inputs(&m, 2, 0);
            let (_, counted) = measure(|| m.logits(&inputs).unwrap());
            let expected = count_forward_ops(&m).unwrap().network_total() * 2;
            assert_eq!(counted, expected, "{k}");
        }
    }
}

fn adam_for<T: crate::Scalar>(m: &Model<T>) -> AdamState<T> {
    AdamState::new(AdamConfig::default(), m.parameters())
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let k = kind(DatasetKind::Mnist, Arch::ConvPool, Variant::BwhinRandom);
    let m = build::<f32>(k, 3);
    let mut adam = adam_for(&m);
    adam.step = 17;
    adam.moments[0].m.data_mut()[0] = 0.25;
    let p1 = dir.path().join("a.bwhn");
    save_checkpoint(&p1, &m, &adam, 1234).unwrap();

    let mut fresh = build::<f32>(k, 99);
    let restored = load_checkpoint(&p1, &mut fresh).unwrap();
    assert_eq!(restored.iteration, 1234);
    let adam2 = restored.adam.unwrap();
    assert_eq!(adam2, adam);
    let p2 = dir.path().join("b.bwhn");
    save_checkpoint(&p2, &fresh, &adam2, 1234).unwrap();
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
}

#[test]
fn container_layout() {
    let arrays = vec![NamedArray {
        name: "w".into(),
        shape: vec![2, 1],
        data: ArrayData::F64(vec![1.5, -2.0]),
    }];
    let bytes = encode(&arrays).unwrap();
    assert_eq!(&bytes[..4], b"BWHN");
    assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
    assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
    assert_eq!(&bytes[12..16], &1u32.to_le_bytes()); // name length
    assert_eq!(bytes[16], b'w');
    assert_eq!(&bytes[17..21], &2u32.to_le_bytes()); // rank
    assert_eq!(bytes[29], 1); // f64 tag
    assert_eq!(&bytes[30..38], &1.5f64.to_le_bytes());
    assert_eq!(bytes.len(), 30 + 16);
    assert_eq!(decode(&bytes, "t").unwrap(), arrays);
}

#[test]
fn container_errors_are_distinct() {
    let arrays = vec![NamedArray {
        name: "x".into(),
        shape: vec![3],
        data: ArrayData::F32(vec![1.0, 2.0, 3.0]),
    }];
    let good = encode(&arrays).unwrap();

    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(decode(&bad, "t"), Err(Error::BadMagic { .. })));

    let mut v2 = good.clone();
    v2[4] = 2;
    assert!(matches!(decode(&v2, "t"), Err(Error::VersionMismatch { found: 2, .. })));

    assert!(matches!(
        decode(&good[..good.len() - 2], "t"),
        Err(Error::Truncated { .. })
    ));
}

#[test]
fn wrong_architecture_is_a_checkpoint_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let mnist = build::<f32>(kind(DatasetKind::Mnist, Arch::ConvPool, Variant::Bwn), 0);
    let p = dir.path().join("m.bwhn");
    save_checkpoint(&p, &mnist, &adam_for(&mnist), 0).unwrap();
    let mut cifar = build::<f32>(kind(DatasetKind::Cifar10, Arch::ConvPool, Variant::Bwn), 0);
    let before = cifar.parameters()[0].1.clone();
    let err = load_checkpoint(&p, &mut cifar).unwrap_err();
    assert!(matches!(err, Error::CheckpointMismatch(_)), "{err}");
    assert_eq!(cifar.parameters()[0].1, &before);

    let mut cnn = build::<f32>(kind(DatasetKind::Mnist, Arch::ConvPool, Variant::Cnn), 0);
    assert!(matches!(
        load_checkpoint(&p, &mut cnn),
        Err(Error::CheckpointMismatch(_))
    ));
}

#[test]
fn checkpoint_loads_across_precisions() {
    let dir = tempfile::tempdir().unwrap();
    let k = kind(DatasetKind::Mnist, Arch::AllCnn, Variant::Cnn);
    let m32 = build::<f32>(k, 4);
    let p = dir.path().join("c.bwhn");
    save_checkpoint(&p, &m32, &adam_for(&m32), 5).unwrap();
    let mut m64 = build::<f64>(k, 0);
    load_checkpoint(&p, &mut m64).unwrap();
    for ((_, a), (_, b)) in m32.parameters().into_iter().zip(m64.parameters()) {
        assert_eq!(a.to_f64_vec(), b.to_f64_vec());
    }
}

#[test]
fn metrics_lines_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("metrics.jsonl");
    let r1 = MetricsRecord {
        iteration: 100,
        split: Split::Test,
        loss: 0.125,
        accuracy: 0.9888,
        mults: 10,
        adds: 20,
        seconds: 1.5,
    };
    let r2 = MetricsRecord {
        iteration: 200,
        split: Split::Train,
        ..r1.clone()
    };
    let mut sink = MetricsSink::create(&p).unwrap();
    sink.write(&r1).unwrap();
    sink.write(&r2).unwrap();
    let text = fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().count(), 2);
    for key in ["iteration", "split", "loss", "accuracy", "mults", "adds", "seconds"] {
        assert!(text.lines().next().unwrap().contains(&format!("\"{key}\"")));
    }
    assert_eq!(read_metrics(&p).unwrap(), vec![r1.clone(), r2]);
    assert_eq!(format!("{:.2}", r1.percent()), "98.88");

    let bad = MetricsRecord { accuracy: 1.5, ..r1 };
    assert!(sink.write(&bad).is_err());
}
