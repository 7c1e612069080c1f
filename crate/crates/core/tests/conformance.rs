//! Golden-vector plumbing. Self-made goldens exercise the container schema;
//! exporter goldens are checked when `LVUNET_GOLDENS` (and, for backbone
//! cases, `LVUNET_BACKBONE`) point at LVWT files.

mod common;

use std::env;

use lvunet::backbone::{BackbonePrefix, MOBILENET_V3_LARGE};
use lvunet::conformance::run_goldens;
use lvunet::init::{InitKind, WeightInit};
use lvunet::io::{TensorEntry, WeightContainer};
use lvunet::ops::im2col_matmul_conv;
use lvunet::tensor::{ConvSpec, Tensor};

use common::{random_tensor, rng};

fn entry(name: &str, t: &Tensor) -> TensorEntry {
    TensorEntry::from_tensor(name, t)
}

fn hand_goldens() -> WeightContainer {
    let mut r = rng(21);
    let mut c = WeightContainer::new();

    let x = random_tensor(&mut r, [1, 4, 9, 9], 0.0, 1.0);
    let w = random_tensor(&mut r, [6, 4, 3, 3], -0.5, 0.5);
    let bias = vec![0.05; 6];
    let spec = ConvSpec::new(4, 6, 3, 2, 1, 1, w.clone(), Some(bias.clone())).unwrap();
    c.push(entry("golden.conv2d.input", &x)).unwrap();
    c.push(entry("golden.conv2d.weight", &w)).unwrap();
    c.push(TensorEntry::vector("golden.conv2d.bias", &bias)).unwrap();
    c.push(TensorEntry::vector("golden.conv2d.geometry", &[2.0, 1.0, 1.0])).unwrap();
    c.push(entry("golden.conv2d.expected", &im2col_matmul_conv(&x, &spec).unwrap())).unwrap();

    let x = random_tensor(&mut r, [1, 2, 3, 3], 0.0, 1.0);
    let (g, b, m, v, eps) = ([2.0f32, 0.5], [0.1f32, -0.1], [0.5f32, 0.25], [4.0f32, 1.0], 1e-3f32);
    let bn = Tensor::from_fn(x.shape(), |[n, ch, y, xx]| {
        g[ch] * (x.at([n, ch, y, xx]) - m[ch]) / (v[ch] + eps).sqrt() + b[ch]
    });
    c.push(entry("golden.batch_norm.input", &x)).unwrap();
    for (name, val) in [("gamma", &g), ("beta", &b), ("mean", &m), ("var", &v)] {
        c.push(TensorEntry::vector(format!("golden.batch_norm.{name}"), val)).unwrap();
    }
    c.push(TensorEntry::scalar("golden.batch_norm.eps", eps)).unwrap();
    c.push(entry("golden.batch_norm.expected", &bn)).unwrap();

    let x = Tensor::new([1, 1, 1, 5], vec![-4.0, -1.0, 0.0, 1.0, 4.0]).unwrap();
    let hs = Tensor::new([1, 1, 1, 5], vec![0.0, -1.0 / 3.0, 0.0, 2.0 / 3.0, 4.0]).unwrap();
    c.push(entry("golden.hard_swish.input", &x)).unwrap();
    c.push(entry("golden.hard_swish.expected", &hs)).unwrap();

    // zero-weight backbone: SE gates at 0.5, residual blocks pass input through
    let x = random_tensor(&mut r, [1, 120, 4, 4], 0.0, 1.0);
    c.push(entry("golden.se.r5.input", &x)).unwrap();
    c.push(entry("golden.se.r5.expected", &x.map(|v| v / 2.0))).unwrap();
    let x = random_tensor(&mut r, [1, 24, 4, 4], 0.0, 1.0);
    c.push(entry("golden.block.r3.input", &x)).unwrap();
    c.push(entry("golden.block.r3.expected", &x)).unwrap();
    c.push(TensorEntry::scalar("golden.block.r3.tolerance", 0.0)).unwrap();
    c
}

#[test]
fn hand_goldens_pass_after_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("goldens.lvw");
    hand_goldens().write(&path).unwrap();
    let goldens = WeightContainer::read(&path).unwrap();
    let zero = BackbonePrefix::random(9, &mut WeightInit::new(InitKind::Zeros)).unwrap();
    let results = run_goldens(&goldens, Some(&zero)).unwrap();
    let names: Vec<_> = results.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["conv2d", "batch_norm", "hard_swish", "se.r5", "block.r3"]);
    for r in &results {
        assert!(r.passed(), "{} off by {}", r.name, r.max_abs_diff);
    }
    assert_eq!(results[4].tolerance, 0.0);
    assert_eq!(results[0].tolerance, 1e-3);
}

#[test]
fn perturbed_golden_fails() {
    let mut goldens = hand_goldens();
    goldens.get_mut("golden.hard_swish.expected").unwrap().data[4] += 0.01;
    let results = run_goldens(&goldens, None);
    // backbone cases cannot run without weights
    assert!(results.is_err());
    let mut only = WeightContainer::new();
    for n in ["golden.hard_swish.input", "golden.hard_swish.expected"] {
        only.push(goldens.get(n).unwrap().clone()).unwrap();
    }
    let r = run_goldens(&only, None).unwrap();
    assert!(!r[0].passed());
}

#[test]
fn unknown_case_is_unsupported() {
    let mut c = WeightContainer::new();
    c.push(TensorEntry::scalar("golden.softmax.input", 1.0)).unwrap();
    c.push(TensorEntry::scalar("golden.softmax.expected", 1.0)).unwrap();
    assert!(run_goldens(&c, None).is_err());
}

fn check_backbone_shapes(store: &WeightContainer) {
    assert_eq!(store.require("backbone.init.conv.weight").unwrap().shape, [16, 3, 3, 3]);
    let last = BackbonePrefix::detect_last(store).expect("backbone tensors present");
    let mut cin = 16;
    for (k, cfg) in MOBILENET_V3_LARGE.iter().take(last).enumerate().map(|(i, c)| (i + 1, c)) {
        let e = cfg.expansion_channels;
        let shape = |s: &str| store.require(&format!("backbone.r{k}.{s}")).unwrap().shape.clone();
        if e != cin {
            assert_eq!(shape("expand.conv.weight"), [e, cin, 1, 1], "r{k}");
        } else {
            assert!(!store.contains(&format!("backbone.r{k}.expand.conv.weight")));
        }
        assert_eq!(shape("dw.conv.weight"), [e, 1, cfg.kernel, cfg.kernel], "r{k}");
        assert_eq!(shape("project.conv.weight"), [cfg.out_channels, e, 1, 1], "r{k}");
        assert_eq!(shape("project.bn.gamma"), [cfg.out_channels], "r{k}");
        assert_eq!(store.contains(&format!("backbone.r{k}.se.fc1.conv.weight")), cfg.use_se, "r{k}");
        cin = cfg.out_channels;
    }
    BackbonePrefix::load(store, last).unwrap();
}

#[test]
fn engine_backbone_uses_exporter_naming() {
    let bb = BackbonePrefix::random(14, &mut WeightInit::seeded(22)).unwrap();
    let mut entries = Vec::new();
    bb.push_entries(&mut entries);
    let store = WeightContainer::from_entries(entries).unwrap();
    assert_eq!(store.require("backbone.r2.expand.conv.weight").unwrap().shape, [64, 16, 1, 1]);
    check_backbone_shapes(&WeightContainer::from_bytes(&store.to_bytes()).unwrap());
}

#[test]
fn exporter_artifacts_when_present() {
    let backbone = env::var_os("LVUNET_BACKBONE").map(|p| {
        let store = WeightContainer::read(&p).unwrap();
        check_backbone_shapes(&store);
        BackbonePrefix::load(&store, 9).unwrap()
    });
    let Some(path) = env::var_os("LVUNET_GOLDENS") else {
        eprintln!("LVUNET_GOLDENS not set; exporter goldens skipped");
        return;
    };
    let goldens = WeightContainer::read(path).unwrap();
    for r in run_goldens(&goldens, backbone.as_ref()).unwrap() {
        assert!(r.passed(), "{}: {} > {}", r.name, r.max_abs_diff, r.tolerance);
    }
}
