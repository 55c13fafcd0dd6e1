// SPDX-License-Identifier: Apache-2.0

mod common;

use common::{gradcheck_params, project, tiny_config, uniform};
use fcnet_core::model::{
    decode_checkpoint, encode_checkpoint, fcnet_forward, fcnet_forward_var, init_params, load_checkpoint,
    param_specs, save_checkpoint,
};
use fcnet_core::{Ablation, Error, FcnetConfig, ModelParams, Tape, Tensor};

fn perturb(params: &mut ModelParams, prefix: &str, seed: u64) {
    for (name, t) in params.iter_mut() {
        if name.starts_with(prefix) {
            *t = uniform(t.shape(), -0.5, 0.5, seed);
        }
    }
}

#[test]
fn default_shape_contract_and_finite_init() {
    let cfg = FcnetConfig::default();
    let x = uniform::<f32>(&[14, 1, 64, 64], 0.0, 1.0, 1);
    let start = std::time::Instant::now();
    let params = init_params(&cfg, 0).unwrap();
    let y = fcnet_forward(&params, &cfg, &x).unwrap();
    eprintln!("default forward {:?}, {} parameters", start.elapsed(), params.count());
    assert_eq!(y.shape(), &[14, 1, 64, 64]);
}

#[test]
fn init_outputs_are_bounded_across_seeds() {
    let cfg = FcnetConfig::default();
    let x = uniform::<f32>(&[14, 1, 64, 64], 0.0, 1.0, 2);
    for seed in 0..10 {
        let params = init_params(&cfg, seed).unwrap();
        let y = fcnet_forward(&params, &cfg, &x).unwrap();
        let max = y.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(y.is_finite() && max < 10.0, "seed {seed}: max |Y| = {max}");
    }
}

#[test]
fn init_is_deterministic_per_seed() {
    let cfg = tiny_config();
    assert_eq!(init_params(&cfg, 4).unwrap(), init_params(&cfg, 4).unwrap());
    let a = init_params(&cfg, 4).unwrap();
    let b = init_params(&cfg, 5).unwrap();
    assert!(a.iter().zip(b.iter()).any(|((_, x), (_, y))| x != y));
}

#[test]
fn forward_is_bitwise_deterministic() {
    let cfg = tiny_config();
    let params = init_params(&cfg, 1).unwrap();
    let x = uniform::<f32>(&[3, 2, 1, 8, 8], 0.0, 1.0, 3);
    let a = fcnet_forward(&params, &cfg, &x).unwrap();
    let b = fcnet_forward(&params, &cfg, &x).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), &[3, 2, 1, 8, 8]);
}

#[test]
fn shape_mismatch_is_a_config_error() {
    let cfg = tiny_config();
    let params = init_params(&cfg, 1).unwrap();
    let x = uniform::<f32>(&[3, 1, 8, 8], 0.0, 1.0, 3);
    assert!(matches!(fcnet_forward(&params, &cfg, &x), Err(Error::Config(_))));
    let other = FcnetConfig { hidden: 16, ..tiny_config() };
    let x = uniform::<f32>(&[2, 1, 8, 8], 0.0, 1.0, 3);
    assert!(matches!(fcnet_forward(&params, &other, &x), Err(Error::Config(_))));
}

#[test]
fn nan_input_reports_layer_path() {
    let cfg = tiny_config();
    let params = init_params(&cfg, 1).unwrap();
    let mut x = uniform::<f32>(&[2, 1, 8, 8], 0.0, 1.0, 3);
    x.data_mut()[5] = f32::NAN;
    match fcnet_forward(&params, &cfg, &x) {
        Err(Error::Numeric(m)) => assert!(m.starts_with("input"), "{m}"),
        other => panic!("{other:?}"),
    }
    let x = uniform::<f32>(&[2, 1, 8, 8], 0.0, 1.0, 3);
    let mut bad = params.clone();
    bad.get_mut("conv.hfeb.1.fuse.w").unwrap().data_mut()[0] = f32::NAN;
    match fcnet_forward(&bad, &cfg, &x) {
        Err(Error::Numeric(m)) => assert!(m.starts_with("conv.hfeb.1"), "{m}"),
        other => panic!("{other:?}"),
    }
    let mut bad = params.clone();
    bad.get_mut("freq.affb.1.filter_re").unwrap().data_mut()[0] = f32::INFINITY;
    match fcnet_forward(&bad, &cfg, &x) {
        Err(Error::Numeric(m)) => assert!(m.starts_with("freq.affb.1"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn without_affb_output_ignores_freq_parameters() {
    let cfg = FcnetConfig {
        ablation: Ablation { use_affb: false, ..Ablation::default() },
        ..tiny_config()
    };
    let mut params = init_params(&cfg, 2).unwrap();
    let x = uniform::<f32>(&[2, 1, 8, 8], 0.0, 1.0, 3);
    let before = fcnet_forward(&params, &cfg, &x).unwrap();
    perturb(&mut params, "freq.", 9);
    assert_eq!(fcnet_forward(&params, &cfg, &x).unwrap(), before);
}

#[test]
fn ablation_orthogonality_on_crafted_parameters() {
    let full = tiny_config();
    let no_affb = FcnetConfig { ablation: Ablation { use_affb: false, ..Ablation::default() }, ..tiny_config() };
    let no_hfeb = FcnetConfig { ablation: Ablation { use_hfeb: false, ..Ablation::default() }, ..tiny_config() };
    let x = uniform::<f32>(&[2, 1, 8, 8], 0.0, 1.0, 3);
    let run = |p: &ModelParams, cfg: &FcnetConfig| {
        let mut p = p.clone();
        let mut q = ModelParams::new(cfg.fingerprint());
        for (n, t) in p.iter_mut() {
            q.insert(n, t.clone()).unwrap();
        }
        fcnet_forward(&q, cfg, &x).unwrap()
    };

    // zero filters and biases silence the frequency branch entirely
    let mut silent = init_params(&full, 3).unwrap();
    for (name, t) in silent.iter_mut() {
        if name.contains("filter") || name.ends_with(".b") && name.starts_with("freq.") {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    assert_eq!(run(&silent, &full), run(&silent, &no_affb));
    let live = init_params(&full, 3).unwrap();
    assert_ne!(run(&live, &full), run(&live, &no_affb));

    // identity-configured HFEBs make the stack a no-op up to rounding
    let mut ident = init_params(&full, 4).unwrap();
    for j in 0..full.hfeb_blocks {
        let n = |s: &str| format!("conv.hfeb.{j}.{s}");
        for (name, t) in ident.iter_mut() {
            let v = if name == n("ca.excite.b") {
                Some(40.0)
            } else if name == n("sa.pw.b") || name == n("ta.fc.b") {
                Some(1.0)
            } else if name == n("ca.excite.w") || name == n("sa.pw.w") || name == n("ta.fc.w") || name == n("fuse.b") {
                Some(0.0)
            } else {
                None
            };
            if let Some(v) = v {
                t.data_mut().iter_mut().for_each(|x| *x = v);
            }
            if name == n("fuse.w") {
                let c = t.shape()[0];
                for (i, x) in t.data_mut().iter_mut().enumerate() {
                    *x = if i / c == i % c { 1.0 } else { 0.0 };
                }
            }
        }
    }
    assert!(run(&ident, &full).max_abs_diff(&run(&ident, &no_hfeb)) < 1e-5);
    let live = init_params(&full, 4).unwrap();
    assert!(run(&live, &full).max_abs_diff(&run(&live, &no_hfeb)) > 1e-4);
}

#[test]
fn every_parameter_receives_gradient() {
    // a 4×4 token grid, so some bins are not self-conjugate and the imaginary filter is live
    let cfg = FcnetConfig { h: 16, w: 16, ..tiny_config() };
    let params = init_params(&cfg, 6).unwrap();
    let mut tape = Tape::<f32>::new();
    let p = params.bind(&mut tape);
    let x = tape.constant(uniform(&[2, 2, 1, 16, 16], 0.0, 1.0, 7));
    let out = fcnet_forward_var(&mut tape, &p, &cfg, x).unwrap();
    let s = out.s_out.unwrap();
    let sum = tape.add(out.y, s).unwrap();
    let loss = project(&mut tape, sum, 8).unwrap();
    tape.backward(loss).unwrap();
    for (name, v) in p.iter() {
        let g = tape.grad(v).unwrap_or_else(|| panic!("{name}: no gradient"));
        assert!(g.data().iter().any(|&x| x != 0.0), "{name}: all-zero gradient");
    }
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let cfg = tiny_config();
    let params = init_params(&cfg, 10).unwrap();
    let x = uniform::<f64>(&[1, 2, 1, 8, 8], 0.0, 1.0, 11);
    let report = gradcheck_params(&params, &[x], 6, |tape, p, v| {
        let out = fcnet_forward_var(tape, p, &cfg, v[0])?;
        project(tape, out.y, 12)
    });
    eprintln!("{report:?}");
    assert!(report.passes(), "{report:?}");
}

#[test]
fn parameter_count_is_stable() {
    let cfg = FcnetConfig::default();
    let specs = param_specs(&cfg);
    let count: usize = specs.iter().map(|s| s.shape.iter().product::<usize>()).sum();
    assert_eq!(count, init_params(&cfg, 0).unwrap().count());
    assert_eq!(count, DEFAULT_PARAMS);
}

// embed 230400 + 8 AFFB 547328 + depatch 1040 + conv branch 133326 + refine 280, tallied by hand
const DEFAULT_PARAMS: usize = 912_374;

#[test]
fn checkpoint_roundtrip_is_bitwise() {
    let cfg = tiny_config();
    let params = init_params(&cfg, 13).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.fcnc");
    save_checkpoint(&params, &path).unwrap();
    let back = load_checkpoint(&path, Some(cfg.fingerprint())).unwrap();
    assert_eq!(back, params);
    for ((_, a), (_, b)) in back.iter().zip(params.iter()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(encode_checkpoint(&back), std::fs::read(&path).unwrap());
}

#[test]
fn truncated_checkpoint_is_a_format_error() {
    let params = init_params(&tiny_config(), 13).unwrap();
    let bytes = encode_checkpoint(&params);
    for cut in [0, 3, 10, 15, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(decode_checkpoint(&bytes[..cut], None), Err(Error::Format { .. })), "cut {cut}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(decode_checkpoint(&extra, None), Err(Error::Format { .. })));
}

#[test]
fn mismatched_fingerprint_is_refused() {
    let cfg = tiny_config();
    let params = init_params(&cfg, 13).unwrap();
    let bytes = encode_checkpoint(&params);
    let other = FcnetConfig { lambda: 0.5, ..tiny_config() };
    match decode_checkpoint(&bytes, Some(other.fingerprint())) {
        Err(Error::Format { offset, message }) => {
            assert_eq!(offset, 6);
            assert!(message.contains("fingerprint"));
        }
        r => panic!("{r:?}"),
    }
    let loaded = decode_checkpoint(&bytes, None).unwrap();
    let x = Tensor::zeros(&[2, 1, 8, 8]);
    assert!(matches!(fcnet_forward(&loaded, &other, &x), Err(Error::Config(_))));
}

#[test]
fn golden_checkpoint_layout() {
    let mut p = ModelParams::new(0xdeadbeef);
    p.insert("a", Tensor::new(&[2], vec![0.5f32, -1.0]).unwrap()).unwrap();
    let bytes = encode_checkpoint(&p);
    let expected: Vec<u8> = [
        b"FCNC".to_vec(),
        vec![1, 0],
        vec![0xef, 0xbe, 0xad, 0xde],
        vec![1, 0, 0, 0],
        vec![1, 0, b'a', 1, 2, 0, 0, 0],
        vec![0, 0, 0, 0x3f, 0, 0, 0x80, 0xbf],
    ]
    .concat();
    assert_eq!(bytes, expected);
}
