use puir::harness::gradcheck::{gradcheck, GRADCHECK_TOL, TARGETS};
use puir::model::{self, Bound, Model, ModelConfig, ParamStore};
use puir::volume::Volume;
use puir_autograd::{Graph, Tensor};
use proptest::prelude::*;

fn small() -> ModelConfig {
    ModelConfig {
        modalities: 3,
        width: 8,
        depth: 2,
        slots: 5,
        proj_dim: 4,
        use_prior: true,
    }
}

fn ramp(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|i| ((i * 37 % 101) as f64) / 50.0 - 1.0).collect()).unwrap()
}

#[test]
fn replicate_channels_examples() {
    let v = Volume::from_fn([2, 2, 2], |d, h, w| (d * 4 + h * 2 + w) as f32);
    let one = model::replicate_channels(&v, 1);
    assert_eq!(one.shape(), &[1, 2, 2, 2]);
    assert_eq!(one.data(), v.to_tensor().data());
    let four = model::replicate_channels(&v, 4);
    assert_eq!(four.shape(), &[4, 2, 2, 2]);
    for c in 1..4 {
        assert!(four.channel(c).iter().zip(four.channel(0)).all(|(a, b)| a - b == 0.0));
    }
}

#[test]
fn zero_input_zero_bias_gives_zero_features() {
    let m = Model::new(small(), 1).unwrap();
    let x = Tensor::zeros(&[3, 8, 8, 8]);
    let out = m.forward(&x).unwrap();
    assert!(out.z.data().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_is_pure_and_shapes_hold() {
    let m = Model::new(small(), 2).unwrap();
    let x = ramp(&[3, 8, 8, 8]);
    let a = m.forward(&x).unwrap();
    let b = m.forward(&x).unwrap();
    assert_eq!(a.decoded, b.decoded);
    assert_eq!(a.decoded.shape(), &[3, 8, 8, 8]);
    assert_eq!(a.z.shape(), &[8, 2, 2, 2]);
    assert_eq!(a.intermediates.len(), 2);
    assert_eq!(a.fused.shape(), a.z.shape());
}

#[test]
fn wrong_channel_count_rejected() {
    let m = Model::new(small(), 2).unwrap();
    assert!(m.forward(&ramp(&[2, 8, 8, 8])).is_err());
    assert!(m.forward(&ramp(&[3, 6, 8, 8])).is_err());
}

fn retrieve(z: &Tensor, slots: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let sv = g.constant(slots.clone());
    let out = model::retrieve_prior(&mut g, zv, sv).unwrap();
    g.value(out).clone()
}

#[test]
fn retrieval_single_slot_is_exact() {
    let slot = Tensor::new(vec![1, 3], vec![0.3, -1.2, 2.0]).unwrap();
    let out = retrieve(&ramp(&[3, 2, 2, 2]), &slot);
    for c in 0..3 {
        assert!(out.channel(c).iter().all(|&v| v == slot.data()[c]));
    }
}

#[test]
fn retrieval_equal_slots_return_that_slot() {
    let v = [0.5, -0.25];
    let slots = Tensor::new(vec![4, 2], v.iter().cycle().take(8).copied().collect()).unwrap();
    let out = retrieve(&ramp(&[2, 2, 2, 2]), &slots);
    for c in 0..2 {
        assert!(out.channel(c).iter().all(|&x| (x - v[c]).abs() < 1e-15));
    }
}

#[test]
fn retrieval_two_slots_matches_hand_softmax() {
    let z = Tensor::new(vec![2, 1, 1, 1], vec![1.0, 2.0]).unwrap();
    let slots = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let out = retrieve(&z, &slots);
    let s = 2f64.sqrt();
    let (a, b) = ((1.0 / s).exp(), (2.0 / s).exp());
    let (wa, wb) = (a / (a + b), b / (a + b));
    assert!((out.data()[0] - wa).abs() < 1e-14);
    assert!((out.data()[1] - wb).abs() < 1e-14);
}

#[test]
fn retrieval_dimension_mismatch_rejected() {
    let mut g = Graph::new();
    let z = g.constant(ramp(&[3, 2, 2, 2]));
    let s = g.constant(ramp(&[4, 2]));
    assert!(model::retrieve_prior(&mut g, z, s).is_err());
}

fn fuse_with(w: Tensor, b: Tensor, z: &Tensor, zp: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let (wv, bv) = (g.constant(w), g.constant(b));
    let p = Bound::from_vars([("fuse.w".to_string(), wv), ("fuse.b".to_string(), bv)]);
    let (a, c) = (g.constant(z.clone()), g.constant(zp.clone()));
    let out = model::fuse(&mut g, &p, a, c).unwrap();
    g.value(out).clone()
}

fn block_weights(c: usize, left: bool) -> Tensor {
    let mut w = vec![0.0; c * 2 * c];
    for i in 0..c {
        let col = if left { i } else { c + i };
        w[i * 2 * c + col] = 1.0;
    }
    Tensor::new(vec![c, 2 * c, 1, 1, 1], w).unwrap()
}

#[test]
fn fuse_projection_identities() {
    let z = ramp(&[3, 2, 2, 2]);
    let zp = z.map(|v| v * 0.5 + 0.1);
    assert_eq!(fuse_with(block_weights(3, true), Tensor::zeros(&[3]), &z, &zp), z);
    assert_eq!(fuse_with(block_weights(3, false), Tensor::zeros(&[3]), &z, &zp), zp);
}

#[test]
fn fuse_matches_per_voxel_affine() {
    let z = ramp(&[2, 2, 2, 2]);
    let zp = z.map(|v| (v * 3.0).sin());
    let w = Tensor::new(vec![2, 4, 1, 1, 1], vec![0.1, -0.4, 0.7, 0.2, -0.3, 0.5, 0.05, -0.9]).unwrap();
    let b = Tensor::from_vec(vec![0.25, -0.5]);
    let out = fuse_with(w.clone(), b.clone(), &z, &zp);
    for vox in 0..8 {
        let input = [z.data()[vox], z.data()[8 + vox], zp.data()[vox], zp.data()[8 + vox]];
        for o in 0..2 {
            let expect: f64 = b.data()[o] + (0..4).map(|i| w.data()[o * 4 + i] * input[i]).sum::<f64>();
            assert!((out.data()[o * 8 + vox] - expect).abs() < 1e-14);
        }
    }
}

#[test]
fn decoder_output_layer_is_linear() {
    let cfg = small();
    let mut m = Model::new(cfg.clone(), 3).unwrap();
    let x = ramp(&[3, 8, 8, 8]);
    let base = m.forward(&x).unwrap().decoded;
    assert_eq!(base.shape()[0], cfg.modalities);
    let w = m.params.get("dec.out.w").unwrap().scale(2.0);
    m.params.insert("dec.out.w", w);
    let doubled = m.forward(&x).unwrap().decoded;
    for (a, b) in base.data().iter().zip(doubled.data()) {
        assert!((2.0 * a - b).abs() < 1e-12);
    }
}

fn rotation_probs(z: &Tensor, w: Tensor, b: Tensor) -> Vec<f64> {
    let mut g = Graph::new();
    let (wv, bv) = (g.constant(w), g.constant(b));
    let p = Bound::from_vars([("rot.w".to_string(), wv), ("rot.b".to_string(), bv)]);
    let zv = g.constant(z.clone());
    let out = model::predict_rotation(&mut g, &p, zv).unwrap();
    g.value(out).data().to_vec()
}

#[test]
fn rotation_head_examples() {
    let z = ramp(&[3, 2, 2, 2]);
    let uniform = rotation_probs(&z, Tensor::zeros(&[4, 3]), Tensor::zeros(&[4]));
    assert!(uniform.iter().all(|&p| (p - 0.25).abs() < 1e-15));

    let peaked = rotation_probs(&z, Tensor::zeros(&[4, 3]), Tensor::from_vec(vec![10.0, 0.0, 0.0, 0.0]));
    let argmax = peaked.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(argmax, 0);

    let logits = [0.3, -1.1, 2.2, 0.7];
    let p = rotation_probs(&z, Tensor::zeros(&[4, 3]), Tensor::from_vec(logits.to_vec()));
    let denom: f64 = logits.iter().map(|l| l.exp()).sum();
    for (pi, li) in p.iter().zip(logits) {
        assert!((pi - li.exp() / denom).abs() < 1e-15);
    }
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
}

fn embed(z: &Tensor, w: &Tensor) -> Result<Tensor, puir::PuirError> {
    let mut g = Graph::new();
    let wv = g.constant(w.clone());
    let bv = g.constant(Tensor::zeros(&[w.shape()[0]]));
    let p = Bound::from_vars([("proj.w".to_string(), wv), ("proj.b".to_string(), bv)]);
    let zv = g.constant(z.clone());
    let out = model::project_contrastive(&mut g, &p, zv)?;
    Ok(g.value(out).clone())
}

#[test]
fn projection_examples() {
    let z = ramp(&[3, 2, 2, 2]);
    let w = ramp(&[5, 3]);
    let e = embed(&z, &w).unwrap();
    assert!((e.norm() - 1.0).abs() < 1e-6);
    let e3 = embed(&z.scale(3.0), &w).unwrap();
    assert!(e.data().iter().zip(e3.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    let self_dot: f64 = e.data().iter().map(|v| v * v).sum();
    assert!((self_dot - 1.0).abs() < 1e-12);
    assert!(embed(&z, &Tensor::zeros(&[5, 3])).is_err());
}

#[test]
fn every_gradcheck_target_passes() {
    for t in TARGETS {
        let r = gradcheck(t, 11).unwrap();
        assert!(r.passed(), "{t}: max rel err {} over {} partials", r.max_rel_err, r.checked);
        if r.skipped.is_none() {
            assert!(r.max_rel_err < GRADCHECK_TOL);
        }
    }
    assert!(gradcheck("no_such_op", 0).is_err());
}

#[test]
fn init_is_seeded() {
    let a = ParamStore::init(&model::model_specs(&small()), 4, "t");
    let b = ParamStore::init(&model::model_specs(&small()), 4, "t");
    let c = ParamStore::init(&model::model_specs(&small()), 5, "t");
    assert_eq!(a.content_hash(), b.content_hash());
    assert_ne!(a.content_hash(), c.content_hash());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn retrieval_is_a_convex_combination(
        zs in prop::collection::vec(-3.0f64..3.0, 16),
        ss in prop::collection::vec(-2.0f64..2.0, 6),
    ) {
        let z = Tensor::new(vec![2, 2, 2, 2], zs).unwrap();
        let slots = Tensor::new(vec![3, 2], ss).unwrap();
        let w = model::retrieval_weights(&z, &slots).unwrap();
        for row in w.data().chunks(3) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let out = retrieve(&z, &slots);
        for (n, row) in w.data().chunks(3).enumerate() {
            for c in 0..2 {
                let expect: f64 = (0..3).map(|k| row[k] * slots.data()[k * 2 + c]).sum();
                prop_assert!((out.data()[c * 8 + n] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decode_shape_contract(depth in 1usize..3, width in 2usize..6, m in 1usize..4) {
        let cfg = ModelConfig { modalities: m, width, depth, slots: 2, proj_dim: 2, use_prior: true };
        let model = Model::new(cfg, 0).unwrap();
        let n = 1 << depth;
        let out = model.forward(&ramp(&[m, n, 2 * n, 2 * n])).unwrap();
        prop_assert_eq!(out.decoded.shape(), &[m, n, 2 * n, 2 * n]);
    }
}
