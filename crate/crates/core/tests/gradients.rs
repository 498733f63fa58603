//! Finite-difference checks for every tape primitive and the full model.

use omnifield::autodiff::{Tape, Var};
use omnifield::config::{FusionMode, ModelConfig};
use omnifield::gradcheck::grad_check;
use omnifield::model::{masked_loss, ContextSet, ModalityObservations, OmniFieldModel, QuerySet, Targets};
use omnifield::params::Bound;
use omnifield::tensor::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const PRIMITIVE_TOL: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.5..2.0)).collect()).unwrap()
}

/// Weighted sum so every output entry contributes a distinct sensitivity.
fn reduce<'t>(tape: &'t Tape, y: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let w = random(&mut rng, &y.shape());
    y.mul(tape.constant(w))?.sum()
}

fn check(name: &str, inputs: Vec<Tensor>, f: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>) {
    let err = grad_check(f, &inputs, STEP).unwrap();
    assert!(err < PRIMITIVE_TOL, "{name}: relative error {err:e}");
}

#[test]
fn every_primitive_matches_finite_differences() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[4, 2]);
        let c = random(&mut rng, &[3, 4]);
        let row = random(&mut rng, &[1, 4]);
        let pos = positive(&mut rng, &[3, 4]);

        check("matmul", vec![a.clone(), b.clone()], |t, v| reduce(t, v[0].matmul(v[1])?, seed));
        check("transpose", vec![a.clone()], |t, v| reduce(t, v[0].transpose()?, seed));
        check("add", vec![a.clone(), c.clone()], |t, v| reduce(t, v[0].add(v[1])?, seed));
        check("add_broadcast", vec![a.clone(), row.clone()], |t, v| reduce(t, v[0].add(v[1])?, seed));
        check("add_broadcast_lhs", vec![row.clone(), a.clone()], |t, v| reduce(t, v[0].add(v[1])?, seed));
        check("sub", vec![a.clone(), c.clone()], |t, v| reduce(t, v[0].sub(v[1])?, seed));
        check("sub_broadcast", vec![a.clone(), row.clone()], |t, v| reduce(t, v[0].sub(v[1])?, seed));
        check("sub_broadcast_lhs", vec![row.clone(), a.clone()], |t, v| reduce(t, v[0].sub(v[1])?, seed));
        check("mul", vec![a.clone(), c.clone()], |t, v| reduce(t, v[0].mul(v[1])?, seed));
        check("mul_broadcast", vec![a.clone(), row.clone()], |t, v| reduce(t, v[0].mul(v[1])?, seed));
        check("mul_broadcast_lhs", vec![row.clone(), a.clone()], |t, v| reduce(t, v[0].mul(v[1])?, seed));
        check("scale", vec![a.clone()], |t, v| reduce(t, v[0].scale(-1.7)?, seed));
        check("exp", vec![a.clone()], |t, v| reduce(t, v[0].exp()?, seed));
        check("gelu", vec![a.clone()], |t, v| reduce(t, v[0].gelu()?, seed));
        check("square", vec![a.clone()], |t, v| reduce(t, v[0].square()?, seed));
        check("sqrt", vec![pos.clone()], |t, v| reduce(t, v[0].sqrt()?, seed));
        check("concat_rows", vec![a.clone(), c.clone()], |t, v| reduce(t, t.concat(&[v[0], v[1]], 0)?, seed));
        check("concat_cols", vec![a.clone(), c.clone()], |t, v| reduce(t, t.concat(&[v[0], v[1]], 1)?, seed));
        check("softmax", vec![a.clone()], |t, v| reduce(t, v[0].softmax(None)?, seed));
        let mask = Tensor::row_vector(vec![0.0, -1e30, 0.0, 0.0]).unwrap();
        check("softmax_masked", vec![a.clone()], |t, v| reduce(t, v[0].softmax(Some(&mask))?, seed));
        check("layer_norm", vec![a.clone()], |t, v| reduce(t, v[0].layer_norm(1e-5)?, seed));
        check("mean_rows", vec![a.clone()], |t, v| reduce(t, v[0].mean_rows()?, seed));
        check("sum", vec![a.clone()], |_, v| v[0].sum());
        check("slice_rows", vec![a.clone()], |t, v| reduce(t, v[0].slice(0, 1, 2)?, seed));
        check("slice_cols", vec![a.clone()], |t, v| reduce(t, v[0].slice(1, 1, 2)?, seed));
        check("reshape", vec![a.clone()], |t, v| reduce(t, v[0].reshape(&[2, 6])?, seed));
    }
}

#[test]
fn softmax_layernorm_matmul_composite() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = random(&mut rng, &[4, 5]);
        let w = random(&mut rng, &[5, 5]);
        check("composite", vec![x, w], |t, v| {
            let h = v[0].layer_norm(1e-5)?.matmul(v[1])?;
            let a = h.softmax(None)?;
            reduce(t, a.matmul(v[0].transpose()?)?, seed)
        });
    }
}

fn observations(rng: &mut ChaCha8Rng, modality: usize, n: usize) -> ModalityObservations {
    ModalityObservations::new(
        modality,
        1,
        (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
        (0..n).map(|_| -rng.random_range(0.0..0.2)).collect(),
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect(),
        0.0,
    )
    .unwrap()
}

fn micro_model(seed: u64, fusion: FusionMode) -> OmniFieldModel {
    let mut cfg = ModelConfig::micro();
    cfg.seed = seed;
    cfg.fusion = fusion;
    OmniFieldModel::new(cfg, vec!["s1".into(), "s2".into()], 1).unwrap()
}

#[test]
fn full_forward_and_loss_match_finite_differences() {
    for seed in 0..20u64 {
        let fusion = if seed % 2 == 0 { FusionMode::Icmr } else { FusionMode::MidFusion };
        let model = micro_model(seed, fusion);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let ctx = ContextSet::new(vec![observations(&mut rng, 0, 4), observations(&mut rng, 1, 4)]);
        let queries = QuerySet::new(1, 0.1, vec![Some(vec![0.2, 0.7]), Some(vec![0.4, 0.9])]);
        let targets = Targets {
            values: vec![Some(vec![0.3, -0.5]), Some(vec![1.0, 0.2])],
        };
        let inputs = model.params().values().to_vec();
        let err = grad_check(
            |tape, vars| {
                let p = Bound::from_vars(vars.to_vec());
                let preds = model.forward(&p, tape, &ctx, &queries).map_err(to_tensor_err)?;
                masked_loss(tape, &preds, &targets, &queries.supervised).map_err(to_tensor_err)
            },
            &inputs,
            STEP,
        )
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn crosstalk_block_matches_finite_differences() {
    // MSE of one crosstalk stage on three modalities.
    let mut cfg = ModelConfig::micro();
    cfg.stages = 1;
    let model = OmniFieldModel::new(cfg, vec!["a".into(), "b".into(), "c".into()], 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ctx = ContextSet::new((0..3).map(|m| observations(&mut rng, m, 3)).collect());
    let target = random(&mut rng, &[12, 8]);
    let inputs = model.params().values().to_vec();
    let err = grad_check(
        |tape, vars| {
            let p = Bound::from_vars(vars.to_vec());
            let state = model.icmr_forward(&p, tape, &ctx).map_err(to_tensor_err)?;
            let diff = state.field.sub(tape.constant(target.clone()))?;
            diff.square()?.sum()?.scale(1.0 / 96.0)
        },
        &inputs,
        STEP,
    )
    .unwrap();
    assert!(err < PRIMITIVE_TOL, "relative error {err:e}");
}

fn to_tensor_err(e: omnifield::model::ModelError) -> omnifield::TensorError {
    omnifield::TensorError::Invalid(e.to_string())
}
