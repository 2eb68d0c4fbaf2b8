//! Finite-difference cases shared by the gradient and acceptance tests.

#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use uvmnet::autodiff::{finite_diff_check_with, FdOptions, FdReport, Tape, Var};
use uvmnet::block::{bi_ssm_block_on, BiSsmBlockParams, BlockConfig, Variant};
use uvmnet::net::DOWN_SPEC;
use uvmnet::ssm::{SsmMode, SsmParams};
use uvmnet::{Real, Result, Tensor};

pub const VARIANTS: [Variant; 3] = [Variant::Ssm, Variant::Conv1d, Variant::Sdp];

/// Step and tolerance per precision.
pub const F64_STEP: f64 = 1e-6;
pub const F64_TOL: f64 = 1e-6;
pub const F32_STEP: f64 = 1e-2;
pub const F32_TOL: f64 = 1e-3;

/// Fixed, value-independent probe weights for reducing an output to a scalar.
fn probe<T: Real>(shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |i| T::of((1.3 * i as f64 + 0.7).sin()))
}

fn reduce<T: Real>(tape: &mut Tape<T>, y: Var) -> Result<Var> {
    let w = probe(tape.shape(y));
    tape.weighted_sum(y, w)
}

fn rand<T: Real>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::rand_uniform(shape, -1.0, 1.0, rng)
}

/// Uniform values kept at least 0.1 away from zero (for kinks at 0).
fn off_zero<T: Real>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    rand::<T>(shape, rng).map(|v| if v < T::zero() { v - T::of(0.1) } else { v + T::of(0.1) })
}

type Case<T> = (&'static str, Vec<Tensor<T>>, Box<dyn Fn(&mut Tape<T>, &[Var]) -> Result<Var>>);

fn op_cases<T: Real>() -> Vec<Case<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let r = &mut rng;
    let target = rand::<T>(&[2, 3, 4], r);
    let gap = off_zero::<T>(&[2, 3, 4], r);
    let l1_pred = target.add(&gap).unwrap();
    let mut cases: Vec<Case<T>> = vec![
        (
            "conv2d",
            vec![rand(&[2, 2, 5, 4], r), rand(&[3, 2, 3, 3], r), rand(&[3], r)],
            Box::new(|t, v| t.conv2d(v[0], v[1], v[2], 1, 1)),
        ),
        (
            "conv2d stride 2",
            vec![rand(&[1, 2, 4, 6], r), rand(&[3, 2, 3, 3], r), rand(&[3], r)],
            Box::new(|t, v| t.conv2d_with(v[0], v[1], v[2], DOWN_SPEC)),
        ),
        ("leaky_relu", vec![off_zero(&[2, 3, 4], r)], Box::new(|t, v| Ok(t.leaky_relu(v[0], T::of(0.2))))),
        (
            "layer_norm",
            vec![rand(&[2, 3, 5], r), rand(&[5], r), rand(&[5], r)],
            Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], T::of(1e-5))),
        ),
        ("softmax axis 1", vec![rand(&[2, 3, 4], r)], Box::new(|t, v| t.softmax(v[0], 1))),
        ("softmax axis 2", vec![rand(&[2, 3, 4], r)], Box::new(|t, v| t.softmax(v[0], 2))),
        ("bilinear_upsample", vec![rand(&[1, 2, 3, 4], r)], Box::new(|t, v| t.bilinear_upsample(v[0], 2))),
        ("transpose_lc", vec![rand(&[2, 3, 4], r)], Box::new(|t, v| t.transpose_lc(v[0]))),
        ("flatten_spatial", vec![rand(&[1, 2, 3, 4], r)], Box::new(|t, v| t.flatten_spatial(v[0]))),
        ("unflatten_spatial", vec![rand(&[1, 12, 2], r)], Box::new(|t, v| t.unflatten_spatial(v[0], 3, 4))),
        ("reshape", vec![rand(&[2, 3, 4], r)], Box::new(|t, v| t.reshape(v[0], &[6, 4]))),
        (
            "concat_channels",
            vec![rand(&[1, 2, 3, 3], r), rand(&[1, 1, 3, 3], r)],
            Box::new(|t, v| t.concat_channels(v[0], v[1])),
        ),
        ("hadamard", vec![rand(&[2, 3, 4], r), rand(&[2, 3, 4], r)], Box::new(|t, v| t.hadamard(v[0], v[1]))),
        ("add", vec![rand(&[2, 3, 4], r), rand(&[2, 3, 4], r)], Box::new(|t, v| t.add(v[0], v[1]))),
        ("scale", vec![rand(&[2, 3], r)], Box::new(|t, v| Ok(t.scale(v[0], T::of(-1.7))))),
        (
            "linear",
            vec![rand(&[2, 3, 4], r), rand(&[5, 4], r), rand(&[5], r)],
            Box::new(|t, v| t.linear(v[0], v[1], v[2])),
        ),
        (
            "depthwise_conv1d",
            vec![rand(&[2, 6, 3], r), rand(&[3, 3], r), rand(&[3], r)],
            Box::new(|t, v| t.depthwise_conv1d(v[0], v[1], v[2])),
        ),
        ("sum", vec![rand(&[2, 3], r)], Box::new(|t, v| Ok(t.sum(v[0])))),
        ("l1_loss", vec![l1_pred], Box::new(move |t, v| t.l1_loss(v[0], &target))),
        ("mse_loss", vec![rand(&[2, 3, 4], r)], Box::new({
            let target = rand::<T>(&[2, 3, 4], r);
            move |t, v| t.mse_loss(v[0], &target)
        })),
        (
            "sdp_attention",
            vec![rand(&[2, 5, 3], r), rand(&[2, 5, 3], r), rand(&[2, 5, 3], r)],
            Box::new(|t, v| t.sdp_attention(v[0], v[1], v[2], 4096)),
        ),
    ];
    for (name, mode, chunk) in [
        ("ssm_scan fixed", SsmMode::Fixed, None),
        ("ssm_scan selective", SsmMode::Selective, None),
        ("ssm_scan selective chunked", SsmMode::Selective, Some(4)),
    ] {
        let p = SsmParams::<Tensor<T>>::init(3, 2, mode, r);
        let mut params = vec![rand(&[2, 9, 3], r)];
        params.extend(p.into_slots());
        cases.push((
            name,
            params,
            Box::new(move |t, v| {
                let sp = SsmParams::from_slots(mode, v[1..].iter().copied());
                t.ssm_scan(v[0], &sp, chunk)
            }),
        ));
    }
    cases
}

/// Finite-difference reports for every differentiable tape op.
pub fn op_reports<T: Real>(step: f64, tol: f64) -> Vec<(&'static str, FdReport)> {
    op_cases::<T>()
        .into_iter()
        .map(|(name, params, f)| {
            let report = finite_diff_check_with(
                |tape, v| {
                    let y = f(tape, v)?;
                    if tape.shape(y).iter().product::<usize>() == 1 && tape.shape(y).len() <= 1 {
                        Ok(y)
                    } else {
                        reduce(tape, y)
                    }
                },
                &params,
                &FdOptions::new(step, tol),
            )
            .unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, report)
        })
        .collect()
}

/// Whole-block check on a small instance with parameters drawn from
/// moderate ranges (see the block unit tests).
pub fn block_report<T: Real>(variant: Variant, step: f64, tol: f64) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cfg = BlockConfig { expansion: 1, state_dim: 2, variant, ..BlockConfig::new(3) };
    let init = BiSsmBlockParams::<Tensor<T>>::init(&cfg, &mut rng);
    let template = init
        .try_map("", &mut |name, t| {
            let (lo, hi) = match name.rsplit('.').next().unwrap() {
                "a_log" => (-1.0, 0.5),
                "delta_bias" => (0.0, 1.0),
                "gamma" => (0.5, 1.5),
                _ => (-0.5, 0.5),
            };
            Ok(Tensor::rand_uniform(t.shape(), lo, hi, &mut rng))
        })
        .unwrap();
    let x = rand::<T>(&[2, 3, 3, 2], &mut rng);
    let named = template.named("");
    let mut names: Vec<&str> = vec!["x"];
    names.extend(named.iter().map(|(n, _)| n.as_str()));
    let mut params = vec![x];
    params.extend(named.iter().map(|(_, t)| (*t).clone()));
    finite_diff_check_with(
        |tape, v| {
            let mut i = 0;
            let p = template.try_map("", &mut |_, _| {
                i += 1;
                Ok(v[i])
            })?;
            let y = bi_ssm_block_on(tape, v[0], &p, &cfg)?;
            reduce(tape, y)
        },
        &params,
        &FdOptions::new(step, tol).named(&names),
    )
    .unwrap()
}
