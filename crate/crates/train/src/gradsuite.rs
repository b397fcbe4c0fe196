//! The 64-bit finite-difference suite: every differentiable op plus a
//! conditional windowed block pair, over ten seeds each.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use wingan_core::attention::AttentionConfig;
use wingan_core::blocks::{BlockOptions, NormKind, Placement, TransformerBlock};
use wingan_core::nn::{Builder, Ctx};
use wingan_tensor::gradcheck::{check_inputs, check_params, GradReport};
use wingan_tensor::{ParamStore, Result, Tape, Tensor, Var};

pub const SEEDS: u64 = 10;
pub const TOLERANCE: f64 = 1e-4;
const OP_STEP: f64 = 1e-5;
const BLOCK_STEP: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub seeds: u64,
    pub report: GradReport,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.report.max_rel_err < TOLERANCE
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Contracts an output with fixed weights so every entry has its own slope.
fn probe<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>) -> Result<Var<'t, f64>> {
    let w = Tensor::from_fn(&y.shape(), |i| (0.731 * i as f64 + 0.2).sin() + 0.1);
    y.mul(tape.constant(w))?.sum()
}

type OpFn = for<'t> fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    fn s(v: &[&[usize]]) -> Vec<Vec<usize>> {
        v.iter().map(|x| x.to_vec()).collect()
    }
    vec![
        ("add", s(&[&[3, 4], &[3, 4]]), |_, v| v[0].add(v[1])),
        ("sub", s(&[&[3, 4], &[3, 4]]), |_, v| v[0].sub(v[1])),
        ("mul", s(&[&[3, 4], &[3, 4]]), |_, v| v[0].mul(v[1])),
        ("add_bcast", s(&[&[2, 3, 4], &[4]]), |_, v| v[0].add_bcast(v[1])),
        ("mul_bcast", s(&[&[2, 3, 4], &[3, 4]]), |_, v| v[0].mul_bcast(v[1])),
        ("modulate", s(&[&[2, 3, 4], &[2, 4], &[2, 4]]), |_, v| v[0].modulate(v[1], v[2])),
        ("scale", s(&[&[10]]), |_, v| v[0].scale(-1.7)),
        ("add_scalar", s(&[&[10]]), |_, v| v[0].add_scalar(0.3)),
        ("square", s(&[&[10]]), |_, v| v[0].square()),
        ("tanh", s(&[&[10]]), |_, v| v[0].tanh()),
        ("softplus", s(&[&[10]]), |_, v| v[0].scale(4.0)?.softplus()),
        ("leaky_relu", s(&[&[16]]), |_, v| v[0].leaky_relu(0.2)),
        ("gelu", s(&[&[16]]), |_, v| v[0].gelu()),
        ("sum", s(&[&[2, 5]]), |_, v| v[0].square()?.sum()),
        ("mean", s(&[&[2, 5]]), |_, v| v[0].square()?.mean()),
        ("sum_per_sample", s(&[&[3, 2, 4]]), |_, v| v[0].square()?.sum_per_sample()),
        ("matmul", s(&[&[2, 3, 4], &[4, 5]]), |_, v| v[0].matmul(v[1])),
        ("matmul batched", s(&[&[2, 3, 4], &[2, 4, 2]]), |_, v| v[0].matmul(v[1])),
        ("matmul_nt", s(&[&[2, 3, 4], &[2, 5, 4]]), |_, v| v[0].matmul_nt(v[1])),
        ("scores", s(&[&[2, 4, 3], &[2, 4, 3]]), |_, v| v[0].scores(v[1])),
        ("linear", s(&[&[3, 4], &[4, 5], &[5]]), |_, v| v[0].linear(v[1], Some(v[2]))),
        ("gather", s(&[&[3, 4]]), |_, v| {
            let idx: Vec<u32> = vec![5, 0, 11, 5, 7, 2];
            v[0].gather(std::sync::Arc::new(idx), &[2, 3])?.square()
        }),
        ("reshape", s(&[&[2, 6]]), |_, v| v[0].reshape(&[3, 4])?.square()),
        ("permute", s(&[&[2, 3, 4]]), |_, v| v[0].permute(&[2, 0, 1])?.square()),
        ("narrow", s(&[&[3, 5]]), |_, v| v[0].narrow(1, 1, 3)?.square()),
        ("concat_last", s(&[&[2, 3], &[2, 2]]), |_, v| Var::concat_last(&[v[0], v[1]])?.square()),
        ("pixel_shuffle", s(&[&[1, 2, 2, 8]]), |_, v| v[0].pixel_shuffle()?.square()),
        ("pixel_unshuffle", s(&[&[1, 4, 4, 2]]), |_, v| v[0].pixel_unshuffle()?.square()),
        ("bilinear_resize up", s(&[&[1, 3, 2, 2]]), |_, v| v[0].bilinear_resize(5, 4)),
        ("bilinear_resize down", s(&[&[1, 4, 4, 2]]), |_, v| v[0].bilinear_resize(2, 2)),
        ("conv2d", s(&[&[1, 3, 3, 2], &[3, 3, 2, 2], &[2]]), |_, v| v[0].conv2d(v[1], Some(v[2]), 1, 1)),
        ("conv2d strided", s(&[&[1, 4, 4, 2], &[3, 3, 2, 1]]), |_, v| v[0].conv2d(v[1], None, 2, 1)),
        ("layer_norm", s(&[&[3, 6]]), |_, v| v[0].layer_norm(1e-5)),
        ("instance_norm", s(&[&[2, 5, 3]]), |_, v| v[0].instance_norm(1e-5)),
        ("batch_norm", s(&[&[4, 2, 3]]), |_, v| Ok(v[0].batch_norm(1e-5)?.0)),
        ("normalize_with", s(&[&[4, 3]]), |_, v| {
            let mean = Tensor::from_f64(&[3], &[0.1, -0.2, 0.3])?;
            let var = Tensor::from_f64(&[3], &[1.5, 0.5, 2.0])?;
            v[0].normalize_with(&mean, &var, 1e-5)
        }),
        ("softmax", s(&[&[3, 5]]), |_, v| v[0].softmax(1)),
        ("softmax inner axis", s(&[&[2, 4, 3]]), |_, v| v[0].softmax(1)),
    ]
}

fn empty() -> GradReport {
    GradReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    }
}

pub fn op_suite() -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for (name, shapes, f) in op_cases() {
        let mut report = empty();
        for seed in 0..SEEDS {
            let mut r = rng(1000 + seed);
            let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| Tensor::randn(s, 1.0, &mut r)).collect();
            report = report.merge(check_inputs(|t, v| probe(t, f(t, v)?), &inputs, OP_STEP)?);
        }
        out.push(CaseResult {
            name: name.to_string(),
            seeds: SEEDS,
            report,
        });
    }
    Ok(out)
}

const DIM: usize = 8;
const HEADS: usize = 2;
const GRID: (usize, usize) = (4, 4);
const WINDOW: usize = 2;
const COND: usize = 4;

/// A W-MSA block followed by its SW-MSA partner, both with instance-norm
/// AdaNorm in the full conditional placement, parameters drawn at std 0.4.
pub fn conditional_pair(seed: u64) -> Result<([TransformerBlock; 2], ParamStore<f64>)> {
    let mut store = ParamStore::new();
    let mut r = rng(100 + seed);
    let blocks = {
        let mut b = Builder::new(&mut store, &mut r);
        let mk = |shift| BlockOptions::generator(AttentionConfig::windowed(DIM, HEADS, WINDOW, shift)).conditional(Placement::C, NormKind::Instance, COND);
        [
            TransformerBlock::build(&mut b, "w", 1, GRID, mk(false))?,
            TransformerBlock::build(&mut b, "sw", 2, GRID, mk(true))?,
        ]
    };
    let ids: Vec<_> = store.trainable().map(|(id, _)| id).collect();
    for id in ids {
        let shape = store.value(id).shape().to_vec();
        store.set_value(id, Tensor::randn(&shape, 0.4, &mut r));
    }
    Ok((blocks, store))
}

/// Parameter and input gradients of the conditional window pair.
pub fn block_suite() -> Result<Vec<CaseResult>> {
    let n = GRID.0 * GRID.1;
    let mut params = empty();
    let mut inputs = empty();
    for seed in 0..SEEDS {
        let (blocks, mut store) = conditional_pair(seed)?;
        let ids: Vec<_> = store.trainable().map(|(id, _)| id).collect();
        // Inputs ride along as parameters so one closure serves both checks.
        let x = store.add("input.x", Tensor::randn(&[2, n, DIM], 1.0, &mut rng(200 + seed)), 1.0)?;
        let cond = store.add("input.cond", Tensor::randn(&[2, COND], 1.0, &mut rng(300 + seed)), 1.0)?;
        let check = |which: &[wingan_tensor::ParamId]| {
            check_params(
                |tape, s| {
                    let ctx = Ctx::new(tape, s);
                    let c = ctx.weight(cond)?;
                    let h = blocks[0].forward(&ctx, ctx.weight(x)?, Some(c))?;
                    probe(tape, blocks[1].forward(&ctx, h, Some(c))?)
                },
                &store,
                which,
                BLOCK_STEP,
            )
        };
        params = params.merge(check(&ids)?);
        inputs = inputs.merge(check(&[x, cond])?);
    }
    Ok(vec![
        CaseResult {
            name: "conditional window pair (parameters)".into(),
            seeds: SEEDS,
            report: params,
        },
        CaseResult {
            name: "conditional window pair (inputs)".into(),
            seeds: SEEDS,
            report: inputs,
        },
    ])
}

pub fn full_suite() -> Result<Vec<CaseResult>> {
    let mut out = op_suite()?;
    out.extend(block_suite()?);
    Ok(out)
}
