//! Finite-difference checks of every differentiable operation, loss and the
//! transport gradients, over several random instances each.

use sinkgraph_core::fsgt::{dsa_on_tape, gate_on_tape};
use sinkgraph_core::losses::{
    adv_discriminator_loss_on_tape, adv_generator_loss_on_tape, discriminator_objective_on_tape,
    generator_objective_on_tape, mse_on_tape, ssim_loss_on_tape, GeneratorTerms, LossWeights,
    SinkhornLoss,
};
use sinkgraph_core::numerics::gradcheck::{check_gradients, FD_STEP};
use sinkgraph_core::rng::{stream, stream_id, Rng};
use sinkgraph_core::sinkhorn::{
    cost_matrix, eot_gradient, solve_eot, DivergenceConfig, PowerCost, TransportProblem,
};
use sinkgraph_core::{Result as CoreResult, Tape, Tensor, Var};

use crate::error::Result;
use crate::metrics::Table;
use crate::streams;

/// Relative tolerance for checks through a transport solve.
pub const OT_TOL: f64 = 1e-3;
/// Relative tolerance for everything else.
pub const DEFAULT_TOL: f64 = 1e-4;
/// Iteration cap for the converged solves used in the transport checks.
const OT_MAX_ITERS: usize = 20_000;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckRow {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckRow {
    pub fn passes(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

pub fn grad_table(rows: &[GradCheckRow]) -> Table {
    let mut t = Table::new(&["check", "instances", "max_rel_err", "tol", "pass"]);
    for r in rows {
        t.push(vec![
            r.name.to_string(),
            r.instances.to_string(),
            r.max_rel_err.to_string(),
            r.tol.to_string(),
            r.passes().to_string(),
        ]);
    }
    t
}

enum Input {
    Normal(&'static [usize]),
    /// Uniform in `[0.5, 2]`, for logs and denominators.
    Positive(&'static [usize]),
    /// Uniform in `[0.05, 0.95]`, for probabilities and pixels.
    Unit(&'static [usize]),
}

impl Input {
    fn draw(&self, r: &mut Rng) -> Tensor {
        match self {
            Input::Normal(s) => Tensor::randn(s, r),
            Input::Positive(s) => Tensor::rand_uniform(s, 0.5, 2.0, r),
            Input::Unit(s) => Tensor::rand_uniform(s, 0.05, 0.95, r),
        }
    }
}

type Body = fn(&mut Tape, &[Var]) -> CoreResult<Var>;

struct Case {
    name: &'static str,
    inputs: &'static [Input],
    tol: f64,
    body: Body,
}

/// Reduces a tensor output to a scalar with fixed pseudo-random weights, so
/// that outputs with constant sums (softmax rows, normalisations) still give
/// informative gradients.
fn project(t: &mut Tape, y: Var) -> CoreResult<Var> {
    let n = t.value(y).numel();
    let w: Vec<f64> = (0..n)
        .map(|i| 0.3 + ((i * 7919) % 13) as f64 / 10.0)
        .collect();
    let shape = t.shape(y).to_vec();
    let wv = t.constant(Tensor::new(&shape, w)?);
    let p = t.mul(y, wv)?;
    t.sum(p)
}

const M23: &[usize] = &[2, 3];
const M34: &[usize] = &[3, 4];
const M33: &[usize] = &[3, 3];
const V3: &[usize] = &[3];
const S1: &[usize] = &[1];
const IMG: &[usize] = &[2, 2, 5, 5];
const W322: &[usize] = &[3, 2, 3, 3];
const IMG1: &[usize] = &[2, 1, 8, 8];
const P4: &[usize] = &[4];

#[rustfmt::skip]
fn cases() -> Vec<Case> {
    use Input::*;
    vec![
        Case { name: "matmul", inputs: &[Normal(M23), Normal(M34)], tol: DEFAULT_TOL, body: |t, v| { let y = t.matmul(v[0], v[1])?; project(t, y) } },
        Case { name: "transpose", inputs: &[Normal(M23)], tol: DEFAULT_TOL, body: |t, v| { let y = t.transpose(v[0])?; project(t, y) } },
        Case { name: "add", inputs: &[Normal(M23), Normal(M23)], tol: DEFAULT_TOL, body: |t, v| { let y = t.add(v[0], v[1])?; project(t, y) } },
        Case { name: "sub", inputs: &[Normal(M23), Normal(M23)], tol: DEFAULT_TOL, body: |t, v| { let y = t.sub(v[0], v[1])?; project(t, y) } },
        Case { name: "mul", inputs: &[Normal(M23), Normal(M23)], tol: DEFAULT_TOL, body: |t, v| { let y = t.mul(v[0], v[1])?; project(t, y) } },
        Case { name: "div", inputs: &[Normal(M23), Positive(M23)], tol: DEFAULT_TOL, body: |t, v| { let y = t.div(v[0], v[1])?; project(t, y) } },
        Case { name: "square", inputs: &[Normal(M23)], tol: DEFAULT_TOL, body: |t, v| { let y = t.square(v[0])?; project(t, y) } },
        Case { name: "scale", inputs: &[Normal(M23)], tol: DEFAULT_TOL, body: |t, v| { let y = t.scale(v[0], -1.7)?; project(t, y) } },
        Case { name: "shift", inputs: &[Normal(M23)], tol: DEFAULT_TOL, body: |t, v| { let y = t.shift(v[0], 0.4)?; let y = t.square(y)?; project(t, y) } },
        Case { name: "scale_by", inputs: &[Normal(M23), Normal(S1)], tol: DEFAULT_TOL, body: |t, v| { let y = t.scale_by(v[0], v[1])?; project(t, y) } },
        Case { name: "shift_by", inputs: &[Normal(M23), Normal(S1)], tol: DEFAULT_TOL, body: |t, v| { let y = t.shift_by(v[0], v[1])?; let y = t.square(y)?; project(t, y) } },
        Case { name: "add_row_bias", inputs: &[Normal(M23), Normal(V3)], tol: DEFAULT_TOL, body: |t, v| { let y = t.add_row_bias(v[0], v[1])?; let y = t.square(y)?; project(t, y) } },
        Case { name: "log", inputs: &[Positive(M23)], tol: DEFAULT_TOL, body: |t, v| { let y = t.log(v[0])?; project(t, y) } },
        Case { name: "exp", inputs: &[Normal(M23)], tol: DEFAULT_TOL, body: |t, v| { let y = t.exp(v[0])?; project(t, y) } },
        Case { name: "abs", inputs: &[Normal(M23)], tol: DEFAULT_TOL, body: |t, v| { let y = t.abs(v[0])?; project(t, y) } },
        Case { name: "relu", inputs: &[Normal(M23)], tol: DEFAULT_TOL, body: |t, v| { let y = t.relu(v[0])?; project(t, y) } },
        Case { name: "leaky_relu", inputs: &[Normal(M23)], tol: DEFAULT_TOL, body: |t, v| { let y = t.leaky_relu(v[0], 0.2)?; project(t, y) } },
        Case { name: "sigmoid", inputs: &[Normal(M23)], tol: DEFAULT_TOL, body: |t, v| { let y = t.sigmoid(v[0])?; project(t, y) } },
        Case { name: "clamp", inputs: &[Normal(M23)], tol: DEFAULT_TOL, body: |t, v| { let y = t.clamp(v[0], -0.5, 0.5)?; project(t, y) } },
        Case { name: "mean", inputs: &[Normal(M23)], tol: DEFAULT_TOL, body: |t, v| { let y = t.square(v[0])?; t.mean(y) } },
        Case { name: "sum_axis", inputs: &[Normal(M34)], tol: DEFAULT_TOL, body: |t, v| { let a = t.sum_axis(v[0], 0)?; let b = t.sum_axis(v[0], 1)?; let a = t.square(a)?; let b = t.square(b)?; let a = project(t, a)?; let b = project(t, b)?; t.add(a, b) } },
        Case { name: "softmax", inputs: &[Normal(M34)], tol: DEFAULT_TOL, body: |t, v| { let y = t.softmax(v[0])?; project(t, y) } },
        Case { name: "conv2d", inputs: &[Normal(IMG), Normal(W322), Normal(V3)], tol: DEFAULT_TOL, body: |t, v| { let y = t.conv2d(v[0], v[1], Some(v[2]))?; let y = t.square(y)?; project(t, y) } },
        Case { name: "box_mean", inputs: &[Normal(IMG)], tol: DEFAULT_TOL, body: |t, v| { let y = t.box_mean(v[0], 3)?; let y = t.square(y)?; project(t, y) } },
        Case { name: "gather", inputs: &[Normal(M23)], tol: DEFAULT_TOL, body: |t, v| { let y = t.gather(v[0], vec![5, 0, 0, 3], &[2, 2])?; let y = t.square(y)?; project(t, y) } },
        Case { name: "reshape", inputs: &[Normal(M23)], tol: DEFAULT_TOL, body: |t, v| { let y = t.reshape(v[0], &[3, 2])?; let y = t.square(y)?; project(t, y) } },
        Case { name: "concat", inputs: &[Normal(M23), Normal(M33)], tol: DEFAULT_TOL, body: |t, v| { let a = t.transpose(v[0])?; let y = t.concat(&[a, v[1]], 1)?; let y = t.square(y)?; project(t, y) } },
        Case { name: "slice", inputs: &[Normal(M34)], tol: DEFAULT_TOL, body: |t, v| { let y = t.slice(v[0], 1, 1, 2)?; let y = t.square(y)?; project(t, y) } },
        Case { name: "min_max_rows", inputs: &[Normal(M34)], tol: DEFAULT_TOL, body: |t, v| { let y = t.min_max_rows(v[0])?; project(t, y) } },
        Case { name: "mse_loss", inputs: &[Unit(IMG1), Unit(IMG1)], tol: DEFAULT_TOL, body: |t, v| mse_on_tape(t, v[0], v[1]) },
        Case { name: "ssim_loss", inputs: &[Unit(IMG1), Unit(IMG1)], tol: DEFAULT_TOL, body: |t, v| ssim_loss_on_tape(t, v[0], v[1]) },
        Case { name: "adv_generator_loss", inputs: &[Unit(P4)], tol: DEFAULT_TOL, body: |t, v| adv_generator_loss_on_tape(t, v[0]) },
        Case { name: "adv_discriminator_loss", inputs: &[Unit(P4), Unit(P4)], tol: DEFAULT_TOL, body: |t, v| adv_discriminator_loss_on_tape(t, v[0], v[1]) },
        Case { name: "discriminator_objective", inputs: &[Unit(P4), Unit(P4), Normal(M23)], tol: DEFAULT_TOL, body: |t, v| { let da = t.square(v[2])?; let da = t.mean(da)?; discriminator_objective_on_tape(t, v[0], v[1], Some(da), &LossWeights::default()) } },
        Case { name: "generator_objective", inputs: &[Unit(IMG1), Unit(IMG1), Unit(P4)], tol: DEFAULT_TOL, body: |t, v| {
            let pixel = mse_on_tape(t, v[0], v[1])?;
            let ssim = ssim_loss_on_tape(t, v[0], v[1])?;
            let adv = adv_generator_loss_on_tape(t, v[2])?;
            generator_objective_on_tape(t, &GeneratorTerms { pixel, ssim, adv, ot: None }, &LossWeights::default())
        } },
        Case { name: "dsa", inputs: &[Normal(IMG), Normal(&[2, 3, 3, 3])], tol: DEFAULT_TOL, body: |t, v| { let y = dsa_on_tape(t, &[v[0], v[1]], 4, 4)?; project(t, y) } },
        Case { name: "attention_gate", inputs: &[Unit(M34), Normal(S1), Normal(S1)], tol: DEFAULT_TOL, body: |t, v| { let y = gate_on_tape(t, v[0], v[1], v[2])?; project(t, y) } },
    ]
}

fn instance_rng(seed: u64, case: usize, instance: usize) -> Rng {
    stream(
        seed,
        stream_id(streams::GRAD_CHECK, (case * 1000 + instance) as u64),
    )
}

/// Worst relative error of each check over `instances` random draws.
pub fn gradient_suite(seed: u64, instances: usize) -> Result<Vec<GradCheckRow>> {
    let mut rows = Vec::new();
    for (ci, case) in cases().into_iter().enumerate() {
        let mut worst = 0.0f64;
        for inst in 0..instances {
            let mut r = instance_rng(seed, ci, inst);
            let inputs: Vec<Tensor> = case.inputs.iter().map(|i| i.draw(&mut r)).collect();
            worst = worst.max(check_gradients(&inputs, FD_STEP, case.body)?.max_rel_err);
        }
        rows.push(GradCheckRow {
            name: case.name,
            instances,
            max_rel_err: worst,
            tol: case.tol,
        });
    }
    let base = rows.len();
    rows.push(transport_check(
        "eot_gradient",
        seed,
        base,
        instances,
        eot_term,
    )?);
    rows.push(transport_check(
        "sinkhorn_divergence_gradient",
        seed,
        base + 1,
        instances,
        divergence_term,
    )?);
    Ok(rows)
}

struct OtInstance {
    ys: Tensor,
    epsilon: f64,
}

fn eot_term(t: &mut Tape, x: Var, inst: &OtInstance) -> CoreResult<Var> {
    let xs = t.value(x).clone();
    let cost = cost_matrix(&xs, &inst.ys, 2.0)?;
    let p = TransportProblem::uniform(cost, inst.epsilon, OT_MAX_ITERS)?;
    let sol = solve_eot(&p)?;
    let grad = eot_gradient(&p, &sol, &xs, &inst.ys, &PowerCost::squared())?;
    t.external(x, sol.cost_value, grad)
}

fn divergence_term(t: &mut Tape, x: Var, inst: &OtInstance) -> CoreResult<Var> {
    SinkhornLoss::new(DivergenceConfig::new(inst.epsilon, OT_MAX_ITERS, 2.0))
        .on_tape(t, x, &inst.ys)
}

fn transport_check(
    name: &'static str,
    seed: u64,
    case: usize,
    instances: usize,
    term: fn(&mut Tape, Var, &OtInstance) -> CoreResult<Var>,
) -> Result<GradCheckRow> {
    let mut worst = 0.0f64;
    for inst in 0..instances {
        let mut r = instance_rng(seed, case, inst);
        let n = 3 + inst % 3;
        let xs = Tensor::randn(&[n, 2], &mut r);
        let ys = Tensor::randn(&[n + 1, 2], &mut r);
        let epsilon = [0.05, 0.1, 0.5, 1.0][inst % 4];
        let data = OtInstance { ys, epsilon };
        let report = check_gradients(&[xs], FD_STEP, |t, v| term(t, v[0], &data))?;
        worst = worst.max(report.max_rel_err);
    }
    Ok(GradCheckRow {
        name,
        instances,
        max_rel_err: worst,
        tol: OT_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_with_two_instances() {
        let rows = gradient_suite(11, 2).unwrap();
        assert!(rows.len() > 30);
        for r in &rows {
            assert!(r.passes(), "{r:?}");
        }
        assert_eq!(grad_table(&rows).rows.len(), rows.len());
    }

    #[test]
    fn projection_weights_are_not_constant() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::ones(&[2, 3]));
        let y = t.softmax(x).unwrap();
        let s = project(&mut t, y).unwrap();
        let g = t.backward(s).unwrap().wrt(x);
        assert!(g.max_abs() > 1e-3);
    }
}
