//! Oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::f64::consts::PI;

use intact_vae::dataset::Dataset;
use intact_vae::numerics::{Rng, Tape, Tensor2, Var};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-4;

/// `|a − b| / max(|a|, |b|, floor)`; the floor keeps gradients that are zero
/// up to rounding from dominating.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn uniform_tensor(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor2 {
    let data = (0..rows * cols)
        .map(|_| lo + (hi - lo) * rng.uniform())
        .collect();
    Tensor2::from_vec(rows, cols, data).unwrap()
}

/// Compares reverse-mode gradients of `build` against central differences.
/// Non-scalar outputs are reduced by a fixed random weighting so every
/// output entry contributes. Returns the largest relative error.
pub fn max_grad_error(
    inputs: &[Tensor2],
    rng: &mut Rng,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
) -> f64 {
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        uniform_tensor(
            rng,
            tape.value(out).rows(),
            tape.value(out).cols(),
            0.5,
            1.5,
        )
    };
    let eval = |values: &[Tensor2]| -> (Tape, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let w = tape.leaf(probe.clone());
        let weighted = tape.mul(out, w);
        let loss = tape.sum_all(weighted);
        (tape, vars, loss)
    };
    let (tape, vars, loss) = eval(inputs);
    let grads = tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], input);
        for idx in 0..input.len() {
            let mut shifted = inputs.to_vec();
            shifted[k].data_mut()[idx] += FD_STEP;
            let (t, _, l) = eval(&shifted);
            let up = t.value(l).get(0, 0);
            shifted[k].data_mut()[idx] -= 2.0 * FD_STEP;
            let (t, _, l) = eval(&shifted);
            let down = t.value(l).get(0, 0);
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[idx], numeric, 1e-3));
        }
    }
    worst
}

/// One-dimensional linear-Gaussian data: `x ~ N(0,1)`, `z = x + N(0,1)`,
/// `t ~ Bern(1/2)`, `y = z + t + N(0,1)`. Marginally `y | x, t ~ N(x + t, 2)`.
/// Returns the data and the mean exact log-likelihood `log p(y | x, t)`.
pub fn linear_gaussian_toy(n: usize, rng: &mut Rng) -> (Dataset, f64) {
    let (mut x, mut y, mut t) = (Vec::new(), Vec::new(), Vec::new());
    let mut ll = 0.0;
    for _ in 0..n {
        let xi = rng.standard_normal();
        let z = xi + rng.standard_normal();
        let ti = rng.bernoulli(0.5) as u8;
        let yi = z + f64::from(ti) + rng.standard_normal();
        ll += toy_log_lik(xi, f64::from(ti), yi);
        x.push(xi);
        y.push(yi);
        t.push(ti);
    }
    let data = Dataset::new(Tensor2::column_vector(&x), t, Tensor2::column_vector(&y)).unwrap();
    (data, ll / n as f64)
}

/// Closed-form `log p(y | x, t)` of [`linear_gaussian_toy`].
pub fn toy_log_lik(x: f64, t: f64, y: f64) -> f64 {
    let var = 2.0;
    -0.5 * (2.0 * PI * var).ln() - (y - x - t).powi(2) / (2.0 * var)
}

/// `−½ log 2π` per outcome coordinate, dropped from the training objective.
pub fn gaussian_constant(dim_y: usize) -> f64 {
    -0.5 * dim_y as f64 * (2.0 * PI).ln()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with the `n − 1` divisor.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// Standard error of the mean.
pub fn std_error(v: &[f64]) -> f64 {
    (variance(v) / v.len() as f64).sqrt()
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

type Build = fn(&mut Tape, &[Var]) -> Var;

/// Every differentiable tape primitive with its input shapes and sampling
/// ranges. Inputs to `log`, `sqrt` and divisors stay positive.
pub fn primitive_cases() -> Vec<(&'static str, Vec<(usize, usize, f64, f64)>, Build)> {
    const ANY: f64 = 2.0;
    vec![
        (
            "matmul",
            vec![(3, 4, -ANY, ANY), (4, 2, -ANY, ANY)],
            |t, v| t.matmul(v[0], v[1]),
        ),
        (
            "add_bias",
            vec![(3, 4, -ANY, ANY), (1, 4, -ANY, ANY)],
            |t, v| t.add_bias(v[0], v[1]),
        ),
        (
            "mul_col",
            vec![(3, 4, -ANY, ANY), (3, 1, -ANY, ANY)],
            |t, v| t.mul_col(v[0], v[1]),
        ),
        ("add", vec![(3, 2, -ANY, ANY), (3, 2, -ANY, ANY)], |t, v| {
            t.add(v[0], v[1])
        }),
        ("sub", vec![(3, 2, -ANY, ANY), (3, 2, -ANY, ANY)], |t, v| {
            t.sub(v[0], v[1])
        }),
        ("mul", vec![(3, 2, -ANY, ANY), (3, 2, -ANY, ANY)], |t, v| {
            t.mul(v[0], v[1])
        }),
        ("div", vec![(3, 2, -ANY, ANY), (3, 2, 0.5, ANY)], |t, v| {
            t.div(v[0], v[1])
        }),
        ("scale", vec![(3, 2, -ANY, ANY)], |t, v| t.scale(v[0], -1.7)),
        ("add_scalar", vec![(3, 2, -ANY, ANY)], |t, v| {
            t.add_scalar(v[0], 0.3)
        }),
        ("relu", vec![(4, 3, -ANY, ANY)], |t, v| t.relu(v[0])),
        ("leaky_relu", vec![(4, 3, -ANY, ANY)], |t, v| {
            t.leaky_relu(v[0], 0.5)
        }),
        ("softplus", vec![(4, 3, -ANY, ANY)], |t, v| t.softplus(v[0])),
        ("exp", vec![(3, 2, -ANY, ANY)], |t, v| t.exp(v[0])),
        ("log", vec![(3, 2, 0.1, ANY)], |t, v| t.log(v[0])),
        ("sqrt", vec![(3, 2, 0.1, ANY)], |t, v| t.sqrt(v[0])),
        ("square", vec![(3, 2, -ANY, ANY)], |t, v| t.square(v[0])),
        ("sum_all", vec![(3, 2, -ANY, ANY)], |t, v| t.sum_all(v[0])),
        ("row_sum", vec![(3, 4, -ANY, ANY)], |t, v| t.row_sum(v[0])),
        ("slice_cols", vec![(3, 5, -ANY, ANY)], |t, v| {
            t.slice_cols(v[0], 1, 4)
        }),
        (
            "concat_cols",
            vec![(3, 2, -ANY, ANY), (3, 1, -ANY, ANY)],
            |t, v| t.concat_cols(&[v[0], v[1]]),
        ),
        (
            "reparameterize",
            vec![(3, 2, -ANY, ANY), (3, 2, 0.1, ANY), (3, 2, -ANY, ANY)],
            |t, v| intact_vae::numerics::reparameterize_on_tape(t, v[0], v[1], v[2]),
        ),
        (
            "kl_rows",
            vec![
                (3, 2, -ANY, ANY),
                (3, 2, 0.1, ANY),
                (3, 2, -ANY, ANY),
                (3, 2, 0.1, ANY),
            ],
            |t, v| intact_vae::numerics::kl_rows_on_tape(t, v[0], v[1], v[2], v[3]),
        ),
    ]
}

/// Largest finite-difference error for each primitive.
pub fn primitive_grad_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(seed);
    primitive_cases()
        .into_iter()
        .map(|(name, shapes, build)| {
            let inputs: Vec<Tensor2> = shapes
                .iter()
                .map(|&(r, c, lo, hi)| uniform_tensor(&mut rng, r, c, lo, hi))
                .collect();
            (name, max_grad_error(&inputs, &mut rng, build))
        })
        .collect()
}

/// Finite-difference errors for parameters and inputs of small networks
/// (up to 3 layers, 16 units) with each hidden activation.
pub fn mlp_grad_errors(seed: u64) -> Vec<(String, f64)> {
    use intact_vae::numerics::{Activation, Layer, MlpParams, MlpVars};
    let mut rng = Rng::new(seed);
    let layouts: [&[usize]; 3] = [&[3, 2], &[3, 16, 2], &[4, 16, 8, 3]];
    let activations = [
        Activation::Relu,
        Activation::LeakyRelu(0.5),
        Activation::Softplus,
    ];
    let mut out = Vec::new();
    for sizes in layouts {
        for act in activations {
            let layers: Vec<Layer> = sizes
                .windows(2)
                .map(|w| Layer {
                    weight: uniform_tensor(&mut rng, w[0], w[1], -1.0, 1.0),
                    bias: uniform_tensor(&mut rng, 1, w[1], -0.5, 0.5),
                })
                .collect();
            let net = MlpParams::new(layers, act).unwrap();
            let mut inputs = vec![uniform_tensor(&mut rng, 5, sizes[0], -2.0, 2.0)];
            inputs.extend(net.tensors().into_iter().cloned());
            let n_layers = sizes.len() - 1;
            let err = max_grad_error(&inputs, &mut rng, |tape, vars| {
                let bound = MlpVars {
                    layers: (0..n_layers)
                        .map(|i| (vars[1 + 2 * i], vars[2 + 2 * i]))
                        .collect(),
                };
                net.forward_on_tape(tape, &bound, vars[0]).unwrap()
            });
            out.push((format!("{sizes:?} {act:?}"), err));
        }
    }
    out
}

/// `(closed-form KL, Monte Carlo estimate, its standard error)` for one pair
/// of random diagonal Gaussians.
pub fn kl_vs_monte_carlo(seed: u64, dim: usize, samples: usize) -> (f64, f64, f64) {
    use intact_vae::numerics::{kl_diag_gaussians, DiagonalGaussian};
    let mut rng = Rng::new(seed);
    let gaussian = |rng: &mut Rng| {
        let mean = (0..dim).map(|_| rng.uniform_open(-1.0, 1.0)).collect();
        let var = (0..dim).map(|_| rng.uniform_open(0.3, 2.0)).collect();
        DiagonalGaussian::new(mean, var).unwrap()
    };
    let q = gaussian(&mut rng);
    let p = gaussian(&mut rng);
    let closed = kl_diag_gaussians(&q, &p).unwrap();
    let draws: Vec<f64> = (0..samples)
        .map(|_| {
            let z = q.sample(&mut rng);
            q.log_density(&z).unwrap() - p.log_density(&z).unwrap()
        })
        .collect();
    (closed, mean(&draws), std_error(&draws))
}

/// Trapezoid integral of the 1-D density of `N(mean, var)` over `mean ± 8σ`.
pub fn density_mass(mean_: f64, var: f64, points: usize) -> f64 {
    use intact_vae::numerics::DiagonalGaussian;
    let g = DiagonalGaussian::new(vec![mean_], vec![var]).unwrap();
    let sd = var.sqrt();
    let (lo, hi) = (mean_ - 8.0 * sd, mean_ + 8.0 * sd);
    let h = (hi - lo) / (points - 1) as f64;
    let f = |i: usize| g.log_density(&[lo + i as f64 * h]).unwrap().exp();
    let inner: f64 = (1..points - 1).map(f).sum();
    h * (inner + 0.5 * (f(0) + f(points - 1)))
}

/// Trains the small preset on 1500 + 500 toy points (β = 1, default
/// learning rate and batch size). Returns the outcome and the mean exact
/// validation log-likelihood.
pub fn train_toy(
    seed: u64,
    max_epochs: usize,
    patience: usize,
) -> (intact_vae::training::TrainOutcome, f64) {
    use intact_vae::model::{HeadMode, ModelDims, NetPreset};
    use intact_vae::training::{init_model, train, TrainConfig};
    let mut rng = Rng::new(seed);
    let (tr, _) = linear_gaussian_toy(1500, &mut rng);
    let (va, oracle) = linear_gaussian_toy(500, &mut rng);
    let dims = ModelDims { x: 1, z: 1, y: 1 };
    let model = init_model(&mut rng, dims, NetPreset::Small, HeadMode::Shared, 1.0).unwrap();
    let cfg = TrainConfig {
        max_epochs,
        patience,
        net_preset: NetPreset::Small,
        seed,
        ..TrainConfig::default()
    };
    (train(&model, &tr, &va, &cfg, &mut rng).unwrap(), oracle)
}
