//! Central finite-difference checks of tape gradients.
//!
//! The error metric is norm-wise: `‖g_tape − g_fd‖₂ / max(‖g_tape‖₂, ‖g_fd‖₂)`
//! over the checked coordinates, which stays meaningful when individual
//! gradient entries are near zero.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

/// Step used by every check in this crate.
pub const FD_STEP: f64 = 1e-5;

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>();
    let na = analytic.iter().map(|a| a * a).sum::<f64>();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>();
    let denom = libm::sqrt(na.max(nn));
    if denom == 0.0 {
        return libm::sqrt(diff);
    }
    libm::sqrt(diff) / denom
}

fn eval<F>(inputs: &[Tensor], f: &F) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.value(loss).item()
}

/// Compares the tape gradient of the scalar `f(inputs)` with central
/// differences of step `h`, returning the worst per-input relative error.
pub fn check_inputs<F>(inputs: &[Tensor], h: f64, f: F) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = match tape.grad(v) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; inputs[k].len()],
        };
        let mut numeric = vec![0.0; inputs[k].len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let x = inputs[k].data()[i];
            probe[k].data_mut()[i] = x + h;
            let up = eval(&probe, &f)?;
            probe[k].data_mut()[i] = x - h;
            let down = eval(&probe, &f)?;
            probe[k].data_mut()[i] = x;
            *slot = (up - down) / (2.0 * h);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Like [`check_inputs`] but differentiates with respect to parameters held
/// in `store`. Only the listed `(param, flat index)` coordinates are probed.
pub fn check_params<F>(
    store: &ParamStore,
    coords: &[(ParamId, usize)],
    h: f64,
    f: F,
) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, TensorError>,
{
    let mut base = store.clone();
    base.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, &base)?;
    tape.backward(loss)?;
    tape.accumulate_param_grads(&mut base);
    let analytic: Vec<f64> = coords.iter().map(|&(id, i)| base.grad(id).data()[i]).collect();
    let mut probe = base.clone();
    let mut numeric = Vec::with_capacity(coords.len());
    for &(id, i) in coords {
        let x = base.value(id).data()[i];
        let mut at = |v: f64| -> Result<f64, TensorError> {
            probe.value_mut(id).data_mut()[i] = v;
            let mut t = Tape::new();
            let l = f(&mut t, &probe)?;
            t.value(l).item()
        };
        let up = at(x + h)?;
        let down = at(x - h)?;
        probe.value_mut(id).data_mut()[i] = x;
        numeric.push((up - down) / (2.0 * h));
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Worst relative error observed for one operation.
#[derive(Clone, Debug, PartialEq)]
pub struct OpReport {
    pub op: &'static str,
    pub trials: usize,
    pub max_rel_err: f64,
}

fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("positive shape")
}

/// Values bounded away from zero so that kinks are never straddled.
fn away_from_zero<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let mut t = random_tensor(rng, shape, 0.1, 1.5);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// `Σ out ⊙ R` for a fixed random `R`, reducing any output to a scalar.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(out).shape().to_vec();
    let r = tape.constant(random_tensor(&mut rng, &shape, -1.0, 1.0));
    let prod = tape.mul(out, r)?;
    tape.sum(prod)
}

type Case = (Vec<Tensor>, u64);

/// Runs `trials` randomized finite-difference checks of every
/// differentiable tape operation.
pub fn op_suite(trials: usize, seed: u64) -> Result<Vec<OpReport>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    let mut run = |op: &'static str,
                   make: &mut dyn FnMut(&mut ChaCha8Rng) -> Case,
                   f: &dyn Fn(&mut Tape, &[Var], u64) -> Result<Var, TensorError>|
     -> Result<(), TensorError> {
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let (inputs, s) = make(&mut rng);
            let err = check_inputs(&inputs, FD_STEP, |t, v| f(t, v, s))?;
            worst = worst.max(err);
        }
        reports.push(OpReport { op, trials, max_rel_err: worst });
        Ok(())
    };
    fn dim<R: Rng>(rng: &mut R) -> usize {
        rng.gen_range(1..5)
    }

    run(
        "matmul",
        &mut |r| {
            let (m, k, n) = (dim(r), dim(r), dim(r));
            (vec![random_tensor(r, &[m, k], -1.0, 1.0), random_tensor(r, &[k, n], -1.0, 1.0)], r.gen())
        },
        &|t, v, s| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y, s)
        },
    )?;
    run(
        "matmul_nt",
        &mut |r| {
            let (m, k, n) = (dim(r), dim(r), dim(r));
            (vec![random_tensor(r, &[m, k], -1.0, 1.0), random_tensor(r, &[n, k], -1.0, 1.0)], r.gen())
        },
        &|t, v, s| {
            let y = t.matmul_nt(v[0], v[1])?;
            project(t, y, s)
        },
    )?;
    run(
        "add",
        &mut |r| {
            let sh = [dim(r), dim(r)];
            (vec![random_tensor(r, &sh, -1.0, 1.0), random_tensor(r, &sh, -1.0, 1.0)], r.gen())
        },
        &|t, v, s| {
            let y = t.add(v[0], v[1])?;
            project(t, y, s)
        },
    )?;
    run(
        "mul",
        &mut |r| {
            let sh = [dim(r), dim(r)];
            (vec![random_tensor(r, &sh, -1.0, 1.0), random_tensor(r, &sh, -1.0, 1.0)], r.gen())
        },
        &|t, v, s| {
            let y = t.mul(v[0], v[1])?;
            project(t, y, s)
        },
    )?;
    run(
        "linear",
        &mut |r| {
            let (m, i, o) = (dim(r), dim(r), dim(r));
            let x = random_tensor(r, &[m, i], -1.0, 1.0);
            (vec![x, random_tensor(r, &[o, i], -1.0, 1.0), random_tensor(r, &[o], -1.0, 1.0)], r.gen())
        },
        &|t, v, s| {
            let y = t.linear(v[0], v[1], v[2])?;
            project(t, y, s)
        },
    )?;
    run(
        "scale",
        &mut |r| (vec![{ let sh = [dim(r), dim(r)]; random_tensor(r, &sh, -1.0, 1.0) }], r.gen()),
        &|t, v, s| {
            let y = t.scale(v[0], -1.7)?;
            project(t, y, s)
        },
    )?;
    run(
        "sigmoid",
        &mut |r| (vec![{ let sh = [dim(r), dim(r)]; random_tensor(r, &sh, -3.0, 3.0) }], r.gen()),
        &|t, v, s| {
            let y = t.sigmoid(v[0])?;
            project(t, y, s)
        },
    )?;
    run(
        "tanh",
        &mut |r| (vec![{ let sh = [dim(r), dim(r)]; random_tensor(r, &sh, -2.0, 2.0) }], r.gen()),
        &|t, v, s| {
            let y = t.tanh(v[0])?;
            project(t, y, s)
        },
    )?;
    run(
        "relu",
        &mut |r| (vec![{ let sh = [dim(r), dim(r)]; away_from_zero(r, &sh) }], r.gen()),
        &|t, v, s| {
            let y = t.relu(v[0])?;
            project(t, y, s)
        },
    )?;
    run(
        "layer_norm",
        &mut |r| {
            let (m, d) = (dim(r), r.gen_range(2..6));
            let x = random_tensor(r, &[m, d], -2.0, 2.0);
            (vec![x, random_tensor(r, &[d], 0.5, 1.5), random_tensor(r, &[d], -0.5, 0.5)], r.gen())
        },
        &|t, v, s| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            project(t, y, s)
        },
    )?;
    run(
        "dropout",
        &mut |r| (vec![{ let sh = [dim(r), dim(r)]; random_tensor(r, &sh, -1.0, 1.0) }], r.gen()),
        &|t, v, s| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(s ^ 0x5eed);
            let y = t.dropout(v[0], 0.3, true, &mut mask_rng)?;
            project(t, y, s)
        },
    )?;
    run(
        "causal_softmax_rows",
        &mut |r| {
            let n = dim(r);
            (vec![random_tensor(r, &[n, n], -2.0, 2.0)], r.gen())
        },
        &|t, v, s| {
            let y = t.causal_softmax_rows(v[0])?;
            project(t, y, s)
        },
    )?;
    run(
        "conv2d",
        &mut |r| {
            let (ci, co) = (r.gen_range(1..3), r.gen_range(1..3));
            let (h, w) = (r.gen_range(3..6), r.gen_range(3..6));
            let k = r.gen_range(1..4);
            let x = random_tensor(r, &[ci, h, w], -1.0, 1.0);
            let kern = random_tensor(r, &[co, ci, k, k], -1.0, 1.0);
            (vec![x, kern, random_tensor(r, &[co], -1.0, 1.0)], r.gen())
        },
        &|t, v, s| {
            let stride = 1 + (s % 2) as usize;
            let pad = ((s >> 1) % 2) as usize;
            let y = t.conv2d(v[0], v[1], v[2], stride, pad)?;
            project(t, y, s)
        },
    )?;
    run(
        "conv2d_batched",
        &mut |r| {
            let n = r.gen_range(1..4);
            let x = random_tensor(r, &[n, 2, 4, 4], -1.0, 1.0);
            let kern = random_tensor(r, &[3, 2, 3, 3], -1.0, 1.0);
            (vec![x, kern, random_tensor(r, &[3], -1.0, 1.0)], r.gen())
        },
        &|t, v, s| {
            let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
            project(t, y, s)
        },
    )?;
    run(
        "reshape",
        &mut |r| (vec![{ let sh = [2, dim(r) * 3]; random_tensor(r, &sh, -1.0, 1.0) }], r.gen()),
        &|t, v, s| {
            let n = t.value(v[0]).len();
            let y = t.reshape(v[0], &[3, n / 3])?;
            project(t, y, s)
        },
    )?;
    run(
        "slice2d",
        &mut |r| (vec![random_tensor(r, &[4, 5], -1.0, 1.0)], r.gen()),
        &|t, v, s| {
            let (r0, c0) = ((s % 2) as usize, ((s >> 1) % 3) as usize);
            let y = t.slice2d(v[0], r0, 2, c0, 2)?;
            project(t, y, s)
        },
    )?;
    run(
        "concat_rows",
        &mut |r| {
            let c = dim(r);
            let a = { let sh = [dim(r), c]; random_tensor(r, &sh, -1.0, 1.0) };
            (vec![a, { let sh = [dim(r), c]; random_tensor(r, &sh, -1.0, 1.0) }], r.gen())
        },
        &|t, v, s| {
            let y = t.concat_rows(&[v[0], v[1], v[0]])?;
            project(t, y, s)
        },
    )?;
    run(
        "concat_cols",
        &mut |r| {
            let m = dim(r);
            let a = { let sh = [m, dim(r)]; random_tensor(r, &sh, -1.0, 1.0) };
            (vec![a, { let sh = [m, dim(r)]; random_tensor(r, &sh, -1.0, 1.0) }], r.gen())
        },
        &|t, v, s| {
            let y = t.concat_cols(&[v[1], v[0]])?;
            project(t, y, s)
        },
    )?;
    run(
        "gather_rows",
        &mut |r| (vec![{ let sh = [3, dim(r)]; random_tensor(r, &sh, -1.0, 1.0) }], r.gen()),
        &|t, v, s| {
            let idx = [(s % 3) as usize, 2, 0, (s % 3) as usize];
            let y = t.gather_rows(v[0], &idx)?;
            project(t, y, s)
        },
    )?;
    run(
        "sum",
        &mut |r| (vec![{ let sh = [dim(r), dim(r)]; random_tensor(r, &sh, -1.0, 1.0) }], r.gen()),
        &|t, v, _| t.sum(v[0]),
    )?;
    run(
        "cross_entropy",
        &mut |r| (vec![{ let sh = [dim(r), 7]; random_tensor(r, &sh, -2.0, 2.0) }], r.gen()),
        &|t, v, s| {
            let rows = t.value(v[0]).shape()[0];
            let targets: Vec<usize> = (0..rows).map(|i| (s as usize + 3 * i) % 7).collect();
            let weights: Vec<f64> = (0..rows).map(|i| 0.5 + i as f64 * 0.25).collect();
            t.cross_entropy(v[0], &targets, &weights)
        },
    )?;
    run(
        "bce_causal",
        &mut |r| {
            let n = dim(r);
            (vec![random_tensor(r, &[n, n], 0.05, 0.95)], r.gen())
        },
        &|t, v, s| {
            let n = t.value(v[0]).shape()[0];
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let e = (0..n * n).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect();
            let target = Tensor::new(&[n, n], e)?;
            t.bce_causal(v[0], &target)
        },
    )?;
    run(
        "sigmoid_bce_composite",
        &mut |r| {
            let n = dim(r);
            (vec![random_tensor(r, &[n, n], -3.0, 3.0)], r.gen())
        },
        &|t, v, s| {
            let n = t.value(v[0]).shape()[0];
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let e = (0..n * n).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect();
            let target = Tensor::new(&[n, n], e)?;
            let a = t.sigmoid(v[0])?;
            t.bce_causal(a, &target)
        },
    )?;
    Ok(reports)
}
