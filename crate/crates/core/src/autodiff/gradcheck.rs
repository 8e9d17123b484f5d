//! Central finite-difference checks of reverse-mode gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Array, Tape, Value};
use crate::error::Result;

/// Outcome of one gradient comparison.
#[derive(Clone, Debug, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub rel_err: f64,
    pub tol: f64,
    pub coords: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_err.is_finite() && self.rel_err <= self.tol
    }
}

/// Relative error `‖a − b‖ / max(‖a‖, ‖b‖)` with a tiny floor on the
/// denominator so two all-zero vectors compare equal.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-10)
}

/// Options for [`check_gradient`].
#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub step: f64,
    pub tol: f64,
    /// Upper bound on probed coordinates per input; larger inputs are
    /// subsampled without replacement.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-6,
            max_coords: 64,
            seed: 0,
        }
    }
}

/// Compares the reverse-mode gradient of the scalar built by `f` against
/// central differences, over every input in `inputs`.
///
/// `f` is re-run from scratch on a fresh tape for every perturbation, so it
/// must be a deterministic function of its inputs.
pub fn check_gradient<F>(
    name: &str,
    inputs: &[Array<f64>],
    opts: CheckOptions,
    f: F,
) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Value<'t, f64>]) -> Result<Value<'t, f64>>,
{
    let eval = |xs: &[Array<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vals: Vec<_> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        Ok(f(&tape, &vals)?.item())
    };

    let analytic = {
        let tape = Tape::new();
        let vals: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let root = f(&tape, &vals)?;
        tape.gradient(root, &vals)?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut a = Vec::new();
    let mut n = Vec::new();
    let mut work = inputs.to_vec();
    for (i, x) in inputs.iter().enumerate() {
        let coords: Vec<usize> = if x.len() <= opts.max_coords {
            (0..x.len()).collect()
        } else {
            let mut c = index::sample(&mut rng, x.len(), opts.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        for j in coords {
            let orig = x.data()[j];
            work[i].data_mut()[j] = orig + opts.step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - opts.step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            n.push((plus - minus) / (2.0 * opts.step));
            a.push(analytic[i].data()[j]);
        }
    }
    Ok(GradCheck {
        name: name.to_string(),
        rel_err: relative_error(&a, &n),
        tol: opts.tol,
        coords: a.len(),
    })
}

/// Standard normal entries.
pub fn random_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Array::from_vec(shape, data).expect("shape")
}

/// Contracts a non-scalar output against a fixed random weighting so that the
/// whole Jacobian participates in the check.
fn contract_out<'t>(out: Value<'t, f64>, weights: &Array<f64>) -> Result<Value<'t, f64>> {
    Ok(out.mul(out.tape().constant(weights.clone()))?.sum())
}

/// Finite-difference check of every primitive's vector-Jacobian product on
/// small random shapes (at most 6 elements per axis), plus the
/// double-differentiation path used by the gradient penalty.
pub fn primitive_suite(seed: u64) -> Result<Vec<GradCheck>> {
    use super::ConvGeom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = CheckOptions {
        seed,
        ..CheckOptions::default()
    };
    let mut out = Vec::new();

    macro_rules! unary {
        ($name:expr, $shape:expr, $prep:expr, $f:expr) => {{
            let x: Array<f64> = $prep(random_array(&mut rng, &$shape));
            let probe_shape: Vec<usize> = {
                let tape = Tape::new();
                let v = tape.leaf(x.clone());
                let f: &dyn Fn(Value<'_, f64>) -> Result<Value<'_, f64>> = &$f;
                f(v)?.shape()
            };
            let w = random_array(&mut rng, &probe_shape);
            out.push(check_gradient($name, &[x], opts, |_, v| {
                let f: &dyn Fn(Value<'_, f64>) -> Result<Value<'_, f64>> = &$f;
                contract_out(f(v[0])?, &w)
            })?);
        }};
    }
    let id = |a: Array<f64>| a;
    let positive = |a: Array<f64>| a.map(|x| x.abs() + 0.5);
    let away_from_zero = |a: Array<f64>| a.map(|x| if x.abs() < 0.1 { x + 0.3 } else { x });

    unary!("scale", [4, 3], id, |x| Ok(x.scale(-1.7)));
    unary!("shift", [4, 3], id, |x| Ok(x.shift(0.3)));
    unary!("transpose", [4, 3], id, |x| x.transpose());
    unary!("softmax", [5, 4], id, |x| Ok(x.softmax()));
    unary!("log_softmax", [5, 4], id, |x| Ok(x.log_softmax()));
    unary!("log", [3, 4], positive, |x| Ok(x.log(1e-10)));
    unary!("exp", [3, 4], id, |x| Ok(x.exp()));
    unary!("sigmoid", [3, 4], id, |x| Ok(x.sigmoid()));
    unary!("log_sigmoid", [3, 4], id, |x| Ok(x.log_sigmoid()));
    unary!("relu", [3, 4], away_from_zero, |x| Ok(x.relu()));
    unary!("sqrt", [3, 4], positive, |x| Ok(x.sqrt()));
    unary!("smooth_gelu", [3, 4], id, |x| x.smooth_gelu());
    unary!("sum", [2, 3, 4], id, |x| Ok(x.sum()));
    unary!("mean", [2, 3, 4], id, |x| x.mean());
    unary!("sum_axis", [2, 3, 4], id, |x| x.sum_axis(1));
    unary!("mean_axis", [2, 3, 4], id, |x| x.mean_axis(0));
    unary!("expand_axis", [3, 4], id, |x| x.expand_axis(1, 2));
    unary!("squared_norm", [3, 4], id, |x| Ok(x.squared_norm()));
    unary!("slice", [6, 3], id, |x| x.slice(0, 1, 4));
    unary!("pad_slice", [3, 2], id, |x| x.pad_slice(0, 1, 6));
    unary!("gather_rows", [5, 3], id, |x| x.gather_rows(&[4, 0, 0, 2]));
    unary!("one_hot_pick", [4, 5], id, |x| {
        x.log_softmax().mul(x.tape().one_hot(&[1, 0, 4, 2], 5)?)
    });

    let binary: [(&str, [usize; 2], [usize; 2]); 5] = [
        ("add", [4, 3], [4, 3]),
        ("sub", [4, 3], [4, 3]),
        ("mul", [4, 3], [4, 3]),
        ("add_broadcast", [4, 3], [3, 0]),
        ("matmul", [4, 3], [3, 5]),
    ];
    for (name, sa, sb) in binary {
        let a = random_array(&mut rng, &sa);
        let b_shape: Vec<usize> = sb.iter().copied().filter(|&d| d > 0).collect();
        let b = random_array(&mut rng, &b_shape);
        fn f<'t>(name: &str, x: Value<'t, f64>, y: Value<'t, f64>) -> Result<Value<'t, f64>> {
            match name {
                "add" => x.add(y),
                "sub" => x.sub(y),
                "mul" => x.mul(y),
                "add_broadcast" => x.add_bias(y),
                _ => x.matmul(y),
            }
        }
        let probe = {
            let tape = Tape::new();
            f(name, tape.leaf(a.clone()), tape.leaf(b.clone()))?.shape()
        };
        let w = random_array(&mut rng, &probe);
        out.push(check_gradient(name, &[a, b], opts, |_, v| {
            contract_out(f(name, v[0], v[1])?, &w)
        })?);
    }

    // linear and concat take three inputs
    {
        let x = random_array(&mut rng, &[5, 3]);
        let w = random_array(&mut rng, &[3, 4]);
        let b = random_array(&mut rng, &[4]);
        let r = random_array(&mut rng, &[5, 4]);
        out.push(check_gradient("linear", &[x, w, b], opts, |_, v| {
            contract_out(v[0].linear(v[1], v[2])?, &r)
        })?);
    }
    {
        let a = random_array(&mut rng, &[2, 3]);
        let b = random_array(&mut rng, &[4, 3]);
        let r = random_array(&mut rng, &[6, 3]);
        out.push(check_gradient("concat", &[a, b], opts, |t, v| {
            contract_out(t.concat(&[v[0], v[1]], 0)?, &r)
        })?);
    }
    {
        let x = random_array(&mut rng, &[6, 3]);
        let scale = random_array(&mut rng, &[3]);
        let bias = random_array(&mut rng, &[3]);
        let r = random_array(&mut rng, &[6, 3]);
        out.push(check_gradient("batchnorm_time", &[x, scale, bias], opts, |_, v| {
            contract_out(v[0].batchnorm_time(v[1], v[2], 1e-5)?, &r)
        })?);
    }

    let geom = ConvGeom {
        kernel: 3,
        stride: 2,
        pad_left: 1,
        pad_right: 1,
    };
    {
        let x = random_array(&mut rng, &[6, 2]);
        let w = random_array(&mut rng, &[3, 2, 3]);
        let r = random_array(&mut rng, &[geom.out_len(6).unwrap(), 3]);
        out.push(check_gradient("conv1d", &[x, w], opts, |_, v| {
            contract_out(v[0].conv1d(v[1], geom)?, &r)
        })?);
    }
    {
        let t_out = geom.out_len(6).unwrap();
        let gy = random_array(&mut rng, &[t_out, 3]);
        let w = random_array(&mut rng, &[3, 2, 3]);
        let r = random_array(&mut rng, &[6, 2]);
        out.push(check_gradient("conv1d_input_grad", &[gy, w], opts, |_, v| {
            contract_out(v[0].conv1d_input_grad(v[1], geom, 6)?, &r)
        })?);
    }
    {
        let t_out = geom.out_len(6).unwrap();
        let x = random_array(&mut rng, &[6, 2]);
        let gy = random_array(&mut rng, &[t_out, 3]);
        let r = random_array(&mut rng, &[3, 2, 3]);
        out.push(check_gradient("conv1d_weight_grad", &[x, gy], opts, |_, v| {
            contract_out(v[0].conv1d_weight_grad(v[1], geom)?, &r)
        })?);
    }

    // ‖∇ₓ C_θ(x)‖² for a two-layer convolutional critic, differentiated
    // with respect to θ (and x) through the recorded input gradient.
    {
        let same = ConvGeom::same(3, 1);
        let x = random_array(&mut rng, &[5, 3]);
        let w1 = random_array(&mut rng, &[3, 3, 4]).map(|v| v * 0.5);
        let b1 = random_array(&mut rng, &[4]);
        let w2 = random_array(&mut rng, &[3, 4, 1]).map(|v| v * 0.5);
        let b2 = random_array(&mut rng, &[1]);
        out.push(check_gradient(
            "input_gradient_norm",
            &[x, w1, b1, w2, b2],
            CheckOptions { tol: 1e-4, ..opts },
            |t, v| {
                let h = v[0].conv1d(v[1], same)?.add_bias(v[2])?.smooth_gelu()?;
                let score = h.conv1d(v[3], same)?.add_bias(v[4])?.mean()?;
                let gx = t.input_gradient_graph(score, v[0])?;
                Ok(gx.squared_norm())
            },
        )?);
    }
    Ok(out)
}
