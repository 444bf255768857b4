//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::init::gaussian;
use crate::rng::{derive_seed, rng};
use crate::{ParamSet, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of `|g_ad − g_fd| / max(|g_ad|, |g_fd|, 1e−8)`
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    /// Autodiff and finite-difference values at the worst coordinate.
    pub worst_autodiff: f64,
    pub worst_numeric: f64,
    pub coordinates: usize,
}

/// Default denominator floor of [`relative_error`].
pub const DEFAULT_FLOOR: f64 = 1e-8;

/// `|a − n| / max(|a|, |n|, floor)`: relative for ordinary gradients, absolute
/// (scaled by `1/floor`) for gradients near zero.
pub fn relative_error(autodiff: f64, numeric: f64, floor: f64) -> f64 {
    (autodiff - numeric).abs() / autodiff.abs().max(numeric.abs()).max(floor)
}

/// Compares autodiff gradients of `loss` against `(f(θ+h) − f(θ−h)) / 2h`.
///
/// `max_coords` caps how many coordinates of each parameter are probed;
/// probed indices are spread evenly over the parameter. Gradients already
/// stored in `params` are left untouched.
pub fn grad_check<F>(params: &mut ParamSet, h: f64, max_coords: Option<usize>, loss: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &ParamSet) -> Result<Var<'t>>,
{
    grad_check_with_floor(params, h, max_coords, DEFAULT_FLOOR, loss)
}

/// [`grad_check`] with an explicit relative-error floor.
pub fn grad_check_with_floor<F>(
    params: &mut ParamSet,
    h: f64,
    max_coords: Option<usize>,
    floor: f64,
    loss: F,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &ParamSet) -> Result<Var<'t>>,
{
    let saved_grads: Vec<_> = params.iter().map(|p| p.grad.clone()).collect();
    params.zero_grad();
    {
        let tape = Tape::new();
        let l = loss(&tape, params)?;
        tape.backward(l)?.accumulate_into(params)?;
    }
    let analytic: Vec<_> = params.iter().map(|p| p.grad.clone()).collect();
    for (p, g) in params.iter_mut().zip(saved_grads) {
        p.grad = g;
    }

    let eval = |params: &ParamSet| -> Result<f64> {
        let tape = Tape::new();
        Ok(loss(&tape, params)?.item())
    };

    let mut report =
        GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_autodiff: 0.0,
        worst_numeric: 0.0,
        coordinates: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for (id, grad) in ids.into_iter().zip(analytic) {
        let n = params.get(id).value.len();
        let take = max_coords.unwrap_or(n).min(n).max(1);
        for j in 0..take {
            let i = j * n / take;
            let original = params.get(id).value.data()[i];
            params.get_mut(id).value.data_mut()[i] = original + h;
            let plus = eval(params)?;
            params.get_mut(id).value.data_mut()[i] = original - h;
            let minus = eval(params)?;
            params.get_mut(id).value.data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grad.data()[i], numeric, floor);
            report.coordinates += 1;
            if err > report.max_rel_error || report.coordinates == 1 {
                report.max_rel_error = err;
                report.worst_param = params.get(id).name.clone();
                report.worst_index = i;
                report.worst_autodiff = grad.data()[i];
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Finite-difference step used by the gradient suites.
pub const SUITE_STEP: f64 = 1e-5;

type Primitive = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>;

fn primitives() -> Vec<(&'static str, Vec<Vec<usize>>, Primitive)> {
    fn p(
        name: &'static str,
        shapes: &[&[usize]],
        f: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>> + 'static,
    ) -> (&'static str, Vec<Vec<usize>>, Primitive) {
        (name, shapes.iter().map(|s| s.to_vec()).collect(), Box::new(f))
    }
    vec![
        p("add", &[&[3, 4], &[3, 4]], |_, v| v[0].add(v[1])),
        p("sub", &[&[5], &[5]], |_, v| v[0].sub(v[1])),
        p("mul", &[&[2, 3], &[2, 3]], |_, v| v[0].mul(v[1])),
        p("scale", &[&[4]], |_, v| Ok(v[0].scale(-2.5).add_scalar(1.0))),
        p("add_row", &[&[4, 3], &[3]], |_, v| v[0].add_row(v[1])),
        p("sigmoid", &[&[6]], |_, v| Ok(v[0].sigmoid())),
        p("tanh", &[&[6]], |_, v| Ok(v[0].tanh())),
        p("stanh", &[&[6]], |_, v| Ok(v[0].stanh())),
        p("softmax", &[&[7]], |_, v| Ok(v[0].softmax())),
        p("log_softmax", &[&[7]], |_, v| Ok(v[0].log_softmax())),
        p("matvec", &[&[4, 5], &[5]], |_, v| v[0].matvec(v[1])),
        p("affine", &[&[5], &[3, 5], &[3]], |_, v| v[0].affine(v[1], v[2])),
        p("matmul", &[&[3, 4], &[4, 2]], |_, v| v[0].matmul(v[1], false, false)),
        p("matmul_tn", &[&[4, 3], &[4, 2]], |_, v| v[0].matmul(v[1], true, false)),
        p("matmul_nt", &[&[3, 4], &[2, 4]], |_, v| v[0].matmul(v[1], false, true)),
        p("matmul_tt", &[&[4, 3], &[2, 4]], |_, v| v[0].matmul(v[1], true, true)),
        p("dot", &[&[6], &[6]], |_, v| v[0].dot(v[1])),
        p("sum_squares", &[&[6]], |_, v| Ok(v[0].sum_squares())),
        p("conv2d", &[&[5, 5, 2], &[3, 3, 2, 3]], |_, v| v[0].conv2d(v[1], 1, 1)),
        p("conv2d_strided", &[&[6, 7, 2], &[3, 3, 2, 2]], |_, v| v[0].conv2d(v[1], 2, 1)),
        p("conv_transpose2d", &[&[3, 3, 2], &[4, 4, 3, 2]], |_, v| v[0].conv_transpose2d(v[1], 2, 1)),
        p("avg_pool", &[&[6, 6, 2]], |_, v| v[0].avg_pool2d(3, 3, 1)),
        p("avg_pool_2d", &[&[8, 8]], |_, v| v[0].avg_pool2d(4, 4, 4)),
        p("concat", &[&[3], &[2, 2]], |t, v| t.concat(&[v[0], v[1].flatten()])),
        p("reshape", &[&[2, 6]], |_, v| v[0].reshape(&[3, 4])),
        p("index", &[&[5]], |_, v| v[0].log_softmax().index(3)),
        p("column", &[&[4, 3]], |_, v| v[0].column(1)),
    ]
}

/// Names of the primitives covered by [`primitive_suite`].
pub fn primitive_names() -> Vec<&'static str> {
    primitives().into_iter().map(|(n, _, _)| n).collect()
}

/// Worst relative error per layer primitive over `trials` random instances.
/// Each instance checks `Σ probe ⊙ op(params)` with a random probe.
pub fn primitive_suite(trials: u64, seed: u64) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (k, (name, shapes, f)) in primitives().into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for trial in 0..trials {
            let s = derive_seed(derive_seed(seed, k as u64), trial);
            let mut r = rng(s);
            let mut ps = ParamSet::new();
            let ids: Vec<_> =
                shapes.iter().enumerate().map(|(i, sh)| ps.add(format!("p{i}"), gaussian(sh, 0.7, &mut r), true)).collect();
            let report = grad_check(&mut ps, SUITE_STEP, None, |tape, ps| {
                let vars: Vec<_> = ids.iter().map(|&id| tape.param(ps, id)).collect();
                let y = f(tape, &vars)?;
                let probe = gaussian(&y.shape(), 1.0, &mut rng(s ^ 0xABCD));
                y.mul_const(probe).map(Var::sum)
            })?;
            worst = worst.max(report.max_rel_error);
        }
        out.push((name.to_string(), worst));
    }
    Ok(out)
}
