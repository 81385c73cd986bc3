//! Central finite-difference verification of tape gradients.

pub mod suite;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Step used for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, as a fraction of the largest
/// analytic gradient magnitude. Keeps coordinates whose true gradient is
/// (near) zero from turning roundoff into large relative errors.
pub const DEFAULT_FLOOR: f64 = 1e-4;

/// Settings for [`grad_check_with`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub floor: f64,
    /// Multiplies every analytic gradient before comparison. `1.0` in normal
    /// use; anything else simulates a broken backward pass.
    pub analytic_scale: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: DEFAULT_STEP,
            floor: DEFAULT_FLOOR,
            analytic_scale: 1.0,
        }
    }
}

/// Worst coordinate found by a gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckResult {
    pub max_rel_error: f64,
    pub input: usize,
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a - n| / max(floor, |a| + |n|)`, with `floor` at least `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor.max(1e-8))
}

/// Maximum relative error between analytic and central-difference
/// gradients of the scalar function `f` over every coordinate of `inputs`.
pub fn grad_check<F>(f: F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_with(f, inputs, GradCheck::default()).map(|r| r.max_rel_error)
}

pub fn grad_check_with<F>(f: F, inputs: &[Tensor], opts: GradCheck) -> Result<GradCheckResult>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.check_finite()?;
        if tape.value(out).len() != 1 {
            return Err(Error::Contract(format!(
                "grad_check needs a scalar function, got shape {:?}",
                tape.shape(out)
            )));
        }
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(inputs)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| grads.get_or_zeros(&tape, v).scale(opts.analytic_scale))
        .collect();

    let mut worst = GradCheckResult {
        max_rel_error: 0.0,
        input: 0,
        coordinate: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let scale = analytic.iter().map(Tensor::max_abs).fold(0.0, f64::max);
    let floor = opts.floor * scale;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, a) in analytic.iter().enumerate() {
        for j in 0..probe[i].len() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + opts.step;
            let (t_plus, _, o_plus) = eval(&probe)?;
            probe[i].data_mut()[j] = orig - opts.step;
            let (t_minus, _, o_minus) = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric =
                (t_plus.value(o_plus).item()? - t_minus.value(o_minus).item()?) / (2.0 * opts.step);
            let err = relative_error(a.data()[j], numeric, floor);
            if err > worst.max_rel_error {
                worst = GradCheckResult {
                    max_rel_error: err,
                    input: i,
                    coordinate: j,
                    analytic: a.data()[j],
                    numeric,
                };
            }
        }
    }
    Ok(worst)
}
