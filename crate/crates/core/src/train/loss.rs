use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cross-entropy on logits, evaluated with softplus for stability.
    CrossEntropy,
    #[default]
    Hinge,
    /// Least squares with targets 1 (real) and 0 (fake).
    Lsgan,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" | "cross_entropy" => Ok(LossKind::CrossEntropy),
            "hinge" => Ok(LossKind::Hinge),
            "lsgan" => Ok(LossKind::Lsgan),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

fn check_scores(tape: &Tape, v: Var, what: &str) -> Result<()> {
    let t = tape.value(v);
    if t.is_empty() {
        return Err(Error::Contract(format!("{what} scores are empty")));
    }
    if t.rank() > 2 || (t.rank() == 2 && t.shape()[1] != 1) {
        return dim_err(
            "loss",
            format!("{what} scores must be b or b x 1, got {:?}", t.shape()),
        );
    }
    Ok(())
}

/// `1 - x`
fn one_minus(tape: &mut Tape, x: Var) -> Var {
    let neg = tape.scale(x, -1.0);
    tape.add_scalar(neg, 1.0)
}

/// Batch-mean discriminator loss from raw scores (logits for cross-entropy).
pub fn loss_d(tape: &mut Tape, real: Var, fake: Var, kind: LossKind) -> Result<Var> {
    check_scores(tape, real, "real")?;
    check_scores(tape, fake, "fake")?;
    let (a, b) = match kind {
        LossKind::CrossEntropy => {
            // -log sigmoid(r) = softplus(-r); -log(1 - sigmoid(f)) = softplus(f)
            let nr = tape.scale(real, -1.0);
            (tape.softplus(nr), tape.softplus(fake))
        }
        LossKind::Hinge => {
            let r = one_minus(tape, real);
            let f = tape.add_scalar(fake, 1.0);
            (tape.relu(r), tape.relu(f))
        }
        LossKind::Lsgan => {
            let r = tape.add_scalar(real, -1.0);
            let r = tape.square(r);
            let f = tape.square(fake);
            (tape.scale(r, 0.5), tape.scale(f, 0.5))
        }
    };
    let ma = tape.mean(a)?;
    let mb = tape.mean(b)?;
    tape.add(ma, mb)
}

/// Batch-mean generator loss from raw discriminator scores on fakes.
pub fn loss_g(tape: &mut Tape, fake: Var, kind: LossKind) -> Result<Var> {
    check_scores(tape, fake, "fake")?;
    let per = match kind {
        LossKind::CrossEntropy => {
            let nf = tape.scale(fake, -1.0);
            tape.softplus(nf)
        }
        LossKind::Hinge => tape.scale(fake, -1.0),
        LossKind::Lsgan => {
            let f = tape.add_scalar(fake, -1.0);
            let f = tape.square(f);
            tape.scale(f, 0.5)
        }
    };
    tape.mean(per)
}

fn scores(tape: &mut Tape, values: &[f64]) -> Result<Var> {
    Ok(tape.constant(Tensor::new(vec![values.len()], values.to_vec())?))
}

pub fn loss_d_value(real: &[f64], fake: &[f64], kind: LossKind) -> Result<f64> {
    let mut tape = Tape::new();
    let r = scores(&mut tape, real)?;
    let f = scores(&mut tape, fake)?;
    let l = loss_d(&mut tape, r, f, kind)?;
    tape.value(l).item()
}

pub fn loss_g_value(fake: &[f64], kind: LossKind) -> Result<f64> {
    let mut tape = Tape::new();
    let f = scores(&mut tape, fake)?;
    let l = loss_g(&mut tape, f, kind)?;
    tape.value(l).item()
}
