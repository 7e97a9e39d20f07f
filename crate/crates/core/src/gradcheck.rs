//! Central finite-difference gradient checking against the tape.

use rand::seq::index::sample;
use rand::Rng;

use crate::tensor::{Result, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` over every
    /// checked coordinate.
    pub relative_error: f64,
    pub max_abs_error: f64,
    pub coordinates: usize,
}

/// Compares `backward` gradients of the scalar `f(inputs)` with central
/// differences of step `eps`.
///
/// `sample_per_input` limits how many coordinates of each input are
/// perturbed; `None` checks all of them.
pub fn check_gradients<F, R>(
    inputs: &[Tensor],
    f: F,
    eps: f64,
    sample_per_input: Option<usize>,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    R: Rng,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad_tensor(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        tape.value(loss).item()
    };

    let mut work = inputs.to_vec();
    let (mut diff2, mut a2, mut n2, mut max_abs, mut count) = (0.0, 0.0, 0.0, 0.0f64, 0);
    for k in 0..inputs.len() {
        let n = inputs[k].len();
        let coords: Vec<usize> = match sample_per_input {
            Some(s) if s < n => sample(rng, n, s).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[k].data()[i];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            max_abs = max_abs.max((a - numeric).abs());
            count += 1;
        }
    }
    let scale = a2.sqrt().max(n2.sqrt());
    let relative_error = if scale < 1e-12 { diff2.sqrt() } else { diff2.sqrt() / scale };
    Ok(GradCheckReport {
        relative_error,
        max_abs_error: max_abs,
        coordinates: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cubic_passes_and_a_wrong_gradient_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let cube = |t: &mut Tape, v: &[Var]| {
            let sq = t.mul(v[0], v[0])?;
            let c = t.mul(sq, v[0])?;
            Ok(t.sum(c))
        };
        let ok = check_gradients(std::slice::from_ref(&x), cube, 1e-4, None, &mut rng).unwrap();
        assert!(ok.relative_error < 1e-8);
        assert_eq!(ok.coordinates, 3);

        // Recorded graph and evaluated function disagree: must be caught.
        let mismatched = |t: &mut Tape, v: &[Var]| {
            let y = if t.requires_grad(v[0]) { t.scale(v[0], 2.0) } else { t.scale(v[0], 3.0) };
            Ok(t.sum(y))
        };
        let bad = check_gradients(&[x], mismatched, 1e-4, None, &mut rng).unwrap();
        assert!(bad.relative_error > 0.1);
    }
}
