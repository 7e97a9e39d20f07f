use super::{linear, ModelError, ParamSpec, ParamVars, Result};
use crate::tensor::{Tape, Var};

/// Weights of one GRU layer; gate blocks are ordered reset, update, candidate.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
}

impl GruVars {
    pub fn specs(prefix: &str, input: usize, hidden: usize) -> Vec<ParamSpec> {
        vec![
            ParamSpec::weight(format!("{prefix}.w_ih"), input, 3 * hidden),
            ParamSpec::weight(format!("{prefix}.w_hh"), hidden, 3 * hidden),
            ParamSpec::bias(format!("{prefix}.b_ih"), hidden, 3 * hidden),
            ParamSpec::bias(format!("{prefix}.b_hh"), hidden, 3 * hidden),
        ]
    }

    pub fn lookup(p: &ParamVars, prefix: &str) -> Result<Self> {
        let g = |n: &str| p.get(&format!("{prefix}.{n}"));
        Ok(Self {
            w_ih: g("w_ih")?,
            w_hh: g("w_hh")?,
            b_ih: g("b_ih")?,
            b_hh: g("b_hh")?,
        })
    }

    /// Input projection `x W_ih + b_ih` for any number of rows at once.
    pub fn project_input(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        linear(tape, x, self.w_ih, self.b_ih)
    }

    /// One step from an already projected input `gi [B, 3H]`.
    pub fn step(&self, tape: &mut Tape, gi: Var, h_prev: Var) -> Result<Var> {
        let h = tape.shape(h_prev)[1];
        if tape.shape(gi) != [tape.shape(h_prev)[0], 3 * h] {
            return Err(ModelError::Tensor(crate::tensor::TensorError::Shape {
                op: "gru_cell",
                lhs: tape.shape(gi).to_vec(),
                rhs: tape.shape(h_prev).to_vec(),
            }));
        }
        let gh = linear(tape, h_prev, self.w_hh, self.b_hh)?;
        let gate = |tape: &mut Tape, src: Var, k: usize| tape.slice(src, 1, k * h, h);
        let (i_r, i_z, i_n) = (gate(tape, gi, 0)?, gate(tape, gi, 1)?, gate(tape, gi, 2)?);
        let (h_r, h_z, h_n) = (gate(tape, gh, 0)?, gate(tape, gh, 1)?, gate(tape, gh, 2)?);
        let r = tape.add(i_r, h_r)?;
        let r = tape.sigmoid(r);
        let z = tape.add(i_z, h_z)?;
        let z = tape.sigmoid(z);
        let rn = tape.mul(r, h_n)?;
        let n = tape.add(i_n, rn)?;
        let n = tape.tanh(n);
        // (1 - z) * n + z * h_prev == n + z * (h_prev - n)
        let diff = tape.sub(h_prev, n)?;
        let zd = tape.mul(z, diff)?;
        Ok(tape.add(n, zd)?)
    }
}

/// `h_t = (1 - z) * n + z * h_prev` with sigmoid reset/update gates and a
/// tanh candidate.
pub fn gru_cell(tape: &mut Tape, p: &GruVars, x_t: Var, h_prev: Var) -> Result<Var> {
    let in_dim = tape.shape(p.w_ih)[0];
    if tape.shape(x_t).len() != 2 || tape.shape(x_t)[1] != in_dim {
        return Err(ModelError::Tensor(crate::tensor::TensorError::Shape {
            op: "gru_cell",
            lhs: tape.shape(x_t).to_vec(),
            rhs: tape.shape(p.w_ih).to_vec(),
        }));
    }
    let gi = p.project_input(tape, x_t)?;
    p.step(tape, gi, h_prev)
}
