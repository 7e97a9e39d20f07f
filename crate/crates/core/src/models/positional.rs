use super::{ModelError, Result};
use crate::tensor::Tensor;

/// `[max_positions, d]` table with `sin` on even and `cos` on odd columns,
/// wavelength `10000^(2i/d)` for column pair `i`.
pub fn sinusoidal_positional_encoding(max_positions: usize, d: usize) -> Result<Tensor> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(ModelError::Config(format!(
            "positional encoding needs an even positive width, got {d}"
        )));
    }
    if max_positions == 0 {
        return Err(ModelError::Config("max_positions must be positive".into()));
    }
    let mut data = vec![0.0; max_positions * d];
    for pos in 0..max_positions {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / d as f64);
            data[pos * d + 2 * i] = angle.sin();
            data[pos * d + 2 * i + 1] = angle.cos();
        }
    }
    Ok(Tensor::new(vec![max_positions, d], data)?)
}
