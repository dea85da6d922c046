//! Fixed sinusoidal embeddings for time and 2-D token position.

use crate::numerics::Tensor;

const TIME_MAX_PERIOD: f64 = 10_000.0;
const POSITION_MAX_PERIOD: f64 = 32.0;
/// Times in `[0, 1]` are stretched before embedding so low frequencies
/// still separate nearby steps.
const TIME_SCALE: f64 = 1000.0;

fn sinusoid(pos: f64, dim: usize, out: &mut [f64]) {
    let half = dim / 2;
    for k in 0..half {
        let freq = (-(TIME_MAX_PERIOD.ln()) * k as f64 / half as f64).exp();
        out[k] = (pos * freq).sin();
        out[half + k] = (pos * freq).cos();
    }
}

/// `[1, dim]` embedding of a time in `[0, 1]`.
pub fn time_embedding(t: f64, dim: usize) -> Tensor {
    let mut v = vec![0.0; dim];
    sinusoid(t * TIME_SCALE, dim, &mut v);
    Tensor::new(&[1, dim], v).expect("row vector")
}

/// `[rows * cols, dim]` position table. Each group of four dimensions holds
/// `sin`/`cos` of the row then of the column at one frequency, so any
/// contiguous slice of whole groups carries both axes.
pub fn grid_embedding(rows: usize, cols: usize, dim: usize) -> Tensor {
    let groups = dim / 4;
    let mut data = vec![0.0; rows * cols * dim];
    for i in 0..rows {
        for j in 0..cols {
            let base = (i * cols + j) * dim;
            for k in 0..groups {
                let freq = (-(POSITION_MAX_PERIOD.ln()) * k as f64 / groups as f64).exp();
                let o = base + 4 * k;
                data[o] = (i as f64 * freq).sin();
                data[o + 1] = (i as f64 * freq).cos();
                data[o + 2] = (j as f64 * freq).sin();
                data[o + 3] = (j as f64 * freq).cos();
            }
        }
    }
    Tensor::new(&[rows * cols, dim], data).expect("table size")
}
