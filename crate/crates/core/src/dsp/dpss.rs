//! Discrete prolate spheroidal (Slepian) sequences.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `k` unit-norm tapers of length `window_len`, most concentrated first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaperSet {
    tapers: Vec<Vec<f64>>,
    concentrations: Vec<f64>,
    time_bandwidth: f64,
}

impl TaperSet {
    pub fn tapers(&self) -> &[Vec<f64>] {
        &self.tapers
    }

    pub fn concentrations(&self) -> &[f64] {
        &self.concentrations
    }

    pub fn time_bandwidth(&self) -> f64 {
        self.time_bandwidth
    }

    pub fn window_len(&self) -> usize {
        self.tapers.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.tapers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tapers.is_empty()
    }
}

/// Computes the first `k` DPSS tapers as eigenvectors of the symmetric
/// tridiagonal matrix that commutes with the time-frequency concentration
/// operator.
///
/// Even-order tapers are flipped to have positive sum; odd-order tapers to
/// have a positive first significant sample.
pub fn dpss(window_len: usize, time_bandwidth: f64, k: usize) -> Result<TaperSet> {
    let n = window_len;
    if n < 2 {
        return Err(Error::invalid("taper window needs at least 2 samples"));
    }
    if !(time_bandwidth > 0.0 && time_bandwidth < n as f64 / 2.0) {
        return Err(Error::invalid(format!(
            "time-bandwidth {time_bandwidth} outside (0, {})",
            n as f64 / 2.0
        )));
    }
    let k_max = (2.0 * time_bandwidth).floor() as usize;
    if k == 0 || k > k_max {
        return Err(Error::invalid(format!(
            "taper count {k} outside [1, {k_max}] for NW = {time_bandwidth}"
        )));
    }

    let w = time_bandwidth / n as f64;
    let cos_w = (2.0 * PI * w).cos();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let c = (n as f64 - 1.0 - 2.0 * i as f64) / 2.0;
        m[(i, i)] = c * c * cos_w;
        if i + 1 < n {
            let e = (i + 1) as f64 * (n - i - 1) as f64 / 2.0;
            m[(i, i + 1)] = e;
            m[(i + 1, i)] = e;
        }
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let thresh = f64::EPSILON.sqrt();
    let mut tapers = Vec::with_capacity(k);
    for (rank, &col) in order.iter().take(k).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let flip = if rank % 2 == 0 {
            v.iter().sum::<f64>() < 0.0
        } else {
            v.iter().find(|x| x.abs() > thresh).is_some_and(|&x| x < 0.0)
        };
        if flip {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        tapers.push(v);
    }

    let mut concentrations: Vec<f64> = tapers.iter().map(|v| concentration(v, w)).collect();
    // numerically equal eigenvalues can swap order; keep the contract
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| concentrations[b].total_cmp(&concentrations[a]));
    let tapers = idx.iter().map(|&i| tapers[i].clone()).collect();
    concentrations = idx.iter().map(|&i| concentrations[i]).collect();

    Ok(TaperSet {
        tapers,
        concentrations,
        time_bandwidth,
    })
}

/// Energy fraction in `[-w, w]` cycles/sample: `vᵀ A v` with the sinc
/// kernel `A[m,n] = sin(2πw(m-n)) / (π(m-n))`.
fn concentration(v: &[f64], w: f64) -> f64 {
    let n = v.len();
    // A is Toeplitz; precompute one row.
    let kernel: Vec<f64> = (0..n)
        .map(|d| {
            if d == 0 {
                2.0 * w
            } else {
                (2.0 * PI * w * d as f64).sin() / (PI * d as f64)
            }
        })
        .collect();
    let mut total = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += kernel[i.abs_diff(j)] * v[j];
        }
        total += v[i] * row;
    }
    total
}
