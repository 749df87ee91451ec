use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{QmriError, Result};

/// Unitary 2-D DFT on square power-of-two grids stored row-major.
#[derive(Clone)]
pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(QmriError::Shape(format!("grid size {n} is not a power of two")));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            scale: 1.0 / n as f64,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn forward(&self, grid: &mut [Complex64]) {
        self.run(grid, &self.forward);
    }

    pub fn inverse(&self, grid: &mut [Complex64]) {
        self.run(grid, &self.inverse);
    }

    fn run(&self, grid: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        assert_eq!(grid.len(), n * n, "grid length does not match {n}x{n}");
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(grid, &mut scratch);
        transpose_in_place(grid, n);
        plan.process_with_scratch(grid, &mut scratch);
        transpose_in_place(grid, n);
        for v in grid.iter_mut() {
            *v *= self.scale;
        }
    }
}

fn transpose_in_place(grid: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            grid.swap(i * n + j, j * n + i);
        }
    }
}

fn side(len: usize) -> Result<usize> {
    let n = (len as f64).sqrt().round() as usize;
    if n * n != len {
        return Err(QmriError::Shape(format!("image of {len} values is not square")));
    }
    Ok(n)
}

/// Unitary forward DFT of a row-major square image.
pub fn dft2(image: &[Complex64]) -> Result<Vec<Complex64>> {
    let fft = Fft2::new(side(image.len())?)?;
    let mut out = image.to_vec();
    fft.forward(&mut out);
    Ok(out)
}

/// Inverse of [`dft2`].
pub fn idft2(spectrum: &[Complex64]) -> Result<Vec<Complex64>> {
    let fft = Fft2::new(side(spectrum.len())?)?;
    let mut out = spectrum.to_vec();
    fft.inverse(&mut out);
    Ok(out)
}
