//! Dense Fourier series on a centred box `[-R, R]^d` of frequency indices.
//!
//! Used as the working representation for exact polynomial convolution and
//! for Toeplitz kernels. Loops skip exact zeros so sparse data stays cheap.

use num_complex::Complex64;

use crate::lattice::sup_norm;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseSeries {
    d: usize,
    radius: i32,
    data: Vec<Complex64>,
}

impl DenseSeries {
    pub fn zeros(d: usize, radius: i32) -> Self {
        let side = (2 * radius + 1) as usize;
        Self {
            d,
            radius,
            data: vec![Complex64::new(0.0, 0.0); side.pow(d as u32)],
        }
    }

    /// The constant series `value · e^{i⟨0,θ⟩}`.
    pub fn constant(d: usize, value: Complex64) -> Self {
        let mut s = Self::zeros(d, 0);
        s.data[0] = value;
        s
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> i32 {
        self.radius
    }

    fn side(&self) -> usize {
        (2 * self.radius + 1) as usize
    }

    fn offset(&self, k: &[i32]) -> Option<usize> {
        let side = self.side();
        let mut idx = 0usize;
        for &ki in k {
            if ki.abs() > self.radius {
                return None;
            }
            idx = idx * side + (ki + self.radius) as usize;
        }
        Some(idx)
    }

    fn index_to_k(&self, mut idx: usize, out: &mut [i32]) {
        let side = self.side();
        for slot in out.iter_mut().rev() {
            *slot = (idx % side) as i32 - self.radius;
            idx /= side;
        }
    }

    pub fn get(&self, k: &[i32]) -> Complex64 {
        match self.offset(k) {
            Some(i) => self.data[i],
            None => Complex64::new(0.0, 0.0),
        }
    }

    /// Sets a coefficient; the series grows if `k` lies outside the box.
    pub fn set(&mut self, k: &[i32], value: Complex64) {
        let r = sup_norm(k);
        if r > self.radius {
            *self = self.regrown(r);
        }
        let i = self.offset(k).expect("index inside regrown box");
        self.data[i] = value;
    }

    pub fn add_at(&mut self, k: &[i32], value: Complex64) {
        let cur = self.get(k);
        self.set(k, cur + value);
    }

    fn regrown(&self, radius: i32) -> Self {
        let mut out = Self::zeros(self.d, radius);
        let mut k = vec![0; self.d];
        for (i, v) in self.data.iter().enumerate() {
            if *v != Complex64::new(0.0, 0.0) {
                self.index_to_k(i, &mut k);
                let j = out.offset(&k).expect("grown box contains old box");
                out.data[j] = *v;
            }
        }
        out
    }

    /// Nonzero entries in lexicographic order of `k`.
    pub fn nonzero(&self) -> Vec<(Vec<i32>, Complex64)> {
        let mut k = vec![0; self.d];
        let mut out = Vec::new();
        for (i, v) in self.data.iter().enumerate() {
            if *v != Complex64::new(0.0, 0.0) {
                self.index_to_k(i, &mut k);
                out.push((k.clone(), *v));
            }
        }
        out
    }

    /// Largest `|k|∞` carrying a nonzero coefficient (0 for the zero series).
    pub fn support_radius(&self) -> i32 {
        self.nonzero()
            .iter()
            .map(|(k, _)| sup_norm(k))
            .max()
            .unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == Complex64::new(0.0, 0.0))
    }

    pub fn scale(&mut self, factor: Complex64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn add_scaled(&mut self, other: &DenseSeries, factor: Complex64) {
        if other.radius > self.radius {
            *self = self.regrown(other.radius);
        }
        let mut k = vec![0; self.d];
        for (i, v) in other.data.iter().enumerate() {
            if *v != Complex64::new(0.0, 0.0) {
                other.index_to_k(i, &mut k);
                let j = self.offset(&k).expect("box contains other");
                self.data[j] += *v * factor;
            }
        }
    }

    /// Exact Cauchy product. Returns `None` when the product's box radius
    /// would exceed `cap`.
    pub fn convolve(&self, other: &DenseSeries, cap: i32) -> Option<DenseSeries> {
        let ra = self.support_radius();
        let rb = other.support_radius();
        let radius = ra + rb;
        if radius > cap {
            return None;
        }
        let mut out = DenseSeries::zeros(self.d, radius);
        let a = self.nonzero();
        let b = other.nonzero();
        let mut k = vec![0; self.d];
        for (ka, va) in &a {
            for (kb, vb) in &b {
                for i in 0..self.d {
                    k[i] = ka[i] + kb[i];
                }
                let j = out.offset(&k).expect("sum inside product box");
                out.data[j] += va * vb;
            }
        }
        Some(out)
    }

    /// Evaluates `Σ_k c_k e^{i⟨k,θ⟩}`.
    pub fn eval(&self, theta: &[f64]) -> Complex64 {
        self.nonzero()
            .iter()
            .map(|(k, v)| {
                let phase: f64 = k.iter().zip(theta).map(|(a, b)| *a as f64 * b).sum();
                v * Complex64::from_polar(1.0, phase)
            })
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}
