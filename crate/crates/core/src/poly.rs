//! Sparse multivariate polynomials with complex coefficients.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::series::DenseSeries;

/// `Σ c_e z^e` over `nvars` variables, exponents stored as dense vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, Complex64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, value: Complex64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], value);
        p
    }

    pub fn variable(nvars: usize, index: usize) -> Self {
        let mut e = vec![0; nvars];
        e[index] = 1;
        let mut p = Self::zero(nvars);
        p.add_term(e, Complex64::new(1.0, 0.0));
        p
    }

    /// Linear form `Σ_l coeffs[l] z_l`.
    pub fn linear(coeffs: &[Complex64]) -> Self {
        let n = coeffs.len();
        let mut p = Self::zero(n);
        for (l, c) in coeffs.iter().enumerate() {
            let mut e = vec![0; n];
            e[l] = 1;
            p.add_term(e, *c);
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn add_term(&mut self, exponent: Vec<u32>, coeff: Complex64) {
        assert_eq!(exponent.len(), self.nvars, "exponent arity");
        let entry = self
            .terms
            .entry(exponent)
            .or_insert(Complex64::new(0.0, 0.0));
        *entry += coeff;
        if *entry == Complex64::new(0.0, 0.0) {
            self.terms.retain(|_, v| *v != Complex64::new(0.0, 0.0));
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &Complex64)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// Smallest total degree among the terms (0 for the zero polynomial).
    pub fn min_degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>())
            .min()
            .unwrap_or(0)
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), *c);
        }
        out
    }

    pub fn scale(&self, factor: Complex64) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (e, c) in &self.terms {
            out.add_term(e.clone(), c * factor);
        }
        out
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca * cb);
            }
        }
        out
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut out = Polynomial::constant(self.nvars, Complex64::new(1.0, 0.0));
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    pub fn derivative(&self, var: usize) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[var] > 0 {
                let mut e2 = e.clone();
                e2[var] -= 1;
                out.add_term(e2, c * e[var] as f64);
            }
        }
        out
    }

    pub fn eval(&self, z: &[Complex64]) -> Complex64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                e.iter()
                    .zip(z)
                    .fold(*c, |acc, (p, zi)| acc * zi.powu(*p))
            })
            .sum()
    }

    /// Conjugates the coefficients and swaps the first `n` exponents with
    /// the last `n`. For `p(y, ȳ)` this yields the polynomial `q` with
    /// `q(y, ȳ) = conj(p(y, ȳ))` when the second block is the conjugate of
    /// the first.
    pub fn conj_swapped(&self, n: usize) -> Polynomial {
        assert_eq!(self.nvars, 2 * n);
        let mut out = Polynomial::zero(self.nvars);
        for (e, c) in &self.terms {
            let mut e2 = Vec::with_capacity(2 * n);
            e2.extend_from_slice(&e[n..]);
            e2.extend_from_slice(&e[..n]);
            out.add_term(e2, c.conj());
        }
        out
    }

    /// Substitutes `x_i = forms[i]` (polynomials in a common set of
    /// variables) and expands.
    pub fn compose(&self, forms: &[Polynomial]) -> Polynomial {
        assert_eq!(forms.len(), self.nvars);
        let out_vars = forms.first().map(|f| f.nvars).unwrap_or(0);
        let mut powers: Vec<Vec<Polynomial>> = forms
            .iter()
            .map(|f| vec![Polynomial::constant(f.nvars, Complex64::new(1.0, 0.0))])
            .collect();
        let mut out = Polynomial::zero(out_vars);
        for (e, c) in &self.terms {
            let mut term = Polynomial::constant(out_vars, *c);
            for (i, &p) in e.iter().enumerate() {
                while powers[i].len() <= p as usize {
                    let next = powers[i].last().unwrap().mul(&forms[i]);
                    powers[i].push(next);
                }
                term = term.mul(&powers[i][p as usize]);
            }
            out = out.add(&term);
        }
        out
    }

    /// Evaluates the polynomial on Fourier series, returning the Fourier
    /// series of `p(z_1(θ), …, z_n(θ))` computed by exact convolution.
    /// `None` when an intermediate product exceeds the radius cap.
    pub fn eval_series(&self, z: &[DenseSeries], cap: i32) -> Option<DenseSeries> {
        assert_eq!(z.len(), self.nvars);
        let d = z.first().map(|s| s.dim()).unwrap_or(1);
        let mut powers: Vec<Vec<DenseSeries>> = z
            .iter()
            .map(|_| vec![DenseSeries::constant(d, Complex64::new(1.0, 0.0))])
            .collect();
        let mut out = DenseSeries::zeros(d, 0);
        for (e, c) in &self.terms {
            let mut term = DenseSeries::constant(d, *c);
            for (i, &p) in e.iter().enumerate() {
                if p == 0 {
                    continue;
                }
                while powers[i].len() <= p as usize {
                    let next = powers[i].last().unwrap().convolve(&z[i], cap)?;
                    powers[i].push(next);
                }
                term = term.convolve(&powers[i][p as usize], cap)?;
            }
            out.add_scaled(&term, Complex64::new(1.0, 0.0));
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn derivative_and_eval() {
        // p = 3 z0^2 z1 + i z1
        let mut p = Polynomial::zero(2);
        p.add_term(vec![2, 1], c(3.0, 0.0));
        p.add_term(vec![0, 1], c(0.0, 1.0));
        let z = [c(0.5, 0.2), c(-1.0, 0.3)];
        let dp = p.derivative(0);
        let expect = c(6.0, 0.0) * z[0] * z[1];
        assert!((dp.eval(&z) - expect).norm() < 1e-15);
        assert_eq!(p.degree(), 3);
        assert_eq!(p.min_degree(), 1);
    }

    #[test]
    fn conj_swapped_is_conjugate_on_real_section() {
        let mut p = Polynomial::zero(2);
        p.add_term(vec![2, 0], c(0.3, 1.1));
        p.add_term(vec![1, 1], c(-0.7, 0.2));
        p.add_term(vec![0, 3], c(0.0, -2.0));
        let q = p.conj_swapped(1);
        let y = c(0.4, -0.9);
        let z = [y, y.conj()];
        assert!((q.eval(&z) - p.eval(&z).conj()).norm() < 1e-14);
    }

    #[test]
    fn compose_matches_pointwise_substitution() {
        let mut p = Polynomial::zero(2);
        p.add_term(vec![3, 0], c(1.0, 0.0));
        p.add_term(vec![1, 1], c(0.5, 0.0));
        let forms = vec![
            Polynomial::linear(&[c(1.0, 0.0), c(0.0, 1.0)]),
            Polynomial::linear(&[c(0.5, -0.5), c(2.0, 0.0)]),
        ];
        let q = p.compose(&forms);
        let w = [c(0.3, 0.1), c(-0.2, 0.7)];
        let x: Vec<Complex64> = forms.iter().map(|f| f.eval(&w)).collect();
        assert!((q.eval(&w) - p.eval(&x)).norm() < 1e-14);
    }
}
