//! Dense complex polynomials and truncated power series.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{RefractError, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Polynomial with coefficients in ascending order of degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    coeffs: Vec<Complex64>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<Complex64>) -> Self {
        while coeffs.len() > 1 && coeffs.last() == Some(&ZERO) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(ZERO);
        }
        Self { coeffs }
    }

    pub fn constant(c: Complex64) -> Self {
        Self::new(vec![c])
    }

    pub fn one() -> Self {
        Self::constant(ONE)
    }

    /// `u - root`
    pub fn linear_root(root: Complex64) -> Self {
        Self::new(vec![-root, ONE])
    }

    /// `a + b u`
    pub fn linear(a: Complex64, b: Complex64) -> Self {
        Self::new(vec![a, b])
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn leading(&self) -> Complex64 {
        *self.coeffs.last().expect("non-empty")
    }

    pub fn eval(&self, u: Complex64) -> Complex64 {
        self.coeffs.iter().rev().fold(ZERO, |acc, c| acc * u + c)
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() == 1 {
            return Self::constant(ZERO);
        }
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| c * k as f64)
                .collect(),
        )
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn pow(&self, n: usize) -> Self {
        (0..n).fold(Self::one(), |acc, _| &acc * self)
    }

    /// Roots from the eigenvalues of the companion matrix.
    pub fn roots(&self) -> Result<Vec<Complex64>> {
        let n = self.degree();
        if n == 0 {
            return Ok(Vec::new());
        }
        let lead = self.leading();
        if lead.norm() == 0.0 {
            return Err(RefractError::RootSolver("zero leading coefficient".into()));
        }
        if n == 1 {
            return Ok(vec![-self.coeffs[0] / lead]);
        }
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        for j in 0..n {
            m[(0, j)] = -self.coeffs[n - 1 - j] / lead;
        }
        for i in 1..n {
            m[(i, i - 1)] = ONE;
        }
        let eig = nalgebra::linalg::Schur::new(m)
            .eigenvalues()
            .ok_or_else(|| RefractError::RootSolver("companion eigen-solve failed".into()))?;
        Ok(eig.iter().copied().collect())
    }
}

impl<'a> Mul<&'a Poly> for &'a Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        let mut out = vec![ZERO; self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }
}

impl<'a> Add<&'a Poly> for &'a Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        Poly::new(
            (0..n)
                .map(|k| {
                    self.coeffs.get(k).copied().unwrap_or(ZERO)
                        + rhs.coeffs.get(k).copied().unwrap_or(ZERO)
                })
                .collect(),
        )
    }
}

impl<'a> Sub<&'a Poly> for &'a Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        self + &(-rhs)
    }
}

impl<'a> Neg for &'a Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        Poly::new(self.coeffs.iter().map(|c| -c).collect())
    }
}

/// Power series in `t` truncated after `len` coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    coeffs: Vec<Complex64>,
}

impl Series {
    pub fn one(len: usize) -> Self {
        let mut coeffs = vec![ZERO; len];
        if len > 0 {
            coeffs[0] = ONE;
        }
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Multiply in place by `(a + t)`.
    pub fn mul_linear(&mut self, a: Complex64) {
        for k in (0..self.coeffs.len()).rev() {
            let prev = if k > 0 { self.coeffs[k - 1] } else { ZERO };
            self.coeffs[k] = self.coeffs[k] * a + prev;
        }
    }

    /// Multiply in place by `(a + t)^(-1)`; requires `a != 0`.
    pub fn div_linear(&mut self, a: Complex64) {
        // (a + t)^{-1} = sum_k (-1)^k t^k / a^{k+1}
        let inv = ONE / a;
        let mut geo = Vec::with_capacity(self.coeffs.len());
        let mut term = inv;
        for _ in 0..self.coeffs.len() {
            geo.push(term);
            term *= -inv;
        }
        let old = self.coeffs.clone();
        for k in 0..self.coeffs.len() {
            self.coeffs[k] = (0..=k).map(|i| old[i] * geo[k - i]).sum();
        }
    }
}
