//! Smooth scalar fields on the flat torus `R^d / (2 pi Z)^d` given by
//! truncated Fourier series.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// One term `cos * cos(k.x) + sin * sin(k.x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub k: Vec<i32>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FourierField {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<FourierTerm>,
}

impl FourierField {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, terms: Vec::new() }
    }

    /// `c + amplitude * cos(x_axis)`.
    pub fn cosine(c: f64, amplitude: f64, axis: usize, dim: usize) -> Self {
        let mut k = alloc::vec![0; dim];
        k[axis] = 1;
        Self { constant: c, terms: alloc::vec![FourierTerm { k, cos: amplitude, sin: 0.0 }] }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.cos == 0.0 && t.sin == 0.0)
    }

    #[inline]
    fn phase(k: &[i32], x: &[f64]) -> f64 {
        k.iter().zip(x).map(|(ki, xi)| *ki as f64 * xi).sum()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.constant;
        for t in &self.terms {
            let (s, c) = libm::sincos(Self::phase(&t.k, x));
            v += t.cos * c + t.sin * s;
        }
        v
    }

    /// Adds the gradient into `grad`.
    pub fn add_gradient(&self, x: &[f64], scale: f64, grad: &mut [f64]) {
        for t in &self.terms {
            let (s, c) = libm::sincos(Self::phase(&t.k, x));
            let d = scale * (t.sin * c - t.cos * s);
            for (g, ki) in grad.iter_mut().zip(&t.k) {
                *g += d * *ki as f64;
            }
        }
    }

    /// Value together with its gradient.
    pub fn value_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.add_gradient(x, 1.0, grad);
        self.value(x)
    }

    /// Upper bound on `|value - constant|`.
    pub fn amplitude(&self) -> f64 {
        self.terms.iter().map(|t| libm::fabs(t.cos) + libm::fabs(t.sin)).sum()
    }

    pub fn dimension_ok(&self, d: usize) -> bool {
        self.terms.iter().all(|t| t.k.len() == d)
    }
}
