//! Built-in moment block families.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DVector;

use super::MomentFunction;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regressor {
    Const(f64),
    Coord(usize),
}

impl Regressor {
    fn value(&self, z: &[f64]) -> f64 {
        match *self {
            Regressor::Const(c) => c,
            Regressor::Coord(i) => z[i],
        }
    }
}

/// One summand `regressor · θ[param]` of a linear index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub regressor: Regressor,
    pub param: usize,
}

impl Term {
    pub fn coord(coord: usize, param: usize) -> Self {
        Self {
            regressor: Regressor::Coord(coord),
            param,
        }
    }

    pub fn intercept(param: usize) -> Self {
        Self {
            regressor: Regressor::Const(1.0),
            param,
        }
    }
}

/// `x'θ` assembled from terms; several terms may share a parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearIndex {
    pub terms: Vec<Term>,
}

impl LinearIndex {
    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    pub fn value(&self, z: &[f64], theta: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.regressor.value(z) * theta[t.param])
            .sum()
    }

    /// `∂(x'θ)/∂θ'` as a row of length `d`.
    pub fn gradient(&self, z: &[f64], d: usize) -> Vec<f64> {
        let mut g = alloc::vec![0.0; d];
        for t in &self.terms {
            g[t.param] += t.regressor.value(z);
        }
        g
    }

    pub fn max_param(&self) -> Option<usize> {
        self.terms.iter().map(|t| t.param).max()
    }

    pub fn coords(&self) -> Vec<usize> {
        self.terms
            .iter()
            .filter_map(|t| match t.regressor {
                Regressor::Coord(c) => Some(c),
                Regressor::Const(_) => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Identity,
    Exp,
    Logistic,
}

impl Link {
    pub fn name(&self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::Exp => "exp",
            Link::Logistic => "logistic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Link::Identity),
            "exp" => Some(Link::Exp),
            "logistic" => Some(Link::Logistic),
            _ => None,
        }
    }

    pub fn apply(&self, u: f64) -> f64 {
        match self {
            Link::Identity => u,
            Link::Exp => libm::exp(u),
            Link::Logistic => logistic(u),
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Exp => libm::exp(u),
            Link::Logistic => {
                let p = logistic(u);
                p * (1.0 - p)
            }
        }
    }
}

pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + libm::exp(-u))
    } else {
        let e = libm::exp(u);
        e / (1.0 + e)
    }
}

/// Separable residual `Y − m(x'θ)`; with the identity link this is the
/// linear mean-regression residual.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanResidual {
    pub response: usize,
    pub index: LinearIndex,
    pub link: Link,
}

impl MeanResidual {
    pub fn linear(response: usize, terms: Vec<Term>) -> Self {
        Self {
            response,
            index: LinearIndex::new(terms),
            link: Link::Identity,
        }
    }

    pub fn residual(&self, z: &[f64], theta: &[f64]) -> f64 {
        z[self.response] - self.link.apply(self.index.value(z, theta))
    }

    pub fn residual_gradient(&self, z: &[f64], theta: &[f64]) -> Vec<f64> {
        let u = self.index.value(z, theta);
        let scale = -self.link.derivative(u);
        self.index
            .gradient(z, theta.len())
            .into_iter()
            .map(|g| g * scale)
            .collect()
    }
}

impl MomentFunction for MeanResidual {
    fn name(&self) -> String {
        match self.link {
            Link::Identity => "linear".into(),
            other => format!("separable[{}]", other.name()),
        }
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn eval(&self, z: &[f64], theta: &[f64]) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, self.residual(z, theta)))
    }

    fn jacobian(&self, z: &[f64], theta: &[f64]) -> Option<Result<Matrix>> {
        let g = self.residual_gradient(z, theta);
        Some(Ok(Matrix::from_row_slice(1, g.len(), &g)))
    }

    fn coords(&self) -> Vec<usize> {
        let mut c = self.index.coords();
        c.push(self.response);
        c
    }

    fn max_param(&self) -> Option<usize> {
        self.index.max_param()
    }
}

/// Quantile residual `τ − 1{Y ≤ x'θ}`; not differentiable pointwise.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileResidual {
    pub response: usize,
    pub index: LinearIndex,
    pub tau: f64,
}

impl QuantileResidual {
    pub fn new(response: usize, terms: Vec<Term>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::contract(format!("quantile level {tau} outside (0, 1)")));
        }
        Ok(Self {
            response,
            index: LinearIndex::new(terms),
            tau,
        })
    }

    pub fn residual(&self, z: &[f64], theta: &[f64]) -> f64 {
        let below = z[self.response] <= self.index.value(z, theta);
        self.tau - if below { 1.0 } else { 0.0 }
    }
}

impl MomentFunction for QuantileResidual {
    fn name(&self) -> String {
        format!("quantile[{}]", self.tau)
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn eval(&self, z: &[f64], theta: &[f64]) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, self.residual(z, theta)))
    }

    fn coords(&self) -> Vec<usize> {
        let mut c = self.index.coords();
        c.push(self.response);
        c
    }

    fn max_param(&self) -> Option<usize> {
        self.index.max_param()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn links_and_gradients() {
        let m = MeanResidual {
            response: 0,
            index: LinearIndex::new(alloc::vec![Term::intercept(0), Term::coord(1, 1)]),
            link: Link::Exp,
        };
        let z = [2.0, 0.5];
        let th = [0.1, -0.4];
        let u: f64 = 0.1 - 0.2;
        assert!((m.residual(&z, &th) - (2.0 - u.exp())).abs() < 1e-15);
        let g = m.residual_gradient(&z, &th);
        assert!((g[0] + u.exp()).abs() < 1e-15);
        assert!((g[1] + 0.5 * u.exp()).abs() < 1e-15);
        assert!((logistic(0.0) - 0.5).abs() < 1e-15);
        assert!(logistic(-800.0) >= 0.0 && logistic(800.0) <= 1.0);
    }

    #[test]
    fn quantile_level_is_checked() {
        assert!(QuantileResidual::new(0, alloc::vec![], 0.0).is_err());
        let q = QuantileResidual::new(0, alloc::vec![Term::intercept(0)], 0.5).unwrap();
        assert_eq!(q.residual(&[-1.0], &[0.0]), -0.5);
        assert_eq!(q.residual(&[1.0], &[0.0]), 0.5);
        assert!(q.jacobian(&[1.0], &[0.0]).is_none());
    }
}
