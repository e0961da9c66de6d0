//! Regression-type restrictions `E[ρ(Y, X*, α) | X*] = 0` with data missing
//! at random given an always-observed `W`.
//!
//! At the observational level the model is the two-block system
//! `g1 = (δ/π(W)) ρ` given `X*` and `g2 = δ/π(W) − 1` given `W`. Its
//! efficient score has `a2 = −E[a1 ρ | W]`, and `a1` solves a fixed-point
//! equation whose map contracts at rate `β = sup(1 − π)` in the
//! `π^{-1/2}ρ` metric. [`contraction_solve_a1`] iterates that map.
//!
//! Exact computations run on the full-data law of `Z`, which includes `δ`.
//! Coordinates that would be missing when `δ = 0` only ever enter
//! multiplied by `δ`.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::efficient_score::ScoreField;
use crate::error::{Error, Result};
use crate::model::families::logistic;
use crate::model::{JacobianMode, LinearIndex, MomentBlock, MomentFunction, MomentModel, ParamPoint};
use crate::numerics::{self, Matrix, DEFAULT_PINV_TOL};
use crate::probability::{cmp_points, CondTable, DiscreteLaw};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// `Y` observed iff `δ = 1`; `W = (X*, V0)`, so `σ(X*) ⊆ σ(W)`.
    MissingResponse,
    /// Part of `X*` observed iff `δ = 1`; `W` contains `Y`.
    MissingRegressor,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::MissingResponse => "missing-response",
            Variant::MissingRegressor => "missing-regressor",
        }
    }
}

/// Selection probability `π(W) = P(δ = 1 | W)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    /// Known values keyed by the `W` coordinates.
    Known { table: Vec<(Vec<f64>, f64)> },
    /// `π(W, γ) = logistic(index(W)'γ)`; the index parameters are
    /// positions in `γ`.
    Logistic { index: LinearIndex, gamma0: Vec<f64> },
}

impl Selection {
    pub fn name(&self) -> &'static str {
        match self {
            Selection::Known { .. } => "known",
            Selection::Logistic { .. } => "logistic",
        }
    }

    pub fn gamma_dim(&self) -> usize {
        match self {
            Selection::Known { .. } => 0,
            Selection::Logistic { gamma0, .. } => gamma0.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Pi {
    w: Vec<usize>,
    selection: Selection,
}

impl Pi {
    fn gamma0(&self) -> &[f64] {
        match &self.selection {
            Selection::Known { .. } => &[],
            Selection::Logistic { gamma0, .. } => gamma0,
        }
    }

    fn value(&self, z: &[f64], gamma: &[f64]) -> Result<f64> {
        match &self.selection {
            Selection::Known { table } => {
                let key: Vec<f64> = self.w.iter().map(|&c| z[c]).collect();
                table
                    .iter()
                    .find(|(k, _)| cmp_points(k, &key).is_eq())
                    .map(|(_, p)| *p)
                    .ok_or_else(|| Error::contract(format!("no selection probability for W = {key:?}")))
            }
            Selection::Logistic { index, .. } => Ok(logistic(index.value(z, gamma))),
        }
    }

    /// `∂π/∂γ` (empty for known `π`).
    fn gradient(&self, z: &[f64], gamma: &[f64]) -> Vec<f64> {
        match &self.selection {
            Selection::Known { .. } => Vec::new(),
            Selection::Logistic { index, .. } => {
                let p = logistic(index.value(z, gamma));
                index
                    .gradient(z, gamma.len())
                    .into_iter()
                    .map(|g| g * p * (1.0 - p))
                    .collect()
            }
        }
    }
}

fn positive_pi(pi: f64) -> Result<f64> {
    if pi > 0.0 && pi.is_finite() {
        Ok(pi)
    } else {
        Err(Error::contract(format!("selection probability {pi} is not positive")))
    }
}

/// Splits `θ` into `(α, γ)`: with `alpha_dim = Some(k)` the first `k`
/// entries are `α` and the rest `γ`; otherwise `θ = α` and `γ = γ0`.
fn split<'a>(theta: &'a [f64], alpha_dim: Option<usize>, gamma0: &'a [f64]) -> (&'a [f64], &'a [f64]) {
    match alpha_dim {
        Some(k) => theta.split_at(k),
        None => (theta, gamma0),
    }
}

/// `g1 = (δ/π) ρ`.
#[derive(Debug, Clone)]
struct IpwResidual {
    rho: Arc<dyn MomentFunction>,
    delta: usize,
    pi: Arc<Pi>,
    alpha_dim: Option<usize>,
}

impl MomentFunction for IpwResidual {
    fn name(&self) -> String {
        format!("ipw[{}]", self.rho.name())
    }

    fn output_dim(&self) -> usize {
        self.rho.output_dim()
    }

    fn eval(&self, z: &[f64], theta: &[f64]) -> Result<DVector<f64>> {
        let (alpha, gamma) = split(theta, self.alpha_dim, self.pi.gamma0());
        if z[self.delta] == 0.0 {
            return Ok(DVector::zeros(self.output_dim()));
        }
        let pi = positive_pi(self.pi.value(z, gamma)?)?;
        Ok(self.rho.eval(z, alpha)? * (z[self.delta] / pi))
    }

    fn jacobian(&self, z: &[f64], theta: &[f64]) -> Option<Result<Matrix>> {
        let (alpha, gamma) = split(theta, self.alpha_dim, self.pi.gamma0());
        let jr = self.rho.jacobian(z, alpha)?;
        Some((|| {
            let p = self.output_dim();
            let mut out = Matrix::zeros(p, theta.len());
            if z[self.delta] == 0.0 {
                return Ok(out);
            }
            let pi = positive_pi(self.pi.value(z, gamma)?)?;
            let w = z[self.delta] / pi;
            out.columns_mut(0, alpha.len()).copy_from(&(jr? * w));
            if self.alpha_dim.is_some() {
                let rho = self.rho.eval(z, alpha)?;
                let dpi = self.pi.gradient(z, gamma);
                for (k, g) in dpi.iter().enumerate() {
                    let col = &rho * (-w * g / pi);
                    out.column_mut(alpha.len() + k).copy_from(&col);
                }
            }
            Ok(out)
        })())
    }

    fn coords(&self) -> Vec<usize> {
        let mut c = self.rho.coords();
        c.push(self.delta);
        c.extend(self.pi.w.iter().copied());
        c
    }

    fn max_param(&self) -> Option<usize> {
        match self.alpha_dim {
            Some(k) => Some(k + self.pi.gamma0().len() - 1),
            None => self.rho.max_param(),
        }
    }

    fn selection_probability(&self, z: &[f64], theta: &[f64]) -> Option<f64> {
        let (_, gamma) = split(theta, self.alpha_dim, self.pi.gamma0());
        self.pi.value(z, gamma).ok()
    }
}

/// `g2 = δ/π − 1`.
#[derive(Debug, Clone)]
struct SelectionResidual {
    delta: usize,
    pi: Arc<Pi>,
    alpha_dim: Option<usize>,
}

impl MomentFunction for SelectionResidual {
    fn name(&self) -> String {
        format!("selection[{}]", self.pi.selection.name())
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn eval(&self, z: &[f64], theta: &[f64]) -> Result<DVector<f64>> {
        let (_, gamma) = split(theta, self.alpha_dim, self.pi.gamma0());
        let pi = positive_pi(self.pi.value(z, gamma)?)?;
        Ok(DVector::from_element(1, z[self.delta] / pi - 1.0))
    }

    fn jacobian(&self, z: &[f64], theta: &[f64]) -> Option<Result<Matrix>> {
        let (alpha, gamma) = split(theta, self.alpha_dim, self.pi.gamma0());
        Some((|| {
            let mut out = Matrix::zeros(1, theta.len());
            if self.alpha_dim.is_some() {
                let pi = positive_pi(self.pi.value(z, gamma)?)?;
                for (k, g) in self.pi.gradient(z, gamma).iter().enumerate() {
                    out[(0, alpha.len() + k)] = -z[self.delta] * g / (pi * pi);
                }
            }
            Ok(out)
        })())
    }

    fn coords(&self) -> Vec<usize> {
        let mut c = vec![self.delta];
        c.extend(self.pi.w.iter().copied());
        c
    }

    fn max_param(&self) -> Option<usize> {
        self.alpha_dim.map(|k| k + self.pi.gamma0().len() - 1)
    }

    fn selection_probability(&self, z: &[f64], theta: &[f64]) -> Option<f64> {
        let (_, gamma) = split(theta, self.alpha_dim, self.pi.gamma0());
        self.pi.value(z, gamma).ok()
    }
}

#[derive(Debug, Clone)]
pub struct MissingDataSpec {
    pub variant: Variant,
    pub z_dim: usize,
    /// Coordinate of the non-missing indicator `δ ∈ {0, 1}`.
    pub delta: usize,
    pub x_star: Vec<usize>,
    pub w: Vec<usize>,
    /// `ρ(Y, X*, α)`; its parameter vector is `α`.
    pub rho: Arc<dyn MomentFunction>,
    pub selection: Selection,
    pub alpha0: Vec<f64>,
}

impl MissingDataSpec {
    pub fn validate(&self) -> Result<()> {
        let q = self.z_dim;
        let all = self.x_star.iter().chain(&self.w).chain(core::iter::once(&self.delta));
        if let Some(c) = all.clone().find(|&&c| c >= q) {
            return Err(Error::contract(format!("coordinate {c} out of range (q = {q})")));
        }
        if self.x_star.contains(&self.delta) || self.w.contains(&self.delta) {
            return Err(Error::contract("δ cannot be a conditioning coordinate"));
        }
        if let Some(c) = self.rho.coords().into_iter().find(|&c| c >= q) {
            return Err(Error::contract(format!("ρ reads coordinate {c} out of range (q = {q})")));
        }
        if self.variant == Variant::MissingResponse {
            if let Some(c) = self.x_star.iter().find(|c| !self.w.contains(c)) {
                return Err(Error::contract(format!(
                    "missing-response variant needs X* inside W; coordinate {c} is not in W"
                )));
            }
        }
        ParamPoint::new(self.alpha0.clone())?;
        if let Some(p) = self.rho.max_param() {
            if p >= self.alpha0.len() {
                return Err(Error::contract(format!(
                    "ρ reads parameter {p} but α has dimension {}",
                    self.alpha0.len()
                )));
            }
        }
        match &self.selection {
            Selection::Known { table } => {
                for (key, pi) in table {
                    if key.len() != self.w.len() {
                        return Err(Error::contract(format!(
                            "selection key {key:?} does not match the {} W coordinates",
                            self.w.len()
                        )));
                    }
                    if !(*pi > 0.0 && *pi <= 1.0) {
                        return Err(Error::contract(format!(
                            "selection probability {pi} at W = {key:?} is outside (0, 1]"
                        )));
                    }
                }
            }
            Selection::Logistic { index, gamma0 } => {
                if gamma0.is_empty() || gamma0.iter().any(|g| !g.is_finite()) {
                    return Err(Error::contract("γ0 must be a nonempty finite vector"));
                }
                if let Some(c) = index.coords().into_iter().find(|c| !self.w.contains(c)) {
                    return Err(Error::contract(format!(
                        "the selection index reads coordinate {c}, which is not in W"
                    )));
                }
                if let Some(p) = index.max_param() {
                    if p >= gamma0.len() {
                        return Err(Error::contract(format!(
                            "selection index reads γ[{p}] but γ has dimension {}",
                            gamma0.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn pi_map(&self) -> Arc<Pi> {
        Arc::new(Pi {
            w: self.w.clone(),
            selection: self.selection.clone(),
        })
    }

    /// `π(W)` at `z` (at `γ0` for the parametric family).
    pub fn pi(&self, z: &[f64]) -> Result<f64> {
        let p = self.pi_map();
        p.value(z, p.gamma0())
    }

    /// `∂π/∂γ` at `(z, γ0)`; empty for known `π`.
    pub fn pi_gradient(&self, z: &[f64]) -> Vec<f64> {
        let p = self.pi_map();
        p.gradient(z, p.gamma0())
    }

    /// The same spec with `π` replaced by its values on the `W` cells of
    /// `law`, declared as known.
    pub fn with_tabulated_selection(&self, law: &DiscreteLaw) -> Result<Self> {
        let part = law.partition(&self.w)?;
        let pi = self.pi_map();
        let mut table = Vec::with_capacity(part.len());
        for k in 0..part.len() {
            let i = (0..law.len()).find(|&i| part.cell_of(i) == k).expect("nonempty cell");
            table.push((part.values(k).to_vec(), pi.value(law.point(i), pi.gamma0())?));
        }
        let mut out = self.clone();
        out.selection = Selection::Known { table };
        Ok(out)
    }

    /// `β = sup(1 − π)` over the support of `law`.
    pub fn beta(&self, law: &DiscreteLaw) -> Result<f64> {
        let mut beta = 0.0_f64;
        for z in law.support() {
            beta = beta.max(1.0 - positive_pi(self.pi(z)?)?);
        }
        Ok(beta)
    }

    fn blocks(&self, alpha_dim: Option<usize>) -> Vec<MomentBlock> {
        let pi = self.pi_map();
        vec![
            MomentBlock {
                cond_vars: self.x_star.clone(),
                function: Arc::new(IpwResidual {
                    rho: self.rho.clone(),
                    delta: self.delta,
                    pi: pi.clone(),
                    alpha_dim,
                }),
            },
            MomentBlock {
                cond_vars: self.w.clone(),
                function: Arc::new(SelectionResidual {
                    delta: self.delta,
                    pi,
                    alpha_dim,
                }),
            },
        ]
    }

    fn jacobian_mode(&self) -> JacobianMode {
        let probe = vec![0.0; self.z_dim];
        if self.rho.jacobian(&probe, &self.alpha0).is_some() {
            JacobianMode::Analytic
        } else {
            JacobianMode::FiniteDifference
        }
    }
}

/// The two-block observational model in `θ = α`.
pub fn build_observational_model(spec: &MissingDataSpec) -> Result<MomentModel> {
    spec.validate()?;
    MomentModel::new(
        spec.blocks(None),
        spec.z_dim,
        ParamPoint::new(spec.alpha0.clone())?,
        spec.jacobian_mode(),
    )
}

/// The observational model in `θ = (α, γ)` for a parametric selection.
pub fn build_joint_model(spec: &MissingDataSpec) -> Result<MomentModel> {
    spec.validate()?;
    let Selection::Logistic { gamma0, .. } = &spec.selection else {
        return Err(Error::contract("the joint model needs a parametric selection probability"));
    };
    let mut theta0 = spec.alpha0.clone();
    theta0.extend_from_slice(gamma0);
    MomentModel::new(
        spec.blocks(Some(spec.alpha0.len())),
        spec.z_dim,
        ParamPoint::new(theta0)?,
        spec.jacobian_mode(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionTrace {
    /// `‖(a1^(m) − a1^(m−1)) ρ̃‖` with `ρ̃ = π^{-1/2} ρ`.
    pub increments: Vec<f64>,
    /// Ratios of consecutive increments.
    pub ratios: Vec<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `‖(a1 − D − T(a1)) ρ̃‖` at the returned `a1`.
    pub residual: f64,
}

/// Point values and cell tables the contraction needs at a given `α`.
struct Tables {
    rho: Vec<DVector<f64>>,
    pi: Vec<f64>,
    x_part: crate::probability::Partition,
    w_part: crate::probability::Partition,
    /// `−E(∂_α ρ' | X*) E^{-1}(ρρ'/π | X*)`.
    driving: Vec<Matrix>,
    /// `E^{-1}(ρρ'/π | X*)`.
    inv: Vec<Matrix>,
}

fn rho_jacobian_table(spec: &MissingDataSpec, law: &DiscreteLaw, alpha: &[f64]) -> Result<Vec<Matrix>> {
    let x_part = law.partition(&spec.x_star)?;
    let probe = law.point(0);
    if spec.rho.jacobian(probe, alpha).is_some() {
        let jacs = law
            .support()
            .iter()
            .map(|z| spec.rho.jacobian(z, alpha).expect("smooth ρ"))
            .collect::<Result<Vec<_>>>()?;
        x_part.average(law, |i| jacs[i].clone())
    } else {
        let p = spec.rho.output_dim();
        let n = x_part.len();
        let stacked = |a: &[f64]| -> Result<Matrix> {
            let vals = law
                .support()
                .iter()
                .map(|z| spec.rho.eval(z, a).map(numerics::column))
                .collect::<Result<Vec<_>>>()?;
            let means = x_part.average(law, |i| vals[i].clone())?;
            let mut col = Matrix::zeros(p * n, 1);
            for (k, m) in means.iter().enumerate() {
                col.view_mut((k * p, 0), (p, 1)).copy_from(m);
            }
            Ok(col)
        };
        let parts = numerics::fd_derivative_scaled(stacked, alpha)?;
        Ok((0..n)
            .map(|k| {
                let mut m = Matrix::zeros(p, alpha.len());
                for (c, part) in parts.iter().enumerate() {
                    for r in 0..p {
                        m[(r, c)] = part[(k * p + r, 0)];
                    }
                }
                m
            })
            .collect())
    }
}

fn tables(spec: &MissingDataSpec, law: &DiscreteLaw, alpha: &[f64]) -> Result<Tables> {
    spec.validate()?;
    if law.dim() != spec.z_dim {
        return Err(Error::contract(format!(
            "law has {} coordinates, spec expects {}",
            law.dim(),
            spec.z_dim
        )));
    }
    let rho = law
        .support()
        .iter()
        .map(|z| spec.rho.eval(z, alpha))
        .collect::<Result<Vec<_>>>()?;
    let pi = law
        .support()
        .iter()
        .map(|z| spec.pi(z).and_then(positive_pi))
        .collect::<Result<Vec<_>>>()?;
    let x_part = law.partition(&spec.x_star)?;
    let w_part = law.partition(&spec.w)?;
    let second = x_part.average(law, |i| &rho[i] * rho[i].transpose() / pi[i])?;
    let jac = rho_jacobian_table(spec, law, alpha)?;
    let mut inv = Vec::with_capacity(x_part.len());
    let mut driving = Vec::with_capacity(x_part.len());
    for (k, m) in second.iter().enumerate() {
        let m = numerics::symmetrize(m);
        let good = numerics::condition_number(&m) < 1.0 / DEFAULT_PINV_TOL;
        let mi = m.clone().try_inverse().filter(|_| good).ok_or_else(|| {
            Error::contract(format!(
                "E(ρρ'/π | X*) is singular on cell {:?}",
                x_part.values(k)
            ))
        })?;
        driving.push(-(jac[k].transpose() * &mi));
        inv.push(mi);
    }
    Ok(Tables { rho, pi, x_part, w_part, driving, inv })
}

/// `T(a1) = E{E[a1 ρ | W] (1−π)/π ρ' | X*} E^{-1}(ρρ'/π | X*)`.
fn apply_map(t: &Tables, law: &DiscreteLaw, a1: &[Matrix]) -> Result<Vec<Matrix>> {
    let a_rho: Vec<Matrix> = (0..law.len())
        .map(|i| numerics::column(&a1[t.x_part.cell_of(i)] * &t.rho[i]))
        .collect();
    let h = t.w_part.average(law, |i| a_rho[i].clone())?;
    let inner = t.x_part.average(law, |i| {
        &h[t.w_part.cell_of(i)] * t.rho[i].transpose() * ((1.0 - t.pi[i]) / t.pi[i])
    })?;
    Ok(inner.iter().zip(&t.inv).map(|(m, inv)| m * inv).collect())
}

fn tilde_norm(t: &Tables, law: &DiscreteLaw, diff: &[Matrix]) -> f64 {
    let mut s = 0.0;
    for i in 0..law.len() {
        let v = &diff[t.x_part.cell_of(i)] * &t.rho[i];
        s += law.prob(i) * v.norm_squared() / t.pi[i];
    }
    libm::sqrt(s)
}

/// Successive approximation `a1 ← D + T(a1)` started at `a1 = D`, stopped
/// once the `ρ̃`-weighted increment drops below `tol`.
pub fn contraction_solve_at(
    spec: &MissingDataSpec,
    law: &DiscreteLaw,
    alpha: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(CondTable<Matrix>, ContractionTrace)> {
    if !(tol > 0.0) {
        return Err(Error::contract(format!("tolerance must be positive, got {tol}")));
    }
    let beta = spec.beta(law)?;
    if !(beta < 1.0) {
        return Err(Error::contract("selection probabilities are not bounded away from zero"));
    }
    let t = tables(spec, law, alpha)?;
    let mut a = t.driving.clone();
    let mut trace = ContractionTrace {
        increments: Vec::new(),
        ratios: Vec::new(),
        beta,
        iterations: 0,
        converged: false,
        residual: f64::NAN,
    };
    for _ in 0..max_iter {
        let next: Vec<Matrix> = apply_map(&t, law, &a)?
            .into_iter()
            .zip(&t.driving)
            .map(|(m, d)| m + d)
            .collect();
        let diff: Vec<Matrix> = next.iter().zip(&a).map(|(x, y)| x - y).collect();
        let inc = tilde_norm(&t, law, &diff);
        if let Some(&prev) = trace.increments.last() {
            if prev > 0.0 {
                trace.ratios.push(inc / prev);
            }
        }
        trace.increments.push(inc);
        trace.iterations += 1;
        a = next;
        if inc < tol {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged {
        return Err(Error::Numerical {
            rows: a.first().map_or(0, |m| m.nrows()),
            cols: a.first().map_or(0, |m| m.ncols()),
            detail: format!(
                "contraction did not converge in {max_iter} iterations despite β = {beta}"
            ),
        });
    }
    let resid: Vec<Matrix> = apply_map(&t, law, &a)?
        .into_iter()
        .zip(&t.driving)
        .zip(&a)
        .map(|((m, d), x)| x - m - d)
        .collect();
    trace.residual = tilde_norm(&t, law, &resid);
    Ok((CondTable::new(t.x_part, a)?, trace))
}

pub fn contraction_solve_a1(
    spec: &MissingDataSpec,
    law: &DiscreteLaw,
    tol: f64,
    max_iter: usize,
) -> Result<(CondTable<Matrix>, ContractionTrace)> {
    contraction_solve_at(spec, law, &spec.alpha0, tol, max_iter)
}

/// `a2(W) = −E[a1(X*) ρ | W]`.
pub fn a2_from_a1(spec: &MissingDataSpec, law: &DiscreteLaw, a1: &CondTable<Matrix>) -> Result<CondTable<Matrix>> {
    a2_at(spec, law, &spec.alpha0, a1)
}

pub(crate) fn a2_at(spec: &MissingDataSpec, law: &DiscreteLaw, alpha: &[f64], a1: &CondTable<Matrix>) -> Result<CondTable<Matrix>> {
    let w_part = law.partition(&spec.w)?;
    let vals = law
        .support()
        .iter()
        .map(|z| {
            let a = a1.partition().find_point(z).map(|k| a1.entry(k)).ok_or_else(|| {
                Error::contract("a1 is not defined on every X* cell of the law")
            })?;
            Ok(-(a * spec.rho.eval(z, alpha)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let entries = w_part.average(law, |i| numerics::column(vals[i].clone()))?;
    CondTable::new(w_part, entries)
}

/// The efficient score field `(a1*, a2*)` of the observational model.
pub fn efficient_field(
    spec: &MissingDataSpec,
    law: &DiscreteLaw,
    tol: f64,
    max_iter: usize,
) -> Result<(ScoreField, ContractionTrace)> {
    let (a1, trace) = contraction_solve_a1(spec, law, tol, max_iter)?;
    let a2 = a2_from_a1(spec, law, &a1)?;
    Ok((ScoreField::new(vec![a1, a2])?, trace))
}

/// Efficient scores for `α` and `γ` when `π = π(W, γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricScores {
    /// Field for `S̄_α`; identical to the known-`π` field.
    pub alpha: ScoreField,
    /// Field for `S̄_γ`: zero on block 1 and `∂_γπ / (1 − π)` on block 2.
    pub gamma: ScoreField,
    pub trace: ContractionTrace,
}

pub fn parametric_selection_score(
    spec: &MissingDataSpec,
    law: &DiscreteLaw,
    tol: f64,
    max_iter: usize,
) -> Result<ParametricScores> {
    let Selection::Logistic { gamma0, .. } = &spec.selection else {
        return Err(Error::contract("parametric selection score needs a parametric π"));
    };
    let (alpha, trace) = efficient_field(spec, law, tol, max_iter)?;
    let dg = gamma0.len();
    let x_part = alpha.block(0).partition().clone();
    let p = spec.rho.output_dim();
    let zero1 = CondTable::new(x_part.clone(), vec![Matrix::zeros(dg, p); x_part.len()])?;
    let w_part = law.partition(&spec.w)?;
    let mut entries = Vec::with_capacity(w_part.len());
    for k in 0..w_part.len() {
        let i = (0..law.len()).find(|&i| w_part.cell_of(i) == k).expect("nonempty cell");
        let z = law.point(i);
        let pi = spec.pi(z)?;
        if !(pi < 1.0) {
            return Err(Error::contract(format!(
                "π = 1 on W cell {:?}; the γ score is undefined there",
                w_part.values(k)
            )));
        }
        let g = spec.pi_gradient(z);
        entries.push(Matrix::from_column_slice(dg, 1, &g) / (1.0 - pi));
    }
    let gamma = ScoreField::new(vec![zero1, CondTable::new(w_part, entries)?])?;
    Ok(ParametricScores { alpha, gamma, trace })
}
