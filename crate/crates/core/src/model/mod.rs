//! Moment models `E[g_j(Z, θ) | X^(j)] = 0`, j = 1..J.
//!
//! A [`MomentModel`] is a list of [`MomentBlock`]s, each a vector moment
//! function paired with the coordinates of `Z` it is conditioned on. The
//! conditional Jacobian `E[∂_θ' g_j | X^(j)]` is always the derivative of the
//! conditional expectation; in finite-difference mode it is computed that way
//! literally, which keeps nonsmooth blocks such as quantile residuals
//! well defined.

pub mod families;

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, DEFAULT_PINV_TOL};
use crate::probability::{CondTable, DiscreteLaw, Partition};

pub use families::{Link, LinearIndex, MeanResidual, QuantileResidual, Regressor, Term};

/// Residual allowed on `E[g_j(Z, θ0) | X^(j)]` when a law is attached.
pub const IDENTIFICATION_TOL: f64 = 1e-10;

/// A vector moment function `g(z, θ)`.
pub trait MomentFunction: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    fn output_dim(&self) -> usize;

    fn eval(&self, z: &[f64], theta: &[f64]) -> Result<DVector<f64>>;

    /// Pointwise `∂g/∂θ'` (`p×d`), or `None` for nonsmooth functions.
    fn jacobian(&self, _z: &[f64], _theta: &[f64]) -> Option<Result<Matrix>> {
        None
    }

    /// Coordinates of `z` the function reads.
    fn coords(&self) -> Vec<usize>;

    /// Largest parameter index the function reads.
    fn max_param(&self) -> Option<usize>;

    /// Selection probability `π` at `z`, for inverse-probability-weighted
    /// blocks.
    fn selection_probability(&self, _z: &[f64], _theta: &[f64]) -> Option<f64> {
        None
    }
}

/// Parameter vector `θ ∈ R^d`, `d ≥ 1`, finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint(Vec<f64>);

impl ParamPoint {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::contract("parameter dimension must be at least 1"));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::contract("parameter has non-finite entries"));
        }
        Ok(Self(theta))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl core::ops::Deref for ParamPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct MomentBlock {
    pub cond_vars: Vec<usize>,
    pub function: Arc<dyn MomentFunction>,
}

impl MomentBlock {
    pub fn new<F: MomentFunction + 'static>(function: F, cond_vars: Vec<usize>) -> Self {
        Self {
            cond_vars,
            function: Arc::new(function),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.function.output_dim()
    }

    pub fn is_smooth(&self, z: &[f64], theta: &[f64]) -> bool {
        self.function.jacobian(z, theta).is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone)]
pub struct MomentModel {
    blocks: Vec<MomentBlock>,
    z_dim: usize,
    theta0: ParamPoint,
    jacobian_mode: JacobianMode,
}

impl MomentModel {
    pub fn new(
        blocks: Vec<MomentBlock>,
        z_dim: usize,
        theta0: ParamPoint,
        jacobian_mode: JacobianMode,
    ) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::contract("a model needs at least one moment block"));
        }
        let d = theta0.dim();
        let probe_z = alloc::vec![0.0; z_dim];
        for (j, b) in blocks.iter().enumerate() {
            if b.output_dim() == 0 {
                return Err(Error::contract(format!("block {j} has output dimension 0")));
            }
            if let Some(&c) = b.cond_vars.iter().find(|&&c| c >= z_dim) {
                return Err(Error::contract(format!(
                    "block {j}: conditioning coordinate {c} out of range (q = {z_dim})"
                )));
            }
            if let Some(&c) = b.function.coords().iter().find(|&&c| c >= z_dim) {
                return Err(Error::contract(format!(
                    "block {j}: coordinate {c} out of range (q = {z_dim})"
                )));
            }
            if let Some(p) = b.function.max_param() {
                if p >= d {
                    return Err(Error::contract(format!(
                        "block {j}: parameter index {p} out of range (d = {d})"
                    )));
                }
            }
            if jacobian_mode == JacobianMode::Analytic
                && !b.is_smooth(&probe_z, theta0.as_slice())
            {
                return Err(Error::contract(format!(
                    "block {j} ({}) has no analytic derivative; use finite-difference mode",
                    b.function.name()
                )));
            }
        }
        Ok(Self {
            blocks,
            z_dim,
            theta0,
            jacobian_mode,
        })
    }

    /// Builds the model and checks that `θ0` satisfies every restriction
    /// under `law` to [`IDENTIFICATION_TOL`].
    pub fn with_law(
        blocks: Vec<MomentBlock>,
        z_dim: usize,
        theta0: ParamPoint,
        jacobian_mode: JacobianMode,
        law: &DiscreteLaw,
    ) -> Result<Self> {
        let model = Self::new(blocks, z_dim, theta0, jacobian_mode)?;
        model.check_restrictions(law)?;
        Ok(model)
    }

    /// Largest `|E[g_j(Z, θ0) | X^(j)]|` over blocks and cells; errors when
    /// it exceeds [`IDENTIFICATION_TOL`].
    pub fn check_restrictions(&self, law: &DiscreteLaw) -> Result<f64> {
        let worst = self.restriction_residual(law, &self.theta0)?;
        if worst > IDENTIFICATION_TOL {
            return Err(Error::contract(format!(
                "theta0 violates the conditional restrictions: residual {worst:e}"
            )));
        }
        Ok(worst)
    }

    pub fn restriction_residual(&self, law: &DiscreteLaw, theta: &[f64]) -> Result<f64> {
        self.ensure_law(law)?;
        let mut worst = 0.0_f64;
        for j in 0..self.num_blocks() {
            let means = self.conditional_mean(law, j, theta)?;
            for m in means.entries() {
                worst = m.iter().fold(worst, |a, v| a.max(v.abs()));
            }
        }
        Ok(worst)
    }

    pub fn ensure_law(&self, law: &DiscreteLaw) -> Result<()> {
        if law.dim() != self.z_dim {
            return Err(Error::contract(format!(
                "law has {} coordinates, model expects {}",
                law.dim(),
                self.z_dim
            )));
        }
        Ok(())
    }

    pub fn blocks(&self) -> &[MomentBlock] {
        &self.blocks
    }

    pub fn block(&self, j: usize) -> &MomentBlock {
        &self.blocks[j]
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn param_dim(&self) -> usize {
        self.theta0.dim()
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    pub fn theta0(&self) -> &ParamPoint {
        &self.theta0
    }

    pub fn jacobian_mode(&self) -> JacobianMode {
        self.jacobian_mode
    }

    pub fn with_jacobian_mode(&self, mode: JacobianMode) -> Result<Self> {
        Self::new(self.blocks.clone(), self.z_dim, self.theta0.clone(), mode)
    }

    pub fn with_theta0(&self, theta0: ParamPoint) -> Result<Self> {
        Self::new(self.blocks.clone(), self.z_dim, theta0, self.jacobian_mode)
    }

    /// Total moment dimension `p = Σ p_j`.
    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.output_dim()).sum()
    }

    /// Row offset of each block inside the stacked moment vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.blocks
            .iter()
            .map(|b| {
                let o = acc;
                acc += b.output_dim();
                o
            })
            .collect()
    }

    /// Union of all conditioning coordinates, sorted.
    pub fn union_cond_vars(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self
            .blocks
            .iter()
            .flat_map(|b| b.cond_vars.iter().copied())
            .collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn eval_block(&self, j: usize, z: &[f64], theta: &[f64]) -> Result<DVector<f64>> {
        let b = &self.blocks[j];
        let v = b.function.eval(z, theta).map_err(|e| attach_block(j, e))?;
        if v.len() != b.output_dim() {
            return Err(Error::Evaluation {
                block: j,
                message: format!("returned {} values, expected {}", v.len(), b.output_dim()),
            });
        }
        Ok(v)
    }

    /// `E[g_j(Z, θ) | X^(j)]` as `p_j×1` matrices.
    pub fn conditional_mean(
        &self,
        law: &DiscreteLaw,
        j: usize,
        theta: &[f64],
    ) -> Result<CondTable<Matrix>> {
        let partition = law.partition(&self.blocks[j].cond_vars)?;
        let values = law
            .support()
            .iter()
            .map(|z| self.eval_block(j, z, theta))
            .collect::<Result<Vec<_>>>()?;
        let entries = partition.average(law, |i| numerics::column(values[i].clone()))?;
        CondTable::new(partition, entries)
    }

    pub fn conditional_variance(
        &self,
        law: &DiscreteLaw,
        j: usize,
        theta: &[f64],
    ) -> Result<CondTable<Matrix>> {
        crate::probability::cond_variance(
            law,
            |z| self.eval_block(j, z, theta).map(numerics::column),
            &self.blocks[j].cond_vars,
        )
    }
}

fn attach_block(j: usize, e: Error) -> Error {
    match e {
        Error::Evaluation { message, .. } => Error::Evaluation { block: j, message },
        other => Error::Evaluation {
            block: j,
            message: format!("{other}"),
        },
    }
}

/// `g̲(z, θ) = (g_1', …, g_J')'`.
pub fn stack_moments(model: &MomentModel, z: &[f64], theta: &[f64]) -> Result<DVector<f64>> {
    if z.len() != model.z_dim() {
        return Err(Error::contract(format!(
            "point has {} coordinates, model expects {}",
            z.len(),
            model.z_dim()
        )));
    }
    let mut out = DVector::zeros(model.total_dim());
    let mut row = 0;
    for j in 0..model.num_blocks() {
        let v = model.eval_block(j, z, theta)?;
        out.rows_mut(row, v.len()).copy_from(&v);
        row += v.len();
    }
    Ok(out)
}

/// `E[∂_θ' g_j | X^(j)]` per cell, `p_j×d`.
pub fn block_conditional_jacobian(
    model: &MomentModel,
    law: &DiscreteLaw,
    j: usize,
    theta: &[f64],
) -> Result<CondTable<Matrix>> {
    match model.jacobian_mode() {
        JacobianMode::Analytic => analytic_jacobian(model, law, j, theta),
        JacobianMode::FiniteDifference => fd_jacobian(model, law, j, theta),
    }
}

pub(crate) fn analytic_jacobian(
    model: &MomentModel,
    law: &DiscreteLaw,
    j: usize,
    theta: &[f64],
) -> Result<CondTable<Matrix>> {
    let block = model.block(j);
    let partition = law.partition(&block.cond_vars)?;
    let jacs = law
        .support()
        .iter()
        .map(|z| match block.function.jacobian(z, theta) {
            Some(r) => r.map_err(|e| attach_block(j, e)),
            None => Err(Error::contract(format!(
                "block {j} has no analytic derivative"
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    let entries = partition.average(law, |i| jacs[i].clone())?;
    CondTable::new(partition, entries)
}

pub(crate) fn fd_jacobian(
    model: &MomentModel,
    law: &DiscreteLaw,
    j: usize,
    theta: &[f64],
) -> Result<CondTable<Matrix>> {
    let p = model.block(j).output_dim();
    let partition = law.partition(&model.block(j).cond_vars)?;
    let ncells = partition.len();
    // stack all cell means into one (p·cells)×1 column and difference it
    let stacked = |t: &[f64]| -> Result<Matrix> {
        let means = model.conditional_mean(law, j, t)?;
        let mut col = Matrix::zeros(p * ncells, 1);
        for (k, m) in means.entries().iter().enumerate() {
            col.view_mut((k * p, 0), (p, 1)).copy_from(m);
        }
        Ok(col)
    };
    let parts = numerics::fd_derivative_scaled(stacked, theta)?;
    let d = theta.len();
    let entries = (0..ncells)
        .map(|k| {
            let mut m = Matrix::zeros(p, d);
            for (c, part) in parts.iter().enumerate() {
                for r in 0..p {
                    m[(r, c)] = part[(k * p + r, 0)];
                }
            }
            m
        })
        .collect();
    CondTable::new(partition, entries)
}

/// Per-cell variance diagnostics of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDiagnostics {
    pub values: Vec<f64>,
    pub invertible: bool,
    pub condition_number: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagnostics {
    pub block: usize,
    /// `‖V(g_j | X^(j))‖_∞`: largest absolute entry over all cells.
    pub variance_sup_norm: f64,
    /// Largest `|g_j(z, θ0)|` over the support.
    pub moment_sup_norm: f64,
    pub cells: Vec<CellDiagnostics>,
    pub variance_invertible: bool,
    /// `E[J_j' V_j^- J_j]`, the single-block information.
    pub single_block_information: Matrix,
    pub single_block_information_nonsingular: bool,
    /// `E(g_j g_j' | X̲)` invertible on every cell of the union of the
    /// conditioning coordinates.
    pub joint_second_moment_invertible: bool,
    /// `E(b_j b_j' | X^(j))` invertible on every cell, where `b_j` is the
    /// residual of `g_j` after projecting on the other block given `X̲`.
    /// Only computed for two-block models.
    pub residual_second_moment_invertible: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionDiagnostics {
    /// `β = sup(1 − π)` over the support.
    pub beta: f64,
    pub bounded_weights: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub identification_residual: f64,
    pub blocks: Vec<BlockDiagnostics>,
    pub selection: Option<SelectionDiagnostics>,
}

impl DiagnosticsReport {
    pub fn all_pass(&self) -> bool {
        self.identification_residual <= IDENTIFICATION_TOL
            && self.blocks.iter().all(|b| {
                b.variance_invertible
                    && b.single_block_information_nonsingular
                    && b.joint_second_moment_invertible
                    && b.residual_second_moment_invertible.unwrap_or(true)
            })
            && self.selection.as_ref().map_or(true, |s| s.bounded_weights)
    }
}

fn is_invertible(m: &Matrix) -> (bool, f64) {
    let c = numerics::condition_number(m);
    (c.is_finite() && c < 1.0 / DEFAULT_PINV_TOL, c)
}

/// Bounded-moment, invertibility and nonsingularity checks. Failures are
/// reported as flags; only malformed inputs produce an error.
pub fn check_assumptions(
    model: &MomentModel,
    law: &DiscreteLaw,
    theta0: &[f64],
) -> Result<DiagnosticsReport> {
    model.ensure_law(law)?;
    let identification_residual = model.restriction_residual(law, theta0)?;
    let union = law.partition(&model.union_cond_vars())?;
    let values: Vec<Vec<DVector<f64>>> = (0..model.num_blocks())
        .map(|j| {
            law.support()
                .iter()
                .map(|z| model.eval_block(j, z, theta0))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let joint_second: Vec<Vec<Matrix>> = (0..model.num_blocks())
        .map(|j| union.average(law, |i| &values[j][i] * values[j][i].transpose()))
        .collect::<Result<_>>()?;

    let mut blocks = Vec::with_capacity(model.num_blocks());
    for j in 0..model.num_blocks() {
        let var = model.conditional_variance(law, j, theta0)?;
        let jac = block_conditional_jacobian(model, law, j, theta0)?;
        let mut cells = Vec::with_capacity(var.len());
        let mut sup = 0.0_f64;
        let mut info = Matrix::zeros(model.param_dim(), model.param_dim());
        for k in 0..var.len() {
            let v = var.entry(k);
            sup = v.iter().fold(sup, |a, x| a.max(x.abs()));
            let (invertible, condition_number) = is_invertible(v);
            cells.push(CellDiagnostics {
                values: var.partition().values(k).to_vec(),
                invertible,
                condition_number,
            });
            let vinv = numerics::pinv(v, DEFAULT_PINV_TOL)?;
            let jk = jac.entry(k);
            info += (jk.transpose() * vinv * jk) * var.partition().prob(k);
        }
        let info = numerics::symmetrize(&info);
        let moment_sup_norm = values[j]
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0_f64, |a, x| a.max(x.abs()));
        let residual_second_moment_invertible = if model.num_blocks() == 2 {
            Some(residual_block_invertible(
                model,
                law,
                &union,
                &values,
                &joint_second,
                j,
            )?)
        } else {
            None
        };
        blocks.push(BlockDiagnostics {
            block: j,
            variance_sup_norm: sup,
            moment_sup_norm,
            variance_invertible: cells.iter().all(|c| c.invertible),
            cells,
            single_block_information_nonsingular: is_invertible(&info).0,
            single_block_information: info,
            joint_second_moment_invertible: joint_second[j].iter().all(|m| is_invertible(m).0),
            residual_second_moment_invertible,
        });
    }

    let mut beta: Option<f64> = None;
    for z in law.support() {
        for b in model.blocks() {
            if let Some(pi) = b.function.selection_probability(z, theta0) {
                let gap = 1.0 - pi;
                beta = Some(beta.map_or(gap, |x| x.max(gap)));
            }
        }
    }
    let selection = beta.map(|beta| SelectionDiagnostics {
        beta,
        bounded_weights: beta < 1.0,
    });

    Ok(DiagnosticsReport {
        identification_residual,
        blocks,
        selection,
    })
}

fn residual_block_invertible(
    model: &MomentModel,
    law: &DiscreteLaw,
    union: &Partition,
    values: &[Vec<DVector<f64>>],
    joint_second: &[Vec<Matrix>],
    j: usize,
) -> Result<bool> {
    let other = 1 - j;
    let cross = union.average(law, |i| &values[j][i] * values[other][i].transpose())?;
    let mut coef = Vec::with_capacity(union.len());
    for k in 0..union.len() {
        coef.push(&cross[k] * numerics::pinv(&joint_second[other][k], DEFAULT_PINV_TOL)?);
    }
    let residual: Vec<Matrix> = (0..law.len())
        .map(|i| {
            let c = &coef[union.cell_of(i)];
            numerics::column(values[j][i].clone() - c * &values[other][i])
        })
        .collect();
    let own = law.partition(&model.block(j).cond_vars)?;
    let second = own.average(law, |i| &residual[i] * residual[i].transpose())?;
    Ok(second.iter().all(|m| is_invertible(m).0))
}

/// Every block quantity the solvers need, evaluated once on a law at a
/// fixed `θ`.
#[derive(Debug, Clone)]
pub struct ExactMoments {
    pub theta: Vec<f64>,
    pub partitions: Vec<Partition>,
    /// `g_j(z_i, θ)` per block, per support point.
    pub values: Vec<Vec<DVector<f64>>>,
    /// `E[∂_θ' g_j | X^(j)]`, `p_j×d` per cell.
    pub jacobians: Vec<Vec<Matrix>>,
    /// `V(g_j | X^(j))` per cell.
    pub variances: Vec<Vec<Matrix>>,
    pub variance_pinv: Vec<Vec<Matrix>>,
    /// Cells whose conditional variance is rank deficient, per block.
    pub singular_cells: Vec<Vec<usize>>,
}

impl ExactMoments {
    /// With `center`, each block is replaced by `g_j − E[g_j | X^(j)]` so
    /// the conditional restrictions hold exactly on `law` (used when `θ` is
    /// an estimate rather than the truth).
    pub fn new(model: &MomentModel, law: &DiscreteLaw, theta: &[f64], center: bool) -> Result<Self> {
        model.ensure_law(law)?;
        let nb = model.num_blocks();
        let mut partitions = Vec::with_capacity(nb);
        let mut values = Vec::with_capacity(nb);
        let mut jacobians = Vec::with_capacity(nb);
        let mut variances = Vec::with_capacity(nb);
        let mut variance_pinv = Vec::with_capacity(nb);
        let mut singular_cells = Vec::with_capacity(nb);
        for j in 0..nb {
            let part = law.partition(&model.block(j).cond_vars)?;
            let mut vals = law
                .support()
                .iter()
                .map(|z| model.eval_block(j, z, theta))
                .collect::<Result<Vec<_>>>()?;
            if center {
                let means = part.average(law, |i| numerics::column(vals[i].clone()))?;
                for (i, v) in vals.iter_mut().enumerate() {
                    *v -= means[part.cell_of(i)].column(0);
                }
            }
            let second = part.average(law, |i| &vals[i] * vals[i].transpose())?;
            let var: Vec<Matrix> = if center {
                second.into_iter().map(|m| numerics::symmetrize(&m)).collect()
            } else {
                let first = part.average(law, |i| numerics::column(vals[i].clone()))?;
                second
                    .into_iter()
                    .zip(first)
                    .map(|(s, m)| numerics::symmetrize(&(s - &m * m.transpose())))
                    .collect()
            };
            let mut pinvs = Vec::with_capacity(var.len());
            let mut singular = Vec::new();
            for (k, v) in var.iter().enumerate() {
                let (p, rank) = numerics::pinv_with_rank(v, DEFAULT_PINV_TOL)?;
                if rank < v.nrows() {
                    singular.push(k);
                }
                pinvs.push(p);
            }
            let jac = block_conditional_jacobian(model, law, j, theta)?.into_entries();
            partitions.push(part);
            values.push(vals);
            jacobians.push(jac);
            variances.push(var);
            variance_pinv.push(pinvs);
            singular_cells.push(singular);
        }
        Ok(Self {
            theta: theta.to_vec(),
            partitions,
            values,
            jacobians,
            variances,
            variance_pinv,
            singular_cells,
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.partitions.len()
    }

    pub fn param_dim(&self) -> usize {
        self.theta.len()
    }

    pub fn block_dim(&self, j: usize) -> usize {
        self.values[j].first().map_or(0, |v| v.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp;
    use alloc::vec;

    #[test]
    fn stack_moments_on_dgp_a() {
        let a = dgp::dgp_a();
        let mut z = vec![0.0; 4];
        z[dgp::DGP_A_Y1] = 1.0;
        z[dgp::DGP_A_Y2] = -1.0;
        let g0 = stack_moments(&a.model, &z, &[0.0]).unwrap();
        assert_eq!(g0.as_slice(), &[1.0, -1.0]);
        let g1 = stack_moments(&a.model, &z, &[1.0]).unwrap();
        assert_eq!(g1.as_slice(), &[0.0, -2.0]);
        assert!(stack_moments(&a.model, &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn dgp_a_jacobian_is_minus_one() {
        let a = dgp::dgp_a();
        for mode in [JacobianMode::Analytic, JacobianMode::FiniteDifference] {
            let m = a.model.with_jacobian_mode(mode).unwrap();
            let t = block_conditional_jacobian(&m, &a.law, 0, &[0.0]).unwrap();
            assert_eq!(t.len(), 2);
            for e in t.entries() {
                assert!((e[(0, 0)] + 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_conditioning_is_marginal_average() {
        let b = dgp::dgp_b();
        let marginal_block = MomentBlock {
            cond_vars: vec![],
            function: b.model.block(1).function.clone(),
        };
        let conditioned = b.model.clone();
        let marginal = MomentModel::new(
            vec![marginal_block],
            b.law.dim(),
            b.model.theta0().clone(),
            JacobianMode::Analytic,
        )
        .unwrap();
        let th = b.model.theta0().to_vec();
        let one = block_conditional_jacobian(&marginal, &b.law, 0, &th).unwrap();
        assert_eq!(one.len(), 1);
        let cells = block_conditional_jacobian(&conditioned, &b.law, 1, &th).unwrap();
        let mut weighted = Matrix::zeros(1, 2);
        for k in 0..cells.len() {
            weighted += cells.entry(k) * cells.partition().prob(k);
        }
        assert!((one.entry(0) - weighted).abs().max() < 1e-14);
    }

    #[test]
    fn analytic_and_fd_agree_on_smooth_families() {
        let b = dgp::dgp_b();
        let sep = dgp::separable_example();
        for (model, law) in [(&b.model, &b.law), (&sep.model, &sep.law)] {
            let th = model.theta0().to_vec();
            let fd = model.with_jacobian_mode(JacobianMode::FiniteDifference).unwrap();
            let an = model.with_jacobian_mode(JacobianMode::Analytic).unwrap();
            for j in 0..model.num_blocks() {
                let x = block_conditional_jacobian(&fd, law, j, &th).unwrap();
                let y = block_conditional_jacobian(&an, law, j, &th).unwrap();
                for (p, q) in x.entries().iter().zip(y.entries()) {
                    assert!((p - q).abs().max() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn quantile_rejects_analytic_mode() {
        let q = dgp::dgp_q();
        assert!(q.model.with_jacobian_mode(JacobianMode::Analytic).is_err());
        assert!(q.model.check_restrictions(&q.law).is_ok());
    }

    #[test]
    fn quantile_jacobian_is_derivative_of_conditional_cdf() {
        let q = dgp::dgp_q();
        let t = block_conditional_jacobian(&q.model, &q.law, 0, &[0.0]).unwrap();
        // no support mass at the quantile: the conditional expectation is
        // flat around θ0
        for e in t.entries() {
            assert!(e[(0, 0)].abs() < 1e-6);
        }
        // move θ onto an atom: central difference of the exact conditional
        // expectation sees a jump of −P(Y = θ | X) over 2h
        let at = [1.0];
        let t = block_conditional_jacobian(&q.model, &q.law, 0, &at).unwrap();
        let h = numerics::default_step(1.0);
        for e in t.entries() {
            assert!((e[(0, 0)] + 0.5 / (2.0 * h)).abs() < 1e-3 / h);
        }
    }

    #[test]
    fn restriction_violation_is_rejected() {
        let a = dgp::dgp_a();
        let shifted = a.model.with_theta0(ParamPoint::new(vec![0.5]).unwrap()).unwrap();
        assert!(shifted.check_restrictions(&a.law).is_err());
        assert!(a.model.check_restrictions(&a.law).unwrap() <= 1e-12);
    }

    #[test]
    fn moments_have_mean_zero_at_truth() {
        for case in [dgp::dgp_a(), dgp::dgp_b(), dgp::separable_example()] {
            let th = case.model.theta0().to_vec();
            let mean = case
                .law
                .expectation(|z| numerics::column(stack_moments(&case.model, z, &th).unwrap()))
                .unwrap();
            assert!(mean.abs().max() <= 1e-12);
        }
    }

    #[test]
    fn diagnostics_on_dgp_a_pass() {
        let a = dgp::dgp_a();
        let r = check_assumptions(&a.model, &a.law, &[0.0]).unwrap();
        assert!(r.all_pass());
        for b in &r.blocks {
            assert!((b.variance_sup_norm - 1.0).abs() < 1e-14);
            assert!(b.cells.iter().all(|c| c.invertible));
            assert!((b.single_block_information[(0, 0)] - 1.0).abs() < 1e-12);
        }
        assert!(r.selection.is_none());
    }

    #[test]
    fn zero_variance_cell_is_flagged() {
        let law = dgp::dgp_a_with_degenerate_cell();
        let a = dgp::dgp_a();
        let r = check_assumptions(&a.model, &law, &[0.0]).unwrap();
        assert!(!r.all_pass());
        let b2 = &r.blocks[1];
        let flagged: Vec<_> = b2.cells.iter().filter(|c| !c.invertible).collect();
        assert_eq!(flagged.len(), 1);
        assert_eq!(flagged[0].values, vec![1.0]);
        assert!(r.blocks[0].variance_invertible);
    }

    #[test]
    fn quantile_model_fails_information_check() {
        let q = dgp::dgp_q();
        let r = check_assumptions(&q.model, &q.law, &[0.0]).unwrap();
        assert!(r.blocks.iter().all(|b| !b.single_block_information_nonsingular));
    }
}
