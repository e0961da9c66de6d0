//! Efficient scores `S̄ = Σ_j a_j(X^(j)) g_j(Z, θ0)`.
//!
//! Three independent routes are provided: the backfitting recursion, a
//! direct linear solve of the fixed-point system, and the explicit formulas
//! available when the conditioning sets are nested. On a finite-support law
//! each one is exact up to rounding, so they serve as oracles for one
//! another.
//!
//! Only the sum `S̄` is unique in general. When the blocks are collinear the
//! individual `a_j` are not identified; the linear solve then returns the
//! minimum-norm solution and comparisons should be made on `S̄`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{ExactMoments, MomentModel};
use crate::numerics::{self, Matrix, DEFAULT_PINV_TOL};
use crate::probability::{CondTable, DiscreteLaw, Partition};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 500;

/// One `r×p_j` instrument table per block. `r` is usually `d` but may be a
/// sub-vector of the parameter (the γ part of a joint score, say).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreField {
    blocks: Vec<CondTable<Matrix>>,
    rows: usize,
}

impl ScoreField {
    pub fn new(blocks: Vec<CondTable<Matrix>>) -> Result<Self> {
        let rows = blocks
            .iter()
            .flat_map(|b| b.entries().first())
            .map(|m| m.nrows())
            .next()
            .ok_or_else(|| Error::contract("score field without entries"))?;
        for (j, b) in blocks.iter().enumerate() {
            let cols = b.entries().first().map_or(0, |m| m.ncols());
            for m in b.entries() {
                if m.nrows() != rows || m.ncols() != cols {
                    return Err(Error::contract(format!(
                        "block {j}: instrument entries change shape"
                    )));
                }
                numerics::ensure_finite(m, "instrument")?;
            }
        }
        Ok(Self { blocks, rows })
    }

    /// Zero field on the conditioning partitions of `moments`.
    pub fn zeros(moments: &ExactMoments, rows: usize) -> Self {
        let blocks = (0..moments.num_blocks())
            .map(|j| {
                let part = moments.partitions[j].clone();
                let entries = vec![Matrix::zeros(rows, moments.block_dim(j)); part.len()];
                CondTable::new(part, entries).expect("one entry per cell")
            })
            .collect();
        Self { blocks, rows }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, j: usize) -> &CondTable<Matrix> {
        &self.blocks[j]
    }

    pub fn blocks(&self) -> &[CondTable<Matrix>] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<CondTable<Matrix>> {
        self.blocks
    }

    /// `a_j(x^(j))` for an arbitrary point, if its cell is in the table.
    pub fn instrument(&self, j: usize, z: &[f64]) -> Option<&Matrix> {
        let t = &self.blocks[j];
        t.partition().find_point(z).map(|k| t.entry(k))
    }

    /// `S̄(z) = Σ_j a_j(x^(j)) g_j(z, θ)`.
    pub fn score_at(&self, model: &MomentModel, z: &[f64], theta: &[f64]) -> Result<DVector<f64>> {
        self.check_model(model)?;
        let mut s = DVector::zeros(self.rows);
        for j in 0..self.num_blocks() {
            let a = self.instrument(j, z).ok_or_else(|| {
                Error::contract(format!("block {j}: point lies outside every instrument cell"))
            })?;
            s += a * model.eval_block(j, z, theta)?;
        }
        Ok(s)
    }

    fn check_model(&self, model: &MomentModel) -> Result<()> {
        if self.num_blocks() != model.num_blocks() {
            return Err(Error::contract(format!(
                "field has {} blocks, model has {}",
                self.num_blocks(),
                model.num_blocks()
            )));
        }
        for (j, b) in self.blocks.iter().enumerate() {
            if let Some(m) = b.entries().first() {
                if m.ncols() != model.block(j).output_dim() {
                    return Err(Error::contract(format!(
                        "block {j}: instrument has {} columns, block dimension is {}",
                        m.ncols(),
                        model.block(j).output_dim()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Per-support-point instrument lookup against precomputed partitions;
    /// falls back to a value search when the partitions differ.
    fn at_support<'a>(&'a self, em: &ExactMoments, law: &DiscreteLaw, j: usize, i: usize) -> Result<&'a Matrix> {
        let t = &self.blocks[j];
        if t.partition() == &em.partitions[j] {
            Ok(t.at_support(i))
        } else {
            self.instrument(j, law.point(i)).ok_or_else(|| {
                Error::contract(format!("block {j}: support point {i} outside every instrument cell"))
            })
        }
    }
}

/// Values of `S̄` at every support point.
pub fn score_values(em: &ExactMoments, law: &DiscreteLaw, field: &ScoreField) -> Result<Vec<DVector<f64>>> {
    if field.num_blocks() != em.num_blocks() {
        return Err(Error::contract("field and model differ in block count"));
    }
    (0..law.len())
        .map(|i| {
            let mut s = DVector::zeros(field.rows());
            for j in 0..em.num_blocks() {
                s += field.at_support(em, law, j, i)? * &em.values[j][i];
            }
            Ok(s)
        })
        .collect()
}

/// `‖f‖ = (E|f(Z)|²)^{1/2}` for values given per support point.
pub fn l2_norm(law: &DiscreteLaw, values: &[DVector<f64>]) -> f64 {
    libm::sqrt(
        values
            .iter()
            .zip(law.probs())
            .map(|(v, p)| p * v.norm_squared())
            .sum(),
    )
}

pub fn l2_distance(law: &DiscreteLaw, a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    libm::sqrt(
        a.iter()
            .zip(b)
            .zip(law.probs())
            .map(|((x, y), p)| p * (x - y).norm_squared())
            .sum(),
    )
}

/// `E[f f']` for values given per support point.
pub fn second_moment(law: &DiscreteLaw, values: &[DVector<f64>], rows: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, rows);
    for (v, p) in values.iter().zip(law.probs()) {
        m += v * v.transpose() * *p;
    }
    numerics::symmetrize(&m)
}

/// Single-block optimal instrument `−E[∂_θ' g_j | X^(j)]' V^-(g_j | X^(j))`
/// with every other block set to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoProjection {
    pub field: ScoreField,
    /// Cells of block `j` whose conditional variance is rank deficient.
    pub singular_cells: Vec<usize>,
    /// The block has zero conditional variance everywhere.
    pub degenerate: bool,
}

fn driving_term(em: &ExactMoments, j: usize) -> Vec<Matrix> {
    em.jacobians[j]
        .iter()
        .zip(&em.variance_pinv[j])
        .map(|(jac, vinv)| -(jac.transpose() * vinv))
        .collect()
}

pub fn rho_projection(model: &MomentModel, law: &DiscreteLaw, theta0: &[f64], j: usize) -> Result<RhoProjection> {
    if j >= model.num_blocks() {
        return Err(Error::contract(format!("block {j} does not exist")));
    }
    let em = ExactMoments::new(model, law, theta0, false)?;
    Ok(rho_from_moments(&em, j))
}

pub(crate) fn rho_from_moments(em: &ExactMoments, j: usize) -> RhoProjection {
    let mut blocks = ScoreField::zeros(em, em.param_dim()).into_blocks();
    let part = em.partitions[j].clone();
    blocks[j] = CondTable::new(part, driving_term(em, j)).expect("one entry per cell");
    let degenerate = em.variances[j].iter().all(|v| v.iter().all(|x| *x == 0.0));
    RhoProjection {
        field: ScoreField { blocks, rows: em.param_dim() },
        singular_cells: em.singular_cells[j].clone(),
        degenerate,
    }
}

/// The field made of every block's own single-equation instrument.
pub(crate) fn rho_field(em: &ExactMoments) -> ScoreField {
    let blocks = (0..em.num_blocks())
        .map(|j| CondTable::new(em.partitions[j].clone(), driving_term(em, j)).expect("one entry per cell"))
        .collect();
    ScoreField { blocks, rows: em.param_dim() }
}

/// `Σ_{i≠j} E[a_i g_i g_j' | X^(j)]`, `d×p_j` per cell of block `j`.
fn cross_terms(em: &ExactMoments, law: &DiscreteLaw, field: &ScoreField, j: usize) -> Result<Vec<Matrix>> {
    let part = &em.partitions[j];
    let mut pieces = Vec::with_capacity(law.len());
    for i in 0..law.len() {
        let mut s = DVector::zeros(field.rows());
        for b in 0..em.num_blocks() {
            if b != j {
                s += field.at_support(em, law, b, i)? * &em.values[b][i];
            }
        }
        pieces.push(s * em.values[j][i].transpose());
    }
    part.average(law, |i| pieces[i].clone())
}

fn update_block(em: &ExactMoments, law: &DiscreteLaw, field: &ScoreField, j: usize) -> Result<CondTable<Matrix>> {
    let cross = cross_terms(em, law, field, j)?;
    let entries = cross
        .into_iter()
        .zip(em.jacobians[j].iter().zip(&em.variance_pinv[j]))
        .map(|(c, (jac, vinv))| (-jac.transpose() - c) * vinv)
        .collect();
    CondTable::new(em.partitions[j].clone(), entries)
}

fn check_field(em: &ExactMoments, field: &ScoreField) -> Result<()> {
    if field.num_blocks() != em.num_blocks() {
        return Err(Error::contract(format!(
            "field has {} blocks, model has {}",
            field.num_blocks(),
            em.num_blocks()
        )));
    }
    if field.rows() != em.param_dim() {
        return Err(Error::contract(format!(
            "field has {} rows, parameter dimension is {}",
            field.rows(),
            em.param_dim()
        )));
    }
    Ok(())
}

/// One backfitting step from the block-1 instrument `a1_prev`: the other
/// blocks are refreshed from it in order, then every block is updated in
/// order, each update using the latest values of the others. For two blocks
/// this is the usual recursion (`a1^(m)` from `a2` fitted on `a1^(m−1)`, then
/// `a2^(m)` from `a1^(m)`); for more blocks it is the cyclic extension.
///
/// Only block 1 of `prev` matters when `J = 2`; with more blocks the
/// remaining entries seed the refresh.
pub fn backfit_step(em: &ExactMoments, law: &DiscreteLaw, prev: &ScoreField) -> Result<ScoreField> {
    check_field(em, prev)?;
    let mut cur = prev.clone();
    for j in 1..em.num_blocks() {
        cur.blocks[j] = update_block(em, law, &cur, j)?;
    }
    for j in 0..em.num_blocks() {
        cur.blocks[j] = update_block(em, law, &cur, j)?;
    }
    Ok(cur)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackfitTrace {
    /// `‖S̄^(m) − S̄^(m−1)‖` for `m = 1, 2, …`, with `S̄^(0) = 0`.
    pub increments: Vec<f64>,
    /// `‖a_j^(m) g_j − a_j^(m−1) g_j‖` per iteration and block. These need
    /// not go to zero even when `S̄^(m)` converges.
    pub block_increments: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
}

impl BackfitTrace {
    /// Whether every block's own increment also fell below `tol` at the
    /// last iteration.
    pub fn blocks_settled(&self, tol: f64) -> bool {
        self.block_increments
            .last()
            .is_some_and(|b| b.iter().all(|x| *x < tol))
    }
}

fn block_values(em: &ExactMoments, law: &DiscreteLaw, field: &ScoreField, j: usize) -> Result<Vec<DVector<f64>>> {
    (0..law.len())
        .map(|i| Ok(field.at_support(em, law, j, i)? * &em.values[j][i]))
        .collect()
}

/// Iterates [`backfit_step`] from `a1^(0) = 0` until `‖S̄^(m) − S̄^(m−1)‖ <
/// tol` or `max_iter` steps. Running out of iterations is reported through
/// `converged = false`, not as an error.
pub fn backfit_solve_moments(
    em: &ExactMoments,
    law: &DiscreteLaw,
    tol: f64,
    max_iter: usize,
) -> Result<(ScoreField, BackfitTrace)> {
    if !(tol > 0.0) {
        return Err(Error::contract(format!("tolerance must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::contract("max_iter must be at least 1"));
    }
    let d = em.param_dim();
    let mut field = ScoreField::zeros(em, d);
    let mut score = vec![DVector::zeros(d); law.len()];
    let mut parts: Vec<Vec<DVector<f64>>> = (0..em.num_blocks())
        .map(|_| vec![DVector::zeros(d); law.len()])
        .collect();
    let mut trace = BackfitTrace {
        increments: Vec::new(),
        block_increments: Vec::new(),
        converged: false,
        iterations: 0,
    };
    for _ in 0..max_iter {
        field = backfit_step(em, law, &field)?;
        let new_parts = (0..em.num_blocks())
            .map(|j| block_values(em, law, &field, j))
            .collect::<Result<Vec<_>>>()?;
        let new_score: Vec<DVector<f64>> = (0..law.len())
            .map(|i| new_parts.iter().fold(DVector::zeros(d), |acc, p| acc + &p[i]))
            .collect();
        let inc = l2_distance(law, &new_score, &score);
        trace.increments.push(inc);
        trace
            .block_increments
            .push(new_parts.iter().zip(&parts).map(|(a, b)| l2_distance(law, a, b)).collect());
        trace.iterations += 1;
        score = new_score;
        parts = new_parts;
        if inc < tol {
            trace.converged = true;
            break;
        }
    }
    Ok((field, trace))
}

pub fn backfit_solve(
    model: &MomentModel,
    law: &DiscreteLaw,
    theta0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(ScoreField, BackfitTrace)> {
    let em = ExactMoments::new(model, law, theta0, false)?;
    backfit_solve_moments(&em, law, tol, max_iter)
}

/// Per-block `L²` residual of the fixed-point system
/// `a_j g_j = ρ_j − Σ_{i≠j} E[a_i g_i g_j' | X^(j)] V_j^- g_j`.
pub fn fixed_point_residual(em: &ExactMoments, law: &DiscreteLaw, field: &ScoreField) -> Result<Vec<f64>> {
    check_field(em, field)?;
    (0..em.num_blocks())
        .map(|j| {
            let target = update_block(em, law, field, j)?;
            let diff = (0..law.len())
                .map(|i| Ok((field.at_support(em, law, j, i)? - target.at_support(i)) * &em.values[j][i]))
                .collect::<Result<Vec<_>>>()?;
            Ok(l2_norm(law, &diff))
        })
        .collect()
}

/// Direct solve of the fixed-point system.
///
/// Multiplying the block-`j` equation by `g_j'` and conditioning gives, for
/// every cell `c` of `X^(j)`,
/// `Σ_i E[a_i g_i g_j' 1_c] = −P(c) J_j(c)' V_j^-(c) V_j(c)`,
/// a symmetric positive semidefinite system in the cell entries of all the
/// `a_i`. Parameter rows decouple and share one Gram matrix. The
/// pseudoinverse gives the minimum-norm solution when the blocks are
/// collinear.
pub fn oracle_projection_moments(em: &ExactMoments, law: &DiscreteLaw) -> Result<ScoreField> {
    let nb = em.num_blocks();
    let d = em.param_dim();
    let mut offsets = Vec::with_capacity(nb);
    let mut n = 0;
    for j in 0..nb {
        offsets.push(n);
        n += em.partitions[j].len() * em.block_dim(j);
    }
    let slot = |j: usize, c: usize| offsets[j] + c * em.block_dim(j);
    let mut gram = Matrix::zeros(n, n);
    for (s, &q) in law.probs().iter().enumerate() {
        for i in 0..nb {
            let ri = slot(i, em.partitions[i].cell_of(s));
            let gi = &em.values[i][s];
            for j in 0..nb {
                let rj = slot(j, em.partitions[j].cell_of(s));
                let gj = &em.values[j][s];
                let mut view = gram.view_mut((ri, rj), (gi.len(), gj.len()));
                view += gi * gj.transpose() * q;
            }
        }
    }
    let mut rhs = Matrix::zeros(n, d);
    for j in 0..nb {
        for c in 0..em.partitions[j].len() {
            let v = &em.variances[j][c];
            let proj = v * &em.variance_pinv[j][c];
            let block = -(proj * &em.jacobians[j][c]) * em.partitions[j].prob(c);
            rhs.view_mut((slot(j, c), 0), (em.block_dim(j), d)).copy_from(&block);
        }
    }
    let gram = numerics::symmetrize(&gram);
    let sol = numerics::pinv(&gram, DEFAULT_PINV_TOL)? * rhs;
    let blocks = (0..nb)
        .map(|j| {
            let p = em.block_dim(j);
            let entries = (0..em.partitions[j].len())
                .map(|c| sol.view((slot(j, c), 0), (p, d)).transpose())
                .collect();
            CondTable::new(em.partitions[j].clone(), entries)
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreField::new(blocks)
}

pub fn oracle_projection(model: &MomentModel, law: &DiscreteLaw, theta0: &[f64]) -> Result<ScoreField> {
    let em = ExactMoments::new(model, law, theta0, false)?;
    oracle_projection_moments(&em, law)
}

/// Explicit solution for two blocks with `σ(X^(1)) ⊆ σ(X^(2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialForm {
    /// `C(X^(2)) = E(g1 g2' | X^(2)) V^{-1}(g2 | X^(2))`.
    pub coefficient: CondTable<Matrix>,
    /// `(ã1, ã2)`, instruments for `(g̃1, g2)` with `g̃1 = g1 − C g2`.
    pub transformed: ScoreField,
    /// The same score written on `(g1, g2)`: `a1 = ã1`, `a2 = ã2 − ã1 C`.
    pub original: ScoreField,
}

pub fn sequential_closed_form(model: &MomentModel, law: &DiscreteLaw, theta0: &[f64]) -> Result<SequentialForm> {
    if model.num_blocks() != 2 {
        return Err(Error::contract("the sequential closed form needs exactly two blocks"));
    }
    let em = ExactMoments::new(model, law, theta0, false)?;
    let (p1, p2) = (&em.partitions[0], &em.partitions[1]);
    if let Err((a, b)) = p1.coarsens(p2) {
        return Err(Error::contract(format!(
            "conditioning sets are not nested: support points {a} and {b} share an X^(2) cell but not an X^(1) cell"
        )));
    }
    let mut v2inv = Vec::with_capacity(p2.len());
    for (c, v) in em.variances[1].iter().enumerate() {
        let inv = v.clone().try_inverse().filter(|_| numerics::condition_number(v) < 1.0 / DEFAULT_PINV_TOL);
        match inv {
            Some(inv) => v2inv.push(inv),
            None => {
                return Err(Error::contract(format!(
                    "V(g2 | X^(2)) is singular on cell {:?}",
                    p2.values(c)
                )))
            }
        }
    }
    let cross = p2.average(law, |i| &em.values[0][i] * em.values[1][i].transpose())?;
    let coef: Vec<Matrix> = cross.iter().zip(&v2inv).map(|(c, vi)| c * vi).collect();
    let tilde: Vec<DVector<f64>> = (0..law.len())
        .map(|i| &em.values[0][i] - &coef[p2.cell_of(i)] * &em.values[1][i])
        .collect();
    // E[∂g̃1 | X^(1)] = J1 − E[C J2 | X^(1)], C held at θ0
    let cj2 = p1.average(law, |i| {
        let c2 = p2.cell_of(i);
        &coef[c2] * &em.jacobians[1][c2]
    })?;
    let jt: Vec<Matrix> = em.jacobians[0].iter().zip(&cj2).map(|(j1, m)| j1 - m).collect();
    let second = p1.average(law, |i| &tilde[i] * tilde[i].transpose())?;
    let first = p1.average(law, |i| numerics::column(tilde[i].clone()))?;
    let mut a1 = Vec::with_capacity(p1.len());
    for c in 0..p1.len() {
        let v = numerics::symmetrize(&(&second[c] - &first[c] * first[c].transpose()));
        a1.push(-(jt[c].transpose() * numerics::pinv(&v, DEFAULT_PINV_TOL)?));
    }
    let a2t: Vec<Matrix> = em.jacobians[1]
        .iter()
        .zip(&v2inv)
        .map(|(j2, vi)| -(j2.transpose() * vi))
        .collect();
    // the X^(1) cell of each X^(2) cell
    let mut parent = vec![usize::MAX; p2.len()];
    for i in 0..law.len() {
        parent[p2.cell_of(i)] = p1.cell_of(i);
    }
    let a2: Vec<Matrix> = (0..p2.len())
        .map(|c| &a2t[c] - &a1[parent[c]] * &coef[c])
        .collect();
    let a1_table = CondTable::new(p1.clone(), a1)?;
    Ok(SequentialForm {
        coefficient: CondTable::new(p2.clone(), coef)?,
        transformed: ScoreField::new(vec![a1_table.clone(), CondTable::new(p2.clone(), a2t)?])?,
        original: ScoreField::new(vec![a1_table, CondTable::new(p2.clone(), a2)?])?,
    })
}

/// `−E(∂_θ' g̲ | X)' V^{-1}(g̲ | X)` split into blocks, for models whose
/// blocks all share the same conditioning coordinates.
pub fn chamberlain_score(model: &MomentModel, law: &DiscreteLaw, theta0: &[f64]) -> Result<ScoreField> {
    let cv = &model.block(0).cond_vars;
    if model.blocks().iter().any(|b| &b.cond_vars != cv) {
        return Err(Error::contract("blocks have different conditioning coordinates"));
    }
    let em = ExactMoments::new(model, law, theta0, false)?;
    let part: &Partition = &em.partitions[0];
    let p = model.total_dim();
    let d = em.param_dim();
    let offsets = model.offsets();
    let stacked: Vec<DVector<f64>> = (0..law.len())
        .map(|i| {
            let mut g = DVector::zeros(p);
            for j in 0..em.num_blocks() {
                g.rows_mut(offsets[j], em.block_dim(j)).copy_from(&em.values[j][i]);
            }
            g
        })
        .collect();
    let second = part.average(law, |i| &stacked[i] * stacked[i].transpose())?;
    let first = part.average(law, |i| numerics::column(stacked[i].clone()))?;
    let mut blocks: Vec<Vec<Matrix>> = vec![Vec::with_capacity(part.len()); em.num_blocks()];
    for c in 0..part.len() {
        let v = numerics::symmetrize(&(&second[c] - &first[c] * first[c].transpose()));
        let mut jac = Matrix::zeros(p, d);
        for j in 0..em.num_blocks() {
            jac.view_mut((offsets[j], 0), (em.block_dim(j), d)).copy_from(&em.jacobians[j][c]);
        }
        let a = -(jac.transpose() * numerics::pinv(&v, DEFAULT_PINV_TOL)?);
        for j in 0..em.num_blocks() {
            blocks[j].push(a.columns(offsets[j], em.block_dim(j)).into_owned());
        }
    }
    ScoreField::new(
        blocks
            .into_iter()
            .map(|e| CondTable::new(part.clone(), e))
            .collect::<Result<Vec<_>>>()?,
    )
}

/// `E[S̄ S̄']`.
pub fn efficient_information(law: &DiscreteLaw, model: &MomentModel, theta0: &[f64], field: &ScoreField) -> Result<Matrix> {
    let em = ExactMoments::new(model, law, theta0, false)?;
    let values = score_values(&em, law, field)?;
    Ok(second_moment(law, &values, field.rows()))
}
