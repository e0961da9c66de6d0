//! Information of the unconditional models built from stacked instruments,
//! the sequence `k ↦ I^(k)`, and the information `I(b)` carried by an
//! arbitrary set of instruments.

use alloc::vec::Vec;

use crate::efficient_score::ScoreField;
use crate::error::{Error, Result};
use crate::instruments::{build_stacked, InstrumentFamily, StackedInstrumentMatrix};
use crate::model::{block_conditional_jacobian, stack_moments, MomentModel};
use crate::numerics::{self, Matrix, DEFAULT_PINV_TOL};
use crate::probability::DiscreteLaw;

/// Default threshold for the two-step stopping rule of
/// [`info_bound_sequence`].
pub const DEFAULT_STOP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Information {
    pub matrix: Matrix,
    /// The moment second-moment matrix was identically zero.
    pub degenerate: bool,
}

/// Stacked conditional Jacobians: row block `j` holds `E[∂_θ' g_j | X^(j)]`
/// at each support point.
fn pointwise_jacobians(model: &MomentModel, law: &DiscreteLaw, theta0: &[f64]) -> Result<Vec<Matrix>> {
    let p = model.total_dim();
    let d = model.param_dim();
    let offsets = model.offsets();
    let tables = (0..model.num_blocks())
        .map(|j| block_conditional_jacobian(model, law, j, theta0))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..law.len())
        .map(|i| {
            let mut m = Matrix::zeros(p, d);
            for (j, t) in tables.iter().enumerate() {
                let e = t.at_support(i);
                m.view_mut((offsets[j], 0), (e.nrows(), d)).copy_from(e);
            }
            m
        })
        .collect())
}

fn gmm_information(jac: &Matrix, var: &Matrix) -> Result<Information> {
    let degenerate = var.iter().all(|v| *v == 0.0);
    let var = numerics::symmetrize(var);
    let info = jac.transpose() * numerics::pinv(&var, DEFAULT_PINV_TOL)? * jac;
    Ok(Information {
        matrix: numerics::symmetrize(&info),
        degenerate,
    })
}

/// `I^(k) = E[∂_θ' g̲_k^w]' V^-[g̲_k^w] E[∂_θ' g̲_k^w]`.
///
/// Each instrument row block is `X^(j)`-measurable, so the Jacobian is
/// `E[w̲ E(∂_θ' g̲ | X)]`, the derivative of the unconditional expectation
/// with instruments held fixed. `V` is the uncentered second moment.
pub fn fisher_info_unconditional(
    model: &MomentModel,
    law: &DiscreteLaw,
    theta0: &[f64],
    stacked: &StackedInstrumentMatrix,
) -> Result<Information> {
    let jacs = pointwise_jacobians(model, law, theta0)?;
    let moments = law
        .support()
        .iter()
        .map(|z| stack_moments(model, z, theta0))
        .collect::<Result<Vec<_>>>()?;
    info_from_parts(law, stacked, &jacs, &moments)
}

fn info_from_parts(
    law: &DiscreteLaw,
    stacked: &StackedInstrumentMatrix,
    jacs: &[Matrix],
    moments: &[nalgebra::DVector<f64>],
) -> Result<Information> {
    if stacked.weights.len() != law.len() {
        return Err(Error::contract("stacked instruments were built on another law"));
    }
    let kp = stacked.k * stacked.total_dim();
    let d = jacs.first().map_or(0, |m| m.ncols());
    let mut jac = Matrix::zeros(kp, d);
    let mut var = Matrix::zeros(kp, kp);
    for (i, &q) in law.probs().iter().enumerate() {
        let w = stacked.matrix_at(i);
        jac += &w * &jacs[i] * q;
        let gw = stacked.apply(i, &moments[i]);
        var += &gw * gw.transpose() * q;
    }
    gmm_information(&jac, &var)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoBoundSequence {
    /// `(k, I^(k))` for increasing `k`.
    pub entries: Vec<(usize, Matrix)>,
    /// Depth at which the stopping rule fired.
    pub converged_at: Option<usize>,
    /// Spectral norm of the last increment `I^(k) − I^(k−1)`.
    pub final_gap: f64,
    pub degenerate: Vec<bool>,
}

impl InfoBoundSequence {
    pub fn last(&self) -> &Matrix {
        &self.entries.last().expect("nonempty sequence").1
    }
}

/// `I^(k)` for `k = 1..=k_max`, stopping early once two consecutive
/// increments have spectral norm below `stop_tol`. With `stop_tol = 0` the
/// full depth is always computed.
pub fn info_bound_sequence(
    model: &MomentModel,
    law: &DiscreteLaw,
    theta0: &[f64],
    family: &InstrumentFamily,
    k_max: usize,
    stop_tol: f64,
) -> Result<InfoBoundSequence> {
    if k_max == 0 || k_max > family.len() {
        return Err(Error::contract(alloc::format!(
            "k_max = {k_max} outside 1..={}",
            family.len()
        )));
    }
    if !(stop_tol >= 0.0) {
        return Err(Error::contract("stop_tol must be nonnegative"));
    }
    let jacs = pointwise_jacobians(model, law, theta0)?;
    let moments = law
        .support()
        .iter()
        .map(|z| stack_moments(model, z, theta0))
        .collect::<Result<Vec<_>>>()?;
    let full = build_stacked(law, model, family, k_max)?;
    let mut seq = InfoBoundSequence {
        entries: Vec::with_capacity(k_max),
        converged_at: None,
        final_gap: f64::NAN,
        degenerate: Vec::with_capacity(k_max),
    };
    let mut small_steps = 0;
    for k in 1..=k_max {
        let st = StackedInstrumentMatrix {
            k,
            block_dims: full.block_dims.clone(),
            weights: full.weights.iter().map(|w| w.rows(0, k).into_owned()).collect(),
        };
        let info = info_from_parts(law, &st, &jacs, &moments)?;
        if let Some((_, prev)) = seq.entries.last() {
            let gap = numerics::spectral_norm(&(&info.matrix - prev));
            seq.final_gap = gap;
            small_steps = if gap < stop_tol { small_steps + 1 } else { 0 };
        }
        seq.entries.push((k, info.matrix));
        seq.degenerate.push(info.degenerate);
        if small_steps >= 2 {
            seq.converged_at = Some(k);
            break;
        }
    }
    Ok(seq)
}

/// Information `I(b)` of the `r` unconditional restrictions
/// `E[Σ_j b_j(X^(j)) g_j(Z, θ)] = 0`.
pub fn info_for_instruments(
    model: &MomentModel,
    law: &DiscreteLaw,
    theta0: &[f64],
    b: &ScoreField,
) -> Result<Matrix> {
    let d = model.param_dim();
    let r = b.rows();
    let tables = (0..model.num_blocks())
        .map(|j| block_conditional_jacobian(model, law, j, theta0))
        .collect::<Result<Vec<_>>>()?;
    let mut jac = Matrix::zeros(r, d);
    let mut var = Matrix::zeros(r, r);
    for (i, z) in law.support().iter().enumerate() {
        let q = law.prob(i);
        let s = b.score_at(model, z, theta0)?;
        var += &s * s.transpose() * q;
        for (j, t) in tables.iter().enumerate() {
            let bj = b
                .instrument(j, z)
                .ok_or_else(|| Error::contract("instrument field misses a support cell"))?;
            jac += bj * t.at_support(i) * q;
        }
    }
    Ok(gmm_information(&jac, &var)?.matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp;
    use crate::efficient_score::{backfit_solve, efficient_information, rho_projection, DEFAULT_MAX_ITER, DEFAULT_TOL};
    use crate::instruments::{custom_family, default_family, Instrument};
    use crate::model::{ExactMoments, JacobianMode, MeanResidual, MomentBlock, ParamPoint, Term};
    use crate::probability::CondTable;
    use alloc::vec;

    #[test]
    fn dgp_a_constant_instrument_gives_two() {
        let a = dgp::dgp_a();
        let fam = default_family(&a.law);
        let st = build_stacked(&a.law, &a.model, &fam, 1).unwrap();
        let i1 = fisher_info_unconditional(&a.model, &a.law, &[0.0], &st).unwrap();
        assert!((i1.matrix[(0, 0)] - 2.0).abs() < 1e-14);
        assert!(!i1.degenerate);
        let seq = info_bound_sequence(&a.model, &a.law, &[0.0], &fam, fam.len(), 0.0).unwrap();
        assert!((seq.last()[(0, 0)] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn zero_moments_are_degenerate() {
        let a = dgp::dgp_a();
        let zero = MeanResidual::linear(dgp::DGP_A_Y1, vec![Term::coord(dgp::DGP_A_Y1, 0)]);
        let m = MomentModel::new(
            vec![MomentBlock::new(zero, vec![0])],
            4,
            ParamPoint::new(vec![1.0]).unwrap(),
            JacobianMode::Analytic,
        )
        .unwrap();
        let fam = default_family(&a.law);
        let st = build_stacked(&a.law, &m, &fam, 3).unwrap();
        let i = fisher_info_unconditional(&m, &a.law, &[1.0], &st).unwrap();
        assert!(i.degenerate);
        assert!(i.matrix.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn k_max_one_is_single_entry() {
        let a = dgp::dgp_a();
        let fam = default_family(&a.law);
        let seq = info_bound_sequence(&a.model, &a.law, &[0.0], &fam, 1, DEFAULT_STOP_TOL).unwrap();
        assert_eq!(seq.entries.len(), 1);
        assert!(seq.converged_at.is_none());
        assert!(info_bound_sequence(&a.model, &a.law, &[0.0], &fam, 0, 0.0).is_err());
    }

    #[test]
    fn dgp_b_monotone_and_matches_score() {
        let b = dgp::dgp_b();
        let th = b.model.theta0().to_vec();
        let fam = default_family(&b.law);
        let seq = info_bound_sequence(&b.model, &b.law, &th, &fam, fam.len(), 0.0).unwrap();
        for w in seq.entries.windows(2) {
            assert!(numerics::loewner_geq(&w[1].1, &w[0].1, 1e-10).unwrap());
        }
        let (field, _) = backfit_solve(&b.model, &b.law, &th, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let eff = efficient_information(&b.law, &b.model, &th, &field).unwrap();
        assert!(numerics::spectral_norm(&(seq.last() - &eff)) < 1e-8);
        assert!((info_for_instruments(&b.model, &b.law, &th, &field).unwrap() - &eff).abs().max() < 1e-8);
    }

    #[test]
    fn stays_constant_past_spanning_depth() {
        let a = dgp::dgp_a();
        let mut fam = default_family(&a.law);
        fam.members.push(Instrument::Monomial(vec![(dgp::DGP_A_Y1, 1), (dgp::DGP_A_X2, 1)]));
        fam.members.push(Instrument::Monomial(vec![(dgp::DGP_A_Y2, 3)]));
        let seq = info_bound_sequence(&a.model, &a.law, &[0.0], &fam, fam.len(), 0.0).unwrap();
        let at_span = &seq.entries[a.law.len()].1;
        for (_, m) in &seq.entries[a.law.len()..] {
            assert!((m - at_span).abs().max() < 1e-10);
        }
    }

    #[test]
    fn invariant_under_recombination() {
        let b = dgp::dgp_b();
        let th = b.model.theta0().to_vec();
        let fam = default_family(&b.law);
        let k = 6;
        let base = build_stacked(&b.law, &b.model, &fam, k).unwrap();
        let i0 = fisher_info_unconditional(&b.model, &b.law, &th, &base).unwrap().matrix;
        // upper-triangular mix with unit diagonal is invertible
        let mix = Matrix::from_fn(k, k, |r, c| if c >= r { 1.0 + (r + 2 * c) as f64 * 0.1 } else { 0.0 });
        let members: Vec<Instrument> = (0..k)
            .map(|r| {
                let fam = fam.clone();
                let row: Vec<f64> = (0..k).map(|c| mix[(r, c)]).collect();
                Instrument::Custom(
                    alloc::format!("mix{r}"),
                    alloc::sync::Arc::new(move |z: &[f64]| {
                        row.iter().zip(&fam.members).map(|(a, w)| a * w.eval(z)).sum()
                    }),
                )
            })
            .collect();
        let mixed = build_stacked(&b.law, &b.model, &custom_family(members), k).unwrap();
        let i1 = fisher_info_unconditional(&b.model, &b.law, &th, &mixed).unwrap().matrix;
        assert!((i0 - i1).abs().max() < 1e-9);
    }

    #[test]
    fn single_equation_and_zero_instruments() {
        let a = dgp::dgp_a();
        let r = rho_projection(&a.model, &a.law, &[0.0], 0).unwrap();
        let i = info_for_instruments(&a.model, &a.law, &[0.0], &r.field).unwrap();
        assert!((i[(0, 0)] - 1.0).abs() < 1e-14);
        let em = ExactMoments::new(&a.model, &a.law, &[0.0], false).unwrap();
        let zero = ScoreField::zeros(&em, 1);
        assert_eq!(info_for_instruments(&a.model, &a.law, &[0.0], &zero).unwrap()[(0, 0)], 0.0);
        // b1 = 1, b2 = 0 written explicitly
        let part = em.partitions[0].clone();
        let b1 = CondTable::new(part.clone(), vec![Matrix::from_element(1, 1, 1.0); part.len()]).unwrap();
        let b2 = zero.block(1).clone();
        let f = ScoreField::new(vec![b1, b2]).unwrap();
        assert!((info_for_instruments(&a.model, &a.law, &[0.0], &f).unwrap()[(0, 0)] - 1.0).abs() < 1e-14);
    }
}
