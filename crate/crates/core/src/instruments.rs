//! Scalar instrument families `w_1, w_2, …` on `Z` and their per-block
//! projections `w̄_s^j = E[w_s(Z) | X^(j)]`.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::MomentModel;
use crate::numerics::Matrix;
use crate::probability::{cmp_points, CondTable, DiscreteLaw};

type CustomFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Instrument {
    Constant,
    /// Indicator of a single support point.
    Point(Vec<f64>),
    /// `Π z[c]^k` over `(coordinate, power)` pairs.
    Monomial(Vec<(usize, u32)>),
    Custom(String, CustomFn),
}

impl Instrument {
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            Instrument::Constant => 1.0,
            Instrument::Point(p) => {
                if cmp_points(p, z).is_eq() {
                    1.0
                } else {
                    0.0
                }
            }
            Instrument::Monomial(terms) => terms.iter().map(|&(c, k)| libm::pow(z[c], k as f64)).product(),
            Instrument::Custom(_, f) => f(z),
        }
    }
}

impl fmt::Debug for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instrument::Constant => write!(f, "1"),
            Instrument::Point(p) => write!(f, "1{{Z = {p:?}}}"),
            Instrument::Monomial(t) => write!(f, "monomial{t:?}"),
            Instrument::Custom(name, _) => write!(f, "custom({name})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    Indicator,
    Polynomial,
    Custom,
}

impl FamilyKind {
    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::Indicator => "indicator",
            FamilyKind::Polynomial => "polynomial",
            FamilyKind::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone)]
pub struct InstrumentFamily {
    pub kind: FamilyKind,
    pub members: Vec<Instrument>,
}

impl InstrumentFamily {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// The constant followed by the indicator of every support point in
/// lexicographic order; it spans all functions on the support.
pub fn default_family(law: &DiscreteLaw) -> InstrumentFamily {
    let mut members = Vec::with_capacity(law.len() + 1);
    members.push(Instrument::Constant);
    for i in law.lexicographic_order() {
        members.push(Instrument::Point(law.point(i).to_vec()));
    }
    InstrumentFamily {
        kind: FamilyKind::Indicator,
        members,
    }
}

/// All monomials in `coords` of total degree `≤ degree`, by increasing
/// degree; the first member is the constant.
pub fn polynomial_family(coords: &[usize], degree: u32) -> InstrumentFamily {
    let mut members = Vec::new();
    let mut current: Vec<Vec<u32>> = alloc::vec![alloc::vec![0; coords.len()]];
    members.push(Instrument::Constant);
    for _ in 0..degree {
        let mut next: Vec<Vec<u32>> = Vec::new();
        for powers in &current {
            // raise only at or after the last nonzero position, so each
            // monomial appears once
            let start = powers.iter().rposition(|&k| k > 0).unwrap_or(0);
            for c in start..coords.len() {
                let mut p = powers.clone();
                p[c] += 1;
                next.push(p);
            }
        }
        for p in &next {
            let terms = coords
                .iter()
                .zip(p)
                .filter(|(_, k)| **k > 0)
                .map(|(c, k)| (*c, *k))
                .collect();
            members.push(Instrument::Monomial(terms));
        }
        current = next;
    }
    InstrumentFamily {
        kind: FamilyKind::Polynomial,
        members,
    }
}

pub fn custom_family(members: Vec<Instrument>) -> InstrumentFamily {
    InstrumentFamily {
        kind: FamilyKind::Custom,
        members,
    }
}

/// `w̄_s^j(x) = E[w_s(Z) | X^(j) = x]`, with `s` counted from 0.
pub fn projected_instrument(
    law: &DiscreteLaw,
    family: &InstrumentFamily,
    s: usize,
    cond_vars: &[usize],
) -> Result<CondTable<f64>> {
    let w = family.members.get(s).ok_or_else(|| {
        Error::contract(format!("instrument {s} requested from a family of {}", family.len()))
    })?;
    let part = law.partition(cond_vars)?;
    let vals: Vec<f64> = law.support().iter().map(|z| w.eval(z)).collect();
    let entries = part
        .average(law, |i| Matrix::from_element(1, 1, vals[i]))?
        .into_iter()
        .map(|m| m[(0, 0)])
        .collect();
    CondTable::new(part, entries)
}

/// Per support point, the `k` diagonal blocks `w̲_s` of the stacked
/// instrument `w̲^(k)`: `weights[i][(s, j)] = w̄_s^j(x_i^(j))`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedInstrumentMatrix {
    pub k: usize,
    pub block_dims: Vec<usize>,
    pub weights: Vec<Matrix>,
}

impl StackedInstrumentMatrix {
    pub fn total_dim(&self) -> usize {
        self.block_dims.iter().sum()
    }

    /// The `kp×p` matrix `w̲^(k)` at support point `i`.
    pub fn matrix_at(&self, i: usize) -> Matrix {
        let p = self.total_dim();
        let mut m = Matrix::zeros(self.k * p, p);
        for s in 0..self.k {
            let mut off = 0;
            for (j, &pj) in self.block_dims.iter().enumerate() {
                for r in 0..pj {
                    m[(s * p + off + r, off + r)] = self.weights[i][(s, j)];
                }
                off += pj;
            }
        }
        m
    }

    /// `g̲_k^w = w̲^(k) g̲` at support point `i`.
    pub fn apply(&self, i: usize, g: &DVector<f64>) -> DVector<f64> {
        let p = self.total_dim();
        let mut out = DVector::zeros(self.k * p);
        for s in 0..self.k {
            let mut off = 0;
            for (j, &pj) in self.block_dims.iter().enumerate() {
                let w = self.weights[i][(s, j)];
                for r in 0..pj {
                    out[s * p + off + r] = w * g[off + r];
                }
                off += pj;
            }
        }
        out
    }
}

/// Projections of the first `k` family members onto every block's
/// conditioning set.
pub fn build_stacked(
    law: &DiscreteLaw,
    model: &MomentModel,
    family: &InstrumentFamily,
    k: usize,
) -> Result<StackedInstrumentMatrix> {
    if k == 0 || k > family.len() {
        return Err(Error::contract(format!(
            "depth {k} outside 1..={} for this family",
            family.len()
        )));
    }
    model.ensure_law(law)?;
    let nb = model.num_blocks();
    let mut weights = alloc::vec![Matrix::zeros(k, nb); law.len()];
    for j in 0..nb {
        let cond = &model.block(j).cond_vars;
        for s in 0..k {
            let t = projected_instrument(law, family, s, cond)?;
            for (i, w) in weights.iter_mut().enumerate() {
                w[(s, j)] = *t.at_support(i);
            }
        }
    }
    Ok(StackedInstrumentMatrix {
        k,
        block_dims: model.blocks().iter().map(|b| b.output_dim()).collect(),
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp;
    use crate::model::stack_moments;
    use alloc::vec;

    #[test]
    fn constant_and_indicator_projections() {
        let a = dgp::dgp_a();
        let fam = default_family(&a.law);
        assert_eq!(fam.len(), 17);
        let t = projected_instrument(&a.law, &fam, 0, &[0]).unwrap();
        assert!(t.entries().iter().all(|v| *v == 1.0));
        // first indicator: its X1 cell has 8 points of equal mass
        let t = projected_instrument(&a.law, &fam, 1, &[0]).unwrap();
        let z = match &fam.members[1] {
            Instrument::Point(p) => p.clone(),
            _ => unreachable!(),
        };
        assert!((t.lookup(&[z[0]]).unwrap() - 0.125).abs() < 1e-15);
        assert!(projected_instrument(&a.law, &fam, 17, &[0]).is_err());
    }

    #[test]
    fn y1_projects_to_zero_on_x2() {
        let a = dgp::dgp_a();
        let fam = custom_family(vec![Instrument::Monomial(vec![(dgp::DGP_A_Y1, 1)])]);
        let t = projected_instrument(&a.law, &fam, 0, &[dgp::DGP_A_X2]).unwrap();
        assert!(t.entries().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn stacked_examples() {
        let a = dgp::dgp_a();
        let fam = custom_family(vec![
            Instrument::Constant,
            Instrument::Custom("x1".into(), Arc::new(|z: &[f64]| z[dgp::DGP_A_X1])),
        ]);
        let st1 = build_stacked(&a.law, &a.model, &fam, 1).unwrap();
        let st2 = build_stacked(&a.law, &a.model, &fam, 2).unwrap();
        for (i, z) in a.law.support().iter().enumerate() {
            let g = stack_moments(&a.model, z, &[0.0]).unwrap();
            assert_eq!(st1.apply(i, &g), g);
            let gw = st2.apply(i, &g);
            assert_eq!(gw[2], z[dgp::DGP_A_X1] * g[0]);
            assert_eq!(gw[3], 0.5 * g[1]);
            assert_eq!(st2.matrix_at(i) * &g, gw);
            assert!(st2.apply(i, &DVector::zeros(2)).iter().all(|v| *v == 0.0));
        }
        assert!(build_stacked(&a.law, &a.model, &fam, 3).is_err());
        assert!(build_stacked(&a.law, &a.model, &fam, 0).is_err());
    }

    #[test]
    fn small_default_family_size() {
        let law = DiscreteLaw::new(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![0.25; 4],
        )
        .unwrap();
        assert_eq!(default_family(&law).len(), 5);
    }

    #[test]
    fn polynomial_family_counts() {
        assert_eq!(polynomial_family(&[0, 1], 2).len(), 6);
        assert_eq!(polynomial_family(&[0, 1, 2], 3).len(), 20);
        let f = polynomial_family(&[3], 2);
        assert!((f.members[2].eval(&[0.0, 0.0, 0.0, 3.0]) - 9.0).abs() < 1e-15);
    }

    #[test]
    fn full_family_spans_every_conditioning_cell() {
        // each X^(j) cell indicator is a combination of the projected
        // members at full depth
        let b = dgp::dgp_b();
        let fam = default_family(&b.law);
        let st = build_stacked(&b.law, &b.model, &fam, fam.len()).unwrap();
        for j in 0..2 {
            let part = b.law.partition(&b.model.block(j).cond_vars).unwrap();
            let basis = Matrix::from_fn(b.law.len(), fam.len(), |i, s| st.weights[i][(s, j)]);
            let pinv = crate::numerics::pinv(&basis, 1e-12).unwrap();
            for c in 0..part.len() {
                let target = Matrix::from_fn(b.law.len(), 1, |i, _| if part.cell_of(i) == c { 1.0 } else { 0.0 });
                let fit = &basis * (&pinv * &target);
                assert!((fit - target).abs().max() < 1e-10);
            }
        }
    }

    #[test]
    fn block_rows_depend_only_on_own_coordinates() {
        let b = dgp::dgp_b();
        let fam = default_family(&b.law);
        let st = build_stacked(&b.law, &b.model, &fam, fam.len()).unwrap();
        for j in 0..2 {
            let part = b.law.partition(&b.model.block(j).cond_vars).unwrap();
            for i in 0..b.law.len() {
                for i2 in 0..b.law.len() {
                    if part.cell_of(i) == part.cell_of(i2) {
                        assert_eq!(st.weights[i].column(j), st.weights[i2].column(j));
                    }
                }
            }
        }
    }
}
