//! Built-in finite-support designs.
//!
//! Every law here is written down exactly, with probabilities as products of
//! simple conditionals, so the true parameter satisfies the restrictions to
//! rounding precision.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::missing_data::{MissingDataSpec, Selection, Variant};
use crate::model::{
    JacobianMode, Link, LinearIndex, MeanResidual, MomentBlock, MomentModel, ParamPoint,
    QuantileResidual, Term,
};
use crate::probability::{uniform01, DiscreteLaw};

/// A law together with a model it satisfies.
#[derive(Debug, Clone)]
pub struct Case {
    pub name: &'static str,
    pub law: DiscreteLaw,
    pub model: MomentModel,
}

pub const DGP_A_X1: usize = 0;
pub const DGP_A_X2: usize = 1;
pub const DGP_A_Y1: usize = 2;
pub const DGP_A_Y2: usize = 3;

const SIGNS: [f64; 2] = [-1.0, 1.0];

fn build(name: &'static str, law: DiscreteLaw, blocks: Vec<MomentBlock>, theta0: Vec<f64>, mode: JacobianMode) -> Case {
    let model = MomentModel::with_law(blocks, law.dim(), ParamPoint::new(theta0).unwrap(), mode, &law)
        .unwrap_or_else(|e| panic!("built-in design {name} is inconsistent: {e}"));
    Case { name, law, model }
}

fn dgp_a_law(scale1: [f64; 2], y2_zero_when_x2: bool) -> DiscreteLaw {
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for x1 in [0.0, 1.0] {
        for x2 in [0.0, 1.0] {
            for e1 in SIGNS {
                let e2s: &[f64] = if y2_zero_when_x2 && x2 == 1.0 { &[0.0] } else { &SIGNS };
                for &e2 in e2s {
                    support.push(vec![x1, x2, e1 * scale1[x1 as usize], e2]);
                    weights.push(1.0 / e2s.len() as f64);
                }
            }
        }
    }
    DiscreteLaw::from_weights(support, weights).unwrap()
}

fn location_blocks() -> Vec<MomentBlock> {
    vec![
        MomentBlock::new(MeanResidual::linear(DGP_A_Y1, vec![Term::intercept(0)]), vec![DGP_A_X1]),
        MomentBlock::new(MeanResidual::linear(DGP_A_Y2, vec![Term::intercept(0)]), vec![DGP_A_X2]),
    ]
}

/// `Z = (X1, X2, Y1, Y2)`, independent `X_j ~ Bernoulli(1/2)`,
/// `Y_j = θ0 + ε_j` with `ε_j` uniform on `{−1, 1}`, `θ0 = 0`; block `j` is
/// `Y_j − θ` given `X_j`.
pub fn dgp_a() -> Case {
    build("DGP-A", dgp_a_law([1.0, 1.0], false), location_blocks(), vec![0.0], JacobianMode::Analytic)
}

/// DGP-A with `ε1 = ±2` when `X1 = 1`.
pub fn dgp_a_heteroskedastic() -> Case {
    build(
        "DGP-A-het",
        dgp_a_law([1.0, 2.0], false),
        location_blocks(),
        vec![0.0],
        JacobianMode::Analytic,
    )
}

/// DGP-A except `Y2 ≡ 0` on `X2 = 1`, so the second block has a zero
/// conditional variance there.
pub fn dgp_a_with_degenerate_cell() -> DiscreteLaw {
    dgp_a_law([1.0, 1.0], true)
}

/// DGP-A with quantile blocks `1/2 − 1{Y_j ≤ θ}`.
pub fn dgp_q() -> Case {
    let blocks = vec![
        MomentBlock::new(
            QuantileResidual::new(DGP_A_Y1, vec![Term::intercept(0)], 0.5).unwrap(),
            vec![DGP_A_X1],
        ),
        MomentBlock::new(
            QuantileResidual::new(DGP_A_Y2, vec![Term::intercept(0)], 0.5).unwrap(),
            vec![DGP_A_X2],
        ),
    ];
    build("DGP-Q", dgp_a_law([1.0, 1.0], false), blocks, vec![0.0], JacobianMode::FiniteDifference)
}

pub const DGP_B_THETA0: [f64; 2] = [1.0, 0.5];

/// Nested design on `Z = (X1, X2, Y1, Y2)` with `θ = (θ1, θ2)`:
/// `Y1 = θ1 + ε1` given `X1`, `Y2 = θ1 + θ2·X2 + ε2` given `(X1, X2)`.
/// `P(X2 = 1 | X1) = 0.3 + 0.4·X1`, `ε1 = ±(1 + X1/2)`, `ε2 = ±(1 + X2)`,
/// and the signs are correlated with `P(s1, s2) = (1 + c·s1·s2)/4`,
/// `c = 1/2` when `X2 = 0` and `−1/4` otherwise.
pub fn dgp_b() -> Case {
    let [t1, t2] = DGP_B_THETA0;
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for x1 in [0.0, 1.0] {
        for x2 in [0.0, 1.0] {
            let px2 = if x2 == 1.0 { 0.3 + 0.4 * x1 } else { 0.7 - 0.4 * x1 };
            let c = if x2 == 0.0 { 0.5 } else { -0.25 };
            for s1 in SIGNS {
                for s2 in SIGNS {
                    support.push(vec![
                        x1,
                        x2,
                        t1 + s1 * (1.0 + 0.5 * x1),
                        t1 + t2 * x2 + s2 * (1.0 + x2),
                    ]);
                    weights.push(0.5 * px2 * (1.0 + c * s1 * s2) / 4.0);
                }
            }
        }
    }
    let law = DiscreteLaw::from_weights(support, weights).unwrap();
    let blocks = vec![
        MomentBlock::new(MeanResidual::linear(2, vec![Term::intercept(0)]), vec![0]),
        MomentBlock::new(
            MeanResidual::linear(3, vec![Term::intercept(0), Term::coord(1, 1)]),
            vec![0, 1],
        ),
    ];
    build("DGP-B", law, blocks, DGP_B_THETA0.to_vec(), JacobianMode::Analytic)
}

/// DGP-B with both blocks conditioned on `(X1, X2)`.
pub fn dgp_b_common_conditioning() -> Case {
    let b = dgp_b();
    let blocks = b
        .model
        .blocks()
        .iter()
        .map(|blk| MomentBlock {
            cond_vars: vec![0, 1],
            function: blk.function.clone(),
        })
        .collect();
    build("DGP-B-common", b.law, blocks, DGP_B_THETA0.to_vec(), JacobianMode::Analytic)
}

/// Two nonlinear separable blocks on `Z = (X1, X2, Y1, Y2)`:
/// `Y1 = exp(θ1 + θ2·X1) + ε1` given `X1` and
/// `Y2 = logistic(θ1 + θ2·X2) + ε2` given `X2`.
pub fn separable_example() -> Case {
    let theta0 = [0.2, -0.3];
    let idx = |x: usize| LinearIndex::new(vec![Term::intercept(0), Term::coord(x, 1)]);
    let b1 = MeanResidual { response: 2, index: idx(0), link: Link::Exp };
    let b2 = MeanResidual { response: 3, index: idx(1), link: Link::Logistic };
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for x1 in [0.0, 1.0] {
        for x2 in [0.0, 1.0, 2.0] {
            let m1 = Link::Exp.apply(theta0[0] + theta0[1] * x1);
            let m2 = Link::Logistic.apply(theta0[0] + theta0[1] * x2);
            for e1 in SIGNS {
                for e2 in [-0.5, 0.5] {
                    support.push(vec![x1, x2, m1 + e1, m2 + e2 * (1.0 + x1)]);
                    weights.push(if x2 == 2.0 { 0.5 } else { 1.0 });
                }
            }
        }
    }
    let law = DiscreteLaw::from_weights(support, weights).unwrap();
    let blocks = vec![MomentBlock::new(b1, vec![0]), MomentBlock::new(b2, vec![1])];
    build("separable", law, blocks, theta0.to_vec(), JacobianMode::Analytic)
}

/// A seeded two-block design on `Z = (X1, X2, Y1, Y2)` with `X_j ∈ {0,1,2}`,
/// random joint cell probabilities, cellwise random error scales and sign
/// correlation, and `g_j = Y_j − θ1 − θ2·X_j` given `X_j`.
pub fn random_two_block(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta0 = [uniform01(&mut rng) * 2.0 - 1.0, uniform01(&mut rng) * 2.0 - 1.0];
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for x1 in [0.0, 1.0, 2.0] {
        for x2 in [0.0, 1.0, 2.0] {
            let px = 0.2 + uniform01(&mut rng);
            let m1 = 0.5 + uniform01(&mut rng) * 1.5;
            let m2 = 0.5 + uniform01(&mut rng) * 1.5;
            let c = uniform01(&mut rng) * 1.6 - 0.8;
            for s1 in SIGNS {
                for s2 in SIGNS {
                    support.push(vec![
                        x1,
                        x2,
                        theta0[0] + theta0[1] * x1 + s1 * m1,
                        theta0[0] + theta0[1] * x2 + s2 * m2,
                    ]);
                    weights.push(px * (1.0 + c * s1 * s2));
                }
            }
        }
    }
    let law = DiscreteLaw::from_weights(support, weights).unwrap();
    let blocks = vec![
        MomentBlock::new(
            MeanResidual::linear(2, vec![Term::intercept(0), Term::coord(0, 1)]),
            vec![0],
        ),
        MomentBlock::new(
            MeanResidual::linear(3, vec![Term::intercept(0), Term::coord(1, 1)]),
            vec![1],
        ),
    ];
    build("random", law, blocks, theta0.to_vec(), JacobianMode::Analytic)
}

pub const DGP_C_Y: usize = 0;
pub const DGP_C_X: usize = 1;
pub const DGP_C_V: usize = 2;
pub const DGP_C_V0: usize = 3;
pub const DGP_C_DELTA: usize = 4;

pub const DGP_C_ALPHA0: [f64; 2] = [0.5, 2.0];

/// `γ0` of the logistic selection `π = logistic(γ0 + γ1·V0)`, giving
/// `π = 1/2` when `V0 = 0` and `π = 4/5` when `V0 = 1`.
pub fn dgp_c_gamma0() -> [f64; 2] {
    [0.0, libm::log(4.0)]
}

/// How the selection probability of DGP-C is declared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionKind {
    Known,
    Logistic,
}

#[derive(Debug, Clone)]
pub struct MissingCase {
    pub name: &'static str,
    pub spec: MissingDataSpec,
    pub law: DiscreteLaw,
    pub model: MomentModel,
}

fn dgp_c_selection() -> Selection {
    Selection::Logistic {
        index: LinearIndex::new(vec![Term::intercept(0), Term::coord(DGP_C_V0, 1)]),
        gamma0: dgp_c_gamma0().to_vec(),
    }
}

/// Full-data law of `Z = (Y, X, V, V0, δ)`:
/// `V ~ Bernoulli(1/2)`, `P(X = 1 | V) = 0.3 + 0.4·V`,
/// `Y = α1 + α2·X + s·(1 + V)` with a fair sign `s`,
/// `P(V0 = 1 | s) = 0.5 + 0.2·s` and `P(δ = 1 | V0) = π(V0)`.
pub fn dgp_c_law() -> DiscreteLaw {
    let [a1, a2] = DGP_C_ALPHA0;
    let gamma = dgp_c_gamma0();
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for v in [0.0, 1.0] {
        for x in [0.0, 1.0] {
            let px = if x == 1.0 { 0.3 + 0.4 * v } else { 0.7 - 0.4 * v };
            for s in SIGNS {
                for v0 in [0.0, 1.0] {
                    let pv0 = if v0 == 1.0 { 0.5 + 0.2 * s } else { 0.5 - 0.2 * s };
                    let pi = crate::model::families::logistic(gamma[0] + gamma[1] * v0);
                    for delta in [0.0, 1.0] {
                        let pd = if delta == 1.0 { pi } else { 1.0 - pi };
                        let y = a1 + a2 * x + s * (1.0 + v);
                        support.push(vec![y, x, v, v0, delta]);
                        weights.push(0.5 * px * 0.5 * pv0 * pd);
                    }
                }
            }
        }
    }
    DiscreteLaw::from_weights(support, weights).unwrap()
}

/// Missing-response (`W = (X, V, V0)`) or missing-regressor
/// (`W = (Y, V, V0)`) version of DGP-C; `X* = (X, V)` in both.
pub fn dgp_c(variant: Variant, selection: SelectionKind) -> MissingCase {
    let law = dgp_c_law();
    let w = match variant {
        Variant::MissingResponse => vec![DGP_C_X, DGP_C_V, DGP_C_V0],
        Variant::MissingRegressor => vec![DGP_C_Y, DGP_C_V, DGP_C_V0],
    };
    let rho = MeanResidual::linear(DGP_C_Y, vec![Term::intercept(0), Term::coord(DGP_C_X, 1)]);
    let mut spec = MissingDataSpec {
        variant,
        z_dim: 5,
        delta: DGP_C_DELTA,
        x_star: vec![DGP_C_X, DGP_C_V],
        w,
        rho: Arc::new(rho),
        selection: dgp_c_selection(),
        alpha0: DGP_C_ALPHA0.to_vec(),
    };
    if selection == SelectionKind::Known {
        spec = spec.with_tabulated_selection(&law).unwrap();
    }
    let model = crate::missing_data::build_observational_model(&spec).unwrap();
    model
        .check_restrictions(&law)
        .unwrap_or_else(|e| panic!("DGP-C is inconsistent: {e}"));
    let name = match variant {
        Variant::MissingResponse => "DGP-C-response",
        Variant::MissingRegressor => "DGP-C-regressor",
    };
    MissingCase { name, spec, law, model }
}

/// Names accepted by [`by_name`].
pub const BUILTIN_NAMES: [&str; 8] = [
    "DGP-A",
    "DGP-A-het",
    "DGP-B",
    "DGP-B-common",
    "DGP-C-response",
    "DGP-C-regressor",
    "DGP-Q",
    "separable",
];

/// Looks up a built-in design; DGP-C variants use the known-π declaration.
pub fn by_name(name: &str) -> Option<Case> {
    let case = match name {
        "DGP-A" => dgp_a(),
        "DGP-A-het" => dgp_a_heteroskedastic(),
        "DGP-B" => dgp_b(),
        "DGP-B-common" => dgp_b_common_conditioning(),
        "DGP-Q" => dgp_q(),
        "separable" => separable_example(),
        "DGP-C-response" | "DGP-C-regressor" => {
            let variant = if name == "DGP-C-response" {
                Variant::MissingResponse
            } else {
                Variant::MissingRegressor
            };
            let c = dgp_c(variant, SelectionKind::Known);
            Case { name: c.name, law: c.law, model: c.model }
        }
        _ => return None,
    };
    Some(case)
}
