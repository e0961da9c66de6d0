//! Three-step efficient estimation on a sample and a Monte Carlo harness.
//!
//! 1. A preliminary estimate from cell-indicator moments with identity
//!    weight.
//! 2. Plug-in instruments: backfitting (or the missing-data contraction) on
//!    the empirical law, recentred at the preliminary estimate.
//! 3. The efficient estimate solving `E_n[Σ_j â_j g_j(θ)] = 0`.
//!
//! All minimizations use a derivative-free pattern search, since quantile
//! blocks are step functions of `θ`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::efficient_score::{backfit_solve_moments, efficient_information, rho_field, ScoreField};
use crate::error::{Error, Result};
use crate::missing_data::{a2_at, build_observational_model, contraction_solve_at, efficient_field, MissingDataSpec};
use crate::model::{ExactMoments, MomentModel, ParamPoint};
use crate::numerics::{self, Matrix, DEFAULT_PINV_TOL};
use crate::probability::{cmp_points, empirical_law, sample_from, uniform01, DiscreteLaw, SampleSet};

pub const DEFAULT_M_STAR: usize = 25;
pub const DEFAULT_RESTARTS: usize = 3;
pub const DEFAULT_STEP_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_EVALS: usize = 200_000;
/// Below this many replications a Monte Carlo report carries a warning.
pub const LOW_REPLICATION_THRESHOLD: usize = 100;
/// Share of failed replications above which a report is invalid.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    /// Search stops once every step size is below this.
    pub step_tol: f64,
    pub max_evals: usize,
    /// Extra random starting points besides the given one.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            step_tol: DEFAULT_STEP_TOL,
            max_evals: DEFAULT_MAX_EVALS,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

struct Budget<'f, F> {
    f: &'f F,
    evals: usize,
    max: usize,
}

impl<F: Fn(&[f64]) -> f64> Budget<'_, F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    fn exhausted(&self) -> bool {
        self.evals >= self.max
    }
}

/// Hooke-Jeeves search from `x0`. Returns the last point and whether the
/// steps shrank below tolerance before the budget ran out.
fn hooke_jeeves<F: Fn(&[f64]) -> f64>(budget: &mut Budget<'_, F>, x0: &[f64], tol: f64) -> (Vec<f64>, f64, bool) {
    let mut steps: Vec<f64> = x0.iter().map(|x| 0.5 * (1.0 + libm::fabs(*x))).collect();
    let mut base = x0.to_vec();
    let mut fbase = budget.eval(&base);

    let explore = |budget: &mut Budget<'_, F>, from: &[f64], ffrom: f64, steps: &[f64]| {
        let mut x = from.to_vec();
        let mut fx = ffrom;
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + steps[i];
            let up = budget.eval(&x);
            if up < fx {
                fx = up;
                continue;
            }
            x[i] = orig - steps[i];
            let down = budget.eval(&x);
            if down < fx {
                fx = down;
                continue;
            }
            x[i] = orig;
        }
        (x, fx)
    };

    while steps.iter().any(|s| *s >= tol) {
        if budget.exhausted() {
            return (base, fbase, false);
        }
        let (x, fx) = explore(budget, &base, fbase, &steps);
        if fx < fbase {
            // pattern moves along the improving direction while they pay off
            let mut prev = base;
            let mut cur = x;
            let mut fcur = fx;
            loop {
                if budget.exhausted() {
                    break;
                }
                let pattern: Vec<f64> = cur.iter().zip(&prev).map(|(c, p)| 2.0 * c - p).collect();
                let fpat = budget.eval(&pattern);
                let (y, fy) = explore(budget, &pattern, fpat, &steps);
                if fy < fcur {
                    prev = cur;
                    cur = y;
                    fcur = fy;
                } else {
                    break;
                }
            }
            base = cur;
            fbase = fcur;
        } else {
            for s in steps.iter_mut() {
                *s *= 0.5;
            }
        }
    }
    (base, fbase, true)
}

/// Minimizes `f` by Hooke-Jeeves from `x0` and from `restarts` seeded random
/// points around it, keeping the best result. Fails only if no run
/// converged, reporting the best point seen.
pub fn pattern_search<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], opts: &SearchOptions) -> Result<SearchResult> {
    if x0.is_empty() || x0.iter().any(|x| !x.is_finite()) {
        return Err(Error::contract("starting point must be nonempty and finite"));
    }
    if !(opts.step_tol > 0.0) {
        return Err(Error::contract("step tolerance must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![x0.to_vec()];
    for _ in 0..opts.restarts {
        starts.push(
            x0.iter()
                .map(|x| x + (2.0 * uniform01(&mut rng) - 1.0) * (1.0 + libm::fabs(*x)))
                .collect(),
        );
    }
    let mut budget = Budget {
        f: &f,
        evals: 0,
        max: opts.max_evals,
    };
    let per_start = opts.max_evals / starts.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut any_converged = false;
    for (r, s) in starts.iter().enumerate() {
        budget.max = per_start * (r + 1);
        let (x, v, ok) = hooke_jeeves(&mut budget, s, opts.step_tol);
        any_converged |= ok;
        if best.as_ref().is_none_or(|(_, bv)| v < *bv) {
            best = Some((x, v));
        }
    }
    let (x, value) = best.expect("at least one start");
    if !any_converged || !value.is_finite() {
        return Err(Error::NonConvergence {
            iterations: budget.evals,
            objective: value,
            best: x,
        });
    }
    Ok(SearchResult {
        x,
        value,
        evaluations: budget.evals,
    })
}

/// A sample held as its empirical law plus the number of draws behind it.
/// An exact law with a nominal `n` can stand in for an infinitely large
/// sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub law: DiscreteLaw,
    pub n: usize,
}

impl WeightedSample {
    pub fn from_set(sample: &SampleSet) -> Result<Self> {
        Ok(Self {
            law: empirical_law(sample)?,
            n: sample.len(),
        })
    }

    pub fn weighted(law: DiscreteLaw, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::contract("sample size must be at least 1"));
        }
        Ok(Self { law, n })
    }
}

/// `m̄_n(θ)`: per block and per observed `X^(j)` cell, `E_n[g_j 1_c]`.
fn cell_moments(model: &MomentModel, law: &DiscreteLaw, parts: &[crate::probability::Partition], theta: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (j, part) in parts.iter().enumerate() {
        let p = model.block(j).output_dim();
        let mut sums = vec![0.0; part.len() * p];
        for (i, z) in law.support().iter().enumerate() {
            let g = model.eval_block(j, z, theta)?;
            let c = part.cell_of(i);
            for r in 0..p {
                sums[c * p + r] += law.prob(i) * g[r];
            }
        }
        out.extend(sums);
    }
    Ok(out)
}

fn objective_or_inf(r: Result<f64>) -> f64 {
    r.unwrap_or(f64::INFINITY)
}

/// Minimizes `|m̄_n(θ)|²` over cell-indicator moments with identity weight.
pub fn preliminary_estimator(
    model: &MomentModel,
    sample: &WeightedSample,
    theta_init: &[f64],
    opts: &SearchOptions,
) -> Result<ParamPoint> {
    Ok(ParamPoint::new(preliminary_search(model, sample, theta_init, opts)?.x)?)
}

fn preliminary_search(
    model: &MomentModel,
    sample: &WeightedSample,
    theta_init: &[f64],
    opts: &SearchOptions,
) -> Result<SearchResult> {
    let d = model.param_dim();
    if theta_init.len() != d {
        return Err(Error::contract(format!("starting point has {} entries, θ has {d}", theta_init.len())));
    }
    if sample.n < 10 * d {
        return Err(Error::contract(format!(
            "sample of {} is too small for {d} parameters (need at least {})",
            sample.n,
            10 * d
        )));
    }
    model.ensure_law(&sample.law)?;
    let law = &sample.law;
    let parts = (0..model.num_blocks())
        .map(|j| law.partition(&model.block(j).cond_vars))
        .collect::<Result<Vec<_>>>()?;
    // surface evaluation errors at the start instead of hiding them as +inf
    cell_moments(model, law, &parts, theta_init)?;
    pattern_search(
        |th| objective_or_inf(cell_moments(model, law, &parts, th).map(|m| m.iter().map(|v| v * v).sum())),
        theta_init,
        opts,
    )
}

/// Estimated instruments with a fallback for cells the sample never saw.
#[derive(Debug, Clone, PartialEq)]
pub struct PlugInField {
    pub field: ScoreField,
    /// Single-block `ρ` projections on the same cells, used for unseen
    /// cells.
    pub fallback: ScoreField,
    pub iterations: usize,
    pub converged: bool,
}

impl PlugInField {
    /// `â_j` at `z`; unseen cells take the fallback entry of the nearest
    /// populated cell (Euclidean in `X^(j)`, ties to the lexicographically
    /// smallest cell). The flag tells whether the fallback was used.
    pub fn instrument(&self, j: usize, z: &[f64]) -> (Matrix, bool) {
        if let Some(a) = self.field.instrument(j, z) {
            return (a.clone(), false);
        }
        let t = self.fallback.block(j);
        let part = t.partition();
        let x: Vec<f64> = part.cond_vars().iter().map(|&c| z[c]).collect();
        let mut best: Option<(f64, usize)> = None;
        for k in 0..part.len() {
            let v = part.values(k);
            let d: f64 = v.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
            let better = match best {
                None => true,
                Some((bd, bk)) => d < bd || (d == bd && cmp_points(v, part.values(bk)).is_lt()),
            };
            if better {
                best = Some((d, k));
            }
        }
        let k = best.expect("partitions are nonempty").1;
        (t.entry(k).clone(), true)
    }

    pub fn num_blocks(&self) -> usize {
        self.field.num_blocks()
    }

    pub fn rows(&self) -> usize {
        self.field.rows()
    }
}

fn fallback_field(model: &MomentModel, law: &DiscreteLaw, theta: &[f64]) -> Result<(ExactMoments, ScoreField)> {
    let em = ExactMoments::new(model, law, theta, true)?;
    let rho = rho_field(&em);
    Ok((em, rho))
}

/// Backfitting on the empirical law, blocks recentred at `theta_tilde`, for
/// at most `m_star` iterations.
pub fn plug_in_score_field(
    model: &MomentModel,
    sample: &WeightedSample,
    theta_tilde: &[f64],
    m_star: usize,
) -> Result<PlugInField> {
    if theta_tilde.iter().any(|t| !t.is_finite()) {
        return Err(Error::contract("preliminary estimate is not finite"));
    }
    let (em, fallback) = fallback_field(model, &sample.law, theta_tilde)?;
    let (field, trace) = backfit_solve_moments(&em, &sample.law, crate::efficient_score::DEFAULT_TOL, m_star)?;
    Ok(PlugInField {
        field,
        fallback,
        iterations: trace.iterations,
        converged: trace.converged,
    })
}

/// The missing-data counterpart: contraction for `â1` at `alpha_tilde`,
/// then `â2 = −E_n[â1 ρ | W]`. `model` is the observational model of
/// `spec`.
pub fn plug_in_missing_field(
    spec: &MissingDataSpec,
    model: &MomentModel,
    sample: &WeightedSample,
    alpha_tilde: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<PlugInField> {
    if alpha_tilde.iter().any(|t| !t.is_finite()) {
        return Err(Error::contract("preliminary estimate is not finite"));
    }
    let (_, fallback) = fallback_field(model, &sample.law, alpha_tilde)?;
    let (a1, trace) = contraction_solve_at(spec, &sample.law, alpha_tilde, tol, max_iter)?;
    let a2 = a2_at(spec, &sample.law, alpha_tilde, &a1)?;
    Ok(PlugInField {
        field: ScoreField::new(vec![a1, a2])?,
        fallback,
        iterations: trace.iterations,
        converged: trace.converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationSteps {
    pub preliminary: ParamPoint,
    pub preliminary_objective: f64,
    /// Backfitting or contraction iterations behind the instruments.
    pub m_star_used: usize,
    pub objective_at_preliminary: f64,
    pub final_objective: f64,
    pub evaluations: usize,
    /// Sample points whose instruments came from the fallback.
    pub fallback_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub theta_hat: ParamPoint,
    pub steps: EstimationSteps,
    pub variance_estimate: Matrix,
}

struct ScoreSystem {
    /// `â_j(x_i^(j))` per sample point and block.
    instruments: Vec<Vec<Matrix>>,
    fallback_points: usize,
}

impl ScoreSystem {
    fn new(model: &MomentModel, law: &DiscreteLaw, field: &PlugInField) -> Result<Self> {
        if field.num_blocks() != model.num_blocks() {
            return Err(Error::contract(format!(
                "field has {} blocks, model has {}",
                field.num_blocks(),
                model.num_blocks()
            )));
        }
        let mut fallback_points = 0;
        let instruments = law
            .support()
            .iter()
            .map(|z| {
                let row: Vec<Matrix> = (0..model.num_blocks())
                    .map(|j| {
                        let (a, fb) = field.instrument(j, z);
                        fallback_points += usize::from(fb);
                        a
                    })
                    .collect();
                row
            })
            .collect();
        Ok(Self {
            instruments,
            fallback_points,
        })
    }

    fn scores(&self, model: &MomentModel, law: &DiscreteLaw, theta: &[f64], rows: usize) -> Result<Vec<DVector<f64>>> {
        law.support()
            .iter()
            .zip(&self.instruments)
            .map(|(z, a)| {
                let mut s = DVector::zeros(rows);
                for (j, aj) in a.iter().enumerate() {
                    s += aj * model.eval_block(j, z, theta)?;
                }
                Ok(s)
            })
            .collect()
    }

    fn objective(&self, model: &MomentModel, law: &DiscreteLaw, theta: &[f64], rows: usize) -> Result<f64> {
        let s = self.scores(model, law, theta, rows)?;
        let mean = s
            .iter()
            .zip(law.probs())
            .fold(DVector::zeros(rows), |acc, (v, p)| acc + v * *p);
        Ok(mean.norm_squared())
    }
}

/// Minimizes `|E_n[Σ_j â_j g_j(θ)]|²` from `theta_init` (normally the
/// preliminary estimate). The variance estimate is `pinv(E_n[S̄S̄'])/n` at
/// the solution.
pub fn efficient_gmm_solve(
    model: &MomentModel,
    sample: &WeightedSample,
    field: &PlugInField,
    theta_init: &[f64],
    opts: &SearchOptions,
) -> Result<EstimationResult> {
    let d = model.param_dim();
    if theta_init.len() != d {
        return Err(Error::contract(format!("starting point has {} entries, θ has {d}", theta_init.len())));
    }
    if field.rows() != d {
        return Err(Error::contract(format!("instruments have {} rows, θ has {d}", field.rows())));
    }
    let law = &sample.law;
    let sys = ScoreSystem::new(model, law, field)?;
    if sys.instruments.iter().flatten().all(|a| a.iter().all(|v| *v == 0.0)) {
        return Err(Error::Degenerate(String::from(
            "every estimated instrument is zero, so the score equations carry no information",
        )));
    }
    let at_init = sys.objective(model, law, theta_init, d)?;
    let found = pattern_search(
        |th| objective_or_inf(sys.objective(model, law, th, d)),
        theta_init,
        opts,
    )?;
    let scores = sys.scores(model, law, &found.x, d)?;
    let mut second = Matrix::zeros(d, d);
    for (s, p) in scores.iter().zip(law.probs()) {
        second += s * s.transpose() * *p;
    }
    let variance = numerics::pinv(&numerics::symmetrize(&second), DEFAULT_PINV_TOL)? / sample.n as f64;
    Ok(EstimationResult {
        theta_hat: ParamPoint::new(found.x)?,
        steps: EstimationSteps {
            preliminary: ParamPoint::new(theta_init.to_vec())?,
            preliminary_objective: f64::NAN,
            m_star_used: field.iterations,
            objective_at_preliminary: at_init,
            final_objective: found.value,
            evaluations: found.evaluations,
            fallback_points: sys.fallback_points,
        },
        variance_estimate: numerics::symmetrize(&variance),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationOptions {
    pub search: SearchOptions,
    pub m_star: usize,
    /// Tolerance and cap for the missing-data contraction.
    pub contraction_tol: f64,
    pub contraction_max_iter: usize,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            search: SearchOptions::default(),
            m_star: DEFAULT_M_STAR,
            contraction_tol: crate::efficient_score::DEFAULT_TOL,
            contraction_max_iter: crate::efficient_score::DEFAULT_MAX_ITER,
        }
    }
}

/// What is being estimated: a general model, or the observational model of
/// a missing-data specification (whose instruments come from the
/// contraction).
#[derive(Debug, Clone)]
pub enum Target {
    Model(MomentModel),
    Missing { spec: MissingDataSpec, model: MomentModel },
}

impl Target {
    pub fn missing(spec: MissingDataSpec) -> Result<Self> {
        let model = build_observational_model(&spec)?;
        Ok(Target::Missing { spec, model })
    }

    pub fn model(&self) -> &MomentModel {
        match self {
            Target::Model(m) | Target::Missing { model: m, .. } => m,
        }
    }

    /// Exact information at the truth.
    pub fn information(&self, law: &DiscreteLaw) -> Result<Matrix> {
        match self {
            Target::Model(m) => {
                let th = m.theta0().to_vec();
                let (field, _) = crate::efficient_score::backfit_solve(
                    m,
                    law,
                    &th,
                    crate::efficient_score::DEFAULT_TOL,
                    crate::efficient_score::DEFAULT_MAX_ITER,
                )?;
                efficient_information(law, m, &th, &field)
            }
            Target::Missing { spec, model } => {
                let (field, _) = efficient_field(
                    spec,
                    law,
                    crate::efficient_score::DEFAULT_TOL,
                    crate::efficient_score::DEFAULT_MAX_ITER,
                )?;
                efficient_information(law, model, &spec.alpha0, &field)
            }
        }
    }
}

/// The full three-step recipe.
pub fn estimate(
    target: &Target,
    sample: &WeightedSample,
    theta_init: &[f64],
    opts: &EstimationOptions,
) -> Result<EstimationResult> {
    let model = target.model();
    let pre = preliminary_search(model, sample, theta_init, &opts.search)?;
    let field = match target {
        Target::Model(m) => plug_in_score_field(m, sample, &pre.x, opts.m_star)?,
        Target::Missing { spec, model } => plug_in_missing_field(
            spec,
            model,
            sample,
            &pre.x,
            opts.contraction_tol,
            opts.contraction_max_iter,
        )?,
    };
    let mut res = efficient_gmm_solve(model, sample, &field, &pre.x, &opts.search)?;
    res.steps.preliminary_objective = pre.value;
    Ok(res)
}

/// One SplitMix64 output; used to derive replication seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn replication_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(index as u64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub index: usize,
    pub preliminary: Vec<f64>,
    pub efficient: Vec<f64>,
    pub m_star_used: usize,
}

/// Replication `index`: draws `n` points with its derived seed and runs both
/// estimators, starting from the true parameter.
pub fn replicate(target: &Target, law: &DiscreteLaw, n: usize, seed: u64, index: usize, opts: &EstimationOptions) -> Result<Replication> {
    let rs = replication_seed(seed, index);
    let sample = WeightedSample::from_set(&sample_from(law, n, rs)?)?;
    let mut o = opts.clone();
    o.search.seed = rs;
    let theta0 = target.model().theta0().to_vec();
    let res = estimate(target, &sample, &theta0, &o)?;
    Ok(Replication {
        index,
        preliminary: res.steps.preliminary.into_vec(),
        efficient: res.theta_hat.into_vec(),
        m_star_used: res.steps.m_star_used,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub mean: Vec<f64>,
    /// Empirical covariance with denominator `R − 1`.
    pub covariance: Matrix,
    /// Per coordinate, mean of `(θ̂ − θ0)²`.
    pub mse: Vec<f64>,
    /// Monte Carlo standard error of the covariance trace.
    pub trace_se: f64,
}

impl EstimatorSummary {
    fn from_draws(draws: &[&[f64]], theta0: &[f64]) -> Self {
        let r = draws.len() as f64;
        let d = theta0.len();
        let mut mean = vec![0.0; d];
        for x in draws {
            for k in 0..d {
                mean[k] += x[k] / r;
            }
        }
        let mut cov = Matrix::zeros(d, d);
        let mut mse = vec![0.0; d];
        let mut sq = Vec::with_capacity(draws.len());
        for x in draws {
            let dev = DVector::from_fn(d, |k, _| x[k] - mean[k]);
            cov += &dev * dev.transpose();
            sq.push(dev.norm_squared());
            for k in 0..d {
                mse[k] += (x[k] - theta0[k]) * (x[k] - theta0[k]) / r;
            }
        }
        cov /= r - 1.0;
        let sq_mean = sq.iter().sum::<f64>() / r;
        let sq_var = sq.iter().map(|q| (q - sq_mean) * (q - sq_mean)).sum::<f64>() / (r - 1.0);
        Self {
            mean,
            covariance: numerics::symmetrize(&cov),
            mse,
            trace_se: libm::sqrt(sq_var / r),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub replications: usize,
    pub n: usize,
    pub seed: u64,
    pub theta0: Vec<f64>,
    pub successes: usize,
    /// `(replication index, error message)` for each failed replication.
    pub failures: Vec<(usize, String)>,
    /// More than 5% of the replications failed.
    pub invalid: bool,
    pub low_replication_warning: bool,
    pub preliminary: EstimatorSummary,
    pub efficient: EstimatorSummary,
    /// `pinv(I)/n` with `I` the exact information.
    pub reference: Matrix,
    pub mean_m_star: f64,
}

impl MonteCarloReport {
    /// `tr Σ_eff ≤ tr Σ_pre + 3` MC standard errors of the difference.
    pub fn trace_dominance(&self) -> bool {
        let (e, p) = (self.efficient.trace_se, self.preliminary.trace_se);
        let se = libm::sqrt(e * e + p * p);
        self.efficient.covariance.trace() <= self.preliminary.covariance.trace() + 3.0 * se
    }
}

/// Summarizes replications collected in index order. Failed replications
/// are counted and excluded.
pub fn aggregate(
    outcomes: Vec<Result<Replication>>,
    n: usize,
    seed: u64,
    theta0: &[f64],
    reference: Matrix,
) -> Result<MonteCarloReport> {
    let r = outcomes.len();
    if r < 2 {
        return Err(Error::contract(format!("need at least 2 replications, got {r}")));
    }
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(rep) => ok.push(rep),
            Err(e) => failures.push((i, format!("{e}"))),
        }
    }
    if ok.len() < 2 {
        return Err(Error::Degenerate(format!(
            "only {} of {r} replications succeeded",
            ok.len()
        )));
    }
    let pre: Vec<&[f64]> = ok.iter().map(|x| x.preliminary.as_slice()).collect();
    let eff: Vec<&[f64]> = ok.iter().map(|x| x.efficient.as_slice()).collect();
    let mean_m_star = ok.iter().map(|x| x.m_star_used as f64).sum::<f64>() / ok.len() as f64;
    Ok(MonteCarloReport {
        replications: r,
        n,
        seed,
        theta0: theta0.to_vec(),
        successes: ok.len(),
        invalid: failures.len() as f64 > MAX_FAILURE_SHARE * r as f64,
        failures,
        low_replication_warning: r < LOW_REPLICATION_THRESHOLD,
        preliminary: EstimatorSummary::from_draws(&pre, theta0),
        efficient: EstimatorSummary::from_draws(&eff, theta0),
        reference,
        mean_m_star,
    })
}

/// `pinv(I)/n` for the report.
pub fn reference_covariance(target: &Target, law: &DiscreteLaw, n: usize) -> Result<Matrix> {
    Ok(numerics::pinv(&target.information(law)?, DEFAULT_PINV_TOL)? / n as f64)
}

/// Sequential Monte Carlo; the `condmom` crate runs the same replications in
/// parallel and calls [`aggregate`].
pub fn monte_carlo(
    target: &Target,
    law: &DiscreteLaw,
    n: usize,
    replications: usize,
    seed: u64,
    opts: &EstimationOptions,
) -> Result<MonteCarloReport> {
    if replications < 2 {
        return Err(Error::contract(format!("need at least 2 replications, got {replications}")));
    }
    target.model().ensure_law(law)?;
    let reference = reference_covariance(target, law, n)?;
    let outcomes = (0..replications)
        .map(|r| replicate(target, law, n, seed, r, opts))
        .collect();
    aggregate(outcomes, n, seed, &target.model().theta0().to_vec(), reference)
}
