//! One function per task; each turns a resolved design into a [`Report`].

use condmom_core::efficient_score::{
    backfit_solve, chamberlain_score, efficient_information, fixed_point_residual, oracle_projection,
    sequential_closed_form, ScoreField,
};
use condmom_core::estimation::{estimate, EstimationOptions, WeightedSample};
use condmom_core::infobound::info_bound_sequence;
use condmom_core::instruments::{default_family, polynomial_family, InstrumentFamily};
use condmom_core::missing_data::{efficient_field, parametric_selection_score, Selection};
use condmom_core::model::ExactMoments;
use condmom_core::numerics::{loewner_geq, spectral_norm};
use condmom_core::probability::sample_from;
use condmom_core::Matrix;

use crate::config::{Design, ExperimentConfig, Task};
use crate::error::{CliError, Result};
use crate::mc::monte_carlo_parallel;
use crate::report::Report;

/// Eigenvalue slack for the monotonicity flag of a bound report.
pub const MONOTONE_EIG_TOL: f64 = 1e-10;

pub fn run_task(cfg: &ExperimentConfig, design: &Design) -> Result<Report> {
    let mut rep = Report::new(cfg.task.name(), &design.name, cfg.seed);
    match cfg.task {
        Task::Bound => bound(cfg, design, &mut rep)?,
        Task::Score => match cfg.params.method.as_str() {
            "oracle" => oracle(design, &mut rep)?,
            "sequential" => sequential(design, &mut rep)?,
            "chamberlain" => chamberlain(design, &mut rep)?,
            _ => backfit(cfg, design, &mut rep)?,
        },
        Task::Oracle => oracle(design, &mut rep)?,
        Task::Missing => missing(cfg, design, &mut rep)?,
        Task::Estimate => estimate_task(cfg, design, &mut rep)?,
        Task::Mc => mc(cfg, design, &mut rep)?,
    }
    Ok(rep)
}

fn family(cfg: &ExperimentConfig, design: &Design) -> InstrumentFamily {
    match cfg.params.instruments.as_str() {
        "polynomial" => {
            let coords: Vec<usize> = (0..design.law.dim()).collect();
            polynomial_family(&coords, cfg.params.degree)
        }
        _ => default_family(&design.law),
    }
}

fn theta0(design: &Design) -> Vec<f64> {
    design.model().theta0().to_vec()
}

fn bound(cfg: &ExperimentConfig, design: &Design, rep: &mut Report) -> Result<()> {
    let fam = family(cfg, design);
    let k_max = cfg.params.k_max.unwrap_or(fam.len());
    let seq = info_bound_sequence(design.model(), &design.law, &theta0(design), &fam, k_max, cfg.params.stop_tol)?;
    rep.tolerance("stop_tol", cfg.params.stop_tol);
    rep.tolerance("monotone_eig_tol", MONOTONE_EIG_TOL);
    rep.note("instruments", fam.kind.name());
    rep.note("stop_rule", "two consecutive increments with spectral norm below stop_tol");
    let mut monotone = true;
    let mut gaps = Vec::new();
    for w in seq.entries.windows(2) {
        monotone &= loewner_geq(&w[1].1, &w[0].1, MONOTONE_EIG_TOL)?;
        gaps.push(spectral_norm(&(&w[1].1 - &w[0].1)));
    }
    for (k, m) in &seq.entries {
        rep.matrix(&format!("I_k[{k:03}]"), m);
    }
    rep.matrix("information", seq.last());
    rep.series("gaps", gaps);
    rep.scalar("family_size", fam.len() as f64);
    rep.scalar("k_max", k_max as f64);
    rep.scalar("final_gap", seq.final_gap);
    if let Some(k) = seq.converged_at {
        rep.scalar("converged_at", k as f64);
    }
    rep.flag("converged", seq.converged_at.is_some());
    rep.flag("monotone", monotone);
    rep.flag("any_degenerate", seq.degenerate.iter().any(|d| *d));
    Ok(())
}

fn with_information(design: &Design, rep: &mut Report, field: &ScoreField) -> Result<()> {
    let info = efficient_information(&design.law, design.model(), &theta0(design), field)?;
    rep.matrix("information", &info);
    rep.field("a", field);
    Ok(())
}

fn backfit(cfg: &ExperimentConfig, design: &Design, rep: &mut Report) -> Result<()> {
    let th = theta0(design);
    let (field, trace) = backfit_solve(design.model(), &design.law, &th, cfg.params.tol, cfg.params.max_iter)?;
    let em = ExactMoments::new(design.model(), &design.law, &th, false)?;
    let resid = fixed_point_residual(&em, &design.law, &field)?;
    rep.tolerance("tol", cfg.params.tol);
    rep.scalar("max_iter", cfg.params.max_iter as f64);
    rep.note("method", "backfit");
    rep.series("increments", trace.increments.clone());
    rep.series("fixed_point_residual", resid);
    rep.scalar("iterations", trace.iterations as f64);
    rep.flag("converged", trace.converged);
    rep.flag("blocks_settled", trace.blocks_settled(cfg.params.tol));
    with_information(design, rep, &field)
}

fn oracle(design: &Design, rep: &mut Report) -> Result<()> {
    let field = oracle_projection(design.model(), &design.law, &theta0(design))?;
    rep.note("method", "oracle");
    with_information(design, rep, &field)
}

fn sequential(design: &Design, rep: &mut Report) -> Result<()> {
    let form = sequential_closed_form(design.model(), &design.law, &theta0(design))?;
    rep.note("method", "sequential");
    rep.field("c", &ScoreField::new(vec![form.coefficient.clone()]).map_err(CliError::from)?);
    with_information(design, rep, &form.original)
}

fn chamberlain(design: &Design, rep: &mut Report) -> Result<()> {
    let field = chamberlain_score(design.model(), &design.law, &theta0(design))?;
    rep.note("method", "chamberlain");
    with_information(design, rep, &field)
}

fn missing(cfg: &ExperimentConfig, design: &Design, rep: &mut Report) -> Result<()> {
    let spec = design.missing_spec().expect("resolve checks the design");
    let (field, trace) = efficient_field(spec, &design.law, cfg.params.tol, cfg.params.max_iter)?;
    rep.tolerance("tol", cfg.params.tol);
    rep.note("variant", spec.variant.name());
    rep.note("selection", spec.selection.name());
    rep.series("increments", trace.increments.clone());
    rep.series("ratios", trace.ratios.clone());
    rep.scalar("beta", trace.beta);
    rep.scalar("residual", trace.residual);
    rep.scalar("iterations", trace.iterations as f64);
    rep.scalar("max_ratio", trace.ratios.iter().cloned().fold(0.0, f64::max));
    rep.flag("converged", trace.converged);
    with_information(design, rep, &field)?;
    if matches!(spec.selection, Selection::Logistic { .. }) {
        let scores = parametric_selection_score(spec, &design.law, cfg.params.tol, cfg.params.max_iter)?;
        let model = design.model();
        let th = theta0(design);
        let mut cross = Matrix::zeros(scores.alpha.rows(), scores.gamma.rows());
        let mut info_g = Matrix::zeros(scores.gamma.rows(), scores.gamma.rows());
        for (i, z) in design.law.support().iter().enumerate() {
            let sa = scores.alpha.score_at(model, z, &th)?;
            let sg = scores.gamma.score_at(model, z, &th)?;
            cross += &sa * sg.transpose() * design.law.prob(i);
            info_g += &sg * sg.transpose() * design.law.prob(i);
        }
        rep.field("b", &scores.gamma);
        rep.matrix("cross_alpha_gamma", &cross);
        rep.matrix("information_gamma", &info_g);
        rep.scalar("cross_norm", spectral_norm(&cross));
    }
    Ok(())
}

fn estimation_options(cfg: &ExperimentConfig) -> EstimationOptions {
    let mut o = EstimationOptions {
        m_star: cfg.params.m_star,
        contraction_tol: cfg.params.tol,
        contraction_max_iter: cfg.params.max_iter,
        ..EstimationOptions::default()
    };
    o.search.seed = cfg.seed;
    o
}

fn estimate_task(cfg: &ExperimentConfig, design: &Design, rep: &mut Report) -> Result<()> {
    let sample = WeightedSample::from_set(&sample_from(&design.law, cfg.params.n, cfg.seed)?)?;
    let opts = estimation_options(cfg);
    let res = estimate(&design.target, &sample, &theta0(design), &opts)?;
    rep.tolerance("step_tol", opts.search.step_tol);
    rep.scalar("n", cfg.params.n as f64);
    rep.scalar("m_star", opts.m_star as f64);
    rep.scalar("m_star_used", res.steps.m_star_used as f64);
    rep.scalar("preliminary_objective", res.steps.preliminary_objective);
    rep.scalar("objective_at_preliminary", res.steps.objective_at_preliminary);
    rep.scalar("final_objective", res.steps.final_objective);
    rep.scalar("fallback_points", res.steps.fallback_points as f64);
    rep.series("theta0", theta0(design));
    rep.series("preliminary", res.steps.preliminary.to_vec());
    rep.series("theta_hat", res.theta_hat.to_vec());
    rep.matrix("variance_estimate", &res.variance_estimate);
    Ok(())
}

fn mc(cfg: &ExperimentConfig, design: &Design, rep: &mut Report) -> Result<()> {
    let opts = estimation_options(cfg);
    let r = monte_carlo_parallel(&design.target, &design.law, cfg.params.n, cfg.params.replications, cfg.seed, &opts)?;
    rep.tolerance("step_tol", opts.search.step_tol);
    rep.tolerance("max_failure_share", condmom_core::estimation::MAX_FAILURE_SHARE);
    rep.scalar("n", r.n as f64);
    rep.scalar("replications", r.replications as f64);
    rep.scalar("successes", r.successes as f64);
    rep.scalar("failures", r.failures.len() as f64);
    rep.scalar("mean_m_star", r.mean_m_star);
    rep.scalar("preliminary_trace_se", r.preliminary.trace_se);
    rep.scalar("efficient_trace_se", r.efficient.trace_se);
    rep.scalar(
        "efficient_to_reference_trace",
        r.efficient.covariance.trace() / r.reference.trace(),
    );
    rep.series("theta0", r.theta0.clone());
    rep.series("preliminary_mean", r.preliminary.mean.clone());
    rep.series("efficient_mean", r.efficient.mean.clone());
    rep.series("preliminary_mse", r.preliminary.mse.clone());
    rep.series("efficient_mse", r.efficient.mse.clone());
    rep.matrix("preliminary_covariance", &r.preliminary.covariance);
    rep.matrix("efficient_covariance", &r.efficient.covariance);
    rep.matrix("reference", &r.reference);
    rep.flag("invalid", r.invalid);
    rep.flag("low_replication_warning", r.low_replication_warning);
    rep.flag("trace_dominance", r.trace_dominance());
    if !r.failures.is_empty() {
        let msgs: Vec<String> = r.failures.iter().map(|(i, m)| format!("{i}: {m}")).collect();
        rep.note("failures", msgs.join("; "));
    }
    Ok(())
}
