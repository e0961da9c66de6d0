//! Monte Carlo with replications spread over the rayon pool. Replication
//! `r` always uses the same derived seed, and results are aggregated in
//! index order, so the report does not depend on the thread count.

use condmom_core::estimation::{aggregate, reference_covariance, replicate, EstimationOptions, MonteCarloReport, Target};
use condmom_core::probability::DiscreteLaw;
use condmom_core::{Error, Result};
use rayon::prelude::*;

pub fn monte_carlo_parallel(
    target: &Target,
    law: &DiscreteLaw,
    n: usize,
    replications: usize,
    seed: u64,
    opts: &EstimationOptions,
) -> Result<MonteCarloReport> {
    if replications < 2 {
        return Err(Error::Contract(format!("need at least 2 replications, got {replications}")));
    }
    target.model().ensure_law(law)?;
    let reference = reference_covariance(target, law, n)?;
    let outcomes: Vec<Result<_>> = (0..replications)
        .into_par_iter()
        .map(|r| replicate(target, law, n, seed, r, opts))
        .collect();
    aggregate(outcomes, n, seed, target.model().theta0(), reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use condmom_core::dgp;
    use condmom_core::estimation::monte_carlo;

    #[test]
    fn parallel_matches_sequential() {
        let a = dgp::dgp_a();
        let t = Target::Model(a.model.clone());
        let opts = EstimationOptions::default();
        let par = monte_carlo_parallel(&t, &a.law, 300, 8, 4, &opts).unwrap();
        let seq = monte_carlo(&t, &a.law, 300, 8, 4, &opts).unwrap();
        assert_eq!(par, seq);
    }
}
