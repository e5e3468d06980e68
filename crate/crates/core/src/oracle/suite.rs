use rand::Rng;

use super::{
    bayes_identity, buffer_monotonicity, lfo_identity, maxent_equivalence, PolicyUpdate,
    TabularMdp, TabularPolicy,
};
use crate::envs::episode_rng;
use crate::error::Result;

/// Outcome of one identity over a set of random instances.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityRow {
    pub identity: &'static str,
    pub instances: usize,
    pub worst_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Debug dump of the first failing instance.
    pub failure: Option<String>,
}

impl IdentityRow {
    pub const CSV_HEADER: &'static str = "identity,instances,worst_residual,tolerance,passed";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:e},{:e},{}",
            self.identity, self.instances, self.worst_residual, self.tolerance, self.passed
        )
    }
}

struct Tally {
    row: IdentityRow,
}

impl Tally {
    fn new(identity: &'static str, tolerance: f64) -> Self {
        Self {
            row: IdentityRow {
                identity,
                instances: 0,
                worst_residual: 0.0,
                tolerance,
                passed: true,
                failure: None,
            },
        }
    }

    fn record(&mut self, residual: f64, dump: impl FnOnce() -> String) {
        let r = &mut self.row;
        r.instances += 1;
        r.worst_residual = r.worst_residual.max(residual);
        if !(residual <= r.tolerance) {
            r.passed = false;
            if r.failure.is_none() {
                r.failure = Some(dump());
            }
        }
    }
}

/// Checks the Bayes, LfO, max-entropy and buffer-monotonicity identities on
/// `instances` random problems each. Instance `i` is generated from stream
/// `i` of `seed`, so any failure can be regenerated on its own.
pub fn run_suite(instances: usize, seed: u64) -> Result<Vec<IdentityRow>> {
    let mut bayes = Tally::new("bayes", 1e-10);
    let mut lfo = Tally::new("lfo", 1e-8);
    let mut maxent = Tally::new("maxent", 1e-8);
    let mut mono = Tally::new("monotonicity", 1e-10);
    for i in 0..instances {
        let mut rng = episode_rng(seed, i);
        let n = rng.random_range(2..=6);
        let m = rng.random_range(2..=4);
        let horizon = rng.random_range(1..=5);
        let mdp = TabularMdp::random(&mut rng, n, m, horizon)?;
        let pa = TabularPolicy::random(&mut rng, n, m);
        let pb = TabularPolicy::random(&mut rng, n, m);
        let dump = |extra: &str| {
            format!("instance {i} (seed {seed}): {mdp:?}\npolicy {pa:?}\nother {pb:?}\n{extra}")
        };

        let r = bayes_identity(&mdp, &pa)?;
        bayes.record(r, || dump(""));

        let lfo_mdp = TabularMdp {
            horizon: 4,
            ..mdp.clone()
        };
        let rep = lfo_identity(&lfo_mdp, &pa, &pb)?;
        lfo.record(rep.residual, || dump(&format!("{rep:?}")));

        let rep = maxent_equivalence(&mdp, &pa, &pb, None)?;
        maxent.record(rep.residual, || dump(&format!("{rep:?}")));

        let mono_mdp = TabularMdp::random(&mut rng, 4, m, horizon.max(2))?;
        let alpha = rng.random_range(0.2..=1.0);
        let expert = TabularPolicy::random(&mut rng, 4, m);
        let initial = TabularPolicy::random(&mut rng, 4, m);
        let rep = buffer_monotonicity(
            &mono_mdp,
            &expert,
            &initial,
            10,
            alpha,
            PolicyUpdate::ExactImprovement,
        )?;
        let worst = rep.max_increase.max(rep.max_nll_increase).max(0.0);
        mono.record(worst, || {
            format!("instance {i} (seed {seed}), alpha {alpha}: {mono_mdp:?}\n{rep:?}")
        });
    }
    Ok(vec![bayes.row, lfo.row, maxent.row, mono.row])
}
