//! The invariant suite run by `dshare verify`: deterministic, one line per
//! check.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    aicardi_preconditions, check_aicardi_degenerate, check_one_step_factorization, concavity_probe,
    conditionals, kurtaran_witness_search, random_belief, verify_witness, KurtaranOutcome, PHI_GAP,
    PHI_MATCH,
};
use crate::coordinator::{
    alpha_backup, belief_update_all, extract_design, solve_dp, state_count, value_at, AlphaLimits,
    Limits, Solution,
};
use crate::error::{Error, Result};
use crate::evaluate::{brute_force_optimum, design_count, exact_cost, simulate, Stop};
use crate::fmt_num;
use crate::histories::{profile_count, Design, GammaProfile, TableDesign};
use crate::model::Model;
use crate::second_form::{
    advance_state, extract_design2, h_map, initial_state, solve_dp2, Solution2,
};

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub limits: Limits,
    pub max_designs: u128,
    pub max_paths: usize,
    /// Concavity and alpha-envelope samples per time.
    pub samples: usize,
    pub seed: u64,
    pub episodes: usize,
    pub random_designs: usize,
    pub max_evaluations: usize,
    pub alpha: AlphaLimits,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            limits: Limits::default(),
            max_designs: 100_000,
            max_paths: 2_000_000,
            samples: 100,
            seed: 7,
            episodes: 20_000,
            random_designs: 3,
            max_evaluations: 2_000_000,
            alpha: AlphaLimits::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
    Budget,
}

impl Status {
    fn label(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
            Status::Budget => "BUDGET",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub header: String,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn budget_exceeded(&self) -> bool {
        self.checks.iter().any(|c| c.status == Status::Budget)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.header);
        for c in &self.checks {
            let _ = writeln!(out, "{} {}: {}", c.status.label(), c.name, c.detail);
        }
        let failed = self
            .checks
            .iter()
            .filter(|c| c.status == Status::Fail)
            .count();
        let _ = writeln!(out, "{} checks, {} failed", self.checks.len(), failed);
        out
    }
}

fn within(err: f64, tol: f64) -> Status {
    if err <= tol {
        Status::Pass
    } else {
        Status::Fail
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Largest deviation of the recursive `Π_t` from exhaustive Bayes over
/// paths, over every reachable common history; also the number of histories.
pub fn pi_recursion_error(
    model: &Model,
    design: &dyn Design,
    max_paths: usize,
) -> Result<(f64, usize)> {
    let mut err: f64 = 0.0;
    let mut count = 0;
    for t in 1..=model.horizon() {
        let direct = conditionals(
            model,
            design,
            t,
            Stop::AfterObs(t),
            state_count(model, t),
            max_paths,
            |p| p.state(model, t),
        )?;
        for (delta, _, want) in direct.iter() {
            let pi = crate::analysis::belief_along(model, design, delta)?;
            err = err.max(max_abs_diff(&pi.p, &want));
            count += 1;
        }
    }
    Ok((err, count))
}

/// `P(X_{t-n} | δ_t)` (the initial law for `t ≤ n`) by exhaustive Bayes.
pub fn direct_theta(
    model: &Model,
    design: &dyn Design,
    t: usize,
    max_paths: usize,
) -> Result<crate::analysis::Conditionals> {
    let back = t.saturating_sub(model.delay());
    conditionals(
        model,
        design,
        t,
        Stop::AfterObs(t),
        model.x_size(),
        max_paths,
        |p| p.xs[back],
    )
}

/// Largest deviation of the recursive `Θ_t` from exhaustive Bayes.
pub fn theta_recursion_error(
    model: &Model,
    design: &dyn Design,
    max_paths: usize,
) -> Result<(f64, usize)> {
    let mut err: f64 = 0.0;
    let mut count = 0;
    for t in 1..=model.horizon() {
        for (delta, _, want) in direct_theta(model, design, t, max_paths)?.iter() {
            let theta = crate::analysis::theta_along(model, delta)?;
            err = err.max(max_abs_diff(&theta.p, &want));
            count += 1;
        }
    }
    Ok((err, count))
}

/// Largest difference of `P(X_{t-n} | δ_t)` between designs at common
/// histories they share; also the number of shared comparisons.
pub fn theta_independence_error(
    model: &Model,
    designs: &[&dyn Design],
    max_paths: usize,
) -> Result<(f64, usize)> {
    let mut err: f64 = 0.0;
    let mut shared = 0;
    for t in 1..=model.horizon() {
        let tables = designs
            .iter()
            .map(|d| direct_theta(model, *d, t, max_paths))
            .collect::<Result<Vec<_>>>()?;
        for (i, a) in tables.iter().enumerate() {
            for b in &tables[i + 1..] {
                for (delta, _, pa) in a.iter() {
                    if let Some((_, pb)) = b.get(delta) {
                        err = err.max(max_abs_diff(&pa, &pb));
                        shared += 1;
                    }
                }
            }
        }
    }
    Ok((err, shared))
}

/// Largest deviation of `h_map(Θ_t, r_t)` from exhaustive Bayes `Π_t`, with
/// `(Θ, r)` advanced along each reachable history under the design.
pub fn h_map_error(model: &Model, design: &dyn Design, max_paths: usize) -> Result<(f64, usize)> {
    let mut err: f64 = 0.0;
    let mut count = 0;
    for t in 1..=model.horizon() {
        let direct = conditionals(
            model,
            design,
            t,
            Stop::AfterObs(t),
            state_count(model, t),
            max_paths,
            |p| p.state(model, t),
        )?;
        for (delta, _, want) in direct.iter() {
            let mut state = initial_state(model);
            for (i, &z) in delta.iter().enumerate() {
                let profile = design.prescription(i + 1, &delta[..i])?;
                state = advance_state(model, &state, &profile, z)?;
            }
            err = err.max(max_abs_diff(&h_map(model, &state)?.p, &want));
            count += 1;
        }
    }
    Ok((err, count))
}

/// Largest `|Σ_z P(z | π, γ) - 1|` over every node of the solved belief
/// graph, under the policy profile, the zero profile and `extra` random
/// profiles per node.
pub fn pz_sum_error(
    model: &Model,
    sol: &Solution,
    extra: usize,
    seed: u64,
) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut err: f64 = 0.0;
    let mut count = 0;
    for t in 1..model.horizon() {
        let total = profile_count(model, t).unwrap_or(u64::MAX);
        for (id, pi) in sol.graph.nodes[t - 1].iter().enumerate() {
            let mut ranks = vec![sol.policy.profiles[t - 1][id], 0];
            ranks.extend((0..extra).map(|_| rng.gen_range(0..total)));
            for r in ranks {
                let profile = GammaProfile::from_rank(model, t, r)?;
                let sum: f64 = belief_update_all(model, pi, &profile)?
                    .iter()
                    .map(|e| e.2)
                    .sum();
                err = err.max((sum - 1.0).abs());
                count += 1;
            }
        }
    }
    Ok((err, count))
}

/// Largest `|min_α α·π - J_t(π)|` at random beliefs.
pub fn alpha_envelope_error(
    model: &Model,
    samples: usize,
    seed: u64,
    limits: AlphaLimits,
    max_evaluations: usize,
) -> Result<(f64, usize)> {
    let sets = alpha_backup(model, limits, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut err: f64 = 0.0;
    let mut count = 0;
    for set in &sets {
        for _ in 0..samples {
            let pi = random_belief(model, set.t, &mut rng);
            let v = value_at(model, &pi, max_evaluations)?;
            err = err.max((set.value(&pi.p) - v).abs());
            count += 1;
        }
    }
    Ok((err, count))
}

struct Suite<'a> {
    model: &'a Model,
    cfg: &'a VerifyConfig,
    checks: Vec<Check>,
}

impl Suite<'_> {
    fn run(&mut self, name: &'static str, f: impl FnOnce() -> Result<(Status, String)>) {
        let (status, detail) = match f() {
            Ok(r) => r,
            Err(e @ Error::Budget { .. }) => (Status::Budget, e.to_string()),
            Err(e @ Error::Precondition(_)) => (Status::Skip, e.to_string()),
            Err(e) => (Status::Fail, e.to_string()),
        };
        self.checks.push(Check {
            name,
            status,
            detail,
        });
    }
}

/// Runs every check that applies to the instance.
pub fn verify(model: &Model, cfg: &VerifyConfig) -> Report {
    let spec = model.spec();
    let header = format!(
        "instance K={} T={} n={} |X|={} |Y|={:?} |U|={:?}",
        spec.controllers, spec.horizon, spec.delay, spec.x_size, spec.y_size, spec.u_size
    );
    let mut suite = Suite {
        model,
        cfg,
        checks: Vec::new(),
    };
    let sol = solve_dp(model, cfg.limits);
    let sol2 = solve_dp2(model, cfg.limits);
    let (sol, sol2) = match (sol, sol2) {
        (Ok(a), Ok(b)) => (a, b),
        (a, b) => {
            let e = a.err().or(b.err()).expect("one program failed");
            let status = if matches!(e, Error::Budget { .. }) {
                Status::Budget
            } else {
                Status::Fail
            };
            suite.checks.push(Check {
                name: "programs",
                status,
                detail: e.to_string(),
            });
            return Report {
                header,
                checks: suite.checks,
            };
        }
    };
    suite.checks.push(Check {
        name: "programs",
        status: Status::Pass,
        detail: format!(
            "first form {} nodes, second form {} nodes",
            sol.graph.node_count(),
            sol2.graph.node_count()
        ),
    });
    run_all(&mut suite, &sol, &sol2);
    Report {
        header,
        checks: suite.checks,
    }
}

fn run_all(suite: &mut Suite<'_>, sol: &Solution, sol2: &Solution2) {
    let model = suite.model;
    let cfg = suite.cfg.clone();
    let d1 = extract_design(model, sol);
    let d2 = extract_design2(model, sol2);
    let mut designs: Vec<Box<dyn Design>> = vec![Box::new(
        TableDesign::constant(model).expect("constant design"),
    )];
    for i in 0..cfg.random_designs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
        designs.push(Box::new(
            TableDesign::random(model, &mut rng).expect("random design"),
        ));
    }
    let mut all: Vec<&dyn Design> = vec![&d1];
    all.extend(designs.iter().map(|d| d.as_ref()));

    suite.run("cross-program", || {
        let gap = (sol.optimal_cost - sol2.optimal_cost).abs();
        Ok((
            within(gap, 1e-9),
            format!(
                "first form {} second form {} gap {}",
                fmt_num(sol.optimal_cost),
                fmt_num(sol2.optimal_cost),
                fmt_num(gap)
            ),
        ))
    });
    suite.run("extraction-first", || {
        let c = exact_cost(model, &d1, cfg.max_paths)?.expected_cost;
        let gap = (c - sol.optimal_cost).abs();
        Ok((
            within(gap, 1e-9),
            format!("exact cost {} gap {}", fmt_num(c), fmt_num(gap)),
        ))
    });
    suite.run("extraction-second", || {
        let c = exact_cost(model, &d2, cfg.max_paths)?.expected_cost;
        let gap = (c - sol2.optimal_cost).abs();
        Ok((
            within(gap, 1e-9),
            format!("exact cost {} gap {}", fmt_num(c), fmt_num(gap)),
        ))
    });
    suite.run("oracle", || {
        match design_count(model) {
            Some(n) if n <= cfg.max_designs => {}
            n => {
                return Ok((
                    Status::Skip,
                    format!(
                        "{} designs exceed the limit {}",
                        n.map_or("more than 2^128".into(), |n| n.to_string()),
                        cfg.max_designs
                    ),
                ))
            }
        }
        let (c, _) = brute_force_optimum(model, cfg.max_designs, cfg.max_paths)?;
        let gap = (c - sol.optimal_cost).abs();
        Ok((
            within(gap, 1e-9),
            format!("brute force {} gap {}", fmt_num(c), fmt_num(gap)),
        ))
    });
    suite.run("belief-recursion", || {
        let mut worst: f64 = 0.0;
        let mut count = 0;
        for d in &all {
            let (e, n) = pi_recursion_error(model, *d, cfg.max_paths)?;
            worst = worst.max(e);
            count += n;
        }
        Ok((
            within(worst, 1e-12),
            format!("{count} histories, max error {}", fmt_num(worst)),
        ))
    });
    suite.run("observation-mass", || {
        let (e, n) = pz_sum_error(model, sol, 2, cfg.seed)?;
        Ok((
            within(e, 1e-12),
            format!("{n} node-profile pairs, max error {}", fmt_num(e)),
        ))
    });
    suite.run("theta-recursion", || {
        let mut worst: f64 = 0.0;
        let mut count = 0;
        for d in &all {
            let (e, n) = theta_recursion_error(model, *d, cfg.max_paths)?;
            worst = worst.max(e);
            count += n;
        }
        Ok((
            within(worst, 1e-12),
            format!("{count} histories, max error {}", fmt_num(worst)),
        ))
    });
    suite.run("theta-design-independence", || {
        let (e, n) = theta_independence_error(model, &all, cfg.max_paths)?;
        Ok((
            within(e, 1e-12),
            format!("{n} shared histories, max difference {}", fmt_num(e)),
        ))
    });
    suite.run("h-map", || {
        let mut worst: f64 = 0.0;
        let mut count = 0;
        for d in all
            .iter()
            .copied()
            .chain(std::iter::once(&d2 as &dyn Design))
        {
            let (e, n) = h_map_error(model, d, cfg.max_paths)?;
            worst = worst.max(e);
            count += n;
        }
        Ok((
            within(worst, 1e-12),
            format!("{count} histories, max error {}", fmt_num(worst)),
        ))
    });
    suite.run("concavity", || {
        let r = concavity_probe(model, cfg.samples, cfg.seed, cfg.max_evaluations)?;
        let status = if r.min_slack >= -1e-9 {
            Status::Pass
        } else {
            Status::Fail
        };
        Ok((
            status,
            format!(
                "{} samples per time, seed {}, min slack {}, violations {}",
                r.samples,
                r.seed,
                fmt_num(r.min_slack),
                r.violations
            ),
        ))
    });
    suite.run("alpha-envelope", || {
        let (e, n) =
            alpha_envelope_error(model, cfg.samples, cfg.seed, cfg.alpha, cfg.max_evaluations)?;
        Ok((
            within(e, 1e-9),
            format!("{n} beliefs, max error {}", fmt_num(e)),
        ))
    });
    suite.run("one-step-factorization", || {
        let alternates: Vec<&dyn Design> = all[1..].to_vec();
        let r = check_one_step_factorization(model, &d1, &alternates, cfg.max_paths)?;
        Ok((
            if r.passed { Status::Pass } else { Status::Fail },
            format!(
                "{} histories, product error {}, independence error {} over {} shared",
                r.histories,
                fmt_num(r.product_error),
                fmt_num(r.independence_error),
                r.shared_histories
            ),
        ))
    });
    suite.run("perfect-subsystems", || {
        aicardi_preconditions(model)?;
        let r = check_aicardi_degenerate(model, &all, cfg.limits, cfg.max_paths)?;
        Ok((
            if r.passed { Status::Pass } else { Status::Fail },
            format!(
                "{} histories, point mass error {}, non-degenerate nodes {}, costs {} and {}",
                r.histories,
                fmt_num(r.point_mass_error),
                r.non_degenerate_nodes,
                fmt_num(r.dp1_cost),
                fmt_num(r.dp2_cost)
            ),
        ))
    });
    suite.run("kurtaran-probe", || {
        let mut witnesses = 0;
        let mut pairs = 0;
        for d in &all {
            match kurtaran_witness_search(model, *d, cfg.max_paths)? {
                KurtaranOutcome::Witness(w) => {
                    let again = verify_witness(
                        model,
                        *d,
                        w.t,
                        &w.delta,
                        &w.delta_prime,
                        w.z,
                        cfg.max_paths,
                    )?;
                    let ok = again.as_ref().map_or(false, |a| {
                        max_abs_diff(&a.phi, &w.phi) <= PHI_MATCH && a.gap > PHI_GAP
                    });
                    if !ok {
                        return Ok((
                            Status::Fail,
                            format!("witness at t={} does not re-verify", w.t),
                        ));
                    }
                    witnesses += 1;
                }
                KurtaranOutcome::Exhausted { matching_pairs, .. } => pairs += matching_pairs,
            }
        }
        Ok((
            Status::Pass,
            format!(
                "{} designs, {witnesses} verified witnesses, {pairs} matching pairs without one",
                all.len()
            ),
        ))
    });
    suite.run("monte-carlo", || {
        let exact = exact_cost(model, &d1, cfg.max_paths)?.expected_cost;
        let sim = simulate(model, &d1, cfg.episodes, cfg.seed)?;
        let gap = (sim.mean - exact).abs();
        let status = if gap <= 3.0 * sim.std_error {
            Status::Pass
        } else {
            Status::Fail
        };
        Ok((
            status,
            format!(
                "{} episodes, mean {} std error {} exact {}",
                sim.episodes,
                fmt_num(sim.mean),
                fmt_num(sim.std_error),
                fmt_num(exact)
            ),
        ))
    });
}
