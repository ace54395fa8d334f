//! Executable probes of structural properties: concavity of the value
//! function, the one-step-delay factorization, the degenerate perfectly
//! observed case, and the search for an update of the belief on
//! `(X_{t-2}, U_{t-1})` that ignores the common history.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coordinator::{
    belief_update, initial_belief, solve_dp, state_count, Limits, PiBelief, ValueOracle,
};
use crate::error::{Error, Result};
use crate::evaluate::{for_each_path, Path, Stop};
use crate::histories::Design;
use crate::model::Model;
use crate::second_form::{initial_state, solve_dp2, theta_update, Theta};

/// Conditional distributions `P(· | δ)` gathered from weighted paths.
#[derive(Debug, Default, Clone)]
pub struct Conditionals {
    joint: BTreeMap<Vec<usize>, Vec<f64>>,
}

impl Conditionals {
    fn add(&mut self, delta: Vec<usize>, index: usize, len: usize, p: f64) {
        self.joint.entry(delta).or_insert_with(|| vec![0.0; len])[index] += p;
    }

    /// `(δ, P(δ), P(· | δ))` in the order of `δ`.
    pub fn iter(&self) -> impl Iterator<Item = (&Vec<usize>, f64, Vec<f64>)> {
        self.joint.iter().map(|(d, m)| {
            let total: f64 = m.iter().sum();
            (d, total, m.iter().map(|v| v / total).collect())
        })
    }

    pub fn get(&self, delta: &[usize]) -> Option<(f64, Vec<f64>)> {
        let m = self.joint.get(delta)?;
        let total: f64 = m.iter().sum();
        Some((total, m.iter().map(|v| v / total).collect()))
    }

    pub fn len(&self) -> usize {
        self.joint.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint.is_empty()
    }
}

/// `P(f(path) | δ_t)` for every reachable `δ_t`, stopping at `stop`.
pub fn conditionals(
    model: &Model,
    design: &dyn Design,
    t: usize,
    stop: Stop,
    len: usize,
    max_paths: usize,
    f: impl Fn(&Path) -> usize,
) -> Result<Conditionals> {
    let mut out = Conditionals::default();
    for_each_path(model, design, stop, max_paths, |p| {
        out.add(p.common(model, t), f(p), len, p.prob);
    })?;
    Ok(out)
}

/// Belief recursion along a common history, using the design's own
/// prescriptions.
pub fn belief_along(model: &Model, design: &dyn Design, common: &[usize]) -> Result<PiBelief> {
    let mut pi = initial_belief(model);
    for (i, &z) in common.iter().enumerate() {
        let t = i + 1;
        let profile = design.prescription(t, &common[..i])?;
        pi = belief_update(model, &pi, &profile, z)?.0;
    }
    Ok(pi)
}

/// `Θ` recursion along a common history.
pub fn theta_along(model: &Model, common: &[usize]) -> Result<Theta> {
    let mut theta = initial_state(model).theta;
    for &z in common {
        theta = theta_update(model, &theta, z)?;
    }
    Ok(theta)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizationReport {
    pub histories: usize,
    /// Largest deviation of `Π_t` from the product of the observation
    /// likelihoods and `P(X_{t-1} | δ_t)`.
    pub product_error: f64,
    /// Largest difference of `P(X_{t-1} | δ_t)` between the design and an
    /// alternate at a history both reach.
    pub independence_error: f64,
    pub shared_histories: usize,
    pub passed: bool,
}

/// One-step delay: `Π_t(x, y) = Π_k P(y^k | x) · P(X_{t-1} = x | δ_t)` and the
/// state posterior does not depend on the design.
pub fn check_one_step_factorization(
    model: &Model,
    design: &dyn Design,
    alternates: &[&dyn Design],
    max_paths: usize,
) -> Result<FactorizationReport> {
    if model.delay() != 1 {
        return Err(Error::Precondition(format!(
            "factorization requires delay 1, got {}",
            model.delay()
        )));
    }
    let xs = model.x_size();
    let mut report = FactorizationReport {
        histories: 0,
        product_error: 0.0,
        independence_error: 0.0,
        shared_histories: 0,
        passed: false,
    };
    let state_of = |p: &Path, t: usize| p.xs[t - 1];
    for t in 1..=model.horizon() {
        let post = conditionals(model, design, t, Stop::AfterObs(t), xs, max_paths, |p| {
            state_of(p, t)
        })?;
        let others = alternates
            .iter()
            .map(|d| {
                conditionals(model, *d, t, Stop::AfterObs(t), xs, max_paths, |p| {
                    state_of(p, t)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for (delta, _, px) in post.iter() {
            report.histories += 1;
            let pi = belief_along(model, design, delta)?;
            for (s, &v) in pi.p.iter().enumerate() {
                let (x, lambda) = model.layout.state_unrank(t, s);
                let want = lambda
                    .iter()
                    .enumerate()
                    .fold(px[x], |acc, (k, &y)| acc * model.obs(k, t, x)[y]);
                report.product_error = report.product_error.max((v - want).abs());
            }
            for other in &others {
                if let Some((_, qx)) = other.get(delta) {
                    report.shared_histories += 1;
                    report.independence_error =
                        report.independence_error.max(max_abs_diff(&px, &qx));
                }
            }
        }
    }
    report.passed = report.product_error <= 1e-12 && report.independence_error <= 1e-12;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AicardiReport {
    pub histories: usize,
    /// Largest `1 - max_x Θ_t(x)` over histories with `t > n`.
    pub point_mass_error: f64,
    /// Histories with `t ≤ n` whose `Θ_t` differs from the initial law.
    pub early_mismatches: usize,
    /// Second-program nodes at `t > n` whose `Θ` is not a point mass.
    pub non_degenerate_nodes: usize,
    /// Distinct `(x_{t-n}, r)` keys equal the node count at every `t`.
    pub nodes_indexed_by_state: bool,
    pub dp1_cost: f64,
    pub dp2_cost: f64,
    pub passed: bool,
}

/// Checks that `obs[k]` projects a product state onto coordinate `k` and that
/// transitions are deterministic.
pub fn aicardi_preconditions(model: &Model) -> Result<()> {
    let spec = model.spec();
    let product: usize = spec.y_size.iter().product();
    if product != spec.x_size {
        return Err(Error::Precondition(format!(
            "state space of size {} is not the product of the observation alphabets ({product})",
            spec.x_size
        )));
    }
    for x in 0..spec.x_size {
        let mut rest = x;
        let mut coords = vec![0; spec.controllers];
        for k in (0..spec.controllers).rev() {
            coords[k] = rest % spec.y_size[k];
            rest /= spec.y_size[k];
        }
        for k in 0..spec.controllers {
            for t in 1..=spec.horizon {
                let row = model.obs(k, t, x);
                if row[coords[k]] != 1.0 {
                    return Err(Error::Precondition(format!(
                        "controller {k} does not observe its own subsystem at time {t}, state {x}"
                    )));
                }
            }
        }
        for t in 1..=spec.horizon {
            for a in 0..model.joint_actions() {
                if !model.trans(t, x, a).iter().any(|&q| q == 1.0) {
                    return Err(Error::Precondition(format!(
                        "transition from state {x} under action {a} at time {t} is not deterministic"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Perfectly observed subsystems: `Θ_t` is a point mass once anything is
/// shared, and both programs agree.
pub fn check_aicardi_degenerate(
    model: &Model,
    designs: &[&dyn Design],
    limits: Limits,
    max_paths: usize,
) -> Result<AicardiReport> {
    aicardi_preconditions(model)?;
    let n = model.delay();
    let mut report = AicardiReport {
        histories: 0,
        point_mass_error: 0.0,
        early_mismatches: 0,
        non_degenerate_nodes: 0,
        nodes_indexed_by_state: true,
        dp1_cost: 0.0,
        dp2_cost: 0.0,
        passed: false,
    };
    for design in designs {
        for t in 1..=model.horizon() {
            let reach = conditionals(model, *design, t, Stop::AfterObs(t), 1, max_paths, |_| 0)?;
            for (delta, _, _) in reach.iter() {
                report.histories += 1;
                let theta = theta_along(model, delta)?;
                if t > n {
                    let top = theta.p.iter().copied().fold(0.0, f64::max);
                    report.point_mass_error = report.point_mass_error.max(1.0 - top);
                } else if max_abs_diff(&theta.p, model.x0()) > 1e-12 {
                    report.early_mismatches += 1;
                }
            }
        }
    }
    let dp1 = solve_dp(model, limits)?;
    let dp2 = solve_dp2(model, limits)?;
    for (i, layer) in dp2.graph.nodes.iter().enumerate() {
        let t = i + 1;
        if t <= n {
            continue;
        }
        let mut keys = std::collections::BTreeSet::new();
        for node in layer {
            let (x, top) =
                node.theta
                    .p
                    .iter()
                    .copied()
                    .enumerate()
                    .fold(
                        (0, 0.0),
                        |best, (x, v)| if v > best.1 { (x, v) } else { best },
                    );
            if (1.0 - top).abs() > 1e-12 {
                report.non_degenerate_nodes += 1;
            }
            keys.insert((x, format!("{:?}", node.r)));
        }
        report.nodes_indexed_by_state &= keys.len() == layer.len();
    }
    report.dp1_cost = dp1.optimal_cost;
    report.dp2_cost = dp2.optimal_cost;
    report.passed = report.point_mass_error <= 1e-12
        && report.early_mismatches == 0
        && report.non_degenerate_nodes == 0
        && report.nodes_indexed_by_state
        && (report.dp1_cost - report.dp2_cost).abs() <= 1e-9;
    Ok(report)
}

/// Two common histories with the same `Φ_t` and the same next observation
/// whose `Φ_{t+1}` differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KurtaranWitness {
    pub t: usize,
    pub delta: Vec<usize>,
    pub delta_prime: Vec<usize>,
    /// `Φ_t` at `δ` (and, within `1e-12`, at `δ'`), indexed `x · |U| + a`.
    pub phi: Vec<f64>,
    pub z: usize,
    /// `Φ_{t+1}` at `(δ, z)` and `(δ', z)`.
    pub phi_next_1: Vec<f64>,
    pub phi_next_2: Vec<f64>,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KurtaranOutcome {
    Witness(KurtaranWitness),
    Exhausted {
        /// Pairs of distinct histories with matching `Φ_t`.
        matching_pairs: usize,
        /// `(pair, z)` comparisons of `Φ_{t+1}`.
        comparisons: usize,
    },
}

pub const PHI_MATCH: f64 = 1e-12;
pub const PHI_GAP: f64 = 1e-6;

/// `Φ_t = P(X_{t-2}, U_{t-1} | δ_t)` for every reachable `δ_t`, from paths
/// that stop after the actions at `stop_at ≥ t - 1`.
fn phi_table(
    model: &Model,
    design: &dyn Design,
    t: usize,
    stop_at: usize,
    max_paths: usize,
) -> Result<Conditionals> {
    let a = model.joint_actions();
    conditionals(
        model,
        design,
        t,
        Stop::AfterAction(stop_at),
        model.x_size() * a,
        max_paths,
        |p| p.xs[t - 2] * a + model.joint_index(&p.us[t - 2]),
    )
}

/// `Φ_t` at one history, recomputed by filtering complete prefixes.
pub fn phi_at(
    model: &Model,
    design: &dyn Design,
    t: usize,
    delta: &[usize],
    max_paths: usize,
) -> Result<Option<Vec<f64>>> {
    let a = model.joint_actions();
    let mut m = vec![0.0; model.x_size() * a];
    for_each_path(model, design, Stop::AfterAction(t - 1), max_paths, |p| {
        let consistent = (2..=t).all(|s| p.revealed(model, s) == delta[s - 2]);
        if consistent {
            m[p.xs[t - 2] * a + model.joint_index(&p.us[t - 2])] += p.prob;
        }
    })?;
    let total: f64 = m.iter().sum();
    if total <= 0.0 {
        return Ok(None);
    }
    Ok(Some(m.into_iter().map(|v| v / total).collect()))
}

fn phi_key(phi: &[f64]) -> Vec<i64> {
    phi.iter().map(|v| (v / PHI_MATCH).round() as i64).collect()
}

/// Searches for histories that share `Φ_t` and `Z_{t+1}` but not `Φ_{t+1}`.
pub fn kurtaran_witness_search(
    model: &Model,
    design: &dyn Design,
    max_paths: usize,
) -> Result<KurtaranOutcome> {
    if model.delay() != 2 || model.controllers() != 2 {
        return Err(Error::Precondition(format!(
            "the probe needs two controllers and delay 2, got {} and {}",
            model.controllers(),
            model.delay()
        )));
    }
    let mut matching_pairs = 0;
    let mut comparisons = 0;
    for t in 2..model.horizon() {
        let phi = phi_table(model, design, t, t, max_paths)?;
        let next = phi_table(model, design, t + 1, t, max_paths)?;
        let mut groups: BTreeMap<Vec<i64>, Vec<(Vec<usize>, Vec<f64>)>> = BTreeMap::new();
        for (delta, _, v) in phi.iter() {
            groups
                .entry(phi_key(&v))
                .or_default()
                .push((delta.clone(), v));
        }
        let mut followers: BTreeMap<&[usize], Vec<(usize, Vec<f64>)>> = BTreeMap::new();
        for (delta, _, v) in next.iter() {
            let (head, z) = delta.split_at(delta.len() - 1);
            followers.entry(head).or_default().push((z[0], v));
        }
        for members in groups.values() {
            for i in 0..members.len() {
                for j in i + 1..members.len() {
                    let (d1, p1) = &members[i];
                    let (d2, p2) = &members[j];
                    if max_abs_diff(p1, p2) > PHI_MATCH {
                        continue;
                    }
                    matching_pairs += 1;
                    let (Some(f1), Some(f2)) =
                        (followers.get(d1.as_slice()), followers.get(d2.as_slice()))
                    else {
                        continue;
                    };
                    for (z, n1) in f1 {
                        let Some((_, n2)) = f2.iter().find(|(z2, _)| z2 == z) else {
                            continue;
                        };
                        comparisons += 1;
                        if max_abs_diff(n1, n2) <= PHI_GAP {
                            continue;
                        }
                        if let Some(w) = verify_witness(model, design, t, d1, d2, *z, max_paths)? {
                            return Ok(KurtaranOutcome::Witness(w));
                        }
                    }
                }
            }
        }
    }
    Ok(KurtaranOutcome::Exhausted {
        matching_pairs,
        comparisons,
    })
}

/// Recomputes every ingredient of a candidate by filtered path summation.
pub fn verify_witness(
    model: &Model,
    design: &dyn Design,
    t: usize,
    delta: &[usize],
    delta_prime: &[usize],
    z: usize,
    max_paths: usize,
) -> Result<Option<KurtaranWitness>> {
    let (Some(p1), Some(p2)) = (
        phi_at(model, design, t, delta, max_paths)?,
        phi_at(model, design, t, delta_prime, max_paths)?,
    ) else {
        return Ok(None);
    };
    if max_abs_diff(&p1, &p2) > PHI_MATCH {
        return Ok(None);
    }
    let extend = |d: &[usize]| {
        let mut v = d.to_vec();
        v.push(z);
        v
    };
    let (Some(n1), Some(n2)) = (
        phi_at(model, design, t + 1, &extend(delta), max_paths)?,
        phi_at(model, design, t + 1, &extend(delta_prime), max_paths)?,
    ) else {
        return Ok(None);
    };
    let gap = max_abs_diff(&n1, &n2);
    if gap <= PHI_GAP {
        return Ok(None);
    }
    Ok(Some(KurtaranWitness {
        t,
        delta: delta.to_vec(),
        delta_prime: delta_prime.to_vec(),
        phi: p1,
        z,
        phi_next_1: n1,
        phi_next_2: n2,
        gap,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcavityReport {
    pub samples: usize,
    pub seed: u64,
    /// `(t, smallest slack)`
    pub per_time: Vec<(usize, f64)>,
    pub min_slack: f64,
    pub violations: usize,
}

/// A belief drawn uniformly from the simplex over `S_t`.
pub fn random_belief(model: &Model, t: usize, rng: &mut impl Rng) -> PiBelief {
    let mut p: Vec<f64> = (0..state_count(model, t))
        .map(|_| -(1.0 - rng.gen::<f64>()).ln())
        .collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    PiBelief { t, p }
}

/// Samples `(π₁, π₂, λ)` per time and measures
/// `J(λπ₁ + (1-λ)π₂) - λJ(π₁) - (1-λ)J(π₂)`.
pub fn concavity_probe(
    model: &Model,
    samples: usize,
    seed: u64,
    max_evaluations: usize,
) -> Result<ConcavityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut oracle = ValueOracle::new(model, max_evaluations);
    let mut per_time = Vec::new();
    let mut violations = 0;
    for t in 1..=model.horizon() {
        let mut min_slack = f64::INFINITY;
        for _ in 0..samples {
            let a = random_belief(model, t, &mut rng);
            let b = random_belief(model, t, &mut rng);
            let w: f64 = rng.gen();
            let mix = PiBelief {
                t,
                p: a.p
                    .iter()
                    .zip(&b.p)
                    .map(|(x, y)| w * x + (1.0 - w) * y)
                    .collect(),
            };
            let slack =
                oracle.value(&mix)? - (w * oracle.value(&a)? + (1.0 - w) * oracle.value(&b)?);
            if slack < -1e-9 {
                violations += 1;
            }
            min_slack = min_slack.min(slack);
        }
        per_time.push((t, min_slack));
    }
    let min_slack = per_time.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    Ok(ConcavityReport {
        samples,
        seed,
        per_time,
        min_slack,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histories::TableDesign;
    use crate::instances;

    #[test]
    fn factorization_requires_one_step_delay() {
        let model = Model::new(instances::i2()).unwrap();
        let d = TableDesign::constant(&model).unwrap();
        assert!(matches!(
            check_one_step_factorization(&model, &d, &[], 10_000),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn factorization_holds_with_pinning_observations() {
        let mut spec = instances::i1();
        for k in 0..2 {
            for t in 0..2 {
                spec.obs[k][t] = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
            }
        }
        let model = Model::new(spec).unwrap();
        let d = TableDesign::constant(&model).unwrap();
        let alt = TableDesign::random(&model, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let r = check_one_step_factorization(&model, &d, &[&alt], 10_000).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn short_horizon_has_no_witness() {
        let model = instances::uniform_binary(2, 2, 2).unwrap();
        let d = TableDesign::constant(&model).unwrap();
        assert_eq!(
            kurtaran_witness_search(&model, &d, 100_000).unwrap(),
            KurtaranOutcome::Exhausted {
                matching_pairs: 0,
                comparisons: 0
            }
        );
    }

    #[test]
    fn endpoints_of_a_mixture_have_no_slack() {
        let model = Model::new(instances::i1()).unwrap();
        let mut oracle = ValueOracle::new(&model, 10_000);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_belief(&model, 1, &mut rng);
        let v = oracle.value(&a).unwrap();
        let again = oracle.value(&a.clone()).unwrap();
        assert_eq!(v, again);
    }

    #[test]
    fn aicardi_rejects_noisy_observation() {
        let mut spec = instances::ia();
        spec.obs[0][1][2] = vec![0.5, 0.5];
        let model = Model::new(spec).unwrap();
        assert!(matches!(
            aicardi_preconditions(&model),
            Err(Error::Precondition(_))
        ));
        let model = Model::new(instances::ia()).unwrap();
        aicardi_preconditions(&model).unwrap();
    }
}
