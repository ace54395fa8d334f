//! Acceptance criteria, one PASS/FAIL line each.

mod common;

use std::collections::HashMap;
use std::time::Instant;

use common::{history_key, max_abs_diff, Posterior, Prefix};
use dshare_core::analysis::{
    check_aicardi_degenerate, check_one_step_factorization, concavity_probe,
    kurtaran_witness_search, theta_along, verify_witness, KurtaranOutcome, PHI_GAP, PHI_MATCH,
};
use dshare_core::coordinator::{
    alpha_backup, belief_update_all, extract_design, initial_belief, solve_dp, AlphaLimits, Limits,
    PiBelief,
};
use dshare_core::evaluate::{brute_force_optimum, enumerate_designs, exact_cost, simulate};
use dshare_core::histories::{gamma_profiles, TableDesign};
use dshare_core::instances::{self, random_spec, Shape};
use dshare_core::second_form::{
    advance_state, extract_design2, h_map, initial_state, solve_dp2, theta_update, Theta,
    ThetaRState,
};
use dshare_core::verify::{alpha_envelope_error, verify, VerifyConfig};
use dshare_core::{fmt_num, Design, Model, ProblemSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MAX_PATHS: usize = 5_000_000;

struct Line {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &'static str, pass: bool, detail: String) -> Line {
    println!(
        "{} criterion {id} {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    Line {
        id,
        name,
        pass,
        detail,
    }
}

fn load(name: &str) -> Model {
    Model::new(instances::canonical(name).unwrap()).unwrap()
}

fn random_design(model: &Model, seed: u64) -> TableDesign {
    TableDesign::random(model, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn oracle_optimality() -> Line {
    let start = Instant::now();
    let model = load("IO");
    let spec = model.spec();
    let dp1 = solve_dp(&model, Limits::default()).unwrap().optimal_cost;
    let dp2 = solve_dp2(&model, Limits::default()).unwrap().optimal_cost;
    let (library, _) = brute_force_optimum(&model, 100_000, MAX_PATHS).unwrap();
    let mut count = 0;
    let mut best = f64::INFINITY;
    for d in enumerate_designs(&model, 100_000).unwrap() {
        best = best.min(common::design_cost(spec, &d));
        count += 1;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let gap = [dp1 - dp2, dp1 - library, dp1 - best]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    report(
        1,
        "oracle optimality",
        count == 1024 && gap <= 1e-9 && elapsed <= 60.0,
        format!(
            "IO: {count} designs, first form {} second form {} brute force {} (reference enumeration {}), max gap {}, {:.1}s",
            fmt_num(dp1),
            fmt_num(dp2),
            fmt_num(library),
            fmt_num(best),
            fmt_num(gap),
            elapsed
        ),
    )
}

fn cross_program() -> Line {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for name in ["I1", "I2", "IA"] {
        let model = load(name);
        let a = solve_dp(&model, Limits::default()).unwrap().optimal_cost;
        let b = solve_dp2(&model, Limits::default()).unwrap().optimal_cost;
        worst = worst.max((a - b).abs());
        parts.push(format!("{name} {} / {}", fmt_num(a), fmt_num(b)));
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        2,
        "cross-program consistency",
        worst <= 1e-9 && elapsed <= 300.0,
        format!(
            "{}; max gap {}, {:.1}s",
            parts.join(", "),
            fmt_num(worst),
            elapsed
        ),
    )
}

fn extraction() -> Line {
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for name in instances::CANONICAL {
        let model = load(name);
        let sol = solve_dp(&model, Limits::default()).unwrap();
        let sol2 = solve_dp2(&model, Limits::default()).unwrap();
        let d1 = extract_design(&model, &sol);
        let d2 = extract_design2(&model, &sol2);
        let c1 = exact_cost(&model, &d1, MAX_PATHS).unwrap().expected_cost;
        let c2 = exact_cost(&model, &d2, MAX_PATHS).unwrap().expected_cost;
        let r1 = common::design_cost(model.spec(), &d1);
        let r2 = common::design_cost(model.spec(), &d2);
        for gap in [
            c1 - sol.optimal_cost,
            r1 - sol.optimal_cost,
            c2 - sol2.optimal_cost,
            r2 - sol2.optimal_cost,
        ] {
            worst = worst.max(gap.abs());
        }
        parts.push(format!("{name} {}", fmt_num(c1)));
    }
    report(
        3,
        "extraction consistency",
        worst <= 1e-9,
        format!(
            "realized costs {}; max gap {}",
            parts.join(", "),
            fmt_num(worst)
        ),
    )
}

#[derive(Default)]
struct Errors {
    pi: f64,
    theta: f64,
    pz: f64,
    pz_sum: f64,
    h_map: f64,
    histories: usize,
    h_map_checks: usize,
    missing: usize,
}

struct Tracked {
    mass: f64,
    pi: PiBelief,
    theta: Theta,
    state: ThetaRState,
}

/// Compares the recursions with exhaustive Bayes over every profile sequence.
fn walk(
    model: &Model,
    s: usize,
    prefixes: &[Prefix],
    tracked: &HashMap<Vec<usize>, Tracked>,
    err: &mut Errors,
) {
    let spec = model.spec();
    if s == spec.horizon {
        return;
    }
    let last = s + 1 == spec.horizon;
    let mut post = Posterior::new(spec, s + 1);
    for profile in gamma_profiles(model, s).unwrap() {
        let next_prefixes = if last {
            post.clear();
            common::step_posterior(spec, s, prefixes, &profile, &mut post);
            Vec::new()
        } else {
            let next = common::extend(spec, s, prefixes, |_| profile.clone(), |_, _| {});
            post = Posterior::of(spec, s + 1, &next);
            next
        };
        let mut next_tracked = HashMap::new();
        let mut found = 0;
        for (delta, tr) in tracked {
            let succ = belief_update_all(model, &tr.pi, &profile).unwrap();
            let sum: f64 = succ.iter().map(|e| e.2).sum();
            err.pz_sum = err.pz_sum.max((sum - 1.0).abs());
            for (z, pi, pz) in succ {
                let mut d2 = delta.clone();
                d2.push(z);
                let key = history_key(spec, &d2);
                if post.histories[key].is_none() {
                    err.missing += 1;
                    continue;
                }
                found += 1;
                err.histories += 1;
                let total = post.total[key];
                let want: Vec<f64> = post.states[key].iter().map(|v| v / total).collect();
                let want_theta: Vec<f64> = post.theta[key].iter().map(|v| v / total).collect();
                err.pi = err.pi.max(max_abs_diff(&pi.p, &want));
                err.pz = err.pz.max((pz - total / tr.mass).abs());
                let theta = theta_update(model, &tr.theta, z).unwrap();
                err.theta = err.theta.max(max_abs_diff(&theta.p, &want_theta));
                let state = advance_state(model, &tr.state, &profile, z).unwrap();
                err.h_map = err
                    .h_map
                    .max(max_abs_diff(&h_map(model, &state).unwrap().p, &want));
                err.h_map_checks += 1;
                if !last {
                    next_tracked.insert(
                        d2,
                        Tracked {
                            mass: total,
                            pi,
                            theta,
                            state,
                        },
                    );
                }
            }
        }
        err.missing += post.histories.iter().filter(|h| h.is_some()).count() - found;
        if !last {
            walk(model, s + 1, &next_prefixes, &next_tracked, err);
        }
    }
}

fn exhaustive(model: &Model) -> Errors {
    let spec = model.spec();
    let prefixes = common::initial_prefixes(spec);
    let post = Posterior::of(spec, 1, &prefixes);
    let mut err = Errors::default();
    let pi = initial_belief(model);
    let state = initial_state(model);
    let (_, _, want, want_theta) = post.iter().next().unwrap();
    err.pi = max_abs_diff(&pi.p, &want);
    err.theta = max_abs_diff(&state.theta.p, &want_theta);
    err.h_map = max_abs_diff(&h_map(model, &state).unwrap().p, &want);
    err.histories = 1;
    let mut tracked = HashMap::new();
    tracked.insert(
        Vec::new(),
        Tracked {
            mass: 1.0,
            theta: state.theta.clone(),
            pi,
            state,
        },
    );
    walk(model, 1, &prefixes, &tracked, &mut err);
    err
}

fn belief_and_h_map() -> (Line, Line) {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    let mut h_parts = Vec::new();
    let mut h_pass = true;
    for name in ["I1", "I2"] {
        let model = load(name);
        let e = exhaustive(&model);
        pass &= e.pi <= 1e-12
            && e.theta <= 1e-12
            && e.pz <= 1e-12
            && e.pz_sum <= 1e-12
            && e.missing == 0;
        parts.push(format!(
            "{name}: {} histories, Π error {}, Θ error {}, pz error {}, Σpz error {}, mismatched {}",
            e.histories,
            fmt_num(e.pi),
            fmt_num(e.theta),
            fmt_num(e.pz),
            fmt_num(e.pz_sum),
            e.missing
        ));
        if name == "I2" {
            h_pass = e.h_map <= 1e-12 && e.h_map_checks > 0;
            h_parts.push(format!(
                "I2: {} histories, max error {}",
                e.h_map_checks,
                fmt_num(e.h_map)
            ));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    (
        report(
            4,
            "belief correctness",
            pass,
            format!(
                "every profile sequence; {}; {:.1}s",
                parts.join("; "),
                elapsed
            ),
        ),
        report(
            5,
            "h-map consistency",
            h_pass,
            format!("every profile sequence; {}", h_parts.join("; ")),
        ),
    )
}

/// `P(X_{t-n} | δ_t)` under a design, keyed by `δ_t`.
fn design_thetas(model: &Model, design: &dyn Design) -> Vec<(Vec<usize>, Vec<f64>)> {
    let spec = model.spec();
    let mut prefixes = common::initial_prefixes(spec);
    let mut out = Vec::new();
    for t in 1..=spec.horizon {
        if t > 1 {
            prefixes = common::extend(
                spec,
                t - 1,
                &prefixes,
                |p| {
                    design
                        .prescription(t - 1, &common::common(spec, t - 1, p))
                        .unwrap()
                },
                |_, _| {},
            );
        }
        for (h, _, _, theta) in Posterior::of(spec, t, &prefixes).iter() {
            out.push((h.clone(), theta));
        }
    }
    out
}

fn strategy_independence() -> Line {
    let mut parts = Vec::new();
    let mut pass = true;
    for name in ["I2", "I1"] {
        let model = load(name);
        let designs: Vec<TableDesign> = (0..10).map(|i| random_design(&model, 1000 + i)).collect();
        let mut seen: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
        let mut shared = 0;
        let mut across = 0.0f64;
        let mut recursion = 0.0f64;
        for d in &designs {
            for (h, theta) in design_thetas(&model, d) {
                recursion =
                    recursion.max(max_abs_diff(&theta_along(&model, &h).unwrap().p, &theta));
                match seen.get(&h) {
                    Some(prev) => {
                        shared += 1;
                        across = across.max(max_abs_diff(prev, &theta));
                    }
                    None => {
                        seen.insert(h, theta);
                    }
                }
            }
        }
        pass &= across <= 1e-12 && recursion <= 1e-12 && shared > 0;
        let what = if name == "I2" {
            "Θ"
        } else {
            "P(X_{t-1} | δ_t)"
        };
        parts.push(format!(
            "{name} {what}: 10 designs, {shared} shared histories, max spread {}, max recursion error {}",
            fmt_num(across),
            fmt_num(recursion)
        ));
    }
    report(6, "strategy independence", pass, parts.join("; "))
}

fn concavity() -> Line {
    let mut parts = Vec::new();
    let mut pass = true;
    for name in ["I1", "I2"] {
        let model = load(name);
        let r = concavity_probe(&model, 100, 7, 5_000_000).unwrap();
        pass &= r.min_slack >= -1e-9;
        parts.push(format!("{name} min slack {}", fmt_num(r.min_slack)));
    }
    let mut extra = vec![
        ("I1".to_string(), load("I1")),
        ("I2".to_string(), load("I2")),
    ];
    for (k, t, n, x, u, seed) in [(1, 2, 1, 3, 3, 2), (2, 2, 1, 3, 2, 3), (2, 3, 2, 2, 2, 3)] {
        let shape = Shape {
            controllers: k,
            horizon: t,
            delay: n,
            x_size: x,
            y_size: vec![2; k],
            u_size: vec![u; k],
        };
        let spec = random_spec(&shape, &mut ChaCha8Rng::seed_from_u64(seed));
        extra.push((
            format!("random K={k} T={t} n={n} |X|={x} |U|={u} seed {seed}"),
            Model::new(spec).unwrap(),
        ));
    }
    for (name, model) in &extra {
        let sizes: Vec<usize> = alpha_backup(model, AlphaLimits::default(), true)
            .unwrap()
            .iter()
            .map(|a| a.vectors.len())
            .collect();
        let (e, n) =
            alpha_envelope_error(model, 100, 7, AlphaLimits::default(), 5_000_000).unwrap();
        pass &= e <= 1e-9;
        parts.push(format!(
            "{name} envelope {sizes:?} vectors, {n} beliefs, max error {}",
            fmt_num(e)
        ));
    }
    report(7, "piecewise-linear concave value", pass, parts.join("; "))
}

fn one_step() -> Line {
    let mut parts = Vec::new();
    let mut pass = true;
    for name in ["IO", "I1"] {
        let model = load(name);
        let sol = solve_dp(&model, Limits::default()).unwrap();
        let d1 = extract_design(&model, &sol);
        let alternates: Vec<TableDesign> = (0..5).map(|i| random_design(&model, 50 + i)).collect();
        let alts: Vec<&dyn Design> = alternates.iter().map(|d| d as &dyn Design).collect();
        let r = check_one_step_factorization(&model, &d1, &alts, MAX_PATHS).unwrap();
        pass &= r.passed;
        parts.push(format!(
            "{name}: {} histories, product error {}, independence error {} over {} shared",
            r.histories,
            fmt_num(r.product_error),
            fmt_num(r.independence_error),
            r.shared_histories
        ));
    }
    report(8, "one-step delay equivalence", pass, parts.join("; "))
}

fn aicardi() -> Line {
    let model = load("IA");
    let sol = solve_dp(&model, Limits::default()).unwrap();
    let sol2 = solve_dp2(&model, Limits::default()).unwrap();
    let d1 = extract_design(&model, &sol);
    let d2 = extract_design2(&model, &sol2);
    let randoms: Vec<TableDesign> = (0..5).map(|i| random_design(&model, 70 + i)).collect();
    let mut designs: Vec<&dyn Design> = vec![&d1, &d2];
    designs.extend(randoms.iter().map(|d| d as &dyn Design));
    let r = check_aicardi_degenerate(&model, &designs, Limits::default(), MAX_PATHS).unwrap();
    let n = model.delay();
    let mut direct = 0.0f64;
    for d in &designs {
        for (h, theta) in design_thetas(&model, *d) {
            if h.len() + 1 > n {
                direct = direct.max(1.0 - theta.iter().copied().fold(0.0, f64::max));
            }
        }
    }
    report(
        9,
        "perfectly observed subsystems",
        r.passed && direct <= 1e-12,
        format!(
            "IA: {} histories, point mass error {} (reference {}), non-degenerate nodes {}, costs {} / {}",
            r.histories,
            fmt_num(r.point_mass_error),
            fmt_num(direct),
            r.non_degenerate_nodes,
            fmt_num(r.dp1_cost),
            fmt_num(r.dp2_cost)
        ),
    )
}

/// `P(X_{t-2}, U_{t-1} | δ_t)` recomputed from the raw arrays.
fn reference_phi(
    spec: &ProblemSpec,
    design: &dyn Design,
    t: usize,
    delta: &[usize],
) -> Option<Vec<f64>> {
    let mut prefixes = common::initial_prefixes(spec);
    for s in 1..t {
        prefixes = common::extend(
            spec,
            s,
            &prefixes,
            |p| design.prescription(s, &common::common(spec, s, p)).unwrap(),
            |_, _| {},
        );
    }
    let a: usize = spec.u_size.iter().product();
    let mut m = vec![0.0; spec.x_size * a];
    for p in &prefixes {
        if common::common(spec, t, p) == delta {
            m[p.xs[t - 2] * a + common::joint(spec, &p.us[t - 2])] += p.prob;
        }
    }
    let total: f64 = m.iter().sum();
    (total > 0.0).then(|| m.into_iter().map(|v| v / total).collect())
}

fn kurtaran() -> Line {
    let start = Instant::now();
    let mut runs = 0;
    let mut witnesses = 0;
    let mut bad = 0;
    let mut check = |model: &Model, design: &dyn Design| {
        runs += 1;
        if let KurtaranOutcome::Witness(w) =
            kurtaran_witness_search(model, design, MAX_PATHS).unwrap()
        {
            witnesses += 1;
            let again =
                verify_witness(model, design, w.t, &w.delta, &w.delta_prime, w.z, MAX_PATHS)
                    .unwrap();
            let spec = model.spec();
            let extend = |d: &[usize]| {
                let mut v = d.to_vec();
                v.push(w.z);
                v
            };
            let reference = (
                reference_phi(spec, design, w.t, &w.delta),
                reference_phi(spec, design, w.t, &w.delta_prime),
                reference_phi(spec, design, w.t + 1, &extend(&w.delta)),
                reference_phi(spec, design, w.t + 1, &extend(&w.delta_prime)),
            );
            let ok = again.is_some()
                && match reference {
                    (Some(a), Some(b), Some(c), Some(d)) => {
                        max_abs_diff(&a, &b) <= PHI_MATCH && max_abs_diff(&c, &d) > PHI_GAP
                    }
                    _ => false,
                };
            if !ok {
                bad += 1;
            }
        }
    };
    let i2 = load("I2");
    let sol = solve_dp(&i2, Limits::default()).unwrap();
    check(&i2, &extract_design(&i2, &sol));
    check(&i2, &TableDesign::constant(&i2).unwrap());
    for i in 0..5 {
        check(&i2, &random_design(&i2, 90 + i));
    }
    for i in 0..100 {
        let spec = random_spec(
            &Shape::binary(2, 4, 2),
            &mut ChaCha8Rng::seed_from_u64(2000 + i),
        );
        let model = Model::new(spec).unwrap();
        check(&model, &random_design(&model, 3000 + i));
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        10,
        "Kurtaran probe",
        bad == 0 && elapsed <= 600.0,
        format!(
            "{runs} searches completed (I2 with 7 designs, 100 random T=4 pairs), {witnesses} witnesses, {bad} failed re-verification, {elapsed:.1}s"
        ),
    )
}

fn monte_carlo() -> Line {
    let model = load("I1");
    let sol = solve_dp(&model, Limits::default()).unwrap();
    let d = extract_design(&model, &sol);
    let exact = exact_cost(&model, &d, MAX_PATHS).unwrap().expected_cost;
    let sim = simulate(&model, &d, 100_000, 11).unwrap();
    let gap = (sim.mean - exact).abs();
    report(
        11,
        "Monte Carlo sanity",
        gap <= 3.0 * sim.std_error,
        format!(
            "I1: mean {} std error {} exact {} gap {}",
            fmt_num(sim.mean),
            fmt_num(sim.std_error),
            fmt_num(exact),
            fmt_num(gap)
        ),
    )
}

fn determinism() -> Line {
    let mut parts = Vec::new();
    let mut pass = true;
    for name in ["I1", "I2"] {
        let model = load(name);
        let a = verify(&model, &VerifyConfig::default()).to_text();
        let b = verify(
            &Model::new(instances::canonical(name).unwrap()).unwrap(),
            &VerifyConfig::default(),
        )
        .to_text();
        pass &= a == b;
        parts.push(format!(
            "{name} {} bytes {}",
            a.len(),
            if a == b { "identical" } else { "differ" }
        ));
    }
    report(12, "determinism", pass, parts.join(", "))
}

fn main() {
    let (four, five) = {
        let mut lines = Vec::new();
        lines.push(oracle_optimality());
        lines.push(cross_program());
        lines.push(extraction());
        let (a, b) = belief_and_h_map();
        (lines, (a, b))
    };
    let mut lines = four;
    lines.push(five.0);
    lines.push(five.1);
    lines.push(strategy_independence());
    lines.push(concavity());
    lines.push(one_step());
    lines.push(aicardi());
    lines.push(kurtaran());
    lines.push(monte_carlo());
    lines.push(determinism());
    lines.sort_by_key(|l| l.id);
    let failed: Vec<&Line> = lines.iter().filter(|l| !l.pass).collect();
    println!(
        "acceptance: {} of {} criteria passed",
        lines.len() - failed.len(),
        lines.len()
    );
    for l in &failed {
        println!("failed: criterion {} {}: {}", l.id, l.name, l.detail);
    }
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
