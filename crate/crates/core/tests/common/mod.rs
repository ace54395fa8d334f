//! Brute-force reference computations that read the raw problem arrays and
//! rebuild every index by hand.

#![allow(dead_code)]

use dshare_core::histories::GammaProfile;
use dshare_core::{Design, ProblemSpec};

/// A trajectory prefix right after the observations at `s = ys.len()`:
/// `xs = X_0..X_{s-1}`, `us = U_1..U_{s-1}`.
#[derive(Debug, Clone, Default)]
pub struct Prefix {
    pub prob: f64,
    pub xs: Vec<usize>,
    pub ys: Vec<Vec<usize>>,
    pub us: Vec<Vec<usize>>,
}

pub fn first_private(t: usize, n: usize) -> usize {
    if t >= n {
        t - n + 1
    } else {
        1
    }
}

pub fn lambda_size(spec: &ProblemSpec, k: usize, t: usize) -> usize {
    let lo = first_private(t, spec.delay);
    spec.y_size[k].pow((t + 1 - lo) as u32) * spec.u_size[k].pow((t - lo) as u32)
}

pub fn lambda_rank(
    spec: &ProblemSpec,
    k: usize,
    t: usize,
    ys: &[Vec<usize>],
    us: &[Vec<usize>],
) -> usize {
    let lo = first_private(t, spec.delay);
    let r = (lo..=t).fold(0, |acc, s| acc * spec.y_size[k] + ys[s - 1][k]);
    (lo..t).fold(r, |acc, s| acc * spec.u_size[k] + us[s - 1][k])
}

pub fn state_count(spec: &ProblemSpec, t: usize) -> usize {
    (0..spec.controllers).fold(spec.x_size, |acc, k| acc * lambda_size(spec, k, t))
}

/// `(X_{t-1}, Λ^1_t, .., Λ^K_t)` with the state most significant.
pub fn state_index(spec: &ProblemSpec, t: usize, p: &Prefix) -> usize {
    (0..spec.controllers).fold(p.xs[t - 1], |acc, k| {
        acc * lambda_size(spec, k, t) + lambda_rank(spec, k, t, &p.ys, &p.us)
    })
}

pub fn z_size(spec: &ProblemSpec, s: usize) -> usize {
    if s <= spec.delay {
        1
    } else {
        spec.y_size.iter().chain(&spec.u_size).product()
    }
}

/// `Z_s`: the stage-`(s-n)` observations and actions, or 0 before anything is shared.
pub fn z_rank(spec: &ProblemSpec, s: usize, ys: &[Vec<usize>], us: &[Vec<usize>]) -> usize {
    if s <= spec.delay {
        return 0;
    }
    let e = s - spec.delay;
    let r = (0..spec.controllers).fold(0, |acc, k| acc * spec.y_size[k] + ys[e - 1][k]);
    (0..spec.controllers).fold(r, |acc, k| acc * spec.u_size[k] + us[e - 1][k])
}

pub fn common(spec: &ProblemSpec, t: usize, p: &Prefix) -> Vec<usize> {
    (2..=t).map(|s| z_rank(spec, s, &p.ys, &p.us)).collect()
}

pub fn common_key(spec: &ProblemSpec, t: usize, p: &Prefix) -> usize {
    (2..=t).fold(0, |acc, s| {
        acc * z_size(spec, s) + z_rank(spec, s, &p.ys, &p.us)
    })
}

pub fn joint(spec: &ProblemSpec, u: &[usize]) -> usize {
    u.iter()
        .zip(&spec.u_size)
        .fold(0, |acc, (&a, &r)| acc * r + a)
}

/// Every joint observation vector at `t` from state `x` with its probability.
pub fn observations(spec: &ProblemSpec, t: usize, x: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for k in 0..spec.controllers {
        let row = &spec.obs[k][t - 1][x];
        out = out
            .into_iter()
            .flat_map(|(ys, p)| {
                row.iter()
                    .enumerate()
                    .filter(|e| *e.1 > 0.0)
                    .map(move |(y, &q)| {
                        let mut v = ys.clone();
                        v.push(y);
                        (v, p * q)
                    })
            })
            .collect();
    }
    out
}

pub fn initial_prefixes(spec: &ProblemSpec) -> Vec<Prefix> {
    let mut out = Vec::new();
    for (x0, &p) in spec.x0_dist.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        for (ys, q) in observations(spec, 1, x0) {
            out.push(Prefix {
                prob: p * q,
                xs: vec![x0],
                ys: vec![ys],
                us: Vec::new(),
            });
        }
    }
    out
}

pub fn act(spec: &ProblemSpec, s: usize, p: &Prefix, profile: &GammaProfile) -> Vec<usize> {
    (0..spec.controllers)
        .map(|k| profile.gammas[k].table[lambda_rank(spec, k, s, &p.ys, &p.us)])
        .collect()
}

/// Prefixes at `s + 1`, with the stage cost `c_s(X_s, U_s)` passed to `cost`.
pub fn extend(
    spec: &ProblemSpec,
    s: usize,
    prefixes: &[Prefix],
    mut profile_of: impl FnMut(&Prefix) -> GammaProfile,
    mut cost: impl FnMut(f64, f64),
) -> Vec<Prefix> {
    let mut out = Vec::new();
    for p in prefixes {
        let u = act(spec, s, p, &profile_of(p));
        let a = joint(spec, &u);
        let x = p.xs[s - 1];
        for (x2, &q) in spec.trans[s - 1][x][a].iter().enumerate() {
            if q <= 0.0 {
                continue;
            }
            cost(p.prob * q, spec.cost[s - 1][x2][a]);
            if s == spec.horizon {
                continue;
            }
            for (ys, r) in observations(spec, s + 1, x2) {
                let mut next = p.clone();
                next.prob *= q * r;
                next.xs.push(x2);
                next.us.push(u.clone());
                next.ys.push(ys);
                out.push(next);
            }
        }
    }
    out
}

/// Expected total cost of a design, by enumerating trajectories.
pub fn design_cost(spec: &ProblemSpec, design: &dyn Design) -> f64 {
    let mut prefixes = initial_prefixes(spec);
    let mut total = 0.0;
    for s in 1..=spec.horizon {
        prefixes = extend(
            spec,
            s,
            &prefixes,
            |p| design.prescription(s, &common(spec, s, p)).unwrap(),
            |w, c| total += w * c,
        );
    }
    total
}

/// Joint masses of `δ_t` with the state `(X_{t-1}, Λ_t)` and with `X_{t-n}`,
/// indexed by the dense common-history key.
pub struct Posterior {
    pub histories: Vec<Option<Vec<usize>>>,
    pub total: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
}

impl Posterior {
    pub fn new(spec: &ProblemSpec, t: usize) -> Self {
        let h: usize = (2..=t).map(|s| z_size(spec, s)).product();
        Posterior {
            histories: vec![None; h],
            total: vec![0.0; h],
            states: vec![vec![0.0; state_count(spec, t)]; h],
            theta: vec![vec![0.0; spec.x_size]; h],
        }
    }

    pub fn clear(&mut self) {
        self.histories.iter_mut().for_each(|h| *h = None);
        self.total.iter_mut().for_each(|v| *v = 0.0);
        self.states.iter_mut().flatten().for_each(|v| *v = 0.0);
        self.theta.iter_mut().flatten().for_each(|v| *v = 0.0);
    }

    pub fn add(&mut self, spec: &ProblemSpec, t: usize, p: &Prefix) {
        let key = common_key(spec, t, p);
        if self.histories[key].is_none() {
            self.histories[key] = Some(common(spec, t, p));
        }
        self.total[key] += p.prob;
        self.states[key][state_index(spec, t, p)] += p.prob;
        self.theta[key][p.xs[t.saturating_sub(spec.delay)]] += p.prob;
    }

    pub fn of(spec: &ProblemSpec, t: usize, prefixes: &[Prefix]) -> Self {
        let mut post = Posterior::new(spec, t);
        for p in prefixes {
            post.add(spec, t, p);
        }
        post
    }

    /// `(δ, P(δ), P(state | δ), P(X_{t-n} | δ))` for every reachable `δ`.
    pub fn iter(&self) -> impl Iterator<Item = (&Vec<usize>, f64, Vec<f64>, Vec<f64>)> {
        self.histories.iter().enumerate().filter_map(move |(i, h)| {
            let h = h.as_ref()?;
            let total = self.total[i];
            Some((
                h,
                total,
                self.states[i].iter().map(|v| v / total).collect(),
                self.theta[i].iter().map(|v| v / total).collect(),
            ))
        })
    }
}

/// Posterior at `s + 1` after applying `profile` at `s`, without building
/// the extended prefixes.
pub fn step_posterior(
    spec: &ProblemSpec,
    s: usize,
    prefixes: &[Prefix],
    profile: &GammaProfile,
    post: &mut Posterior,
) {
    let next_obs: Vec<Vec<(Vec<usize>, f64)>> = (0..spec.x_size)
        .map(|x| observations(spec, s + 1, x))
        .collect();
    let mut scratch = Prefix::default();
    for p in prefixes {
        let u = act(spec, s, p, profile);
        let a = joint(spec, &u);
        let x = p.xs[s - 1];
        scratch.clone_from(p);
        scratch.us.push(u);
        for (x2, &q) in spec.trans[s - 1][x][a].iter().enumerate() {
            if q <= 0.0 {
                continue;
            }
            scratch.xs.push(x2);
            for (ys, r) in &next_obs[x2] {
                scratch.ys.push(ys.clone());
                scratch.prob = p.prob * q * r;
                post.add(spec, s + 1, &scratch);
                scratch.ys.pop();
            }
            scratch.xs.pop();
        }
    }
}

pub fn history_key(spec: &ProblemSpec, common: &[usize]) -> usize {
    common
        .iter()
        .enumerate()
        .fold(0, |acc, (i, &z)| acc * z_size(spec, i + 2) + z)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
