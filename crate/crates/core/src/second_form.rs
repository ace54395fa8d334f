//! The second information state `(Θ_t, r^1_t, .., r^K_t)`: a belief on
//! `X_{t-n}` given the common history together with each controller's
//! recent prescriptions, partially applied at the data shared since.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::coordinator::{
    max_distance, observation_probability, quantize, PiBelief, DEDUP_TOLERANCE,
};
use crate::decompose::Decomposition;
use crate::error::{Error, Result};
use crate::histories::{
    common_unrank, CoordinatorPolicy, Design, GammaProfile, PartialFunction, SeqSpace,
};
use crate::model::{first_private, Model};

/// Belief on `X_{max(0, t-n)}` given the common history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub t: usize,
    pub p: Vec<f64>,
}

/// `r^k_{m,t}`: the prescription of time `m` with its already shared
/// arguments fixed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RPart {
    pub m: usize,
    pub table: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RSuffix {
    pub k: usize,
    pub t: usize,
    /// Ascending in `m`, covering `max(1, t-n+1) ..= t-1`.
    pub parts: Vec<RPart>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaRState {
    pub theta: Theta,
    pub r: Vec<RSuffix>,
}

/// Domain of `r^k_{m,t}`: `(y_{lo..=m}, u_{lo..m})` with `lo = max(1, t-n+1)`.
pub fn part_domain(model: &Model, k: usize, t: usize, m: usize) -> SeqSpace {
    let lo = first_private(t, model.delay());
    SeqSpace {
        y_radix: model.y_size(k),
        u_radix: model.u_size(k),
        y_len: m + 1 - lo,
        u_len: m - lo,
    }
}

pub fn initial_state(model: &Model) -> ThetaRState {
    ThetaRState {
        theta: Theta {
            t: 1,
            p: model.x0().to_vec(),
        },
        r: (0..model.controllers())
            .map(|k| RSuffix {
                k,
                t: 1,
                parts: Vec::new(),
            })
            .collect(),
    }
}

fn check_z(model: &Model, t: usize, z: usize) -> Result<()> {
    if t == 0 || t >= model.horizon() {
        return Err(Error::domain(
            "time",
            t,
            1,
            model.horizon().saturating_sub(1),
        ));
    }
    let size = model.layout.z_size[t];
    if z >= size {
        return Err(Error::domain("common observation rank", z, 0, size - 1));
    }
    Ok(())
}

/// `Θ_{t+1}` from `Θ_t` and `Z_{t+1}`; identity while nothing is shared.
pub fn theta_update(model: &Model, theta: &Theta, z: usize) -> Result<Theta> {
    let t = theta.t;
    check_z(model, t, z)?;
    if t + 1 <= model.delay() {
        return Ok(Theta {
            t: t + 1,
            p: theta.p.clone(),
        });
    }
    let e = t + 1 - model.delay();
    let (ys, us) = common_unrank(model, z);
    let mut post: Vec<f64> = theta
        .p
        .iter()
        .enumerate()
        .map(|(x, &p)| {
            ys.iter()
                .enumerate()
                .fold(p, |acc, (k, &y)| acc * model.obs(k, e, x)[y])
        })
        .collect();
    let norm: f64 = post.iter().sum();
    if norm <= 0.0 {
        return Err(Error::Unreachable { t: t + 1 });
    }
    post.iter_mut().for_each(|v| *v /= norm);
    let a = model.joint_index(&us);
    let mut p = vec![0.0; model.x_size()];
    for (x, &w) in post.iter().enumerate() {
        if w > 0.0 {
            for (x2, &q) in model.trans(e, x, a).iter().enumerate() {
                p[x2] += w * q;
            }
        }
    }
    Ok(Theta { t: t + 1, p })
}

/// Fixes the first observation and action of a table over `domain`.
fn curry(domain: SeqSpace, table: &[usize], y: usize, u: usize) -> Result<Vec<usize>> {
    if domain.y_len == 0 || domain.u_len == 0 {
        return Err(Error::Internal(format!(
            "cannot fix a shared pair in a table over {} observations and {} actions",
            domain.y_len, domain.u_len
        )));
    }
    let inner = SeqSpace {
        y_len: domain.y_len - 1,
        u_len: domain.u_len - 1,
        ..domain
    };
    let size = inner.size().expect("smaller than an existing table");
    Ok((0..size)
        .map(|r| {
            let (mut ys, mut us) = inner.unrank(r);
            ys.insert(0, y);
            us.insert(0, u);
            table[domain.rank(&ys, &us)]
        })
        .collect())
}

/// `r^k_{t+1}` from `r^k_t`, `γ^k_t` and `Z_{t+1}`.
pub fn r_update(model: &Model, r: &RSuffix, gamma: &PartialFunction, z: usize) -> Result<RSuffix> {
    let (t, k) = (r.t, r.k);
    check_z(model, t, z)?;
    if gamma.t != t || gamma.k != k || gamma.table.len() != model.layout.lambda[t - 1][k] {
        return Err(Error::Precondition(format!(
            "prescription ({}, {}) does not fit controller {k} at time {t}",
            gamma.k, gamma.t
        )));
    }
    advance_r(model, r, z, |y, u| match (y, u) {
        (Some(y), Some(u)) => curry(model.layout.private[t - 1][k], &gamma.table, y, u),
        _ => Ok(gamma.table.clone()),
    })
}

/// Shared part of the suffix update; `newest(y, u)` yields the new part from
/// `γ^k_t`, with `(y, u)` the revealed pair or `None` while nothing is shared.
fn advance_r(
    model: &Model,
    r: &RSuffix,
    z: usize,
    newest: impl FnOnce(Option<usize>, Option<usize>) -> Result<Vec<usize>>,
) -> Result<RSuffix> {
    let (t, k, n) = (r.t, r.k, model.delay());
    let mut parts = Vec::with_capacity(n.saturating_sub(1));
    if t + 1 <= n {
        parts.extend(r.parts.iter().cloned());
        parts.push(RPart {
            m: t,
            table: newest(None, None)?,
        });
    } else {
        let e = t + 1 - n;
        let (ys, us) = common_unrank(model, z);
        let (y, u) = (ys[k], us[k]);
        for part in r.parts.iter().filter(|p| p.m > e) {
            let domain = part_domain(model, k, t, part.m);
            parts.push(RPart {
                m: part.m,
                table: curry(domain, &part.table, y, u)?,
            });
        }
        if n >= 2 {
            parts.push(RPart {
                m: t,
                table: newest(Some(y), Some(u))?,
            });
        }
    }
    Ok(RSuffix { k, t: t + 1, parts })
}

/// `Π_t = H_t(Θ_t, r_t)` by exhaustive forward summation over the private
/// window.
pub fn h_map(model: &Model, state: &ThetaRState) -> Result<PiBelief> {
    let t = state.theta.t;
    model.check_time(t)?;
    let k_count = model.controllers();
    let lo = first_private(t, model.delay());
    for r in &state.r {
        let want: Vec<usize> = (lo..t).collect();
        let have: Vec<usize> = r.parts.iter().map(|p| p.m).collect();
        if r.t != t || want != have {
            return Err(Error::Precondition(format!(
                "suffix of controller {} does not cover times {lo}..{t}",
                r.k
            )));
        }
    }
    struct Particle {
        x: usize,
        ys: Vec<Vec<usize>>,
        us: Vec<Vec<usize>>,
        p: f64,
    }
    let mut particles: Vec<Particle> = state
        .theta
        .p
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(x, &p)| Particle {
            x,
            ys: vec![Vec::new(); k_count],
            us: vec![Vec::new(); k_count],
            p,
        })
        .collect();
    for m in lo..t {
        let mut next = Vec::new();
        for part in &particles {
            for (obs, q) in model.obs_joint(m, part.x) {
                let mut ys = part.ys.clone();
                let mut us = part.us.clone();
                let mut u = Vec::with_capacity(k_count);
                for k in 0..k_count {
                    ys[k].push(obs[k]);
                    let r = &state.r[k].parts[m - lo];
                    let a = r.table[part_domain(model, k, t, m).rank(&ys[k], &us[k])];
                    us[k].push(a);
                    u.push(a);
                }
                let a = model.joint_index(&u);
                for (x2, &w) in model.trans(m, part.x, a).iter().enumerate() {
                    if w > 0.0 {
                        next.push(Particle {
                            x: x2,
                            ys: ys.clone(),
                            us: us.clone(),
                            p: part.p * q * w,
                        });
                    }
                }
            }
        }
        particles = next;
    }
    let layout = &model.layout;
    let mut p = vec![0.0; layout.states[t - 1]];
    for part in &particles {
        for (obs, q) in model.obs_joint(t, part.x) {
            let lambda: Vec<usize> = (0..k_count)
                .map(|k| {
                    let mut ys = part.ys[k].clone();
                    ys.push(obs[k]);
                    layout.private[t - 1][k].rank(&ys, &part.us[k])
                })
                .collect();
            p[layout.state_rank(t, part.x, &lambda)] += part.p * q;
        }
    }
    Ok(PiBelief { t, p })
}

#[derive(Debug, Default, Clone)]
struct StateIndex {
    map: HashMap<(Vec<i64>, Vec<RSuffix>), Vec<usize>>,
}

impl StateIndex {
    fn find(&self, nodes: &[ThetaRState], s: &ThetaRState) -> Option<usize> {
        self.map
            .get(&(quantize(&s.theta.p), s.r.clone()))?
            .iter()
            .copied()
            .find(|&id| max_distance(&nodes[id].theta.p, &s.theta.p) <= DEDUP_TOLERANCE)
    }

    fn insert(&mut self, s: &ThetaRState, id: usize) {
        self.map
            .entry((quantize(&s.theta.p), s.r.clone()))
            .or_default()
            .push(id);
    }
}

#[derive(Debug, Clone)]
struct Expansion {
    decomposition: Decomposition,
    child: Vec<u32>,
}

/// Reachable `(Θ, r)` states with their expansions.
#[derive(Debug, Clone)]
pub struct ThetaRGraph {
    pub nodes: Vec<Vec<ThetaRState>>,
    expansions: Vec<Vec<Expansion>>,
    index: Vec<StateIndex>,
}

impl ThetaRGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.iter().map(Vec::len).sum()
    }

    pub fn locate(&self, s: &ThetaRState) -> Option<usize> {
        let t = s.theta.t;
        self.index.get(t - 1)?.find(&self.nodes[t - 1], s)
    }

    /// `(z, pz, child)` under a profile, ordered by `z`.
    pub fn edges(
        &self,
        model: &Model,
        t: usize,
        node: usize,
        profile: &GammaProfile,
    ) -> Result<Vec<(usize, f64, usize)>> {
        if t >= model.horizon() {
            return Ok(Vec::new());
        }
        let e = self
            .expansions
            .get(t - 1)
            .and_then(|l| l.get(node))
            .ok_or_else(|| {
                Error::domain("node", node, 0, self.nodes[t - 1].len().saturating_sub(1))
            })?;
        let tables: Vec<Vec<usize>> = profile.gammas.iter().map(|g| g.table.clone()).collect();
        let mut out: Vec<(usize, f64, usize)> = e
            .decomposition
            .combos_for(model, &tables)
            .into_iter()
            .filter(|&ci| e.child[ci] != u32::MAX)
            .map(|ci| {
                let c = &e.decomposition.combos[ci];
                (c.z, c.pz, e.child[ci] as usize)
            })
            .collect();
        out.sort_by_key(|e| e.0);
        Ok(out)
    }
}

/// Child state of a block: `Θ` through the observation, each suffix through
/// the slice the block's prescriptions take on the revealed group.
fn block_child(
    model: &Model,
    state: &ThetaRState,
    d: &Decomposition,
    ci: usize,
) -> Result<ThetaRState> {
    let t = d.t;
    let c = &d.combos[ci];
    let theta = theta_update(model, &state.theta, c.z)?;
    let r = (0..model.controllers())
        .map(|k| {
            let part = &model.layout.partition[t - 1][k];
            let size = part.group_size();
            let slice = c.slices[k];
            advance_r(model, &state.r[k], c.z, |_, _| {
                Ok((0..size).map(|pos| part.digit(slice, pos, size)).collect())
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ThetaRState { theta, r })
}

pub fn reachable_graph2(model: &Model, limits: crate::coordinator::Limits) -> Result<ThetaRGraph> {
    let horizon = model.horizon();
    let root = initial_state(model);
    let mut index = vec![StateIndex::default()];
    index[0].insert(&root, 0);
    let mut nodes = vec![vec![root]];
    let mut expansions = Vec::new();
    let mut total = 1usize;
    for t in 1..horizon {
        let mut next_nodes: Vec<ThetaRState> = Vec::new();
        let mut next_index = StateIndex::default();
        let mut layer = Vec::with_capacity(nodes[t - 1].len());
        for state in &nodes[t - 1] {
            let pi = h_map(model, state)?;
            let d = Decomposition::new(model, t, &pi.p, false)?;
            let mut child = vec![u32::MAX; d.combos.len()];
            for ci in 0..d.combos.len() {
                if d.combos[ci].pz <= 0.0 {
                    continue;
                }
                let next = block_child(model, state, &d, ci)?;
                let id = match next_index.find(&next_nodes, &next) {
                    Some(id) => id,
                    None => {
                        total += 1;
                        if total > limits.max_nodes {
                            return Err(Error::budget(
                                "information state graph nodes",
                                total as u128,
                                limits.max_nodes as u128,
                            ));
                        }
                        next_index.insert(&next, next_nodes.len());
                        next_nodes.push(next);
                        next_nodes.len() - 1
                    }
                };
                child[ci] = id as u32;
            }
            layer.push(Expansion {
                decomposition: d,
                child,
            });
        }
        expansions.push(layer);
        nodes.push(next_nodes);
        index.push(next_index);
    }
    Ok(ThetaRGraph {
        nodes,
        expansions,
        index,
    })
}

#[derive(Debug, Clone)]
pub struct Solution2 {
    pub graph: ThetaRGraph,
    pub values: crate::coordinator::ValueTable,
    pub policy: CoordinatorPolicy,
    pub optimal_cost: f64,
}

impl Solution2 {
    pub fn policy_edges(&self, model: &Model) -> Result<Vec<(usize, usize, (usize, f64, usize))>> {
        let mut out = Vec::new();
        for t in 1..model.horizon() {
            for node in 0..self.graph.nodes[t - 1].len() {
                let profile = GammaProfile::from_rank(model, t, self.policy.profiles[t - 1][node])?;
                for e in self.graph.edges(model, t, node, &profile)? {
                    out.push((t, node, e));
                }
            }
        }
        Ok(out)
    }
}

pub fn solve_dp2(model: &Model, limits: crate::coordinator::Limits) -> Result<Solution2> {
    let graph = reachable_graph2(model, limits)?;
    let horizon = model.horizon();
    let mut value: Vec<Vec<f64>> = vec![Vec::new(); horizon];
    let mut argmin: Vec<Vec<u64>> = vec![Vec::new(); horizon];
    for state in &graph.nodes[horizon - 1] {
        let pi = h_map(model, state)?;
        let d = Decomposition::new(model, horizon, &pi.p, false)?;
        let g: Vec<f64> = d.combos.iter().map(|c| c.cost).collect();
        let (v, tables) = d.minimize(model, &g);
        value[horizon - 1].push(v);
        argmin[horizon - 1].push(Decomposition::profile_rank(model, horizon, &tables));
    }
    for t in (1..horizon).rev() {
        let (done, todo) = value.split_at_mut(t);
        let next = &todo[0];
        for e in &graph.expansions[t - 1] {
            let d = &e.decomposition;
            let g: Vec<f64> = d
                .combos
                .iter()
                .zip(&e.child)
                .map(|(c, &child)| {
                    if child == u32::MAX {
                        c.cost
                    } else {
                        c.cost + c.pz * next[child as usize]
                    }
                })
                .collect();
            let (v, tables) = d.minimize(model, &g);
            done[t - 1].push(v);
            argmin[t - 1].push(Decomposition::profile_rank(model, t, &tables));
        }
    }
    let optimal_cost = value[0][0];
    Ok(Solution2 {
        graph,
        policy: CoordinatorPolicy {
            profiles: argmin.clone(),
        },
        values: crate::coordinator::ValueTable { value, argmin },
        optimal_cost,
    })
}

/// Design replaying `(Θ, r)` along the common history.
pub struct ThetaRPolicyDesign<'a> {
    model: &'a Model,
    graph: &'a ThetaRGraph,
    policy: &'a CoordinatorPolicy,
    cache: Mutex<HashMap<Vec<usize>, (ThetaRState, usize)>>,
}

pub fn extract_design2<'a>(model: &'a Model, solution: &'a Solution2) -> ThetaRPolicyDesign<'a> {
    ThetaRPolicyDesign::new(model, &solution.graph, &solution.policy)
}

impl<'a> ThetaRPolicyDesign<'a> {
    pub fn new(model: &'a Model, graph: &'a ThetaRGraph, policy: &'a CoordinatorPolicy) -> Self {
        ThetaRPolicyDesign {
            model,
            graph,
            policy,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn locate(&self, common: &[usize]) -> Result<(ThetaRState, usize)> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(common) {
            return Ok(hit.clone());
        }
        let t = common.len() + 1;
        self.model.check_time(t)?;
        let found = if common.is_empty() {
            (initial_state(self.model), 0)
        } else {
            let (state, node) = self.locate(&common[..common.len() - 1])?;
            let profile =
                GammaProfile::from_rank(self.model, t - 1, self.policy.profiles[t - 2][node])?;
            let z = common[common.len() - 1];
            let pi = h_map(self.model, &state)?;
            if observation_probability(self.model, &pi, &profile, z)? <= 0.0 {
                return Err(Error::OffDesign {
                    t,
                    reason: format!("common observation {z} has probability zero under the policy"),
                });
            }
            let next = advance_state(self.model, &state, &profile, z)?;
            let id = self.graph.locate(&next).ok_or_else(|| Error::OffDesign {
                t,
                reason: "information state is not a node of the solved graph".into(),
            })?;
            (next, id)
        };
        self.cache
            .lock()
            .expect("cache lock")
            .insert(common.to_vec(), found.clone());
        Ok(found)
    }
}

/// `(Θ_{t+1}, r_{t+1})` under a full profile.
pub fn advance_state(
    model: &Model,
    state: &ThetaRState,
    profile: &GammaProfile,
    z: usize,
) -> Result<ThetaRState> {
    let theta = theta_update(model, &state.theta, z)?;
    let r = state
        .r
        .iter()
        .zip(&profile.gammas)
        .map(|(r, g)| r_update(model, r, g, z))
        .collect::<Result<Vec<_>>>()?;
    Ok(ThetaRState { theta, r })
}

impl Design for ThetaRPolicyDesign<'_> {
    fn prescription(&self, t: usize, common: &[usize]) -> Result<GammaProfile> {
        if common.len() + 1 != t {
            return Err(Error::Precondition(format!(
                "common history of length {} at time {t}",
                common.len()
            )));
        }
        let (_, node) = self.locate(common)?;
        GammaProfile::from_rank(self.model, t, self.policy.profiles[t - 1][node])
    }
}
