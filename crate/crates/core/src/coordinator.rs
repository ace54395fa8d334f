//! The coordinator's belief `Π_t` over `S_t = (X_{t-1}, Λ^1_t, .., Λ^K_t)`,
//! its update, the reachable belief graph and the backward dynamic program.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::decompose::{successors, Decomposition};
use crate::error::{Error, Result};
use crate::histories::{
    apply_profile, gamma_profiles, profile_count, CoordinatorPolicy, Design, GammaProfile,
};
use crate::model::Model;

/// Beliefs closer than this in the max norm are merged.
pub const DEDUP_TOLERANCE: f64 = 1e-9;

/// A realization of `S_t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointState {
    pub t: usize,
    pub x_prev: usize,
    pub lambda: Vec<usize>,
}

impl JointState {
    pub fn rank(&self, model: &Model) -> usize {
        model.layout.state_rank(self.t, self.x_prev, &self.lambda)
    }

    pub fn from_rank(model: &Model, t: usize, rank: usize) -> Result<Self> {
        model.check_time(t)?;
        let size = model.layout.states[t - 1];
        if rank >= size {
            return Err(Error::domain("joint state rank", rank, 0, size - 1));
        }
        let (x_prev, lambda) = model.layout.state_unrank(t, rank);
        Ok(JointState { t, x_prev, lambda })
    }
}

/// Number of joint states at `t`.
pub fn state_count(model: &Model, t: usize) -> usize {
    model.layout.states[t - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiBelief {
    pub t: usize,
    pub p: Vec<f64>,
}

/// `Π_1(x, y^1, .., y^K) = P(X_0 = x) · Π_k P(Y^k_1 = y^k | X_0 = x)`.
pub fn initial_belief(model: &Model) -> PiBelief {
    let layout = &model.layout;
    let mut p = vec![0.0; layout.states[0]];
    for (x, &px) in model.x0().iter().enumerate() {
        for (ys, q) in model.obs_joint(1, x) {
            p[layout.state_rank(1, x, ys)] += px * q;
        }
    }
    PiBelief { t: 1, p }
}

fn check_profile(model: &Model, t: usize, profile: &GammaProfile) -> Result<()> {
    model.check_time(t)?;
    if profile.t != t || profile.gammas.len() != model.controllers() {
        return Err(Error::Precondition(format!(
            "profile for time {} does not fit time {t}",
            profile.t
        )));
    }
    for (k, g) in profile.gammas.iter().enumerate() {
        if g.table.len() != model.layout.lambda[t - 1][k] {
            return Err(Error::Precondition(format!(
                "prescription of controller {k} has {} entries, expected {}",
                g.table.len(),
                model.layout.lambda[t - 1][k]
            )));
        }
    }
    Ok(())
}

fn check_belief(model: &Model, pi: &PiBelief) -> Result<()> {
    model.check_time(pi.t)?;
    if pi.p.len() != model.layout.states[pi.t - 1] {
        return Err(Error::Precondition(format!(
            "belief at time {} has {} entries, expected {}",
            pi.t,
            pi.p.len(),
            model.layout.states[pi.t - 1]
        )));
    }
    Ok(())
}

/// Distribution of `(S_{t+1}, Z_{t+1})` from one state under a profile, as
/// `(next state, common observation rank, probability)` triples.
pub fn joint_step_kernel(
    model: &Model,
    t: usize,
    s: &JointState,
    profile: &GammaProfile,
) -> Result<Vec<(JointState, usize, f64)>> {
    if t == 0 || t >= model.horizon() {
        return Err(Error::domain(
            "time",
            t,
            1,
            model.horizon().saturating_sub(1),
        ));
    }
    check_profile(model, t, profile)?;
    let ja = apply_profile(model, profile, &s.lambda)?;
    let z = model.layout.z_after(t, &s.lambda, &ja.u);
    let mut out: Vec<(usize, f64)> = Vec::new();
    successors(
        model,
        t,
        s.x_prev,
        &s.lambda,
        &ja.u,
        ja.index,
        |s2, q| match out.iter_mut().find(|(r, _)| *r == s2) {
            Some(entry) => entry.1 += q,
            None => out.push((s2, q)),
        },
    );
    out.sort_by_key(|&(r, _)| r);
    out.into_iter()
        .map(|(r, q)| Ok((JointState::from_rank(model, t + 1, r)?, z, q)))
        .collect()
}

/// Unnormalized successor masses for every common observation.
fn propagate(
    model: &Model,
    pi: &PiBelief,
    profile: &GammaProfile,
) -> Result<HashMap<usize, Vec<f64>>> {
    check_belief(model, pi)?;
    check_profile(model, pi.t, profile)?;
    let t = pi.t;
    if t >= model.horizon() {
        return Err(Error::domain(
            "time",
            t,
            1,
            model.horizon().saturating_sub(1),
        ));
    }
    let layout = &model.layout;
    let mut masses: HashMap<usize, Vec<f64>> = HashMap::new();
    for (s, &p) in pi.p.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let (x, lambda) = layout.state_unrank(t, s);
        let ja = apply_profile(model, profile, &lambda)?;
        let z = layout.z_after(t, &lambda, &ja.u);
        let m = masses
            .entry(z)
            .or_insert_with(|| vec![0.0; layout.states[t]]);
        successors(model, t, x, &lambda, &ja.u, ja.index, |s2, q| {
            m[s2] += p * q
        });
    }
    Ok(masses)
}

/// `(Π_{t+1}, P(Z_{t+1} = z | π, γ))`.
pub fn belief_update(
    model: &Model,
    pi: &PiBelief,
    profile: &GammaProfile,
    z: usize,
) -> Result<(PiBelief, f64)> {
    let mut masses = propagate(model, pi, profile)?;
    let m = masses
        .remove(&z)
        .ok_or(Error::Unreachable { t: pi.t + 1 })?;
    normalized(pi.t + 1, m)
}

fn normalized(t: usize, mut m: Vec<f64>) -> Result<(PiBelief, f64)> {
    let pz: f64 = m.iter().sum();
    if pz <= 0.0 {
        return Err(Error::Unreachable { t });
    }
    m.iter_mut().for_each(|v| *v /= pz);
    Ok((PiBelief { t, p: m }, pz))
}

/// Every positive-probability successor, ordered by observation rank.
pub fn belief_update_all(
    model: &Model,
    pi: &PiBelief,
    profile: &GammaProfile,
) -> Result<Vec<(usize, PiBelief, f64)>> {
    let masses = propagate(model, pi, profile)?;
    let mut zs: Vec<usize> = masses.keys().copied().collect();
    zs.sort_unstable();
    let mut masses = masses;
    let mut out = Vec::new();
    for z in zs {
        let m = masses.remove(&z).expect("key listed");
        if m.iter().sum::<f64>() > 0.0 {
            let (b, pz) = normalized(pi.t + 1, m)?;
            out.push((z, b, pz));
        }
    }
    Ok(out)
}

/// `C_t(π, γ) = Σ_s π(s) Σ_x' P(x' | x, a) c_t(x', a)` with `a = γ(λ)`.
pub fn expected_stage_cost(model: &Model, pi: &PiBelief, profile: &GammaProfile) -> Result<f64> {
    check_belief(model, pi)?;
    check_profile(model, pi.t, profile)?;
    let layout = &model.layout;
    let mut total = 0.0;
    for (s, &p) in pi.p.iter().enumerate() {
        if p > 0.0 {
            let (x, lambda) = layout.state_unrank(pi.t, s);
            let ja = apply_profile(model, profile, &lambda)?;
            total += p * model.expected_cost(pi.t, x, ja.index);
        }
    }
    Ok(total)
}

/// `P(Z_{t+1} = z | π, γ) = Σ_s 1{ĥ(s, γ) = z} π(s)`.
pub fn observation_probability(
    model: &Model,
    pi: &PiBelief,
    profile: &GammaProfile,
    z: usize,
) -> Result<f64> {
    check_belief(model, pi)?;
    check_profile(model, pi.t, profile)?;
    if pi.t >= model.horizon() {
        return Err(Error::domain(
            "time",
            pi.t,
            1,
            model.horizon().saturating_sub(1),
        ));
    }
    let layout = &model.layout;
    let mut total = 0.0;
    for (s, &p) in pi.p.iter().enumerate() {
        if p > 0.0 {
            let (_, lambda) = layout.state_unrank(pi.t, s);
            let ja = apply_profile(model, profile, &lambda)?;
            if layout.z_after(pi.t, &lambda, &ja.u) == z {
                total += p;
            }
        }
    }
    Ok(total)
}

/// Approximate-key index of beliefs with a max-norm check on collision.
#[derive(Debug, Default, Clone)]
pub(crate) struct BeliefIndex {
    map: HashMap<Vec<i64>, Vec<usize>>,
}

pub(crate) fn quantize(p: &[f64]) -> Vec<i64> {
    p.iter().map(|v| (v * 1e8).round() as i64).collect()
}

pub(crate) fn max_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

impl BeliefIndex {
    pub fn find<'b>(
        &self,
        key: &[i64],
        p: &[f64],
        stored: impl Fn(usize) -> &'b [f64],
    ) -> Option<usize> {
        self.map
            .get(key)?
            .iter()
            .copied()
            .find(|&id| max_distance(stored(id), p) <= DEDUP_TOLERANCE)
    }

    pub fn insert(&mut self, key: Vec<i64>, id: usize) {
        self.map.entry(key).or_default().push(id);
    }
}

/// Budgets for graph construction.
#[derive(Debug, Clone, Copy)]
pub struct Limits {
    /// Total nodes over all times.
    pub max_nodes: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_nodes: 200_000 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Expansion {
    pub decomposition: Decomposition,
    /// Child node id per combo; `u32::MAX` for zero-probability blocks.
    pub child: Vec<u32>,
}

/// One outgoing edge of the belief graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub z: usize,
    pub pz: f64,
    pub child: usize,
}

/// All beliefs reachable from `Π_1` under every profile sequence.
#[derive(Debug, Clone)]
pub struct BeliefGraph {
    /// `nodes[t-1][id]`
    pub nodes: Vec<Vec<PiBelief>>,
    expansions: Vec<Vec<Expansion>>,
    index: Vec<BeliefIndex>,
}

impl BeliefGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.iter().map(Vec::len).sum()
    }

    /// Number of `(node, profile, z)` edges with positive probability.
    pub fn edge_count(&self, model: &Model) -> u128 {
        self.expansions
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|e| edge_total(model, &e.decomposition))
                    .sum::<u128>()
            })
            .sum()
    }

    /// Children of `node` at `t` under `profile`, ordered by observation.
    pub fn edges(
        &self,
        model: &Model,
        t: usize,
        node: usize,
        profile: &GammaProfile,
    ) -> Result<Vec<Edge>> {
        if t >= model.horizon() {
            return Ok(Vec::new());
        }
        let e = self
            .expansions
            .get(t - 1)
            .and_then(|layer| layer.get(node))
            .ok_or_else(|| {
                Error::domain("node", node, 0, self.nodes[t - 1].len().saturating_sub(1))
            })?;
        check_profile(model, t, profile)?;
        let tables: Vec<Vec<usize>> = profile.gammas.iter().map(|g| g.table.clone()).collect();
        let mut out: Vec<Edge> = e
            .decomposition
            .combos_for(model, &tables)
            .into_iter()
            .filter(|&ci| e.child[ci] != u32::MAX)
            .map(|ci| Edge {
                z: e.decomposition.combos[ci].z,
                pz: e.decomposition.combos[ci].pz,
                child: e.child[ci] as usize,
            })
            .collect();
        out.sort_by_key(|edge| edge.z);
        Ok(out)
    }

    /// Node id of a belief at `t`, if present.
    pub fn locate(&self, pi: &PiBelief) -> Option<usize> {
        let layer = &self.nodes[pi.t - 1];
        self.index[pi.t - 1].find(&quantize(&pi.p), &pi.p, |id| layer[id].p.as_slice())
    }
}

/// Edges of one node summed over all profiles: a block is selected by every
/// profile agreeing with its slices on the block's active members.
fn edge_total(model: &Model, d: &Decomposition) -> u128 {
    let t = d.t;
    let count = profile_count(model, t).unwrap_or(u64::MAX) as u128;
    let layout = &model.layout;
    d.combos
        .iter()
        .filter(|c| c.pz > 0.0)
        .map(|c| {
            let fixed: u128 = (0..layout.k)
                .map(|k| {
                    let active = layout.partition[t - 1][k].members[c.groups[k]]
                        .iter()
                        .filter(|&&l| d.active[k][l])
                        .count() as u32;
                    (model.u_size(k) as u128).pow(active)
                })
                .product();
            count / fixed
        })
        .sum()
}

pub fn reachable_graph(model: &Model, limits: Limits) -> Result<BeliefGraph> {
    let horizon = model.horizon();
    let root = initial_belief(model);
    let mut nodes = vec![vec![root.clone()]];
    let mut index = vec![BeliefIndex::default()];
    index[0].insert(quantize(&root.p), 0);
    let mut expansions = Vec::new();
    let mut total = 1usize;
    for t in 1..horizon {
        let mut next_nodes: Vec<PiBelief> = Vec::new();
        let mut next_index = BeliefIndex::default();
        let mut layer = Vec::with_capacity(nodes[t - 1].len());
        for node in &nodes[t - 1] {
            let mut d = Decomposition::new(model, t, &node.p, true)?;
            let mut child = vec![u32::MAX; d.combos.len()];
            for (ci, c) in d.combos.iter().enumerate() {
                if c.pz <= 0.0 {
                    continue;
                }
                let p = c.child.as_ref().expect("children requested");
                let key = quantize(p);
                let id = match next_index.find(&key, p, |id| next_nodes[id].p.as_slice()) {
                    Some(id) => id,
                    None => {
                        total += 1;
                        if total > limits.max_nodes {
                            return Err(Error::budget(
                                "belief graph nodes",
                                total as u128,
                                limits.max_nodes as u128,
                            ));
                        }
                        next_nodes.push(PiBelief {
                            t: t + 1,
                            p: p.clone(),
                        });
                        next_index.insert(key, next_nodes.len() - 1);
                        next_nodes.len() - 1
                    }
                };
                child[ci] = id as u32;
            }
            d.forget_children();
            layer.push(Expansion {
                decomposition: d,
                child,
            });
        }
        expansions.push(layer);
        nodes.push(next_nodes);
        index.push(next_index);
    }
    Ok(BeliefGraph {
        nodes,
        expansions,
        index,
    })
}

/// `J[t-1][node]` and the minimizing profile rank of every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub value: Vec<Vec<f64>>,
    pub argmin: Vec<Vec<u64>>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub graph: BeliefGraph,
    pub values: ValueTable,
    pub policy: CoordinatorPolicy,
    pub optimal_cost: f64,
}

impl Solution {
    /// The on-policy subgraph: `(t, node, z, pz, child)` for every edge taken
    /// by the optimal profiles.
    pub fn policy_edges(&self, model: &Model) -> Result<Vec<(usize, usize, Edge)>> {
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

pub fn solve_dp(model: &Model, limits: Limits) -> Result<Solution> {
    let graph = reachable_graph(model, limits)?;
    let horizon = model.horizon();
    let mut value: Vec<Vec<f64>> = vec![Vec::new(); horizon];
    let mut argmin: Vec<Vec<u64>> = vec![Vec::new(); horizon];
    for node in &graph.nodes[horizon - 1] {
        let d = Decomposition::new(model, horizon, &node.p, false)?;
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
    Ok(Solution {
        graph,
        policy: CoordinatorPolicy {
            profiles: argmin.clone(),
        },
        values: ValueTable { value, argmin },
        optimal_cost,
    })
}

/// Design that replays the belief recursion along the common history and
/// plays the policy's profile at the located node.
pub struct BeliefPolicyDesign<'a> {
    model: &'a Model,
    graph: &'a BeliefGraph,
    policy: &'a CoordinatorPolicy,
    cache: Mutex<HashMap<Vec<usize>, (PiBelief, usize)>>,
}

pub fn extract_design<'a>(model: &'a Model, solution: &'a Solution) -> BeliefPolicyDesign<'a> {
    BeliefPolicyDesign::new(model, &solution.graph, &solution.policy)
}

impl<'a> BeliefPolicyDesign<'a> {
    pub fn new(model: &'a Model, graph: &'a BeliefGraph, policy: &'a CoordinatorPolicy) -> Self {
        BeliefPolicyDesign {
            model,
            graph,
            policy,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Belief and node id reached after the common history `[Z_2..Z_t]`.
    pub fn locate(&self, common: &[usize]) -> Result<(PiBelief, usize)> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(common) {
            return Ok(hit.clone());
        }
        let t = common.len() + 1;
        self.model.check_time(t)?;
        let found = if common.is_empty() {
            (initial_belief(self.model), 0)
        } else {
            let (pi, node) = self.locate(&common[..common.len() - 1])?;
            let profile =
                GammaProfile::from_rank(self.model, t - 1, self.policy.profiles[t - 2][node])?;
            let z = common[common.len() - 1];
            let (next, _) = belief_update(self.model, &pi, &profile, z).map_err(|e| match e {
                Error::Unreachable { .. } => Error::OffDesign {
                    t,
                    reason: format!("common observation {z} has probability zero under the policy"),
                },
                other => other,
            })?;
            let id = self.graph.locate(&next).ok_or_else(|| Error::OffDesign {
                t,
                reason: "belief is not a node of the solved graph".into(),
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

impl Design for BeliefPolicyDesign<'_> {
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

/// Memoized evaluation of `J_t` at arbitrary beliefs by direct recursion.
pub struct ValueOracle<'a> {
    model: &'a Model,
    memo: HashMap<(usize, Vec<u64>), f64>,
    evaluations: usize,
    max_evaluations: usize,
}

impl<'a> ValueOracle<'a> {
    pub fn new(model: &'a Model, max_evaluations: usize) -> Self {
        ValueOracle {
            model,
            memo: HashMap::new(),
            evaluations: 0,
            max_evaluations,
        }
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn value(&mut self, pi: &PiBelief) -> Result<f64> {
        check_belief(self.model, pi)?;
        let key = (pi.t, pi.p.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        self.evaluations += 1;
        if self.evaluations > self.max_evaluations {
            return Err(Error::budget(
                "value recursion evaluations",
                self.evaluations as u128,
                self.max_evaluations as u128,
            ));
        }
        let t = pi.t;
        let d = Decomposition::new(self.model, t, &pi.p, true)?;
        let mut g = Vec::with_capacity(d.combos.len());
        for c in &d.combos {
            let v = match &c.child {
                Some(child) if c.pz > 0.0 => {
                    let j = self.value(&PiBelief {
                        t: t + 1,
                        p: child.clone(),
                    })?;
                    c.cost + c.pz * j
                }
                _ => c.cost,
            };
            g.push(v);
        }
        let (v, _) = d.minimize(self.model, &g);
        self.memo.insert(key, v);
        Ok(v)
    }
}

pub fn value_at(model: &Model, pi: &PiBelief, max_evaluations: usize) -> Result<f64> {
    ValueOracle::new(model, max_evaluations).value(pi)
}

/// Alpha vectors of `J_t` over `S_t`; the value is their lower envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSet {
    pub t: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl AlphaSet {
    pub fn value(&self, p: &[f64]) -> f64 {
        self.vectors
            .iter()
            .map(|a| a.iter().zip(p).map(|(x, y)| x * y).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Removes duplicates and vectors pointwise dominated from below.
fn prune(vectors: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut keep: Vec<Vec<f64>> = Vec::new();
    'outer: for v in vectors {
        for kept in &keep {
            if kept.iter().zip(&v).all(|(a, b)| a <= b) {
                continue 'outer;
            }
        }
        keep.retain(|kept| !v.iter().zip(kept).all(|(a, b)| a <= b));
        keep.push(v);
    }
    keep
}

/// Budgets for [`alpha_backup`].
#[derive(Debug, Clone, Copy)]
pub struct AlphaLimits {
    /// Vectors held for one time before pruning.
    pub max_vectors: usize,
    /// `profiles × |A_{t+1}|` projections computed for one time.
    pub max_projections: u128,
}

impl Default for AlphaLimits {
    fn default() -> Self {
        AlphaLimits {
            max_vectors: 100_000,
            max_projections: 50_000_000,
        }
    }
}

/// Exact backward construction of the alpha-vector sets, `result[t-1]`.
pub fn alpha_backup(model: &Model, limits: AlphaLimits, pruning: bool) -> Result<Vec<AlphaSet>> {
    let layout = &model.layout;
    let horizon = model.horizon();
    let max_vectors = limits.max_vectors;
    let mut sets: Vec<AlphaSet> = Vec::with_capacity(horizon);
    for t in (1..=horizon).rev() {
        let size = layout.states[t - 1];
        if let Some(next) = sets.last() {
            let work = profile_count(model, t)
                .map_or(u128::MAX, |c| c as u128 * next.vectors.len() as u128);
            if work > limits.max_projections {
                return Err(Error::budget(
                    "alpha projections",
                    work,
                    limits.max_projections,
                ));
            }
        }
        let mut vectors: Vec<Vec<f64>> = Vec::new();
        for profile in gamma_profiles(model, t)? {
            let mut stage = vec![0.0; size];
            let mut by_z: Vec<(usize, Vec<usize>)> = Vec::new();
            let mut actions = Vec::with_capacity(size);
            for (s, c) in stage.iter_mut().enumerate() {
                let (x, lambda) = layout.state_unrank(t, s);
                let ja = apply_profile(model, &profile, &lambda)?;
                *c = model.expected_cost(t, x, ja.index);
                if t < horizon {
                    let z = layout.z_after(t, &lambda, &ja.u);
                    match by_z.iter_mut().find(|(zz, _)| *zz == z) {
                        Some((_, list)) => list.push(s),
                        None => by_z.push((z, vec![s])),
                    }
                }
                actions.push((x, lambda, ja));
            }
            let mut partial = vec![stage];
            if t < horizon {
                let next = &sets.last().expect("later set built first").vectors;
                for (_, block) in &by_z {
                    let mut projections: Vec<Vec<f64>> = next
                        .iter()
                        .map(|alpha| {
                            block
                                .iter()
                                .map(|&s| {
                                    let (x, lambda, ja) = &actions[s];
                                    let mut acc = 0.0;
                                    successors(model, t, *x, lambda, &ja.u, ja.index, |s2, q| {
                                        acc += q * alpha[s2]
                                    });
                                    acc
                                })
                                .collect()
                        })
                        .collect();
                    projections = prune(projections);
                    let count = partial.len().saturating_mul(projections.len());
                    if vectors.len().saturating_add(count) > max_vectors {
                        return Err(Error::budget(
                            "alpha vectors",
                            vectors.len().saturating_add(count) as u128,
                            max_vectors as u128,
                        ));
                    }
                    let mut grown = Vec::with_capacity(count);
                    for base in &partial {
                        for proj in &projections {
                            let mut v = base.clone();
                            for (&s, &w) in block.iter().zip(proj) {
                                v[s] += w;
                            }
                            grown.push(v);
                        }
                    }
                    partial = grown;
                }
            }
            vectors.extend(partial);
            if vectors.len() > max_vectors {
                return Err(Error::budget(
                    "alpha vectors",
                    vectors.len() as u128,
                    max_vectors as u128,
                ));
            }
        }
        if pruning {
            vectors = prune(vectors);
        }
        sets.push(AlphaSet { t, vectors });
    }
    sets.reverse();
    Ok(sets)
}
