//! One coordinator step from a belief over `S_t`, split into blocks.
//!
//! Private ranks of each controller are partitioned into groups (see
//! [`Partition`]). A block is one group per controller; all states of a block
//! emit the same common observation once the slices (the actions the profile
//! assigns to the block's members) are fixed. The step objective is then a
//! sum over blocks of terms depending only on that block's slices, which
//! lets the minimization over profiles enumerate all but the last controller
//! and optimize the last one group by group.
//!
//! Members carrying no probability are inactive: their actions never matter,
//! so only slices that put action 0 on them are built ("canonical" slices).

use crate::error::{Error, Result};
use crate::histories::{profile_count, profile_rank};
use crate::model::Model;

/// Largest dense block table built for one belief.
const MAX_BLOCK_TABLE: usize = 1 << 24;

#[derive(Debug, Clone)]
pub(crate) struct Combo {
    pub groups: Vec<usize>,
    pub slices: Vec<usize>,
    /// `Σ_{s ∈ block} π(s) · c̄_t(x, a)`
    pub cost: f64,
    /// Block probability, equal to the probability of `z`.
    pub pz: f64,
    pub z: usize,
    /// Normalized successor belief, when requested and `t < T`.
    pub child: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Decomposition {
    pub t: usize,
    k: usize,
    group_count: Vec<usize>,
    slice_count: Vec<usize>,
    slice_total: usize,
    /// `[k][λ]`
    pub active: Vec<Vec<bool>>,
    active_groups: Vec<Vec<usize>>,
    /// `[k][g]`, ascending; empty for inactive groups.
    canon: Vec<Vec<Vec<usize>>>,
    /// Group-tuple index of each non-empty block.
    tuples: Vec<usize>,
    tuple_groups: Vec<Vec<usize>>,
    /// Tuples listed per group of the last controller.
    by_last: Vec<Vec<usize>>,
    pub combos: Vec<Combo>,
    /// Dense `gt · slice_total + st` to combo index.
    dense: Vec<u32>,
}

const ABSENT: u32 = u32::MAX;

struct Support {
    x: usize,
    lambda: Vec<usize>,
    p: f64,
}

impl Decomposition {
    pub fn new(model: &Model, t: usize, p: &[f64], children: bool) -> Result<Self> {
        let layout = &model.layout;
        let k_count = layout.k;
        profile_count(model, t)
            .ok_or_else(|| Error::budget("profile space", u128::MAX, u64::MAX as u128))?;
        let parts = &layout.partition[t - 1];
        let support: Vec<Support> = p
            .iter()
            .enumerate()
            .filter(|(_, &q)| q > 0.0)
            .map(|(s, &q)| {
                let (x, lambda) = layout.state_unrank(t, s);
                Support { x, lambda, p: q }
            })
            .collect();

        let mut active: Vec<Vec<bool>> = (0..k_count)
            .map(|k| vec![false; layout.lambda[t - 1][k]])
            .collect();
        for st in &support {
            for (k, &l) in st.lambda.iter().enumerate() {
                active[k][l] = true;
            }
        }
        let group_count: Vec<usize> = parts.iter().map(|p| p.members.len()).collect();
        let slice_count: Vec<usize> = parts.iter().map(|p| p.slices).collect();
        let group_total = checked_product(&group_count)?;
        let slice_total = checked_product(&slice_count)?;
        let dense_len = group_total
            .checked_mul(slice_total)
            .filter(|&n| n <= MAX_BLOCK_TABLE)
            .ok_or_else(|| Error::budget("block table", u128::MAX, MAX_BLOCK_TABLE as u128))?;

        let mut active_groups = Vec::with_capacity(k_count);
        let mut canon = Vec::with_capacity(k_count);
        for k in 0..k_count {
            let part = &parts[k];
            let mut act = Vec::new();
            let mut per_group = Vec::with_capacity(part.members.len());
            for (g, members) in part.members.iter().enumerate() {
                let weights: Vec<usize> = members
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| active[k][l])
                    .map(|(pos, _)| part.radix.pow((members.len() - 1 - pos) as u32))
                    .collect();
                if weights.is_empty() {
                    per_group.push(Vec::new());
                    continue;
                }
                act.push(g);
                per_group.push(canonical_slices(part.radix, &weights));
            }
            active_groups.push(act);
            canon.push(per_group);
        }

        let mut buckets: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, st) in support.iter().enumerate() {
            let gt = st.lambda.iter().enumerate().fold(0, |acc, (k, &l)| {
                acc * group_count[k] + parts[k].group_of[l]
            });
            buckets.entry(gt).or_default().push(i);
        }

        let last_groups = group_count[k_count - 1];
        let mut by_last = vec![Vec::new(); last_groups];
        let mut tuples = Vec::with_capacity(buckets.len());
        let mut tuple_groups = Vec::with_capacity(buckets.len());
        let mut dense = vec![ABSENT; dense_len];
        let mut combos = Vec::new();
        let want_children = children && t < layout.horizon;
        let next_len = if want_children { layout.states[t] } else { 0 };

        for (ti, (&gt, members)) in buckets.iter().enumerate() {
            let groups = unmix(gt, &group_count);
            by_last[groups[k_count - 1]].push(ti);
            let lists: Vec<&[usize]> = (0..k_count)
                .map(|k| canon[k][groups[k]].as_slice())
                .collect();
            let count = lists.iter().map(|l| l.len()).product::<usize>();
            if combos.len() + count > MAX_BLOCK_TABLE {
                return Err(Error::budget(
                    "block combinations",
                    (combos.len() + count) as u128,
                    MAX_BLOCK_TABLE as u128,
                ));
            }
            let mut choice = vec![0usize; k_count];
            let mut u = vec![0usize; k_count];
            loop {
                let slices: Vec<usize> = (0..k_count).map(|k| lists[k][choice[k]]).collect();
                let st = slices
                    .iter()
                    .enumerate()
                    .fold(0, |acc, (k, &s)| acc * slice_count[k] + s);
                let mut cost = 0.0;
                let mut pz = 0.0;
                let mut child = if want_children {
                    vec![0.0; next_len]
                } else {
                    Vec::new()
                };
                for &i in members {
                    let st_ = &support[i];
                    for k in 0..k_count {
                        let part = &parts[k];
                        u[k] = part.digit(slices[k], part.pos[st_.lambda[k]], part.group_size());
                    }
                    let a = model.joint_index(&u);
                    cost += st_.p * model.expected_cost(t, st_.x, a);
                    pz += st_.p;
                    if want_children {
                        successors(model, t, st_.x, &st_.lambda, &u, a, |s2, q| {
                            child[s2] += st_.p * q;
                        });
                    }
                }
                let z = layout.z_of_block(t, &groups, &slices);
                let child = want_children.then(|| {
                    let total: f64 = child.iter().sum();
                    child.iter_mut().for_each(|v| *v /= total);
                    child
                });
                dense[gt * slice_total + st] = combos.len() as u32;
                combos.push(Combo {
                    groups: groups.clone(),
                    slices,
                    cost,
                    pz,
                    z,
                    child,
                });
                if !advance(&mut choice, &lists) {
                    break;
                }
            }
            tuples.push(gt);
            tuple_groups.push(groups);
        }

        Ok(Decomposition {
            t,
            k: k_count,
            group_count,
            slice_count,
            slice_total,
            active,
            active_groups,
            canon,
            tuples,
            tuple_groups,
            by_last,
            combos,
            dense,
        })
    }

    /// Drops successor beliefs once they have been consumed.
    pub fn forget_children(&mut self) {
        for c in &mut self.combos {
            c.child = None;
        }
    }

    /// Slice of group `g` under a full table, with inactive members zeroed.
    pub fn canonical_slice(&self, model: &Model, k: usize, g: usize, table: &[usize]) -> usize {
        let part = &model.layout.partition[self.t - 1][k];
        let size = part.group_size();
        part.members[g]
            .iter()
            .enumerate()
            .filter(|(_, &l)| self.active[k][l])
            .map(|(pos, &l)| table[l] * part.radix.pow((size - 1 - pos) as u32))
            .sum()
    }

    /// Combos selected by a full profile, one per non-empty block.
    pub fn combos_for(&self, model: &Model, tables: &[Vec<usize>]) -> Vec<usize> {
        self.tuple_groups
            .iter()
            .zip(&self.tuples)
            .map(|(groups, &gt)| {
                let st = (0..self.k).fold(0, |acc, k| {
                    acc * self.slice_count[k]
                        + self.canonical_slice(model, k, groups[k], &tables[k])
                });
                self.dense[gt * self.slice_total + st] as usize
            })
            .collect()
    }

    /// Minimizes `Σ_blocks value[combo]` over all profiles.
    ///
    /// Returns the minimum and the smallest-rank minimizing profile as
    /// per-controller tables.
    pub fn minimize(&self, model: &Model, value: &[f64]) -> (f64, Vec<Vec<usize>>) {
        let layout = &model.layout;
        let t = self.t;
        let last = self.k - 1;
        let parts = &layout.partition[t - 1];
        let lambda = &layout.lambda[t - 1];

        let positions: Vec<Vec<usize>> = (0..last)
            .map(|k| (0..lambda[k]).filter(|&l| self.active[k][l]).collect())
            .collect();
        let radices: Vec<usize> = (0..last).map(|k| model.u_size(k)).collect();
        let mut digits: Vec<Vec<usize>> = positions.iter().map(|p| vec![0; p.len()]).collect();
        let mut tables: Vec<Vec<usize>> = (0..last).map(|k| vec![0; lambda[k]]).collect();
        let mut slices: Vec<Vec<usize>> = (0..last).map(|k| vec![0; self.group_count[k]]).collect();
        let mut prefix_st = vec![0usize; self.tuples.len()];
        let last_slices = self.slice_count[last];

        let mut best = f64::INFINITY;
        let mut best_prefix = tables.clone();
        let mut best_last = vec![0usize; self.group_count[last]];
        let mut chosen = vec![0usize; self.group_count[last]];

        loop {
            for k in 0..last {
                for (pos, &l) in positions[k].iter().enumerate() {
                    tables[k][l] = digits[k][pos];
                }
                for &g in &self.active_groups[k] {
                    slices[k][g] = self.canonical_slice(model, k, g, &tables[k]);
                }
            }
            for (ti, groups) in self.tuple_groups.iter().enumerate() {
                let mut st = 0;
                for k in 0..last {
                    st = st * self.slice_count[k] + slices[k][groups[k]];
                }
                prefix_st[ti] = self.tuples[ti] * self.slice_total + st * last_slices;
            }
            let mut total = 0.0;
            for &g in &self.active_groups[last] {
                let mut group_best = f64::INFINITY;
                for &s in &self.canon[last][g] {
                    let mut sum = 0.0;
                    for &ti in &self.by_last[g] {
                        sum += value[self.dense[prefix_st[ti] + s] as usize];
                    }
                    if sum < group_best {
                        group_best = sum;
                        chosen[g] = s;
                    }
                }
                total += group_best;
            }
            if total < best {
                best = total;
                best_prefix.clone_from(&tables);
                best_last.clone_from(&chosen);
            }
            if !odometer(&mut digits, &radices) {
                break;
            }
        }

        let part = &parts[last];
        let mut last_table = vec![0; lambda[last]];
        for &g in &self.active_groups[last] {
            for (pos, &l) in part.members[g].iter().enumerate() {
                last_table[l] = part.digit(best_last[g], pos, part.group_size());
            }
        }
        best_prefix.push(last_table);
        (best, best_prefix)
    }

    #[cfg(test)]
    /// `Σ_blocks value[combo]` under one profile, summed in the same order as
    /// [`Decomposition::minimize`].
    pub fn profile_value(&self, model: &Model, tables: &[Vec<usize>], value: &[f64]) -> f64 {
        let selected = self.combos_for(model, tables);
        let last = self.k - 1;
        let mut total = 0.0;
        for &g in &self.active_groups[last] {
            let mut sum = 0.0;
            for &ti in &self.by_last[g] {
                sum += value[selected[ti]];
            }
            total += sum;
        }
        total
    }

    pub fn profile_rank(model: &Model, t: usize, tables: &[Vec<usize>]) -> u64 {
        profile_rank(model, t, tables.iter().map(Vec::as_slice))
    }
}

/// Calls `f(s', P(s' | s, a))` for every successor of `(x, λ)` at `t < T`.
pub(crate) fn successors(
    model: &Model,
    t: usize,
    x: usize,
    lambda: &[usize],
    u: &[usize],
    a: usize,
    mut f: impl FnMut(usize, f64),
) {
    let layout = &model.layout;
    let shifts = &layout.shift[t - 1];
    let strides = &layout.stride[t];
    for (x2, &q) in model.trans(t, x, a).iter().enumerate() {
        if q <= 0.0 {
            continue;
        }
        let base = x2 * layout.x_stride[t];
        for (ys, r) in model.obs_joint(t + 1, x2) {
            let s2 = (0..layout.k).fold(base, |acc, k| {
                acc + strides[k] * shifts[k].next(lambda[k], u[k], ys[k])
            });
            f(s2, q * r);
        }
    }
}

/// Slices that are zero outside the active members, ascending.
fn canonical_slices(radix: usize, weights: &[usize]) -> Vec<usize> {
    let mut out = vec![0];
    for &w in weights {
        out = out
            .iter()
            .flat_map(|&base| (0..radix).map(move |d| base + d * w))
            .collect();
    }
    out.sort_unstable();
    out
}

fn checked_product(v: &[usize]) -> Result<usize> {
    v.iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::budget("block table", u128::MAX, MAX_BLOCK_TABLE as u128))
}

fn unmix(mut index: usize, radices: &[usize]) -> Vec<usize> {
    let mut out = vec![0; radices.len()];
    for k in (0..radices.len()).rev() {
        out[k] = index % radices[k];
        index /= radices[k];
    }
    out
}

fn advance(choice: &mut [usize], lists: &[&[usize]]) -> bool {
    for k in (0..choice.len()).rev() {
        choice[k] += 1;
        if choice[k] < lists[k].len() {
            return true;
        }
        choice[k] = 0;
    }
    false
}

fn odometer(digits: &mut [Vec<usize>], radices: &[usize]) -> bool {
    for k in (0..digits.len()).rev() {
        for d in digits[k].iter_mut().rev() {
            *d += 1;
            if *d < radices[k] {
                return true;
            }
            *d = 0;
        }
    }
    false
}

#[cfg(test)]
/// Whether the step at `t` reveals anything new.
pub(crate) fn reveals(model: &Model, t: usize) -> bool {
    use crate::layout::ZRule;
    !matches!(model.layout.z_rule[t - 1], ZRule::Null | ZRule::Terminal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histories::{apply_profile, gamma_profiles};
    use crate::instances;
    use crate::model::Model;

    fn brute(model: &Model, t: usize, p: &[f64], value: impl Fn(&Combo) -> f64) -> (f64, u64) {
        let d = Decomposition::new(model, t, p, true).unwrap();
        let g: Vec<f64> = d.combos.iter().map(&value).collect();
        let mut best = (f64::INFINITY, 0);
        for profile in gamma_profiles(model, t).unwrap() {
            let tables: Vec<Vec<usize>> = profile.gammas.iter().map(|g| g.table.clone()).collect();
            let v = d.profile_value(model, &tables, &g);
            if v < best.0 - 1e-12 {
                best = (v, profile.rank(model));
            }
        }
        best
    }

    #[test]
    fn minimizer_matches_enumeration() {
        let model = Model::new(instances::i2()).unwrap();
        let layout = &model.layout;
        let mut p = vec![0.0; layout.states[1]];
        for (s, v) in p.iter_mut().enumerate() {
            *v = ((s * 7919) % 13) as f64;
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        let d = Decomposition::new(&model, 2, &p, true).unwrap();
        let g: Vec<f64> = d
            .combos
            .iter()
            .map(|c| c.cost + c.pz * c.child.as_ref().unwrap()[(c.z * 31) % 128] * 10.0)
            .collect();
        let (v, tables) = d.minimize(&model, &g);
        let (bv, brank) = brute(&model, 2, &p, |c| {
            c.cost + c.pz * c.child.as_ref().unwrap()[(c.z * 31) % 128] * 10.0
        });
        assert!((v - bv).abs() < 1e-12);
        assert_eq!(Decomposition::profile_rank(&model, 2, &tables), brank);
    }

    #[test]
    fn blocks_carry_the_revealed_observation() {
        let model = Model::new(instances::i1()).unwrap();
        let layout = &model.layout;
        let p = vec![1.0 / 8.0; layout.states[0]];
        let d = Decomposition::new(&model, 1, &p, false).unwrap();
        for profile in gamma_profiles(&model, 1).unwrap().step_by(5) {
            let tables: Vec<Vec<usize>> = profile.gammas.iter().map(|g| g.table.clone()).collect();
            for ci in d.combos_for(&model, &tables) {
                let c = &d.combos[ci];
                for s in 0..layout.states[0] {
                    let (_, lambda) = layout.state_unrank(1, s);
                    let in_block =
                        (0..2).all(|k| layout.partition[0][k].group_of[lambda[k]] == c.groups[k]);
                    if in_block {
                        let ja = apply_profile(&model, &profile, &lambda).unwrap();
                        assert_eq!(layout.z_after(1, &lambda, &ja.u), c.z);
                    }
                }
            }
        }
        assert!(reveals(&model, 1));
    }
}
