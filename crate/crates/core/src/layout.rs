//! Precomputed index tables shared by the solvers.
//!
//! `S_t = (X_{t-1}, Λ^1_t, .., Λ^K_t)` is ranked with `x` most significant,
//! then `λ^1`, .., `λ^K`.

use crate::error::{Error, Result};
use crate::histories::{private_shape, SeqSpace};
use crate::model::ProblemSpec;

/// Largest per-time table the layout will allocate.
const MAX_TABLE: usize = 1 << 24;

/// How the common observation `Z_{t+1}` is read off a block and its slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ZRule {
    /// Last decision time: no successor.
    Terminal,
    /// Nothing is revealed at `t + 1`.
    Null,
    /// The expelled `(y, u)` pair is the group key.
    Groups,
    /// `n = 1`: the group key is `y_t` and the slice supplies `u_t`.
    GroupAndSlice,
}

/// Partition of one controller's private space at one time.
///
/// Each group is a set of private ranks whose contribution to the next common
/// observation is identical; a slice is an assignment of actions to the
/// members of one group, numbered lexicographically in member order.
#[derive(Debug, Clone)]
pub(crate) struct Partition {
    pub group_of: Vec<usize>,
    pub pos: Vec<usize>,
    pub members: Vec<Vec<usize>>,
    /// Actions available per member.
    pub radix: usize,
    /// `radix ^ group size`, saturated at `usize::MAX`.
    pub slices: usize,
    /// Expelled `(y, u)` of each group; `u` is `None` when the slice decides it.
    pub key: Vec<(usize, Option<usize>)>,
}

impl Partition {
    /// Action the slice assigns to the member at `pos`.
    #[inline]
    pub fn digit(&self, slice: usize, pos: usize, size: usize) -> usize {
        let shift = size - 1 - pos;
        (slice / self.radix.pow(shift as u32)) % self.radix
    }

    pub fn group_size(&self) -> usize {
        self.members.first().map_or(0, Vec::len)
    }
}

/// Private-window bookkeeping for the step `t -> t+1`.
#[derive(Debug, Clone)]
pub(crate) struct Shift {
    y_radix: usize,
    u_radix: usize,
    /// `next[(λ · u_radix + u) · y_radix + y']`
    next: Vec<usize>,
    /// `expelled[λ · u_radix + u]` when `Z_{t+1}` is non-null.
    expelled: Vec<(usize, usize)>,
}

impl Shift {
    #[inline]
    pub fn next(&self, lambda: usize, u: usize, y: usize) -> usize {
        self.next[(lambda * self.u_radix + u) * self.y_radix + y]
    }

    #[inline]
    pub fn expelled(&self, lambda: usize, u: usize) -> Option<(usize, usize)> {
        self.expelled.get(lambda * self.u_radix + u).copied()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub k: usize,
    pub n: usize,
    pub horizon: usize,
    /// `[t-1][k]`
    pub private: Vec<Vec<SeqSpace>>,
    pub lambda: Vec<Vec<usize>>,
    /// `|S_t|`
    pub states: Vec<usize>,
    /// Stride of `λ^k` inside a state rank; the stride of `x` is `x_stride`.
    pub stride: Vec<Vec<usize>>,
    pub x_stride: Vec<usize>,
    /// `|𝒵_t|`, 1 while nothing is shared.
    pub z_size: Vec<usize>,
    /// `[t-1][k]` for `t < T`.
    pub shift: Vec<Vec<Shift>>,
    /// `[t-1][k]`
    pub partition: Vec<Vec<Partition>>,
    pub z_rule: Vec<ZRule>,
    y_size: Vec<usize>,
    u_size: Vec<usize>,
}

fn too_big(what: &'static str) -> Error {
    Error::budget(what, u128::MAX, MAX_TABLE as u128)
}

impl Layout {
    pub fn new(spec: &ProblemSpec) -> Result<Self> {
        let (k_count, n, horizon) = (spec.controllers, spec.delay, spec.horizon);
        let mut private = Vec::with_capacity(horizon);
        let mut lambda = Vec::with_capacity(horizon);
        let mut states = Vec::with_capacity(horizon);
        let mut stride = Vec::with_capacity(horizon);
        let mut x_stride = Vec::with_capacity(horizon);
        for t in 1..=horizon {
            let shapes: Vec<SeqSpace> = (0..k_count)
                .map(|k| private_shape(spec.y_size[k], spec.u_size[k], t, n))
                .collect();
            let sizes = shapes
                .iter()
                .map(|s| s.size().filter(|&z| z <= MAX_TABLE))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| too_big("private information space"))?;
            let mut strides = vec![1usize; k_count];
            for k in (0..k_count.saturating_sub(1)).rev() {
                strides[k] = strides[k + 1]
                    .checked_mul(sizes[k + 1])
                    .ok_or_else(|| too_big("joint state space"))?;
            }
            let all = strides[0]
                .checked_mul(sizes[0])
                .filter(|&z| z <= MAX_TABLE)
                .ok_or_else(|| too_big("joint state space"))?;
            let s = all
                .checked_mul(spec.x_size)
                .filter(|&z| z <= MAX_TABLE)
                .ok_or_else(|| too_big("joint state space"))?;
            private.push(shapes);
            lambda.push(sizes);
            stride.push(strides);
            x_stride.push(all);
            states.push(s);
        }
        let z_full = spec
            .y_size
            .iter()
            .chain(&spec.u_size)
            .try_fold(1usize, |acc, &r| acc.checked_mul(r))
            .filter(|&z| z <= MAX_TABLE)
            .ok_or_else(|| too_big("common observation space"))?;
        let z_size = (1..=horizon)
            .map(|t| if t > n { z_full } else { 1 })
            .collect();

        let mut shift = Vec::new();
        for t in 1..horizon {
            let expel = t >= n;
            let per_k = (0..k_count)
                .map(|k| {
                    let (ys_r, us_r) = (spec.y_size[k], spec.u_size[k]);
                    let here = private[t - 1][k];
                    let there = private[t][k];
                    let count = lambda[t - 1][k];
                    let len = count
                        .checked_mul(us_r * ys_r)
                        .filter(|&z| z <= MAX_TABLE)
                        .ok_or_else(|| too_big("private shift table"))?;
                    let mut next = Vec::with_capacity(len);
                    let mut expelled = Vec::new();
                    for l in 0..count {
                        let (ys, us) = here.unrank(l);
                        for u in 0..us_r {
                            let mut us2 = us.clone();
                            us2.push(u);
                            let mut ys_base = ys.clone();
                            if expel {
                                let y_e = ys_base.remove(0);
                                let u_e = us2.remove(0);
                                expelled.push((y_e, u_e));
                            }
                            for y in 0..ys_r {
                                let mut ys2 = ys_base.clone();
                                ys2.push(y);
                                next.push(there.rank(&ys2, &us2));
                            }
                        }
                    }
                    Ok(Shift {
                        y_radix: ys_r,
                        u_radix: us_r,
                        next,
                        expelled,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            shift.push(per_k);
        }

        let mut partition = Vec::with_capacity(horizon);
        let mut z_rule = Vec::with_capacity(horizon);
        for t in 1..=horizon {
            let rule = if t == horizon {
                ZRule::Terminal
            } else if t < n {
                ZRule::Null
            } else if n == 1 {
                ZRule::GroupAndSlice
            } else {
                ZRule::Groups
            };
            z_rule.push(rule);
            partition.push(
                (0..k_count)
                    .map(|k| {
                        build_partition(private[t - 1][k], lambda[t - 1][k], spec.u_size[k], rule)
                    })
                    .collect(),
            );
        }

        Ok(Layout {
            k: k_count,
            n,
            horizon,
            private,
            lambda,
            states,
            stride,
            x_stride,
            z_size,
            shift,
            partition,
            z_rule,
            y_size: spec.y_size.clone(),
            u_size: spec.u_size.clone(),
        })
    }

    #[inline]
    pub fn state_rank(&self, t: usize, x: usize, lambdas: &[usize]) -> usize {
        let strides = &self.stride[t - 1];
        x * self.x_stride[t - 1]
            + lambdas
                .iter()
                .zip(strides)
                .map(|(l, s)| l * s)
                .sum::<usize>()
    }

    pub fn state_unrank(&self, t: usize, s: usize) -> (usize, Vec<usize>) {
        let x = s / self.x_stride[t - 1];
        let lambdas = (0..self.k)
            .map(|k| (s / self.stride[t - 1][k]) % self.lambda[t - 1][k])
            .collect();
        (x, lambdas)
    }

    /// Rank of `Z_{t+1}` produced by the private ranks `lambdas` and actions `u`
    /// at time `t < T`.
    pub fn z_after(&self, t: usize, lambdas: &[usize], u: &[usize]) -> usize {
        if t < self.n {
            return 0;
        }
        let mut ys = 0;
        let mut us = 0;
        for k in 0..self.k {
            let (y, a) = self.shift[t - 1][k]
                .expelled(lambdas[k], u[k])
                .expect("expelled pair exists once sharing has started");
            ys = ys * self.y_size[k] + y;
            us = us * self.u_size[k] + a;
        }
        ys * self.u_product() + us
    }

    /// Rank of `Z_{t+1}` for a block (one group per controller) under the
    /// given slices.
    pub fn z_of_block(&self, t: usize, groups: &[usize], slices: &[usize]) -> usize {
        match self.z_rule[t - 1] {
            ZRule::Terminal | ZRule::Null => 0,
            rule => {
                let parts = &self.partition[t - 1];
                let mut ys = 0;
                let mut us = 0;
                for k in 0..self.k {
                    let (y, u) = parts[k].key[groups[k]];
                    let u = match rule {
                        ZRule::GroupAndSlice => slices[k],
                        _ => u.expect("group key carries the expelled action"),
                    };
                    ys = ys * self.y_size[k] + y;
                    us = us * self.u_size[k] + u;
                }
                ys * self.u_product() + us
            }
        }
    }

    fn u_product(&self) -> usize {
        self.u_size.iter().product()
    }
}

fn build_partition(space: SeqSpace, count: usize, radix: usize, rule: ZRule) -> Partition {
    let mut group_of = vec![0; count];
    let mut pos = vec![0; count];
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut key = Vec::new();
    match rule {
        ZRule::Null => {
            members.push((0..count).collect());
            key.push((0, None));
            for (l, p) in pos.iter_mut().enumerate() {
                *p = l;
            }
        }
        ZRule::Terminal | ZRule::GroupAndSlice => {
            for l in 0..count {
                group_of[l] = l;
                members.push(vec![l]);
                let (ys, _) = space.unrank(l);
                key.push((ys.first().copied().unwrap_or(0), None));
            }
        }
        ZRule::Groups => {
            let groups = space.y_radix * space.u_radix;
            members = vec![Vec::new(); groups];
            key = (0..groups)
                .map(|g| (g / space.u_radix, Some(g % space.u_radix)))
                .collect();
            for l in 0..count {
                let (ys, us) = space.unrank(l);
                let g = ys[0] * space.u_radix + us[0];
                group_of[l] = g;
                pos[l] = members[g].len();
                members[g].push(l);
            }
        }
    }
    let size = members.first().map_or(0, Vec::len);
    let slices = u32::try_from(size)
        .ok()
        .and_then(|s| radix.checked_pow(s))
        .unwrap_or(usize::MAX);
    Partition {
        group_of,
        pos,
        members,
        radix,
        slices,
        key,
    }
}

#[cfg(test)]
mod tests {
    use crate::instances;

    #[test]
    fn shift_appends_and_expels() {
        let model = instances::uniform_binary(2, 4, 2).unwrap();
        let layout = &model.layout;
        // t = 3: λ = (y2, y3, u2); after the step (y3, y4, u3), expelling (y2, u2).
        let here = layout.private[2][0];
        let there = layout.private[3][0];
        let l = here.rank(&[1, 0], &[1]);
        let next = layout.shift[2][0].next(l, 0, 1);
        assert_eq!(there.unrank(next), (vec![0, 1], vec![0]));
        assert_eq!(layout.shift[2][0].expelled(l, 0), Some((1, 1)));
        // t = 1 < n: nothing expelled, the window grows.
        let l = layout.private[0][0].rank(&[1], &[]);
        let next = layout.shift[0][0].next(l, 1, 0);
        assert_eq!(layout.private[1][0].unrank(next), (vec![1, 0], vec![1]));
        assert_eq!(layout.shift[0][0].expelled(l, 1), None);
    }

    #[test]
    fn partitions_cover_private_space() {
        for n in 1..=3 {
            let model = instances::uniform_binary(2, 4, n).unwrap();
            let layout = &model.layout;
            for t in 1..=4 {
                for k in 0..2 {
                    let p = &layout.partition[t - 1][k];
                    let mut seen = vec![false; layout.lambda[t - 1][k]];
                    for (g, members) in p.members.iter().enumerate() {
                        assert_eq!(members.len(), p.group_size());
                        for (i, &l) in members.iter().enumerate() {
                            assert!(!seen[l]);
                            seen[l] = true;
                            assert_eq!((p.group_of[l], p.pos[l]), (g, i));
                        }
                    }
                    assert!(seen.into_iter().all(|s| s));
                }
            }
        }
    }

    #[test]
    fn state_rank_roundtrip() {
        let model = instances::uniform_binary(2, 3, 2).unwrap();
        let layout = &model.layout;
        assert_eq!(layout.states, vec![8, 128, 128]);
        for s in 0..128 {
            let (x, l) = layout.state_unrank(3, s);
            assert_eq!(layout.state_rank(3, x, &l), s);
        }
    }
}
