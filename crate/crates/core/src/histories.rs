//! Realization spaces of private information, common observations and
//! prescriptions, all with dense lexicographic ranks.
//!
//! Ranking convention: sequences are ordered lexicographically with earlier
//! times and smaller controller indices more significant. A private window
//! ranks its observation sequence before its action sequence, and a common
//! observation ranks `(y^1..y^K, u^1..u^K)` in that order.

use crate::error::{Error, Result};
use crate::model::{first_private, JointAction, Model};

/// Mixed-radix space of `(y_seq, u_seq)` pairs with fixed lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqSpace {
    pub y_radix: usize,
    pub u_radix: usize,
    pub y_len: usize,
    pub u_len: usize,
}

impl SeqSpace {
    pub fn size(&self) -> Option<usize> {
        self.y_radix
            .checked_pow(self.y_len as u32)?
            .checked_mul(self.u_radix.checked_pow(self.u_len as u32)?)
    }

    pub fn rank(&self, ys: &[usize], us: &[usize]) -> usize {
        debug_assert_eq!((ys.len(), us.len()), (self.y_len, self.u_len));
        let r = ys.iter().fold(0, |acc, &y| acc * self.y_radix + y);
        us.iter().fold(r, |acc, &u| acc * self.u_radix + u)
    }

    pub fn unrank(&self, mut rank: usize) -> (Vec<usize>, Vec<usize>) {
        let mut us = vec![0; self.u_len];
        for slot in us.iter_mut().rev() {
            *slot = rank % self.u_radix;
            rank /= self.u_radix;
        }
        let mut ys = vec![0; self.y_len];
        for slot in ys.iter_mut().rev() {
            *slot = rank % self.y_radix;
            rank /= self.y_radix;
        }
        (ys, us)
    }
}

/// Window shape of `Λ^k_t`.
pub(crate) fn private_shape(model_y: usize, model_u: usize, t: usize, n: usize) -> SeqSpace {
    let lo = first_private(t, n);
    SeqSpace {
        y_radix: model_y,
        u_radix: model_u,
        y_len: t + 1 - lo,
        u_len: t - lo,
    }
}

/// One realization of controller `k`'s private data at time `t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PrivateInfo {
    pub k: usize,
    pub t: usize,
    pub y_seq: Vec<usize>,
    pub u_seq: Vec<usize>,
}

impl PrivateInfo {
    pub fn rank(&self, model: &Model) -> usize {
        model.layout.private[self.t - 1][self.k].rank(&self.y_seq, &self.u_seq)
    }
}

pub fn private_space(model: &Model, k: usize, t: usize) -> Result<Vec<PrivateInfo>> {
    model.check_time(t)?;
    check_controller(model, k)?;
    let space = model.layout.private[t - 1][k];
    Ok((0..model.layout.lambda[t - 1][k])
        .map(|r| {
            let (y_seq, u_seq) = space.unrank(r);
            PrivateInfo { k, t, y_seq, u_seq }
        })
        .collect())
}

fn check_controller(model: &Model, k: usize) -> Result<()> {
    if k >= model.controllers() {
        Err(Error::domain("controller", k, 0, model.controllers() - 1))
    } else {
        Ok(())
    }
}

/// New common data revealed at time `t`; `None` while nothing is shared yet.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CommonObs {
    pub t: usize,
    pub symbols: Option<(Vec<usize>, Vec<usize>)>,
}

impl CommonObs {
    pub fn rank(&self, model: &Model) -> usize {
        match &self.symbols {
            None => 0,
            Some((ys, us)) => common_rank(model, ys, us),
        }
    }
}

pub(crate) fn common_rank(model: &Model, ys: &[usize], us: &[usize]) -> usize {
    let spec = model.spec();
    let r = ys
        .iter()
        .zip(&spec.y_size)
        .fold(0, |acc, (&y, &radix)| acc * radix + y);
    us.iter()
        .zip(&spec.u_size)
        .fold(r, |acc, (&u, &radix)| acc * radix + u)
}

pub(crate) fn common_unrank(model: &Model, mut rank: usize) -> (Vec<usize>, Vec<usize>) {
    let spec = model.spec();
    let k = spec.controllers;
    let mut us = vec![0; k];
    for i in (0..k).rev() {
        us[i] = rank % spec.u_size[i];
        rank /= spec.u_size[i];
    }
    let mut ys = vec![0; k];
    for i in (0..k).rev() {
        ys[i] = rank % spec.y_size[i];
        rank /= spec.y_size[i];
    }
    (ys, us)
}

/// Number of values `Z_t` can take (1 while nothing is shared).
pub fn common_obs_count(model: &Model, t: usize) -> usize {
    model.layout.z_size[t - 1]
}

pub fn common_obs_space(model: &Model, t: usize) -> Result<Vec<CommonObs>> {
    if t < 2 || t > model.horizon() {
        return Err(Error::domain("time", t, 2, model.horizon()));
    }
    if t <= model.delay() {
        return Ok(vec![CommonObs { t, symbols: None }]);
    }
    Ok((0..model.layout.z_size[t - 1])
        .map(|r| CommonObs {
            t,
            symbols: Some(common_unrank(model, r)),
        })
        .collect())
}

/// Number of realizations of `Δ_t`, i.e. of the common history `Z_2..Z_t`.
pub fn common_history_count(model: &Model, t: usize) -> Option<usize> {
    (2..=t).try_fold(1usize, |acc, s| acc.checked_mul(model.layout.z_size[s - 1]))
}

/// Dense rank of a common history `[Z_2, .., Z_t]` (given as ranks).
pub fn common_history_rank(model: &Model, common: &[usize]) -> usize {
    common
        .iter()
        .enumerate()
        .fold(0, |acc, (i, &z)| acc * model.layout.z_size[i + 1] + z)
}

/// A prescription for one controller: private-information rank to action.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PartialFunction {
    pub k: usize,
    pub t: usize,
    pub table: Vec<usize>,
}

/// Prescriptions for all controllers at one time.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GammaProfile {
    pub t: usize,
    pub gammas: Vec<PartialFunction>,
}

/// Number of distinct prescriptions for controller `k` at `t`, if it fits.
pub fn gamma_count(model: &Model, k: usize, t: usize) -> Option<u64> {
    (model.u_size(k) as u64).checked_pow(u32::try_from(model.layout.lambda[t - 1][k]).ok()?)
}

pub fn profile_count(model: &Model, t: usize) -> Option<u64> {
    (0..model.controllers()).try_fold(1u64, |acc, k| acc.checked_mul(gamma_count(model, k, t)?))
}

pub(crate) fn table_rank(radix: usize, table: &[usize]) -> u64 {
    table
        .iter()
        .fold(0u64, |acc, &a| acc * radix as u64 + a as u64)
}

fn table_unrank(radix: usize, len: usize, mut rank: u64) -> Vec<usize> {
    let mut table = vec![0; len];
    for slot in table.iter_mut().rev() {
        *slot = (rank % radix as u64) as usize;
        rank /= radix as u64;
    }
    table
}

impl GammaProfile {
    pub fn rank(&self, model: &Model) -> u64 {
        profile_rank(
            model,
            self.t,
            self.gammas.iter().map(|g| g.table.as_slice()),
        )
    }

    pub fn from_rank(model: &Model, t: usize, rank: u64) -> Result<Self> {
        model.check_time(t)?;
        let count = profile_count(model, t)
            .ok_or_else(|| Error::budget("profile rank space", u128::MAX, u64::MAX as u128))?;
        if rank >= count {
            return Err(Error::Domain {
                what: "profile rank",
                value: rank as usize,
                min: 0,
                max: count as usize - 1,
            });
        }
        let mut rest = rank;
        let mut gammas = Vec::with_capacity(model.controllers());
        for k in (0..model.controllers()).rev() {
            let c = gamma_count(model, k, t).expect("bounded by profile count");
            let table = table_unrank(model.u_size(k), model.layout.lambda[t - 1][k], rest % c);
            rest /= c;
            gammas.push(PartialFunction { k, t, table });
        }
        gammas.reverse();
        Ok(GammaProfile { t, gammas })
    }

    /// The profile whose every entry is `0`.
    pub fn zero(model: &Model, t: usize) -> Self {
        GammaProfile {
            t,
            gammas: (0..model.controllers())
                .map(|k| PartialFunction {
                    k,
                    t,
                    table: vec![0; model.layout.lambda[t - 1][k]],
                })
                .collect(),
        }
    }
}

pub(crate) fn profile_rank<'a>(
    model: &Model,
    t: usize,
    tables: impl Iterator<Item = &'a [usize]>,
) -> u64 {
    tables.enumerate().fold(0u64, |acc, (k, table)| {
        let c = gamma_count(model, k, t).expect("rank requested for a countable profile space");
        acc * c + table_rank(model.u_size(k), table)
    })
}

/// All profiles at `t` in rank order.
pub fn gamma_profiles(model: &Model, t: usize) -> Result<GammaProfiles<'_>> {
    model.check_time(t)?;
    profile_count(model, t)
        .ok_or_else(|| Error::budget("profile enumeration", u128::MAX, u64::MAX as u128))?;
    Ok(GammaProfiles {
        model,
        next: Some(GammaProfile::zero(model, t)),
    })
}

pub struct GammaProfiles<'a> {
    model: &'a Model,
    next: Option<GammaProfile>,
}

impl Iterator for GammaProfiles<'_> {
    type Item = GammaProfile;

    fn next(&mut self) -> Option<GammaProfile> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        'carry: for gamma in succ.gammas.iter_mut().rev() {
            let radix = self.model.u_size(gamma.k);
            for entry in gamma.table.iter_mut().rev() {
                *entry += 1;
                if *entry < radix {
                    self.next = Some(succ);
                    break 'carry;
                }
                *entry = 0;
            }
        }
        Some(current)
    }
}

/// `u^k = γ^k(λ^k)` for every controller.
pub fn apply_profile(
    model: &Model,
    profile: &GammaProfile,
    private: &[usize],
) -> Result<JointAction> {
    let u = profile
        .gammas
        .iter()
        .zip(private)
        .map(|(g, &l)| {
            g.table
                .get(l)
                .copied()
                .ok_or_else(|| Error::domain("private rank", l, 0, g.table.len().saturating_sub(1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let index = model.joint_index(&u);
    Ok(JointAction { u, index })
}

/// A control strategy: every controller's law at every time.
///
/// `common` holds the ranks of `Z_2, .., Z_t` (length `t - 1`), with rank 0
/// standing for the empty observation while nothing is shared. Evaluating a
/// design at `(t, common)` yields the prescriptions `γ^k_t = g^k_t(·, δ_t)`.
pub trait Design {
    fn prescription(&self, t: usize, common: &[usize]) -> Result<GammaProfile>;

    fn act(&self, k: usize, t: usize, private: usize, common: &[usize]) -> Result<usize> {
        let profile = self.prescription(t, common)?;
        profile.gammas[k]
            .table
            .get(private)
            .copied()
            .ok_or_else(|| {
                Error::domain(
                    "private rank",
                    private,
                    0,
                    profile.gammas[k].table.len() - 1,
                )
            })
    }
}

/// A design stored extensionally: `tables[k][t-1][λ · |𝒟_t| + δ]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableDesign {
    pub tables: Vec<Vec<Vec<usize>>>,
    history_sizes: Vec<usize>,
    lambda: Vec<Vec<usize>>,
    z_sizes: Vec<usize>,
}

impl TableDesign {
    pub fn new(model: &Model, tables: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        let (history_sizes, lambda) = Self::shape(model)?;
        if tables.len() != model.controllers() {
            return Err(Error::Schema {
                field: "tables".into(),
                message: format!("expected {} controllers", model.controllers()),
            });
        }
        for (k, per_k) in tables.iter().enumerate() {
            if per_k.len() != model.horizon() {
                return Err(Error::Schema {
                    field: format!("tables[{k}]"),
                    message: format!("expected {} times", model.horizon()),
                });
            }
            for (t, table) in per_k.iter().enumerate() {
                let want = lambda[t][k] * history_sizes[t];
                if table.len() != want {
                    return Err(Error::Schema {
                        field: format!("tables[{k}][{t}]"),
                        message: format!("expected {want} entries"),
                    });
                }
                if let Some(i) = table.iter().position(|&a| a >= model.u_size(k)) {
                    return Err(Error::Schema {
                        field: format!("tables[{k}][{t}][{i}]"),
                        message: "action out of range".into(),
                    });
                }
            }
        }
        Ok(TableDesign {
            tables,
            history_sizes,
            lambda,
            z_sizes: model.layout.z_size.clone(),
        })
    }

    /// Table lengths `[k][t-1]`.
    pub fn table_lengths(model: &Model) -> Result<Vec<Vec<usize>>> {
        let (h, lambda) = Self::shape(model)?;
        (0..model.controllers())
            .map(|k| {
                (0..model.horizon())
                    .map(|t| {
                        lambda[t][k].checked_mul(h[t]).ok_or_else(|| {
                            Error::budget("design table", u128::MAX, usize::MAX as u128)
                        })
                    })
                    .collect()
            })
            .collect()
    }

    fn shape(model: &Model) -> Result<(Vec<usize>, Vec<Vec<usize>>)> {
        let h = (1..=model.horizon())
            .map(|t| {
                common_history_count(model, t).ok_or_else(|| {
                    Error::budget("common history space", u128::MAX, usize::MAX as u128)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((h, model.layout.lambda.clone()))
    }

    /// The design that always plays action 0.
    pub fn constant(model: &Model) -> Result<Self> {
        let lengths = Self::table_lengths(model)?;
        let tables = lengths
            .into_iter()
            .map(|per_k| per_k.into_iter().map(|len| vec![0; len]).collect())
            .collect();
        TableDesign::new(model, tables)
    }

    /// Uniformly random actions everywhere.
    pub fn random(model: &Model, rng: &mut impl rand::Rng) -> Result<Self> {
        let lengths = Self::table_lengths(model)?;
        let tables = lengths
            .into_iter()
            .enumerate()
            .map(|(k, per_k)| {
                per_k
                    .into_iter()
                    .map(|len| {
                        (0..len)
                            .map(|_| rng.gen_range(0..model.u_size(k)))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        TableDesign::new(model, tables)
    }
}

impl Design for TableDesign {
    fn prescription(&self, t: usize, common: &[usize]) -> Result<GammaProfile> {
        let h = self.history_sizes[t - 1];
        let delta = history_rank(&self.z_sizes, common)?;
        Ok(GammaProfile {
            t,
            gammas: self
                .tables
                .iter()
                .enumerate()
                .map(|(k, per_k)| PartialFunction {
                    k,
                    t,
                    table: (0..self.lambda[t - 1][k])
                        .map(|l| per_k[t - 1][l * h + delta])
                        .collect(),
                })
                .collect(),
        })
    }

    fn act(&self, k: usize, t: usize, private: usize, common: &[usize]) -> Result<usize> {
        let h = self.history_sizes[t - 1];
        let delta = history_rank(&self.z_sizes, common)?;
        self.tables[k][t - 1]
            .get(private * h + delta)
            .copied()
            .ok_or_else(|| Error::domain("private rank", private, 0, self.lambda[t - 1][k] - 1))
    }
}

fn history_rank(z_sizes: &[usize], common: &[usize]) -> Result<usize> {
    common.iter().enumerate().try_fold(0usize, |acc, (i, &z)| {
        let radix = z_sizes[i + 1];
        if z >= radix {
            Err(Error::domain("common observation rank", z, 0, radix - 1))
        } else {
            Ok(acc * radix + z)
        }
    })
}

/// A coordination strategy that ignores the common history.
#[derive(Debug, Clone)]
pub struct OpenLoopDesign {
    pub profiles: Vec<GammaProfile>,
}

impl Design for OpenLoopDesign {
    fn prescription(&self, t: usize, _common: &[usize]) -> Result<GammaProfile> {
        Ok(self.profiles[t - 1].clone())
    }
}

/// Coordinator decision rules: `profiles[t-1][node]` is a profile rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoordinatorPolicy {
    pub profiles: Vec<Vec<u64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn seq_space_roundtrip() {
        let s = SeqSpace {
            y_radix: 3,
            u_radix: 2,
            y_len: 2,
            u_len: 1,
        };
        assert_eq!(s.size(), Some(18));
        for r in 0..18 {
            let (ys, us) = s.unrank(r);
            assert_eq!(s.rank(&ys, &us), r);
        }
        assert_eq!(s.unrank(1), (vec![0, 0], vec![1]));
    }

    #[test]
    fn private_space_sizes() {
        let model = instances::uniform_binary(2, 3, 1).unwrap();
        for t in 1..=3 {
            assert_eq!(private_space(&model, 0, t).unwrap().len(), 2);
        }
        let model = instances::uniform_binary(2, 3, 2).unwrap();
        assert_eq!(private_space(&model, 0, 1).unwrap().len(), 2);
        let space = private_space(&model, 1, 3).unwrap();
        assert_eq!(space.len(), 8);
        for (r, info) in space.iter().enumerate() {
            assert_eq!(info.rank(&model), r);
            assert_eq!((info.y_seq.len(), info.u_seq.len()), (2, 1));
        }
        assert!(private_space(&model, 0, 4).is_err());
    }

    #[test]
    fn common_obs_spaces() {
        let model = instances::uniform_binary(2, 3, 2).unwrap();
        assert_eq!(
            common_obs_space(&model, 2).unwrap(),
            vec![CommonObs {
                t: 2,
                symbols: None
            }]
        );
        let z3 = common_obs_space(&model, 3).unwrap();
        assert_eq!(z3.len(), 16);
        for (r, z) in z3.iter().enumerate() {
            assert_eq!(z.rank(&model), r);
        }
        let model = instances::uniform_binary(2, 2, 1).unwrap();
        assert_eq!(common_obs_space(&model, 2).unwrap().len(), 16);
        assert!(common_obs_space(&model, 1).is_err());
    }

    #[test]
    fn profile_counts() {
        let model = instances::uniform_binary(2, 2, 1).unwrap();
        assert_eq!(gamma_profiles(&model, 1).unwrap().count(), 16);
        let model = instances::uniform_binary(2, 3, 2).unwrap();
        assert_eq!(profile_count(&model, 3), Some(65536));
        let mut singleton = instances::uniform_binary(2, 2, 1).unwrap().spec().clone();
        singleton.u_size = vec![1, 1];
        singleton.trans = vec![vec![vec![vec![0.5, 0.5]]; 2]; 2];
        singleton.cost = vec![vec![vec![0.0]; 2]; 2];
        let model = Model::new(singleton).unwrap();
        assert_eq!(gamma_profiles(&model, 2).unwrap().count(), 1);
    }

    #[test]
    fn profile_ranks_follow_enumeration() {
        let model = instances::uniform_binary(2, 2, 1).unwrap();
        for (r, p) in gamma_profiles(&model, 2).unwrap().enumerate() {
            assert_eq!(p.rank(&model), r as u64);
            assert_eq!(GammaProfile::from_rank(&model, 2, r as u64).unwrap(), p);
        }
    }

    #[test]
    fn apply_profile_examples() {
        let model = instances::uniform_binary(2, 2, 1).unwrap();
        let zero = GammaProfile::zero(&model, 1);
        for l in [[0, 0], [1, 0], [1, 1]] {
            assert_eq!(apply_profile(&model, &zero, &l).unwrap().u, vec![0, 0]);
        }
        let identity = GammaProfile {
            t: 1,
            gammas: (0..2)
                .map(|k| PartialFunction {
                    k,
                    t: 1,
                    table: vec![0, 1],
                })
                .collect(),
        };
        let ja = apply_profile(&model, &identity, &[1, 0]).unwrap();
        assert_eq!((ja.u, ja.index), (vec![1, 0], 2));
        assert!(apply_profile(&model, &identity, &[2, 0]).is_err());
    }
}
