//! Ground truth for designs: exhaustive path summation, seeded simulation and
//! brute-force search over all extensional designs.
//!
//! Everything here works from explicit `(x, y, u)` sequences and recomputes
//! private and common information by slicing them, independently of the
//! index tables the solvers use.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histories::{Design, TableDesign};
use crate::model::{window, Model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub expected_cost: f64,
    /// Expected cost of each stage, `per_stage[t-1]`.
    pub per_stage: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub episodes: usize,
    pub mean: f64,
    pub std_error: f64,
    pub seed: u64,
}

/// Where a path enumeration stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    /// After `Y_t` is drawn, before anyone acts at `t`.
    AfterObs(usize),
    /// After the actions at `t`, before `X_t` is drawn.
    AfterAction(usize),
    /// After the last transition.
    Full,
}

/// One primitive trajectory prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub prob: f64,
    /// `X_0, X_1, ..`
    pub xs: Vec<usize>,
    /// `ys[t-1][k] = Y^k_t`
    pub ys: Vec<Vec<usize>>,
    /// `us[t-1][k] = U^k_t`
    pub us: Vec<Vec<usize>>,
    /// Realized stage costs.
    pub costs: Vec<f64>,
}

impl Path {
    /// Rank of `Λ^k_t` read off the sequences.
    pub fn lambda(&self, model: &Model, k: usize, t: usize) -> usize {
        let w = window(t, model.spec()).expect("time within horizon");
        let r = w
            .obs
            .clone()
            .fold(0, |acc, s| acc * model.y_size(k) + self.ys[s - 1][k]);
        w.act
            .clone()
            .fold(r, |acc, s| acc * model.u_size(k) + self.us[s - 1][k])
    }

    /// Ranks of `Z_2, .., Z_t`.
    pub fn common(&self, model: &Model, t: usize) -> Vec<usize> {
        (2..=t).map(|s| self.revealed(model, s)).collect()
    }

    /// Rank of `Z_s`: the stage-`(s-n)` observations and actions, or 0.
    pub fn revealed(&self, model: &Model, s: usize) -> usize {
        let n = model.delay();
        if s <= n {
            return 0;
        }
        let e = s - n;
        let spec = model.spec();
        let r = (0..spec.controllers).fold(0, |acc, k| acc * spec.y_size[k] + self.ys[e - 1][k]);
        (0..spec.controllers).fold(r, |acc, k| acc * spec.u_size[k] + self.us[e - 1][k])
    }

    /// Rank of `S_t = (X_{t-1}, Λ^1_t, .., Λ^K_t)`.
    pub fn state(&self, model: &Model, t: usize) -> usize {
        let lambdas: Vec<usize> = (0..model.controllers())
            .map(|k| self.lambda(model, k, t))
            .collect();
        let sizes: Vec<usize> = (0..model.controllers())
            .map(|k| {
                let w = window(t, model.spec()).expect("time within horizon");
                model.y_size(k).pow(w.obs.len() as u32) * model.u_size(k).pow(w.act.len() as u32)
            })
            .collect();
        lambdas
            .iter()
            .zip(&sizes)
            .fold(self.xs[t - 1], |acc, (&l, &size)| acc * size + l)
    }
}

struct Walker<'a, F> {
    model: &'a Model,
    design: &'a dyn Design,
    stop: Stop,
    max_paths: usize,
    emitted: usize,
    path: Path,
    visit: F,
}

impl<F: FnMut(&Path)> Walker<'_, F> {
    fn emit(&mut self) -> Result<()> {
        self.emitted += 1;
        if self.emitted > self.max_paths {
            return Err(Error::budget(
                "trajectories",
                self.emitted as u128,
                self.max_paths as u128,
            ));
        }
        (self.visit)(&self.path);
        Ok(())
    }

    /// Draws `Y_t` given the last state, then continues.
    fn observe(&mut self, t: usize) -> Result<()> {
        let x = *self.path.xs.last().expect("X_0 drawn");
        let joint = self.model.obs_joint(t, x);
        for (ys, q) in joint {
            let saved = self.path.prob;
            self.path.prob *= q;
            self.path.ys.push(ys.clone());
            if self.stop == Stop::AfterObs(t) {
                self.emit()?;
            } else {
                self.act(t)?;
            }
            self.path.ys.pop();
            self.path.prob = saved;
        }
        Ok(())
    }

    fn act(&mut self, t: usize) -> Result<()> {
        let common = self.path.common(self.model, t);
        let u = (0..self.model.controllers())
            .map(|k| {
                let l = self.path.lambda(self.model, k, t);
                self.design.act(k, t, l, &common)
            })
            .collect::<Result<Vec<_>>>()?;
        self.path.us.push(u);
        if self.stop == Stop::AfterAction(t) {
            self.emit()?;
        } else {
            self.transition(t)?;
        }
        self.path.us.pop();
        Ok(())
    }

    fn transition(&mut self, t: usize) -> Result<()> {
        let x = *self.path.xs.last().expect("X_{t-1} drawn");
        let a = self
            .model
            .joint_index(self.path.us.last().expect("U_t chosen"));
        let row = self.model.trans(t, x, a).to_vec();
        for (x2, q) in row.into_iter().enumerate() {
            if q <= 0.0 {
                continue;
            }
            let saved = self.path.prob;
            self.path.prob *= q;
            self.path.xs.push(x2);
            self.path.costs.push(self.model.cost(t, x2, a));
            if t == self.model.horizon() {
                self.emit()?;
            } else {
                self.observe(t + 1)?;
            }
            self.path.costs.pop();
            self.path.xs.pop();
            self.path.prob = saved;
        }
        Ok(())
    }
}

/// Visits every positive-probability trajectory prefix up to `stop` under
/// `design`; returns the number visited.
pub fn for_each_path(
    model: &Model,
    design: &dyn Design,
    stop: Stop,
    max_paths: usize,
    visit: impl FnMut(&Path),
) -> Result<usize> {
    match stop {
        Stop::AfterObs(t) | Stop::AfterAction(t) => model.check_time(t)?,
        Stop::Full => {}
    }
    let mut walker = Walker {
        model,
        design,
        stop,
        max_paths,
        emitted: 0,
        path: Path {
            prob: 1.0,
            xs: Vec::new(),
            ys: Vec::new(),
            us: Vec::new(),
            costs: Vec::new(),
        },
        visit,
    };
    for (x0, &p) in model.x0().iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        walker.path.prob = p;
        walker.path.xs = vec![x0];
        walker.observe(1)?;
    }
    Ok(walker.emitted)
}

/// Expected total cost of a design by summation over all trajectories.
pub fn exact_cost(model: &Model, design: &dyn Design, max_paths: usize) -> Result<EvalResult> {
    let mut per_stage = vec![0.0; model.horizon()];
    for_each_path(model, design, Stop::Full, max_paths, |path| {
        for (slot, c) in per_stage.iter_mut().zip(&path.costs) {
            *slot += path.prob * c;
        }
    })?;
    Ok(EvalResult {
        expected_cost: per_stage.iter().sum(),
        per_stage,
    })
}

/// Monte Carlo estimate; episode `i` uses the ChaCha8 stream `i` of `seed`.
pub fn simulate(
    model: &Model,
    design: &dyn Design,
    episodes: usize,
    seed: u64,
) -> Result<SimResult> {
    if episodes == 0 {
        return Err(Error::domain("episodes", 0, 1, usize::MAX));
    }
    let sampler = |row: &[f64]| WeightedIndex::new(row).map_err(|e| Error::Internal(e.to_string()));
    let k_count = model.controllers();
    let mut total = 0.0;
    let mut total_sq = 0.0;
    for i in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut path = Path {
            prob: 1.0,
            xs: vec![sampler(model.x0())?.sample(&mut rng)],
            ys: Vec::new(),
            us: Vec::new(),
            costs: Vec::new(),
        };
        let mut cost = 0.0;
        for t in 1..=model.horizon() {
            let x = path.xs[t - 1];
            let ys = (0..k_count)
                .map(|k| Ok(sampler(model.obs(k, t, x))?.sample(&mut rng)))
                .collect::<Result<Vec<_>>>()?;
            path.ys.push(ys);
            let common = path.common(model, t);
            let u = (0..k_count)
                .map(|k| design.act(k, t, path.lambda(model, k, t), &common))
                .collect::<Result<Vec<_>>>()?;
            let a = model.joint_index(&u);
            path.us.push(u);
            let x2 = sampler(model.trans(t, x, a))?.sample(&mut rng);
            path.xs.push(x2);
            cost += model.cost(t, x2, a);
        }
        total += cost;
        total_sq += cost * cost;
    }
    let n = episodes as f64;
    let mean = total / n;
    let std_error = if episodes > 1 {
        let var = ((total_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(SimResult {
        episodes,
        mean,
        std_error,
        seed,
    })
}

/// Number of extensional designs, if it fits in `u128`.
pub fn design_count(model: &Model) -> Option<u128> {
    let lengths = TableDesign::table_lengths(model).ok()?;
    lengths
        .iter()
        .enumerate()
        .try_fold(1u128, |acc, (k, per_k)| {
            per_k.iter().try_fold(acc, |acc, &len| {
                acc.checked_mul((model.u_size(k) as u128).checked_pow(u32::try_from(len).ok()?)?)
            })
        })
}

/// Every extensional design exactly once: the first has all actions 0 and
/// later entries change fastest.
pub fn enumerate_designs(model: &Model, max_designs: u128) -> Result<DesignIter<'_>> {
    let count = design_count(model).unwrap_or(u128::MAX);
    if count > max_designs {
        return Err(Error::budget("designs", count, max_designs));
    }
    Ok(DesignIter {
        model,
        next: Some(TableDesign::constant(model)?),
    })
}

pub struct DesignIter<'a> {
    model: &'a Model,
    next: Option<TableDesign>,
}

impl Iterator for DesignIter<'_> {
    type Item = TableDesign;

    fn next(&mut self) -> Option<TableDesign> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        'carry: for (k, per_k) in succ.tables.iter_mut().enumerate().rev() {
            let radix = self.model.u_size(k);
            for table in per_k.iter_mut().rev() {
                for entry in table.iter_mut().rev() {
                    *entry += 1;
                    if *entry < radix {
                        self.next = Some(succ);
                        break 'carry;
                    }
                    *entry = 0;
                }
            }
        }
        Some(current)
    }
}

/// Exhaustive minimum of the expected cost; the first minimizer wins.
pub fn brute_force_optimum(
    model: &Model,
    max_designs: u128,
    max_paths: usize,
) -> Result<(f64, TableDesign)> {
    let mut best: Option<(f64, TableDesign)> = None;
    for design in enumerate_designs(model, max_designs)? {
        let v = exact_cost(model, &design, max_paths)?.expected_cost;
        if best.as_ref().map_or(true, |(b, _)| v < *b) {
            best = Some((v, design));
        }
    }
    best.ok_or_else(|| Error::Internal("no design enumerated".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::model::ProblemSpec;

    fn deterministic() -> ProblemSpec {
        ProblemSpec {
            controllers: 1,
            horizon: 2,
            delay: 1,
            x_size: 1,
            y_size: vec![1],
            u_size: vec![2],
            x0_dist: vec![1.0],
            trans: vec![vec![vec![vec![1.0]; 2]]; 2],
            obs: vec![vec![vec![vec![1.0]]; 2]],
            cost: vec![vec![vec![1.0, 3.0]], vec![vec![2.0, 0.5]]],
        }
    }

    #[test]
    fn single_trajectory_cost() {
        let model = Model::new(deterministic()).unwrap();
        let mut design = TableDesign::constant(&model).unwrap();
        design.tables[0][1] = vec![1];
        let r = exact_cost(&model, &design, 100).unwrap();
        assert_eq!(r.per_stage, vec![1.0, 0.5]);
        assert_eq!(r.expected_cost, 1.5);
        let sim = simulate(&model, &design, 50, 3).unwrap();
        assert_eq!((sim.mean, sim.std_error), (1.5, 0.0));
    }

    #[test]
    fn constant_cost_single_stage() {
        let mut spec = instances::i1();
        spec.horizon = 1;
        spec.trans.truncate(1);
        spec.obs.iter_mut().for_each(|o| o.truncate(1));
        spec.cost = vec![vec![vec![4.25; 4]; 2]];
        let model = Model::new(spec).unwrap();
        let design = TableDesign::constant(&model).unwrap();
        let r = exact_cost(&model, &design, 1000).unwrap();
        assert!((r.expected_cost - 4.25).abs() < 1e-12);
    }

    #[test]
    fn simulation_is_reproducible() {
        let model = Model::new(instances::i1()).unwrap();
        let design = TableDesign::constant(&model).unwrap();
        let a = simulate(&model, &design, 500, 11).unwrap();
        let b = simulate(&model, &design, 500, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate(&model, &design, 500, 12).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn design_counts() {
        let mut spec = instances::i1();
        spec.horizon = 1;
        spec.trans.truncate(1);
        spec.cost.truncate(1);
        spec.obs.iter_mut().for_each(|o| o.truncate(1));
        let model = Model::new(spec).unwrap();
        assert_eq!(enumerate_designs(&model, 100).unwrap().count(), 16);
        let model = Model::new(instances::io()).unwrap();
        assert_eq!(design_count(&model), Some(1024));
        let model = instances::uniform_binary(2, 2, 2).unwrap();
        assert_eq!(design_count(&model), Some(16 * 65536));
        let err = enumerate_designs(&model, 1000).err().unwrap();
        assert!(matches!(
            err,
            Error::Budget {
                count: 1_048_576,
                ..
            }
        ));
    }

    #[test]
    fn zero_cost_optimum_is_first_design() {
        let mut spec = instances::io();
        spec.cost = vec![vec![vec![0.0; 2]; 2]; 2];
        let model = Model::new(spec).unwrap();
        let (v, d) = brute_force_optimum(&model, 10_000, 10_000).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(d, TableDesign::constant(&model).unwrap());
    }

    #[test]
    fn path_state_matches_index_tables() {
        let model = Model::new(instances::i2()).unwrap();
        let design = TableDesign::random(&model, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for_each_path(&model, &design, Stop::AfterObs(3), 10_000, |p| {
            let lambda: Vec<usize> = (0..2).map(|k| p.lambda(&model, k, 3)).collect();
            assert_eq!(
                p.state(&model, 3),
                model.layout.state_rank(3, p.xs[2], &lambda)
            );
        })
        .unwrap();
    }
}
