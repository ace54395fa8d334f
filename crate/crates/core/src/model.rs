//! Finite delayed-sharing problem instances: the file format, validation, and
//! the normalized [`Model`] every solver works from.
//!
//! Conventions fixed here and used everywhere else:
//!
//! * times are 1-based (`t = 1..=T`); array index 0 holds time 1;
//! * `Y^k_t` is drawn from `obs[k][t][X_{t-1}]`, `X_t` from
//!   `trans[t][X_{t-1}][U_t]`, and the stage cost is `cost[t][X_t][U_t]`;
//! * joint actions are flattened row-major with controller 1 as the most
//!   significant digit.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::layout::Layout;

/// Row sums may deviate from one by at most this much.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// A delayed-sharing problem exactly as it appears in a problem file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(rename = "K")]
    pub controllers: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "n")]
    pub delay: usize,
    pub x_size: usize,
    pub y_size: Vec<usize>,
    pub u_size: Vec<usize>,
    pub x0_dist: Vec<f64>,
    /// `trans[t][x][a][x']`
    pub trans: Vec<Vec<Vec<Vec<f64>>>>,
    /// `obs[k][t][x][y]`
    pub obs: Vec<Vec<Vec<Vec<f64>>>>,
    /// `cost[t][x][a]`
    pub cost: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Extent,
    Negative,
    NonFinite,
    Sum,
    Parameter,
}

/// One failed invariant, located by its array path.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub kind: ViolationKind,
    pub observed: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            ViolationKind::Extent => "length",
            ViolationKind::Negative => "negative probability",
            ViolationKind::NonFinite => "non-finite value",
            ViolationKind::Sum => "sum",
            ViolationKind::Parameter => "parameter",
        };
        write!(f, "{what} {} at {}", self.observed, self.path)
    }
}

impl ProblemSpec {
    pub fn joint_actions(&self) -> usize {
        self.u_size.iter().product()
    }

    /// Serializes to the problem-file format (one top-level key per line).
    pub fn to_json(&self) -> String {
        fn compact<T: Serialize>(v: &T) -> String {
            serde_json::to_string(v).expect("plain data always serializes")
        }
        let fields = [
            ("K", compact(&self.controllers)),
            ("T", compact(&self.horizon)),
            ("n", compact(&self.delay)),
            ("x_size", compact(&self.x_size)),
            ("y_size", compact(&self.y_size)),
            ("u_size", compact(&self.u_size)),
            ("x0_dist", compact(&self.x0_dist)),
            ("trans", compact(&self.trans)),
            ("obs", compact(&self.obs)),
            ("cost", compact(&self.cost)),
        ];
        let body: Vec<String> = fields
            .iter()
            .map(|(k, v)| format!("  \"{k}\": {v}"))
            .collect();
        format!("{{\n{}\n}}\n", body.join(",\n"))
    }
}

/// Parses a problem file. No normalization is applied; see [`Model::new`].
pub fn load_problem(text: &str) -> Result<ProblemSpec> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let obj = root.as_object().ok_or_else(|| Error::Schema {
        field: "<root>".into(),
        message: "expected a JSON object".into(),
    })?;
    let field = |name: &str| {
        obj.get(name).ok_or_else(|| Error::Schema {
            field: name.into(),
            message: "missing field".into(),
        })
    };
    Ok(ProblemSpec {
        controllers: as_count(field("K")?, "K")?,
        horizon: as_count(field("T")?, "T")?,
        delay: as_count(field("n")?, "n")?,
        x_size: as_count(field("x_size")?, "x_size")?,
        y_size: as_array(field("y_size")?, "y_size")?
            .iter()
            .enumerate()
            .map(|(i, v)| as_count(v, &format!("y_size[{i}]")))
            .collect::<Result<_>>()?,
        u_size: as_array(field("u_size")?, "u_size")?
            .iter()
            .enumerate()
            .map(|(i, v)| as_count(v, &format!("u_size[{i}]")))
            .collect::<Result<_>>()?,
        x0_dist: reals(field("x0_dist")?, "x0_dist")?,
        trans: nested(field("trans")?, "trans", |v, p| {
            nested(v, p, |v, p| nested(v, p, reals))
        })?,
        obs: nested(field("obs")?, "obs", |v, p| {
            nested(v, p, |v, p| nested(v, p, reals))
        })?,
        cost: nested(field("cost")?, "cost", |v, p| nested(v, p, reals))?,
    })
}

fn schema(path: &str, message: &str) -> Error {
    Error::Schema {
        field: path.into(),
        message: message.into(),
    }
}

fn as_count(v: &Value, path: &str) -> Result<usize> {
    v.as_u64()
        .and_then(|x| usize::try_from(x).ok())
        .ok_or_else(|| schema(path, "expected a non-negative integer"))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| schema(path, "expected an array"))
}

fn reals(v: &Value, path: &str) -> Result<Vec<f64>> {
    as_array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_f64()
                .ok_or_else(|| schema(&format!("{path}[{i}]"), "expected a number"))
        })
        .collect()
}

fn nested<T>(v: &Value, path: &str, inner: impl Fn(&Value, &str) -> Result<T>) -> Result<Vec<T>> {
    as_array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, x)| inner(x, &format!("{path}[{i}]")))
        .collect()
}

/// Checks every structural and probabilistic invariant; an empty report means
/// the spec is valid.
pub fn validate_problem(spec: &ProblemSpec) -> Vec<Violation> {
    let mut report = Vec::new();
    let mut param = |path: &str, observed: usize| {
        report.push(Violation {
            path: path.into(),
            kind: ViolationKind::Parameter,
            observed: observed as f64,
        })
    };
    if spec.controllers == 0 {
        param("K", 0);
    }
    if spec.horizon == 0 {
        param("T", 0);
    }
    if spec.delay == 0 {
        param("n", 0);
    }
    if spec.x_size == 0 {
        param("x_size", 0);
    }
    for (i, &y) in spec.y_size.iter().enumerate() {
        if y == 0 {
            param(&format!("y_size[{i}]"), 0);
        }
    }
    for (i, &u) in spec.u_size.iter().enumerate() {
        if u == 0 {
            param(&format!("u_size[{i}]"), 0);
        }
    }
    let extent = |report: &mut Vec<Violation>, path: String, len: usize, want: usize| {
        if len != want {
            report.push(Violation {
                path,
                kind: ViolationKind::Extent,
                observed: len as f64,
            });
            false
        } else {
            true
        }
    };
    extent(
        &mut report,
        "y_size".into(),
        spec.y_size.len(),
        spec.controllers,
    );
    extent(
        &mut report,
        "u_size".into(),
        spec.u_size.len(),
        spec.controllers,
    );
    let joint = spec.joint_actions();
    if extent(
        &mut report,
        "x0_dist".into(),
        spec.x0_dist.len(),
        spec.x_size,
    ) {
        check_row(&mut report, "x0_dist".into(), &spec.x0_dist);
    }
    if extent(&mut report, "trans".into(), spec.trans.len(), spec.horizon) {
        for (t, per_t) in spec.trans.iter().enumerate() {
            if !extent(&mut report, format!("trans[{t}]"), per_t.len(), spec.x_size) {
                continue;
            }
            for (x, per_x) in per_t.iter().enumerate() {
                if !extent(&mut report, format!("trans[{t}][{x}]"), per_x.len(), joint) {
                    continue;
                }
                for (a, row) in per_x.iter().enumerate() {
                    let path = format!("trans[{t}][{x}][{a}]");
                    if extent(&mut report, path.clone(), row.len(), spec.x_size) {
                        check_row(&mut report, path, row);
                    }
                }
            }
        }
    }
    if extent(&mut report, "obs".into(), spec.obs.len(), spec.controllers) {
        for (k, per_k) in spec.obs.iter().enumerate() {
            if !extent(&mut report, format!("obs[{k}]"), per_k.len(), spec.horizon) {
                continue;
            }
            let ys = spec.y_size.get(k).copied().unwrap_or(0);
            for (t, per_t) in per_k.iter().enumerate() {
                if !extent(
                    &mut report,
                    format!("obs[{k}][{t}]"),
                    per_t.len(),
                    spec.x_size,
                ) {
                    continue;
                }
                for (x, row) in per_t.iter().enumerate() {
                    let path = format!("obs[{k}][{t}][{x}]");
                    if extent(&mut report, path.clone(), row.len(), ys) {
                        check_row(&mut report, path, row);
                    }
                }
            }
        }
    }
    if extent(&mut report, "cost".into(), spec.cost.len(), spec.horizon) {
        for (t, per_t) in spec.cost.iter().enumerate() {
            if !extent(&mut report, format!("cost[{t}]"), per_t.len(), spec.x_size) {
                continue;
            }
            for (x, row) in per_t.iter().enumerate() {
                let path = format!("cost[{t}][{x}]");
                if extent(&mut report, path.clone(), row.len(), joint) {
                    for (a, c) in row.iter().enumerate() {
                        if !c.is_finite() {
                            report.push(Violation {
                                path: format!("{path}[{a}]"),
                                kind: ViolationKind::NonFinite,
                                observed: *c,
                            });
                        }
                    }
                }
            }
        }
    }
    report
}

fn check_row(report: &mut Vec<Violation>, path: String, row: &[f64]) {
    let mut sane = true;
    for (i, &p) in row.iter().enumerate() {
        if !p.is_finite() {
            report.push(Violation {
                path: format!("{path}[{i}]"),
                kind: ViolationKind::NonFinite,
                observed: p,
            });
            sane = false;
        } else if p < 0.0 {
            report.push(Violation {
                path: format!("{path}[{i}]"),
                kind: ViolationKind::Negative,
                observed: p,
            });
            sane = false;
        }
    }
    let sum: f64 = row.iter().sum();
    if sane && (sum - 1.0).abs() > PROB_TOLERANCE {
        report.push(Violation {
            path,
            kind: ViolationKind::Sum,
            observed: sum,
        });
    }
}

/// Index ranges of the private window `Λ^k_t` and the number of shared stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    /// Times whose observations are private at `t`.
    pub obs: Range<usize>,
    /// Times whose actions are private at `t`.
    pub act: Range<usize>,
    /// Number of `(Y, U)` stages contained in the common information.
    pub shared_horizon: usize,
}

pub fn window(t: usize, spec: &ProblemSpec) -> Result<Window> {
    if t == 0 || t > spec.horizon {
        return Err(Error::domain("time", t, 1, spec.horizon));
    }
    Ok(window_unchecked(t, spec.delay))
}

pub(crate) fn window_unchecked(t: usize, n: usize) -> Window {
    let lo = first_private(t, n);
    Window {
        obs: lo..t + 1,
        act: lo..t.max(lo),
        shared_horizon: t.saturating_sub(n),
    }
}

/// First time whose data is still private at `t`.
pub(crate) fn first_private(t: usize, n: usize) -> usize {
    if t + 1 > n { t + 1 - n } else { 1 }.max(1)
}

/// A joint action with both its per-controller and flattened forms.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointAction {
    pub u: Vec<usize>,
    pub index: usize,
}

/// A validated problem with every probability row renormalized to sum to one.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ProblemSpec,
    joint: usize,
    /// `expected_cost[t-1][x][a] = Σ_x' trans[t][x][a][x'] · cost[t][x'][a]`
    expected_cost: Vec<Vec<Vec<f64>>>,
    /// `obs_joint[t-1][x]`: support of `(Y^1_t..Y^K_t)` given `X_{t-1} = x`.
    obs_joint: Vec<Vec<Vec<(Vec<usize>, f64)>>>,
    pub(crate) layout: Layout,
}

impl Model {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        let report = validate_problem(&spec);
        if !report.is_empty() {
            return Err(Error::Invalid(report));
        }
        let mut spec = spec;
        normalize(&mut spec.x0_dist);
        spec.trans
            .iter_mut()
            .flatten()
            .flatten()
            .for_each(|row| normalize(row));
        spec.obs
            .iter_mut()
            .flatten()
            .flatten()
            .for_each(|row| normalize(row));
        let joint = spec.joint_actions();
        let expected_cost = (0..spec.horizon)
            .map(|t| {
                (0..spec.x_size)
                    .map(|x| {
                        (0..joint)
                            .map(|a| {
                                spec.trans[t][x][a]
                                    .iter()
                                    .enumerate()
                                    .map(|(x2, p)| p * spec.cost[t][x2][a])
                                    .sum()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let obs_joint = (0..spec.horizon)
            .map(|t| {
                (0..spec.x_size)
                    .map(|x| {
                        let mut out = vec![(Vec::new(), 1.0)];
                        for k in 0..spec.controllers {
                            let mut next = Vec::new();
                            for (ys, p) in &out {
                                for (y, q) in spec.obs[k][t][x].iter().enumerate() {
                                    if *q > 0.0 {
                                        let mut ys2: Vec<usize> = ys.clone();
                                        ys2.push(y);
                                        next.push((ys2, p * q));
                                    }
                                }
                            }
                            out = next;
                        }
                        out
                    })
                    .collect()
            })
            .collect();
        let layout = Layout::new(&spec)?;
        Ok(Model {
            spec,
            joint,
            expected_cost,
            obs_joint,
            layout,
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn controllers(&self) -> usize {
        self.spec.controllers
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    pub fn delay(&self) -> usize {
        self.spec.delay
    }

    pub fn x_size(&self) -> usize {
        self.spec.x_size
    }

    pub fn y_size(&self, k: usize) -> usize {
        self.spec.y_size[k]
    }

    pub fn u_size(&self, k: usize) -> usize {
        self.spec.u_size[k]
    }

    pub fn joint_actions(&self) -> usize {
        self.joint
    }

    pub fn x0(&self) -> &[f64] {
        &self.spec.x0_dist
    }

    /// `P(X_t = · | X_{t-1} = x, U_t = a)`.
    pub fn trans(&self, t: usize, x: usize, a: usize) -> &[f64] {
        &self.spec.trans[t - 1][x][a]
    }

    /// `P(Y^k_t = · | X_{t-1} = x)`.
    pub fn obs(&self, k: usize, t: usize, x: usize) -> &[f64] {
        &self.spec.obs[k][t - 1][x]
    }

    pub fn cost(&self, t: usize, x: usize, a: usize) -> f64 {
        self.spec.cost[t - 1][x][a]
    }

    /// Stage cost at `t` averaged over the transition out of `x` under `a`.
    pub fn expected_cost(&self, t: usize, x: usize, a: usize) -> f64 {
        self.expected_cost[t - 1][x][a]
    }

    /// Joint support of all controllers' observations at `t` given `X_{t-1}`.
    pub fn obs_joint(&self, t: usize, x: usize) -> &[(Vec<usize>, f64)] {
        &self.obs_joint[t - 1][x]
    }

    pub fn joint_index(&self, u: &[usize]) -> usize {
        u.iter()
            .zip(&self.spec.u_size)
            .fold(0, |acc, (&a, &r)| acc * r + a)
    }

    pub fn joint_action(&self, index: usize) -> JointAction {
        let mut u = vec![0; self.spec.controllers];
        let mut rest = index;
        for k in (0..self.spec.controllers).rev() {
            u[k] = rest % self.spec.u_size[k];
            rest /= self.spec.u_size[k];
        }
        JointAction { u, index }
    }

    pub fn window(&self, t: usize) -> Result<Window> {
        window(t, &self.spec)
    }

    pub(crate) fn check_time(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.spec.horizon {
            Err(Error::domain("time", t, 1, self.spec.horizon))
        } else {
            Ok(())
        }
    }
}

fn normalize(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= sum);
}
