//! Solution and design files.

use serde::{Deserialize, Serialize};

use crate::coordinator::Solution;
use crate::error::{Error, Result};
use crate::histories::{profile_count, Design, GammaProfile, OpenLoopDesign, TableDesign};
use crate::model::Model;
use crate::second_form::{RSuffix, Solution2};

fn json_error(e: serde_json::Error) -> Error {
    use serde_json::error::Category;
    match e.classify() {
        Category::Data => Error::Schema {
            field: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        },
        _ => Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    Belief,
    ThetaR,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub value: f64,
    pub argmin: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub belief: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<RSuffix>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub t: usize,
    pub nodes: Vec<NodeRecord>,
}

/// An edge taken by the optimal policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub t: usize,
    pub node: usize,
    pub profile: u64,
    pub z: usize,
    pub pz: f64,
    pub child: usize,
}

/// A solved program. Only edges along the optimal policy are listed; the
/// total number of graph edges over all profiles is given in `edge_total`
/// when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub form: Form,
    pub optimal_cost: f64,
    pub node_counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_total: Option<String>,
    pub layers: Vec<LayerRecord>,
    pub edges: Vec<EdgeRecord>,
}

impl SolutionFile {
    pub fn from_belief_solution(model: &Model, sol: &Solution) -> Result<Self> {
        let layers = sol
            .graph
            .nodes
            .iter()
            .enumerate()
            .map(|(i, layer)| LayerRecord {
                t: i + 1,
                nodes: layer
                    .iter()
                    .enumerate()
                    .map(|(id, pi)| NodeRecord {
                        id,
                        value: sol.values.value[i][id],
                        argmin: sol.values.argmin[i][id],
                        belief: Some(pi.p.clone()),
                        theta: None,
                        r: None,
                    })
                    .collect(),
            })
            .collect();
        let edges = sol
            .policy_edges(model)?
            .into_iter()
            .map(|(t, node, e)| EdgeRecord {
                t,
                node,
                profile: sol.policy.profiles[t - 1][node],
                z: e.z,
                pz: e.pz,
                child: e.child,
            })
            .collect();
        Ok(SolutionFile {
            form: Form::Belief,
            optimal_cost: sol.optimal_cost,
            node_counts: sol.graph.nodes.iter().map(Vec::len).collect(),
            edge_total: Some(sol.graph.edge_count(model).to_string()),
            layers,
            edges,
        })
    }

    pub fn from_theta_r_solution(model: &Model, sol: &Solution2) -> Result<Self> {
        let layers = sol
            .graph
            .nodes
            .iter()
            .enumerate()
            .map(|(i, layer)| LayerRecord {
                t: i + 1,
                nodes: layer
                    .iter()
                    .enumerate()
                    .map(|(id, s)| NodeRecord {
                        id,
                        value: sol.values.value[i][id],
                        argmin: sol.values.argmin[i][id],
                        belief: None,
                        theta: Some(s.theta.p.clone()),
                        r: Some(s.r.clone()),
                    })
                    .collect(),
            })
            .collect();
        let edges = sol
            .policy_edges(model)?
            .into_iter()
            .map(|(t, node, (z, pz, child))| EdgeRecord {
                t,
                node,
                profile: sol.policy.profiles[t - 1][node],
                z,
                pz,
                child,
            })
            .collect();
        Ok(SolutionFile {
            form: Form::ThetaR,
            optimal_cost: sol.optimal_cost,
            node_counts: sol.graph.nodes.iter().map(Vec::len).collect(),
            edge_total: None,
            layers,
            edges,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes") + "\n"
    }

    /// Structural consistency: layers in time order, dense node ids, edges
    /// between existing nodes of consecutive layers.
    pub fn check(&self) -> Result<()> {
        let bad = |field: String, message: &str| Error::Schema {
            field,
            message: message.into(),
        };
        if self.layers.len() != self.node_counts.len() {
            return Err(bad(
                "node_counts".into(),
                "length differs from the number of layers",
            ));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.t != i + 1 {
                return Err(bad(
                    format!("layers[{i}].t"),
                    "layers must be listed in time order",
                ));
            }
            if layer.nodes.len() != self.node_counts[i] {
                return Err(bad(format!("node_counts[{i}]"), "does not match the layer"));
            }
            for (j, node) in layer.nodes.iter().enumerate() {
                if node.id != j {
                    return Err(bad(
                        format!("layers[{i}].nodes[{j}].id"),
                        "node ids must be dense",
                    ));
                }
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            let ok = e.t >= 1
                && e.t < self.layers.len()
                && e.node < self.layers[e.t - 1].nodes.len()
                && e.child < self.layers[e.t].nodes.len();
            if !ok {
                return Err(bad(format!("edges[{i}]"), "edge refers to a missing node"));
            }
        }
        Ok(())
    }
}

pub fn parse_solution(text: &str) -> Result<SolutionFile> {
    let file: SolutionFile = serde_json::from_str(text).map_err(json_error)?;
    file.check()?;
    Ok(file)
}

/// A stored design: extensional tables or one profile rank per time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignFile {
    /// `tables[k][t-1][λ · |𝒟_t| + δ]`
    Table { tables: Vec<Vec<Vec<usize>>> },
    /// Profile rank at each time, ignoring the common history.
    OpenLoop { profiles: Vec<u64> },
}

impl DesignFile {
    pub fn build(&self, model: &Model) -> Result<Box<dyn Design>> {
        match self {
            DesignFile::Table { tables } => Ok(Box::new(TableDesign::new(model, tables.clone())?)),
            DesignFile::OpenLoop { profiles } => {
                if profiles.len() != model.horizon() {
                    return Err(Error::Schema {
                        field: "profiles".into(),
                        message: format!("expected {} ranks", model.horizon()),
                    });
                }
                let profiles = profiles
                    .iter()
                    .enumerate()
                    .map(|(i, &r)| {
                        if profile_count(model, i + 1).map_or(false, |c| r >= c) {
                            return Err(Error::Schema {
                                field: format!("profiles[{i}]"),
                                message: "profile rank out of range".into(),
                            });
                        }
                        GammaProfile::from_rank(model, i + 1, r)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Box::new(OpenLoopDesign { profiles }))
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("design serializes") + "\n"
    }
}

pub fn parse_design(text: &str) -> Result<DesignFile> {
    serde_json::from_str(text).map_err(json_error)
}
