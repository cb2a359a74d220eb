//! Network data model, file ingestion and nodal admittance matrix.
//!
//! All electrical quantities are per-unit and angles are radians. Bus powers
//! follow the net-injection convention: generation is positive, load is
//! negative. Bus ids are remapped to the contiguous range `1..=n` on parse and
//! the original ids are retained in [`Bus::source_id`].

mod matpower;

use std::collections::{HashMap, VecDeque};
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use matpower::import_matpower_case;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NetworkError {
    #[error("malformed network document at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("degenerate network: {buses} bus(es), at least 2 required")]
    Degenerate { buses: usize },
    #[error("{location}: duplicate bus id {id}")]
    DuplicateBusId { id: i64, location: String },
    #[error("no slack bus defined")]
    NoSlack,
    #[error("multiple slack buses: {first} and {second}")]
    MultipleSlack { first: i64, second: i64 },
    #[error("{location}: reference to unknown bus {id}")]
    UnknownBus { id: i64, location: String },
    #[error("{location}: branch connects bus {id} to itself")]
    SelfLoop { id: i64, location: String },
    #[error("{location}: zero-impedance branch (r = x = 0)")]
    ZeroImpedance { location: String },
    #[error("network is disconnected: buses {unreachable:?} unreachable from slack")]
    Disconnected { unreachable: Vec<i64> },
    #[error("{location}: field `{field}` is not finite")]
    NonFinite {
        field: &'static str,
        location: String,
    },
    #[error("{location}: unsupported feature: {feature}")]
    Unsupported { feature: String, location: String },
    #[error("line {line}: {message}")]
    Matpower { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusRole {
    Slack,
    Load,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// Contiguous 1-based id.
    pub id: usize,
    /// Id as written in the source document.
    pub source_id: i64,
    pub role: BusRole,
    pub p_nom: f64,
    pub q_nom: f64,
    pub shunt_g: f64,
    pub shunt_b: f64,
    pub v_set: f64,
    pub theta_set: f64,
}

impl Bus {
    pub fn shunt(&self) -> Complex64 {
        Complex64::new(self.shunt_g, self.shunt_b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    /// 1-based bus ids.
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
}

impl Branch {
    /// Series admittance `1 / (r + jx)`.
    pub fn admittance(&self) -> Complex64 {
        Complex64::new(self.r, self.x).inv()
    }
}

/// Branch as written in a source document, endpoints given by source id.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchSpec {
    pub from: i64,
    pub to: i64,
    pub r: f64,
    pub x: f64,
}

/// Validated, immutable network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    slack: usize,
}

/// Nodal admittance matrix `Y`, dense.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix(pub DMatrix<Complex64>);

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }
}

impl Network {
    /// Validates raw buses/branches and remaps ids to `1..=n` in the given
    /// bus order. `Bus::id` of the inputs is ignored.
    pub fn new(
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<BranchSpec>,
    ) -> Result<Self, NetworkError> {
        let raw_buses = buses;
        if raw_buses.len() < 2 {
            return Err(NetworkError::Degenerate {
                buses: raw_buses.len(),
            });
        }
        let mut index_of: HashMap<i64, usize> = HashMap::new();
        let mut slack: Option<usize> = None;
        let mut buses = Vec::with_capacity(raw_buses.len());
        for (pos, bus) in raw_buses.into_iter().enumerate() {
            let location = format!("buses[{pos}]");
            for (field, value) in [
                ("p_nom", bus.p_nom),
                ("q_nom", bus.q_nom),
                ("shunt_g", bus.shunt_g),
                ("shunt_b", bus.shunt_b),
                ("v_set", bus.v_set),
                ("theta_set", bus.theta_set),
            ] {
                if !value.is_finite() {
                    return Err(NetworkError::NonFinite { field, location });
                }
            }
            if index_of.insert(bus.source_id, pos).is_some() {
                return Err(NetworkError::DuplicateBusId {
                    id: bus.source_id,
                    location,
                });
            }
            if bus.role == BusRole::Slack {
                if let Some(first) = slack {
                    let first: &Bus = &buses[first];
                    return Err(NetworkError::MultipleSlack {
                        first: first.source_id,
                        second: bus.source_id,
                    });
                }
                slack = Some(pos);
            }
            buses.push(Bus { id: pos + 1, ..bus });
        }
        let slack = slack.ok_or(NetworkError::NoSlack)?;

        let mut mapped = Vec::with_capacity(branches.len());
        for (pos, br) in branches.into_iter().enumerate() {
            let location = format!("branches[{pos}]");
            for (field, value) in [("r", br.r), ("x", br.x)] {
                if !value.is_finite() {
                    return Err(NetworkError::NonFinite { field, location });
                }
            }
            let lookup = |id: i64| {
                index_of
                    .get(&id)
                    .copied()
                    .ok_or_else(|| NetworkError::UnknownBus {
                        id,
                        location: location.clone(),
                    })
            };
            let from = lookup(br.from)?;
            let to = lookup(br.to)?;
            if from == to {
                return Err(NetworkError::SelfLoop {
                    id: br.from,
                    location,
                });
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(NetworkError::ZeroImpedance { location });
            }
            mapped.push(Branch {
                from: from + 1,
                to: to + 1,
                r: br.r,
                x: br.x,
            });
        }

        let net = Network {
            base_mva,
            buses,
            branches: mapped,
            slack,
        };
        net.check_connected()?;
        Ok(net)
    }

    fn check_connected(&self) -> Result<(), NetworkError> {
        let n = self.n();
        let mut adjacency = vec![Vec::new(); n];
        for br in &self.branches {
            adjacency[br.from - 1].push(br.to - 1);
            adjacency[br.to - 1].push(br.from - 1);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.slack]);
        seen[self.slack] = true;
        while let Some(h) = queue.pop_front() {
            for &k in &adjacency[h] {
                if !seen[k] {
                    seen[k] = true;
                    queue.push_back(k);
                }
            }
        }
        let unreachable: Vec<i64> = self
            .buses
            .iter()
            .zip(&seen)
            .filter(|(_, &s)| !s)
            .map(|(b, _)| b.source_id)
            .collect();
        if unreachable.is_empty() {
            Ok(())
        } else {
            Err(NetworkError::Disconnected { unreachable })
        }
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// 0-based index of the slack bus.
    pub fn slack_index(&self) -> usize {
        self.slack
    }

    /// 0-based indices of all non-slack buses, in id order.
    pub fn load_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&h| h != self.slack).collect()
    }

    /// Nominal `(p, q)` at every bus. The slack entries are the document
    /// values and are overwritten by the power flow.
    pub fn nominal_injections(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.buses.iter().map(|b| b.p_nom).collect(),
            self.buses.iter().map(|b| b.q_nom).collect(),
        )
    }

    /// Copy of the network with every bus shunt replaced by `shunt`.
    pub fn with_uniform_shunt(&self, shunt: Complex64) -> Network {
        let mut net = self.clone();
        for bus in &mut net.buses {
            bus.shunt_g = shunt.re;
            bus.shunt_b = shunt.im;
        }
        net
    }

    /// Copy of the network with nominal injections replaced at load buses.
    pub fn with_nominal_injections(&self, p: &[f64], q: &[f64]) -> Network {
        let mut net = self.clone();
        for (h, bus) in net.buses.iter_mut().enumerate() {
            if bus.role == BusRole::Load {
                bus.p_nom = p[h];
                bus.q_nom = q[h];
            }
        }
        net
    }

    /// Relabels buses so that new position `i` holds old bus `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Network {
        assert_eq!(perm.len(), self.n());
        let mut new_pos = vec![0; self.n()];
        for (i, &old) in perm.iter().enumerate() {
            new_pos[old] = i;
        }
        let buses = perm
            .iter()
            .enumerate()
            .map(|(i, &old)| Bus {
                id: i + 1,
                ..self.buses[old].clone()
            })
            .collect();
        let branches = self
            .branches
            .iter()
            .map(|br| Branch {
                from: new_pos[br.from - 1] + 1,
                to: new_pos[br.to - 1] + 1,
                ..br.clone()
            })
            .collect();
        Network {
            base_mva: self.base_mva,
            buses,
            branches,
            slack: new_pos[self.slack],
        }
    }

    pub fn to_json(&self) -> String {
        let doc = NetworkDoc {
            base_mva: self.base_mva,
            buses: self
                .buses
                .iter()
                .map(|b| BusDoc {
                    id: b.source_id,
                    role: b.role,
                    p_nom: b.p_nom,
                    q_nom: b.q_nom,
                    shunt_g: b.shunt_g,
                    shunt_b: b.shunt_b,
                    v_set: (b.role == BusRole::Slack).then_some(b.v_set),
                    theta_set: (b.role == BusRole::Slack).then_some(b.theta_set),
                })
                .collect(),
            branches: self
                .branches
                .iter()
                .map(|br| BranchDoc {
                    from: self.buses[br.from - 1].source_id,
                    to: self.buses[br.to - 1].source_id,
                    r: br.r,
                    x: br.x,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("network serializes")
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "network: {} buses, {} branches, slack bus {}",
            self.n(),
            self.branches.len(),
            self.buses[self.slack].source_id
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    #[serde(default = "default_base")]
    base_mva: f64,
    buses: Vec<BusDoc>,
    #[serde(default)]
    branches: Vec<BranchDoc>,
}

fn default_base() -> f64 {
    1.0
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusDoc {
    id: i64,
    role: BusRole,
    #[serde(default)]
    p_nom: f64,
    #[serde(default)]
    q_nom: f64,
    #[serde(default)]
    shunt_g: f64,
    #[serde(default)]
    shunt_b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_set: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta_set: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchDoc {
    from: i64,
    to: i64,
    r: f64,
    x: f64,
}

/// Parses the native JSON network document.
pub fn parse_network(text: &str) -> Result<Network, NetworkError> {
    let doc: NetworkDoc = serde_json::from_str(text).map_err(|e| NetworkError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let buses = doc
        .buses
        .into_iter()
        .map(|b| Bus {
            id: 0,
            source_id: b.id,
            role: b.role,
            p_nom: b.p_nom,
            q_nom: b.q_nom,
            shunt_g: b.shunt_g,
            shunt_b: b.shunt_b,
            v_set: b.v_set.unwrap_or(1.0),
            theta_set: b.theta_set.unwrap_or(0.0),
        })
        .collect();
    let branches = doc
        .branches
        .into_iter()
        .map(|br| BranchSpec {
            from: br.from,
            to: br.to,
            r: br.r,
            x: br.x,
        })
        .collect();
    Network::new(doc.base_mva, buses, branches)
}

/// Builds `Y` with `Y_hh = y_h^sh + Σ y_hl` and `Y_hk = -y_hk`.
pub fn build_admittance(net: &Network) -> AdmittanceMatrix {
    let n = net.n();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (h, bus) in net.buses().iter().enumerate() {
        y[(h, h)] += bus.shunt();
    }
    for br in net.branches() {
        let (h, k) = (br.from - 1, br.to - 1);
        let yhk = br.admittance();
        y[(h, h)] += yhk;
        y[(k, k)] += yhk;
        y[(h, k)] -= yhk;
        y[(k, h)] -= yhk;
    }
    AdmittanceMatrix(y)
}
