//! Importer for a subset of the MATPOWER case text format.
//!
//! Supported: `mpc.baseMVA`, `mpc.bus` (id, type 1/3, Pd, Qd, Gs, Bs, Vm, Va),
//! `mpc.branch` (from, to, r, x) and an optional `mpc.gen` whose units all sit
//! on the reference bus. Anything that would change the electrical model
//! (line charging, taps, phase shifters, PV buses, out-of-service elements) is
//! rejected rather than dropped.

use super::{BranchSpec, Bus, BusRole, Network, NetworkError};

struct Block {
    line: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

// Column indices in the MATPOWER layout.
const BUS_I: usize = 0;
const BUS_TYPE: usize = 1;
const PD: usize = 2;
const QD: usize = 3;
const GS: usize = 4;
const BS: usize = 5;
const VM: usize = 7;
const VA: usize = 8;

const F_BUS: usize = 0;
const T_BUS: usize = 1;
const BR_R: usize = 2;
const BR_X: usize = 3;
const BR_B: usize = 4;
const TAP: usize = 8;
const SHIFT: usize = 9;
const BR_STATUS: usize = 10;

const GEN_BUS: usize = 0;
const VG: usize = 5;
const GEN_STATUS: usize = 7;

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_row(text: &str, line: usize) -> Result<Vec<f64>, NetworkError> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| NetworkError::Matpower {
                line,
                message: format!("invalid number `{tok}`"),
            })
        })
        .collect()
}

fn unsupported(feature: &str, line: usize) -> NetworkError {
    NetworkError::Unsupported {
        feature: feature.to_string(),
        location: format!("line {line}"),
    }
}

/// `baseMVA` with its line, and the named matrix blocks.
type Scanned = (Option<(usize, f64)>, Vec<(String, Block)>);

/// Splits the document into `mpc.<name> = ...` assignments.
fn scan(text: &str) -> Result<Scanned, NetworkError> {
    let mut base = None;
    let mut blocks = Vec::new();
    let mut open: Option<(String, Block)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let mut line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if open.is_none() {
            let Some(rest) = line.strip_prefix("mpc.") else {
                continue;
            };
            let Some((name, value)) = rest.split_once('=') else {
                continue;
            };
            let name = name.trim().to_string();
            let value = value.trim();
            if let Some(body) = value.strip_prefix('[') {
                open = Some((
                    name,
                    Block {
                        line: line_no,
                        rows: Vec::new(),
                    },
                ));
                line = body;
            } else if name == "baseMVA" {
                let num = value.trim_end_matches(';').trim();
                let parsed = num.parse::<f64>().map_err(|_| NetworkError::Matpower {
                    line: line_no,
                    message: format!("invalid baseMVA `{num}`"),
                })?;
                base = Some((line_no, parsed));
                continue;
            } else {
                continue;
            }
        }

        let (closes, body) = match line.find(']') {
            Some(i) => (true, &line[..i]),
            None => (false, line),
        };
        if let Some((_, block)) = open.as_mut() {
            for row in body.split(';') {
                let values = parse_row(row, line_no)?;
                if !values.is_empty() {
                    block.rows.push((line_no, values));
                }
            }
        }
        if closes {
            blocks.push(open.take().expect("open block"));
        }
    }
    if let Some((name, block)) = open {
        return Err(NetworkError::Matpower {
            line: block.line,
            message: format!("unterminated matrix `mpc.{name}`"),
        });
    }
    Ok((base, blocks))
}

fn column(row: &[f64], col: usize, line: usize, what: &str) -> Result<f64, NetworkError> {
    row.get(col).copied().ok_or_else(|| NetworkError::Matpower {
        line,
        message: format!(
            "{what} row has {} columns, need at least {}",
            row.len(),
            col + 1
        ),
    })
}

fn as_id(value: f64, line: usize) -> Result<i64, NetworkError> {
    if value.fract() != 0.0 {
        return Err(NetworkError::Matpower {
            line,
            message: format!("bus id {value} is not an integer"),
        });
    }
    Ok(value as i64)
}

/// Imports a MATPOWER case into a per-unit [`Network`]. Loads (`Pd`, `Qd`)
/// become negative injections scaled by `baseMVA`; shunts `Gs`, `Bs` are
/// divided by `baseMVA`; `Va` is converted from degrees to radians.
pub fn import_matpower_case(text: &str) -> Result<Network, NetworkError> {
    let (base, blocks) = scan(text)?;
    let (_, base_mva) = base.ok_or(NetworkError::Matpower {
        line: 0,
        message: "missing mpc.baseMVA".into(),
    })?;
    if !(base_mva.is_finite() && base_mva > 0.0) {
        return Err(NetworkError::Matpower {
            line: base.map(|b| b.0).unwrap_or(0),
            message: format!("baseMVA must be positive, got {base_mva}"),
        });
    }

    let mut bus_block = None;
    let mut branch_block = None;
    let mut gen_block = None;
    for (name, block) in blocks {
        match name.as_str() {
            "bus" => bus_block = Some(block),
            "branch" => branch_block = Some(block),
            "gen" => gen_block = Some(block),
            "dcline" if !block.rows.is_empty() => {
                return Err(unsupported("dc line", block.line));
            }
            // Cost and naming data do not affect the electrical model.
            _ => {}
        }
    }
    let bus_block = bus_block.ok_or(NetworkError::Matpower {
        line: 0,
        message: "missing mpc.bus".into(),
    })?;
    let branch_block = branch_block.ok_or(NetworkError::Matpower {
        line: 0,
        message: "missing mpc.branch".into(),
    })?;

    let mut buses = Vec::with_capacity(bus_block.rows.len());
    for (line, row) in &bus_block.rows {
        let line = *line;
        let id = as_id(column(row, BUS_I, line, "bus")?, line)?;
        let role = match column(row, BUS_TYPE, line, "bus")? as i64 {
            1 => BusRole::Load,
            3 => BusRole::Slack,
            2 => return Err(unsupported("PV bus", line)),
            4 => return Err(unsupported("isolated bus", line)),
            other => {
                return Err(NetworkError::Matpower {
                    line,
                    message: format!("unknown bus type {other}"),
                })
            }
        };
        let va = row.get(VA).copied().unwrap_or(0.0);
        buses.push(Bus {
            id: 0,
            source_id: id,
            role,
            p_nom: -column(row, PD, line, "bus")? / base_mva,
            q_nom: -column(row, QD, line, "bus")? / base_mva,
            shunt_g: row.get(GS).copied().unwrap_or(0.0) / base_mva,
            shunt_b: row.get(BS).copied().unwrap_or(0.0) / base_mva,
            v_set: row.get(VM).copied().unwrap_or(1.0),
            theta_set: va.to_radians(),
        });
    }

    if let Some(gen_block) = gen_block {
        for (line, row) in &gen_block.rows {
            let line = *line;
            if row.get(GEN_STATUS).copied().unwrap_or(1.0) <= 0.0 {
                continue;
            }
            let id = as_id(column(row, GEN_BUS, line, "gen")?, line)?;
            let bus = buses
                .iter_mut()
                .find(|b| b.source_id == id)
                .ok_or_else(|| NetworkError::UnknownBus {
                    id,
                    location: format!("line {line}"),
                })?;
            if bus.role != BusRole::Slack {
                return Err(unsupported("generator at non-slack bus", line));
            }
            if let Some(&vg) = row.get(VG) {
                bus.v_set = vg;
            }
        }
    }

    let mut branches = Vec::with_capacity(branch_block.rows.len());
    for (line, row) in &branch_block.rows {
        let line = *line;
        let get = |col| row.get(col).copied().unwrap_or(0.0);
        if get(BR_B) != 0.0 {
            return Err(unsupported("line charging", line));
        }
        if get(TAP) != 0.0 {
            return Err(unsupported("tap ratio", line));
        }
        if get(SHIFT) != 0.0 {
            return Err(unsupported("phase shift", line));
        }
        if row.len() > BR_STATUS && get(BR_STATUS) <= 0.0 {
            return Err(unsupported("out-of-service branch", line));
        }
        branches.push(BranchSpec {
            from: as_id(column(row, F_BUS, line, "branch")?, line)?,
            to: as_id(column(row, T_BUS, line, "branch")?, line)?,
            r: column(row, BR_R, line, "branch")?,
            x: column(row, BR_X, line, "branch")?,
        });
    }

    Network::new(base_mva, buses, branches)
}
