//! Reader and writer for CVRPLib (TSPLIB-style) `.vrp` files with
//! `EDGE_WEIGHT_TYPE: EUC_2D`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::instance::{Instance, Problem};

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

#[derive(PartialEq)]
enum Section {
    Header,
    Coords,
    Demands,
    Depot,
    Done,
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| perr(line, format!("bad {what} {tok:?}")))
}

/// Parses `.vrp` text. Coordinates stay in the file's units; the depot is
/// moved to index 0 and the remaining nodes keep their file order.
pub fn parse_cvrplib(text: &str) -> Result<Instance> {
    let mut header: BTreeMap<String, (String, usize)> = BTreeMap::new();
    let mut coords: BTreeMap<usize, ([f64; 2], usize)> = BTreeMap::new();
    let mut demands: BTreeMap<usize, (u32, usize)> = BTreeMap::new();
    let mut depots: Vec<usize> = Vec::new();
    let mut seen = (false, false, false);
    let mut section = Section::Header;
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let s = raw.trim();
        if s.is_empty() {
            continue;
        }
        let upper = s.to_ascii_uppercase();
        match upper.as_str() {
            "NODE_COORD_SECTION" => {
                section = Section::Coords;
                seen.0 = true;
                continue;
            }
            "DEMAND_SECTION" => {
                section = Section::Demands;
                seen.1 = true;
                continue;
            }
            "DEPOT_SECTION" => {
                section = Section::Depot;
                seen.2 = true;
                continue;
            }
            "EOF" => {
                section = Section::Done;
                continue;
            }
            _ => {}
        }
        if upper.ends_with("_SECTION") {
            return Err(perr(line, format!("unsupported section {s}")));
        }
        if let Some((key, value)) = s.split_once(':') {
            if section != Section::Header && key.trim().chars().all(|c| c.is_ascii_uppercase() || c == '_') {
                section = Section::Header;
            }
            if section == Section::Header {
                header.insert(key.trim().to_ascii_uppercase(), (value.trim().to_string(), line));
                continue;
            }
        }
        let toks: Vec<&str> = s.split_whitespace().collect();
        match section {
            Section::Header => return Err(perr(line, format!("expected KEY : VALUE, got {s:?}"))),
            Section::Coords => {
                if toks.len() != 3 {
                    return Err(perr(line, "coordinate line needs: id x y"));
                }
                let id: usize = parse_num(toks[0], line, "node id")?;
                let x: f64 = parse_num(toks[1], line, "x coordinate")?;
                let y: f64 = parse_num(toks[2], line, "y coordinate")?;
                if coords.insert(id, ([x, y], line)).is_some() {
                    return Err(perr(line, format!("duplicate node {id}")));
                }
            }
            Section::Demands => {
                if toks.len() != 2 {
                    return Err(perr(line, "demand line needs: id demand"));
                }
                let id: usize = parse_num(toks[0], line, "node id")?;
                let d: u32 = parse_num(toks[1], line, "demand")?;
                if demands.insert(id, (d, line)).is_some() {
                    return Err(perr(line, format!("duplicate demand for node {id}")));
                }
            }
            Section::Depot => {
                for t in toks {
                    let v: i64 = parse_num(t, line, "depot id")?;
                    if v == -1 {
                        section = Section::Done;
                        break;
                    }
                    if v < 1 {
                        return Err(perr(line, format!("bad depot id {v}")));
                    }
                    depots.push(v as usize);
                }
            }
            Section::Done => return Err(perr(line, format!("unexpected content after section end: {s:?}"))),
        }
    }

    let get = |k: &str| header.get(k);
    let end = last_line.max(1);
    let (dim_s, dim_line) = get("DIMENSION").ok_or_else(|| perr(end, "missing DIMENSION"))?;
    let dimension: usize = parse_num(dim_s, *dim_line, "DIMENSION")?;
    let (cap_s, cap_line) = get("CAPACITY").ok_or_else(|| perr(end, "missing CAPACITY"))?;
    let capacity: u32 = parse_num(cap_s, *cap_line, "CAPACITY")?;
    let (ew, ew_line) = get("EDGE_WEIGHT_TYPE").ok_or_else(|| perr(end, "missing EDGE_WEIGHT_TYPE"))?;
    if !ew.eq_ignore_ascii_case("EUC_2D") {
        return Err(perr(*ew_line, format!("unsupported EDGE_WEIGHT_TYPE {ew}")));
    }
    if let Some((ty, line)) = get("TYPE") {
        if !ty.eq_ignore_ascii_case("CVRP") {
            return Err(perr(*line, format!("unsupported TYPE {ty}")));
        }
    }
    if !seen.0 {
        return Err(perr(end, "missing NODE_COORD_SECTION"));
    }
    if !seen.1 {
        return Err(perr(end, "missing DEMAND_SECTION"));
    }
    if !seen.2 {
        return Err(perr(end, "missing DEPOT_SECTION"));
    }
    if dimension < 2 {
        return Err(perr(*dim_line, "DIMENSION must be at least 2"));
    }
    if capacity == 0 {
        return Err(perr(*cap_line, "CAPACITY must be positive"));
    }
    if coords.len() != dimension || coords.keys().next() != Some(&1) || coords.keys().last() != Some(&dimension) {
        return Err(perr(end, format!("expected coordinates for nodes 1..={dimension}, got {}", coords.len())));
    }
    if demands.len() != dimension || demands.keys().any(|k| !coords.contains_key(k)) {
        return Err(perr(end, format!("expected demands for nodes 1..={dimension}, got {}", demands.len())));
    }
    let depot = match depots.as_slice() {
        [d] if coords.contains_key(d) => *d,
        [d] => return Err(perr(end, format!("depot {d} is not a node"))),
        [] => return Err(perr(end, "DEPOT_SECTION lists no depot")),
        _ => return Err(perr(end, "multiple depots are not supported")),
    };
    let (depot_demand, ddl) = demands[&depot];
    if depot_demand != 0 {
        return Err(perr(ddl, "depot demand must be 0"));
    }
    for (id, &(d, line)) in &demands {
        if d > capacity {
            return Err(perr(line, format!("demand {d} of node {id} exceeds capacity {capacity}")));
        }
    }

    let order: Vec<usize> = std::iter::once(depot).chain(coords.keys().copied().filter(|&k| k != depot)).collect();
    let name = get("NAME").map(|(v, _)| v.clone()).unwrap_or_else(|| "cvrplib".into());
    let inst = Instance {
        problem: Problem::Cvrp,
        id: name,
        coords: order.iter().map(|k| coords[k].0).collect(),
        demands: Some(order.iter().map(|k| demands[k].0).collect()),
        capacity: Some(capacity),
        unit_scale: 1.0,
    };
    inst.validate()?;
    Ok(inst)
}

/// Writes a CVRP instance in `.vrp` form with the depot as node 1.
pub fn write_cvrplib(inst: &Instance) -> Result<String> {
    if inst.problem != Problem::Cvrp {
        return Err(Error::Argument("only CVRP instances can be written as .vrp".into()));
    }
    inst.validate()?;
    let mut s = String::new();
    let _ = writeln!(s, "NAME : {}", inst.id);
    let _ = writeln!(s, "TYPE : CVRP");
    let _ = writeln!(s, "DIMENSION : {}", inst.len());
    let _ = writeln!(s, "EDGE_WEIGHT_TYPE : EUC_2D");
    let _ = writeln!(s, "CAPACITY : {}", inst.capacity());
    let _ = writeln!(s, "NODE_COORD_SECTION");
    for (i, c) in inst.coords.iter().enumerate() {
        let _ = writeln!(s, "{} {} {}", i + 1, c[0], c[1]);
    }
    let _ = writeln!(s, "DEMAND_SECTION");
    for i in 0..inst.len() {
        let _ = writeln!(s, "{} {}", i + 1, inst.demand(i));
    }
    let _ = writeln!(s, "DEPOT_SECTION\n1\n-1\nEOF");
    Ok(s)
}

/// Maps coordinates into the unit square by the bounding square (one factor
/// for both axes), so lengths scale uniformly. The factor is folded into
/// `unit_scale`.
pub fn scale_cvrplib(inst: &Instance) -> Result<Instance> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for c in &inst.coords {
        for a in 0..2 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    if !(extent > 0.0) {
        return Err(Error::Argument(format!("{}: all nodes coincide", inst.id)));
    }
    let coords = inst
        .coords
        .iter()
        .map(|c| [((c[0] - lo[0]) / extent).clamp(0.0, 1.0), ((c[1] - lo[1]) / extent).clamp(0.0, 1.0)])
        .collect();
    Ok(Instance {
        coords,
        unit_scale: inst.unit_scale * extent,
        ..inst.clone()
    })
}

/// Reads the objective from a CVRPLib `.sol` file (`Cost <value>` line).
pub fn parse_solution_cost(text: &str) -> Result<f64> {
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix("Cost").or_else(|| t.strip_prefix("cost")) {
            return parse_num(rest.trim_start_matches(':').trim(), i + 1, "cost");
        }
    }
    Err(perr(text.lines().count().max(1), "no Cost line"))
}
