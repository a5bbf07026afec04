//! Reader and writer for the line-oriented MATPOWER case subset.
//!
//! Recognised assignments are `baseMVA`, `bus`, `gen` and `branch`, with or
//! without the `mpc.` prefix. Other matrices (`gencost`, `areas`, ...) and
//! cell arrays are skipped. `%` starts a comment.

use std::fmt::Write as _;

use super::{Branch, Bus, BusKind, Generator, NetworkCase};
use crate::error::{Error, Result};

const BUS_COLS: usize = 10;
const GEN_COLS: usize = 8;
const BRANCH_COLS: usize = 11;

struct Row {
    line: usize,
    values: Vec<f64>,
}

#[derive(Default)]
struct Sections {
    name: Option<String>,
    base_mva: Option<f64>,
    bus: Option<Vec<Row>>,
    gen: Option<Vec<Row>>,
    branch: Option<Vec<Row>>,
}

enum Block {
    None,
    Matrix { name: String, rows: Vec<Row> },
    Cell,
}

fn syntax(line: usize, message: impl Into<String>) -> Error {
    Error::CaseSyntax {
        line,
        message: message.into(),
    }
}

/// Parses case-file text into a validated [`NetworkCase`].
pub fn parse_case(text: &str) -> Result<NetworkCase> {
    let sections = scan(text)?;
    build(sections)
}

fn scan(text: &str) -> Result<Sections> {
    let mut out = Sections::default();
    let mut block = Block::None;

    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = match raw.find('%') {
            Some(p) => &raw[..p],
            None => raw,
        };

        match &mut block {
            Block::Cell => {
                if line.contains('}') {
                    block = Block::None;
                }
                continue;
            }
            Block::Matrix { rows, .. } => {
                let (body, closed) = match line.find(']') {
                    Some(p) => (&line[..p], true),
                    None => (line, false),
                };
                push_rows(rows, body, line_no)?;
                if closed {
                    let Block::Matrix { name, rows } = std::mem::replace(&mut block, Block::None) else {
                        unreachable!()
                    };
                    store(&mut out, name, rows, line_no)?;
                }
                continue;
            }
            Block::None => {}
        }

        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("function") {
            if let Some((_, name)) = rest.split_once('=') {
                out.name = Some(name.trim().trim_end_matches(';').to_string());
            }
            continue;
        }
        let Some((lhs, rhs)) = trimmed.split_once('=') else {
            return Err(syntax(line_no, format!("expected an assignment, found `{trimmed}`")));
        };
        let name = lhs.trim();
        let name = name.strip_prefix("mpc.").unwrap_or(name).to_string();
        let rhs = rhs.trim();

        if let Some(body) = rhs.strip_prefix('[') {
            let mut rows = Vec::new();
            match body.find(']') {
                Some(p) => {
                    push_rows(&mut rows, &body[..p], line_no)?;
                    store(&mut out, name, rows, line_no)?;
                }
                None => {
                    push_rows(&mut rows, body, line_no)?;
                    block = Block::Matrix { name, rows };
                }
            }
        } else if rhs.starts_with('{') {
            if !rhs.contains('}') {
                block = Block::Cell;
            }
        } else if name == "baseMVA" {
            let value = rhs.trim_end_matches(';').trim();
            let v: f64 = value
                .parse()
                .map_err(|_| syntax(line_no, format!("baseMVA: `{value}` is not a number")))?;
            out.base_mva = Some(v);
        }
    }

    if let Block::Matrix { name, .. } = block {
        return Err(syntax(
            text.lines().count(),
            format!("matrix `{name}` is not closed with `]`"),
        ));
    }
    Ok(out)
}

fn push_rows(rows: &mut Vec<Row>, body: &str, line: usize) -> Result<()> {
    for chunk in body.split(';') {
        let mut values = Vec::new();
        for tok in chunk.split(|c: char| c.is_whitespace() || c == ',') {
            if tok.is_empty() {
                continue;
            }
            let v: f64 = tok
                .parse()
                .map_err(|_| syntax(line, format!("`{tok}` is not a number")))?;
            values.push(v);
        }
        if !values.is_empty() {
            rows.push(Row { line, values });
        }
    }
    Ok(())
}

fn store(out: &mut Sections, name: String, rows: Vec<Row>, line: usize) -> Result<()> {
    let (slot, min_cols) = match name.as_str() {
        "bus" => (&mut out.bus, BUS_COLS),
        "gen" => (&mut out.gen, GEN_COLS),
        "branch" => (&mut out.branch, BRANCH_COLS),
        _ => return Ok(()),
    };
    if slot.is_some() {
        return Err(syntax(line, format!("`{name}` defined twice")));
    }
    if let Some(short) = rows.iter().find(|r| r.values.len() < min_cols) {
        return Err(syntax(
            short.line,
            format!(
                "`{name}` row has {} columns, at least {min_cols} required",
                short.values.len()
            ),
        ));
    }
    *slot = Some(rows);
    Ok(())
}

fn flag(v: f64, line: usize, what: &str) -> Result<bool> {
    if v == 0.0 {
        Ok(false)
    } else if v == 1.0 {
        Ok(true)
    } else {
        Err(syntax(line, format!("{what} status must be 0 or 1, got {v}")))
    }
}

fn bus_id(v: f64, line: usize) -> Result<u32> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as u32)
    } else {
        Err(syntax(line, format!("`{v}` is not a valid bus number")))
    }
}

fn build(s: Sections) -> Result<NetworkCase> {
    let base = s
        .base_mva
        .ok_or_else(|| Error::CaseSemantic("missing baseMVA".into()))?;
    let bus_rows = s.bus.ok_or_else(|| Error::CaseSemantic("missing bus matrix".into()))?;
    let branch_rows = s
        .branch
        .ok_or_else(|| Error::CaseSemantic("missing branch matrix".into()))?;
    let gen_rows = s.gen.unwrap_or_default();

    let mut buses = Vec::with_capacity(bus_rows.len());
    for row in &bus_rows {
        let v = &row.values;
        let id = bus_id(v[0], row.line)?;
        let kind = BusKind::from_code(v[1]).ok_or_else(|| {
            syntax(
                row.line,
                format!("bus {id}: unsupported bus type {} (expected 1, 2 or 3)", v[1]),
            )
        })?;
        buses.push(Bus {
            id,
            kind,
            pd: v[2],
            qd: v[3],
            gs: v[4],
            bs: v[5],
            vm: v[7],
            va: v[8],
            base_kv: v[9],
        });
    }

    let mut generators = Vec::with_capacity(gen_rows.len());
    for row in &gen_rows {
        let v = &row.values;
        generators.push(Generator {
            bus: bus_id(v[0], row.line)?,
            pg: v[1],
            qg: v[2],
            qmax: v[3],
            qmin: v[4],
            vg: v[5],
            in_service: flag(v[7], row.line, "generator")?,
        });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for row in &branch_rows {
        let v = &row.values;
        branches.push(Branch {
            from: bus_id(v[0], row.line)?,
            to: bus_id(v[1], row.line)?,
            r: v[2],
            x: v[3],
            b: v[4],
            tap: v[8],
            shift: v[9],
            in_service: flag(v[10], row.line, "branch")?,
        });
    }

    NetworkCase::new(
        s.name.unwrap_or_else(|| "case".to_string()),
        base,
        buses,
        branches,
        generators,
    )
}

pub(super) fn write_case(case: &NetworkCase) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "function mpc = {}", case.name);
    let _ = writeln!(out, "mpc.version = '2';");
    let _ = writeln!(out, "mpc.baseMVA = {};", case.mva_base);
    let _ = writeln!(out);
    let _ = writeln!(out, "%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin");
    let _ = writeln!(out, "mpc.bus = [");
    for b in &case.buses {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t1\t{}\t{}\t{}\t1\t1.1\t0.9;",
            b.id,
            b.kind.code(),
            b.pd,
            b.qd,
            b.gs,
            b.bs,
            b.vm,
            b.va,
            b.base_kv
        );
    }
    let _ = writeln!(out, "];");
    let _ = writeln!(out);
    let _ = writeln!(out, "%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin");
    let _ = writeln!(out, "mpc.gen = [");
    for g in &case.generators {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t0\t0;",
            g.bus,
            g.pg,
            g.qg,
            g.qmax,
            g.qmin,
            g.vg,
            case.mva_base,
            u8::from(g.in_service)
        );
    }
    let _ = writeln!(out, "];");
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "%% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax"
    );
    let _ = writeln!(out, "mpc.branch = [");
    for br in &case.branches {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t0\t0\t0\t{}\t{}\t{}\t-360\t360;",
            br.from,
            br.to,
            br.r,
            br.x,
            br.b,
            br.tap,
            br.shift,
            u8::from(br.in_service)
        );
    }
    let _ = writeln!(out, "];");
    out
}
