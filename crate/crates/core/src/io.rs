//! CSV import and export of value fields, policies and jump events.
//!
//! Numbers are written as `{:.16e}` (17 significant digits), which
//! round-trips every `f64` and makes output byte-identical across runs.

use std::fmt::Write as _;

use crate::discounted::FeedbackPolicy;
use crate::error::{Error, Result};
use crate::grid::{Grid, ValueField};
use crate::model::Action;
use crate::simulate::{JumpCause, JumpEvent};

pub const VALUE_HEADER: &str = "location,x,value";
pub const POLICY_HEADER: &str = "location,x,action";
pub const EVENTS_HEADER: &str = "n,t,z,cause";

/// Canonical decimal rendering.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn value_csv(field: &ValueField) -> String {
    let mut out = String::from(VALUE_HEADER);
    out.push('\n');
    for (x, v) in field.grid.nodes().iter().zip(&field.values) {
        writeln!(out, "interior,{},{}", num(*x), num(*v)).unwrap();
    }
    for (z, v) in &field.boundary_values {
        writeln!(out, "boundary,{},{}", num(*z), num(*v)).unwrap();
    }
    out
}

pub fn policy_csv(policy: &FeedbackPolicy) -> String {
    let mut out = String::from(POLICY_HEADER);
    out.push('\n');
    for (x, a) in policy.grid.nodes().iter().zip(&policy.interior) {
        writeln!(out, "interior,{},{}", num(*x), a.0).unwrap();
    }
    for (z, a) in &policy.boundary {
        writeln!(out, "boundary,{},{}", num(*z), a.0).unwrap();
    }
    out
}

pub fn events_csv(events: &[JumpEvent]) -> String {
    let mut out = String::from(EVENTS_HEADER);
    out.push('\n');
    for (n, e) in events.iter().enumerate() {
        let cause = match e.cause {
            JumpCause::Spontaneous => "spontaneous",
            JumpCause::Boundary => "boundary",
        };
        writeln!(out, "{},{},{},{}", n + 1, num(e.time), num(e.post), cause).unwrap();
    }
    out
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("line {line}: {msg}"))
}

/// Splits a three-column CSV with the given header into
/// `(is_boundary, x, third column)` rows.
fn rows<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, bool, f64, &'a str)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => return Err(parse_err(1, format!("expected header `{header}`"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let [loc, x, v] = cols[..] else {
            return Err(parse_err(i + 1, "expected 3 columns"));
        };
        let boundary = match loc {
            "interior" => false,
            "boundary" => true,
            other => return Err(parse_err(i + 1, format!("unknown location `{other}`"))),
        };
        let x: f64 = x.parse().map_err(|e| parse_err(i + 1, e))?;
        out.push((i + 1, boundary, x, v));
    }
    Ok(out)
}

pub fn read_value_csv(text: &str) -> Result<ValueField> {
    let mut nodes = Vec::new();
    let mut values = Vec::new();
    let mut boundary_values = Vec::new();
    for (line, boundary, x, v) in rows(text, VALUE_HEADER)? {
        let v: f64 = v.parse().map_err(|e| parse_err(line, e))?;
        if boundary {
            boundary_values.push((x, v));
        } else {
            nodes.push(x);
            values.push(v);
        }
    }
    let mut field = ValueField::new(Grid::new(nodes)?, values)?;
    field.boundary_values = boundary_values;
    Ok(field)
}

pub fn read_policy_csv(text: &str) -> Result<FeedbackPolicy> {
    let mut nodes = Vec::new();
    let mut interior = Vec::new();
    let mut boundary = Vec::new();
    for (line, is_boundary, x, a) in rows(text, POLICY_HEADER)? {
        let a = Action(a.parse().map_err(|e| parse_err(line, e))?);
        if is_boundary {
            boundary.push((x, a));
        } else {
            nodes.push(x);
            interior.push(a);
        }
    }
    FeedbackPolicy::new(Grid::new(nodes)?, interior, boundary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn value_round_trip_is_exact() {
        let g = Grid::new(vec![0.1, 0.2 + 1e-17, 1.0 / 3.0]).unwrap();
        let mut f = ValueField::new(g, vec![-1.5, 2.0 / 7.0, 1e300]).unwrap();
        f.boundary_values = vec![(1.0, 0.5)];
        let text = value_csv(&f);
        assert!(text.starts_with("location,x,value\ninterior,1.0000000000000001e-1,"));
        let back = read_value_csv(&text).unwrap();
        assert_eq!(back, f);
        assert_eq!(value_csv(&back), text);
    }

    #[test]
    fn policy_round_trip() {
        let g = Grid::new(vec![0.25, 0.75]).unwrap();
        let p = FeedbackPolicy::new(g, vec![Action(1), Action(0)], vec![(1.0, Action(0))]).unwrap();
        let text = policy_csv(&p);
        assert_eq!(read_policy_csv(&text).unwrap(), p);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(read_value_csv("x,value\n"), Err(Error::Parse(_))));
        assert!(matches!(
            read_value_csv("location,x,value\ninterior,0.5\n"),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            read_value_csv("location,x,value\nedge,0.5,1\n"),
            Err(Error::Parse(_))
        ));
        assert!(read_value_csv("location,x,value\ninterior,0.5,nan\n").is_err());
    }

    #[test]
    fn events_are_numbered_from_one() {
        let e = JumpEvent {
            time: 0.5,
            pre: 1.0,
            post: 0.5,
            cause: JumpCause::Boundary,
        };
        assert_eq!(
            events_csv(&[e]),
            "n,t,z,cause\n1,5.0000000000000000e-1,5.0000000000000000e-1,boundary\n"
        );
    }

    proptest! {
        #[test]
        fn num_round_trips(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL) {
            prop_assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }
}
