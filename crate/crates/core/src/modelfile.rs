//! Structured-text model files.
//!
//! Files are TOML documents. Each matrix is a row-major array of rows and
//! mode-indexed matrices are arrays of tables, so `A[i]` is the i-th
//! `[[A]]` block:
//!
//! ```toml
//! [meta]
//! n = 1
//! p = 1
//! s = 1
//! sigma_w = 1.0000000000000000e0
//!
//! [T]
//! data = [[1.0000000000000000e0]]
//!
//! [[A]]
//! data = [[5.0000000000000000e-1]]
//! # ... [[B]], [[Q]], [[R]] likewise
//! ```
//!
//! Floats are written with 17 significant digits so a save/load cycle
//! reproduces every matrix bit for bit. Gain files use the same layout with
//! `[[K]]` blocks, and Riccati or Lyapunov solutions may be written as
//! `[[P]]` blocks.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use toml::{Table, Value};

use crate::error::{MjsError, Result};
use crate::linalg::Mat;
use crate::model::{validate_model, Controller, CostSpec, MjsModel};

/// Formats a float with 17 significant digits in TOML syntax.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

pub fn format_matrix(m: &Mat) -> String {
    let mut out = String::from("[");
    for i in 0..m.nrows() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push('[');
        let row: Vec<String> = (0..m.ncols()).map(|j| format_float(m[(i, j)])).collect();
        out.push_str(&row.join(", "));
        out.push(']');
    }
    out.push(']');
    out
}

/// Appends `[[name]]` blocks, one per matrix.
pub fn write_matrix_list(out: &mut String, name: &str, mats: &[Mat]) {
    for m in mats {
        let _ = writeln!(out, "\n[[{name}]]\ndata = {}", format_matrix(m));
    }
}

fn write_meta(out: &mut String, n: usize, p: usize, s: usize, sigma_w: Option<f64>) {
    let _ = writeln!(out, "[meta]\nn = {n}\np = {p}\ns = {s}");
    if let Some(sw) = sigma_w {
        let _ = writeln!(out, "sigma_w = {}", format_float(sw));
    }
}

pub fn model_to_string(model: &MjsModel, cost: &CostSpec) -> String {
    let mut out = String::from("# Markov jump linear system model\n");
    write_meta(&mut out, model.n, model.p, model.s, Some(cost.sigma_w));
    let _ = writeln!(out, "\n[T]\ndata = {}", format_matrix(&model.t));
    write_matrix_list(&mut out, "A", &model.a);
    write_matrix_list(&mut out, "B", &model.b);
    write_matrix_list(&mut out, "Q", &cost.q);
    write_matrix_list(&mut out, "R", &cost.r);
    out
}

pub fn save_model(model: &MjsModel, cost: &CostSpec, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_string(model, cost))?;
    Ok(())
}

pub fn controller_to_string(k: &Controller) -> String {
    let (p, n) = k.k.first().map(|m| m.shape()).unwrap_or((0, 0));
    let mut out = String::from("# mode-dependent feedback gains\n");
    write_meta(&mut out, n, p, k.k.len(), None);
    write_matrix_list(&mut out, "K", &k.k);
    out
}

pub fn save_controller(k: &Controller, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, controller_to_string(k))?;
    Ok(())
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

pub(crate) fn parse_table(src: &str) -> Result<Table> {
    src.parse::<Table>().map_err(|e| {
        let location = match e.span() {
            Some(span) => format!("line {}", line_of(src, span.start)),
            None => "document".to_string(),
        };
        MjsError::Parse { location, message: e.message().trim().to_string() }
    })
}

fn perr(location: impl Into<String>, message: impl Into<String>) -> MjsError {
    MjsError::Parse { location: location.into(), message: message.into() }
}

fn as_float(v: &Value, loc: &str) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(perr(loc, format!("expected a number, found {}", v.type_str()))),
    }
}

pub(crate) fn get_usize(table: &Table, key: &str, loc: &str) -> Result<usize> {
    match table.get(key) {
        Some(Value::Integer(i)) if *i > 0 => Ok(*i as usize),
        Some(v) => Err(perr(format!("{loc}.{key}"), format!("expected a positive integer, found {v}"))),
        None => Err(perr(loc, format!("missing field `{key}`"))),
    }
}

pub(crate) fn get_float(table: &Table, key: &str, loc: &str) -> Result<f64> {
    table
        .get(key)
        .ok_or_else(|| perr(loc, format!("missing field `{key}`")))
        .and_then(|v| as_float(v, &format!("{loc}.{key}")))
}

fn parse_matrix(v: &Value, loc: &str) -> Result<Mat> {
    let data = match v {
        Value::Table(t) => t.get("data").ok_or_else(|| perr(loc, "missing field `data`"))?,
        other => other,
    };
    let rows = data.as_array().ok_or_else(|| perr(loc, "matrix must be an array of rows"))?;
    if rows.is_empty() {
        return Err(perr(loc, "matrix has no rows"));
    }
    let mut values = Vec::new();
    let mut ncols = None;
    for (i, row) in rows.iter().enumerate() {
        let rloc = format!("{loc}.data[{i}]");
        let row = row.as_array().ok_or_else(|| perr(&rloc, "row must be an array"))?;
        match ncols {
            None => ncols = Some(row.len()),
            Some(c) if c != row.len() => return Err(perr(&rloc, format!("row has {} entries, expected {c}", row.len()))),
            _ => {}
        }
        for (j, x) in row.iter().enumerate() {
            values.push(as_float(x, &format!("{rloc}[{j}]"))?);
        }
    }
    Ok(Mat::from_row_slice(rows.len(), ncols.unwrap_or(0), &values))
}

pub(crate) fn parse_matrix_list(table: &Table, key: &str) -> Result<Vec<Mat>> {
    let list = table.get(key).ok_or_else(|| perr("document", format!("missing section `{key}`")))?;
    let items = list.as_array().ok_or_else(|| perr(key, "expected an array of `[[...]]` blocks"))?;
    items.iter().enumerate().map(|(i, v)| parse_matrix(v, &format!("{key}[{i}]"))).collect()
}

pub(crate) fn meta_table<'a>(table: &'a Table) -> Result<&'a Table> {
    table
        .get("meta")
        .and_then(Value::as_table)
        .ok_or_else(|| perr("document", "missing section `meta`"))
}

/// Parses a model document without consulting the filesystem.
pub fn model_from_str(src: &str) -> Result<(MjsModel, CostSpec)> {
    let table = parse_table(src)?;
    let meta = meta_table(&table)?;
    let n = get_usize(meta, "n", "meta")?;
    let p = get_usize(meta, "p", "meta")?;
    let s = get_usize(meta, "s", "meta")?;
    let sigma_w = get_float(meta, "sigma_w", "meta")?;
    let t = parse_matrix(table.get("T").ok_or_else(|| perr("document", "missing section `T`"))?, "T")?;
    let a = parse_matrix_list(&table, "A")?;
    let b = parse_matrix_list(&table, "B")?;
    let q = parse_matrix_list(&table, "Q")?;
    let r = parse_matrix_list(&table, "R")?;
    let model = MjsModel { n, p, s, a, b, t };
    let cost = CostSpec { q, r, sigma_w };
    let mut report = validate_model(&model);
    report.extend(cost.validate(&model));
    if !report.is_valid() {
        return Err(MjsError::LoadInvalid(report.codes()));
    }
    Ok((model, cost))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(MjsModel, CostSpec)> {
    model_from_str(&fs::read_to_string(path)?)
}

pub fn controller_from_str(src: &str) -> Result<Controller> {
    let table = parse_table(src)?;
    let meta = meta_table(&table)?;
    let n = get_usize(meta, "n", "meta")?;
    let p = get_usize(meta, "p", "meta")?;
    let s = get_usize(meta, "s", "meta")?;
    let k = Controller::new(parse_matrix_list(&table, "K")?);
    k.check_dims(n, p, s)?;
    Ok(k)
}

pub fn load_controller(path: impl AsRef<Path>) -> Result<Controller> {
    controller_from_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"
[meta]
n = 1
p = 1
s = 1
sigma_w = 1.0

[T]
data = [[1.0]]

[[A]]
data = [[0.5]]

[[B]]
data = [[1.0]]

[[Q]]
data = [[1.0]]

[[R]]
data = [[1.0]]
"#;

    #[test]
    fn parses_scalar_document() {
        let (model, cost) = model_from_str(SCALAR).unwrap();
        assert_eq!((model.n, model.p, model.s), (1, 1, 1));
        assert_eq!(model.a[0][(0, 0)], 0.5);
        assert_eq!(cost.sigma_w, 1.0);
    }

    #[test]
    fn missing_t_is_parse_error() {
        let src = SCALAR.replace("[T]\ndata = [[1.0]]", "");
        let err = model_from_str(&src).unwrap_err();
        assert_eq!(err.code(), "PARSE_ERROR");
        assert!(err.to_string().contains("`T`"));
    }

    #[test]
    fn ragged_rows_report_location() {
        let src = SCALAR.replace("data = [[0.5]]", "data = [[0.5], [0.1, 0.2]]");
        let err = model_from_str(&src).unwrap_err();
        assert!(err.to_string().contains("A[0].data[1]"), "{err}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = model_from_str("[meta]\nn = = 2\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn negative_probability_is_load_invalid() {
        let src = SCALAR
            .replace("s = 1", "s = 2")
            .replace("data = [[1.0]]\n\n[[A]]", "data = [[1.1, -0.1], [0.5, 0.5]]\n\n[[A]]")
            .replace("[[A]]\ndata = [[0.5]]", "[[A]]\ndata = [[0.5]]\n\n[[A]]\ndata = [[0.5]]")
            .replace("[[B]]\ndata = [[1.0]]", "[[B]]\ndata = [[1.0]]\n\n[[B]]\ndata = [[1.0]]")
            .replace("[[Q]]\ndata = [[1.0]]", "[[Q]]\ndata = [[1.0]]\n\n[[Q]]\ndata = [[1.0]]")
            .replace("[[R]]\ndata = [[1.0]]", "[[R]]\ndata = [[1.0]]\n\n[[R]]\ndata = [[1.0]]");
        match model_from_str(&src).unwrap_err() {
            MjsError::LoadInvalid(v) => assert!(v.iter().any(|c| c.starts_with("NEGATIVE_PROB")), "{v:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn float_formatting_has_17_digits() {
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(-2.0), "-2.0000000000000000e0");
    }

    #[test]
    fn controller_roundtrip() {
        let k = Controller::new(vec![Mat::from_row_slice(1, 2, &[-0.1, 1.0 / 3.0]); 2]);
        let back = controller_from_str(&controller_to_string(&k)).unwrap();
        assert_eq!(back, k);
    }
}
