//! Text formats for schemas and datasets.
//!
//! * schema: tab-separated, header `name kind levels`; `kind` is `c`
//!   (continuous) or `d` (categorical), `levels` is empty for `c`.
//! * data: comma-separated, header = variable names plus a `group` column;
//!   categorical cells are 1-based level indices, `group` is 1 or 2.

use std::io::{Read, Write};

use ndarray::Array2;

use super::dataset::{Group, MixedDataset};
use super::schema::{Variable, VariableKind, VariableSchema};
use crate::error::{Error, Result};

pub fn read_schema<R: Read>(reader: R) -> Result<VariableSchema> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').flexible(true).has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (name_col, kind_col) = (col("name")?, col("kind")?);
    let levels_col = headers.iter().position(|h| h.trim() == "levels");
    if let Some(extra) = headers.iter().find(|h| !matches!(h.trim(), "name" | "kind" | "levels")) {
        return Err(Error::UnknownColumn(extra.to_string()));
    }
    let mut entries = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let field = |c: usize| rec.get(c).map(str::trim).unwrap_or("");
        let name = field(name_col).to_string();
        let levels = levels_col.map(field).unwrap_or("");
        let kind = match field(kind_col) {
            "c" => {
                if !levels.is_empty() {
                    return Err(Error::Schema(format!(
                        "row {row}: continuous variable `{name}` must not declare levels"
                    )));
                }
                VariableKind::Continuous
            }
            "d" => {
                let levels = levels.parse::<usize>().map_err(|_| Error::ParseValue {
                    row,
                    column: "levels".into(),
                    value: levels.to_string(),
                })?;
                VariableKind::Categorical { levels }
            }
            other => {
                return Err(Error::MalformedRow { row, reason: format!("kind must be `c` or `d`, got `{other}`") })
            }
        };
        entries.push(Variable { name, kind });
    }
    VariableSchema::new(entries)
}

pub fn write_schema<W: Write>(writer: W, schema: &VariableSchema) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(writer);
    w.write_record(["name", "kind", "levels"])?;
    for v in schema.entries() {
        match v.kind {
            VariableKind::Continuous => w.write_record([v.name.as_str(), "c", ""])?,
            VariableKind::Categorical { levels } => w.write_record([v.name.as_str(), "d", &levels.to_string()])?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset and standardizes its continuous columns.
pub fn load_dataset<D: Read, S: Read>(data: D, schema: S) -> Result<MixedDataset> {
    load_dataset_raw(data, read_schema(schema)?)?.standardized()
}

/// Reads a dataset as stored, without standardization.
pub fn load_dataset_raw<D: Read>(data: D, schema: VariableSchema) -> Result<MixedDataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).has_headers(true).from_reader(data);
    let headers = rdr.headers()?.clone();

    // column -> model-order variable index, or None for the group column
    let mut targets = Vec::with_capacity(headers.len());
    let mut seen = vec![false; schema.n_vars()];
    let mut group_col = None;
    for (c, h) in headers.iter().enumerate() {
        let h = h.trim();
        if h == "group" {
            if group_col.replace(c).is_some() {
                return Err(Error::Schema("duplicate `group` column".into()));
            }
            targets.push(None);
            continue;
        }
        let idx = schema.index_of(h).ok_or_else(|| Error::UnknownColumn(h.to_string()))?;
        if std::mem::replace(&mut seen[idx], true) {
            return Err(Error::Schema(format!("duplicate column `{h}`")));
        }
        targets.push(Some(idx));
    }
    if group_col.is_none() {
        return Err(Error::MissingColumn("group".into()));
    }
    if let Some(idx) = seen.iter().position(|s| !s) {
        return Err(Error::MissingColumn(schema.name(idx).to_string()));
    }

    let (p, q) = (schema.p(), schema.q());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut groups = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != headers.len() {
            return Err(Error::MalformedRow {
                row,
                reason: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        let mut x = vec![0.0; p];
        let mut y = vec![0usize; q];
        let mut group = None;
        for (c, raw) in rec.iter().enumerate() {
            let value = raw.trim();
            let column = || headers[c].trim().to_string();
            if value.is_empty() || value.eq_ignore_ascii_case("na") || value.eq_ignore_ascii_case("nan") {
                return Err(Error::MissingValue { row, column: column() });
            }
            match targets[c] {
                None => {
                    group = Some(match value {
                        "1" => Group::One,
                        "2" => Group::Two,
                        _ => return Err(Error::BadGroup { row, value: value.to_string() }),
                    })
                }
                Some(idx) if idx < p => {
                    let v = value.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::ParseValue {
                        row,
                        column: column(),
                        value: value.to_string(),
                    })?;
                    x[idx] = v;
                }
                Some(idx) => {
                    let r = idx - p;
                    let levels = schema.levels(r);
                    let level = value.parse::<i64>().map_err(|_| Error::ParseValue {
                        row,
                        column: column(),
                        value: value.to_string(),
                    })?;
                    if level < 1 || level as usize > levels {
                        return Err(Error::LevelOutOfRange { row, column: column(), value: value.to_string(), levels });
                    }
                    y[r] = level as usize - 1;
                }
            }
        }
        xs.extend(x);
        ys.extend(y);
        groups.push(group.expect("group column checked above"));
    }
    let n = groups.len();
    let x = Array2::from_shape_vec((n, p), xs).expect("row-major continuous block");
    let y = Array2::from_shape_vec((n, q), ys).expect("row-major categorical block");
    MixedDataset::new(schema, x, y, groups)
}

/// Writes the dataset on its original scale, columns in declaration order
/// followed by `group`. Values use shortest round-trip formatting.
pub fn write_dataset<W: Write>(writer: W, data: &MixedDataset) -> Result<()> {
    let schema = data.schema();
    let x = data.unstandardized_x();
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = schema.entries().iter().map(|v| v.name.as_str()).collect();
    header.push("group");
    w.write_record(&header)?;
    let order: Vec<usize> = schema.entries().iter().map(|v| schema.index_of(&v.name).expect("schema name")).collect();
    let p = schema.p();
    for i in 0..data.n() {
        let mut rec: Vec<String> = order
            .iter()
            .map(|&idx| if idx < p { x[[i, idx]].to_string() } else { (data.y()[[i, idx - p]] + 1).to_string() })
            .collect();
        rec.push(data.groups()[i].label().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &str = "name\tkind\tlevels\nx1\tc\t\ny1\td\t2\n";

    #[test]
    fn smallest_valid_input() {
        let data = "x1,y1,group\n0.5,1,1\n-0.5,2,2\n";
        let ds = load_dataset(data.as_bytes(), SCHEMA.as_bytes()).unwrap();
        assert_eq!((ds.n(), ds.schema().p(), ds.schema().q()), (2, 1, 1));
        assert_eq!(ds.y()[[1, 0]], 1);
        let sc = ds.scaling().unwrap()[0];
        assert_eq!(sc.mean, 0.0);
        assert!((ds.x()[[0, 0]] - 0.5 / sc.sd).abs() < 1e-15);
    }

    #[test]
    fn load_errors_are_distinct() {
        let schema = || read_schema(SCHEMA.as_bytes()).unwrap();
        let err = |data: &str| load_dataset_raw(data.as_bytes(), schema()).unwrap_err();
        assert!(matches!(err("x1,y1,group\n0.5,3,1\n"), Error::LevelOutOfRange { row: 1, .. }));
        assert!(err("x1,y1,group\n0.5,3,1\n").to_string().contains("level out of range"));
        assert!(matches!(err("x1,y1,group\n0.5,,1\n"), Error::MissingValue { row: 1, .. }));
        assert!(matches!(err("x1,y1,group\n0.5,1,3\n"), Error::BadGroup { row: 1, .. }));
        assert!(matches!(err("x1,y1,group\n0.5,1\n"), Error::MalformedRow { row: 1, .. }));
        assert!(matches!(err("x1,y1,z,group\n0.5,1,1,1\n"), Error::UnknownColumn(_)));
        assert!(matches!(err("x1,y1,group\n1,1,1\nabc,1,2\n"), Error::ParseValue { row: 2, .. }));
        assert!(matches!(err("x1,y1\n1,1\n"), Error::MissingColumn(_)));
    }

    #[test]
    fn schema_round_trip() {
        let s = read_schema(SCHEMA.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_schema(&mut buf, &s).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), SCHEMA);
        assert!(read_schema("name\tkind\tlevels\nx\tc\t3\ny\tc\t\n".as_bytes()).is_err());
        assert!(read_schema("name\tkind\tlevels\tcolor\nx\tc\t\t\ny\tc\t\t\n".as_bytes()).is_err());
    }
}
