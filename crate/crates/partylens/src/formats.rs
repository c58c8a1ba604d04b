// SPDX-License-Identifier: MIT OR Apache-2.0

//! On-disk artifact formats.
//!
//! CSV artifacts open with a comment line `# partylens-v1 config_hash=<hex>`;
//! JSON artifacts carry a top-level `config_hash` key. Readers compare the
//! stored hash with the live one.

use std::fmt;
use std::fs;
use std::path::Path;

use partylens_core::corpus::StatementRow;
use partylens_core::model::Vocab;
use partylens_core::persona::{Persona, PersonaGrid, PromptVariant, SurveyRow};
use partylens_core::scaling::ScalingRecord;
use serde::de::{DeserializeOwned, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::{CliError, Result};

pub const CSV_SCHEMA: &str = "partylens-v1";

fn check_hash(path: &Path, found: &str, live: Option<&str>) -> Result<()> {
    match live {
        Some(live) if live != found => Err(CliError::HashMismatch {
            path: path.display().to_string(),
            found: found.into(),
            live: live.into(),
        }),
        _ => Ok(()),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingArtifact(path.display().to_string()),
        _ => CliError::Io(e),
    })
}

/// Writes a CSV artifact with the hash comment line. `hash = None` writes a
/// plain CSV (for user-facing input files).
pub fn write_csv<I, R>(path: &Path, hash: Option<&str>, headers: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut buf = Vec::new();
    if let Some(h) = hash {
        buf.extend_from_slice(format!("# {CSV_SCHEMA} config_hash={h}\n").as_bytes());
    }
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut buf);
        w.write_record(headers)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Parsed CSV: the stored hash (if any), header names and records.
pub struct CsvTable {
    pub hash: Option<String>,
    pub headers: Vec<String>,
    pub rows: Vec<csv::StringRecord>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn require(&self, path: &Path, name: &str) -> Result<usize> {
        self.column(name)
            .ok_or_else(|| CliError::bad(path.display(), format!("missing column `{name}`")))
    }
}

pub fn read_csv(path: &Path, live: Option<&str>) -> Result<CsvTable> {
    let text = read_text(path)?;
    let (hash, body) = match text.strip_prefix('#') {
        Some(rest) => {
            let (line, body) = rest.split_once('\n').unwrap_or((rest, ""));
            let hash = line
                .split_whitespace()
                .find_map(|w| w.strip_prefix("config_hash="))
                .map(str::to_string);
            (hash, body)
        }
        None => (None, text.as_str()),
    };
    if let Some(h) = &hash {
        check_hash(path, h, live)?;
    } else if live.is_some() {
        return Err(CliError::bad(path.display(), "no config_hash header line"));
    }
    let mut r = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let headers = r.headers()?.iter().map(str::to_string).collect();
    let rows = r.records().collect::<std::result::Result<_, _>>()?;
    Ok(CsvTable { hash, headers, rows })
}

/// Pretty JSON with sorted keys, the hash inserted at the top level.
pub fn write_json<T: Serialize>(path: &Path, hash: &str, value: &T) -> Result<()> {
    let v = serde_json::to_value(value)?;
    let v = match v {
        Value::Object(mut m) => {
            m.insert("config_hash".into(), Value::String(hash.into()));
            Value::Object(m)
        }
        other => serde_json::json!({ "config_hash": hash, "data": other }),
    };
    write_plain_json(path, &v)
}

pub fn write_plain_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path, live: Option<&str>) -> Result<T> {
    let text = read_text(path)?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| CliError::bad(path.display(), e))?;
    let obj = v
        .as_object_mut()
        .ok_or_else(|| CliError::bad(path.display(), "not a JSON object"))?;
    let found = match obj.remove("config_hash") {
        Some(Value::String(h)) => h,
        _ => return Err(CliError::bad(path.display(), "missing config_hash")),
    };
    check_hash(path, &found, live)?;
    let v = match obj.remove("data") {
        Some(inner) if obj.is_empty() => inner,
        Some(inner) => {
            obj.insert("data".into(), inner);
            v
        }
        None => v,
    };
    serde_json::from_value(v).map_err(|e| CliError::bad(path.display(), e))
}

pub fn read_plain_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::bad(path.display(), e))
}

/// One token per line; the id is the line number.
pub fn write_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    let mut s = vocab.tokens().join("\n");
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = read_text(path)?;
    Ok(Vocab::new(text.lines().map(str::to_string).collect())?)
}

/// Grid JSON `{variable: [values...]}`, key order significant.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFile(pub Vec<(String, Vec<String>)>);

impl Serialize for GridFile {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for GridFile {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = GridFile;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object of variable -> value list")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<GridFile, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Vec<String>>()? {
                    out.push((k, v));
                }
                Ok(GridFile(out))
            }
        }
        d.deserialize_map(V)
    }
}

pub fn read_grid(path: &Path) -> Result<PersonaGrid> {
    let text = read_text(path)?;
    let g: GridFile = serde_json::from_str(&text).map_err(|e| CliError::bad(path.display(), e))?;
    Ok(PersonaGrid::new(g.0)?)
}

pub fn write_grid(path: &Path, grid: &PersonaGrid) -> Result<()> {
    write_plain_json(path, &GridFile(grid.variables().to_vec()))
}

pub fn read_variants(path: &Path) -> Result<Vec<PromptVariant>> {
    let v: Vec<PromptVariant> = read_plain_json(path)?;
    if v.is_empty() {
        return Err(CliError::bad(path.display(), "no prompt variants"));
    }
    Ok(v)
}

pub fn write_corpus(path: &Path, hash: Option<&str>, rows: &[StatementRow]) -> Result<()> {
    write_csv(
        path,
        hash,
        &["party", "statement", "opinion"],
        rows.iter().map(|r| [&r.party, &r.statement, &r.opinion]),
    )
}

pub fn read_corpus(path: &Path, live: Option<&str>) -> Result<Vec<StatementRow>> {
    let t = read_csv(path, live)?;
    let (p, s, o) = (
        t.require(path, "party")?,
        t.require(path, "statement")?,
        t.require(path, "opinion")?,
    );
    Ok(t.rows
        .iter()
        .map(|r| StatementRow {
            party: r[p].to_string(),
            statement: r[s].to_string(),
            opinion: r[o].to_string(),
        })
        .collect())
}

/// Survey CSV: one column per grid variable, `weight`, optional `vote`.
pub fn read_survey(path: &Path, grid: &PersonaGrid) -> Result<Vec<SurveyRow>> {
    let t = read_csv(path, None)?;
    let cols: Vec<usize> = grid
        .variables()
        .iter()
        .map(|(name, _)| t.require(path, name))
        .collect::<Result<_>>()?;
    let w = t.require(path, "weight")?;
    let vote = t.column("vote");
    t.rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let weight: f64 = r[w]
                .trim()
                .parse()
                .map_err(|_| CliError::bad(path.display(), format!("row {}: bad weight `{}`", i + 1, &r[w])))?;
            Ok(SurveyRow {
                values: cols.iter().map(|&c| r[c].to_string()).collect(),
                weight,
                vote: vote.map(|c| r[c].trim().to_string()).filter(|v| !v.is_empty()),
            })
        })
        .collect()
}

pub fn write_personas(path: &Path, hash: &str, grid: &PersonaGrid, personas: &[Persona]) -> Result<()> {
    let mut headers = vec!["persona_id", "weight"];
    headers.extend(grid.variables().iter().map(|(n, _)| n.as_str()));
    write_csv(
        path,
        Some(hash),
        &headers,
        personas.iter().map(|p| {
            let mut row = vec![p.id.to_string(), p.weight.to_string()];
            row.extend((0..grid.variables().len()).map(|v| p.value(grid, v).to_string()));
            row
        }),
    )
}

pub fn read_personas(path: &Path, live: Option<&str>, grid: &PersonaGrid) -> Result<Vec<Persona>> {
    let t = read_csv(path, live)?;
    let (id, w) = (t.require(path, "persona_id")?, t.require(path, "weight")?);
    let bad = |e: &dyn fmt::Display| CliError::bad(path.display(), e);
    t.rows
        .iter()
        .map(|r| {
            let pid: usize = r[id].parse().map_err(|e| bad(&e))?;
            if pid >= grid.size() {
                return Err(bad(&format!("persona id {pid} outside the grid")));
            }
            let mut p = grid.persona(pid);
            p.weight = r[w].parse().map_err(|e| bad(&e))?;
            Ok(p)
        })
        .collect()
}

pub const RECORD_HEADERS: [&str; 4] = ["persona_id", "variant_id", "party", "m"];

pub fn write_records(path: &Path, hash: &str, parties: &[String], records: &[ScalingRecord]) -> Result<()> {
    let raw_len = records
        .iter()
        .filter_map(|r| r.raw.as_ref().map(Vec::len))
        .max()
        .unwrap_or(0);
    let mut headers: Vec<String> = RECORD_HEADERS.iter().map(|s| s.to_string()).collect();
    headers.extend((0..raw_len).map(|i| format!("raw_{i}")));
    let headers: Vec<&str> = headers.iter().map(String::as_str).collect();
    write_csv(
        path,
        Some(hash),
        &headers,
        records.iter().map(|r| {
            let mut row = vec![
                r.persona.to_string(),
                r.variant.to_string(),
                parties[r.party].clone(),
                r.m.to_string(),
            ];
            let raw = r.raw.as_deref().unwrap_or(&[]);
            row.extend((0..raw_len).map(|i| raw.get(i).map_or_else(String::new, f64::to_string)));
            row
        }),
    )
}

pub fn read_records(path: &Path, live: Option<&str>, parties: &[String]) -> Result<Vec<ScalingRecord>> {
    let t = read_csv(path, live)?;
    let cols: Vec<usize> = RECORD_HEADERS
        .iter()
        .map(|h| t.require(path, h))
        .collect::<Result<_>>()?;
    let bad = |e: &dyn fmt::Display| CliError::bad(path.display(), e);
    t.rows
        .iter()
        .map(|r| {
            Ok(ScalingRecord {
                persona: r[cols[0]].parse().map_err(|e| bad(&e))?,
                variant: r[cols[1]].parse().map_err(|e| bad(&e))?,
                party: parties
                    .iter()
                    .position(|p| *p == r[cols[2]])
                    .ok_or_else(|| bad(&format!("unknown party `{}`", &r[cols[2]])))?,
                m: r[cols[3]].parse().map_err(|e| bad(&e))?,
                raw: None,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_file_keeps_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("grid.json");
        fs::write(&p, r#"{"zeta": ["b", "a"], "alpha": ["x"]}"#).unwrap();
        let g = read_grid(&p).unwrap();
        assert_eq!(g.variables()[0].0, "zeta");
        write_grid(&p, &g).unwrap();
        assert_eq!(read_grid(&p).unwrap(), g);
    }

    #[test]
    fn json_hash_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_json(&p, "aa", &vec![1, 2]).unwrap();
        assert_eq!(read_json::<Vec<i32>>(&p, Some("aa")).unwrap(), vec![1, 2]);
        assert!(matches!(
            read_json::<Vec<i32>>(&p, Some("bb")),
            Err(CliError::HashMismatch { .. })
        ));
    }

    #[test]
    fn csv_hash_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_csv(&p, Some("ff"), &["a", "b"], [["1", "x,y"]]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# partylens-v1 config_hash=ff\na,b\n1,\"x,y\"\n"));
        let t = read_csv(&p, Some("ff")).unwrap();
        assert_eq!(&t.rows[0][1], "x,y");
        assert!(read_csv(&p, Some("00")).is_err());
    }
}
