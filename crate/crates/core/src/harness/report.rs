//! Per-stage residual records and their CSV / JSON-lines serialization.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "TUBULAR_OUT_DIR";

pub const FIELDS: [&str; 8] = [
    "scenario",
    "stage",
    "sample_count",
    "max_residual",
    "mean_residual",
    "tolerance",
    "pass",
    "runtime_ms",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub scenario: String,
    pub stage: String,
    pub sample_count: usize,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Wall time of the stage; zero unless timing was requested.
    pub runtime_ms: u64,
}

impl ResidualReport {
    /// `pass` is derived as `max_residual ≤ tolerance`.
    pub fn new(
        scenario: &str,
        stage: &str,
        sample_count: usize,
        max_residual: f64,
        mean_residual: f64,
        tolerance: f64,
    ) -> Self {
        Self {
            scenario: scenario.to_string(),
            stage: stage.to_string(),
            sample_count,
            max_residual,
            mean_residual,
            tolerance,
            pass: max_residual <= tolerance,
            runtime_ms: 0,
        }
    }

    /// A stage that could not produce residuals.
    pub fn failed(scenario: &str, stage: &str, tolerance: f64) -> Self {
        Self::new(scenario, stage, 0, f64::INFINITY, f64::INFINITY, tolerance)
    }

    fn values(&self) -> [String; 8] {
        [
            self.scenario.clone(),
            self.stage.clone(),
            self.sample_count.to_string(),
            format_number(self.max_residual),
            format_number(self.mean_residual),
            format_number(self.tolerance),
            self.pass.to_string(),
            self.runtime_ms.to_string(),
        ]
    }
}

/// 17 significant digits in scientific notation.
pub fn format_number(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

fn parse_number(field: &str, s: &str) -> Result<f64> {
    f64::from_str(s.trim()).map_err(|_| Error::Parse(format!("{field}: `{s}` is not a number")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// Comma-separated table with a header row.
    Table,
    /// One JSON object per line.
    Lines,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Table => "csv",
            Format::Lines => "jsonl",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" | "csv" => Ok(Format::Table),
            "lines" | "jsonl" => Ok(Format::Lines),
            other => Err(Error::Parse(format!(
                "unknown format `{other}` (expected table or lines)"
            ))),
        }
    }
}

pub fn to_string(reports: &[ResidualReport], format: Format) -> Result<String> {
    match format {
        Format::Table => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(FIELDS).map_err(csv_error)?;
            for r in reports {
                w.write_record(r.values()).map_err(csv_error)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
        }
        Format::Lines => {
            let mut out = String::new();
            for r in reports {
                let v = r.values();
                // Numbers are written verbatim to keep 17 digits; non-finite ones become strings.
                let number = |s: &str| {
                    if s.parse::<f64>().map(f64::is_finite).unwrap_or(false) {
                        s.to_string()
                    } else {
                        serde_json::to_string(s).expect("strings serialize")
                    }
                };
                out.push_str(&format!(
                    "{{\"scenario\":{},\"stage\":{},\"sample_count\":{},\"max_residual\":{},\"mean_residual\":{},\"tolerance\":{},\"pass\":{},\"runtime_ms\":{}}}\n",
                    serde_json::to_string(&v[0]).expect("strings serialize"),
                    serde_json::to_string(&v[1]).expect("strings serialize"),
                    v[2],
                    number(&v[3]),
                    number(&v[4]),
                    number(&v[5]),
                    v[6],
                    v[7],
                ));
            }
            Ok(out)
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

pub fn parse(text: &str, format: Format) -> Result<Vec<ResidualReport>> {
    match format {
        Format::Table => {
            let mut rdr = csv::Reader::from_reader(text.as_bytes());
            let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
            if header != FIELDS {
                return Err(Error::Parse(format!("unexpected header {header:?}")));
            }
            rdr.records()
                .map(|rec| {
                    let rec = rec.map_err(csv_error)?;
                    let get = |i: usize| rec.get(i).unwrap_or_default().to_string();
                    from_fields(&get(0), &get(1), &get(2), &get(3), &get(4), &get(5), &get(6), &get(7))
                })
                .collect()
        }
        Format::Lines => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let v: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Parse(e.to_string()))?;
                let obj = v
                    .as_object()
                    .ok_or_else(|| Error::Parse("record is not an object".into()))?;
                if obj.len() != FIELDS.len() {
                    return Err(Error::Parse(format!("record has {} fields", obj.len())));
                }
                let field = |name: &str| -> Result<String> {
                    match obj.get(name) {
                        Some(serde_json::Value::String(s)) => Ok(s.clone()),
                        Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
                        Some(serde_json::Value::Bool(b)) => Ok(b.to_string()),
                        _ => Err(Error::Parse(format!("missing field `{name}`"))),
                    }
                };
                let raw = |name: &str| -> Result<String> {
                    // Re-read numbers from the source text so no digits are lost.
                    match obj.get(name) {
                        Some(serde_json::Value::Number(_)) => extract_raw(line, name),
                        _ => field(name),
                    }
                };
                from_fields(
                    &field("scenario")?,
                    &field("stage")?,
                    &field("sample_count")?,
                    &raw("max_residual")?,
                    &raw("mean_residual")?,
                    &raw("tolerance")?,
                    &field("pass")?,
                    &field("runtime_ms")?,
                )
            })
            .collect(),
    }
}

fn extract_raw(line: &str, name: &str) -> Result<String> {
    let key = format!("\"{name}\":");
    let start = line
        .find(&key)
        .ok_or_else(|| Error::Parse(format!("missing field `{name}`")))?
        + key.len();
    let rest = &line[start..];
    let end = rest.find([',', '}']).unwrap_or(rest.len());
    Ok(rest[..end].trim().to_string())
}

#[allow(clippy::too_many_arguments)]
fn from_fields(
    scenario: &str,
    stage: &str,
    count: &str,
    max: &str,
    mean: &str,
    tol: &str,
    pass: &str,
    runtime: &str,
) -> Result<ResidualReport> {
    Ok(ResidualReport {
        scenario: scenario.to_string(),
        stage: stage.to_string(),
        sample_count: count
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("sample_count: `{count}`")))?,
        max_residual: parse_number("max_residual", max)?,
        mean_residual: parse_number("mean_residual", mean)?,
        tolerance: parse_number("tolerance", tol)?,
        pass: pass
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("pass: `{pass}`")))?,
        runtime_ms: runtime
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("runtime_ms: `{runtime}`")))?,
    })
}

/// Writes `reports` to `path`, creating parent directories.
pub fn emit(reports: &[ResidualReport], format: Format, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(to_string(reports, format)?.as_bytes())?;
    Ok(())
}

pub fn read(path: &Path, format: Format) -> Result<Vec<ResidualReport>> {
    parse(&fs::read_to_string(path)?, format)
}

/// `$TUBULAR_OUT_DIR`, else `./tubular-out`.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("tubular-out"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<ResidualReport> {
        let mut a = ResidualReport::new("circle", "diagram", 200, 3.141592653589793e-7, 1.0 / 3.0 * 1e-8, 1e-5);
        a.runtime_ms = 1234;
        let b = ResidualReport::failed("helix, \"odd\"", "euler-like", 1e-5);
        let c = ResidualReport::new("x", "appendix", 1, 0.0, 0.0, 1e-12);
        vec![a, b, c]
    }

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(
            to_string(&[], Format::Table).unwrap(),
            format!("{}\n", FIELDS.join(","))
        );
        assert_eq!(to_string(&[], Format::Lines).unwrap(), "");
    }

    #[test]
    fn one_record_has_all_fields() {
        let text = to_string(&sample()[..1], Format::Lines).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 8);
        for f in FIELDS {
            assert!(keys.iter().any(|k| k == f));
        }
        let table = to_string(&sample()[..1], Format::Table).unwrap();
        assert_eq!(table.lines().count(), 2);
        assert_eq!(table.lines().nth(1).unwrap().split(',').count(), 8);
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(format_number(0.1), "1.0000000000000001e-1");
        assert_eq!(format_number(f64::INFINITY), "inf");
    }

    #[test]
    fn round_trip_both_formats() {
        for format in [Format::Table, Format::Lines] {
            let text = to_string(&sample(), format).unwrap();
            assert_eq!(parse(&text, format).unwrap(), sample());
        }
    }

    #[test]
    fn pass_flag_follows_tolerance() {
        assert!(ResidualReport::new("s", "t", 1, 1e-6, 1e-6, 1e-6).pass);
        assert!(!ResidualReport::new("s", "t", 1, 2e-6, 1e-6, 1e-6).pass);
        assert!(!ResidualReport::new("s", "t", 1, f64::NAN, 1e-6, 1e-6).pass);
    }

    #[test]
    fn emit_and_read_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("r.csv");
        emit(&sample(), Format::Table, &path).unwrap();
        assert_eq!(read(&path, Format::Table).unwrap(), sample());
    }
}
