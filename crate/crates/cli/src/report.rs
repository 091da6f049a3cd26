use std::fmt::Write as _;
use std::path::Path;

use clap::ValueEnum;
use serde_json::json;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    JsonLines,
}

/// One measured quantity. `threshold` and `pass` are absent for plain
/// measurements that gate nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub name: String,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    pub pass: Option<bool>,
}

impl Row {
    pub fn measure(name: impl Into<String>, value: f64) -> Row {
        Row {
            name: name.into(),
            value: Some(value),
            threshold: None,
            pass: None,
        }
    }

    pub fn check(name: impl Into<String>, value: Option<f64>, threshold: f64, pass: bool) -> Row {
        Row {
            name: name.into(),
            value,
            threshold: Some(threshold),
            pass: Some(pass),
        }
    }
}

#[derive(Debug, Default)]
pub struct Report {
    pub rows: Vec<Row>,
}

impl Report {
    pub fn push(&mut self, row: Row) {
        self.rows.push(row);
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass != Some(false))
    }

    pub fn render(&self, format: ReportFormat) -> String {
        let mut out = String::new();
        for r in &self.rows {
            match format {
                ReportFormat::JsonLines => {
                    let line = json!({
                        "name": r.name,
                        "value": r.value.filter(|v| v.is_finite()),
                        "threshold": r.threshold,
                        "pass": r.pass,
                    });
                    writeln!(out, "{line}").unwrap();
                }
                ReportFormat::Text => {
                    let value = r.value.map_or("-".to_string(), fmt_num);
                    let threshold = r
                        .threshold
                        .map_or(String::new(), |t| format!("threshold {}", fmt_num(t)));
                    let verdict = match r.pass {
                        Some(true) => "PASS",
                        Some(false) => "FAIL",
                        None => "",
                    };
                    let line = format!("{:<32} {value:>12}  {threshold:<20} {verdict}", r.name);
                    writeln!(out, "{}", line.trim_end()).unwrap();
                }
            }
        }
        out
    }

    /// Prints to stdout and, if given, also writes to `file`.
    pub fn emit(&self, format: ReportFormat, file: Option<&Path>) -> std::io::Result<()> {
        let text = self.render(format);
        print!("{text}");
        if let Some(path) = file {
            std::fs::write(path, text)?;
        }
        Ok(())
    }
}

fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e9 {
        format!("{v:.0}")
    } else if v.abs() >= 1e-3 && v.abs() < 1e5 {
        format!("{v:.4}")
    } else {
        format!("{v:.3e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_lines_schema() {
        let mut r = Report::default();
        r.push(Row::measure("psnr", 31.5));
        r.push(Row::check("dpw.gradient", None, 1e-4, false));
        let text = r.render(ReportFormat::JsonLines);
        let lines: Vec<serde_json::Value> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        for l in &lines {
            let mut keys: Vec<_> = l.as_object().unwrap().keys().cloned().collect();
            keys.sort();
            assert_eq!(keys, ["name", "pass", "threshold", "value"]);
        }
        assert_eq!(lines[0]["value"], 31.5);
        assert!(lines[0]["pass"].is_null());
        assert!(lines[1]["value"].is_null());
        assert_eq!(lines[1]["pass"], false);
        assert!(!r.all_pass());
    }

    #[test]
    fn text_rows() {
        let mut r = Report::default();
        r.push(Row::check("fig4.l2.area_ratio", Some(0.0), 0.01, true));
        let text = r.render(ReportFormat::Text);
        assert!(text.starts_with("fig4.l2.area_ratio"));
        assert!(text.trim_end().ends_with("PASS"));
        assert!(text.contains("threshold 0.0100"));
    }
}
