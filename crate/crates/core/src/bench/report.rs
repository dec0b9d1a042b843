//! Report assembly: CSV tables, a Markdown summary and SVG line plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    fn to_markdown(&self) -> String {
        let mut out = format!("| {} |\n|{}\n", self.header.join(" | "), "---|".repeat(self.header.len()));
        for r in &self.rows {
            let _ = writeln!(out, "| {} |", r.join(" | "));
        }
        out
    }

    /// Column values parsed as numbers; unparsable cells are skipped.
    pub fn column(&self, name: &str) -> Vec<f64> {
        match self.header.iter().position(|h| h == name) {
            Some(i) => self.rows.iter().filter_map(|r| r[i].parse().ok()).collect(),
            None => Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// Reported for context only.
    Info,
}

/// One line of the summary: what the paper reports, what the desk run measured.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub metric: String,
    pub paper: String,
    pub desk: String,
    pub tolerance: String,
    pub verdict: Verdict,
}

impl SummaryRow {
    pub fn check(metric: &str, paper: &str, desk: f64, tolerance: &str, ok: bool) -> Self {
        Self {
            metric: metric.into(),
            paper: paper.into(),
            desk: format!("{desk:.4}"),
            tolerance: tolerance.into(),
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        }
    }

    pub fn info(metric: &str, paper: &str, desk: String) -> Self {
        Self {
            metric: metric.into(),
            paper: paper.into(),
            desk,
            tolerance: "-".into(),
            verdict: Verdict::Info,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
        }
    }

    pub fn add(&mut self, label: impl Into<String>, points: Vec<(f64, f64)>) {
        self.series.push(Series {
            label: label.into(),
            points,
        });
    }

    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0, 400.0, 50.0);
        let pts = self.series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
        let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n\
             <line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
             <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>\n\
             <text x=\"{pad}\" y=\"{}\" text-anchor=\"middle\">{x0:.3}</text>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x1:.3}</text>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y0:.3}</text>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y1:.3}</text>\n",
            w / 2.0,
            escape(&self.title),
            h - pad,
            w - pad,
            h - pad,
            h - pad,
            w / 2.0,
            h - 12.0,
            escape(&self.x_label),
            h / 2.0,
            h / 2.0,
            escape(&self.y_label),
            h - pad + 15.0,
            w - pad,
            h - pad + 15.0,
            pad - 4.0,
            h - pad,
            pad - 4.0,
            pad + 4.0,
        );
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let path: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
            let _ = writeln!(
                svg,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
                path.join(" ")
            );
            let ly = pad + 16.0 * i as f64;
            let _ = writeln!(
                svg,
                "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/><text x=\"{}\" y=\"{}\">{}</text>",
                w - pad - 120.0,
                ly,
                w - pad - 105.0,
                ly + 9.0,
                escape(&s.label)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Everything a scenario produced. Numbers in the tables can be recomputed
/// from the `raw` logs, which hold per-sample predictions.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub notes: Vec<String>,
    pub tables: Vec<(String, Table)>,
    pub summary: Vec<SummaryRow>,
    pub plots: Vec<(String, Plot)>,
    pub raw: Vec<(String, String)>,
    /// Stage failures; a report with any is partial.
    pub failures: Vec<String>,
}

impl Report {
    pub fn new(scenario: &str) -> Self {
        Self {
            scenario: scenario.into(),
            ..Self::default()
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn all_checks_pass(&self) -> bool {
        self.summary.iter().all(|r| r.verdict != Verdict::Fail)
    }

    pub fn to_markdown(&self) -> String {
        let mut md = format!("# {} report\n\n", self.scenario);
        if !self.failures.is_empty() {
            md.push_str("**PARTIAL REPORT: some stages failed.**\n\n");
            for f in &self.failures {
                let _ = writeln!(md, "- FAILED: {f}");
            }
            md.push('\n');
        }
        for n in &self.notes {
            let _ = writeln!(md, "> {n}");
        }
        if !self.notes.is_empty() {
            md.push('\n');
        }
        md.push_str("## Summary\n\n| metric | paper | desk | tolerance | verdict |\n|---|---|---|---|---|\n");
        for r in &self.summary {
            let v = match r.verdict {
                Verdict::Pass => "pass",
                Verdict::Fail => "FAIL",
                Verdict::Info => "info",
            };
            let _ = writeln!(md, "| {} | {} | {} | {} | {v} |", r.metric, r.paper, r.desk, r.tolerance);
        }
        for (name, t) in &self.tables {
            let _ = write!(md, "\n## {name}\n\nSource: `tables/{name}.csv`\n\n{}", t.to_markdown());
        }
        if !self.plots.is_empty() {
            md.push_str("\n## Plots\n\n");
            for (name, p) in &self.plots {
                let _ = writeln!(md, "- [{}](plots/{name}.svg)", p.title);
            }
        }
        if !self.raw.is_empty() {
            md.push_str("\n## Raw logs\n\n");
            for (name, _) in &self.raw {
                let _ = writeln!(md, "- `raw/{name}`");
            }
        }
        md
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for sub in ["tables", "plots", "raw"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        for (name, t) in &self.tables {
            fs::write(dir.join("tables").join(format!("{name}.csv")), t.to_csv())?;
        }
        for (name, p) in &self.plots {
            fs::write(dir.join("plots").join(format!("{name}.svg")), p.to_svg())?;
        }
        for (name, body) in &self.raw {
            fs::write(dir.join("raw").join(name), body)?;
        }
        fs::write(dir.join("report.md"), self.to_markdown())?;
        Ok(())
    }
}

/// `mean ± std` with four decimals.
pub fn mean_std(v: &[f64]) -> String {
    format!("{:.4} ± {:.4}", super::pipeline::mean(v), super::pipeline::std(v))
}

pub fn f4(x: f64) -> String {
    format!("{x:.4}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_column_round_trip() {
        let mut t = Table::new(&["seed", "acc"]);
        t.push(vec!["0".into(), "0.5".into()]);
        t.push(vec!["1".into(), "0.75".into()]);
        assert_eq!(t.to_csv(), "seed,acc\n0,0.5\n1,0.75\n");
        assert_eq!(t.column("acc"), vec![0.5, 0.75]);
        assert!(t.column("missing").is_empty());
    }

    #[test]
    fn svg_is_well_formed_for_empty_and_flat_series() {
        let mut p = Plot::new("a < b", "x", "y");
        assert!(p.to_svg().contains("a &lt; b"));
        p.add("flat", vec![(0.0, 1.0), (1.0, 1.0)]);
        let svg = p.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn partial_report_is_marked() {
        let mut r = Report::new("rq1");
        r.failures.push("seed 3: boom".into());
        assert!(r.to_markdown().contains("PARTIAL REPORT"));
        assert!(!r.is_complete());
    }
}
