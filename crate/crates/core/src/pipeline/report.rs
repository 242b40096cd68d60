//! Registration and pose-error tables, as aligned plain text or CSV.

use std::fmt::Write as _;

use serde::Serialize;

use super::{EvalReport, PipelineError, Summary};

/// One evaluated (dataset, method) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub method: String,
    pub report: EvalReport,
}

fn pair(loc: Option<f64>, ori: Option<f64>) -> String {
    match (loc, ori) {
        (Some(l), Some(o)) => format!("{l:.3}/{o:.3}"),
        _ => "-".to_string(),
    }
}

fn stat(s: &Option<Summary>, f: fn(&Summary) -> f64) -> Option<f64> {
    s.as_ref().map(f)
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:<w$}"))
            .collect();
        out.push_str(line.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("-+-"));
            out.push('\n');
        }
    }
    out
}

/// Both tables: registration rate per dataset, then location/orientation
/// summaries over every registered image of the sets and the mean error of
/// the target images.
pub fn render_text(rows: &[ReportRow]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }

    let mut table1 = vec![std::iter::once("method".to_string())
        .chain(
            datasets
                .iter()
                .flat_map(|d| [format!("{d} #reg./#total"), format!("{d} #reg. rate")]),
        )
        .collect::<Vec<_>>()];
    for m in &methods {
        let mut line = vec![m.to_string()];
        for d in &datasets {
            match rows.iter().find(|r| r.dataset == *d && r.method == *m) {
                Some(r) => {
                    let g = &r.report.registration;
                    line.push(format!("{}/{}", g.registered, g.total));
                    line.push(format!("{:.2}%", 100.0 * g.rate));
                }
                None => line.extend(["-".to_string(), "-".to_string()]),
            }
        }
        table1.push(line);
    }

    let mut table2 = vec![[
        "dataset",
        "method",
        "#reg./#total",
        "min (m/deg)",
        "median (m/deg)",
        "max (m/deg)",
        "mean (m/deg)",
        "target mean (m/deg)",
    ]
    .map(String::from)
    .to_vec()];
    for r in rows {
        let e = &r.report;
        let (l, o) = (&e.set_location, &e.set_orientation_deg);
        table2.push(vec![
            r.dataset.clone(),
            r.method.clone(),
            format!("{}/{}", e.registration.registered, e.registration.total),
            pair(stat(l, |s| s.min), stat(o, |s| s.min)),
            pair(stat(l, |s| s.median), stat(o, |s| s.median)),
            pair(stat(l, |s| s.max), stat(o, |s| s.max)),
            pair(stat(l, |s| s.mean), stat(o, |s| s.mean)),
            pair(
                stat(&e.location, |s| s.mean),
                stat(&e.orientation_deg, |s| s.mean),
            ),
        ]);
    }

    let mut out = String::new();
    let _ = writeln!(out, "Registration rate");
    out.push_str(&aligned(&table1));
    let _ = writeln!(out, "\nLocation / orientation error");
    out.push_str(&aligned(&table2));
    out
}

#[derive(Serialize)]
struct CsvRecord<'a> {
    dataset: &'a str,
    method: &'a str,
    registered: usize,
    total: usize,
    rate: f64,
    location_min: Option<f64>,
    location_median: Option<f64>,
    location_max: Option<f64>,
    location_mean: Option<f64>,
    orientation_min_deg: Option<f64>,
    orientation_median_deg: Option<f64>,
    orientation_max_deg: Option<f64>,
    orientation_mean_deg: Option<f64>,
    target_location_mean: Option<f64>,
    target_orientation_mean_deg: Option<f64>,
}

/// One CSV line per row with the columns of both tables; empty cells where
/// nothing registered.
pub fn render_csv(rows: &[ReportRow]) -> Result<String, PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        let e = &r.report;
        let (l, o) = (&e.set_location, &e.set_orientation_deg);
        w.serialize(CsvRecord {
            dataset: &r.dataset,
            method: &r.method,
            registered: e.registration.registered,
            total: e.registration.total,
            rate: e.registration.rate,
            location_min: stat(l, |s| s.min),
            location_median: stat(l, |s| s.median),
            location_max: stat(l, |s| s.max),
            location_mean: stat(l, |s| s.mean),
            orientation_min_deg: stat(o, |s| s.min),
            orientation_median_deg: stat(o, |s| s.median),
            orientation_max_deg: stat(o, |s| s.max),
            orientation_mean_deg: stat(o, |s| s.mean),
            target_location_mean: stat(&e.location, |s| s.mean),
            target_orientation_mean_deg: stat(&e.orientation_deg, |s| s.mean),
        })
        .map_err(|e| PipelineError::Format(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| PipelineError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| PipelineError::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Registration;

    fn row(dataset: &str, method: &str, registered: usize, total: usize) -> ReportRow {
        let s = Summary {
            min: 1.0,
            median: 2.0,
            max: 3.0,
            mean: 2.0,
        };
        ReportRow {
            dataset: dataset.into(),
            method: method.into(),
            report: EvalReport {
                registration: Registration {
                    registered,
                    total,
                    rate: registered as f64 / total as f64,
                },
                single_image: 0,
                image_set: registered,
                location: Some(s),
                orientation_deg: Some(s),
                set_location: Some(s),
                set_orientation_deg: (registered > 0).then_some(s),
                images: Vec::new(),
                set_images: Vec::new(),
            },
        }
    }

    #[test]
    fn text_tables_have_one_line_per_method_and_row() {
        let rows = [
            row("hall, west", "single", 4, 14),
            row("hall, west", "camset", 14, 14),
        ];
        let text = render_text(&rows);
        assert!(text.contains("4/14"));
        assert!(text.contains("28.57%"));
        assert!(text.contains("100.00%"));
        assert!(text.contains("1.000/1.000"));
        // title, header, rule and two rows per table, one blank line between
        assert_eq!(text.lines().count(), 5 + 1 + 5);
    }

    #[test]
    fn csv_quotes_labels_and_leaves_missing_cells_empty() {
        let rows = [row("hall, west", "single", 0, 14)];
        let csv = render_csv(&rows).unwrap();
        let mut lines = csv.lines();
        assert!(lines
            .next()
            .unwrap()
            .starts_with("dataset,method,registered"));
        let line = lines.next().unwrap();
        assert!(line.starts_with("\"hall, west\",single,0,14,0.0,"));
        assert!(line.contains(",,"));
    }
}
