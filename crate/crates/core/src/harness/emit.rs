//! Result files: `results.csv`, `validation.csv`, `manifest.json`,
//! `accuracy.svg`, and per-round valuation and selection traces.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::run::ExperimentResult;

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub strategy: String,
    pub seed: u64,
    pub round: usize,
    pub test_accuracy: f64,
    pub n_full: usize,
    pub n_weak: usize,
    pub spent: f64,
    #[serde(rename = "M_full")]
    pub m_full: Option<f64>,
    #[serde(rename = "M_weak")]
    pub m_weak: Option<f64>,
}

pub fn result_rows(results: &[ExperimentResult]) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for result in results {
        let strategy = result.config.strategy.to_string();
        for run in &result.runs {
            for rec in &run.records {
                rows.push(ResultRow {
                    strategy: strategy.clone(),
                    seed: run.seed,
                    round: rec.round,
                    test_accuracy: rec.test_accuracy,
                    n_full: rec.n_full,
                    n_weak: rec.n_weak,
                    spent: rec.spent,
                    m_full: rec.m_full,
                    m_weak: rec.m_weak,
                });
            }
        }
    }
    rows
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// `results.csv` contents as a string.
pub fn results_csv_string(rows: &[ResultRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Input(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let rows = reader
        .deserialize()
        .collect::<std::result::Result<Vec<ResultRow>, _>>()?;
    Ok(rows)
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: &'static str,
    experiments: Vec<&'a ExperimentConfig>,
    seeds: Vec<u64>,
    failures: Vec<Failure>,
}

#[derive(Debug, Serialize)]
struct Failure {
    strategy: String,
    seed: u64,
    error: String,
}

#[derive(Debug, Serialize)]
struct ValidationRow<'a> {
    strategy: &'a str,
    seed: u64,
    round: usize,
    validation_accuracy: f64,
    wall_time: f64,
}

/// Writes every result file under `output_dir`, creating it if needed.
pub fn emit_results(results: &[ExperimentResult], output_dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = result_rows(results);
    if rows.is_empty() {
        return Err(Error::Input("no round records to emit".into()));
    }
    fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    let mut written = Vec::new();

    let path = output_dir.join("results.csv");
    write_results_csv(&path, &rows)?;
    written.push(path);

    let path = output_dir.join("validation.csv");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    for result in results {
        let strategy = result.config.strategy.to_string();
        for run in &result.runs {
            for rec in &run.records {
                writer.serialize(ValidationRow {
                    strategy: &strategy,
                    seed: run.seed,
                    round: rec.round,
                    validation_accuracy: rec.validation_accuracy,
                    wall_time: rec.wall_time,
                })?;
            }
        }
    }
    writer.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let mut seeds: Vec<u64> = results.iter().flat_map(|r| r.config.seeds.iter().copied()).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        experiments: results.iter().map(|r| &r.config).collect(),
        seeds,
        failures: results
            .iter()
            .flat_map(|r| {
                r.runs.iter().filter_map(move |run| {
                    run.error.as_ref().map(|e| Failure {
                        strategy: r.config.strategy.to_string(),
                        seed: run.seed,
                        error: e.clone(),
                    })
                })
            })
            .collect(),
    };
    let path = output_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = output_dir.join("accuracy.svg");
    fs::write(&path, render_accuracy_svg(&rows)).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let rounds_dir = output_dir.join("rounds");
    fs::create_dir_all(&rounds_dir).map_err(|e| Error::io(&rounds_dir, e))?;
    for result in results {
        let strategy = result.config.strategy.to_string().replace(':', "_");
        for run in &result.runs {
            for (rec, art) in run.records.iter().zip(&run.artifacts) {
                let stem = format!("{strategy}_seed{}_round{}", run.seed, rec.round);
                let path = rounds_dir.join(format!("{stem}_trace.csv"));
                art.batch.write_trace_csv(&path)?;
                written.push(path);
                if let Some(report) = &art.valuation {
                    let path = rounds_dir.join(format!("{stem}_valuation.csv"));
                    report.write_csv(&path)?;
                    written.push(path);
                }
            }
        }
    }
    Ok(written)
}

/// Mean and sample standard deviation of test accuracy per round.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSummary {
    pub strategy: String,
    pub rounds: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Groups rows by strategy (first-appearance order) and round.
pub fn summarize(rows: &[ResultRow]) -> Vec<CurveSummary> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for row in rows {
        let idx = match order.iter().position(|s| s == &row.strategy) {
            Some(i) => i,
            None => {
                order.push(row.strategy.clone());
                order.len() - 1
            }
        };
        groups.entry((idx, row.round)).or_default().push(row.test_accuracy);
    }
    order
        .into_iter()
        .enumerate()
        .map(|(idx, strategy)| {
            let mut summary = CurveSummary {
                strategy,
                rounds: Vec::new(),
                mean: Vec::new(),
                std: Vec::new(),
            };
            for ((_, round), values) in groups.range((idx, 0)..(idx + 1, 0)) {
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let var = if values.len() > 1 {
                    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                summary.rounds.push(*round);
                summary.mean.push(mean);
                summary.std.push(var.sqrt());
            }
            summary
        })
        .collect()
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Accuracy-versus-round chart: one polyline per strategy with a shaded
/// ±1 std band.
pub fn render_accuracy_svg(rows: &[ResultRow]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 440.0;
    const LEFT: f64 = 64.0;
    const RIGHT: f64 = 190.0;
    const TOP: f64 = 24.0;
    const BOTTOM: f64 = 52.0;
    let summaries = summarize(rows);
    let max_round = rows.iter().map(|r| r.round).max().unwrap_or(1).max(2);
    let min_round = rows.iter().map(|r| r.round).min().unwrap_or(1).min(max_round - 1);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &summaries {
        for (m, sd) in s.mean.iter().zip(&s.std) {
            lo = lo.min(m - sd);
            hi = hi.max(m + sd);
        }
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    lo = ((lo * 100.0 / 5.0).floor() * 5.0 / 100.0).max(0.0);
    hi = ((hi * 100.0 / 5.0).ceil() * 5.0 / 100.0).min(1.0);
    if hi - lo < 0.05 {
        hi = (lo + 0.05).min(1.0);
        lo = hi - 0.05;
    }
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let x = |round: usize| LEFT + (round - min_round) as f64 / (max_round - min_round) as f64 * plot_w;
    let y = |acc: f64| TOP + (1.0 - (acc - lo) / (hi - lo)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##
    );
    let ticks = 5;
    for t in 0..=ticks {
        let acc = lo + (hi - lo) * t as f64 / ticks as f64;
        let ty = y(acc);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{ty:.2}" x2="{:.2}" y2="{ty:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{:.1}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            ty + 4.0,
            acc * 100.0
        );
    }
    for round in min_round..=max_round {
        let tx = x(round);
        let _ = writeln!(
            svg,
            r#"<text x="{tx:.2}" y="{:.2}" text-anchor="middle">{round}</text>"#,
            TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">round t</text>"#,
        LEFT + plot_w / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">test accuracy [%]</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    for (i, s) in summaries.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let upper: Vec<String> = s
            .rounds
            .iter()
            .zip(s.mean.iter().zip(&s.std))
            .map(|(&r, (m, sd))| format!("{:.2},{:.2}", x(r), y((m + sd).min(hi))))
            .collect();
        let lower: Vec<String> = s
            .rounds
            .iter()
            .zip(s.mean.iter().zip(&s.std))
            .rev()
            .map(|(&r, (m, sd))| format!("{:.2},{:.2}", x(r), y((m - sd).max(lo))))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let points: Vec<String> = s
            .rounds
            .iter()
            .zip(&s.mean)
            .map(|(&r, &m)| format!("{:.2},{:.2}", x(r), y(m)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        );
        let ly = TOP + 12.0 + 18.0 * i as f64;
        let lx = LEFT + plot_w + 14.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            xml_escape(&s.strategy)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(strategy: &str, seed: u64, round: usize, acc: f64) -> ResultRow {
        ResultRow {
            strategy: strategy.into(),
            seed,
            round,
            test_accuracy: acc,
            n_full: round * 10,
            n_weak: round * 3,
            spent: 12.5,
            m_full: (round > 1).then_some(0.1 / 3.0),
            m_weak: (round > 1).then_some(-1e-7),
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows: Vec<ResultRow> = (0..3)
            .flat_map(|seed| (1..=5).map(move |r| row("iso", seed, r, 0.1 * r as f64 + 1.0 / 3.0)))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        write_results_csv(&path, &rows).unwrap();
        assert_eq!(read_results_csv(&path).unwrap(), rows);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("strategy,seed,round,test_accuracy,n_full,n_weak,spent,M_full,M_weak\n"));
        assert_eq!(text.lines().count(), 16);
    }

    #[test]
    fn summary_statistics() {
        let rows = vec![row("a", 0, 1, 0.2), row("a", 1, 1, 0.4), row("b", 0, 1, 0.5)];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert!((s[0].mean[0] - 0.3).abs() < 1e-15);
        assert!((s[0].std[0] - 0.02f64.sqrt()).abs() < 1e-15);
        assert_eq!(s[1].std[0], 0.0);
    }

    #[test]
    fn one_polyline_per_strategy() {
        let rows: Vec<ResultRow> = ["iso", "random", "fixed_ratio:0.6"]
            .iter()
            .flat_map(|s| (1..=4).map(move |r| row(s, 0, r, 0.1 * r as f64)))
            .collect();
        let svg = render_accuracy_svg(&rows);
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
