//! CSV, JSON and SVG renderings of a suite report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::suite::SuiteReport;
use super::BenchError;

fn external_names(report: &SuiteReport) -> Vec<String> {
    report.config.external.iter().map(|m| m.name.clone()).collect()
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per case and strategy.
pub fn to_csv(report: &SuiteReport) -> Result<String, BenchError> {
    let ext = external_names(report);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> =
        ["case_id", "strategy", "seed", "status", "aeq", "psnr", "ssim", "psnr_white", "psnr_black", "ssim_white", "ssim_black"]
            .map(String::from)
            .to_vec();
    header.extend(ext.iter().cloned());
    header.push("error".into());
    w.write_record(&header)?;
    for r in &report.rows {
        let m = r.metrics.as_ref();
        let mut rec = vec![
            r.case_id.clone(),
            r.strategy.clone(),
            r.seed.to_string(),
            if m.is_some() { "ok" } else { "failed" }.to_string(),
            cell(m.and_then(|m| m.aeq)),
            cell(m.map(|m| m.psnr)),
            cell(m.map(|m| m.ssim)),
            cell(m.map(|m| m.psnr_white)),
            cell(m.map(|m| m.psnr_black)),
            cell(m.map(|m| m.ssim_white)),
            cell(m.map(|m| m.ssim_black)),
        ];
        rec.extend(ext.iter().map(|n| cell(m.and_then(|m| m.external.get(n).copied()))));
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8"))
}

pub fn to_json(report: &SuiteReport) -> Result<String, BenchError> {
    Ok(serde_json::to_string_pretty(report)?)
}

/// Metrics with an aggregate value for at least one strategy.
pub fn plotted_metrics(report: &SuiteReport) -> Vec<String> {
    let mut names = vec!["psnr".to_string(), "ssim".to_string()];
    if report.aggregates.iter().any(|a| a.aeq.is_some()) {
        names.push("aeq".into());
    }
    names.extend(external_names(report));
    names
}

fn aggregate_value(report: &SuiteReport, i: usize, metric: &str) -> Option<f64> {
    let a = &report.aggregates[i];
    match metric {
        "psnr" => Some(a.psnr),
        "ssim" => Some(a.ssim),
        "aeq" => a.aeq,
        other => a.external.get(other).copied(),
    }
    .filter(|v| v.is_finite())
}

/// Bar chart of one aggregate metric, one bar per strategy.
pub fn to_svg(report: &SuiteReport, metric: &str) -> String {
    const W: f64 = 480.0;
    const H: f64 = 260.0;
    const TOP: f64 = 40.0;
    const BASE: f64 = 220.0;
    let vals: Vec<Option<f64>> = (0..report.aggregates.len()).map(|i| aggregate_value(report, i, metric)).collect();
    let max = vals.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let n = vals.len().max(1) as f64;
    let slot = (W - 40.0) / n;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="20" y="24" font-family="sans-serif" font-size="14">{} ({})</text>"#,
        metric,
        xml_escape(&report.model)
    );
    let _ = writeln!(s, r##"<line x1="20" y1="{BASE}" x2="{}" y2="{BASE}" stroke="#333"/>"##, W - 20.0);
    for (i, v) in vals.iter().enumerate() {
        let x = 20.0 + slot * i as f64 + slot * 0.15;
        let bw = slot * 0.7;
        let label = xml_escape(&report.aggregates[i].strategy);
        if let Some(v) = v {
            let bh = (BASE - TOP) * v.abs() / max;
            let _ = writeln!(
                s,
                r##"<rect x="{x:.2}" y="{:.2}" width="{bw:.2}" height="{bh:.2}" fill="#4a7bb7"/>"##,
                BASE - bh
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{v:.4}</text>"#,
                x + bw / 2.0,
                BASE - bh - 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{label}</text>"#,
            x + bw / 2.0,
            BASE + 16.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Writes `report.csv`, `report.json` and `<metric>.svg` into `dir`.
pub fn write_report(report: &SuiteReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, BenchError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<(), BenchError> {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("report.csv".into(), to_csv(report)?)?;
    put("report.json".into(), to_json(report)?)?;
    for m in plotted_metrics(report) {
        put(format!("{m}.svg"), to_svg(report, &m))?;
    }
    Ok(written)
}
