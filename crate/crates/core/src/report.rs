//! `rates.csv` and `rates.svg` output for rate studies.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{RateReport, RateRow};
use crate::scalar::Real;

pub const CSV_HEADER: [&str; 6] = ["m", "lambda", "err_median", "err_q1", "err_q3", "n_converged"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub svg: PathBuf,
}

pub fn rates_csv<T: Real + Serialize>(rows: &[RateRow<T>]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyReport("rate table has no rows".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn parse_rates_csv<T: Real + DeserializeOwned>(text: &str) -> Result<Vec<RateRow<T>>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Parse(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse(format!("unexpected rates.csv header: {header:?}")));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 64.0;

/// Log-log plot of the median errors with quartile bars, the fitted line and
/// a line of the theoretical slope through the centre of the data.
pub fn rates_svg<T: Real>(report: &RateReport<T>) -> Result<String> {
    if report.rows.is_empty() {
        return Err(Error::EmptyReport("rate table has no rows".into()));
    }
    let lx: Vec<f64> = report.rows.iter().map(|r| (r.m as f64).log10()).collect();
    let positive = |v: T| if v.as_f64() > 0.0 { v.as_f64().log10() } else { f64::NAN };
    let lmed: Vec<f64> = report.rows.iter().map(|r| positive(r.err_median)).collect();
    let lq1: Vec<f64> = report.rows.iter().map(|r| positive(r.err_q1)).collect();
    let lq3: Vec<f64> = report.rows.iter().map(|r| positive(r.err_q3)).collect();

    let finite = |v: &[f64]| v.iter().copied().filter(|x| x.is_finite()).collect::<Vec<_>>();
    let ys: Vec<f64> = [finite(&lmed), finite(&lq1), finite(&lq3)].concat();
    if ys.is_empty() {
        return Err(Error::EmptyReport("no positive errors to plot".into()));
    }
    let (x0, x1) = pad(lx.iter().copied().fold(f64::INFINITY, f64::min), lx.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = pad(ys.iter().copied().fold(f64::INFINITY, f64::min), ys.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{:.2} {:.2} L{:.2} {:.2} L{:.2} {:.2}" fill="none" stroke="black"/>"#,
        MARGIN,
        MARGIN,
        MARGIN,
        HEIGHT - MARGIN,
        WIDTH - MARGIN,
        HEIGHT - MARGIN
    );
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="14">log10 m</text>"#, WIDTH / 2.0, HEIGHT - 16.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" font-size="14" transform="rotate(-90 18 {:.2})">log10 error</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (i, &x) in lx.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#,
            px(x),
            HEIGHT - MARGIN + 16.0,
            report.rows[i].m
        );
    }
    for k in 0..=4 {
        let y = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">{:.2}</text>"#, MARGIN - 6.0, py(y) + 4.0, y);
    }

    // natural-log fit converted to log10 coordinates
    let ln10 = std::f64::consts::LN_10;
    let slope = -report.fitted_slope.as_f64();
    let intercept = report.intercept.as_f64();
    let abscissa = |m10: f64| report.abscissa(10f64.powf(m10).round() as usize).as_f64();
    let fit_at = |x: f64| (intercept + slope * abscissa(x)) / ln10;
    let (xa, xb) = (lx[0], lx[lx.len() - 1]);
    let _ = writeln!(
        s,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="steelblue" stroke-width="2"/>"#,
        px(xa),
        py(fit_at(xa)),
        px(xb),
        py(fit_at(xb))
    );
    let mid = (xa + xb) / 2.0;
    let theo = -report.theoretical.as_f64();
    let theo_at = |x: f64| fit_at(mid) + theo * (abscissa(x) - abscissa(mid)) / ln10;
    let _ = writeln!(
        s,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="darkorange" stroke-width="2" stroke-dasharray="6 4"/>"#,
        px(xa),
        py(theo_at(xa)),
        px(xb),
        py(theo_at(xb))
    );
    for i in 0..lx.len() {
        if lq1[i].is_finite() && lq3[i].is_finite() {
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray"/>"#,
                px(lx[i]),
                py(lq1[i]),
                px(lx[i]),
                py(lq3[i])
            );
        }
        if lmed[i].is_finite() {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="black"/>"#, px(lx[i]), py(lmed[i]));
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" fill="steelblue">fitted slope {:.4}</text>"#,
        WIDTH - MARGIN - 150.0,
        MARGIN - 24.0,
        report.fitted_slope.as_f64()
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" fill="darkorange">theoretical {:.4}</text>"#,
        WIDTH - MARGIN - 150.0,
        MARGIN - 8.0,
        report.theoretical.as_f64()
    );
    s.push_str("</svg>\n");
    Ok(s)
}

fn pad(lo: f64, hi: f64) -> (f64, f64) {
    let span = if hi > lo { hi - lo } else { 1.0 };
    (lo - 0.05 * span, hi + 0.05 * span)
}

/// Write `rates.csv` and `rates.svg` into `dir`. Both documents are rendered
/// before anything touches the disk.
pub fn emit_report<T: Real + Serialize>(report: &RateReport<T>, dir: &Path) -> Result<ReportPaths> {
    let csv_text = rates_csv(&report.rows)?;
    let svg_text = rates_svg(report)?;
    fs::create_dir_all(dir)?;
    let paths = ReportPaths {
        csv: dir.join("rates.csv"),
        svg: dir.join("rates.svg"),
    };
    fs::write(&paths.csv, csv_text)?;
    fs::write(&paths.svg, svg_text)?;
    Ok(paths)
}
