use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::F0Contour;

pub const F0_CSV_HEADER: &str = "contour,frame,time_s,f0_hz";

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Companion CSV path of an overlay figure.
pub fn overlay_csv_path(svg_path: &Path) -> PathBuf {
    svg_path.with_extension("csv")
}

/// Long-format CSV of the plotted series.
pub fn f0_series_csv(contours: &[(String, F0Contour)]) -> String {
    let mut out = String::from(F0_CSV_HEADER);
    out.push('\n');
    for (name, c) in contours {
        let shift = c.frame_shift_ms / 1000.0;
        for (t, v) in c.values.iter().enumerate() {
            let _ = writeln!(out, "{},{t},{:.6},{:.6}", name.replace(',', ";"), t as f64 * shift, v);
        }
    }
    out
}

/// Draws all contours on shared axes (seconds against Hz) as an SVG at
/// `svg_path` and writes the series next to it as CSV. Every contour keeps
/// its own frame count and frame shift.
pub fn plot_f0_overlay(contours: &[(String, F0Contour)], svg_path: &Path) -> Result<PathBuf> {
    if contours.is_empty() {
        return Err(Error::InvalidInput("no contours to plot".into()));
    }
    for (name, c) in contours {
        if c.is_empty() || !c.is_fully_voiced() {
            return Err(Error::InvalidInput(format!(
                "contour {name} is not interpolated (interpolate_f0 first)"
            )));
        }
    }
    let t_max = contours
        .iter()
        .map(|(_, c)| (c.len().max(2) - 1) as f64 * c.frame_shift_ms / 1000.0)
        .fold(0.0f64, f64::max)
        .max(1e-3);
    let lo = contours.iter().flat_map(|(_, c)| c.values.iter().copied()).fold(f64::INFINITY, f64::min);
    let hi = contours.iter().flat_map(|(_, c)| c.values.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.05).max(5.0);
    let (y0, y1) = (lo - pad, hi + pad);
    let px = |t: f64| MARGIN + (WIDTH - 2.0 * MARGIN) * t / t_max;
    let py = |f: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (f - y0) / (y1 - y0);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x_axis, y_axis) = (HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        svg,
        r#"<line x1="{y_axis}" y1="{x_axis}" x2="{}" y2="{x_axis}" stroke="black"/>"#,
        WIDTH - MARGIN
    );
    let _ = writeln!(svg, r#"<line x1="{y_axis}" y1="{MARGIN}" x2="{y_axis}" y2="{x_axis}" stroke="black"/>"#);
    for k in 0..=4 {
        let t = t_max * k as f64 / 4.0;
        let f = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{t:.2}</text>"#,
            px(t),
            x_axis + 16.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{f:.0}</text>"#,
            y_axis - 6.0,
            py(f) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">Time (s)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.1})">F0 (Hz)</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (i, (name, c)) in contours.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let shift = c.frame_shift_ms / 1000.0;
        let points: Vec<String> = c
            .values
            .iter()
            .enumerate()
            .map(|(t, &v)| format!("{:.2},{:.2}", px(t as f64 * shift), py(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="contour" data-label="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            escape(name),
            points.join(" ")
        );
        let ly = MARGIN + 16.0 * i as f64;
        let lx = WIDTH - MARGIN - 140.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    std::fs::write(svg_path, svg).map_err(|e| Error::io(svg_path, e))?;
    let csv_path = overlay_csv_path(svg_path);
    std::fs::write(&csv_path, f0_series_csv(contours)).map_err(|e| Error::io(&csv_path, e))?;
    Ok(csv_path)
}

/// Reads back a series CSV as `(name, values)` in file order.
pub fn parse_f0_series_csv(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(Error::InvalidInput(format!("line {}: expected 4 fields", n + 1)));
        }
        let v: f64 = f[3]
            .parse()
            .map_err(|_| Error::InvalidInput(format!("line {}: bad f0 value", n + 1)))?;
        match out.last_mut() {
            Some((name, vals)) if name == f[0] => vals.push(v),
            _ => out.push((f[0].to_string(), vec![v])),
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F0Similarity {
    pub rmse_hz: f64,
    pub correlation: f64,
}

/// Linear resampling of `v` onto `n` evenly spaced points spanning it.
fn time_normalize(v: &[f64], n: usize) -> Vec<f64> {
    if v.len() == n {
        return v.to_vec();
    }
    (0..n)
        .map(|i| {
            let pos = i as f64 * (v.len() - 1) as f64 / (n - 1) as f64;
            let k = (pos.floor() as usize).min(v.len() - 2);
            let frac = pos - k as f64;
            v[k] * (1.0 - frac) + v[k + 1] * frac
        })
        .collect()
}

/// RMSE and Pearson correlation after time-normalizing the longer contour
/// to the shorter one's length. Two constant contours correlate at 1; one
/// constant against a varying contour at 0.
pub fn f0_similarity(a: &F0Contour, b: &F0Contour) -> Result<F0Similarity> {
    for (name, c) in [("first", a), ("second", b)] {
        if c.len() < 2 {
            return Err(Error::InvalidInput(format!("{name} contour has fewer than 2 frames")));
        }
        if !c.is_fully_voiced() {
            return Err(Error::InvalidInput(format!("{name} contour is not interpolated")));
        }
    }
    let n = a.len().min(b.len());
    let x = time_normalize(&a.values, n);
    let y = time_normalize(&b.values, n);
    let nf = n as f64;
    let rmse_hz = (x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / nf).sqrt();
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxy: f64 = x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum();
    let sxx: f64 = x.iter().map(|p| (p - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
    let tiny = 1e-12;
    let correlation = match (sxx <= tiny, syy <= tiny) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => sxy / (sxx * syy).sqrt(),
    };
    Ok(F0Similarity { rmse_hz, correlation })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contour(values: Vec<f64>) -> F0Contour {
        F0Contour {
            voiced: vec![true; values.len()],
            values,
            frame_shift_ms: 12.5,
        }
    }

    #[test]
    fn identical_and_offset_contours() {
        let a = contour((0..50).map(|i| 120.0 + (i as f64 * 0.3).sin() * 20.0).collect());
        let s = f0_similarity(&a, &a).unwrap();
        assert_eq!(s.rmse_hz, 0.0);
        assert!((s.correlation - 1.0).abs() < 1e-12);
        let b = contour(a.values.iter().map(|v| v + 10.0).collect());
        let s = f0_similarity(&a, &b).unwrap();
        assert!((s.rmse_hz - 10.0).abs() < 1e-9);
        assert!((s.correlation - 1.0).abs() < 1e-12);
        assert!(f0_similarity(&a, &contour(vec![100.0])).is_err());
        let flat = contour(vec![100.0; 10]);
        assert_eq!(f0_similarity(&flat, &flat).unwrap().correlation, 1.0);
    }

    #[test]
    fn longer_contour_is_resampled() {
        let a = contour(vec![100.0, 200.0]);
        let b = contour(vec![100.0, 150.0, 200.0]);
        let s = f0_similarity(&a, &b).unwrap();
        assert_eq!(s.rmse_hz, 0.0);
    }

    #[test]
    fn overlay_writes_svg_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let svg = dir.path().join("f0.svg");
        let a = contour((0..40).map(|i| 100.0 + i as f64).collect());
        let b = contour((0..25).map(|i| 180.0 - i as f64 * 0.5).collect());
        let csv = plot_f0_overlay(&[("source".into(), a.clone()), ("converted".into(), b.clone())], &svg).unwrap();
        let text = std::fs::read_to_string(&svg).unwrap();
        assert_eq!(text.matches("<polyline").count(), 2);
        assert!(text.contains("Time (s)") && text.contains("F0 (Hz)"));
        let series = parse_f0_series_csv(&std::fs::read_to_string(csv).unwrap()).unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series[0].1.len(), 40);
        assert_eq!(series[1].1.len(), 25);
        for (x, y) in series[1].1.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-4);
        }
        let mut gap = a.clone();
        gap.voiced[3] = false;
        assert!(plot_f0_overlay(&[("gap".into(), gap)], &svg).is_err());
        assert!(plot_f0_overlay(&[], &svg).is_err());
    }
}
