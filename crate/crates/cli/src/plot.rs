//! Dependency-free SVG output: loss curves and three-panel decision plots for
//! 2-D tasks.

use std::fmt::Write as _;

use indirect_core::{ClassifierParams, FeatureMatrix, TransitionMatrix};

use crate::error::{CliError, Result};
use crate::pipeline::RunArtifacts;

const PANEL: f64 = 320.0;
const MARGIN: f64 = 30.0;
const GRID: usize = 80;

/// Base colors per class; three classes map to pure red, green and blue.
const PALETTE: [(f64, f64, f64); 10] = [
    (1.0, 0.0, 0.0),
    (0.0, 0.7, 0.0),
    (0.0, 0.0, 1.0),
    (0.9, 0.6, 0.0),
    (0.6, 0.0, 0.8),
    (0.0, 0.7, 0.7),
    (0.5, 0.3, 0.1),
    (1.0, 0.4, 0.7),
    (0.4, 0.4, 0.4),
    (0.6, 0.8, 0.2),
];

/// Mixes class colors by `probs` (RGB interpolation).
pub fn blend(probs: &[f64]) -> String {
    let (mut r, mut g, mut b) = (0.0, 0.0, 0.0);
    for (i, p) in probs.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        r += p * c.0;
        g += p * c.1;
        b += p * c.2;
    }
    let byte = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", byte(r), byte(g), byte(b))
}

fn one_hot(k: usize, z: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[z] = 1.0;
    v
}

fn header(out: &mut String, width: f64, height: f64) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#).unwrap();
}

/// Loss per epoch as a polyline.
pub fn loss_curve_svg(history: &[f64]) -> String {
    let (w, h) = (480.0, 320.0);
    let mut out = String::new();
    header(&mut out, w, h);
    let plot_w = w - 2.0 * MARGIN - 30.0;
    let plot_h = h - 2.0 * MARGIN;
    let x0 = MARGIN + 30.0;
    let lo = history.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = history.len().max(2) - 1;
    writeln!(
        out,
        r##"<rect x="{x0}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    )
    .unwrap();
    let points: Vec<String> = history
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let x = x0 + plot_w * i as f64 / n as f64;
            let y = MARGIN + plot_h * (1.0 - (l - lo) / span);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    writeln!(
        out,
        r##"<polyline fill="none" stroke="#1f5fbf" stroke-width="1.5" points="{}"/>"##,
        points.join(" ")
    )
    .unwrap();
    writeln!(out, r#"<text x="{x0}" y="{}">epoch (0..{})</text>"#, h - 8.0, history.len().saturating_sub(1)).unwrap();
    writeln!(out, r#"<text x="4" y="{}">{hi:.4}</text>"#, MARGIN + 4.0).unwrap();
    writeln!(out, r#"<text x="4" y="{}">{lo:.4}</text>"#, MARGIN + plot_h).unwrap();
    writeln!(out, r#"<text x="{x0}" y="18">training loss</text>"#).unwrap();
    out.push_str("</svg>\n");
    out
}

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn fit(points: &[(f64, f64)]) -> Self {
        let mut f = Frame { x_lo: f64::INFINITY, x_hi: f64::NEG_INFINITY, y_lo: f64::INFINITY, y_hi: f64::NEG_INFINITY };
        for &(x, y) in points {
            f.x_lo = f.x_lo.min(x);
            f.x_hi = f.x_hi.max(x);
            f.y_lo = f.y_lo.min(y);
            f.y_hi = f.y_hi.max(y);
        }
        let pad_x = (f.x_hi - f.x_lo).max(1e-9) * 0.05;
        let pad_y = (f.y_hi - f.y_lo).max(1e-9) * 0.05;
        f.x_lo -= pad_x;
        f.x_hi += pad_x;
        f.y_lo -= pad_y;
        f.y_hi += pad_y;
        f
    }

    fn px(&self, panel: usize, x: f64, y: f64) -> (f64, f64) {
        let left = MARGIN + panel as f64 * (PANEL + MARGIN);
        (
            left + PANEL * (x - self.x_lo) / (self.x_hi - self.x_lo),
            MARGIN + PANEL * (1.0 - (y - self.y_lo) / (self.y_hi - self.y_lo)),
        )
    }
}

fn scatter(out: &mut String, frame: &Frame, panel: usize, points: &[(f64, f64)], colors: &[String]) {
    for (&(x, y), c) in points.iter().zip(colors) {
        let (px, py) = frame.px(panel, x, y);
        writeln!(out, r#"<circle cx="{px:.2}" cy="{py:.2}" r="2.2" fill="{c}" fill-opacity="0.85"/>"#).unwrap();
    }
}

/// Class composition `p(Z | Y = y)` of every observation value, from the
/// training matrix and the class prior.
fn proportions(m: &TransitionMatrix, prior: &[f64]) -> Vec<Vec<f64>> {
    (0..m.n_y())
        .map(|y| {
            let w: Vec<f64> = (0..m.n_z()).map(|z| m.get(y, z) * prior[z]).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|v| if s > 0.0 { v / s } else { 0.0 }).collect()
        })
        .collect()
}

/// Three panels: true classes, indirect observations colored by their label
/// proportions, and predicted probabilities with decision boundaries.
pub fn decision_svg(run: &RunArtifacts) -> Result<String> {
    let d = run.params.input_dim;
    if d != 2 {
        return Err(CliError::UnsupportedDimension(d));
    }
    let k = run.params.n_classes;
    let test = run
        .test
        .as_ref()
        .ok_or_else(|| CliError::Data("run has no data/test.csv to plot".into()))?;
    let test_pts = points(&test.features);
    let mut all = test_pts.clone();
    if let Some(src) = &run.source {
        all.extend(points(src.features()));
    }
    let frame = Frame::fit(&all);
    let width = 3.0 * PANEL + 4.0 * MARGIN;
    let height = PANEL + 2.0 * MARGIN;
    let mut out = String::new();
    header(&mut out, width, height);

    // Panel 0: true targets.
    let colors: Vec<String> = test.targets.iter().map(|&z| blend(&one_hot(k, z))).collect();
    scatter(&mut out, &frame, 0, &test_pts, &colors);

    // Panel 1: indirect observations.
    if let Some(src) = &run.source {
        let prior = run.class_prior.clone().unwrap_or_else(|| vec![1.0 / k as f64; k]);
        let props = proportions(src.transition(), &prior);
        let colors: Vec<String> = src.observations().iter().map(|&y| blend(&props[y])).collect();
        scatter(&mut out, &frame, 1, &points(src.features()), &colors);
    }

    // Panel 2: predicted probabilities, boundaries, and the true sample.
    predicted_regions(&mut out, &frame, &run.params)?;
    scatter(&mut out, &frame, 2, &test_pts, &colors);

    for (i, title) in ["true class Z", "indirect observation Y", "prediction"].iter().enumerate() {
        let x = MARGIN + i as f64 * (PANEL + MARGIN);
        writeln!(out, r#"<text x="{x}" y="18">{title}</text>"#).unwrap();
        writeln!(
            out,
            r##"<rect x="{x}" y="{MARGIN}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#444"/>"##
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn points(f: &FeatureMatrix) -> Vec<(f64, f64)> {
    f.rows().map(|r| (r[0], r[1])).collect()
}

fn predicted_regions(out: &mut String, frame: &Frame, params: &ClassifierParams) -> Result<()> {
    let cell = PANEL / GRID as f64;
    let mut labels = vec![vec![0usize; GRID]; GRID];
    for (gy, row) in labels.iter_mut().enumerate() {
        for (gx, label) in row.iter_mut().enumerate() {
            let x = frame.x_lo + (gx as f64 + 0.5) / GRID as f64 * (frame.x_hi - frame.x_lo);
            let y = frame.y_hi - (gy as f64 + 0.5) / GRID as f64 * (frame.y_hi - frame.y_lo);
            let p = params.predict_proba(&[x, y])?;
            *label = indirect_core::model::argmax(p.as_slice());
            // Lightened so the sample drawn on top stays visible.
            let c = lighten(&blend(p.as_slice()));
            let (px, py) = (MARGIN + 2.0 * (PANEL + MARGIN) + gx as f64 * cell, MARGIN + gy as f64 * cell);
            writeln!(
                out,
                r#"<rect x="{px:.2}" y="{py:.2}" width="{:.2}" height="{:.2}" fill="{c}"/>"#,
                cell + 0.05,
                cell + 0.05
            )
            .unwrap();
        }
    }
    for gy in 0..GRID {
        for gx in 0..GRID {
            let here = labels[gy][gx];
            let edge = (gx + 1 < GRID && labels[gy][gx + 1] != here) || (gy + 1 < GRID && labels[gy + 1][gx] != here);
            if edge {
                let (px, py) = (MARGIN + 2.0 * (PANEL + MARGIN) + gx as f64 * cell, MARGIN + gy as f64 * cell);
                writeln!(
                    out,
                    r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#000"/>"##,
                    px + cell * 0.25,
                    py + cell * 0.25,
                    cell * 0.5,
                    cell * 0.5
                )
                .unwrap();
            }
        }
    }
    Ok(())
}

/// Moves a color 45% of the way to white.
fn lighten(hex: &str) -> String {
    let v = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).unwrap_or(0) as f64;
    let up = |c: f64| (c + (255.0 - c) * 0.45).round() as u8;
    format!("#{:02x}{:02x}{:02x}", up(v(1)), up(v(3)), up(v(5)))
}
