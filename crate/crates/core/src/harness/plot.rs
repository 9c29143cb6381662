//! SVG plots of CPR against the horizon.

use std::collections::BTreeMap;

use plotters::prelude::*;
use serde::Serialize;

use super::run::SummaryRow;
use crate::error::{Error, Result};

/// Row filter parsed from `key=value,key=value`. Every listed key must match.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selector {
    terms: Vec<(String, String)>,
}

const KEYS: [&str; 7] = ["instance_id", "family", "K", "m", "T", "algorithm", "seed"];

impl Selector {
    pub fn parse(expr: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for part in expr.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("selector term `{part}` is not key=value")))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!(
                    "unknown selector key `{key}`; expected one of {KEYS:?}"
                )));
            }
            terms.push((key.to_string(), value.trim().to_string()));
        }
        Ok(Selector { terms })
    }

    /// Values may list alternatives with `|`, as in `algorithm=se_tb|alg_stoch`.
    pub fn matches(&self, row: &SummaryRow) -> bool {
        self.terms.iter().all(|(key, want)| {
            let have = match key.as_str() {
                "instance_id" => row.instance_id.clone(),
                "family" => row.family.clone(),
                "K" => row.k.to_string(),
                "m" => row.m.to_string(),
                "T" => row.horizon.to_string(),
                "algorithm" => row.algorithm.clone(),
                "seed" => row.seed.to_string(),
                _ => unreachable!("keys checked at parse time"),
            };
            want.split('|').any(|w| w == have)
        })
    }

    pub fn select<'a>(&self, rows: &'a [SummaryRow]) -> Vec<&'a SummaryRow> {
        rows.iter().filter(|r| self.matches(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub algorithm: String,
    /// `(T, mean cpr)` sorted by T.
    pub means: Vec<(usize, f64)>,
    /// `(T, cpr)` for every seed.
    pub points: Vec<(usize, f64)>,
    /// Least-squares slope of log mean CPR on log T, when at least two
    /// horizons have positive mean CPR.
    pub slope: Option<f64>,
}

/// Groups rows by algorithm (in order of first appearance) and horizon.
pub fn build_series(rows: &[&SummaryRow]) -> Vec<Series> {
    let mut order: Vec<&str> = Vec::new();
    let mut grouped: BTreeMap<&str, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        if !order.contains(&r.algorithm.as_str()) {
            order.push(&r.algorithm);
        }
        grouped
            .entry(&r.algorithm)
            .or_default()
            .entry(r.horizon)
            .or_default()
            .push(r.cpr);
    }
    order
        .into_iter()
        .map(|alg| {
            let by_t = &grouped[alg];
            let means: Vec<(usize, f64)> = by_t
                .iter()
                .map(|(&t, v)| (t, v.iter().sum::<f64>() / v.len() as f64))
                .collect();
            let points = by_t.iter().flat_map(|(&t, v)| v.iter().map(move |&c| (t, c))).collect();
            let logs: Vec<(f64, f64)> = means
                .iter()
                .filter(|(_, c)| *c > 0.0)
                .map(|&(t, c)| ((t as f64).ln(), c.ln()))
                .collect();
            Series {
                algorithm: alg.to_string(),
                means,
                points,
                slope: fit_slope(&logs),
            }
        })
        .collect()
}

pub fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1.0 { lo.abs() * 0.1 } else { 1.0 };
        (lo - pad, hi + pad)
    } else {
        let pad = (hi - lo) * 0.08;
        (lo - pad, hi + pad)
    }
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

/// Renders mean CPR vs T on linear and log-log panels, with per-seed scatter.
pub fn render_svg(rows: &[SummaryRow], selector: &Selector) -> Result<(String, Vec<Series>)> {
    let picked = selector.select(rows);
    if picked.is_empty() {
        return Err(Error::NoData("selector matched no summary rows".into()));
    }
    let series = build_series(&picked);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (1200, 520)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let panels = root.split_evenly((1, 2));
        draw_panel(&panels[0], &series, false)?;
        draw_panel(&panels[1], &series, true)?;
        root.present().map_err(plot_err)?;
    }
    Ok((svg, series))
}

fn draw_panel(area: &DrawingArea<SVGBackend, plotters::coord::Shift>, series: &[Series], log: bool) -> Result<()> {
    let tx = |t: usize| if log { (t as f64).log10() } else { t as f64 };
    let cy = |c: f64| if log { (c > 0.0).then(|| c.log10()) } else { Some(c) };
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| tx(p.0))).collect();
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().filter_map(|p| cy(p.1)))
        .collect();
    let (x0, x1) = padded(
        xs.iter().copied().fold(f64::INFINITY, f64::min),
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = if ys.is_empty() {
        (0.0, 1.0)
    } else {
        padded(
            ys.iter().copied().fold(f64::INFINITY, f64::min),
            ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let (caption, xlabel, ylabel) = if log {
        ("CPR vs T (log-log)", "log10 T", "log10 CPR")
    } else {
        ("CPR vs T", "T", "CPR")
    };
    let mut chart = ChartBuilder::on(area)
        .caption(caption, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(xlabel)
        .y_desc(ylabel)
        .draw()
        .map_err(plot_err)?;

    for (i, s) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let scatter: Vec<(f64, f64)> = s.points.iter().filter_map(|p| cy(p.1).map(|y| (tx(p.0), y))).collect();
        chart
            .draw_series(scatter.iter().map(|&p| Circle::new(p, 2, color.mix(0.35).filled())))
            .map_err(plot_err)?;
        let means: Vec<(f64, f64)> = s.means.iter().filter_map(|p| cy(p.1).map(|y| (tx(p.0), y))).collect();
        let mut label = s.algorithm.clone();
        if log {
            if let Some(slope) = s.slope {
                label = format!("{label} (slope {slope:.3})");
            }
        }
        if means.len() > 1 {
            chart
                .draw_series(LineSeries::new(means.clone(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(label)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        } else {
            chart
                .draw_series(means.iter().map(|&p| Circle::new(p, 5, color.filled())))
                .map_err(plot_err)?
                .label(label)
                .legend(move |(x, y)| Circle::new((x + 9, y), 4, color.filled()));
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .position(SeriesLabelPosition::UpperLeft)
        .draw()
        .map_err(plot_err)?;
    Ok(())
}
