//! SVG figures rendered from the files of a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use plotters::coord::Shift;
use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::harness::diagnose::{read_lyapunov_csv, DiagnosticsReport, LyapunovRow};
use crate::harness::experiment::{RunManifest, Summary};

const SIZE: (u32, u32) = (900, 560);
const PALETTE: [RGBColor; 4] = [BLUE, RED, GREEN, MAGENTA];

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn range(values: impl Iterator<Item = f64>, pad: f64) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let span = (hi - lo).max(1e-9);
    (lo - pad * span, hi + pad * span)
}

fn canvas(path: &Path) -> DrawingArea<SVGBackend<'_>, Shift> {
    SVGBackend::new(path, SIZE).into_drawing_area()
}

/// Text of the endpoint label on a convergence plot.
pub fn endpoint_label(algorithm: &str, final_mean: f64) -> String {
    format!("{algorithm} final mean {final_mean}")
}

fn convergence_plot(path: &Path, summary: &Summary, state: usize) -> Result<()> {
    let curves: Vec<_> = summary
        .algorithms
        .iter()
        .filter_map(|a| a.states.iter().find(|s| s.state == state).map(|s| (a.algorithm.name(), s)))
        .filter(|(_, s)| s.trials_ok > 0)
        .collect();
    let oracle = curves[0].1.oracle;
    let k_max = curves.iter().flat_map(|(_, s)| s.ks.last().copied()).max().unwrap_or(1).max(2) as f64;
    let (y_lo, y_hi) = range(
        curves.iter().flat_map(|(_, s)| s.mean.iter().copied()).chain([oracle - summary.band, oracle + summary.band]),
        0.1,
    );

    let area = canvas(path);
    area.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&area)
        .caption(format!("Index estimate, state {state}"), ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d((1f64..k_max).log_scale(), y_lo..y_hi)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("iteration k").y_desc("lambda").draw().map_err(plot_err)?;

    chart
        .draw_series(LineSeries::new([(1.0, oracle), (k_max, oracle)], BLACK.stroke_width(2)))
        .map_err(plot_err)?
        .label(format!("oracle {oracle}"))
        .legend(|(x, y)| PathElement::new([(x, y), (x + 20, y)], BLACK));
    for band in [oracle - summary.band, oracle + summary.band] {
        chart
            .draw_series(DashedLineSeries::new([(1.0, band), (k_max, band)], 4, 4, BLACK.mix(0.4).into()))
            .map_err(plot_err)?;
    }
    for (i, (name, s)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s.ks.iter().zip(&s.mean).map(|(&k, &m)| (k as f64, m)).collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], color));
        if let (Some(&(x, y)), Some(final_mean)) = (pts.last(), s.final_mean) {
            chart
                .draw_series([
                    Circle::new((x, y), 4, color.filled()),
                ])
                .map_err(plot_err)?;
            let anchor = (x / 40.0).max(1.0);
            let offset = (y_hi - y_lo) * (0.04 + 0.05 * i as f64);
            chart
                .draw_series([Text::new(endpoint_label(name, final_mean), (anchor, y + offset), ("sans-serif", 14).into_font().color(&color))])
                .map_err(plot_err)?;
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    area.present().map_err(plot_err)
}

fn lyapunov_plot(path: &Path, rows: &[LyapunovRow]) -> Result<()> {
    let positive = |v: f64| v.is_finite() && v > 0.0;
    let k_max = rows.iter().map(|r| r.k).max().unwrap_or(1).max(2) as f64;
    let values = rows.iter().flat_map(|r| [r.mean_m, r.mean_m_hat]).filter(|v| positive(*v));
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo / 2.0, hi * 2.0) } else { (1e-6, 1.0) };

    let area = canvas(path);
    area.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&area)
        .caption("Lyapunov functions", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d((1f64..k_max).log_scale(), (lo..hi).log_scale())
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("iteration k").y_desc("E[M]").draw().map_err(plot_err)?;
    let mut states: Vec<usize> = rows.iter().map(|r| r.state).collect();
    states.dedup();
    for (i, state) in states.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let sel: Vec<&LyapunovRow> = rows.iter().filter(|r| r.state == *state).collect();
        let m: Vec<(f64, f64)> = sel.iter().filter(|r| positive(r.mean_m)).map(|r| (r.k as f64, r.mean_m)).collect();
        let m_hat: Vec<(f64, f64)> =
            sel.iter().filter(|r| positive(r.mean_m_hat)).map(|r| (r.k as f64, r.mean_m_hat)).collect();
        chart
            .draw_series(LineSeries::new(m, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(format!("M, state {state}"))
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], color));
        chart
            .draw_series(DashedLineSeries::new(m_hat, 6, 4, color.into()))
            .map_err(plot_err)?
            .label(format!("M hat, state {state}"))
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 8, y)], color));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    area.present().map_err(plot_err)
}

fn c0_plot(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let (x_lo, x_hi) = range(points.iter().map(|p| p.0), 0.05);
    let (y_lo, y_hi) = range(points.iter().map(|p| p.1).chain([0.0]), 0.1);
    let area = canvas(path);
    area.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&area)
        .caption("c0 against width", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x_lo..x_hi, y_lo..y_hi)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("width m").y_desc("c0").draw().map_err(plot_err)?;
    chart.draw_series(LineSeries::new(points.to_vec(), BLUE.stroke_width(2))).map_err(plot_err)?;
    chart
        .draw_series(points.iter().map(|&p| Circle::new(p, 4, BLUE.filled())))
        .map_err(plot_err)?;
    area.present().map_err(plot_err)
}

/// Renders `plots/convergence_state<s>.svg` for every trained state, and
/// `plots/lyapunov.svg` and `plots/c0.svg` when diagnostics are enabled.
/// All inputs are checked before any file is written.
pub fn emit_plots(root: &Path) -> Result<Vec<PathBuf>> {
    let mut manifest = RunManifest::load(root)?;
    let summary = Summary::load(root)?;
    let mut states: Vec<usize> = summary
        .algorithms
        .iter()
        .flat_map(|a| a.states.iter().filter(|s| s.trials_ok > 0).map(|s| s.state))
        .collect();
    states.sort_unstable();
    states.dedup();
    if states.is_empty() {
        return Err(Error::InvalidInput("no completed trials to plot".into()));
    }

    let diagnostics = if manifest.config.diagnostics.enabled {
        let report = DiagnosticsReport::load(root)?;
        let rows = read_lyapunov_csv(&root.join("lyapunov.csv"))?;
        let c0: Vec<(f64, f64)> = report
            .c0
            .iter()
            .flatten()
            .filter_map(|e| e.mean.map(|m| (e.width as f64, m)))
            .collect();
        Some((rows, c0))
    } else {
        None
    };

    let dir = root.join("plots");
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    for s in states {
        let path = dir.join(format!("convergence_state{s}.svg"));
        convergence_plot(&path, &summary, s)?;
        written.push(path);
    }
    if let Some((rows, c0)) = diagnostics {
        if !rows.is_empty() {
            let path = dir.join("lyapunov.svg");
            lyapunov_plot(&path, &rows)?;
            written.push(path);
        }
        if !c0.is_empty() {
            let path = dir.join("c0.svg");
            c0_plot(&path, &c0)?;
            written.push(path);
        }
    }
    manifest.refresh(root)?;
    Ok(written)
}
