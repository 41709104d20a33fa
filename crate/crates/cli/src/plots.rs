//! Static SVG charts rendered from a run log: path overlay, velocity
//! estimates against truth, and the monitor/attack timeline.

use std::path::Path;

use plotters::prelude::*;
use pruning_observer::scenario::RunLog;
use pruning_observer::{Error, Result};

fn chart_error(e: impl std::fmt::Display) -> Error {
    Error::Config(format!("plot rendering failed: {e}"))
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (-1.0, 1.0);
    }
    let pad = (hi - lo).max(1e-6) * 0.05;
    (lo - pad, hi + pad)
}

/// Reference path against the executed path.
pub fn path_overlay(log: &RunLog, out: &Path) -> Result<()> {
    let root = SVGBackend::new(out, (720, 540)).into_drawing_area();
    root.fill(&WHITE).map_err(chart_error)?;
    let (x_lo, x_hi) = bounds(
        log.rows
            .iter()
            .flat_map(|r| [r.truth[3], r.reference[1]]),
    );
    let (y_lo, y_hi) = bounds(
        log.rows
            .iter()
            .flat_map(|r| [r.truth[4], r.reference[2]]),
    );
    let mut chart = ChartBuilder::on(&root)
        .caption("path tracking", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(x_lo..x_hi, y_lo..y_hi)
        .map_err(chart_error)?;
    chart
        .configure_mesh()
        .x_desc("x (m)")
        .y_desc("y (m)")
        .draw()
        .map_err(chart_error)?;
    chart
        .draw_series(LineSeries::new(
            log.rows.iter().map(|r| (r.reference[1], r.reference[2])),
            BLUE.stroke_width(1),
        ))
        .map_err(chart_error)?
        .label("reference")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLUE));
    chart
        .draw_series(LineSeries::new(
            log.rows.iter().map(|r| (r.truth[3], r.truth[4])),
            RED.stroke_width(1),
        ))
        .map_err(chart_error)?
        .label("actual")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], RED));
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .draw()
        .map_err(chart_error)?;
    root.present().map_err(chart_error)?;
    Ok(())
}

/// True and estimated body velocities over time.
pub fn velocity_estimates(log: &RunLog, out: &Path) -> Result<()> {
    let root = SVGBackend::new(out, (860, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(chart_error)?;
    let (upper, lower) = root.split_vertically(300);
    let t_hi = log.rows.last().map(|r| r.t).unwrap_or(1.0);

    let (v_lo, v_hi) = bounds(log.rows.iter().flat_map(|r| [r.truth[1], r.estimate[1]]));
    let mut chart = ChartBuilder::on(&upper)
        .caption("forward velocity", ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(28)
        .y_label_area_size(48)
        .build_cartesian_2d(0.0..t_hi, v_lo..v_hi)
        .map_err(chart_error)?;
    chart
        .configure_mesh()
        .y_desc("v (m/s)")
        .draw()
        .map_err(chart_error)?;
    chart
        .draw_series(LineSeries::new(
            log.rows.iter().map(|r| (r.t, r.truth[1])),
            BLUE.stroke_width(1),
        ))
        .map_err(chart_error)?
        .label("true")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLUE));
    chart
        .draw_series(LineSeries::new(
            log.rows.iter().map(|r| (r.t, r.estimate[1])),
            RED.stroke_width(1),
        ))
        .map_err(chart_error)?
        .label("estimate")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], RED));
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .draw()
        .map_err(chart_error)?;

    let (w_lo, w_hi) = bounds(log.rows.iter().flat_map(|r| [r.truth[2], r.estimate[2]]));
    let mut chart = ChartBuilder::on(&lower)
        .caption("yaw rate", ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(28)
        .y_label_area_size(48)
        .build_cartesian_2d(0.0..t_hi, w_lo..w_hi)
        .map_err(chart_error)?;
    chart
        .configure_mesh()
        .x_desc("t (s)")
        .y_desc("omega (rad/s)")
        .draw()
        .map_err(chart_error)?;
    chart
        .draw_series(LineSeries::new(
            log.rows.iter().map(|r| (r.t, r.truth[2])),
            BLUE.stroke_width(1),
        ))
        .map_err(chart_error)?;
    chart
        .draw_series(LineSeries::new(
            log.rows.iter().map(|r| (r.t, r.estimate[2])),
            RED.stroke_width(1),
        ))
        .map_err(chart_error)?;
    root.present().map_err(chart_error)?;
    Ok(())
}

/// Monitor alarms, attack activity and attack magnitude over time.
pub fn monitor_timeline(log: &RunLog, out: &Path) -> Result<()> {
    let root = SVGBackend::new(out, (860, 360)).into_drawing_area();
    root.fill(&WHITE).map_err(chart_error)?;
    let t_hi = log.rows.last().map(|r| r.t).unwrap_or(1.0);
    let e_hi = log
        .rows
        .iter()
        .map(|r| r.e.norm())
        .fold(0.0f64, f64::max)
        .max(1e-6);
    let mut chart = ChartBuilder::on(&root)
        .caption("monitor and attack timeline", ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(28)
        .y_label_area_size(48)
        .build_cartesian_2d(0.0..t_hi, -0.05..1.25)
        .map_err(chart_error)?;
    chart
        .configure_mesh()
        .x_desc("t (s)")
        .y_desc("flag / scaled ||e||")
        .draw()
        .map_err(chart_error)?;
    chart
        .draw_series(LineSeries::new(
            log.rows.iter().map(|r| (r.t, r.e.norm() / e_hi)),
            GREEN.stroke_width(1),
        ))
        .map_err(chart_error)?
        .label("||e|| (scaled)")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], GREEN));
    chart
        .draw_series(LineSeries::new(
            log.rows.iter().map(|r| (r.t, r.attack_active as u8 as f64 * 1.1)),
            BLUE.stroke_width(1),
        ))
        .map_err(chart_error)?
        .label("attack active")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLUE));
    chart
        .draw_series(LineSeries::new(
            log.rows.iter().map(|r| (r.t, r.monitor_alarm as u8 as f64)),
            RED.stroke_width(1),
        ))
        .map_err(chart_error)?
        .label("monitor alarm")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], RED));
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .draw()
        .map_err(chart_error)?;
    root.present().map_err(chart_error)?;
    Ok(())
}
