//! Deterministic artifact writers: CSV tables, JSON documents, and
//! self-contained SVG plots.
//!
//! Every writer renders floating-point values through one canonical
//! formatter built on the shortest round-trip representation, so identical
//! inputs produce byte-identical artifacts across runs — the whole pipeline
//! is deterministic and the output files inherit that property. CSV files
//! carry a single header line and comma-separated numeric columns; JSON
//! documents are pretty-printed with a trailing newline; SVG plots are
//! self-contained (inline styling, no external references).

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evans::Sample;
use crate::evolution::{IterationRecord, PhaseCurve, SimulationTrace, Snapshot};
use crate::profile::Profile;
use serde_json::Value;
use std::fmt::Write as _;
use std::path::Path;

// ---------------------------------------------------------------------------
// Canonical number formatting
// ---------------------------------------------------------------------------

/// Shortest round-trip rendering of a float: plain decimal notation in a
/// mid-range band, scientific notation outside it, `0` for either zero.
pub fn fmt_float(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (1e-4..1e7).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn push_row(out: &mut String, values: &[f64]) {
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        out.push_str(&fmt_float(*v));
    }
    out.push('\n');
}

/// Row writer tolerating absent cells (rendered empty).
fn push_cells(out: &mut String, values: &[Option<f64>]) {
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        if let Some(v) = v {
            out.push_str(&fmt_float(*v));
        }
    }
    out.push('\n');
}

// ---------------------------------------------------------------------------
// CSV tables
// ---------------------------------------------------------------------------

/// Wave profile table: `x`, the state components `u1..un`, and the slope
/// components `du1..dun`.
pub fn profile_csv(profile: &Profile) -> String {
    let n = profile.state_dim();
    let mut out = String::new();
    out.push('x');
    for c in 1..=n {
        let _ = write!(out, ",u{c}");
    }
    for c in 1..=n {
        let _ = write!(out, ",du{c}");
    }
    out.push('\n');
    let mut row = Vec::with_capacity(1 + 2 * n);
    for (i, x) in profile.grid.nodes().enumerate() {
        row.clear();
        row.push(x);
        row.extend_from_slice(profile.states.node(i));
        row.extend_from_slice(profile.slopes.node(i));
        push_row(&mut out, &row);
    }
    out
}

/// Contour samples of the stability determinant. The determinant is stored
/// in split form `D = (re_unit + i im_unit) * exp(ln_scale)`: the unit
/// factor carries the phase at modest modulus while the separate natural-log
/// scale column keeps magnitudes representable far beyond the double range.
pub fn contour_csv(samples: &[Sample]) -> String {
    let mut out = String::from("re_lambda,im_lambda,re_unit,im_unit,ln_scale\n");
    for s in samples {
        push_row(
            &mut out,
            &[s.lambda.re, s.lambda.im, s.unit.re, s.unit.im, s.ln_scale],
        );
    }
    out
}

/// Time-series table of one simulation: the phase `delta`, its rate, the
/// constant asymptotic shift column `delta_star`, integral norms, the
/// Sobolev surrogates, the template ratio, the running guard, and the
/// forcing amplitude. The template columns stay empty on runs performed
/// without a template bundle.
pub fn series_csv(trace: &SimulationTrace) -> String {
    let mut out = String::from(
        "t,delta,delta_rate,delta_star,lp1,lp2,lp_inf,sobolev_surrogate,\
         weighted_surrogate,template_ratio,guard,forcing\n",
    );
    for (k, &t) in trace.times.iter().enumerate() {
        push_cells(
            &mut out,
            &[
                Some(t),
                Some(trace.phase[k]),
                Some(trace.phase_rate[k]),
                Some(trace.asymptotic_shift),
                Some(trace.lp1[k]),
                Some(trace.lp2[k]),
                Some(trace.lp_inf[k]),
                Some(trace.surrogate[k]),
                Some(trace.weighted_surrogate[k]),
                trace.ratio_sup.get(k).copied(),
                trace.guard.get(k).copied(),
                Some(trace.forcing[k]),
            ],
        );
    }
    out
}

/// One stored solution snapshot: `x`, the perturbation components, and the
/// components of the full state relative to the unshifted wave.
pub fn snapshot_csv(snap: &Snapshot) -> String {
    let n = snap.u.ncomp;
    let mut out = String::new();
    out.push('x');
    for c in 1..=n {
        let _ = write!(out, ",u{c}");
    }
    for c in 1..=n {
        let _ = write!(out, ",tilde{c}");
    }
    out.push('\n');
    let mut row = Vec::with_capacity(1 + 2 * n);
    for (i, x) in snap.u.grid.nodes().enumerate() {
        row.clear();
        row.push(x);
        row.extend_from_slice(snap.u.node(i));
        row.extend_from_slice(snap.tilde.node(i));
        push_row(&mut out, &row);
    }
    out
}

/// One phase path: time, value, rate.
pub fn phase_curve_csv(curve: &PhaseCurve) -> String {
    let mut out = String::from("t,delta,delta_rate\n");
    for (k, &t) in curve.times.iter().enumerate() {
        push_row(&mut out, &[t, curve.values[k], curve.rates[k]]);
    }
    out
}

/// Per-iterate summary of a nonlinear iteration run. The contraction column
/// is empty on the first iterate (no predecessor to compare against).
pub fn iteration_csv(records: &[IterationRecord]) -> String {
    let mut out = String::from(
        "n,shift,phase_at_zero,phase_at_horizon,path_diff,shift_diff,star_diff,\
         contraction,tail_mass\n",
    );
    for r in records {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},",
            r.n,
            fmt_float(r.output_shift),
            fmt_float(r.phase_at_zero),
            fmt_float(r.phase_at_horizon),
            fmt_float(r.path_diff),
            fmt_float(r.shift_diff),
            fmt_float(r.star_diff),
        );
        if let Some(a) = r.alpha_hat {
            out.push_str(&fmt_float(a));
        }
        let _ = writeln!(out, ",{}", fmt_float(r.tail_mass));
    }
    out
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// Write a text artifact, creating parent directories as needed.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Write a pretty-printed JSON document with a trailing newline.
pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("JSON serialization failed: {e}")))?;
    text.push('\n');
    write_text(path, &text)
}

/// Run manifest embedded next to every artifact set: tool identity and
/// version, the command, the full configuration echo, and any
/// command-specific extras. There is no randomness anywhere in the
/// pipeline, which the manifest records explicitly.
pub fn manifest(command: &str, cfg: &RunConfig, extras: Vec<(&str, Value)>) -> Value {
    let mut doc = serde_json::Map::new();
    doc.insert(
        "tool".into(),
        serde_json::json!({
            "name": "shockwork",
            "version": env!("CARGO_PKG_VERSION"),
        }),
    );
    doc.insert("command".into(), Value::String(command.into()));
    doc.insert("deterministic".into(), Value::Bool(true));
    doc.insert(
        "config".into(),
        serde_json::to_value(cfg).unwrap_or(Value::Null),
    );
    for (k, v) in extras {
        doc.insert(k.into(), v);
    }
    Value::Object(doc)
}

// ---------------------------------------------------------------------------
// SVG plots
// ---------------------------------------------------------------------------

/// One named curve of a line plot.
pub struct PlotSeries<'a> {
    pub label: &'a str,
    pub xs: &'a [f64],
    pub ys: &'a [f64],
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

const PLOT_W: f64 = 860.0;
const PLOT_H: f64 = 500.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 42.0;
const MARGIN_B: f64 = 54.0;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (1e-2..1e4).contains(&a) {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Evenly spaced tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
        .collect()
}

/// Minimal line plot. Log axes transform the data by `log10` and label the
/// ticks with the untransformed values; points that are non-finite (or not
/// positive under a log axis) are skipped, breaking the polyline there.
pub fn svg_line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[PlotSeries],
    log_x: bool,
    log_y: bool,
) -> Result<String> {
    if series.is_empty() {
        return Err(Error::Config("a plot needs at least one series".into()));
    }
    for s in series {
        if s.xs.len() != s.ys.len() {
            return Err(Error::Config(format!(
                "series `{}` has {} x values and {} y values",
                s.label,
                s.xs.len(),
                s.ys.len()
            )));
        }
    }
    let tx = |v: f64| if log_x { v.log10() } else { v };
    let ty = |v: f64| if log_y { v.log10() } else { v };
    let keep = |v: f64, log: bool| v.is_finite() && (!log || v > 0.0);

    let mut x_lo = f64::INFINITY;
    let mut x_hi = f64::NEG_INFINITY;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for s in series {
        for (&x, &y) in s.xs.iter().zip(s.ys) {
            if keep(x, log_x) && keep(y, log_y) {
                x_lo = x_lo.min(tx(x));
                x_hi = x_hi.max(tx(x));
                y_lo = y_lo.min(ty(y));
                y_hi = y_hi.max(ty(y));
            }
        }
    }
    if !(x_lo.is_finite() && y_lo.is_finite()) {
        return Err(Error::Config(
            "no representable data points remain after axis filtering".into(),
        ));
    }
    if x_hi - x_lo < 1e-300 {
        x_lo -= 1.0;
        x_hi += 1.0;
    }
    if y_hi - y_lo < 1e-300 {
        y_lo -= 1.0;
        y_hi += 1.0;
    }
    let x_pad = 0.03 * (x_hi - x_lo);
    let y_pad = 0.06 * (y_hi - y_lo);
    x_lo -= x_pad;
    x_hi += x_pad;
    y_lo -= y_pad;
    y_hi += y_pad;

    let px = |v: f64| MARGIN_L + (v - x_lo) / (x_hi - x_lo) * (PLOT_W - MARGIN_L - MARGIN_R);
    let py = |v: f64| PLOT_H - MARGIN_B - (v - y_lo) / (y_hi - y_lo) * (PLOT_H - MARGIN_T - MARGIN_B);
    let untx = |v: f64| if log_x { 10f64.powf(v) } else { v };
    let unty = |v: f64| if log_y { 10f64.powf(v) } else { v };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" \
         viewBox=\"0 0 {PLOT_W} {PLOT_H}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        PLOT_W / 2.0,
        xml_escape(title)
    );

    // Grid and ticks.
    for v in ticks(x_lo + x_pad, x_hi - x_pad, 6) {
        let x = px(v);
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#dddddd\"/>",
            MARGIN_T,
            PLOT_H - MARGIN_B
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            PLOT_H - MARGIN_B + 18.0,
            xml_escape(&fmt_tick(untx(v)))
        );
    }
    for v in ticks(y_lo + y_pad, y_hi - y_pad, 6) {
        let y = py(v);
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>",
            MARGIN_L,
            PLOT_W - MARGIN_R
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            MARGIN_L - 8.0,
            y + 4.0,
            xml_escape(&fmt_tick(unty(v)))
        );
    }
    let _ = writeln!(
        svg,
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{:.2}\" height=\"{:.2}\" \
         fill=\"none\" stroke=\"black\"/>",
        PLOT_W - MARGIN_L - MARGIN_R,
        PLOT_H - MARGIN_T - MARGIN_B
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        MARGIN_L + (PLOT_W - MARGIN_L - MARGIN_R) / 2.0,
        PLOT_H - 12.0,
        xml_escape(x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" \
         transform=\"rotate(-90 18 {:.2})\">{}</text>",
        PLOT_H / 2.0,
        PLOT_H / 2.0,
        xml_escape(y_label)
    );

    // Curves: one polyline per contiguous run of representable points.
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut points = String::new();
        let flush = |pts: &mut String, svg: &mut String| {
            if pts.contains(' ') {
                let _ = writeln!(
                    svg,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
                     stroke-width=\"1.6\"/>",
                    pts.trim_end()
                );
            }
            pts.clear();
        };
        for (&x, &y) in s.xs.iter().zip(s.ys) {
            if keep(x, log_x) && keep(y, log_y) {
                let _ = write!(points, "{:.2},{:.2} ", px(tx(x)), py(ty(y)));
            } else {
                flush(&mut points, &mut svg);
            }
        }
        flush(&mut points, &mut svg);
        // Legend entry.
        let ly = MARGIN_T + 16.0 + 18.0 * si as f64;
        let lx = PLOT_W - MARGIN_R - 160.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>",
            lx + 26.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            lx + 32.0,
            ly + 4.0,
            xml_escape(s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn lerp_color(t: f64) -> String {
    let lo = (0x12, 0x3a, 0x6b);
    let hi = (0xf3, 0xd5, 0x4e);
    let c = |a: i32, b: i32| -> i32 { a + ((b - a) as f64 * t).round() as i32 };
    format!(
        "#{:02x}{:02x}{:02x}",
        c(lo.0, hi.0),
        c(lo.1, hi.1),
        c(lo.2, hi.2)
    )
}

/// Heat strip: one colored row per time, colored cells over `x`. `values`
/// is row-major with `ts.len()` rows of `xs.len()` cells; non-finite cells
/// render as white. Intended for modest column counts (downsample first).
pub fn svg_heat_strip(
    title: &str,
    xs: &[f64],
    ts: &[f64],
    values: &[f64],
    value_label: &str,
) -> Result<String> {
    if xs.is_empty() || ts.is_empty() || values.len() != xs.len() * ts.len() {
        return Err(Error::Config(format!(
            "heat strip needs len(values) = len(xs) * len(ts); got {} vs {} * {}",
            values.len(),
            xs.len(),
            ts.len()
        )));
    }
    let finite: Vec<f64> = values.iter().cloned().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::Config("heat strip has no finite values".into()));
    }
    let v_lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let v_hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if v_hi > v_lo { v_hi - v_lo } else { 1.0 };

    let bar_w = 70.0;
    let grid_w = PLOT_W - MARGIN_L - MARGIN_R - bar_w;
    let grid_h = PLOT_H - MARGIN_T - MARGIN_B;
    let cw = grid_w / xs.len() as f64;
    let ch = grid_h / ts.len() as f64;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" \
         viewBox=\"0 0 {PLOT_W} {PLOT_H}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        PLOT_W / 2.0,
        xml_escape(title)
    );
    for (row, _) in ts.iter().enumerate() {
        // Later times render lower: row 0 sits at the top.
        let y = MARGIN_T + row as f64 * ch;
        for (col, _) in xs.iter().enumerate() {
            let v = values[row * xs.len() + col];
            let color = if v.is_finite() {
                lerp_color((v - v_lo) / span)
            } else {
                "#ffffff".to_string()
            };
            let x = MARGIN_L + col as f64 * cw;
            let _ = writeln!(
                svg,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" \
                 fill=\"{color}\"/>",
                cw + 0.5,
                ch + 0.5
            );
        }
    }
    // Row labels: first, middle, last time.
    for row in [0, ts.len() / 2, ts.len() - 1] {
        let y = MARGIN_T + (row as f64 + 0.5) * ch;
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">t={}</text>",
            MARGIN_L - 8.0,
            y + 4.0,
            xml_escape(&fmt_tick(ts[row]))
        );
    }
    // Column labels: first, middle, last position.
    for col in [0, xs.len() / 2, xs.len() - 1] {
        let x = MARGIN_L + (col as f64 + 0.5) * cw;
        let _ = writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">x={}</text>",
            PLOT_H - MARGIN_B + 18.0,
            xml_escape(&fmt_tick(xs[col]))
        );
    }
    // Color bar.
    let bx = PLOT_W - MARGIN_R - bar_w + 20.0;
    let steps = 24;
    for k in 0..steps {
        let t = k as f64 / (steps - 1) as f64;
        let y = MARGIN_T + grid_h * (1.0 - t) - grid_h / steps as f64;
        let _ = writeln!(
            svg,
            "<rect x=\"{bx:.2}\" y=\"{y:.2}\" width=\"16\" height=\"{:.2}\" fill=\"{}\"/>",
            grid_h / steps as f64 + 0.5,
            lerp_color(t)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
        bx + 22.0,
        MARGIN_T + 10.0,
        xml_escape(&fmt_tick(v_hi))
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
        bx + 22.0,
        MARGIN_T + grid_h,
        xml_escape(&fmt_tick(v_lo))
    );
    let _ = writeln!(
        svg,
        "<text x=\"{bx:.2}\" y=\"{:.2}\">{}</text>",
        PLOT_H - MARGIN_B + 18.0,
        xml_escape(value_label)
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Average a per-node table down to at most `max_cols` columns for plotting;
/// returns the block-mean positions and values. `values` has one row of
/// `xs.len()` entries per row of `rows`.
pub fn downsample_columns(
    xs: &[f64],
    rows: &[Vec<f64>],
    max_cols: usize,
) -> (Vec<f64>, Vec<f64>) {
    let n = xs.len();
    let block = n.div_ceil(max_cols.max(1));
    let cols = n.div_ceil(block);
    let mut out_x = Vec::with_capacity(cols);
    for c in 0..cols {
        let lo = c * block;
        let hi = ((c + 1) * block).min(n);
        out_x.push(xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64);
    }
    let mut out_v = Vec::with_capacity(cols * rows.len());
    for row in rows {
        for c in 0..cols {
            let lo = c * block;
            let hi = ((c + 1) * block).min(n);
            out_v.push(row[lo..hi].iter().sum::<f64>() / (hi - lo) as f64);
        }
    }
    (out_x, out_v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{simulate, EvolveOpts};
    use crate::model::{classify_shock, Burgers};
    use crate::profile::{solve_profile, ProfileOpts};

    fn tiny_profile() -> Profile {
        let ends = classify_shock(&Burgers, &[1.0], &[-1.0]).unwrap();
        solve_profile(
            &Burgers,
            &ends,
            &ProfileOpts {
                half_width: 12.0,
                dx: 0.1,
            },
        )
        .unwrap()
    }

    #[test]
    fn float_formatting_is_canonical_and_round_trips() {
        assert_eq!(fmt_float(0.0), "0");
        assert_eq!(fmt_float(-0.0), "0");
        assert_eq!(fmt_float(0.25), "0.25");
        assert_eq!(fmt_float(1e-7), "1e-7");
        assert_eq!(fmt_float(-3.5e8), "-3.5e8");
        assert_eq!(fmt_float(1e-4), "0.0001");
        for v in [
            0.30000000000000004,
            -1.7e-12,
            9.999999999e6,
            1.0 / 3.0,
            2f64.powi(-40),
        ] {
            let s = fmt_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "representation {s}");
        }
    }

    #[test]
    fn profile_table_has_header_and_one_row_per_node() {
        let profile = tiny_profile();
        let csv = profile_csv(&profile);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "x,u1,du1");
        assert_eq!(csv.lines().count(), profile.grid.len + 1);
        let first: Vec<f64> = csv
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(first[0], profile.grid.x0);
    }

    #[test]
    fn series_and_snapshot_tables_match_the_trace() {
        let profile = tiny_profile();
        let tilde0 = crate::grid::Field::from_fn(profile.grid, 1, |x, out| {
            profile.eval_into(x, out);
            out[0] += 1e-3 * (-x * x).exp();
        });
        let opts = EvolveOpts {
            dt: 0.01,
            t_max: 0.5,
            sample_stride: 10,
            snapshot_times: vec![0.2],
            ..EvolveOpts::default()
        };
        let trace = simulate(&Burgers, &profile, None, &tilde0, &opts).unwrap();
        let csv = series_csv(&trace);
        assert_eq!(csv.lines().count(), trace.times.len() + 1);
        assert!(csv.lines().next().unwrap().starts_with("t,delta,delta_rate,delta_star"));

        assert_eq!(trace.snapshots.len(), 1);
        let snap_csv = snapshot_csv(&trace.snapshots[0]);
        assert_eq!(snap_csv.lines().count(), profile.grid.len + 1);
        assert_eq!(snap_csv.lines().next().unwrap(), "x,u1,tilde1");
    }

    #[test]
    fn line_plot_is_well_formed_and_skips_unrepresentable_points() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys_a = [0.5, 0.25, 0.125, 0.0625];
        let ys_b = [1.0, 0.0, -1.0, 2.0];
        let svg = svg_line_plot(
            "norm decay",
            "t",
            "norm",
            &[
                PlotSeries { label: "first", xs: &xs, ys: &ys_a },
                PlotSeries { label: "second", xs: &xs, ys: &ys_b },
            ],
            true,
            true,
        )
        .unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("first") && svg.contains("second"));
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
        // The second series has nonpositive values under the log axis, so it
        // splits into disconnected segments; single points are dropped.
        assert!(svg.matches("<polyline").count() >= 1);

        let empty = svg_line_plot(
            "empty",
            "t",
            "v",
            &[PlotSeries { label: "z", xs: &xs, ys: &[-1.0, -2.0, -3.0, -4.0] }],
            false,
            true,
        );
        assert!(empty.is_err());
    }

    #[test]
    fn heat_strip_validates_dimensions_and_colors_cells() {
        let xs = [0.0, 1.0, 2.0];
        let ts = [1.0, 2.0];
        let bad = svg_heat_strip("ratio", &xs, &ts, &[1.0; 5], "v");
        assert!(bad.is_err());
        let svg = svg_heat_strip("ratio", &xs, &ts, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], "v").unwrap();
        // Six cells plus the background and color-bar rectangles.
        assert!(svg.matches("<rect").count() >= 6 + 1 + 24);
        assert!(svg.contains("t=1") && svg.contains("x=2"));
    }

    #[test]
    fn downsampling_preserves_block_means() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let row: Vec<f64> = (0..10).map(|i| (i as f64) * 2.0).collect();
        let (cx, cv) = downsample_columns(&xs, &[row], 5);
        assert_eq!(cx.len(), 5);
        assert_eq!(cx[0], 0.5);
        assert_eq!(cv[0], 1.0);
        assert_eq!(cv[4], 17.0);
    }

    #[test]
    fn json_manifest_records_tool_and_config() {
        let cfg = RunConfig::from_toml("[model]\nkind = \"burgers\"\n").unwrap();
        let doc = manifest(
            "simulate",
            &cfg,
            vec![("grid_nodes", serde_json::json!(481))],
        );
        assert_eq!(doc["tool"]["name"], "shockwork");
        assert_eq!(doc["command"], "simulate");
        assert_eq!(doc["config"]["model"]["kind"], "burgers");
        assert_eq!(doc["grid_nodes"], 481);
        assert!(doc["tool"]["version"].as_str().unwrap().contains('.'));

        let dir = std::env::temp_dir().join(format!("shockwork-io-test-{}", std::process::id()));
        let path = dir.join("manifest.json");
        write_json(&path, &doc).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.ends_with('\n'));
        let back: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back, doc);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn iteration_table_leaves_the_first_contraction_empty() {
        use crate::evolution::{run_iteration, PhaseCurve};
        use crate::templates::TemplateBundle;
        let profile = tiny_profile();
        let bundle = TemplateBundle::new(&Burgers, &profile).unwrap();
        let tilde0 = crate::grid::Field::from_fn(profile.grid, 1, |x, out| {
            profile.eval_into(x, out);
            out[0] += 1e-3 / x.cosh();
        });
        let opts = EvolveOpts {
            dt: 0.02,
            t_max: 2.0,
            sample_stride: 10,
            ..EvolveOpts::default()
        };
        let records = run_iteration(
            &Burgers,
            &profile,
            &bundle,
            &tilde0,
            &PhaseCurve::zero(2.0),
            0.0,
            2,
            &opts,
        )
        .unwrap();
        let csv = iteration_csv(&records);
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows.len(), 3);
        let first_fields: Vec<&str> = rows[1].split(',').collect();
        assert_eq!(first_fields[7], "", "first iterate has no contraction ratio");
        let second_fields: Vec<&str> = rows[2].split(',').collect();
        assert!(second_fields[7].parse::<f64>().is_ok());
    }
}
