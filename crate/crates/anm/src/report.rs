//! Result tables and SVG plots. Every function here is a pure function of
//! its inputs: the same reports render to the same bytes.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::harness::{RunReport, StepRecord, Timing, REPORT_FORMAT};

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub policy: String,
    pub label: String,
    pub expected_return: f64,
    pub std_error: f64,
    pub violation_pct: f64,
    pub fallback_pct: f64,
    pub completed_runs: usize,
    pub failed_runs: usize,
    /// Mean planner seconds per step, when timings are available.
    pub mean_solve_s: Option<f64>,
    pub mean_evaluations: f64,
}

/// Checks that reports can be compared: same format, same run and step
/// counts, no duplicate `(policy, label)` pair.
pub fn check_compatible(reports: &[RunReport]) -> Result<()> {
    let Some(first) = reports.first() else {
        return Err(Error::Argument("no reports given".into()));
    };
    let mut seen = BTreeSet::new();
    for r in reports {
        if r.format != REPORT_FORMAT {
            return Err(Error::Argument(format!("report format `{}`, expected `{REPORT_FORMAT}`", r.format)));
        }
        if (r.config.runs, r.config.steps) != (first.config.runs, first.config.steps) {
            return Err(Error::Argument(format!(
                "reports mix protocols: {}x{} and {}x{} (runs x steps)",
                first.config.runs, first.config.steps, r.config.runs, r.config.steps
            )));
        }
        if !seen.insert((r.policy.to_string(), r.label.clone())) {
            return Err(Error::Argument(format!("duplicate report for {} / {}", r.policy, r.label)));
        }
    }
    Ok(())
}

/// Rows in input order. `timings[i]`, when given, belongs to `reports[i]`.
pub fn rows(reports: &[RunReport], timings: &[Option<Timing>]) -> Vec<Row> {
    reports
        .iter()
        .enumerate()
        .map(|(i, r)| Row {
            policy: r.policy.to_string(),
            label: r.label.clone(),
            expected_return: r.expected_return,
            std_error: r.std_error,
            violation_pct: r.violation_pct,
            fallback_pct: r.fallback_pct,
            completed_runs: r.completed_runs,
            failed_runs: r.failed_runs.len(),
            mean_solve_s: timings.get(i).and_then(|t| t.as_ref()).map(Timing::mean),
            mean_evaluations: r.mean_evaluations_per_step,
        })
        .collect()
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.prec$}"))
}

pub fn markdown_table(rows: &[Row]) -> String {
    let mut s = String::new();
    s.push_str("| policy | flexibility | expected return | std. error | violation periods (%) | fallback (%) | runs | failed | solver time (s) |\n");
    s.push_str("|---|---|---:|---:|---:|---:|---:|---:|---:|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {:.1} | {:.1} | {:.2} | {:.2} | {} | {} | {} |",
            r.policy,
            r.label,
            r.expected_return,
            r.std_error,
            r.violation_pct,
            r.fallback_pct,
            r.completed_runs,
            r.failed_runs,
            opt(r.mean_solve_s, 3)
        );
    }
    s
}

pub fn csv_table(rows: &[Row]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "policy",
        "flexibility",
        "expected_return",
        "std_error",
        "violation_pct",
        "fallback_pct",
        "completed_runs",
        "failed_runs",
        "mean_solve_s",
        "mean_evaluations",
    ])
    .expect("in memory");
    for r in rows {
        w.write_record([
            r.policy.clone(),
            r.label.clone(),
            r.expected_return.to_string(),
            r.std_error.to_string(),
            r.violation_pct.to_string(),
            r.fallback_pct.to_string(),
            r.completed_runs.to_string(),
            r.failed_runs.to_string(),
            r.mean_solve_s.map_or_else(String::new, |v| v.to_string()),
            r.mean_evaluations.to_string(),
        ])
        .expect("in memory");
    }
    w.into_inner().expect("in memory")
}

/// Round tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|k| k as f64 * step).collect()
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let d = lo.abs().max(1.0) * 0.05;
        return (lo - d, hi + d);
    }
    let d = (hi - lo) * 0.08;
    (lo - d, hi + d)
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// A rectangular plotting area with linear axes.
struct Panel {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Panel {
    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }

    fn axes(&self, s: &mut String, xlabel: &str, ylabel: &str, xticks: bool) {
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333"/>"##,
            self.x0, self.y0, self.w, self.h
        );
        if xticks {
            for t in ticks(self.xr.0, self.xr.1, 6) {
                let x = self.px(t);
                let _ = writeln!(
                    s,
                    r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"##,
                    self.y0 + self.h,
                    self.y0 + self.h + 4.0,
                    self.y0 + self.h + 16.0,
                    fmt_tick(t)
                );
            }
        }
        for t in ticks(self.yr.0, self.yr.1, 5) {
            let y = self.py(t);
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"##,
                self.x0,
                self.x0 + self.w,
                self.x0 - 5.0,
                y + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"##,
            self.x0 + self.w / 2.0,
            self.y0 + self.h + 32.0,
            esc(xlabel)
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"##,
            self.x0 - 48.0,
            self.y0 + self.h / 2.0,
            self.x0 - 48.0,
            self.y0 + self.h / 2.0,
            esc(ylabel)
        );
    }

    fn polyline(&self, s: &mut String, xs: &[f64], ys: &[f64], color: &str, dashed: bool) {
        let pts: Vec<String> = xs.iter().zip(ys).map(|(x, y)| format!("{:.2},{:.2}", self.px(*x), self.py(*y))).collect();
        let dash = if dashed { r##" stroke-dasharray="5,4""## } else { "" };
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"##, pts.join(" "));
    }
}

fn svg_open(w: f64, h: f64, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"##);
    let _ = writeln!(s, r##"<rect width="{w}" height="{h}" fill="white"/>"##);
    let _ = writeln!(s, r##"<text x="{:.1}" y="20" font-size="14" text-anchor="middle">{}</text>"##, w / 2.0, esc(title));
    s
}

/// Expected return against mean solver effort, one marker per row. The x
/// axis is planner seconds per step when every row has timings, otherwise
/// function evaluations per step.
pub fn return_vs_time_svg(rows: &[Row]) -> String {
    let timed = !rows.is_empty() && rows.iter().all(|r| r.mean_solve_s.is_some());
    let xs: Vec<f64> = rows.iter().map(|r| if timed { r.mean_solve_s.unwrap_or(0.0) } else { r.mean_evaluations }).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.expected_return).collect();
    let fold = |v: &[f64]| v.iter().filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let (xlo, xhi) = fold(&xs);
    let (ylo, yhi) = fold(&ys);
    let p = Panel { x0: 80.0, y0: 40.0, w: 440.0, h: 300.0, xr: padded(xlo.min(0.0), xhi), yr: padded(ylo, yhi) };
    let mut s = svg_open(720.0, 400.0, "Expected return vs. mean solver effort");
    p.axes(&mut s, if timed { "mean solver time per step (s)" } else { "mean function evaluations per step" }, "expected return", true);
    for (i, r) in rows.iter().enumerate() {
        if !(xs[i].is_finite() && ys[i].is_finite()) {
            continue;
        }
        let c = PALETTE[i % PALETTE.len()];
        let (x, y) = (p.px(xs[i]), p.py(ys[i]));
        let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="{c}"/>"##);
        if r.std_error > 0.0 {
            let (a, b) = (p.py(ys[i] - r.std_error), p.py(ys[i] + r.std_error));
            let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{a:.2}" x2="{x:.2}" y2="{b:.2}" stroke="{c}"/>"##);
        }
        let ly = 50.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r##"<circle cx="540" cy="{:.2}" r="5" fill="{c}"/><text x="550" y="{:.2}" font-size="11">{} / {}</text>"##,
            ly,
            ly + 4.0,
            esc(&r.policy),
            esc(&r.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Quartiles by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (i, f) = (pos.floor() as usize, pos - pos.floor());
    if i + 1 < sorted.len() {
        sorted[i] + f * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Box plot statistics with whiskers at the most extreme samples within
/// 1.5 IQR of the quartiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub lo_whisker: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub hi_whisker: f64,
}

pub fn box_stats(samples: &[f64]) -> Option<BoxStats> {
    let mut v: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    let iqr = q3 - q1;
    let lo_whisker = v.iter().copied().find(|x| *x >= q1 - 1.5 * iqr).unwrap_or(q1);
    let hi_whisker = v.iter().rev().copied().find(|x| *x <= q3 + 1.5 * iqr).unwrap_or(q3);
    Some(BoxStats { lo_whisker, q1, median, q3, hi_whisker })
}

/// Distribution of per-step planner effort for each `(name, samples)`.
pub fn solve_time_svg(series: &[(String, Vec<f64>)], unit: &str) -> String {
    let stats: Vec<Option<BoxStats>> = series.iter().map(|(_, v)| box_stats(v)).collect();
    let hi = stats.iter().flatten().map(|b| b.hi_whisker).fold(0.0, f64::max);
    let n = series.len().max(1) as f64;
    let w = (120.0 + 90.0 * n).max(400.0);
    let p = Panel { x0: 80.0, y0: 40.0, w: w - 110.0, h: 280.0, xr: (0.0, n), yr: padded(0.0, hi) };
    let mut s = svg_open(w, 400.0, "Distribution of planner solution time");
    p.axes(&mut s, "", unit, false);
    for (i, ((name, _), st)) in series.iter().zip(&stats).enumerate() {
        let cx = p.px(i as f64 + 0.5);
        let _ = writeln!(
            s,
            r##"<text x="{cx:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"##,
            p.y0 + p.h + 16.0,
            esc(name)
        );
        let Some(b) = st else { continue };
        let c = PALETTE[i % PALETTE.len()];
        let half = 0.3 * p.w / n;
        let _ = writeln!(
            s,
            r##"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{c}"/>"##,
            p.py(b.lo_whisker),
            p.py(b.hi_whisker)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="white" stroke="{c}"/>"##,
            cx - half,
            p.py(b.q3),
            2.0 * half,
            (p.py(b.q1) - p.py(b.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{c}" stroke-width="2"/>"##,
            cx - half,
            p.py(b.median),
            cx + half,
            p.py(b.median)
        );
    }
    let _ = writeln!(s, r##"<text x="{:.2}" y="385" font-size="11" text-anchor="end">Outliers are not shown.</text>"##, w - 20.0);
    s.push_str("</svg>\n");
    s
}

/// Four stacked panels of one run: bus voltage envelope, peak link loading,
/// generation and consumption, and the instantaneous cost.
pub fn trace_svg(title: &str, records: &[StepRecord], v_limits: (f64, f64)) -> String {
    let xs: Vec<f64> = records.iter().map(|r| r.step as f64 + 1.0).collect();
    let xr = if xs.is_empty() { (0.0, 1.0) } else { (0.0, xs[xs.len() - 1].max(1.0)) };
    let col = |f: &dyn Fn(&StepRecord) -> f64| records.iter().map(f).collect::<Vec<f64>>();
    let range = |vs: &[&[f64]]| {
        let (a, b) = vs.iter().flat_map(|v| v.iter()).filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        padded(a, b)
    };
    let mut s = svg_open(720.0, 860.0, title);
    let panel = |k: usize, yr: (f64, f64)| Panel { x0: 80.0, y0: 40.0 + 205.0 * k as f64, w: 600.0, h: 160.0, xr, yr };

    let (vlo, vhi) = (col(&|r| r.v_min), col(&|r| r.v_max));
    let lim_lo = vec![v_limits.0; xs.len()];
    let lim_hi = vec![v_limits.1; xs.len()];
    let p = panel(0, range(&[&vlo, &vhi, &lim_lo, &lim_hi]));
    p.axes(&mut s, "", "voltage (p.u.)", true);
    p.polyline(&mut s, &xs, &vhi, PALETTE[1], false);
    p.polyline(&mut s, &xs, &vlo, PALETTE[0], false);
    p.polyline(&mut s, &xs, &lim_hi, "#777", true);
    p.polyline(&mut s, &xs, &lim_lo, "#777", true);

    let load = col(&|r| r.max_loading);
    let unit = vec![1.0; xs.len()];
    let p = panel(1, range(&[&load, &unit]));
    p.axes(&mut s, "", "max |I| / I_max", true);
    p.polyline(&mut s, &xs, &load, PALETTE[2], false);
    p.polyline(&mut s, &xs, &unit, "#777", true);

    let (gen, pot, cons) = (col(&|r| r.generation_mw), col(&|r| r.potential_mw), col(&|r| r.load_mw));
    let p = panel(2, range(&[&gen, &pot, &cons]));
    p.axes(&mut s, "", "MW", true);
    p.polyline(&mut s, &xs, &pot, PALETTE[3], true);
    p.polyline(&mut s, &xs, &gen, PALETTE[3], false);
    p.polyline(&mut s, &xs, &cons, PALETTE[4], false);

    let cost = col(&|r| -r.reward);
    let p = panel(3, range(&[&cost, &[0.0]]));
    p.axes(&mut s, "period", "cost", true);
    p.polyline(&mut s, &xs, &cost, PALETTE[5], false);

    let legend = [
        (PALETTE[1], "highest bus voltage"),
        (PALETTE[0], "lowest bus voltage"),
        (PALETTE[2], "peak link loading"),
        (PALETTE[3], "generation (dashed: potential)"),
        (PALETTE[4], "consumption"),
        (PALETTE[5], "instantaneous cost"),
    ];
    for (i, (c, name)) in legend.iter().enumerate() {
        let x = 80.0 + 200.0 * (i % 3) as f64;
        let y = 835.0 + 14.0 * (i / 3) as f64 - 14.0;
        let _ = writeln!(s, r##"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{c}"/><text x="{:.1}" y="{:.1}" font-size="11">{name}</text>"##, y - 9.0, x + 14.0, y);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_inside() {
        let t = ticks(0.0, 1.0, 5);
        assert_eq!(t.len(), 6);
        assert!(t.iter().enumerate().all(|(k, v)| (v - 0.2 * k as f64).abs() < 1e-12));
        let t = ticks(-723.0, -61.0, 5);
        assert!(t.iter().all(|v| (-723.0..=-61.0).contains(v)));
        assert_eq!(t[1] - t[0], 200.0);
    }

    #[test]
    fn quartiles_match_hand_computation() {
        let b = box_stats(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (2.0, 3.0, 4.0));
        assert_eq!(b.lo_whisker, 1.0);
        // 100 lies beyond q3 + 1.5 IQR = 7
        assert_eq!(b.hi_whisker, 4.0);
        assert!(box_stats(&[]).is_none());
    }

    #[test]
    fn tick_labels_trim_zeros() {
        assert_eq!(fmt_tick(0.5), "0.5");
        assert_eq!(fmt_tick(-200.0), "-200");
        assert_eq!(fmt_tick(-0.00001), "0");
    }
}
