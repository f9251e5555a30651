//! Learning curves and Pareto scatter plots rendered straight to SVG, with
//! seeded percentile-bootstrap confidence bands over seeds.

use std::fmt::Write as _;

use pegrad_core::MetricsLog;
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::run::ParetoPoint;

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

/// Mean of `xs` with a 95% percentile-bootstrap interval from `resamples`
/// resamples drawn with `rng`. A single sample gives a zero-width interval.
pub fn bootstrap_ci(xs: &[f64], resamples: usize, rng: &mut ChaCha8Rng) -> Interval {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 || resamples == 0 {
        return Interval { mean, low: mean, high: mean };
    }
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| xs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Interval {
        mean,
        low: at(0.025),
        high: at(0.975),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveMetric {
    Return,
    Energy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub steps: Vec<u64>,
    pub bands: Vec<Interval>,
}

/// Aggregates one label's evaluation curves over seeds. Only steps present
/// in every seed's log are kept.
pub fn aggregate_curve(label: &str, logs: &[MetricsLog], metric: CurveMetric, rng: &mut ChaCha8Rng) -> Curve {
    let series: Vec<Vec<(u64, f64)>> = logs
        .iter()
        .map(|log| {
            log.rows()
                .iter()
                .filter_map(|r| {
                    let v = match metric {
                        CurveMetric::Return => r.eval_return_mean,
                        CurveMetric::Energy => r.eval_energy_mean,
                    };
                    v.map(|v| (r.global_step, v))
                })
                .collect()
        })
        .collect();
    let mut steps: Vec<u64> = series.first().map(|s| s.iter().map(|p| p.0).collect()).unwrap_or_default();
    steps.retain(|st| series.iter().all(|s| s.iter().any(|p| p.0 == *st)));
    let bands = steps
        .iter()
        .map(|st| {
            let xs: Vec<f64> = series
                .iter()
                .map(|s| s.iter().find(|p| p.0 == *st).expect("step retained").1)
                .collect();
            bootstrap_ci(&xs, BOOTSTRAP_RESAMPLES, rng)
        })
        .collect();
    Curve {
        label: label.to_string(),
        steps,
        bands,
    }
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 180.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn open(title: &str, x_label: &str, y_label: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        escape(title)
    );
    let (left, right, top, bottom) = (MARGIN_L, WIDTH - MARGIN_R, MARGIN_T, HEIGHT - MARGIN_B);
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        right - left,
        bottom - top
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = f.x0 + t * (f.x1 - f.x0);
        let yv = f.y0 + t * (f.y1 - f.y0);
        let (xp, yp) = (f.px(xv), f.py(yv));
        let _ = writeln!(
            s,
            r##"<line x1="{xp:.1}" y1="{bottom}" x2="{xp:.1}" y2="{:.1}" stroke="#333"/><text x="{xp:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
            bottom + 5.0,
            bottom + 18.0,
            tick_label(xv)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{yp:.1}" x2="{left}" y2="{yp:.1}" stroke="#333"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            left - 5.0,
            left - 8.0,
            yp + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (left + right) / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        escape(y_label)
    );
    s
}

fn legend(s: &mut String, labels: &[String]) {
    for (i, label) in labels.iter().enumerate() {
        let y = MARGIN_T + 10.0 + 18.0 * i as f64;
        let x = WIDTH - MARGIN_R + 12.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            y - 10.0,
            PALETTE[i % PALETTE.len()],
            x + 18.0,
            y,
            escape(label)
        );
    }
}

/// Mean curves with shaded 95% bootstrap bands.
pub fn curves_svg(title: &str, y_label: &str, curves: &[Curve]) -> String {
    let f = Frame::new(
        curves.iter().flat_map(|c| c.steps.iter().map(|&s| s as f64)),
        curves.iter().flat_map(|c| c.bands.iter().flat_map(|b| [b.low, b.high])),
    );
    let mut s = open(title, "environment steps", y_label, &f);
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts = |sel: fn(&Interval) -> f64| -> Vec<String> {
            c.steps
                .iter()
                .zip(&c.bands)
                .map(|(&st, b)| format!("{:.2},{:.2}", f.px(st as f64), f.py(sel(b))))
                .collect()
        };
        let mut band = pts(|b| b.high);
        band.extend(pts(|b| b.low).into_iter().rev());
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts(|b| b.mean).join(" ")
        );
    }
    legend(&mut s, &curves.iter().map(|c| c.label.clone()).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Per-seed points (small) and per-label means (large, ringed when
/// nondominated) in the energy/return plane.
pub fn pareto_svg(title: &str, points: &[ParetoPoint]) -> String {
    let f = Frame::new(
        points.iter().flat_map(|p| p.seed_energies.iter().copied()),
        points.iter().flat_map(|p| p.seed_returns.iter().copied()),
    );
    let mut s = open(title, "evaluation energy (lower is better)", "evaluation return", &f);
    for (i, p) in points.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for (e, r) in p.seed_energies.iter().zip(&p.seed_returns) {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" fill-opacity="0.5"/>"#,
                f.px(*e),
                f.py(*r)
            );
        }
        let stroke = if p.nondominated { "black" } else { "none" };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="7" fill="{color}" stroke="{stroke}" stroke-width="2"/>"#,
            f.px(p.energy_mean),
            f.py(p.return_mean)
        );
    }
    legend(&mut s, &points.iter().map(|p| p.label.clone()).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

pub fn bootstrap_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pegrad_core::MetricsRow;

    #[test]
    fn bootstrap_is_seeded_and_brackets_the_mean() {
        let xs = [1.0, 2.0, 3.0, 4.0, 10.0];
        let a = bootstrap_ci(&xs, 1000, &mut bootstrap_rng(7));
        let b = bootstrap_ci(&xs, 1000, &mut bootstrap_rng(7));
        assert_eq!(a, b);
        assert_eq!(a.mean, 4.0);
        assert!(a.low <= a.mean && a.mean <= a.high);
        assert!(a.low >= 1.0 && a.high <= 10.0);
        let one = bootstrap_ci(&[3.0], 1000, &mut bootstrap_rng(0));
        assert_eq!((one.low, one.high), (3.0, 3.0));
    }

    #[test]
    fn curves_keep_only_shared_steps() {
        let log = |steps: &[u64]| {
            let mut l = MetricsLog::new();
            for &s in steps {
                let mut r = MetricsRow::new(s);
                r.eval_return_mean = Some(s as f64);
                r.eval_energy_mean = Some(1.0);
                l.push(r).unwrap();
            }
            l
        };
        let c = aggregate_curve("x", &[log(&[10, 20, 30]), log(&[10, 30])], CurveMetric::Return, &mut bootstrap_rng(0));
        assert_eq!(c.steps, vec![10, 30]);
        assert_eq!(c.bands[1].mean, 30.0);
        let svg = curves_svg("t", "return", &[c]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<polyline"));
    }
}
