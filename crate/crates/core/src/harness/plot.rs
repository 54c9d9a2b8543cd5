//! Self-contained SVG figures: per-ward trend lines and scatter plots with an
//! OLS fit.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{min_max_scale, ColumnKind, FeatureSchema, JoinedRow};
use crate::error::{Error, Result};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 450.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 70.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const WARD_COLOUR: &str = "#b8b8b8";
const MEAN_COLOUR: &str = "#1f77b4";

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Linear map from a data interval onto a pixel interval. Degenerate data
/// ranges are widened so constant series draw as a flat line mid-axis.
#[derive(Debug, Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> Scale {
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
            (lo - pad, hi + pad)
        };
        Scale { lo, hi, px_lo, px_hi }
    }

    fn px(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }

    fn ticks(&self, count: usize) -> Vec<f64> {
        (0..=count)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / count as f64)
            .collect()
    }
}

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn y_axis(out: &mut String, scale: &Scale, x: f64, right: bool, label: &str, colour: &str) {
    let _ = writeln!(
        out,
        r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{colour}"/>"#,
        scale.px_lo, scale.px_hi
    );
    let (dx, anchor) = if right { (6.0, "start") } else { (-6.0, "end") };
    for t in scale.ticks(5) {
        let y = scale.px(t);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="{anchor}" fill="{colour}">{}</text>"#,
            x + dx,
            y + 4.0,
            format_tick(t)
        );
    }
    let lx = if right { WIDTH - 15.0 } else { 15.0 };
    let mid = (scale.px_lo + scale.px_hi) / 2.0;
    let _ = writeln!(
        out,
        r#"<text x="{lx:.2}" y="{mid:.2}" text-anchor="middle" fill="{colour}" transform="rotate(-90 {lx:.2} {mid:.2})">{}</text>"#,
        escape(label)
    );
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

fn polyline(points: impl Iterator<Item = (f64, f64)>) -> String {
    points
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WardSeries {
    pub ward: String,
    pub points: Vec<(i32, f64)>,
}

/// One column over time: a line per ward plus the cross-ward yearly mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendPlot {
    pub column: String,
    pub years: Vec<i32>,
    pub wards: Vec<WardSeries>,
    pub mean: Vec<(i32, f64)>,
}

pub fn trend_plot(rows: &[JoinedRow], schema: &FeatureSchema, column: &str) -> Result<TrendPlot> {
    match schema.column(column).map(|c| c.kind) {
        Some(ColumnKind::Numeric | ColumnKind::Target) => {}
        _ => return Err(Error::MissingColumn(column.to_string())),
    }
    let mut by_ward: BTreeMap<&str, Vec<(i32, f64)>> = BTreeMap::new();
    let mut by_year: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if let Some(v) = r.number(schema, column) {
            by_ward.entry(&r.ward).or_default().push((r.year, v));
            by_year.entry(r.year).or_default().push(v);
        }
    }
    if by_year.len() < 2 {
        return Err(Error::InvalidRequest(format!(
            "`{column}` needs values in at least two years, found {}",
            by_year.len()
        )));
    }
    let wards = by_ward
        .into_iter()
        .map(|(ward, mut points)| {
            points.sort_by_key(|p| p.0);
            WardSeries {
                ward: ward.to_string(),
                points,
            }
        })
        .collect();
    let mean = by_year
        .iter()
        .map(|(&y, v)| (y, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    Ok(TrendPlot {
        column: column.to_string(),
        years: by_year.keys().copied().collect(),
        wards,
        mean,
    })
}

impl TrendPlot {
    /// Ward lines on the left axis, the mean on its own right axis.
    pub fn to_svg(&self) -> String {
        let (y0, y1) = (HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
        let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
        let first = *self.years.first().unwrap_or(&0) as f64;
        let last = *self.years.last().unwrap_or(&1) as f64;
        let xs = Scale::new(first, last, x0, x1);
        let (lo, hi) = range(self.wards.iter().flat_map(|w| w.points.iter().map(|p| p.1)));
        let left = Scale::new(lo, hi, y0, y1);
        let (mlo, mhi) = range(self.mean.iter().map(|p| p.1));
        let right = Scale::new(mlo, mhi, y0, y1);

        let mut out = String::new();
        svg_open(&mut out, &self.column);
        let _ = writeln!(out, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#);
        for y in &self.years {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{y}</text>"#,
                xs.px(*y as f64),
                y0 + 18.0
            );
        }
        y_axis(&mut out, &left, x0, false, &format!("{} (wards)", self.column), "#555555");
        y_axis(&mut out, &right, x1, true, "average", MEAN_COLOUR);

        for w in &self.wards {
            let values = w.points.iter().map(|(y, v)| format!("{y}:{v}")).collect::<Vec<_>>().join(" ");
            let _ = writeln!(
                out,
                r#"<polyline class="ward" data-ward="{}" data-values="{values}" fill="none" stroke="{WARD_COLOUR}" stroke-width="1" points="{}"/>"#,
                escape(&w.ward),
                polyline(w.points.iter().map(|&(y, v)| (xs.px(y as f64), left.px(v))))
            );
        }
        let values = self.mean.iter().map(|(y, v)| format!("{y}:{v}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            out,
            r#"<polyline class="mean" data-values="{values}" fill="none" stroke="{MEAN_COLOUR}" stroke-width="2.5" points="{}"/>"#,
            polyline(self.mean.iter().map(|&(y, v)| (xs.px(y as f64), right.px(v))))
        );
        out.push_str("</svg>\n");
        out
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Ordinary least squares `y = intercept + slope * x` with a two-sided
/// t-test on the slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub n: usize,
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub t_statistic: f64,
    pub p_value: f64,
    pub r_squared: f64,
    /// Residual standard error, `sqrt(SSE / (n - 2))`.
    pub residual_se: f64,
    pub x_mean: f64,
    pub sxx: f64,
    /// Two-sided 95% critical value of Student's t with `n - 2` dof.
    pub t_critical: f64,
}

impl RegressionFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    /// Half-width of the 95% confidence band for the mean response at `x`.
    pub fn band_half_width(&self, x: f64) -> f64 {
        let dx = x - self.x_mean;
        self.t_critical * self.residual_se * (1.0 / self.n as f64 + dx * dx / self.sxx).sqrt()
    }
}

pub fn ols_fit(x: &[f64], y: &[f64]) -> Result<RegressionFit> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidRequest("non-finite value in regression input".into()));
    }
    let nf = n as f64;
    let x_mean = x.iter().sum::<f64>() / nf;
    let y_mean = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - x_mean) * (v - x_mean)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateRange);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - x_mean) * (b - y_mean)).sum();
    let syy: f64 = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let dof = nf - 2.0;
    let residual_se = (sse / dof).sqrt();
    let slope_se = residual_se / sxx.sqrt();
    let t_dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::InvalidRequest(e.to_string()))?;
    let (t_statistic, p_value) = if slope_se > 0.0 {
        let t = slope / slope_se;
        (t, (2.0 * t_dist.sf(t.abs())).min(1.0))
    } else if slope != 0.0 {
        (f64::INFINITY.copysign(slope), 0.0)
    } else {
        (0.0, 1.0)
    };
    Ok(RegressionFit {
        n,
        slope,
        intercept,
        slope_se,
        t_statistic,
        p_value,
        r_squared: if syy > 0.0 { 1.0 - sse / syy } else { 1.0 },
        residual_se,
        x_mean,
        sxx,
        t_critical: t_dist.inverse_cdf(0.975),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPlot {
    pub svg: String,
    /// Fit on the min-max scaled `x`.
    pub fit: RegressionFit,
}

/// Min-max scale `x`, fit `y` on it, and draw points, fit line, 95% band
/// and the slope and p-value.
pub fn scatter_regression_plot(x: &[f64], y: &[f64], x_label: &str, y_label: &str) -> Result<ScatterPlot> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let xs_scaled = min_max_scale(x)?;
    let fit = ols_fit(&xs_scaled, y)?;

    let (y0, y1) = (HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
    let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let xs = Scale::new(0.0, 1.0, x0, x1);
    let grid: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
    let band: Vec<(f64, f64, f64)> = grid
        .iter()
        .map(|&g| {
            let h = fit.band_half_width(g);
            (g, fit.predict(g) - h, fit.predict(g) + h)
        })
        .collect();
    let (lo, hi) = range(y.iter().copied().chain(band.iter().flat_map(|b| [b.1, b.2])));
    let ys = Scale::new(lo, hi, y0, y1);

    let mut out = String::new();
    svg_open(&mut out, &format!("{y_label} vs {x_label}"));
    let _ = writeln!(out, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#);
    for t in xs.ticks(5) {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            xs.px(t),
            y0 + 18.0,
            format_tick(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{} (min-max scaled)</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    y_axis(&mut out, &ys, x0, false, y_label, "black");

    let upper = band.iter().map(|b| (xs.px(b.0), ys.px(b.2)));
    let lower = band.iter().rev().map(|b| (xs.px(b.0), ys.px(b.1)));
    let _ = writeln!(
        out,
        r#"<polygon class="band" fill="{MEAN_COLOUR}" fill-opacity="0.2" stroke="none" points="{}"/>"#,
        polyline(upper.chain(lower))
    );
    for (a, b) in xs_scaled.iter().zip(y) {
        let _ = writeln!(
            out,
            r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#444444" fill-opacity="0.6"/>"##,
            xs.px(*a),
            ys.px(*b)
        );
    }
    let _ = writeln!(
        out,
        r#"<line class="fit" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{MEAN_COLOUR}" stroke-width="2"/>"#,
        xs.px(0.0),
        ys.px(fit.predict(0.0)),
        xs.px(1.0),
        ys.px(fit.predict(1.0))
    );
    let _ = writeln!(
        out,
        r#"<text class="stats" x="{:.2}" y="{:.2}">coef = {:.3}, p = {:.3e}</text>"#,
        x0 + 10.0,
        y1 + 14.0,
        fit.slope,
        fit.p_value
    );
    out.push_str("</svg>\n");
    Ok(ScatterPlot { svg: out, fit })
}
