//! Self-contained static SVG charts: a banded forecast-versus-observed
//! chart and the index tracking chart are both drawn by `band_chart`.
//! No text shaping or external renderer; coordinates are fixed at two
//! decimals so identical inputs emit identical bytes.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 540.0;
const MARGIN_L: f64 = 78.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 46.0;
const MARGIN_B: f64 = 64.0;

/// One shaded band; draw order is outer to inner.
#[derive(Debug, Clone)]
pub struct Band {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub fill: &'static str,
    pub label: &'static str,
}

#[derive(Debug, Clone)]
pub struct BandChart {
    pub title: String,
    pub y_label: String,
    /// Tick label per x position; thinned automatically.
    pub x_labels: Vec<String>,
    pub median: Vec<f64>,
    pub bands: Vec<Band>,
    pub observed: Option<Vec<f64>>,
    /// Highlights observed points; empty means no highlighting.
    pub flagged: Vec<bool>,
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Round a raw tick step up to the usual 1/2/5 ladder.
fn nice_step(raw: f64) -> f64 {
    let mag = 10f64.powf(raw.abs().log10().floor());
    let frac = raw / mag;
    let nice = if frac <= 1.0 {
        1.0
    } else if frac <= 2.0 {
        2.0
    } else if frac <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1.0e-3..1.0e5).contains(&a) {
        format!("{v:.2e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

pub fn band_chart(c: &BandChart) -> Result<String> {
    let n = c.median.len();
    if n < 2 {
        return Err(Error::Data("chart needs at least two x positions".into()));
    }
    if c.x_labels.len() != n {
        return Err(Error::Data(format!("{} x labels for {n} points", c.x_labels.len())));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut scan = |vals: &[f64], what: &str| -> Result<()> {
        if vals.len() != n {
            return Err(Error::Data(format!("{what} has {} points, expected {n}", vals.len())));
        }
        for v in vals {
            if !v.is_finite() {
                return Err(Error::Data(format!("{what} contains a non-finite value")));
            }
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        Ok(())
    };
    scan(&c.median, "median")?;
    for b in &c.bands {
        scan(&b.lower, b.label)?;
        scan(&b.upper, b.label)?;
    }
    if let Some(obs) = &c.observed {
        scan(obs, "observed")?;
    }
    if !c.flagged.is_empty() && c.flagged.len() != n {
        return Err(Error::Data(format!("{} flags for {n} points", c.flagged.len())));
    }
    if hi == lo {
        hi += 1.0;
        lo -= 1.0;
    }
    let pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let x = |i: usize| MARGIN_L + plot_w * i as f64 / (n - 1) as f64;
    let y = |v: f64| MARGIN_T + plot_h * (1.0 - (v - lo) / (hi - lo));

    let mut s = String::with_capacity(16 * 1024);
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">"
    );
    let _ = writeln!(
        s,
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"24\" font-size=\"17\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        xml_escape(&c.title)
    );

    // y grid and ticks
    let step = nice_step((hi - lo) / 5.0);
    let mut tick = (lo / step).ceil() * step;
    while tick <= hi {
        let ty = y(tick);
        let _ = writeln!(
            s,
            "<line x1=\"{MARGIN_L}\" y1=\"{ty:.2}\" x2=\"{:.2}\" y2=\"{ty:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>",
            WIDTH - MARGIN_R
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{}</text>",
            MARGIN_L - 8.0,
            ty + 4.0,
            fmt_tick(tick)
        );
        tick += step;
    }
    // x ticks, at most ~12 labels
    let every = n.div_ceil(12);
    for (i, label) in c.x_labels.iter().enumerate() {
        if i % every != 0 && i != n - 1 {
            continue;
        }
        let tx = x(i);
        let _ = writeln!(
            s,
            "<line x1=\"{tx:.2}\" y1=\"{:.2}\" x2=\"{tx:.2}\" y2=\"{:.2}\" \
             stroke=\"#bbbbbb\" stroke-width=\"1\"/>",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{tx:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            HEIGHT - MARGIN_B + 20.0,
            xml_escape(label)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"18\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\" \
         transform=\"rotate(-90 18 {:.2})\">{}</text>",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        xml_escape(&c.y_label)
    );

    // bands outer-first so inner bands draw on top
    for b in &c.bands {
        let mut points = String::new();
        for i in 0..n {
            let _ = write!(points, "{:.2},{:.2} ", x(i), y(b.upper[i]));
        }
        for i in (0..n).rev() {
            let _ = write!(points, "{:.2},{:.2} ", x(i), y(b.lower[i]));
        }
        let _ = writeln!(
            s,
            "<polygon points=\"{}\" fill=\"{}\" stroke=\"none\"/>",
            points.trim_end(),
            b.fill
        );
    }
    // median line
    let mut pts = String::new();
    for i in 0..n {
        let _ = write!(pts, "{:.2},{:.2} ", x(i), y(c.median[i]));
    }
    let _ = writeln!(
        s,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#08519c\" stroke-width=\"2\"/>",
        pts.trim_end()
    );
    // observed dots
    if let Some(obs) = &c.observed {
        for (i, v) in obs.iter().enumerate() {
            let flagged = c.flagged.get(i).copied().unwrap_or(false);
            let fill = if flagged { "#d62728" } else { "#333333" };
            let _ = writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.2\" fill=\"{fill}\"/>",
                x(i),
                y(*v)
            );
        }
    }
    // frame and legend
    let _ = writeln!(
        s,
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w:.2}\" height=\"{plot_h:.2}\" \
         fill=\"none\" stroke=\"#555555\"/>"
    );
    let mut lx = MARGIN_L + 10.0;
    for b in &c.bands {
        let _ = writeln!(
            s,
            "<rect x=\"{lx:.2}\" y=\"{:.2}\" width=\"16\" height=\"10\" fill=\"{}\"/>\
             <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{}</text>",
            MARGIN_T + 8.0,
            b.fill,
            lx + 20.0,
            MARGIN_T + 17.0,
            xml_escape(b.label)
        );
        lx += 90.0;
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Standard colors for the 95/75 percent bands.
pub fn default_bands(lo95: Vec<f64>, hi95: Vec<f64>, lo75: Vec<f64>, hi75: Vec<f64>) -> Vec<Band> {
    vec![
        Band { lower: lo95, upper: hi95, fill: "#c6dbef", label: "95% PI" },
        Band { lower: lo75, upper: hi75, fill: "#6baed6", label: "75% PI" },
    ]
}
