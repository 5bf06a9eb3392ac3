//! Static SVG plots of monitored time series: one pane per column, time on
//! the abscissa. Pure string assembly with fixed formatting, so identical
//! input produces identical bytes.

use crate::csvio::Table;

const WIDTH: f64 = 960.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 25.0;
const PANE_HEIGHT: f64 = 130.0;
const PANE_GAP: f64 = 48.0;
const TOP: f64 = 40.0;

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v:.4e}")
    }
}

pub fn render_svg(table: &Table) -> Result<String, String> {
    let t_idx = table
        .headers
        .iter()
        .position(|h| h == "t")
        .ok_or_else(|| "no `t` column".to_string())?;
    let t = &table.columns[t_idx];
    let (tmin, tmax) = t
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let tspan = if tmax > tmin { tmax - tmin } else { 1.0 };

    // Panes for every other column that has at least one finite value.
    let panes: Vec<usize> = (0..table.headers.len())
        .filter(|&i| i != t_idx && table.columns[i].iter().any(|v| v.is_finite()))
        .collect();
    if panes.is_empty() {
        return Err("no plottable columns (all values undefined)".to_string());
    }

    let height = TOP + panes.len() as f64 * (PANE_HEIGHT + PANE_GAP);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" \
         viewBox=\"0 0 {WIDTH} {height}\" font-family=\"monospace\" font-size=\"12\">\n\
         <rect width=\"{WIDTH}\" height=\"{height}\" fill=\"white\"/>\n"
    ));

    for (pane_no, &col) in panes.iter().enumerate() {
        let y0 = TOP + pane_no as f64 * (PANE_HEIGHT + PANE_GAP);
        let values = &table.columns[col];
        let (mut vmin, mut vmax) = values
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if vmax - vmin < 1e-300 {
            let pad = (vmax.abs() * 1e-6).max(1e-12);
            vmin -= pad;
            vmax += pad;
        }
        let vspan = vmax - vmin;

        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-weight=\"bold\">{}</text>\n",
            fmt(MARGIN_LEFT),
            fmt(y0 - 8.0),
            table.headers[col]
        ));
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n",
            fmt(MARGIN_LEFT),
            fmt(y0),
            fmt(plot_w),
            fmt(PANE_HEIGHT)
        ));
        // y ticks at extremes, x ticks at ends.
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            fmt(MARGIN_LEFT - 6.0),
            fmt(y0 + 12.0),
            fmt_tick(vmax)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            fmt(MARGIN_LEFT - 6.0),
            fmt(y0 + PANE_HEIGHT),
            fmt_tick(vmin)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">t = {}</text>\n",
            fmt(MARGIN_LEFT),
            fmt(y0 + PANE_HEIGHT + 16.0),
            fmt_tick(tmin)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">t = {}</text>\n",
            fmt(MARGIN_LEFT + plot_w),
            fmt(y0 + PANE_HEIGHT + 16.0),
            fmt_tick(tmax)
        ));

        // Polyline segments, broken at non-finite values.
        let mut segment: Vec<String> = Vec::new();
        let flush = |segment: &mut Vec<String>, svg: &mut String| {
            if segment.len() >= 2 {
                svg.push_str(&format!(
                    "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                    segment.join(" ")
                ));
            }
            segment.clear();
        };
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                flush(&mut segment, &mut svg);
                continue;
            }
            let x = MARGIN_LEFT + (t[i] - tmin) / tspan * plot_w;
            let y = y0 + PANE_HEIGHT - (v - vmin) / vspan * PANE_HEIGHT;
            segment.push(format!("{},{}", fmt(x), fmt(y)));
        }
        flush(&mut segment, &mut svg);
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}
