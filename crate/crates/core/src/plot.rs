//! Minimal SVG rendering for result figures.

use std::fmt::Write as _;

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Grey-scale grid of `values` in `[lo, hi]`, row-major `height × width`.
pub fn heatmap(values: &[f64], height: usize, width: usize, lo: f64, hi: f64, title: &str) -> String {
    let cell = (240.0 / height.max(width) as f64).max(2.0);
    let (w, h) = (cell * width as f64 + 20.0, cell * height as f64 + 40.0);
    let mut s = header(w, h);
    let _ = writeln!(s, "<text x=\"10\" y=\"16\">{}</text>", escape(title));
    let span = if hi > lo { hi - lo } else { 1.0 };
    for r in 0..height {
        for c in 0..width {
            let v = ((values[r * width + c] - lo) / span).clamp(0.0, 1.0);
            let g = (v * 255.0).round() as u8;
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"rgb({g},{g},{g})\"/>",
                10.0 + c as f64 * cell,
                30.0 + r as f64 * cell
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Several heatmaps side by side with captions.
pub fn panels(images: &[(&str, &[f64])], height: usize, width: usize, lo: f64, hi: f64) -> String {
    let cell = (120.0 / height.max(width) as f64).max(2.0);
    let pw = cell * width as f64 + 10.0;
    let (w, h) = (pw * images.len() as f64 + 10.0, cell * height as f64 + 40.0);
    let mut s = header(w, h);
    let span = if hi > lo { hi - lo } else { 1.0 };
    for (p, (title, values)) in images.iter().enumerate() {
        let x0 = 10.0 + p as f64 * pw;
        let _ = writeln!(s, "<text x=\"{x0:.2}\" y=\"16\">{}</text>", escape(title));
        for r in 0..height {
            for c in 0..width {
                let v = ((values[r * width + c] - lo) / span).clamp(0.0, 1.0);
                let g = (v * 255.0).round() as u8;
                let _ = writeln!(
                    s,
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"rgb({g},{g},{g})\"/>",
                    x0 + c as f64 * cell,
                    30.0 + r as f64 * cell
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

/// One bar group per category, one bar per series, with `±err` whiskers.
pub struct BarSeries<'a> {
    pub name: &'a str,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
}

pub fn bar_chart(title: &str, categories: &[String], series: &[BarSeries<'_>], y_label: &str) -> String {
    let (w, h) = (560.0, 320.0);
    let (left, right, top, bottom) = (60.0, 20.0, 30.0, 60.0);
    let ymax = series
        .iter()
        .flat_map(|s| s.values.iter().zip(&s.errors).map(|(v, e)| v + e))
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-12)
        * 1.1;
    let plot_h = h - top - bottom;
    let group_w = (w - left - right) / categories.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    let y = |v: f64| top + plot_h * (1.0 - (v / ymax).clamp(0.0, 1.0));
    let mut s = header(w, h);
    let _ = writeln!(s, "<text x=\"{left}\" y=\"18\">{}</text>", escape(title));
    let _ = writeln!(
        s,
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"black\"/>",
        top + plot_h
    );
    let _ = writeln!(
        s,
        "<line x1=\"{left}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>",
        top + plot_h,
        w - right
    );
    for t in 0..=4 {
        let v = ymax * t as f64 / 4.0;
        let _ = writeln!(s, "<text x=\"4\" y=\"{:.2}\">{v:.3}</text>", y(v) + 4.0);
    }
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{:.2}\" transform=\"rotate(-90 14 {:.2})\">{}</text>",
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        escape(y_label)
    );
    for (g, cat) in categories.iter().enumerate() {
        let gx = left + g as f64 * group_w + group_w * 0.1;
        for (k, ser) in series.iter().enumerate() {
            let v = ser.values.get(g).copied().unwrap_or(f64::NAN);
            if !v.is_finite() {
                continue;
            }
            let e = ser.errors.get(g).copied().unwrap_or(0.0);
            let x = gx + k as f64 * bar_w;
            let _ = writeln!(
                s,
                "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                y(v),
                bar_w * 0.9,
                top + plot_h - y(v),
                PALETTE[k % PALETTE.len()]
            );
            let cx = x + bar_w * 0.45;
            let _ = writeln!(
                s,
                "<line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
                y((v - e).max(0.0)),
                y(v + e)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            gx,
            top + plot_h + 16.0,
            escape(cat)
        );
    }
    for (k, ser) in series.iter().enumerate() {
        let x = left + k as f64 * 120.0;
        let _ = writeln!(
            s,
            "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            h - 22.0,
            PALETTE[k % PALETTE.len()],
            x + 14.0,
            h - 13.0,
            escape(ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Polyline per series over shared numeric x values.
pub fn line_chart(title: &str, xs: &[f64], series: &[BarSeries<'_>], x_label: &str, y_label: &str) -> String {
    let (w, h) = (560.0, 320.0);
    let (left, right, top, bottom) = (60.0, 20.0, 30.0, 60.0);
    let finite = |v: &f64| v.is_finite();
    let ymax = series.iter().flat_map(|s| s.values.iter().copied()).filter(finite).fold(0.0f64, f64::max).max(1e-12) * 1.1;
    let (xmin, xmax) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let xspan = if xmax > xmin { xmax - xmin } else { 1.0 };
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let px = |v: f64| left + plot_w * (v - xmin) / xspan;
    let py = |v: f64| top + plot_h * (1.0 - (v / ymax).clamp(0.0, 1.0));
    let mut s = header(w, h);
    let _ = writeln!(s, "<text x=\"{left}\" y=\"18\">{}</text>", escape(title));
    let _ = writeln!(
        s,
        "<polyline points=\"{left},{top} {left},{0} {1},{0}\" fill=\"none\" stroke=\"black\"/>",
        top + plot_h,
        w - right
    );
    for x in xs {
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\">{x}</text>", px(*x) - 6.0, top + plot_h + 16.0);
    }
    for t in 0..=4 {
        let v = ymax * t as f64 / 4.0;
        let _ = writeln!(s, "<text x=\"4\" y=\"{:.2}\">{v:.3}</text>", py(v) + 4.0);
    }
    let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>", left + plot_w / 2.0, h - 30.0, escape(x_label));
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{:.2}\" transform=\"rotate(-90 14 {:.2})\">{}</text>",
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        escape(y_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = xs
            .iter()
            .zip(&ser.values)
            .filter(|(_, v)| v.is_finite())
            .map(|(x, v)| format!("{:.2},{:.2}", px(*x), py(*v)))
            .collect();
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>", pts.join(" "));
        for ((x, v), e) in xs.iter().zip(&ser.values).zip(&ser.errors) {
            if v.is_finite() {
                let _ = writeln!(
                    s,
                    "<line x1=\"{0:.2}\" y1=\"{1:.2}\" x2=\"{0:.2}\" y2=\"{2:.2}\" stroke=\"{color}\"/>",
                    px(*x),
                    py((v - e).max(0.0)),
                    py(v + e)
                );
            }
        }
        let lx = left + k as f64 * 120.0;
        let _ = writeln!(
            s,
            "<rect x=\"{lx:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{color}\"/><text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            h - 18.0,
            lx + 14.0,
            h - 9.0,
            escape(ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documents_are_well_formed() {
        let hm = heatmap(&[0.0, 0.5, 1.0, 0.25], 2, 2, 0.0, 1.0, "a<b");
        assert!(hm.starts_with("<svg") && hm.trim_end().ends_with("</svg>"));
        assert_eq!(hm.matches("<rect").count(), 5);
        assert!(hm.contains("a&lt;b"));
        let series = [BarSeries { name: "x", values: vec![1.0, 2.0], errors: vec![0.1, 0.2] }];
        let bc = bar_chart("t", &["p".into(), "q".into()], &series, "mae");
        assert_eq!(bc.matches("fill=\"#1f77b4\"").count(), 3);
        let lc = line_chart("t", &[1.0, 2.0], &series, "n", "mae");
        assert!(lc.contains("<polyline"));
        let p = panels(&[("a", &[0.0; 4]), ("b", &[1.0; 4])], 2, 2, 0.0, 1.0);
        assert_eq!(p.matches("rgb(255,255,255)").count(), 4);
    }
}
