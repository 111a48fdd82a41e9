//! Per-frame score plot with the ground truth shaded and the prediction outlined.

use std::fmt::Write;

use slp_core::segment::Segment;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 240.0;
const PAD: f64 = 30.0;

pub fn score_plot(scores: &[f64], gt: Segment, predicted: Segment) -> String {
    let t = scores.len().max(1);
    let step = (WIDTH - 2.0 * PAD) / t as f64;
    let x = |i: f64| PAD + i * step;
    let y = |s: f64| HEIGHT - PAD - s.clamp(0.0, 1.0) * (HEIGHT - 2.0 * PAD);
    let span = |s: Segment| (x(s.start as f64), (s.len() as f64) * step);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let (gx, gw) = span(gt);
    let _ = writeln!(
        out,
        r##"<rect class="gt" x="{gx:.2}" y="{PAD}" width="{gw:.2}" height="{:.2}" fill="#9c9" fill-opacity="0.4"/>"##,
        HEIGHT - 2.0 * PAD
    );
    let (px, pw) = span(predicted);
    let _ = writeln!(
        out,
        r##"<rect class="prediction" x="{px:.2}" y="{PAD}" width="{pw:.2}" height="{:.2}" fill="none" stroke="#36c" stroke-dasharray="4 2"/>"##,
        HEIGHT - 2.0 * PAD
    );
    let _ = writeln!(
        out,
        r##"<line x1="{PAD}" y1="{0}" x2="{1}" y2="{0}" stroke="#000"/>"##,
        HEIGHT - PAD,
        WIDTH - PAD
    );
    let centre = |i: usize| x(i as f64 + 0.5);
    let points: Vec<String> = scores.iter().enumerate().map(|(i, &s)| format!("{:.2},{:.2}", centre(i), y(s))).collect();
    let _ = writeln!(out, r##"<polyline points="{}" fill="none" stroke="#c33"/>"##, points.join(" "));
    for (i, &s) in scores.iter().enumerate() {
        let _ = writeln!(
            out,
            r##"<circle class="score" cx="{:.2}" cy="{:.2}" r="2" fill="#c33"><title>frame {i}: {s:.4}</title></circle>"##,
            centre(i),
            y(s)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_per_frame() {
        let svg = score_plot(&[0.1, 0.9, 0.5], Segment::new(1, 2), Segment::point(1));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
