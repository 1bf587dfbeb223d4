//! Minimal SVG overlay of one-dimensional trajectories.

use std::fmt::Write;

use pdmd_core::sampler::Trajectory;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 40.0;

/// Time runs left to right from 1 to 0; the first coordinate is plotted.
pub fn overlay(series: &[(&str, &Trajectory<f64>, &str)]) -> String {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, traj, _) in series {
        for state in traj.states() {
            for &v in state.column(0) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if hi <= lo {
        lo -= 1.0;
        hi += 1.0;
    }
    let px = |t: f64| MARGIN + (1.0 - t) * (WIDTH - 2.0 * MARGIN);
    let py = |x: f64| HEIGHT - MARGIN - (x - lo) / (hi - lo) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {b} H{r} M{m} {b} V{m}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for (t, label) in [(1.0, "t=1"), (0.5, "t=0.5"), (0.0, "t=0")] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{label}</text>"#,
            px(t),
            HEIGHT - MARGIN + 16.0
        );
    }
    for (k, (name, traj, color)) in series.iter().enumerate() {
        let _ = writeln!(svg, r#"<g stroke="{color}" stroke-opacity="0.35" fill="none">"#);
        for i in 0..traj.n_samples() {
            let mut d = String::new();
            for (j, (t, state)) in traj.times().iter().zip(traj.states()).enumerate() {
                let _ = write!(d, "{}{:.1} {:.1}", if j == 0 { "M" } else { " L" }, px(*t), py(state[[i, 0]]));
            }
            let _ = writeln!(svg, r#"<path d="{d}"/>"#);
        }
        let _ = writeln!(svg, "</g>");
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="13" fill="{color}">{name}</text>"#,
            WIDTH - MARGIN - 110.0,
            MARGIN + 16.0 * (k as f64 + 1.0)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
