//! Minimal SVG rendering of a ROC curve.

use std::fmt::Write;

use crate::metrics::RocResult;

const SIZE: f64 = 320.0;
const PAD: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Standalone SVG document with the curve, the chance diagonal and the AUC.
pub fn roc_svg(roc: &RocResult, title: &str) -> String {
    let x = |fpr: f64| PAD + fpr * SIZE;
    let y = |tpr: f64| PAD + (1.0 - tpr) * SIZE;
    let mut pts = String::new();
    for p in &roc.points {
        let _ = write!(pts, "{:.2},{:.2} ", x(p.fpr), y(p.tpr));
    }
    let w = SIZE + 2.0 * PAD;
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{w}\" viewBox=\"0 0 {w} {w}\">\n",
            "<rect x=\"{p}\" y=\"{p}\" width=\"{s}\" height=\"{s}\" fill=\"none\" stroke=\"#444\"/>\n",
            "<line x1=\"{p}\" y1=\"{e}\" x2=\"{e}\" y2=\"{p}\" stroke=\"#aaa\" stroke-dasharray=\"4 4\"/>\n",
            "<polyline points=\"{pts}\" fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"2\"/>\n",
            "<text x=\"{p}\" y=\"{t}\" font-family=\"sans-serif\" font-size=\"12\">{title} AUC={auc:.4}</text>\n",
            "<text x=\"{cx}\" y=\"{bx}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">false positive rate</text>\n",
            "<text x=\"12\" y=\"{cx}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 12 {cx})\">true positive rate</text>\n",
            "</svg>\n"
        ),
        w = w,
        p = PAD,
        s = SIZE,
        e = PAD + SIZE,
        pts = pts.trim_end(),
        t = PAD - 12.0,
        title = escape(title),
        auc = roc.auc,
        cx = PAD + SIZE / 2.0,
        bx = w - 10.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::roc_curve;

    #[test]
    fn svg_contains_every_point_and_escapes_the_title() {
        let roc = roc_curve(&[0.9, 0.1, 0.5], &[true, false, true]).unwrap();
        let svg = roc_svg(&roc, "a<b");
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("a&lt;b"));
        let poly = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(poly.matches(',').count(), roc.points.len());
    }
}
