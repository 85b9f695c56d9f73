use std::fmt::Write;

use super::roc::RocCurve;

/// `fpr,tpr,threshold` rows; the threshold is empty where undefined.
pub fn roc_csv(curve: &RocCurve) -> String {
    let mut out = String::from("fpr,tpr,threshold\n");
    for ((f, t), th) in curve.fpr.iter().zip(&curve.tpr).zip(&curve.thresholds) {
        match th {
            Some(v) => writeln!(out, "{f},{t},{v}"),
            None => writeln!(out, "{f},{t},"),
        }
        .expect("writing to a String");
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Standalone SVG plot of labelled ROC curves with the chance diagonal.
pub fn roc_svg(title: &str, curves: &[(String, RocCurve)]) -> String {
    let (size, margin) = (400.0, 50.0);
    let px = |v: f64| margin + v * size;
    let py = |v: f64| margin + (1.0 - v) * size;
    let total = size + 2.0 * margin;
    let legend_h = 18.0 * curves.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = total,
        h = total + legend_h
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="30" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#, total / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{margin}" y="{margin}" width="{size}" height="{size}" fill="none" stroke="black"/>"#
    );
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{v:.1}</text>"#, px(v), py(0.0) + 15.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.1}</text>"#, px(0.0) - 5.0, py(v) + 3.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">False positive rate</text>"#,
        total / 2.0,
        py(0.0) + 35.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 15 {})">True positive rate</text>"#,
        total / 2.0,
        total / 2.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 4"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for (i, (label, c)) in curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = c.fpr.iter().zip(&c.tpr).map(|(f, t)| format!("{:.2},{:.2}", px(*f), py(*t))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#, points.join(" "));
        let y = total + 18.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{m}" y1="{y}" x2="{}" y2="{y}" stroke="{colour}" stroke-width="2"/>"#, margin + 20.0, m = margin);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#, margin + 28.0, y + 4.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::roc_curve;

    #[test]
    fn csv_and_svg() {
        let c = roc_curve(&[0.9, 0.8, 0.3], &[true, false, true]).unwrap();
        let csv = roc_csv(&c);
        assert_eq!(csv, "fpr,tpr,threshold\n0,0,\n0,0.5,0.9\n1,0.5,0.8\n1,1,0.3\n");
        let svg = roc_svg("A & B", &[("LR <0.5>".into(), c)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("A &amp; B") && svg.contains("LR &lt;0.5&gt;"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}
