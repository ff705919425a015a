//! Minimal SVG line chart for alignment curves: win rate on [0.4, 1]
//! against KL from zero, one polyline per curve.

pub struct Curve {
    pub label: String,
    /// (kl, win_rate) points, already sorted by KL.
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 540.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 200.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 55.0;
const Y_MIN: f64 = 0.4;
const Y_MAX: f64 = 1.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub fn render(title: &str, curves: &[Curve]) -> String {
    let kl_max = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.0))
        .fold(0.0f64, f64::max)
        .max(1e-9);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x = |kl: f64| MARGIN_LEFT + plot_w * (kl / kl_max).clamp(0.0, 1.0);
    let y = |w: f64| {
        MARGIN_TOP + plot_h * (1.0 - ((w - Y_MIN) / (Y_MAX - Y_MIN)).clamp(0.0, 1.0))
    };

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str(&format!(
        "  <text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"15\">{}</text>\n",
        MARGIN_LEFT,
        escape(title)
    ));

    // Axes.
    out.push_str(&format!(
        "  <line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n",
        MARGIN_LEFT,
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w
    ));
    out.push_str(&format!(
        "  <line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n",
        MARGIN_LEFT,
        MARGIN_TOP,
        MARGIN_TOP + plot_h
    ));

    // Ticks and labels.
    for i in 0..=6 {
        let w = Y_MIN + (Y_MAX - Y_MIN) * i as f64 / 6.0;
        let py = y(w);
        out.push_str(&format!(
            "  <line x1=\"{0}\" y1=\"{py}\" x2=\"{1}\" y2=\"{py}\" stroke=\"#cccccc\"/>\n",
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        ));
        out.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"end\">{:.1}</text>\n",
            MARGIN_LEFT - 8.0,
            py + 4.0,
            w
        ));
    }
    for i in 0..=5 {
        let kl = kl_max * i as f64 / 5.0;
        let px = x(kl);
        out.push_str(&format!(
            "  <text x=\"{px}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"middle\">{:.3}</text>\n",
            MARGIN_TOP + plot_h + 20.0,
            kl
        ));
    }
    out.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\">KL divergence (nats)</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    ));
    out.push_str(&format!(
        "  <text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" \
         transform=\"rotate(-90 18 {0})\" text-anchor=\"middle\">win rate</text>\n",
        MARGIN_TOP + plot_h / 2.0
    ));

    // Curves and legend.
    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = curve
            .points
            .iter()
            .map(|&(kl, w)| format!("{},{}", x(kl), y(w)))
            .collect();
        out.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\" points=\"{}\"/>\n",
            coords.join(" ")
        ));
        let ly = MARGIN_TOP + 16.0 * i as f64 + 10.0;
        let lx = MARGIN_LEFT + plot_w + 14.0;
        out.push_str(&format!(
            "  <line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" \
             stroke-width=\"3\"/>\n",
            lx + 22.0
        ));
        out.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            lx + 28.0,
            ly + 4.0,
            escape(&curve.label)
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
