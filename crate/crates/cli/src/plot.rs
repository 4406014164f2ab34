//! Minimal deterministic SVG line plots (800x600 viewbox, fixed margins and
//! palette). All numbers are formatted with fixed precision so identical
//! inputs produce identical bytes.

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
];

pub struct Curve {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub curves: Vec<Curve>,
}

fn fmt(x: f64) -> String {
    format!("{x:.3}")
}

impl Plot {
    pub fn to_svg(&self) -> String {
        let mut xs_min = f64::INFINITY;
        let mut xs_max = f64::NEG_INFINITY;
        let mut ys_min = f64::INFINITY;
        let mut ys_max = f64::NEG_INFINITY;
        let map_y = |y: f64| if self.log_y { y.max(1e-300).log10() } else { y };
        for c in &self.curves {
            for (&x, &y) in c.xs.iter().zip(&c.ys) {
                if !x.is_finite() || !y.is_finite() {
                    continue;
                }
                xs_min = xs_min.min(x);
                xs_max = xs_max.max(x);
                let y = map_y(y);
                ys_min = ys_min.min(y);
                ys_max = ys_max.max(y);
            }
        }
        if !xs_min.is_finite() {
            xs_min = 0.0;
            xs_max = 1.0;
            ys_min = 0.0;
            ys_max = 1.0;
        }
        if xs_max - xs_min < 1e-300 {
            xs_max = xs_min + 1.0;
        }
        if ys_max - ys_min < 1e-300 {
            ys_max = ys_min + 1.0;
        }
        let plot_w = WIDTH - MARGIN_L - MARGIN_R;
        let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
        let px = |x: f64| MARGIN_L + (x - xs_min) / (xs_max - xs_min) * plot_w;
        let py = |y: f64| HEIGHT - MARGIN_B - (map_y(y) - ys_min) / (ys_max - ys_min) * plot_h;

        let mut s = String::new();
        s.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" width=\"{WIDTH}\" height=\"{HEIGHT}\">\n"
        ));
        s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        s.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n",
            fmt(MARGIN_L),
            fmt(MARGIN_T),
            fmt(plot_w),
            fmt(plot_h)
        ));
        // axis ticks: 5 per axis
        for i in 0..=4 {
            let fx = xs_min + (xs_max - xs_min) * i as f64 / 4.0;
            let x = px(fx);
            s.push_str(&format!(
                "<line x1=\"{x}\" y1=\"{y0}\" x2=\"{x}\" y2=\"{y1}\" stroke=\"#444\"/>\n",
                x = fmt(x),
                y0 = fmt(HEIGHT - MARGIN_B),
                y1 = fmt(HEIGHT - MARGIN_B + 6.0)
            ));
            s.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{:.4e}</text>\n",
                fmt(x),
                fmt(HEIGHT - MARGIN_B + 20.0),
                fx
            ));
            let fy = ys_min + (ys_max - ys_min) * i as f64 / 4.0;
            let y = MARGIN_T + plot_h - plot_h * i as f64 / 4.0;
            let label = if self.log_y { 10f64.powf(fy) } else { fy };
            s.push_str(&format!(
                "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"#444\"/>\n",
                x0 = fmt(MARGIN_L - 6.0),
                x1 = fmt(MARGIN_L),
                y = fmt(y)
            ));
            s.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{:.4e}</text>\n",
                fmt(MARGIN_L - 10.0),
                fmt(y + 4.0),
                label
            ));
        }
        s.push_str(&format!(
            "<text x=\"{}\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
            fmt(WIDTH / 2.0),
            escape(&self.title)
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
            fmt(WIDTH / 2.0),
            fmt(HEIGHT - 10.0),
            escape(&self.x_label)
        ));
        s.push_str(&format!(
            "<text x=\"18\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
            fmt(HEIGHT / 2.0),
            fmt(HEIGHT / 2.0),
            escape(&self.y_label)
        ));
        for (ci, c) in self.curves.iter().enumerate() {
            let color = PALETTE[ci % PALETTE.len()];
            let mut d = String::new();
            let mut pen_up = true;
            for (&x, &y) in c.xs.iter().zip(&c.ys) {
                if !x.is_finite() || !y.is_finite() {
                    pen_up = true;
                    continue;
                }
                d.push_str(if pen_up { "M" } else { "L" });
                pen_up = false;
                d.push_str(&format!("{} {} ", fmt(px(x)), fmt(py(y))));
            }
            s.push_str(&format!(
                "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                d.trim_end()
            ));
            // legend entry
            let ly = MARGIN_T + 16.0 + 18.0 * ci as f64;
            s.push_str(&format!(
                "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                x0 = fmt(MARGIN_L + 10.0),
                x1 = fmt(MARGIN_L + 34.0),
                y = fmt(ly - 4.0)
            ));
            s.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-size=\"12\">{}</text>\n",
                fmt(MARGIN_L + 40.0),
                fmt(ly),
                escape(&c.label)
            ));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
