//! Minimal SVG line charts and PPM images.

use std::fmt::Write as _;

pub struct Series<'a> {
    pub name: &'a str,
    pub colour: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Line chart with a fixed `[y_min, y_max]` axis.
pub fn line_chart_svg(title: &str, x_label: &str, series: &[Series<'_>], y_min: f64, y_max: f64) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let x_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(1.0_f64, f64::max);
    let sx = |x: f64| m + (w - 2.0 * m) * x / x_max;
    let sy = |y: f64| h - m - (h - 2.0 * m) * ((y.clamp(y_min, y_max) - y_min) / (y_max - y_min));
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {m} L{m} {b} L{r} {b}" stroke="black" fill="none"/>"#,
        b = h - m,
        r = w - m
    );
    for i in 0..=4 {
        let y = y_min + (y_max - y_min) * i as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{:.2}</text>"#, m - 5.0, sy(y) + 4.0, y);
        let x = x_max * i as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{:.0}</text>"#, sx(x), h - m + 16.0, x);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 10.0, escape(x_label));
    for (k, s) in series.iter().enumerate() {
        if !s.points.is_empty() {
            let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(svg, r#"<polyline points="{}" stroke="{}" fill="none" stroke-width="1.5"/>"#, pts.join(" "), s.colour);
        }
        let ly = m + 16.0 * k as f64;
        let _ = writeln!(svg, r#"<text x="{}" y="{ly}" fill="{}">{}</text>"#, w - m - 100.0, s.colour, escape(s.name));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// An RGB raster written as binary PPM.
pub struct Pixmap {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[u8; 3]>,
}

impl Pixmap {
    /// Grey-scale image of `f(x, y)` in `[0, 1]` over `[-1, 1]²`, with `y`
    /// pointing up.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut rgb = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                let (x, y) = Self::centre(width, height, r, c);
                let g = (f(x, y).clamp(0.0, 1.0) * 255.0).round() as u8;
                rgb.push([g, g, g]);
            }
        }
        Self { width, height, rgb }
    }

    /// Centre of pixel `(r, c)` in `[-1, 1]²`.
    pub fn centre(width: usize, height: usize, r: usize, c: usize) -> (f64, f64) {
        let x = -1.0 + 2.0 * (c as f64 + 0.5) / width as f64;
        let y = 1.0 - 2.0 * (r as f64 + 0.5) / height as f64;
        (x, y)
    }

    /// Draws a small square marker at `(x, y)` in `[-1, 1]²`.
    pub fn mark(&mut self, x: f64, y: f64, colour: [u8; 3]) {
        let c = ((x + 1.0) / 2.0 * self.width as f64) as isize;
        let r = ((1.0 - y) / 2.0 * self.height as f64) as isize;
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (rr, cc) = (r + dr, c + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < self.height && (cc as usize) < self.width {
                    self.rgb[rr as usize * self.width + cc as usize] = colour;
                }
            }
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.rgb.iter().flatten());
        out
    }
}
