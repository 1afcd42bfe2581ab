//! Loss-curve SVG from a metrics file.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossPoint {
    pub epoch: f64,
    pub train: f64,
    pub test: f64,
}

/// Rows of a `metrics.csv`; the header is required.
pub fn read_metrics(text: &str) -> Result<Vec<LossPoint>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Data("metrics file is empty".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let col = |name: &str| {
        cols.iter()
            .position(|c| c.trim() == name)
            .ok_or_else(|| Error::Data(format!("metrics header lacks '{name}'")))
    };
    let (e, tr, te) = (col("epoch")?, col("train_loss")?, col("test_loss")?);
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let get = |k: usize| -> Result<f64> {
            f.get(k)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Data(format!("metrics row {}: bad column {k}", i + 1)))
        };
        out.push(LossPoint {
            epoch: get(e)?,
            train: get(tr)?,
            test: get(te)?,
        });
    }
    if out.is_empty() {
        return Err(Error::Data("metrics file has no rows".into()));
    }
    Ok(out)
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Train and test loss against epoch. Output depends only on `points`.
pub fn render_svg(points: &[LossPoint]) -> Result<String> {
    if points.is_empty() {
        return Err(Error::Data("nothing to plot".into()));
    }
    let (x0, x1) = span(points.iter().map(|p| p.epoch));
    let (y0, y1) = span(points.iter().flat_map(|p| [p.train, p.test]));
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let line = |f: &dyn Fn(&LossPoint) -> f64| {
        points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.epoch), sy(f(p))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<path d=\"M{PAD},{PAD} V{} H{}\" stroke=\"black\" fill=\"none\"/>\n",
        H - PAD,
        W - PAD
    ));
    s.push_str(&format!(
        "<text x=\"{PAD}\" y=\"{}\" font-size=\"12\">{x0}</text>\n<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{x1}</text>\n",
        H - PAD + 16.0,
        W - PAD,
        H - PAD + 16.0
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{y0:.4}</text>\n<text x=\"{}\" y=\"{PAD}\" font-size=\"12\" text-anchor=\"end\">{y1:.4}</text>\n",
        PAD - 4.0,
        H - PAD,
        PAD - 4.0
    ));
    s.push_str(&format!("<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">epoch</text>\n", W / 2.0, H - 10.0));
    s.push_str(&format!(
        "<polyline id=\"train\" points=\"{}\" stroke=\"steelblue\" fill=\"none\"/>\n",
        line(&|p| p.train)
    ));
    s.push_str(&format!(
        "<polyline id=\"test\" points=\"{}\" stroke=\"darkorange\" fill=\"none\"/>\n",
        line(&|p| p.test)
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-size=\"12\" fill=\"steelblue\">train loss</text>\n<text x=\"{}\" y=\"34\" font-size=\"12\" fill=\"darkorange\">test loss</text>\n",
        W - PAD - 80.0,
        W - PAD - 80.0
    ));
    s.push_str("</svg>\n");
    Ok(s)
}
