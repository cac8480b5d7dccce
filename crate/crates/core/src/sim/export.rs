//! CSV and SVG artifacts for [`SimRecord`].

use std::fs;
use std::path::Path;

use svg::node::element::{Group, Line, Polyline, Rectangle, Text};
use svg::Document;

use super::{SimRecord, StepDiag};
use crate::error::{Error, Result};

fn io_err(path: &Path, e: impl Into<std::io::Error>) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e.into(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("CSV: {e}"))
}

const GROUPS: [&str; 6] = ["u", "y", "ry", "x", "xhat", "d"];

fn series(rec: &SimRecord, g: usize) -> &Vec<Vec<f64>> {
    match g {
        0 => &rec.u,
        1 => &rec.y,
        2 => &rec.ry,
        3 => &rec.x,
        4 => &rec.xhat,
        _ => &rec.d,
    }
}

fn series_mut(rec: &mut SimRecord, g: usize) -> &mut Vec<Vec<f64>> {
    match g {
        0 => &mut rec.u,
        1 => &mut rec.y,
        2 => &mut rec.ry,
        3 => &mut rec.x,
        4 => &mut rec.xhat,
        _ => &mut rec.d,
    }
}

/// Header `k,t,u*,y*,ry*,x*,xhat*,d*,iterations,degraded,cost`, one row per
/// step. Floats use Rust's shortest round-trip formatting.
pub fn to_csv_string(rec: &SimRecord) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    let widths: Vec<usize> = (0..GROUPS.len()).map(|g| series(rec, g).first().map_or(0, Vec::len)).collect();
    let mut header = vec!["k".to_string(), "t".to_string()];
    for (g, name) in GROUPS.iter().enumerate() {
        header.extend((1..=widths[g]).map(|i| format!("{name}{i}")));
    }
    header.extend(["iterations", "degraded", "cost"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..rec.len() {
        let mut row = vec![k.to_string(), format!("{:?}", rec.t[k])];
        for g in 0..GROUPS.len() {
            row.extend(series(rec, g)[k].iter().map(|v| format!("{v:?}")));
        }
        let d = &rec.diag[k];
        row.extend([d.iterations.to_string(), u8::from(d.degraded).to_string(), format!("{:?}", d.cost)]);
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("CSV: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub fn export_csv(rec: &SimRecord, path: &Path) -> Result<()> {
    fs::write(path, to_csv_string(rec)?).map_err(|e| io_err(path, e))
}

/// Reads back a CSV written by [`to_csv_string`]. Names and plot bounds are
/// not stored in the CSV and come back as defaults; the sample time is
/// recovered from the second time stamp.
pub fn parse_csv(text: &str) -> Result<SimRecord> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let mut cols: Vec<Option<usize>> = Vec::with_capacity(header.len());
    let mut widths = [0usize; GROUPS.len()];
    for h in &header {
        let prefix = h.trim_end_matches(|c: char| c.is_ascii_digit());
        let g = if prefix.len() < h.len() { GROUPS.iter().position(|&n| n == prefix) } else { None };
        if let Some(g) = g {
            widths[g] += 1;
        }
        cols.push(g);
    }
    let expect = ["k", "t"];
    if header.len() < 5 || header[..2] != expect || header[header.len() - 3..] != ["iterations", "degraded", "cost"] {
        return Err(Error::InvalidArgument("unrecognized CSV header".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("CSV value {s:?}: {e}")));
    let mut rec = SimRecord::empty(0.0, &[], &[]);
    for row in r.records() {
        let row = row.map_err(csv_err)?;
        if row.len() != header.len() {
            return Err(Error::InvalidArgument("CSV row length differs from header".into()));
        }
        rec.t.push(num(&row[1])?);
        for g in 0..GROUPS.len() {
            series_mut(&mut rec, g).push(Vec::with_capacity(widths[g]));
        }
        for (j, g) in cols.iter().enumerate() {
            if let Some(g) = g {
                let v = num(&row[j])?;
                series_mut(&mut rec, *g).last_mut().expect("row pushed").push(v);
            }
        }
        let n = row.len();
        rec.diag.push(StepDiag {
            iterations: row[n - 3].parse().map_err(|e| Error::InvalidArgument(format!("CSV iterations: {e}")))?,
            degraded: &row[n - 2] == "1",
            cost: num(&row[n - 1])?,
        });
    }
    rec.ts = rec.t.get(1).copied().unwrap_or(0.0);
    let label = |p: &str, n: usize| (1..=n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    rec.u_names = label("u", widths[0]);
    rec.y_names = label("y", widths[1]);
    rec.u_min = vec![f64::NEG_INFINITY; widths[0]];
    rec.u_max = vec![f64::INFINITY; widths[0]];
    rec.y_min = vec![f64::NEG_INFINITY; widths[1]];
    rec.y_max = vec![f64::INFINITY; widths[1]];
    Ok(rec)
}

/// Layout of the stacked plot.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotOptions {
    pub width: f64,
    pub panel_height: f64,
    /// Output channels to draw; all when `None`.
    pub y_channels: Option<Vec<usize>>,
    pub show_inputs: bool,
    pub show_states: bool,
    pub title: Option<String>,
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions {
            width: 720.0,
            panel_height: 180.0,
            y_channels: None,
            show_inputs: true,
            show_states: false,
            title: None,
        }
    }
}

struct Panel<'a> {
    id: String,
    label: String,
    data: Vec<f64>,
    overlay: Option<Vec<f64>>,
    bounds: Vec<f64>,
    color: &'a str,
}

const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const GAP: f64 = 30.0;

fn draw_panel(p: &Panel, t: &[f64], top: f64, opts: &PlotOptions) -> Group {
    let (w, h) = (opts.width - MARGIN_L - MARGIN_R, opts.panel_height - GAP);
    let finite = p.data.iter().chain(p.overlay.iter().flatten()).chain(&p.bounds).copied().filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (-1.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9 * hi.abs().max(1.0));
    (lo, hi) = (lo - pad, hi + pad);
    let t_end = t.last().copied().unwrap_or(0.0).max(t.first().copied().unwrap_or(0.0) + 1e-12);
    let t0 = t.first().copied().unwrap_or(0.0);
    let sx = |v: f64| MARGIN_L + (v - t0) / (t_end - t0) * w;
    let sy = |v: f64| top + h - (v - lo) / (hi - lo) * h;
    let points = |vals: &[f64]| {
        t.iter()
            .zip(vals)
            .map(|(&a, &b)| format!("{:.2},{:.2}", sx(a), sy(b)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut g = Group::new().set("id", p.id.clone()).add(
        Rectangle::new()
            .set("x", MARGIN_L)
            .set("y", top)
            .set("width", w)
            .set("height", h)
            .set("fill", "none")
            .set("stroke", "#888"),
    );
    g = g
        .add(Text::new(p.label.clone()).set("x", 6).set("y", top + h / 2.0).set("font-size", 12))
        .add(Text::new(format!("{hi:.3}")).set("x", 6).set("y", top + 10.0).set("font-size", 9))
        .add(Text::new(format!("{lo:.3}")).set("x", 6).set("y", top + h).set("font-size", 9));
    for &b in p.bounds.iter().filter(|b| b.is_finite()) {
        g = g.add(
            Line::new()
                .set("class", "bound")
                .set("x1", MARGIN_L)
                .set("x2", MARGIN_L + w)
                .set("y1", sy(b))
                .set("y2", sy(b))
                .set("stroke", "red")
                .set("stroke-dasharray", "6,4"),
        );
    }
    if let Some(o) = &p.overlay {
        g = g.add(
            Polyline::new()
                .set("class", "setpoint")
                .set("points", points(o))
                .set("fill", "none")
                .set("stroke", "#444")
                .set("stroke-dasharray", "3,3"),
        );
    }
    g.add(
        Polyline::new()
            .set("class", "signal")
            .set("points", points(&p.data))
            .set("fill", "none")
            .set("stroke", p.color)
            .set("stroke-width", 1.5),
    )
}

pub fn to_svg_string(rec: &SimRecord, opts: &PlotOptions) -> String {
    let ny = rec.y.first().map_or(0, Vec::len);
    let nu = rec.u.first().map_or(0, Vec::len);
    let nx = rec.x.first().map_or(0, Vec::len);
    let nry = rec.ry.first().map_or(0, Vec::len);
    let name = |names: &[String], p: &str, i: usize| names.get(i).cloned().unwrap_or_else(|| format!("{p}{}", i + 1));
    let bound = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(f64::NAN);
    let mut panels = vec![];
    let ys: Vec<usize> = opts.y_channels.clone().unwrap_or_else(|| (0..ny).collect());
    for &i in ys.iter().filter(|&&i| i < ny) {
        panels.push(Panel {
            id: format!("panel-y{}", i + 1),
            label: name(&rec.y_names, "y", i),
            data: SimRecord::column(&rec.y, i),
            overlay: (i < nry).then(|| SimRecord::column(&rec.ry, i)),
            bounds: vec![bound(&rec.y_min, i), bound(&rec.y_max, i)],
            color: "#1f77b4",
        });
    }
    if opts.show_inputs {
        for i in 0..nu {
            panels.push(Panel {
                id: format!("panel-u{}", i + 1),
                label: name(&rec.u_names, "u", i),
                data: SimRecord::column(&rec.u, i),
                overlay: None,
                bounds: vec![bound(&rec.u_min, i), bound(&rec.u_max, i)],
                color: "#d62728",
            });
        }
    }
    if opts.show_states {
        for i in 0..nx {
            let has_hat = rec.xhat.first().is_some_and(|r| r.len() > i);
            panels.push(Panel {
                id: format!("panel-x{}", i + 1),
                label: format!("x{}", i + 1),
                data: SimRecord::column(&rec.x, i),
                overlay: has_hat.then(|| SimRecord::column(&rec.xhat, i)),
                bounds: vec![],
                color: "#2ca02c",
            });
        }
    }
    let head = if opts.title.is_some() { 24.0 } else { 0.0 };
    let height = head + opts.panel_height * panels.len().max(1) as f64 + 20.0;
    let mut doc = Document::new()
        .set("version", "1.1")
        .set("width", opts.width)
        .set("height", height)
        .set("viewBox", (0.0, 0.0, opts.width, height))
        .set("font-family", "sans-serif");
    if let Some(tl) = &opts.title {
        doc = doc.add(Text::new(tl.clone()).set("x", MARGIN_L).set("y", 16).set("font-size", 14));
    }
    for (j, p) in panels.iter().enumerate() {
        doc = doc.add(draw_panel(p, &rec.t, head + j as f64 * opts.panel_height + 10.0, opts));
    }
    let t_end = rec.t.last().copied().unwrap_or(0.0);
    doc = doc.add(
        Text::new(format!("time (s), 0 to {t_end}"))
            .set("x", MARGIN_L)
            .set("y", height - 4.0)
            .set("font-size", 11),
    );
    doc.to_string()
}

pub fn export_svg(rec: &SimRecord, path: &Path, opts: &PlotOptions) -> Result<()> {
    fs::write(path, to_svg_string(rec, opts)).map_err(|e| io_err(path, e))
}
