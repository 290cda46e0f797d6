use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::simworld::InfractionKind;

use super::{BenchmarkReport, MetricsRow, RouteResult};

pub const TABLE_FILE: &str = "metrics.csv";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const PLOT_DIR: &str = "plots";

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub table: PathBuf,
    pub events: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// One line of the event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventLine {
    pub agent: String,
    pub route: String,
    pub kind: InfractionKind,
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub actor: Option<u32>,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format("metrics table", format!("{}: {other:?}", path.display())),
    }
}

fn write_table(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a metrics table written by [`emit_report`].
pub fn read_table(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_error(path, e))?.iter().map(String::from).collect();
    if header != super::TABLE_COLUMNS {
        return Err(Error::format("metrics table", format!("unexpected header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

/// Parses an event log; unknown infraction kinds are rejected.
pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<EventLine>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line).map_err(|e| Error::format("event log", format!("line {}: {e}", i + 1)))?;
        out.push(ev);
    }
    Ok(out)
}

fn marker_colour(kind: InfractionKind) -> &'static str {
    match kind {
        InfractionKind::CollisionPedestrian => "#d62728",
        InfractionKind::CollisionVehicle => "#ff7f0e",
        InfractionKind::CollisionLayout => "#8c564b",
        InfractionKind::OffRoad => "#9467bd",
        InfractionKind::RouteDeviation => "#e377c2",
        InfractionKind::Blocked => "#7f7f7f",
        InfractionKind::Timeout => "#bcbd22",
    }
}

/// Top-down trajectory plot: route polyline, ego path, one marker per event.
pub fn route_svg(r: &RouteResult) -> String {
    const SIZE: f64 = 640.0;
    const PAD: f64 = 20.0;
    let points = r.route.iter().chain(&r.ego_path).copied().chain(r.events.iter().map(|e| e.position));
    let (mut lo, mut hi) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in points {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    if !lo.x.is_finite() {
        lo = Vec2::new(0.0, 0.0);
        hi = Vec2::new(1.0, 1.0);
    }
    let span = (hi.x - lo.x).max(hi.y - lo.y).max(1.0);
    let scale = (SIZE - 2.0 * PAD) / span;
    // World y points up, SVG y points down.
    let map = |p: Vec2| (PAD + (p.x - lo.x) * scale, SIZE - PAD - (p.y - lo.y) * scale);
    let polyline = |pts: &[Vec2]| {
        pts.iter()
            .map(|&p| {
                let (x, y) = map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, "<title>{} completion {:.1}%</title>", r.id(), r.completion);
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r##"<polyline class="route" fill="none" stroke="#bbbbbb" stroke-width="6" points="{}"/>"##,
        polyline(&r.route)
    );
    let _ = writeln!(
        s,
        r##"<polyline class="ego" fill="none" stroke="#1f77b4" stroke-width="2" points="{}"/>"##,
        polyline(&r.ego_path)
    );
    for e in &r.events {
        let (x, y) = map(e.position);
        let _ = writeln!(
            s,
            r#"<circle class="event" data-kind="{}" cx="{x:.2}" cy="{y:.2}" r="5" fill="{}"><title>{} at {:.2} s</title></circle>"#,
            e.kind.name(),
            marker_colour(e.kind),
            e.kind.name(),
            e.time
        );
    }
    s.push_str("</svg>\n");
    s
}

/// File name of the plot of the `index`-th route.
pub fn plot_name(index: usize, r: &RouteResult) -> String {
    format!("{index:03}-{}-{}.svg", r.scenario.kind, r.scenario.seed)
}

/// Writes the metrics table, the event log and one plot per route under `dir`.
pub fn emit_report(rep: &BenchmarkReport, dir: impl AsRef<Path>) -> Result<ReportFiles> {
    let dir = dir.as_ref();
    let plots_dir = dir.join(PLOT_DIR);
    fs::create_dir_all(&plots_dir).map_err(|e| Error::io(&plots_dir, e))?;

    let table = dir.join(TABLE_FILE);
    write_table(&rep.table()?, &table)?;

    let events = dir.join(EVENTS_FILE);
    let mut log = String::new();
    for r in &rep.routes {
        for e in &r.events {
            let line = EventLine {
                agent: rep.agent.clone(),
                route: r.id(),
                kind: e.kind,
                time: e.time,
                x: e.position.x,
                y: e.position.y,
                actor: e.actor,
            };
            log.push_str(&serde_json::to_string(&line).map_err(|e| Error::format("event log", e.to_string()))?);
            log.push('\n');
        }
    }
    fs::File::create(&events)
        .and_then(|mut f| f.write_all(log.as_bytes()))
        .map_err(|e| Error::io(&events, e))?;

    let mut plots = Vec::with_capacity(rep.routes.len());
    for (i, r) in rep.routes.iter().enumerate() {
        let path = plots_dir.join(plot_name(i, r));
        fs::write(&path, route_svg(r)).map_err(|e| Error::io(&path, e))?;
        plots.push(path);
    }
    Ok(ReportFiles { table, events, plots })
}
