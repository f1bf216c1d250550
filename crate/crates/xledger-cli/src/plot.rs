//! Static SVG line plots rendered from benchmark CSV text. Pure function
//! of the CSV bytes: integer pixel coordinates, fixed palette, no
//! timestamps, so output is byte-stable across runs and platforms.

use std::fmt::Write as _;

use xledger::netsim::Protocol;

use crate::{parse_csv, CsvRow};

const WIDTH: i64 = 640;
const HEIGHT: i64 = 420;
const MARGIN_LEFT: i64 = 70;
const MARGIN_RIGHT: i64 = 20;
const MARGIN_TOP: i64 = 40;
const MARGIN_BOTTOM: i64 = 50;

fn series_color(protocol: Protocol) -> &'static str {
    match protocol {
        Protocol::Xlpn22 => "#1b7837",
        Protocol::Vldb20 => "#2166ac",
        Protocol::Podc18 => "#b2182b",
        Protocol::Pbft => "#777777",
    }
}

fn x_value(row: &CsvRow, grid: &str) -> u64 {
    match grid {
        "txn" => row.txn_count,
        "node" => row.n as u64,
        "ledger" => row.k as u64,
        _ => row.txn_count,
    }
}

fn x_label(grid: &str) -> &'static str {
    match grid {
        "txn" => "transactions",
        "node" => "nodes per ledger",
        "ledger" => "ledgers",
        _ => "x",
    }
}

/// Render the line plot for one grid's CSV: x is the grid axis, y is
/// sim_time_units, one series per protocol.
pub fn render_from_csv(csv: &str, grid: &str) -> String {
    let rows = parse_csv(csv);
    let xs: Vec<u64> = {
        let mut v: Vec<u64> = rows.iter().map(|r| x_value(r, grid)).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let y_max = rows.iter().map(|r| r.sim_time_units).max().unwrap_or(1).max(1);
    let x_max = xs.iter().copied().max().unwrap_or(1).max(1);
    let x_min = xs.iter().copied().min().unwrap_or(0);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_px = |x: u64| -> i64 {
        if x_max == x_min {
            MARGIN_LEFT + plot_w / 2
        } else {
            MARGIN_LEFT + ((x - x_min) as i128 * plot_w as i128 / (x_max - x_min) as i128) as i64
        }
    };
    let y_px = |y: u64| -> i64 {
        MARGIN_TOP + plot_h - (y as i128 * plot_h as i128 / y_max as i128) as i64
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="monospace" font-size="15" text-anchor="middle">simulated time by {} ({} grid)</text>"#,
        WIDTH / 2,
        x_label(grid),
        grid
    );

    // axes
    let x0 = MARGIN_LEFT;
    let y0 = MARGIN_TOP + plot_h;
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{MARGIN_TOP}" x2="{x0}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="black"/>"#, MARGIN_LEFT + plot_w);

    // x ticks at the grid's axis values
    for &x in &xs {
        let px = x_px(x);
        let _ = writeln!(svg, r#"<line x1="{px}" y1="{y0}" x2="{px}" y2="{}" stroke="black"/>"#, y0 + 5);
        let _ = writeln!(
            svg,
            r#"<text x="{px}" y="{}" font-family="monospace" font-size="11" text-anchor="middle">{x}</text>"#,
            y0 + 18
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="monospace" font-size="12" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2,
        HEIGHT - 12,
        x_label(grid)
    );

    // y ticks: 0, half, max
    for y in [0, y_max / 2, y_max] {
        let py = y_px(y);
        let _ = writeln!(svg, r#"<line x1="{}" y1="{py}" x2="{x0}" y2="{py}" stroke="black"/>"#, x0 - 5);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="monospace" font-size="11" text-anchor="end">{y}</text>"#,
            x0 - 8,
            py + 4
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" font-family="monospace" font-size="12" transform="rotate(-90 16 {})" text-anchor="middle">sim_time_units</text>"#,
        MARGIN_TOP + plot_h / 2,
        MARGIN_TOP + plot_h / 2
    );

    // one polyline per protocol present in the rows
    let mut legend_y = MARGIN_TOP + 8;
    for protocol in Protocol::CROSS_LEDGER {
        let mut series: Vec<(u64, u64)> = rows
            .iter()
            .filter(|r| r.protocol == protocol)
            .map(|r| (x_value(r, grid), r.sim_time_units))
            .collect();
        if series.is_empty() {
            continue;
        }
        series.sort_unstable();
        let points: Vec<String> = series
            .iter()
            .map(|&(x, y)| format!("{},{}", x_px(x), y_px(y)))
            .collect();
        let color = series_color(protocol);
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        for &(x, y) in &series {
            let _ = writeln!(svg, r#"<circle cx="{}" cy="{}" r="3" fill="{color}"/>"#, x_px(x), y_px(y));
        }
        let lx = MARGIN_LEFT + plot_w - 110;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{legend_y}" x2="{}" y2="{legend_y}" stroke="{color}" stroke-width="2"/>"#, lx + 22);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="monospace" font-size="12">{}</text>"#,
            lx + 28,
            legend_y + 4,
            protocol.label()
        );
        legend_y += 16;
    }

    svg.push_str("</svg>\n");
    svg
}
