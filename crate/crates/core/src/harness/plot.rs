use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::config::Method;
use super::metrics::{aggregate, criterion_label, AggregateRow, SummaryRow};
use crate::error::{Error, Result};

/// Which selected checkpoint each series shows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    /// Each method's own criterion (true reward for `sac_env_reward`).
    Own,
    TrueReward,
}

impl std::str::FromStr for Selection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "own" => Ok(Selection::Own),
            "true_reward" => Ok(Selection::TrueReward),
            other => Err(Error::Config(format!(
                "unknown selection '{other}' (expected own or true_reward)"
            ))),
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn wanted(row: &AggregateRow, selection: Selection) -> bool {
    match selection {
        Selection::TrueReward => row.selected_by == "true_reward",
        Selection::Own => {
            let own = row
                .method
                .parse::<Method>()
                .ok()
                .and_then(criterion_label)
                .unwrap_or("true_reward");
            row.selected_by == own
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Relative return against K, one series per (method, env), with shaded
/// bootstrap bands where more than one seed exists. Output depends only on
/// the rows, so identical input gives identical bytes.
pub fn plot_svg(rows: &[SummaryRow], selection: Selection) -> Result<String> {
    let agg: Vec<AggregateRow> = aggregate(rows)
        .into_iter()
        .filter(|r| wanted(r, selection))
        .collect();
    if agg.is_empty() {
        return Err(Error::Config(
            "no summary rows match the requested selection".into(),
        ));
    }
    let mut series: BTreeMap<(String, String), Vec<&AggregateRow>> = BTreeMap::new();
    for r in &agg {
        series
            .entry((r.method.clone(), r.env.clone()))
            .or_default()
            .push(r);
    }
    let multi_env = series
        .keys()
        .map(|(_, e)| e)
        .collect::<std::collections::BTreeSet<_>>()
        .len()
        > 1;

    let ks: Vec<f64> = agg.iter().map(|r| r.k as f64).collect();
    let (mut x0, mut x1) = (
        ks.iter().cloned().fold(f64::INFINITY, f64::min),
        ks.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    if x0 == x1 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let finite = |v: f64| if v.is_finite() { Some(v) } else { None };
    let ys: Vec<f64> = agg
        .iter()
        .flat_map(|r| [r.mean_relative, r.ci_low, r.ci_high])
        .filter_map(finite)
        .chain([0.0, 1.0])
        .collect();
    let (mut y0, mut y1) = (
        ys.iter().cloned().fold(f64::INFINITY, f64::min),
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let pad = 0.05 * (y1 - y0).max(1e-9);
    y0 -= pad;
    y1 += pad;

    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let title = match selection {
        Selection::Own => "Relative return vs expert trajectories (own criterion)",
        Selection::TrueReward => "Relative return vs expert trajectories (true reward)",
    };
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{title}</text>"#,
        LEFT + pw / 2.0
    );
    // Axes.
    let _ = writeln!(
        s,
        r#"<path d="M{:.2},{:.2} L{:.2},{:.2} L{:.2},{:.2}" fill="none" stroke="black"/>"#,
        LEFT,
        TOP,
        LEFT,
        TOP + ph,
        LEFT + pw,
        TOP + ph
    );
    let mut kticks: Vec<usize> = agg.iter().map(|r| r.k).collect();
    kticks.sort_unstable();
    kticks.dedup();
    for k in &kticks {
        let x = px(*k as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            TOP + ph,
            TOP + ph + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{k}</text>"#,
            TOP + ph + 18.0
        );
    }
    for i in 0..=5 {
        let v = y0 + (y1 - y0) * i as f64 / 5.0;
        let y = py(v);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}" stroke="black"/>"#,
            LEFT - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#,
            LEFT - 8.0,
            y + 4.0
        );
    }
    let ye = py(1.0);
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT:.2}" y1="{ye:.2}" x2="{:.2}" y2="{ye:.2}" stroke="gray" stroke-dasharray="4,3"/>"#,
        LEFT + pw
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">expert trajectories K</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">return relative to expert</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    for (i, ((method, env), pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let label = if multi_env {
            format!("{method} ({env})")
        } else {
            method.clone()
        };
        let banded: Vec<&&AggregateRow> = pts
            .iter()
            .filter(|p| p.n_seeds > 1 && p.ci_high > p.ci_low)
            .collect();
        if banded.len() == pts.len() && pts.len() > 1 {
            let mut d = String::new();
            for (j, p) in pts.iter().enumerate() {
                let _ = write!(
                    d,
                    "{}{:.2},{:.2} ",
                    if j == 0 { "M" } else { "L" },
                    px(p.k as f64),
                    py(p.ci_high)
                );
            }
            for p in pts.iter().rev() {
                let _ = write!(d, "L{:.2},{:.2} ", px(p.k as f64), py(p.ci_low));
            }
            let _ = writeln!(
                s,
                r#"<path d="{}Z" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                d
            );
        } else {
            for p in banded {
                let x = px(p.k as f64);
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}" stroke-opacity="0.5" stroke-width="6"/>"#,
                    py(p.ci_low),
                    py(p.ci_high)
                );
            }
        }
        if pts.len() > 1 {
            let d: Vec<String> = pts
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    format!(
                        "{}{:.2},{:.2}",
                        if j == 0 { "M" } else { "L" },
                        px(p.k as f64),
                        py(p.mean_relative)
                    )
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<path d="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                d.join(" ")
            );
        }
        for p in pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#,
                px(p.k as f64),
                py(p.mean_relative)
            );
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
