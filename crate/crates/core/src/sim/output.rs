//! CSV and text reports. Floats are written in plain decimal with twelve
//! significant digits, lines end in `\n`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{CostReport, SimTrace, SweepReport};
use crate::error::{Error, Result};

/// Plain decimal, twelve significant digits, trailing zeros trimmed.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    // Let the exponent formatter do the rounding to 12 digits.
    let sci = format!("{x:.11e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..]
        .parse()
        .expect("exponent");
    let decimals = (11 - exp).max(0) as usize;
    let mut s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.truncate(s.trim_end_matches('0').trim_end_matches('.').len());
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

pub fn trace_csv(trace: &SimTrace) -> String {
    let mut out = String::from("k,agent,u,x_air,x_wall,y,E,d,iters\n");
    for step in &trace.steps {
        for (i, name) in trace.names.iter().enumerate() {
            let (e, d) = match &step.detections {
                Some(d) => (
                    format_float(d[i].deviation),
                    u8::from(d[i].flagged).to_string(),
                ),
                None => (String::new(), String::new()),
            };
            let x = &step.states[i];
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                step.k,
                name,
                format_float(step.inputs[i][0]),
                format_float(x[0]),
                format_float(x[1]),
                format_float(step.outputs[i][0]),
                e,
                d,
                step.iterations
            )
            .expect("write to string");
        }
    }
    out
}

pub fn costs_csv(report: &CostReport) -> String {
    let mut out = String::from("agent,J\n");
    for (name, j) in report.names.iter().zip(&report.per_agent) {
        writeln!(out, "{name},{}", format_float(*j)).expect("write to string");
    }
    writeln!(out, "global,{}", format_float(report.global)).expect("write to string");
    out
}

pub fn sweep_csv(report: &SweepReport) -> String {
    let mut out = String::from("tau,radius,converged,diverged,iters");
    for name in &report.names {
        write!(out, ",J_{name}").expect("write to string");
    }
    out.push_str(",J_G\n");
    for p in &report.points {
        write!(
            out,
            "{},{},{},{},{}",
            format_float(p.tau),
            format_float(p.radius),
            u8::from(p.converged),
            u8::from(p.diverged),
            p.iterations
        )
        .expect("write to string");
        for j in &p.costs {
            write!(out, ",{}", format_float(*j)).expect("write to string");
        }
        writeln!(out, ",{}", format_float(p.global)).expect("write to string");
    }
    out
}

/// Per-agent and global costs, one column per run.
pub fn cost_table(steps: usize, columns: &[(&str, &CostReport)]) -> String {
    let mut out = format!(
        "Accumulated costs J_i and J_G over N={steps} steps\n\
         (realized closed-loop trajectories; temperatures are offsets)\n\n"
    );
    let Some((_, first)) = columns.first() else {
        return out;
    };
    let width = first
        .names
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(0)
        .max(6);
    write!(out, "{:<width$}", "Agent").expect("write to string");
    for (label, _) in columns {
        write!(out, " {label:>12}").expect("write to string");
    }
    out.push('\n');
    for (i, name) in first.names.iter().enumerate() {
        write!(out, "{name:<width$}").expect("write to string");
        for (_, r) in columns {
            write!(out, " {:>12.3}", r.per_agent[i]).expect("write to string");
        }
        out.push('\n');
    }
    write!(out, "{:<width$}", "Global").expect("write to string");
    for (_, r) in columns {
        write!(out, " {:>12.3}", r.global).expect("write to string");
    }
    out.push('\n');
    out
}

pub fn summary(trace: &SimTrace, report: &CostReport) -> String {
    let mut out = cost_table(trace.steps.len(), &[(trace.mode.as_str(), report)]);
    let diverged = trace.steps.iter().filter(|s| s.diverged).count();
    let capped = trace
        .steps
        .iter()
        .filter(|s| !s.converged && !s.diverged)
        .count();
    let iters = trace.steps.iter().map(|s| s.iterations).max().unwrap_or(0);
    writeln!(
        out,
        "\nmode {}, step size {}, most negotiation iterations {iters}, diverged steps {diverged}, capped steps {capped}",
        trace.mode,
        format_float(trace.rho)
    )
    .expect("write to string");
    out
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| Error::Io { path, source })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Write `trace.csv`, `costs.csv` and `summary.txt` into `dir`.
pub fn write_outputs(trace: &SimTrace, report: &CostReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    write_file(dir, "trace.csv", &trace_csv(trace))?;
    write_file(dir, "costs.csv", &costs_csv(report))?;
    write_file(dir, "summary.txt", &summary(trace, report))
}

pub fn write_sweep(report: &SweepReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    write_file(dir, "sweep.csv", &sweep_csv(report))
}

pub fn write_text(dir: impl AsRef<Path>, name: &str, contents: &str) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    write_file(dir, name, contents)
}
