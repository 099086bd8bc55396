//! Deterministic text rendering of run results: the per-run report CSV, the
//! per-run timeseries CSV, and a human-readable summary.

use std::fmt::Write;

use crate::sim::RunResult;

fn fmt_score(score: Option<f64>) -> String {
    match score {
        Some(s) => format!("{s:.6}"),
        None => "NA".to_string(),
    }
}

/// Report header for runs with `n_c` clients.
pub fn report_header(n_c: u32) -> String {
    let mut h = String::from(
        "run-id,seed,n_c,n_p,m_p,n_o,f_o,infected-peers,infected-orderers,fixed-delay,peer-urd-max,g",
    );
    for c in 0..n_c {
        write!(h, ",score-c{c}").unwrap();
    }
    h.push_str(
        ",receive-peers,block-peers,differential-peers,\
         receive-orderers,block-orderers,differential-orderers",
    );
    h
}

pub fn report_row(r: &RunResult) -> String {
    let t = r.config.topology;
    let mut row = format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        r.config.name,
        r.config.seed,
        t.n_c,
        t.n_p,
        t.m_p,
        t.n_o,
        t.f_o,
        r.config.infected_peers(),
        r.config.infected_orderers(),
        r.config.adversary.fixed_delay,
        r.config.delays.peer_max,
        r.g,
    );
    for s in &r.scores {
        write!(row, ",{}", fmt_score(*s)).unwrap();
    }
    let c = r.counters;
    write!(
        row,
        ",{},{},{},{},{},{}",
        c.receive_peers,
        c.block_peers,
        c.differential_peers,
        c.receive_orderers,
        c.block_orderers,
        c.differential_orderers
    )
    .unwrap();
    row
}

/// One report CSV for a batch of runs (all with the same client count).
pub fn render_report(runs: &[RunResult]) -> String {
    let n_c = runs.first().map(|r| r.config.topology.n_c).unwrap_or(0);
    let mut out = report_header(n_c);
    out.push('\n');
    for r in runs {
        out.push_str(&report_row(r));
        out.push('\n');
    }
    out
}

/// Timeseries CSV: one row per canonical-ledger change plus the horizon.
pub fn render_timeseries(r: &RunResult) -> String {
    let n_c = r.config.topology.n_c;
    let mut out = String::from("tick,g");
    for c in 0..n_c {
        write!(out, ",score-c{c}").unwrap();
    }
    out.push('\n');
    for p in &r.timeseries {
        write!(out, "{},{}", p.tick, p.g).unwrap();
        for s in &p.scores {
            write!(out, ",{}", fmt_score(*s)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Human-readable run summaries, one paragraph per run.
pub fn render_summary(runs: &[RunResult]) -> String {
    let mut out = String::new();
    for r in runs {
        writeln!(out, "run {} (seed {})", r.config.name, r.config.seed).unwrap();
        writeln!(
            out,
            "  height {}  games {}  agreement {}",
            r.final_height,
            r.g,
            if r.agreement_ok { "ok" } else { "VIOLATED" }
        )
        .unwrap();
        let scores: Vec<String> = r
            .scores
            .iter()
            .enumerate()
            .map(|(c, s)| format!("c{c}={}", fmt_score(*s)))
            .collect();
        writeln!(out, "  scores {}", scores.join(" ")).unwrap();
        let c = r.counters;
        writeln!(
            out,
            "  violations peers(recv={} block={} diff={}) orderers(recv={} block={} diff={})",
            c.receive_peers,
            c.block_peers,
            c.differential_peers,
            c.receive_orderers,
            c.block_orderers,
            c.differential_orderers
        )
        .unwrap();
        writeln!(out, "  adversary goal: {}", if r.goal_met { "met" } else { "not met" }).unwrap();
        if !r.refusals.is_empty() {
            writeln!(out, "  refused actions: {}", r.refusals.len()).unwrap();
        }
    }
    out
}
