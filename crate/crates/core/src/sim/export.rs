//! Delimited-text trace tables and the external participant-list reader.

use std::io::{BufRead, Write};

use super::{EpochSummary, InteractionRecord, Population};
use crate::error::{Error, Result};
use crate::model::Karma;
use std::collections::BTreeMap;

pub fn write_epoch_summaries<W: Write>(mut out: W, rows: &[EpochSummary]) -> Result<()> {
    writeln!(out, "epoch,interactions,total_karma,overflow,mean_cost,digest")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:016x}",
            r.epoch, r.interactions, r.total_karma, r.overflow, r.mean_cost, r.digest
        )?;
    }
    Ok(())
}

pub fn write_agents<W: Write>(mut out: W, population: &Population) -> Result<()> {
    writeln!(out, "agent,type,urgency,karma,cumulative_cost,encounters")?;
    for (i, a) in population.agents.iter().enumerate() {
        writeln!(
            out,
            "{i},{},{},{},{},{}",
            a.ty, a.urgency, a.karma, a.cumulative_cost, a.encounters
        )?;
    }
    Ok(())
}

pub fn write_transitions<W: Write>(
    mut out: W,
    counts: &BTreeMap<(Karma, Karma), u64>,
) -> Result<()> {
    writeln!(out, "karma_before,karma_after,count")?;
    for ((from, to), n) in counts {
        writeln!(out, "{from},{to},{n}")?;
    }
    Ok(())
}

fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_interactions<W: Write>(mut out: W, records: &[InteractionRecord]) -> Result<()> {
    writeln!(
        out,
        "epoch,participants,karma_before,bids,outcome,deltas,to_overflow"
    )?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            join(&r.participants),
            join(&r.karma_before),
            join(&r.bids),
            join(&r.outcome),
            join(&r.deltas),
            r.to_overflow
        )?;
    }
    Ok(())
}

/// One interaction per line: agent indices separated by whitespace or
/// commas. Blank lines and `#` comments are skipped.
pub fn read_participant_list<R: BufRead>(input: R, arity: usize) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let tuple = body
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>().map_err(|_| {
                    Error::Config(format!("line {}: `{s}` is not an agent index", n + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if tuple.len() != arity {
            return Err(Error::Contract(format!(
                "line {}: {} participants, expected {arity}",
                n + 1,
                tuple.len()
            )));
        }
        out.push(tuple);
    }
    Ok(out)
}
