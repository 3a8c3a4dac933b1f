//! Plot-ready delimited tables for the case study.

use std::io::Write;

use super::calibrate::Calibration;
use super::study::{GiniPoint, ScenarioPricing};
use crate::error::Result;

/// `parameter,route,value` rows followed by `anchor` residual rows.
pub fn write_calibration<W: Write>(mut out: W, cal: &Calibration) -> Result<()> {
    writeln!(out, "kind,name,target,value,relative_residual")?;
    for (route, r) in [("tunnel", &cal.model.tunnel), ("bridge", &cal.model.bridge)] {
        for (name, v) in [
            ("free_flow_minutes", r.free_flow_minutes),
            ("capacity", r.capacity),
            ("bpr_alpha", r.bpr_alpha),
            ("bpr_beta", r.bpr_beta),
            ("onset", r.onset),
        ] {
            writeln!(out, "parameter,{route}.{name},,{v},")?;
        }
    }
    for a in &cal.residuals {
        writeln!(out, "anchor,{},{},{},{}", a.name, a.target, a.model, a.relative)?;
    }
    Ok(())
}

pub fn write_toll_curve<W: Write>(mut out: W, runs: &[ScenarioPricing]) -> Result<()> {
    writeln!(out, "scenario,toll,tunnel_share")?;
    for r in runs {
        for (toll, share) in &r.toll_curve {
            writeln!(out, "{},{toll},{share}", r.scenario.name)?;
        }
    }
    Ok(())
}

pub fn write_threshold_curve<W: Write>(mut out: W, runs: &[ScenarioPricing]) -> Result<()> {
    writeln!(
        out,
        "scenario,threshold,tunnel_share,avg_urgency_tunnel,avg_urgency_bridge,converged,iterations,final_residual,karma_len,action_len"
    )?;
    for r in runs {
        for p in &r.karma_points {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{:e},{},{}",
                r.scenario.name,
                p.threshold,
                p.share,
                p.avg_urgency_tunnel,
                p.avg_urgency_bridge,
                p.converged,
                p.iterations,
                p.final_residual,
                p.karma_len,
                p.action_len
            )?;
        }
    }
    Ok(())
}

/// Headline prices per scenario.
pub fn write_prices<W: Write>(mut out: W, runs: &[ScenarioPricing]) -> Result<()> {
    writeln!(
        out,
        "scenario,target_share,optimal_toll,money_share,karma_threshold,karma_lower,karma_upper"
    )?;
    for r in runs {
        let (th, lo, hi) = r
            .karma_crossing
            .as_ref()
            .map_or((String::new(), String::new(), String::new()), |c| {
                (c.threshold.to_string(), c.lower.to_string(), c.upper.to_string())
            });
        writeln!(
            out,
            "{},{},{},{},{th},{lo},{hi}",
            r.scenario.name,
            r.optimum.tunnel_share(),
            r.optimal_toll,
            r.money.tunnel_share()
        )?;
    }
    Ok(())
}

pub fn write_shares_by_wage<W: Write>(
    mut out: W,
    runs: &[ScenarioPricing],
    wages: &[f64],
    weights: &[f64],
) -> Result<()> {
    writeln!(
        out,
        "scenario,stratum,hourly_wage,weight,money_share,money_minutes,karma_share,karma_minutes"
    )?;
    for r in runs {
        for (i, (w, p)) in wages.iter().zip(weights).enumerate() {
            let (ks, km) = r.karma.as_ref().map_or((f64::NAN, f64::NAN), |k| {
                (k.share_by_wage[i], k.minutes_by_wage[i])
            });
            writeln!(
                out,
                "{},{i},{w},{p},{},{},{ks},{km}",
                r.scenario.name, r.money.share_by_wage[i], r.money.minutes_by_wage[i]
            )?;
        }
    }
    Ok(())
}

pub fn write_shares_by_urgency<W: Write>(mut out: W, runs: &[ScenarioPricing]) -> Result<()> {
    writeln!(
        out,
        "scenario,urgency,weight,money_share,money_minutes,karma_share,karma_minutes"
    )?;
    for r in runs {
        for (l, p) in r.urgency_weights.iter().enumerate() {
            let (ks, km) = r.karma.as_ref().map_or((f64::NAN, f64::NAN), |k| {
                (k.share_by_urgency[l], k.minutes_by_urgency[l])
            });
            writeln!(
                out,
                "{},{},{p},{},{},{ks},{km}",
                r.scenario.name,
                l + 1,
                r.money.share_by_urgency[l],
                r.money.minutes_by_urgency[l]
            )?;
        }
    }
    Ok(())
}

/// P(urgency = level | route) for both mechanisms.
pub fn write_route_urgency<W: Write>(mut out: W, runs: &[ScenarioPricing]) -> Result<()> {
    writeln!(
        out,
        "scenario,urgency,money_tunnel,money_bridge,karma_tunnel,karma_bridge"
    )?;
    let conditional = |shares: &[f64], weights: &[f64]| {
        let on: f64 = shares.iter().zip(weights).map(|(s, w)| s * w).sum();
        let off = 1.0 - on;
        shares
            .iter()
            .zip(weights)
            .map(|(s, w)| {
                (
                    if on > 0.0 { s * w / on } else { 0.0 },
                    if off > 0.0 { (1.0 - s) * w / off } else { 0.0 },
                )
            })
            .collect::<Vec<_>>()
    };
    for r in runs {
        let money = conditional(&r.money.share_by_urgency, &r.urgency_weights);
        let karma = r
            .karma
            .as_ref()
            .map(|k| conditional(&k.share_by_urgency, &r.urgency_weights));
        for (l, m) in money.iter().enumerate() {
            let k = karma.as_ref().map_or((f64::NAN, f64::NAN), |k| k[l]);
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.scenario.name,
                l + 1,
                m.0,
                m.1,
                k.0,
                k.1
            )?;
        }
    }
    Ok(())
}

pub fn write_cost_benefit<W: Write>(mut out: W, runs: &[ScenarioPricing]) -> Result<()> {
    writeln!(
        out,
        "scenario,row,tunnel_share,avg_minutes,total_vehicle_hours,fuel,fee,time,total"
    )?;
    for r in runs {
        let Some(table) = &r.table else { continue };
        for row in table.rows() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.scenario.name,
                row.label,
                row.tunnel_share,
                row.avg_minutes,
                row.total_vehicle_hours,
                row.costs.fuel,
                row.costs.fee,
                row.costs.time,
                row.costs.total()
            )?;
        }
    }
    Ok(())
}

pub fn write_gini_sweep<W: Write>(mut out: W, points: &[GiniPoint]) -> Result<()> {
    writeln!(
        out,
        "scenario,gini_target,gini_realized,optimal_toll,money_avg_urgency_tunnel,karma_avg_urgency_tunnel"
    )?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.scenario,
            p.gini_target,
            p.gini_realized,
            p.optimal_toll,
            p.money_avg_urgency_tunnel,
            p.karma_avg_urgency_tunnel
        )?;
    }
    Ok(())
}
