//! Two-route corridor: a tolled tunnel and a free bridge sharing a fixed
//! hourly demand.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Link performance of one route:
/// `t(f) = t0 · (1 + α · (max(f − onset, 0) / capacity)^β)` in minutes.
/// With `onset = 0` this is the plain BPR curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Route {
    pub name: String,
    pub free_flow_minutes: f64,
    /// veh/h
    pub capacity: f64,
    pub bpr_alpha: f64,
    pub bpr_beta: f64,
    /// Flow (veh/h) below which the route runs at free-flow speed.
    #[serde(default)]
    pub onset: f64,
    pub distance_km: f64,
}

impl Route {
    pub fn minutes(&self, flow: f64) -> f64 {
        let excess = (flow - self.onset).max(0.0);
        self.free_flow_minutes * (1.0 + self.bpr_alpha * (excess / self.capacity).powf(self.bpr_beta))
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("free_flow_minutes", self.free_flow_minutes),
            ("capacity", self.capacity),
            ("bpr_alpha", self.bpr_alpha),
            ("bpr_beta", self.bpr_beta),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("route {}: {key} must be positive", self.name)));
            }
        }
        if !(self.onset.is_finite() && self.onset >= 0.0) {
            return Err(Error::Config(format!("route {}: onset must be >= 0", self.name)));
        }
        if !(self.distance_km.is_finite() && self.distance_km >= 0.0) {
            return Err(Error::Config(format!("route {}: distance_km must be >= 0", self.name)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorridorModel {
    /// veh/h
    pub total_demand: f64,
    /// The priced, faster-at-low-flow route.
    pub tunnel: Route,
    /// The free alternative.
    pub bridge: Route,
    /// liters/km
    pub fuel_consumption: f64,
    /// currency/liter
    pub fuel_price: f64,
}

/// Calibrated default corridor.
impl Default for CorridorModel {
    fn default() -> Self {
        Self {
            total_demand: 10_000.0,
            tunnel: Route {
                name: "Lincoln Tunnel".into(),
                free_flow_minutes: 35.0,
                capacity: 1443.39,
                bpr_alpha: 0.15,
                bpr_beta: 1.324_415,
                onset: 3830.79,
                distance_km: 26.55,
            },
            bridge: Route {
                name: "George Washington Bridge".into(),
                free_flow_minutes: 40.0,
                capacity: 162_888.0,
                bpr_alpha: 0.15,
                bpr_beta: 0.065_125_5,
                onset: 0.0,
                distance_km: 49.89,
            },
            fuel_consumption: 0.065,
            fuel_price: 0.96,
        }
    }
}

/// A split of the demand between the two routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowSplit {
    pub tunnel_flow: f64,
    pub bridge_flow: f64,
    pub tunnel_minutes: f64,
    pub bridge_minutes: f64,
    pub total_vehicle_hours: f64,
}

impl FlowSplit {
    pub fn tunnel_share(&self) -> f64 {
        let total = self.tunnel_flow + self.bridge_flow;
        if total > 0.0 {
            self.tunnel_flow / total
        } else {
            0.0
        }
    }

    pub fn average_minutes(&self) -> f64 {
        let total = self.tunnel_flow + self.bridge_flow;
        if total > 0.0 {
            60.0 * self.total_vehicle_hours / total
        } else {
            0.0
        }
    }
}

/// Bisection and golden-section searches stop below this bracket width (veh/h).
pub const FLOW_TOL: f64 = 1e-6;

impl CorridorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.total_demand.is_finite() && self.total_demand >= 0.0) {
            return Err(Error::Config("total_demand must be >= 0".into()));
        }
        self.tunnel.validate()?;
        self.bridge.validate()?;
        if !(self.fuel_consumption >= 0.0 && self.fuel_price >= 0.0) {
            return Err(Error::Config("fuel constants must be >= 0".into()));
        }
        Ok(())
    }

    /// Fuel cost of one trip over `route`.
    pub fn fuel_cost(&self, route: &Route) -> f64 {
        route.distance_km * self.fuel_consumption * self.fuel_price
    }

    pub fn tunnel_fuel(&self) -> f64 {
        self.fuel_cost(&self.tunnel)
    }

    pub fn bridge_fuel(&self) -> f64 {
        self.fuel_cost(&self.bridge)
    }

    /// Split with `tunnel_flow` on the tunnel and the rest on the bridge.
    pub fn split(&self, tunnel_flow: f64) -> FlowSplit {
        let tunnel_flow = tunnel_flow.clamp(0.0, self.total_demand);
        let bridge_flow = self.total_demand - tunnel_flow;
        let tunnel_minutes = self.tunnel.minutes(tunnel_flow);
        let bridge_minutes = self.bridge.minutes(bridge_flow);
        FlowSplit {
            tunnel_flow,
            bridge_flow,
            tunnel_minutes,
            bridge_minutes,
            total_vehicle_hours: (tunnel_flow * tunnel_minutes + bridge_flow * bridge_minutes)
                / 60.0,
        }
    }

    /// User equilibrium: travel times equal, or everyone on one route when
    /// that route is faster even fully loaded.
    pub fn wardrop_split(&self) -> FlowSplit {
        let gap = |f: f64| self.tunnel.minutes(f) - self.bridge.minutes(self.total_demand - f);
        if gap(self.total_demand) <= 0.0 {
            return self.split(self.total_demand);
        }
        if gap(0.0) >= 0.0 {
            return self.split(0.0);
        }
        let (mut lo, mut hi) = (0.0, self.total_demand);
        while hi - lo > FLOW_TOL {
            let mid = 0.5 * (lo + hi);
            if gap(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.split(0.5 * (lo + hi))
    }

    /// Split minimizing total vehicle-hours, by golden-section search.
    pub fn system_optimum(&self) -> FlowSplit {
        let vh = |f: f64| self.split(f).total_vehicle_hours;
        let ratio = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (0.0, self.total_demand);
        let mut c = b - ratio * (b - a);
        let mut d = a + ratio * (b - a);
        let (mut fc, mut fd) = (vh(c), vh(d));
        while b - a > FLOW_TOL {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - ratio * (b - a);
                fc = vh(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + ratio * (b - a);
                fd = vh(d);
            }
        }
        let best = [0.0, 0.5 * (a + b), self.total_demand]
            .into_iter()
            .map(|f| self.split(f))
            .min_by(|x, y| x.total_vehicle_hours.total_cmp(&y.total_vehicle_hours))
            .expect("non-empty");
        best
    }

    /// Tunnel-minus-bridge time advantage (minutes) at a split.
    pub fn time_saving(&self, tunnel_flow: f64) -> f64 {
        let s = self.split(tunnel_flow);
        s.bridge_minutes - s.tunnel_minutes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn symmetric() -> CorridorModel {
        let route = Route {
            name: "a".into(),
            free_flow_minutes: 30.0,
            capacity: 2000.0,
            bpr_alpha: 0.15,
            bpr_beta: 4.0,
            onset: 0.0,
            distance_km: 10.0,
        };
        CorridorModel {
            total_demand: 5000.0,
            tunnel: route.clone(),
            bridge: Route {
                name: "b".into(),
                ..route
            },
            fuel_consumption: 0.065,
            fuel_price: 0.96,
        }
    }

    #[test]
    fn zero_demand_runs_at_free_flow() {
        let model = CorridorModel {
            total_demand: 0.0,
            ..CorridorModel::default()
        };
        let s = model.split(0.0);
        assert_eq!(s.tunnel_minutes, 35.0);
        assert_eq!(s.bridge_minutes, 40.0);
        let w = model.wardrop_split();
        assert_eq!(w.tunnel_flow, 0.0);
        assert_eq!(w.total_vehicle_hours, 0.0);
    }

    #[test]
    fn light_demand_all_on_faster_route() {
        let model = CorridorModel {
            total_demand: 1.0,
            ..CorridorModel::default()
        };
        let w = model.wardrop_split();
        assert_eq!(w.tunnel_flow, 1.0);
        assert_eq!(w.bridge_flow, 0.0);
    }

    #[test]
    fn symmetric_routes_split_evenly() {
        let model = symmetric();
        assert_abs_diff_eq!(model.wardrop_split().tunnel_flow, 2500.0, epsilon = 1e-3);
        assert_abs_diff_eq!(model.system_optimum().tunnel_flow, 2500.0, epsilon = 1e-2);
    }

    #[test]
    fn linear_times_match_marginal_cost_equality() {
        // t1 = 10 + f/100, t2 = 20 + g/200 (β = 1, α = 1, onset 0).
        // Optimum: 10 + 2f/100 = 20 + 2g/200 with g = D − f.
        let mk = |name: &str, t0: f64, cap: f64| Route {
            name: name.into(),
            free_flow_minutes: t0,
            capacity: cap,
            bpr_alpha: 1.0,
            bpr_beta: 1.0,
            onset: 0.0,
            distance_km: 1.0,
        };
        let model = CorridorModel {
            total_demand: 3000.0,
            tunnel: mk("a", 10.0, 1000.0),
            bridge: mk("b", 20.0, 4000.0),
            fuel_consumption: 0.0,
            fuel_price: 0.0,
        };
        // t_a = 10 + f/100, t_b = 20 + g/200
        // marginal: 10 + f/50 = 20 + g/100, g = 3000 − f → f = 4000/3
        let f_opt = 4000.0 / 3.0;
        assert_abs_diff_eq!(model.system_optimum().tunnel_flow, f_opt, epsilon = 1e-3);
        // equal times: 10 + f/100 = 20 + (3000 − f)/200 → f = 5000/3
        assert_abs_diff_eq!(
            model.wardrop_split().tunnel_flow,
            5000.0 / 3.0,
            epsilon = 1e-3
        );
    }

    #[test]
    fn default_corridor_reproduces_anchors() {
        let model = CorridorModel::default();
        let w = model.wardrop_split();
        assert!((w.tunnel_flow - 6169.0).abs() <= 62.0, "{w:?}");
        assert!((w.tunnel_minutes - w.bridge_minutes).abs() < 0.01);
        assert!((w.average_minutes() - 45.01).abs() / 45.01 < 0.01);
        assert_abs_diff_eq!(w.tunnel_flow + w.bridge_flow, 10_000.0, epsilon = 1e-9);
        let o = model.system_optimum();
        assert!((o.tunnel_flow - 3983.0).abs() / 3983.0 < 0.01, "{o:?}");
        assert!((o.total_vehicle_hours - 6791.0).abs() / 6791.0 < 0.01);
    }

    #[test]
    fn optimum_is_a_local_minimum() {
        let model = CorridorModel::default();
        let o = model.system_optimum();
        for step in [-10.0, 10.0] {
            assert!(model.split(o.tunnel_flow + step).total_vehicle_hours >= o.total_vehicle_hours);
        }
    }

    #[test]
    fn fuel_costs() {
        let model = CorridorModel::default();
        assert_abs_diff_eq!(model.tunnel_fuel(), 26.55 * 0.065 * 0.96, epsilon = 1e-12);
        assert_abs_diff_eq!(model.bridge_fuel(), 49.89 * 0.065 * 0.96, epsilon = 1e-12);
    }

    #[test]
    fn travel_times_are_monotone() {
        let model = CorridorModel::default();
        let mut prev = (0.0, 0.0);
        for i in 0..=100 {
            let f = 100.0 * i as f64;
            let t = (model.tunnel.minutes(f), model.bridge.minutes(f));
            assert!(t.0 >= prev.0 && t.1 >= prev.1);
            prev = t;
        }
    }
}
