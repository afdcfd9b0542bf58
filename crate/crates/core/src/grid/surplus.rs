//! Splits one period's social welfare among consumers, producers and the
//! grid.
//!
//! Every participant settles its physical imbalance (what it injected minus
//! what it sold to peers) with the grid at its nodal price. The grid owns
//! the thermal plants, so its surplus is plant profit plus the merchandise
//! surplus left by nodal price differences, plus any service fees.

use super::model::GridModel;
use super::opf::OpfSolution;
use super::GridError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ResourceClass {
    Load,
    Ev,
    Renewable,
    Storage,
}

impl ResourceClass {
    pub fn is_consumer(&self) -> bool {
        matches!(self, ResourceClass::Load | ResourceClass::Ev)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ResourceClass::Load => "load",
            ResourceClass::Ev => "ev",
            ResourceClass::Renewable => "renewable",
            ResourceClass::Storage => "storage",
        }
    }
}

/// One non-plant participant's energy and money over a period.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantFlow {
    pub name: String,
    pub class: ResourceClass,
    /// Index into `GridModel::nodes`.
    pub node: usize,
    /// Physical net injection, kWh (negative for consumption).
    pub injection_kwh: f64,
    /// Net energy sold to peers, kWh (negative when buying).
    pub sold_kwh: f64,
    /// Net money received from peers, CNY.
    pub peer_revenue: f64,
    /// Gross utility of consumption, CNY.
    pub utility: f64,
    pub service_fee: f64,
}

impl ParticipantFlow {
    pub fn new(name: &str, class: ResourceClass, node: usize, injection_kwh: f64) -> Self {
        ParticipantFlow {
            name: name.to_string(),
            class,
            node,
            injection_kwh,
            sold_kwh: 0.0,
            peer_revenue: 0.0,
            utility: 0.0,
            service_fee: 0.0,
        }
    }

    /// Money received from the grid for the imbalance, CNY.
    pub fn grid_revenue(&self, lmp: &[f64]) -> f64 {
        lmp[self.node] * (self.injection_kwh - self.sold_kwh)
    }

    pub fn surplus(&self, lmp: &[f64]) -> f64 {
        self.utility + self.peer_revenue + self.grid_revenue(lmp) - self.service_fee
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurplusReport {
    pub consumer: Vec<(String, f64)>,
    pub producer: Vec<(String, f64)>,
    pub plant_profit: f64,
    pub merchandise_surplus: f64,
    pub service_fee: f64,
    pub grid_surplus: f64,
    pub welfare: f64,
    pub thermal_kwh: f64,
    pub carbon_t: f64,
    /// What the grid collected from participants net of what it paid them.
    pub grid_revenue: f64,
}

impl SurplusReport {
    pub fn consumer_total(&self) -> f64 {
        self.consumer.iter().map(|c| c.1).sum()
    }

    pub fn producer_total(&self) -> f64 {
        self.producer.iter().map(|c| c.1).sum()
    }

    pub fn partition_total(&self) -> f64 {
        self.consumer_total() + self.producer_total() + self.grid_surplus
    }
}

pub fn account_surplus(
    grid: &GridModel,
    solution: &OpfSolution,
    participants: &[ParticipantFlow],
) -> Result<SurplusReport, GridError> {
    let hours = grid.period_hours;
    let lmp = &solution.lmp;
    let mut plant_revenue = 0.0;
    let mut thermal_kwh = 0.0;
    let mut carbon_g = 0.0;
    for (p, kw) in grid.plants.iter().zip(&solution.plant_kw) {
        let node = grid.node_index(p.node)?;
        let kwh = kw * hours;
        plant_revenue += lmp[node] * kwh;
        thermal_kwh += kwh;
        carbon_g += kwh * p.carbon_g_per_kwh;
    }
    let plant_profit = plant_revenue - solution.total_cost;
    let mut consumer = Vec::new();
    let mut producer = Vec::new();
    let mut paid_to_participants = 0.0;
    let mut service_fee = 0.0;
    let mut utility = 0.0;
    let mut peer_net = 0.0;
    for f in participants {
        let s = f.surplus(lmp);
        paid_to_participants += f.grid_revenue(lmp);
        service_fee += f.service_fee;
        utility += f.utility;
        peer_net += f.peer_revenue;
        if f.class.is_consumer() {
            consumer.push((f.name.clone(), s));
        } else {
            producer.push((f.name.clone(), s));
        }
    }
    let merchandise_surplus = -paid_to_participants - plant_revenue;
    let grid_surplus = plant_profit + merchandise_surplus + service_fee;
    let welfare = utility - solution.total_cost;
    let report = SurplusReport {
        consumer,
        producer,
        plant_profit,
        merchandise_surplus,
        service_fee,
        grid_surplus,
        welfare,
        thermal_kwh,
        carbon_t: carbon_g / 1e6,
        grid_revenue: -paid_to_participants,
    };
    let partition = report.partition_total();
    let scale = 1.0 + welfare.abs() + utility.abs() + solution.total_cost.abs();
    if (partition - welfare).abs() > 1e-9 * scale || peer_net.abs() > 1e-9 * scale {
        return Err(GridError::AccountingMismatch { welfare, partition });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::opf::solve_opf;

    fn single_node(load: f64) -> GridModel {
        GridModel::from_toml_str(&format!(
            r#"
            periods = 1
            period_hours = 1
            [[node]]
            id = 1
            [[plant]]
            name = "p"
            node = 1
            a = 0.001
            b = 0.5
            pmax_kw = 5000
            [[load]]
            name = "d"
            node = 1
            p0_kw = [{load}]
            "#
        ))
        .unwrap()
    }

    #[test]
    fn lossless_single_node_has_no_merchandise_surplus() {
        let g = single_node(1000.0);
        let s = solve_opf(&g, 0, &[0.0]).unwrap();
        let flows = [ParticipantFlow::new("d", ResourceClass::Load, 0, -1000.0)];
        let r = account_surplus(&g, &s, &flows).unwrap();
        assert!(r.merchandise_surplus.abs() < 1e-9);
        // Price 1.5 at 1000 kW: profit = 1.5·1000 − (500 + 500).
        assert!((r.plant_profit - 500.0).abs() < 1e-6);
    }

    #[test]
    fn one_mwh_of_thermal_output_is_055_tonnes() {
        let g = single_node(1000.0);
        let s = solve_opf(&g, 0, &[0.0]).unwrap();
        let r = account_surplus(&g, &s, &[]).unwrap();
        assert!((r.thermal_kwh - 1000.0).abs() < 1e-6);
        assert!((r.carbon_t - 0.55).abs() < 1e-9);
    }

    #[test]
    fn unbalanced_peer_payments_are_rejected() {
        let g = single_node(100.0);
        let s = solve_opf(&g, 0, &[0.0]).unwrap();
        let mut f = ParticipantFlow::new("d", ResourceClass::Load, 0, -100.0);
        f.peer_revenue = 3.0;
        assert!(matches!(account_surplus(&g, &s, &[f]), Err(GridError::AccountingMismatch { .. })));
    }
}
