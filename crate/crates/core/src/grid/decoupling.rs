//! Checks whether a set of peer trades changes what the ISP has to solve.
//!
//! A trade only matters physically if it makes someone inject or withdraw
//! differently from what they would have done trading with the grid. Each
//! [`TradeEffect`] records that physical change; when every change is zero
//! the OPF is re-solved on the unchanged injections and compared bit for
//! bit with the baseline.

use super::model::GridModel;
use super::opf::{solve_opf, OpfSolution};
use super::GridError;
use crate::bee::Bee;

#[derive(Debug, Clone, PartialEq)]
pub struct TradeEffect {
    pub bee: Bee,
    /// Node indices into `GridModel::nodes`.
    pub seller_node: usize,
    pub buyer_node: usize,
    /// Extra power the seller injects because of the trade, kW.
    pub seller_extra_injection_kw: f64,
    /// Extra power the buyer withdraws because of the trade, kW.
    pub buyer_extra_withdrawal_kw: f64,
}

impl TradeEffect {
    /// A trade that only replaces the grid as counterparty.
    pub fn injection_preserving(bee: Bee, seller_node: usize, buyer_node: usize) -> Self {
        TradeEffect { bee, seller_node, buyer_node, seller_extra_injection_kw: 0.0, buyer_extra_withdrawal_kw: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecouplingReport {
    pub deltas_kw: Vec<f64>,
    pub baseline: OpfSolution,
    pub with_trades: OpfSolution,
}

impl DecouplingReport {
    pub fn all_zero(&self) -> bool {
        self.deltas_kw.iter().all(|d| *d == 0.0)
    }

    /// Nodes whose injection moved.
    pub fn changed_nodes(&self) -> Vec<usize> {
        (0..self.deltas_kw.len()).filter(|i| self.deltas_kw[*i] != 0.0).collect()
    }

    pub fn identical(&self) -> bool {
        bit_identical(&self.baseline, &self.with_trades)
    }
}

/// Compares every number in two solutions by bit pattern.
pub fn bit_identical(a: &OpfSolution, b: &OpfSolution) -> bool {
    fn same(x: &[f64], y: &[f64]) -> bool {
        x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())
    }
    a.period == b.period
        && a.iterations == b.iterations
        && same(&a.fixed_injection_kw, &b.fixed_injection_kw)
        && same(&a.node_injection_kw, &b.node_injection_kw)
        && same(&a.plant_kw, &b.plant_kw)
        && same(&a.load_kw, &b.load_kw)
        && same(&a.renewable_kw, &b.renewable_kw)
        && same(&a.curtailed_kw, &b.curtailed_kw)
        && same(&a.line_flow_kw, &b.line_flow_kw)
        && same(&a.line_loss_kw, &b.line_loss_kw)
        && same(&a.lmp, &b.lmp)
        && a.total_cost.to_bits() == b.total_cost.to_bits()
        && a.total_loss_kw.to_bits() == b.total_loss_kw.to_bits()
}

pub fn verify_decoupling(
    grid: &GridModel,
    period: usize,
    baseline_injections_kw: &[f64],
    trades: &[TradeEffect],
) -> Result<DecouplingReport, GridError> {
    let n = grid.nodes.len();
    let mut deltas_kw = vec![0.0; n];
    for t in trades {
        if t.seller_node >= n || t.buyer_node >= n {
            return Err(GridError::Config("trade refers to an unknown node".into()));
        }
        deltas_kw[t.seller_node] += t.seller_extra_injection_kw;
        deltas_kw[t.buyer_node] -= t.buyer_extra_withdrawal_kw;
    }
    let baseline = solve_opf(grid, period, baseline_injections_kw)?;
    let injections: Vec<f64> = baseline_injections_kw
        .iter()
        .zip(&deltas_kw)
        .map(|(b, d)| if *d == 0.0 { *b } else { b + d })
        .collect();
    let with_trades = solve_opf(grid, period, &injections)?;
    Ok(DecouplingReport { deltas_kw, baseline, with_trades })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bee::{BeeKind, MacAddress};

    const GRID: &str = r#"
        periods = 1
        [[node]]
        id = 1
        [[node]]
        id = 2
        [[node]]
        id = 3
        [[line]]
        from = 1
        to = 2
        r = 0.02
        [[line]]
        from = 1
        to = 3
        r = 0.03
        [[plant]]
        name = "g"
        node = 1
        a = 0.001
        b = 0.4
        pmax_kw = 3000
        [[load]]
        name = "a"
        node = 2
        p0_kw = [400.0]
        [[load]]
        name = "b"
        node = 3
        p0_kw = [300.0]
    "#;

    fn bee() -> Bee {
        Bee::electricity(BeeKind::Settle, 10_000, 0, 120, 500, MacAddress::local(1), MacAddress::local(2))
    }

    #[test]
    fn preserving_trades_leave_solution_unchanged() {
        let g = GridModel::from_toml_str(GRID).unwrap();
        let base = [0.0, 50.0, 0.0];
        let trades = [TradeEffect::injection_preserving(bee(), 1, 2)];
        let r = verify_decoupling(&g, 0, &base, &trades).unwrap();
        assert!(r.all_zero());
        assert!(r.identical());
        let empty = verify_decoupling(&g, 0, &base, &[]).unwrap();
        assert!(empty.all_zero() && empty.identical());
    }

    #[test]
    fn consumption_shift_moves_two_nodes() {
        let g = GridModel::from_toml_str(GRID).unwrap();
        let trade = TradeEffect {
            seller_extra_injection_kw: 10.0,
            buyer_extra_withdrawal_kw: 10.0,
            ..TradeEffect::injection_preserving(bee(), 1, 2)
        };
        let r = verify_decoupling(&g, 0, &[0.0; 3], &[trade]).unwrap();
        assert_eq!(r.changed_nodes(), vec![1, 2]);
        assert_eq!(r.deltas_kw, vec![0.0, 10.0, -10.0]);
        assert!(!r.identical());
    }
}
