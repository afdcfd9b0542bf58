//! Per-period exchange limits derived from line ratings and OPF headroom.
//!
//! A node's rating is the smallest limit among its rated lines and its
//! headroom is the smallest unused margin on those lines. Both are turned
//! into energy over the period and split among the resources attached to
//! the node by a [`HeadroomPolicy`]. Nodes without rated lines get no
//! limits.

use std::collections::BTreeMap;

use super::model::GridModel;
use super::opf::OpfSolution;
use crate::stack::{EnergyIpAddress, Stack, StackError};

/// Splits a node's energy allowance among its attached resources.
pub trait HeadroomPolicy {
    /// Returns one share per weight; shares sum to at most `total_kwh`.
    fn allocate(&self, total_kwh: f64, weights: &[f64]) -> Vec<f64>;
}

/// Shares proportional to the attachment weights (equal when all weights
/// are zero).
#[derive(Debug, Clone, Copy, Default)]
pub struct ProRata;

impl HeadroomPolicy for ProRata {
    fn allocate(&self, total_kwh: f64, weights: &[f64]) -> Vec<f64> {
        let sum: f64 = weights.iter().sum();
        if sum > 0.0 {
            weights.iter().map(|w| total_kwh * w / sum).collect()
        } else {
            vec![total_kwh / weights.len().max(1) as f64; weights.len()]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attachment {
    pub eip: EnergyIpAddress,
    /// Index into `GridModel::nodes`.
    pub node: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LimitPlan {
    pub static_wh: BTreeMap<EnergyIpAddress, u64>,
    pub dynamic_wh: BTreeMap<EnergyIpAddress, u64>,
}

impl LimitPlan {
    /// Pushes every limit into the stack's routers and transport state.
    pub fn apply(&self, stack: &mut Stack) -> Result<(), StackError> {
        for (eip, wh) in &self.static_wh {
            stack.set_static_limit_wh(*eip, *wh)?;
        }
        for (eip, wh) in &self.dynamic_wh {
            stack.update_dynamic_limit_wh(*eip, Some(*wh))?;
        }
        Ok(())
    }
}

fn kwh_to_wh(kwh: f64) -> u64 {
    (kwh * 1000.0 + 1e-6).floor().max(0.0) as u64
}

pub fn compute_limits(
    grid: &GridModel,
    solution: &OpfSolution,
    attachments: &[Attachment],
    policy: &dyn HeadroomPolicy,
) -> LimitPlan {
    let n = grid.nodes.len();
    let mut rating: Vec<Option<f64>> = vec![None; n];
    let mut headroom: Vec<Option<f64>> = vec![None; n];
    for (k, line) in grid.lines.iter().enumerate() {
        let Some(lim) = line.limit_kw else { continue };
        let spare = (lim - solution.line_flow_kw[k].abs()).max(0.0);
        for end in [line.from, line.to] {
            let Ok(i) = grid.node_index(end) else { continue };
            rating[i] = Some(rating[i].map_or(lim, |r| r.min(lim)));
            headroom[i] = Some(headroom[i].map_or(spare, |h| h.min(spare)));
        }
    }
    let mut plan = LimitPlan::default();
    for node in 0..n {
        let group: Vec<&Attachment> = attachments.iter().filter(|a| a.node == node).collect();
        if group.is_empty() {
            continue;
        }
        let (Some(r), Some(h)) = (rating[node], headroom[node]) else { continue };
        let weights: Vec<f64> = group.iter().map(|a| a.weight).collect();
        let hours = grid.period_hours;
        let statics = policy.allocate(r * hours, &weights);
        let dynamics = policy.allocate(h * hours, &weights);
        for ((a, s), d) in group.iter().zip(statics).zip(dynamics) {
            plan.static_wh.insert(a.eip, kwh_to_wh(s));
            plan.dynamic_wh.insert(a.eip, kwh_to_wh(d));
        }
    }
    plan
}
