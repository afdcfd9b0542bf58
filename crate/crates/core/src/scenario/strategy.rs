//! Trading behaviour of the non-plant resources.
//!
//! A [`Strategy`] plans storage and EV schedules for the day from forecast
//! nodal prices and then turns each period into pool orders. The runner only
//! talks to this trait, so other behaviours can be swapped in.

use std::collections::BTreeMap;

use crate::bee::{Bee, BeeKind, MacAddress, MAX_GREEN_BP};
use crate::grid::model::{Ev, Storage};
use crate::grid::GridModel;

/// Everything a strategy may look at when placing one period's orders.
pub struct PeriodContext<'a> {
    pub period: usize,
    pub grid: &'a GridModel,
    /// Forecast price per period per node, CNY/kWh.
    pub forecast_lmp: &'a [Vec<f64>],
    /// Planned storage output per storage unit per period, kW (positive
    /// when discharging).
    pub storage_kw: &'a [Vec<f64>],
    /// Planned EV charging per vehicle per period, kW.
    pub ev_kw: &'a [Vec<f64>],
    pub macs: &'a BTreeMap<String, MacAddress>,
    /// Delivery window of the period, epoch seconds and minutes.
    pub window: (u32, u16),
}

pub trait Strategy {
    /// Storage output per period in kW, positive when discharging.
    fn storage_schedule(&self, storage: &Storage, prices: &[f64], hours: f64) -> Vec<f64>;
    /// EV charging per period in kW.
    fn ev_schedule(&self, ev: &Ev, prices: &[f64], hours: f64) -> Vec<f64>;
    fn orders(&self, ctx: &PeriodContext<'_>) -> Vec<Bee>;
}

/// Simple price-taking rules.
///
/// * Renewables offer everything available at the forecast local price,
///   never below `renewable_floor`.
/// * Storage follows a dynamic program over a discretized state of charge
///   that maximizes arbitrage revenue at forecast prices and ends the day
///   empty. It offers when discharging and bids, when charging, the
///   round-trip value of its cheapest planned sale.
/// * EVs charge in their cheapest plugged-in periods and bid up to the
///   highest price they would have paid on their baseline profile.
/// * Loads bid their forecast consumption at the forecast local price.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleBased {
    pub renewable_floor: f64,
    pub storage_levels: usize,
}

fn mcny(cny_per_kwh: f64) -> u32 {
    (cny_per_kwh * 1000.0).round().clamp(0.0, f64::from(u32::MAX)) as u32
}

fn wh(kwh: f64) -> u32 {
    (kwh * 1000.0).round().clamp(0.0, f64::from(u32::MAX)) as u32
}

impl Strategy for RuleBased {
    fn storage_schedule(&self, s: &Storage, prices: &[f64], hours: f64) -> Vec<f64> {
        let t_len = prices.len();
        let levels = self.storage_levels.max(1);
        let step = s.capacity_kwh / levels as f64;
        if step <= 0.0 || s.power_kw <= 0.0 {
            return vec![0.0; t_len];
        }
        // Grid-side kW for moving from level i to level j.
        let power = |i: usize, j: usize| -> f64 {
            if j > i {
                -((j - i) as f64 * step / s.charge_eff / hours)
            } else {
                (i - j) as f64 * step * s.discharge_eff / hours
            }
        };
        let cap = s.power_kw + 1e-9;
        let mut value = vec![vec![f64::NEG_INFINITY; levels + 1]; t_len + 1];
        value[t_len][0] = 0.0;
        let mut choice = vec![vec![0usize; levels + 1]; t_len];
        for t in (0..t_len).rev() {
            for i in 0..=levels {
                let mut best = f64::NEG_INFINITY;
                let mut best_j = i;
                // Nearest moves first so ties keep the battery idle.
                let mut order: Vec<usize> = (0..=levels).collect();
                order.sort_by_key(|j| (j.abs_diff(i), *j));
                for j in order {
                    let p = power(i, j);
                    if p.abs() > cap || value[t + 1][j] == f64::NEG_INFINITY {
                        continue;
                    }
                    let v = prices[t] * p * hours + value[t + 1][j];
                    if v > best + 1e-9 {
                        best = v;
                        best_j = j;
                    }
                }
                value[t][i] = best;
                choice[t][i] = best_j;
            }
        }
        let mut out = Vec::with_capacity(t_len);
        let mut i = 0;
        for row in &choice {
            let j = row[i];
            out.push(power(i, j));
            i = j;
        }
        out
    }

    fn ev_schedule(&self, ev: &Ev, prices: &[f64], hours: f64) -> Vec<f64> {
        let mut out = vec![0.0; prices.len()];
        let mut order = ev.available_periods.clone();
        order.sort_by(|a, b| prices[*a].total_cmp(&prices[*b]).then(a.cmp(b)));
        let mut need = ev.energy_kwh;
        for t in order {
            if need <= 0.0 {
                break;
            }
            let kwh = need.min(ev.power_kw * hours);
            out[t] = kwh / hours;
            need -= kwh;
        }
        out
    }

    fn orders(&self, ctx: &PeriodContext<'_>) -> Vec<Bee> {
        let g = ctx.grid;
        let t = ctx.period;
        let hours = g.period_hours;
        let (start, minutes) = ctx.window;
        let price_at = |node: u32| -> f64 {
            let idx = g.node_index(node).expect("validated grid");
            ctx.forecast_lmp[t][idx]
        };
        let mut out = Vec::new();
        let mut push = |kind: BeeKind, name: &str, kwh: f64, price: f64, green: bool| {
            let Some(mac) = ctx.macs.get(name) else { return };
            let q = wh(kwh);
            if q == 0 {
                return;
            }
            let mut bee = Bee::electricity(kind, q, start, minutes, mcny(price), *mac, MacAddress::ZERO);
            if green {
                bee.green_fraction_bp = MAX_GREEN_BP;
            }
            out.push(bee);
        };
        for r in &g.renewables {
            let ask = price_at(r.node).max(self.renewable_floor);
            push(BeeKind::Offer, &r.name, r.available_kw[t] * hours, ask, true);
        }
        for (k, s) in g.storage.iter().enumerate() {
            let plan = &ctx.storage_kw[k];
            let p = plan[t];
            if p > 0.0 {
                push(BeeKind::Offer, &s.name, p * hours, price_at(s.node), false);
            } else if p < 0.0 {
                let idx = g.node_index(s.node).expect("validated grid");
                let sale = (0..plan.len())
                    .filter(|u| plan[*u] > 0.0)
                    .map(|u| ctx.forecast_lmp[u][idx])
                    .fold(f64::INFINITY, f64::min);
                if sale.is_finite() {
                    push(BeeKind::Request, &s.name, -p * hours, sale * s.charge_eff * s.discharge_eff, false);
                }
            }
        }
        for (k, ev) in g.evs.iter().enumerate() {
            let p = ctx.ev_kw[k][t];
            if p > 0.0 {
                let idx = g.node_index(ev.node).expect("validated grid");
                let willing = (0..ev.baseline_kw.len())
                    .filter(|u| ev.baseline_kw[*u] > 0.0)
                    .map(|u| ctx.forecast_lmp[u][idx])
                    .fold(f64::NEG_INFINITY, f64::max);
                let bid = if willing.is_finite() { willing } else { price_at(ev.node) };
                push(BeeKind::Request, &ev.name, p * hours, bid, false);
            }
        }
        for ld in &g.loads {
            let price = price_at(ld.node);
            let kw = match ld.curve(t).ok().flatten() {
                Some(c) => c.quantity_at(price),
                None => ld.p0_kw[t],
            };
            push(BeeKind::Request, &ld.name, kw * hours, price, false);
        }
        out
    }
}
