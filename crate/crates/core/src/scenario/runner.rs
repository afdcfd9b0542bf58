use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::strategy::{PeriodContext, RuleBased, Strategy};
use super::{Scenario, ScenarioError};
use crate::bee::{Bee, BeeKind};
use crate::grid::fees::{cny_to_ucny, compute_service_fee, ucny_to_cny, FeeAllocation, Participant};
use crate::grid::{
    account_surplus, compute_limits, solve_opf, verify_decoupling, Attachment, GridModel, OpfSolution,
    ParticipantFlow, ProRata, ResourceClass, SurplusReport, TradeEffect,
};
use crate::matching::Pool;
use crate::profile::Ledger;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Traditional,
    EnergyInternet,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Traditional => "traditional",
            Mode::EnergyInternet => "energy-internet",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodRecord {
    pub period: usize,
    pub solution: OpfSolution,
    /// Storage output per unit, kW (positive when discharging).
    pub storage_kw: Vec<f64>,
    /// EV charging per vehicle, kW.
    pub ev_kw: Vec<f64>,
    pub surplus: SurplusReport,
    pub settled: Vec<Bee>,
    pub rejected_fills: usize,
}

impl PeriodRecord {
    pub fn settled_wh(&self) -> u64 {
        self.settled.iter().map(|b| u64::from(b.quantity_wh)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeReport {
    pub mode: Mode,
    pub periods: Vec<PeriodRecord>,
    /// Daily surplus per participant after service fees, CNY.
    pub resource_profit: BTreeMap<String, f64>,
    pub resource_class: BTreeMap<String, ResourceClass>,
    pub service_fee: Option<FeeAllocation>,
    pub frames_emitted: usize,
    pub ledger_settled_wh: u64,
    pub hours: f64,
}

impl ModeReport {
    fn fee_total(&self) -> f64 {
        self.service_fee.as_ref().map_or(0.0, |f| ucny_to_cny(f.total_ucny()))
    }

    pub fn welfare(&self) -> f64 {
        self.periods.iter().map(|p| p.surplus.welfare).sum()
    }

    pub fn consumer_surplus(&self) -> f64 {
        self.class_total(true)
    }

    pub fn producer_surplus(&self) -> f64 {
        self.class_total(false)
    }

    fn class_total(&self, consumer: bool) -> f64 {
        self.resource_profit
            .iter()
            .filter(|(n, _)| self.resource_class[*n].is_consumer() == consumer)
            .map(|(_, v)| v)
            .sum()
    }

    pub fn grid_surplus(&self) -> f64 {
        self.periods.iter().map(|p| p.surplus.grid_surplus).sum::<f64>() + self.fee_total()
    }

    pub fn plant_profit(&self) -> f64 {
        self.periods.iter().map(|p| p.surplus.plant_profit).sum()
    }

    pub fn merchandise_surplus(&self) -> f64 {
        self.periods.iter().map(|p| p.surplus.merchandise_surplus).sum()
    }

    pub fn carbon_t(&self) -> f64 {
        self.periods.iter().map(|p| p.surplus.carbon_t).sum()
    }

    pub fn thermal_kwh(&self) -> f64 {
        self.periods.iter().map(|p| p.surplus.thermal_kwh).sum()
    }

    pub fn loss_kwh(&self) -> f64 {
        self.periods.iter().map(|p| p.solution.total_loss_kw * self.hours).sum()
    }

    pub fn curtailed_kwh(&self) -> f64 {
        self.periods.iter().map(|p| p.solution.curtailed_kw.iter().sum::<f64>() * self.hours).sum()
    }

    pub fn thermal_cost(&self) -> f64 {
        self.periods.iter().map(|p| p.solution.total_cost).sum()
    }

    pub fn settled_wh(&self) -> u64 {
        self.periods.iter().map(|p| p.settled_wh()).sum()
    }

    /// Consumer + producer + grid surplus.
    pub fn partition_total(&self) -> f64 {
        self.consumer_surplus() + self.producer_surplus() + self.grid_surplus()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub grid: GridModel,
    pub traditional: ModeReport,
    pub energy_internet: ModeReport,
}

/// `(EI − Traditional) / |Traditional|` in percent.
pub fn pct_change(traditional: f64, ei: f64) -> f64 {
    if traditional == 0.0 {
        if ei == 0.0 { 0.0 } else { f64::INFINITY.copysign(ei) }
    } else {
        (ei - traditional) / traditional.abs() * 100.0
    }
}

impl ScenarioReport {
    pub fn welfare_change_pct(&self) -> f64 {
        pct_change(self.traditional.welfare(), self.energy_internet.welfare())
    }

    pub fn carbon_change_pct(&self) -> f64 {
        pct_change(self.traditional.carbon_t(), self.energy_internet.carbon_t())
    }

    pub fn grid_surplus_change_pct(&self) -> f64 {
        pct_change(self.traditional.grid_surplus(), self.energy_internet.grid_surplus())
    }

    /// EI minus traditional daily profit per participant.
    pub fn profit_deltas(&self) -> BTreeMap<String, f64> {
        self.energy_internet
            .resource_profit
            .iter()
            .map(|(n, v)| (n.clone(), v - self.traditional.resource_profit.get(n).copied().unwrap_or(0.0)))
            .collect()
    }
}

pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioReport, ScenarioError> {
    let traditional = run_mode(scenario, Mode::Traditional, None)?;
    let forecast: Vec<Vec<f64>> = traditional.periods.iter().map(|p| p.solution.lmp.clone()).collect();
    let energy_internet = run_mode(scenario, Mode::EnergyInternet, Some(&forecast))?;
    Ok(ScenarioReport {
        name: scenario.name.clone(),
        seed: scenario.seed,
        grid: scenario.grid.clone(),
        traditional,
        energy_internet,
    })
}

struct Roles {
    classes: BTreeMap<String, ResourceClass>,
}

fn roles(grid: &GridModel) -> Roles {
    let mut classes = BTreeMap::new();
    for l in &grid.loads {
        classes.insert(l.name.clone(), ResourceClass::Load);
    }
    for r in &grid.renewables {
        classes.insert(r.name.clone(), ResourceClass::Renewable);
    }
    for s in &grid.storage {
        classes.insert(s.name.clone(), ResourceClass::Storage);
    }
    for e in &grid.evs {
        classes.insert(e.name.clone(), ResourceClass::Ev);
    }
    Roles { classes }
}

/// Runs one mode over the day. Energy Internet mode needs forecast prices
/// per period and node; without them it forecasts by running the
/// traditional mode first.
pub fn run_mode(
    scenario: &Scenario,
    mode: Mode,
    forecast: Option<&[Vec<f64>]>,
) -> Result<ModeReport, ScenarioError> {
    let strategy = RuleBased {
        renewable_floor: scenario.strategy.renewable_floor,
        storage_levels: scenario.strategy.storage_levels,
    };
    match mode {
        Mode::Traditional => run_traditional(scenario),
        Mode::EnergyInternet => {
            let owned;
            let forecast = match forecast {
                Some(f) => f,
                None => {
                    let t = run_traditional(scenario)?;
                    owned = t.periods.iter().map(|p| p.solution.lmp.clone()).collect::<Vec<_>>();
                    &owned
                }
            };
            run_energy_internet(scenario, &strategy, forecast)
        }
    }
}

fn node_of(grid: &GridModel, node: u32) -> usize {
    grid.node_index(node).expect("validated grid")
}

fn schedule_injections(grid: &GridModel, t: usize, storage_kw: &[Vec<f64>], ev_kw: &[Vec<f64>]) -> Vec<f64> {
    let mut inj = vec![0.0; grid.nodes.len()];
    for (k, s) in grid.storage.iter().enumerate() {
        inj[node_of(grid, s.node)] += storage_kw[k][t];
    }
    for (k, e) in grid.evs.iter().enumerate() {
        inj[node_of(grid, e.node)] -= ev_kw[k][t];
    }
    inj
}

/// Physical flows of every non-plant resource in one solved period.
fn physical_flows(
    grid: &GridModel,
    sol: &OpfSolution,
    t: usize,
    storage_kw: &[Vec<f64>],
    ev_kw: &[Vec<f64>],
) -> Result<Vec<ParticipantFlow>, ScenarioError> {
    let h = grid.period_hours;
    let mut out = Vec::new();
    for (i, ld) in grid.loads.iter().enumerate() {
        let mut f = ParticipantFlow::new(&ld.name, ResourceClass::Load, node_of(grid, ld.node), -sol.load_kw[i] * h);
        if let Some(c) = ld.curve(t)? {
            f.utility = c.utility(sol.load_kw[i]) * h;
        }
        out.push(f);
    }
    for (i, r) in grid.renewables.iter().enumerate() {
        out.push(ParticipantFlow::new(&r.name, ResourceClass::Renewable, node_of(grid, r.node), sol.renewable_kw[i] * h));
    }
    for (k, s) in grid.storage.iter().enumerate() {
        out.push(ParticipantFlow::new(&s.name, ResourceClass::Storage, node_of(grid, s.node), storage_kw[k][t] * h));
    }
    for (k, e) in grid.evs.iter().enumerate() {
        out.push(ParticipantFlow::new(&e.name, ResourceClass::Ev, node_of(grid, e.node), -ev_kw[k][t] * h));
    }
    Ok(out)
}

fn tally(report: &mut BTreeMap<String, f64>, surplus: &SurplusReport) {
    for (name, v) in surplus.consumer.iter().chain(&surplus.producer) {
        *report.entry(name.clone()).or_insert(0.0) += v;
    }
}

fn run_traditional(scenario: &Scenario) -> Result<ModeReport, ScenarioError> {
    let grid = &scenario.grid;
    let t_len = grid.periods;
    let storage_kw = vec![vec![0.0; t_len]; grid.storage.len()];
    let ev_kw: Vec<Vec<f64>> = grid.evs.iter().map(|e| e.baseline_kw.clone()).collect();
    let mut periods = Vec::with_capacity(t_len);
    let mut profit = BTreeMap::new();
    for t in 0..t_len {
        let inj = schedule_injections(grid, t, &storage_kw, &ev_kw);
        let solution = solve_opf(grid, t, &inj)?;
        let flows = physical_flows(grid, &solution, t, &storage_kw, &ev_kw)?;
        let surplus = account_surplus(grid, &solution, &flows)?;
        tally(&mut profit, &surplus);
        periods.push(PeriodRecord {
            period: t,
            solution,
            storage_kw: storage_kw.iter().map(|s| s[t]).collect(),
            ev_kw: ev_kw.iter().map(|e| e[t]).collect(),
            surplus,
            settled: Vec::new(),
            rejected_fills: 0,
        });
    }
    Ok(ModeReport {
        mode: Mode::Traditional,
        periods,
        resource_profit: profit,
        resource_class: roles(grid).classes,
        service_fee: None,
        frames_emitted: 0,
        ledger_settled_wh: 0,
        hours: grid.period_hours,
    })
}

fn run_energy_internet(
    scenario: &Scenario,
    strategy: &dyn Strategy,
    forecast: &[Vec<f64>],
) -> Result<ModeReport, ScenarioError> {
    let grid = &scenario.grid;
    let t_len = grid.periods;
    let hours = grid.period_hours;
    if forecast.len() != t_len || forecast.iter().any(|f| f.len() != grid.nodes.len()) {
        return Err(ScenarioError::Config("forecast prices do not match the grid".into()));
    }
    let node_prices = |node: u32| -> Vec<f64> {
        let idx = node_of(grid, node);
        forecast.iter().map(|p| p[idx]).collect()
    };
    let storage_kw: Vec<Vec<f64>> =
        grid.storage.iter().map(|s| strategy.storage_schedule(s, &node_prices(s.node), hours)).collect();
    let ev_kw: Vec<Vec<f64>> = grid.evs.iter().map(|e| strategy.ev_schedule(e, &node_prices(e.node), hours)).collect();

    let mut ledger = Ledger::new();
    let mut stack = scenario.topology.build(scenario.seed, &mut ledger)?;
    let mut pool = Pool::new();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let classes = roles(grid).classes;
    let mut macs = BTreeMap::new();
    let mut attachments = Vec::new();
    let mut node_by_mac = BTreeMap::new();
    for name in classes.keys() {
        let mac = scenario
            .mac_of(name)
            .ok_or_else(|| ScenarioError::Config(format!("{name:?} has no topology host")))?;
        let eip = stack
            .eip_of(&mac)
            .ok_or_else(|| ScenarioError::Config(format!("{name:?} is not attached to the network")))?;
        let node = resource_node(grid, name).expect("classified resources exist");
        if let Some(lan_router) = grid.node_eip(node) {
            let lan = scenario.lan_of(name).unwrap_or_default();
            let lan_id = scenario.topology.lan_id(lan)?;
            if lan_id.router_eip() != lan_router {
                return Err(ScenarioError::Config(format!(
                    "{name:?} sits on node {} ({lan_router}) but its host is on LAN {lan_id}",
                    grid.nodes[node].id
                )));
            }
        }
        macs.insert(name.clone(), mac);
        node_by_mac.insert(mac, node);
        attachments.push(Attachment { eip, node, weight: 1.0 });
    }

    let secs = (hours * 3600.0) as u32;
    let minutes = (secs / 60) as u16;
    let mut periods = Vec::with_capacity(t_len);
    let mut profit = BTreeMap::new();
    let mut opf_cost = 0.0;
    let mut grid_revenue = 0.0;
    for t in 0..t_len {
        let start = scenario.day_start + secs * t as u32;
        stack.begin_period();
        pool.set_now(u64::from(start));
        let inj = schedule_injections(grid, t, &storage_kw, &ev_kw);
        let preliminary = solve_opf(grid, t, &inj)?;
        compute_limits(grid, &preliminary, &attachments, &ProRata).apply(&mut stack)?;

        let ctx = PeriodContext {
            period: t,
            grid,
            forecast_lmp: forecast,
            storage_kw: &storage_kw,
            ev_kw: &ev_kw,
            macs: &macs,
            window: (start, minutes),
        };
        // Sellers post first, then buyers arrive; each side in seeded order.
        let (mut orders, mut requests): (Vec<Bee>, Vec<Bee>) =
            strategy.orders(&ctx).into_iter().partition(|b| b.kind == BeeKind::Offer);
        orders.shuffle(&mut rng);
        requests.shuffle(&mut rng);
        orders.extend(requests);

        let ledger_before = ledger.settled_wh();
        let stack_before: u64 = stack.delivered().iter().map(|b| u64::from(b.quantity_wh)).sum();
        let mut settled = Vec::new();
        let mut rejected = 0;
        let mut matched_wh = 0u64;
        for bee in orders {
            let result = pool.submit(bee)?;
            let s = pool.settle_fills(&result, &mut ledger, &mut stack);
            matched_wh += s.settled.iter().map(|b| u64::from(b.quantity_wh)).sum::<u64>();
            rejected += s.failed.len();
            settled.extend(s.settled);
        }
        let ledger_delta = ledger.settled_wh() - ledger_before;
        let stack_delta = stack.delivered().iter().map(|b| u64::from(b.quantity_wh)).sum::<u64>() - stack_before;
        if ledger_delta != matched_wh || stack_delta != matched_wh {
            return Err(ScenarioError::Reconciliation(format!(
                "period {t}: pool settled {matched_wh} Wh, ledger {ledger_delta} Wh, stack {stack_delta} Wh"
            )));
        }

        // Trades replace the grid as counterparty; schedules are unchanged.
        let effects: Vec<TradeEffect> = settled
            .iter()
            .map(|b| TradeEffect::injection_preserving(*b, node_by_mac[&b.sender], node_by_mac[&b.receiver]))
            .collect();
        let report = verify_decoupling(grid, t, &inj, &effects)?;
        if !report.all_zero() || !report.identical() || report.baseline != preliminary {
            return Err(ScenarioError::Reconciliation(format!("period {t}: trades moved the dispatch")));
        }
        let solution = report.with_trades;

        let mut flows = physical_flows(grid, &solution, t, &storage_kw, &ev_kw)?;
        for b in &settled {
            let kwh = f64::from(b.quantity_wh) / 1000.0;
            let cny = ucny_to_cny(b.value_ucny());
            for f in flows.iter_mut() {
                if macs[&f.name] == b.sender {
                    f.sold_kwh += kwh;
                    f.peer_revenue += cny;
                } else if macs[&f.name] == b.receiver {
                    f.sold_kwh -= kwh;
                    f.peer_revenue -= cny;
                }
            }
        }
        let surplus = account_surplus(grid, &solution, &flows)?;
        tally(&mut profit, &surplus);
        opf_cost += solution.total_cost;
        grid_revenue += surplus.grid_revenue;
        periods.push(PeriodRecord {
            period: t,
            solution,
            storage_kw: storage_kw.iter().map(|s| s[t]).collect(),
            ev_kw: ev_kw.iter().map(|e| e[t]).collect(),
            surplus,
            settled,
            rejected_fills: rejected,
        });
    }

    let participants: Vec<Participant> = classes
        .keys()
        .map(|name| {
            let routed = ledger.query_profile(&macs[name]).map(|p| p.routed_wh()).unwrap_or(0);
            Participant { name: name.clone(), routed_wh: routed }
        })
        .collect();
    let fee = compute_service_fee(cny_to_ucny(opf_cost), cny_to_ucny(grid_revenue), &participants);
    for (name, ucny) in &fee.fees {
        *profit.entry(name.clone()).or_insert(0.0) -= ucny_to_cny(*ucny);
    }
    let total_settled: u64 = periods.iter().map(|p| p.settled_wh()).sum();
    if ledger.settled_wh() != total_settled {
        return Err(ScenarioError::Reconciliation(format!(
            "day: ledger holds {} Wh, periods settled {total_settled} Wh",
            ledger.settled_wh()
        )));
    }
    Ok(ModeReport {
        mode: Mode::EnergyInternet,
        periods,
        resource_profit: profit,
        resource_class: classes,
        service_fee: Some(fee),
        frames_emitted: stack.frames_emitted(),
        ledger_settled_wh: ledger.settled_wh(),
        hours,
    })
}

fn resource_node(grid: &GridModel, name: &str) -> Option<usize> {
    let node = grid
        .loads
        .iter()
        .find(|x| x.name == name)
        .map(|x| x.node)
        .or_else(|| grid.renewables.iter().find(|x| x.name == name).map(|x| x.node))
        .or_else(|| grid.storage.iter().find(|x| x.name == name).map(|x| x.node))
        .or_else(|| grid.evs.iter().find(|x| x.name == name).map(|x| x.node))?;
    grid.node_index(node).ok()
}
