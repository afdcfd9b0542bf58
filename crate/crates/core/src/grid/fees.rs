//! Service fee that tops the ISP up to a minimum profit rate.
//!
//! Amounts are integer micro-CNY so allocations add up exactly.

/// Minimum profit over cost, in percent.
pub const MIN_PROFIT_PERCENT: i64 = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Participant {
    pub name: String,
    /// Energy the participant moved across the network, Wh.
    pub routed_wh: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeeAllocation {
    pub profit_ucny: i64,
    pub required_ucny: i64,
    pub deficit_ucny: i64,
    /// One fee per participant, in input order.
    pub fees: Vec<(String, i64)>,
}

impl FeeAllocation {
    pub fn total_ucny(&self) -> i64 {
        self.fees.iter().map(|(_, f)| f).sum()
    }
}

pub fn cny_to_ucny(cny: f64) -> i64 {
    (cny * 1e6).round() as i64
}

pub fn ucny_to_cny(ucny: i64) -> f64 {
    ucny as f64 / 1e6
}

/// Splits any shortfall below the minimum profit rate in proportion to
/// routed energy (equally if nobody routed anything). Remainders from the
/// integer division go to the largest fractional parts, earliest first.
pub fn compute_service_fee(opf_cost_ucny: i64, grid_revenue_ucny: i64, participants: &[Participant]) -> FeeAllocation {
    let profit = grid_revenue_ucny - opf_cost_ucny;
    let required = (opf_cost_ucny.max(0) * MIN_PROFIT_PERCENT + 99) / 100;
    let deficit = (required - profit).max(0);
    let mut fees: Vec<(String, i64)> = participants.iter().map(|p| (p.name.clone(), 0)).collect();
    if deficit > 0 && !participants.is_empty() {
        let total: u128 = participants.iter().map(|p| u128::from(p.routed_wh)).sum();
        let weights: Vec<u128> = if total == 0 {
            vec![1; participants.len()]
        } else {
            participants.iter().map(|p| u128::from(p.routed_wh)).collect()
        };
        let wsum: u128 = weights.iter().sum();
        let d = deficit as u128;
        let mut assigned = 0u128;
        let mut remainders = Vec::with_capacity(weights.len());
        for (i, w) in weights.iter().enumerate() {
            let share = d * w / wsum;
            fees[i].1 = share as i64;
            assigned += share;
            remainders.push((d * w % wsum, i));
        }
        remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, i) in remainders.into_iter().take((d - assigned) as usize) {
            fees[i].1 += 1;
        }
    }
    FeeAllocation { profit_ucny: profit, required_ucny: required, deficit_ucny: deficit, fees }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(name: &str, wh: u64) -> Participant {
        Participant { name: name.into(), routed_wh: wh }
    }

    #[test]
    fn remainders_are_spread_without_loss() {
        let a = compute_service_fee(100, 100, &[p("a", 1), p("b", 1), p("c", 1)]);
        assert_eq!(a.deficit_ucny, 10);
        assert_eq!(a.fees.iter().map(|f| f.1).collect::<Vec<_>>(), vec![4, 3, 3]);
    }

    #[test]
    fn idle_participants_share_equally() {
        let a = compute_service_fee(1000, 1000, &[p("a", 0), p("b", 0)]);
        assert_eq!(a.total_ucny(), 100);
        assert_eq!(a.fees[0].1, 50);
    }

    #[test]
    fn nobody_to_charge() {
        let a = compute_service_fee(1000, 0, &[]);
        assert_eq!(a.deficit_ucny, 1100);
        assert!(a.fees.is_empty());
    }
}
