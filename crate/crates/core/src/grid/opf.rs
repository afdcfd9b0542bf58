//! Active-power optimal power flow with quadratic line losses.
//!
//! Losses are linearized around the previous flow estimate and the
//! resulting convex QP is re-solved until the flows stop moving. Half of
//! each line's loss is charged to each end, so node `n` balances as
//!
//! ```text
//! inj_n = Σ A[n,l]·f_l + Σ |A[n,l]|·½·r_l·f_l²
//! ```
//!
//! with `A` the signed incidence matrix (`+1` at the sending end). Flows are
//! eliminated using every balance row except the slack node's plus one
//! impedance-weighted loop equation per independent cycle. Nodal prices
//! come from the envelope theorem: the sensitivity of the optimal cost to
//! a fixed injection, read off the constraint multipliers.
//!
//! Internally everything is per-unit on `GridModel::base_kw`, and costs are
//! per hour.

use nalgebra::{DMatrix, DVector};

use super::model::GridModel;
use super::qp::{Constraint, QpError, QpProblem};
use super::GridError;

#[derive(Debug, Clone, PartialEq)]
pub struct OpfOptions {
    /// Fix every load at these kW values instead of letting elastic loads
    /// respond along their curves.
    pub fixed_loads_kw: Option<Vec<f64>>,
    pub max_iterations: usize,
    pub damping: f64,
    /// Convergence threshold on flow and dispatch changes, p.u.
    pub tolerance: f64,
}

impl Default for OpfOptions {
    fn default() -> Self {
        OpfOptions { fixed_loads_kw: None, max_iterations: 50, damping: 0.5, tolerance: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpfSolution {
    pub period: usize,
    /// The DER injections the solve was given, kW per node.
    pub fixed_injection_kw: Vec<f64>,
    pub node_injection_kw: Vec<f64>,
    pub plant_kw: Vec<f64>,
    pub load_kw: Vec<f64>,
    pub renewable_kw: Vec<f64>,
    pub curtailed_kw: Vec<f64>,
    /// Positive from `from` to `to`.
    pub line_flow_kw: Vec<f64>,
    pub line_loss_kw: Vec<f64>,
    /// CNY/kWh per node.
    pub lmp: Vec<f64>,
    /// Thermal cost over the whole period, CNY.
    pub total_cost: f64,
    pub total_loss_kw: f64,
    pub iterations: usize,
}

impl OpfSolution {
    pub fn total_generation_kw(&self) -> f64 {
        self.plant_kw.iter().sum::<f64>() + self.renewable_kw.iter().sum::<f64>()
    }

    /// Demand served, counting DER injections at face value.
    pub fn balance_residual_kw(&self) -> f64 {
        self.node_injection_kw.iter().sum::<f64>() - self.total_loss_kw
    }
}

/// Variable roles in the QP vector.
#[derive(Debug, Clone, Copy)]
enum Var {
    Plant(usize),
    Load(usize),
    Renewable(usize),
}

const PROX: f64 = 1e-3;

pub fn solve_opf(grid: &GridModel, period: usize, fixed_injection_kw: &[f64]) -> Result<OpfSolution, GridError> {
    solve_opf_with(grid, period, fixed_injection_kw, &OpfOptions::default())
}

pub fn solve_opf_with(
    grid: &GridModel,
    period: usize,
    fixed_injection_kw: &[f64],
    opts: &OpfOptions,
) -> Result<OpfSolution, GridError> {
    grid.check_period(period)?;
    let n = grid.nodes.len();
    let l = grid.lines.len();
    if fixed_injection_kw.len() != n {
        return Err(GridError::Config(format!("expected {n} nodal injections, got {}", fixed_injection_kw.len())));
    }
    if let Some(f) = &opts.fixed_loads_kw {
        if f.len() != grid.loads.len() {
            return Err(GridError::Config(format!("expected {} fixed loads, got {}", grid.loads.len(), f.len())));
        }
    }
    let base = grid.base_kw;

    // Decision variables and their costs.
    let mut vars = Vec::new();
    let mut quad = Vec::new();
    let mut lin = Vec::new();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let mut var_node = Vec::new();
    let mut sign = Vec::new();
    let mut fixed = DVector::from_iterator(n, fixed_injection_kw.iter().map(|v| v / base));
    for (i, p) in grid.plants.iter().enumerate() {
        vars.push(Var::Plant(i));
        quad.push(p.a * base * base);
        lin.push(p.b * base);
        lo.push(p.pmin_kw / base);
        hi.push(p.pmax_kw / base);
        var_node.push(grid.node_index(p.node)?);
        sign.push(1.0);
    }
    for (i, ld) in grid.loads.iter().enumerate() {
        let node = grid.node_index(ld.node)?;
        let curve = if opts.fixed_loads_kw.is_some() { None } else { ld.curve(period)? };
        match curve {
            Some(c) => {
                vars.push(Var::Load(i));
                quad.push(-c.slope() * base * base);
                lin.push(-c.intercept() * base);
                lo.push(0.0);
                hi.push(c.max_quantity() / base);
                var_node.push(node);
                sign.push(-1.0);
            }
            None => {
                let kw = opts.fixed_loads_kw.as_ref().map_or(ld.p0_kw[period], |f| f[i]);
                fixed[node] -= kw / base;
            }
        }
    }
    for (i, r) in grid.renewables.iter().enumerate() {
        vars.push(Var::Renewable(i));
        quad.push(0.0);
        lin.push(0.0);
        lo.push(0.0);
        hi.push(r.available_kw[period] / base);
        var_node.push(grid.node_index(r.node)?);
        sign.push(1.0);
    }
    let nx = vars.len();
    let mut e = DMatrix::zeros(n, nx);
    for j in 0..nx {
        e[(var_node[j], j)] = sign[j];
    }

    // Network structure.
    let slack = 0usize;
    let mut inc = DMatrix::zeros(n, l);
    let mut r = vec![0.0; l];
    let mut limit = vec![None; l];
    for (k, line) in grid.lines.iter().enumerate() {
        inc[(grid.node_index(line.from)?, k)] = 1.0;
        inc[(grid.node_index(line.to)?, k)] = -1.0;
        r[k] = line.r;
        limit[k] = line.limit_kw.map(|v| v / base);
    }
    let cycles = cycle_rows(grid)?;
    let rows: Vec<usize> = (0..n).filter(|i| *i != slack).collect();

    let mut fbar = DVector::zeros(l);
    let mut xk = DVector::from_iterator(nx, (0..nx).map(|j| lo[j]));
    for it in 1..=opts.max_iterations {
        // Linearized balance: inj = M f + k.
        let mut m = inc.clone();
        let mut kvec = DVector::zeros(n);
        for k in 0..l {
            for i in 0..n {
                if inc[(i, k)] != 0.0 {
                    m[(i, k)] += r[k] * fbar[k];
                    kvec[i] -= 0.5 * r[k] * fbar[k] * fbar[k];
                }
            }
        }
        // f = F_r (inj_r − k_r).
        let f_r = if l == 0 {
            DMatrix::zeros(0, n - 1)
        } else {
            let mut kmat = DMatrix::zeros(l, l);
            for (row, i) in rows.iter().enumerate() {
                kmat.set_row(row, &m.row(*i));
            }
            for (c, cyc) in cycles.iter().enumerate() {
                kmat.set_row(rows.len() + c, &cyc.transpose());
            }
            let inv = kmat
                .try_inverse()
                .ok_or_else(|| GridError::Config("network equations are singular".into()))?;
            inv.columns(0, rows.len()).into_owned()
        };
        let select = |v: &DVector<f64>| DVector::from_iterator(rows.len(), rows.iter().map(|i| v[*i]));
        let mut e_r = DMatrix::zeros(rows.len(), nx);
        for (row, i) in rows.iter().enumerate() {
            e_r.set_row(row, &e.row(*i));
        }
        let phi = &f_r * &e_r;
        let phi0 = &f_r * (select(&fixed) - select(&kvec));
        let m_s = m.row(slack).transpose();

        let mut g = DMatrix::from_diagonal(&DVector::from_vec(quad.clone()));
        let mut c = DVector::from_vec(lin.clone());
        for j in 0..nx {
            if quad[j] == 0.0 {
                g[(j, j)] += 2.0 * PROX;
                c[j] -= 2.0 * PROX * xk[j];
            }
        }
        let mut qp = QpProblem::new(g, c);
        let eq_a = phi.transpose() * &m_s - e.row(slack).transpose();
        let eq_b = m_s.dot(&phi0) + kvec[slack] - fixed[slack];
        qp.eq.push(Constraint { a: eq_a, b: eq_b });
        let mut line_rows = Vec::new();
        for k in 0..l {
            if let Some(lim) = limit[k] {
                let row = phi.row(k).transpose();
                line_rows.push((k, 1.0, qp.ineq.len()));
                qp.ineq.push(Constraint { a: -&row, b: lim - phi0[k] });
                line_rows.push((k, -1.0, qp.ineq.len()));
                qp.ineq.push(Constraint { a: row, b: lim + phi0[k] });
            }
        }
        for j in 0..nx {
            let mut unit = DVector::zeros(nx);
            unit[j] = 1.0;
            if hi[j] <= lo[j] {
                qp.eq.push(Constraint { a: unit, b: -lo[j] });
                continue;
            }
            qp.ineq.push(Constraint { a: unit.clone(), b: -lo[j] });
            if hi[j].is_finite() {
                qp.ineq.push(Constraint { a: -unit, b: hi[j] });
            }
        }
        let sol = qp.solve().map_err(|err| match err {
            QpError::Infeasible => GridError::Infeasible { period },
            other => GridError::Solver(other),
        })?;
        let x = sol.x;
        let f = &phi * &x + &phi0;
        let df = (&f - &fbar).amax();
        let dx = (&x - &xk).amax();
        xk = x.clone();
        if df <= opts.tolerance && dx <= opts.tolerance {
            // dV/d(fixed_i) for every node, then price = −that per kW.
            let mut dh = DVector::zeros(n);
            let ms_fr = f_r.transpose() * &m_s;
            for (row, i) in rows.iter().enumerate() {
                dh[*i] = ms_fr[row];
            }
            dh[slack] = -1.0;
            let y = sol.eq_multipliers[0];
            let mut dv = -(dh * y);
            for (k, dir, idx) in &line_rows {
                let lam = sol.ineq_multipliers[*idx];
                if lam != 0.0 {
                    // g = lim ∓ f_k, so ∂g/∂fixed_r = ∓F_r[k, :].
                    for (row, i) in rows.iter().enumerate() {
                        dv[*i] -= lam * (-dir * f_r[(*k, row)]);
                    }
                }
            }
            return Ok(assemble(grid, period, fixed_injection_kw, opts, &vars, &x, &f, &dv, it));
        }
        fbar = &fbar + (&f - &fbar) * opts.damping;
    }
    Err(GridError::NotConverged { period, iterations: opts.max_iterations })
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    grid: &GridModel,
    period: usize,
    fixed_injection_kw: &[f64],
    opts: &OpfOptions,
    vars: &[Var],
    x: &DVector<f64>,
    f: &DVector<f64>,
    dv: &DVector<f64>,
    iterations: usize,
) -> OpfSolution {
    let base = grid.base_kw;
    let mut plant_kw = vec![0.0; grid.plants.len()];
    let mut load_kw: Vec<f64> = match &opts.fixed_loads_kw {
        Some(v) => v.clone(),
        None => grid.loads.iter().map(|ld| ld.p0_kw[period]).collect(),
    };
    let mut renewable_kw = vec![0.0; grid.renewables.len()];
    for (j, v) in vars.iter().enumerate() {
        let kw = x[j] * base;
        match v {
            Var::Plant(i) => plant_kw[*i] = kw,
            Var::Load(i) => load_kw[*i] = kw,
            Var::Renewable(i) => renewable_kw[*i] = kw,
        }
    }
    let curtailed_kw = grid
        .renewables
        .iter()
        .zip(&renewable_kw)
        .map(|(r, used)| (r.available_kw[period] - used).max(0.0))
        .collect();
    let mut node_injection_kw = fixed_injection_kw.to_vec();
    let idx = |node: u32| grid.node_index(node).expect("validated");
    for (p, kw) in grid.plants.iter().zip(&plant_kw) {
        node_injection_kw[idx(p.node)] += kw;
    }
    for (ld, kw) in grid.loads.iter().zip(&load_kw) {
        node_injection_kw[idx(ld.node)] -= kw;
    }
    for (rn, kw) in grid.renewables.iter().zip(&renewable_kw) {
        node_injection_kw[idx(rn.node)] += kw;
    }
    let line_flow_kw: Vec<f64> = f.iter().map(|v| v * base).collect();
    let line_loss_kw: Vec<f64> = grid.lines.iter().zip(f.iter()).map(|(ln, v)| ln.r * v * v * base).collect();
    let total_loss_kw = line_loss_kw.iter().sum();
    let lmp = dv.iter().map(|d| -d / base).collect();
    let hourly: f64 = grid.plants.iter().zip(&plant_kw).map(|(p, kw)| p.cost(*kw)).sum();
    OpfSolution {
        period,
        fixed_injection_kw: fixed_injection_kw.to_vec(),
        node_injection_kw,
        plant_kw,
        load_kw,
        renewable_kw,
        curtailed_kw,
        line_flow_kw,
        line_loss_kw,
        lmp,
        total_cost: hourly * grid.period_hours,
        total_loss_kw,
        iterations,
    }
}

/// One impedance-weighted loop equation per chord of a BFS spanning tree.
fn cycle_rows(grid: &GridModel) -> Result<Vec<DVector<f64>>, GridError> {
    let n = grid.nodes.len();
    let l = grid.lines.len();
    let mut ends = Vec::with_capacity(l);
    let mut adj = vec![Vec::new(); n];
    for (k, line) in grid.lines.iter().enumerate() {
        let (a, b) = (grid.node_index(line.from)?, grid.node_index(line.to)?);
        ends.push((a, b));
        adj[a].push(k);
        adj[b].push(k);
    }
    // parent[v] = (parent node, line index)
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut depth = vec![usize::MAX; n];
    let mut tree = vec![false; l];
    depth[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(v) = queue.pop_front() {
        for &k in &adj[v] {
            let w = if ends[k].0 == v { ends[k].1 } else { ends[k].0 };
            if depth[w] == usize::MAX {
                depth[w] = depth[v] + 1;
                parent[w] = Some((v, k));
                tree[k] = true;
                queue.push_back(w);
            }
        }
    }
    let weight = |k: usize| grid.lines[k].x.unwrap_or(grid.lines[k].r);
    let mut out = Vec::new();
    for k in (0..l).filter(|k| !tree[*k]) {
        let mut row = DVector::zeros(l);
        let (a, b) = ends[k];
        // Walk a → b along the chord, then back from b to a through the tree.
        row[k] += weight(k);
        let (mut u, mut v) = (b, a);
        let mut tail = Vec::new();
        while u != v {
            if depth[u] >= depth[v] {
                let (p, e) = parent[u].expect("non-root has a parent");
                // Travelling u → p.
                row[e] += if ends[e].0 == u { weight(e) } else { -weight(e) };
                u = p;
            } else {
                let (p, e) = parent[v].expect("non-root has a parent");
                // This segment is travelled p → v, recorded later.
                tail.push((p, v, e));
                v = p;
            }
        }
        for (p, _, e) in tail {
            row[e] += if ends[e].0 == p { weight(e) } else { -weight(e) };
        }
        if row.iter().all(|v| *v == 0.0) {
            return Err(GridError::Config("loop with zero impedance".into()));
        }
        out.push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_PLANT: &str = r#"
        periods = 1
        [[node]]
        id = 1
        [[plant]]
        name = "p1"
        node = 1
        a = 0.0008
        b = 0.55
        pmax_kw = 5000
        [[plant]]
        name = "p2"
        node = 1
        a = 0.0005
        b = 0.35
        pmax_kw = 5000
        [[load]]
        name = "d"
        node = 1
        p0_kw = [1000.0]
    "#;

    #[test]
    fn two_plant_oracle() {
        let g = GridModel::from_toml_str(TWO_PLANT).unwrap();
        let s = solve_opf(&g, 0, &[0.0]).unwrap();
        // a1 P1 + b1 = a2 (D − P1) + b2.
        let p1 = (0.0005 * 1000.0 + 0.35 - 0.55) / (0.0008 + 0.0005);
        assert!((s.plant_kw[0] - p1).abs() < 1e-6, "{s:?}");
        assert!((s.plant_kw[1] - (1000.0 - p1)).abs() < 1e-6);
        assert!((s.lmp[0] - (0.0008 * p1 + 0.55)).abs() < 1e-9);
        assert_eq!(s.total_loss_kw, 0.0);
    }

    #[test]
    fn zero_demand_and_infeasible() {
        let g = GridModel::from_toml_str(&TWO_PLANT.replace("[1000.0]", "[0.0]")).unwrap();
        let s = solve_opf(&g, 0, &[0.0]).unwrap();
        assert!(s.plant_kw.iter().all(|p| p.abs() < 1e-9));
        assert!(s.total_cost.abs() < 1e-9);
        let g = GridModel::from_toml_str(&TWO_PLANT.replace("[1000.0]", "[10001.0]")).unwrap();
        assert_eq!(solve_opf(&g, 0, &[0.0]).unwrap_err(), GridError::Infeasible { period: 0 });
    }

    const RADIAL: &str = r#"
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
        r = 0.05
        [[line]]
        from = 2
        to = 3
        r = 0.05
        limit_kw = 300
        [[plant]]
        name = "g"
        node = 1
        a = 0.001
        b = 0.4
        pmax_kw = 3000
        [[plant]]
        name = "h"
        node = 3
        a = 0.002
        b = 0.9
        pmax_kw = 3000
        [[load]]
        name = "mid"
        node = 2
        p0_kw = [500.0]
        [[load]]
        name = "far"
        node = 3
        p0_kw = [600.0]
    "#;

    #[test]
    fn lossy_balance_and_marginal_costs() {
        let g = GridModel::from_toml_str(RADIAL).unwrap();
        let s = solve_opf(&g, 0, &[0.0; 3]).unwrap();
        assert!(s.balance_residual_kw().abs() < 1e-6 * g.base_kw);
        assert!(s.total_loss_kw > 0.0);
        // The line into node 3 is congested, so the local plant runs.
        assert!((s.line_flow_kw[1] - 300.0).abs() < 1e-6, "{:?}", s.line_flow_kw);
        assert!((g.plants[0].marginal_cost(s.plant_kw[0]) - s.lmp[0]).abs() < 1e-6);
        assert!((g.plants[1].marginal_cost(s.plant_kw[1]) - s.lmp[2]).abs() < 1e-6);
        assert!(s.lmp[1] > s.lmp[0], "losses raise downstream prices: {:?}", s.lmp);
    }

    #[test]
    fn meshed_network_splits_flow_by_impedance() {
        let text = r#"
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
            r = 0.0
            x = 0.1
            [[line]]
            from = 1
            to = 3
            r = 0.0
            x = 0.1
            [[line]]
            from = 3
            to = 2
            r = 0.0
            x = 0.1
            [[plant]]
            name = "g"
            node = 1
            a = 0.001
            b = 0.4
            pmax_kw = 3000
            [[load]]
            name = "d"
            node = 2
            p0_kw = [900.0]
        "#;
        let g = GridModel::from_toml_str(text).unwrap();
        let s = solve_opf(&g, 0, &[0.0; 3]).unwrap();
        assert!((s.line_flow_kw[0] - 600.0).abs() < 1e-6, "{:?}", s.line_flow_kw);
        assert!((s.line_flow_kw[1] - 300.0).abs() < 1e-6);
        assert!((s.line_flow_kw[2] - 300.0).abs() < 1e-6);
    }
}
