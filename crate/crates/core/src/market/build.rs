//! Assembly of market games from a bus network.

use std::sync::Arc;

use super::{line_flows, BusNetwork, DayAheadPlan, Field, LineFlow, MarketLayout};
use crate::error::{GneError, Result};
use crate::game::{
    AgentSpec, BalanceRow, BoxSet, CommGraph, ConstraintForm, CostForm, GameOptions, GameSpec, JointState, Layout, ProxForm,
    QuadraticCost, SelectionFunction, SelectionRow, SetForm,
};
use crate::linalg::csr_from_triplets;
use crate::online::GameSequence;

/// A day-ahead market game together with its variable map.
#[derive(Clone, Debug)]
pub struct MarketGame {
    pub spec: GameSpec,
    pub layout: MarketLayout,
    /// Selection weight of each line's flow (hour-independent).
    pub flow_weights: Vec<f64>,
}

/// The rolling real-time market: one game per window.
#[derive(Clone, Debug)]
pub struct RealTimeMarket {
    pub sequence: GameSequence,
    pub layout: MarketLayout,
    /// Line penalised during the peak window.
    pub line: usize,
    /// `peak[t][h]`: sample h of window t falls in the peak window.
    pub peak: Vec<Vec<bool>>,
    /// Start time of every sample, in hours.
    pub sample_time: Vec<Vec<f64>>,
}

impl RealTimeMarket {
    /// Line flows of window t at a state of that window's game.
    pub fn window_flows(&self, net: &BusNetwork, t: usize, w: &JointState) -> Result<Vec<LineFlow>> {
        line_flows(net, &self.layout, self.sequence.instance(t), w)
    }

    /// Mean |flow| on the penalised line over all peak samples, with `states[t]` the
    /// state reached in window t.
    pub fn peak_line_flow(&self, net: &BusNetwork, states: &[JointState]) -> Result<f64> {
        if states.len() != self.sequence.len() {
            return Err(GneError::DimensionMismatch { expected: self.sequence.len(), got: states.len() });
        }
        let (mut sum, mut count) = (0.0, 0usize);
        for (t, w) in states.iter().enumerate() {
            for f in self.window_flows(net, t, w)? {
                if f.line == self.line && self.peak[t][f.hour] {
                    sum += f.flow.abs();
                    count += 1;
                }
            }
        }
        Ok(if count == 0 { 0.0 } else { sum / count as f64 })
    }
}

/// Data that changes between market windows.
struct Window {
    hours: usize,
    dt: f64,
    /// demand[i][h]
    demand: Vec<Vec<f64>>,
    /// Charge at the start of the window, per bus.
    charge0: Vec<f64>,
    /// Planned charge at the end of the window; `None` leaves the deviation term out.
    target: Option<Vec<f64>>,
    /// q_pf[h][line]
    q_pf: Vec<Vec<f64>>,
}

/// Accumulates coupling rows Σ_i (A_i x_i − b_i) ≤ 0.
struct Rows {
    n_agents: usize,
    /// (row, agent, local index, coefficient)
    a: Vec<(usize, usize, usize, f64)>,
    /// (row, agent, offset)
    b: Vec<(usize, usize, f64)>,
    m: usize,
}

impl Rows {
    fn push(&mut self, coefs: &[(usize, usize, f64)], offsets: &[(usize, f64)]) {
        let r = self.m;
        self.m += 1;
        self.a.extend(coefs.iter().map(|&(i, k, c)| (r, i, k, c)));
        self.b.extend(offsets.iter().map(|&(i, v)| (r, i, v)));
    }

    /// expr = 0 as the pair expr ≤ 0, −expr ≤ 0.
    fn push_equality(&mut self, coefs: &[(usize, usize, f64)], offsets: &[(usize, f64)]) {
        self.push(coefs, offsets);
        let neg: Vec<_> = coefs.iter().map(|&(i, k, c)| (i, k, -c)).collect();
        let neg_b: Vec<_> = offsets.iter().map(|&(i, v)| (i, -v)).collect();
        self.push(&neg, &neg_b);
    }

    fn finish(self, dims: &[usize]) -> Vec<ConstraintForm> {
        (0..self.n_agents)
            .map(|i| {
                let t: Vec<_> = self.a.iter().filter(|e| e.1 == i).map(|&(r, _, k, c)| (r, k, c)).collect();
                let mut b = vec![0.0; self.m];
                for &(r, _, v) in self.b.iter().filter(|e| e.1 == i) {
                    b[r] += v;
                }
                ConstraintForm::Affine { a: csr_from_triplets(self.m, dims[i], &t), b }
            })
            .collect()
    }
}

fn assemble(net: &BusNetwork, win: &Window) -> Result<GameSpec> {
    let p = &net.params;
    let n = net.n_buses();
    let hours = win.hours;
    let ml = MarketLayout::new(net, hours);
    let dims = ml.dims();
    let mg = net.mg_bus();

    let mut rows = Rows { n_agents: n, a: Vec::new(), b: Vec::new(), m: 0 };
    // trading reciprocity p_tr(i,j) + p_tr(j,i) = 0
    for &(i, j) in &net.trading {
        let (si, sj) = (ml.partner_slot(i, j).expect("partner"), ml.partner_slot(j, i).expect("partner"));
        for h in 0..hours {
            rows.push_equality(
                &[(i, ml.idx(i, h, Field::Trade(si)), 1.0), (j, ml.idx(j, h, Field::Trade(sj)), 1.0)],
                &[],
            );
        }
    }
    // DC power flow: p_g + p_st + ι Σ_j p_mg,j − d_i − Σ_{l ∋ i} b_l (θ_i − θ_other) = 0
    for i in 0..n {
        for h in 0..hours {
            let mut c = vec![(i, ml.idx(i, h, Field::Gen), 1.0), (i, ml.idx(i, h, Field::Storage), 1.0)];
            if i == mg {
                c.extend((0..n).map(|j| (j, ml.idx(j, h, Field::Grid), 1.0)));
            }
            for l in net.lines.iter().filter(|l| l.from == i || l.to == i) {
                let other = if l.from == i { l.to } else { l.from };
                c.push((i, ml.idx(i, h, Field::Theta), -l.b));
                c.push((other, ml.idx(other, h, Field::Theta), l.b));
            }
            rows.push_equality(&c, &[(i, win.demand[i][h])]);
        }
    }
    // line limits |b_l (θ_from − θ_to)| ≤ limit
    for l in &net.lines {
        for h in 0..hours {
            let (tf, tt) = (ml.idx(l.from, h, Field::Theta), ml.idx(l.to, h, Field::Theta));
            rows.push(&[(l.from, tf, l.b), (l.to, tt, -l.b)], &[(l.from, l.limit)]);
            rows.push(&[(l.from, tf, -l.b), (l.to, tt, l.b)], &[(l.from, l.limit)]);
        }
    }
    // storage charge 0 ≤ x0 − dt Σ_{h' ≤ h} p_st,h' ≤ capacity
    for (i, bus) in net.buses.iter().enumerate() {
        let Some(s) = &bus.storage else { continue };
        let x0 = win.charge0[i];
        for h in 0..hours {
            let up: Vec<_> = (0..=h).map(|k| (i, ml.idx(i, k, Field::Storage), win.dt)).collect();
            let down: Vec<_> = (0..=h).map(|k| (i, ml.idx(i, k, Field::Storage), -win.dt)).collect();
            rows.push(&up, &[(i, x0)]);
            rows.push(&down, &[(i, s.capacity - x0)]);
        }
    }
    let m = rows.m;
    let constraints = rows.finish(&dims);

    let sw = p.real_time.storage_weight;
    let mut agents = Vec::with_capacity(n);
    for (i, g) in constraints.into_iter().enumerate() {
        let bus = &net.buses[i];
        let w = ml.width(i);
        let np = ml.partners[i].len();
        let (mut lo, mut hi) = (vec![0.0; dims[i]], vec![0.0; dims[i]]);
        let mut balance = Vec::with_capacity(hours);
        let mut c = vec![0.0; dims[i]];
        let mut own = Vec::new();
        for h in 0..hours {
            let at = |f| ml.idx(i, h, f);
            hi[at(Field::Gen)] = bus.gen.as_ref().map_or(0.0, |g| g.max);
            hi[at(Field::Grid)] = p.mg_max;
            if let Some(s) = &bus.storage {
                lo[at(Field::Storage)] = -s.power;
                hi[at(Field::Storage)] = s.power;
            }
            for k in 0..np {
                lo[at(Field::Trade(k))] = -p.trade_max;
                hi[at(Field::Trade(k))] = p.trade_max;
            }
            if i != mg {
                lo[at(Field::Theta)] = -p.theta_max;
                hi[at(Field::Theta)] = p.theta_max;
            }
            let mut idx = vec![at(Field::Gen), at(Field::Grid), at(Field::Storage)];
            idx.extend((0..np).map(|k| at(Field::Trade(k))));
            balance.push(BalanceRow { idx, rhs: win.demand[i][h] });

            c[at(Field::Gen)] = bus.gen.as_ref().map_or(0.0, |g| g.cost);
            c[at(Field::Grid)] = p.mg_price_base;
            for k in 0..np {
                c[at(Field::Trade(k))] = p.trade_price;
            }
            // f_mg = (base + slope Σ_j p_mg,j) p_mg,i
            own.push((at(Field::Grid), at(Field::Grid), 2.0 * p.mg_price_slope));
        }
        // f_st = sw (x0 − dt Σ_h p_st,h − x̄)²
        if let (Some(target), Some(_)) = (&win.target, &bus.storage) {
            let r = win.charge0[i] - target[i];
            for h in 0..hours {
                c[ml.idx(i, h, Field::Storage)] = -2.0 * sw * win.dt * r;
                for k in 0..hours {
                    own.push((ml.idx(i, h, Field::Storage), ml.idx(i, k, Field::Storage), 2.0 * sw * win.dt * win.dt));
                }
            }
        }
        let mut blocks = vec![(i, csr_from_triplets(dims[i], dims[i], &own))];
        for j in (0..n).filter(|&j| j != i) {
            let t: Vec<_> = (0..hours)
                .map(|h| (ml.idx(i, h, Field::Grid), ml.idx(j, h, Field::Grid), p.mg_price_slope))
                .collect();
            blocks.push((j, csr_from_triplets(dims[i], dims[j], &t)));
        }
        debug_assert_eq!(w * hours, dims[i]);
        let bounds = BoxSet::new(lo, hi)?;
        agents.push(AgentSpec {
            id: i,
            dim: dims[i],
            cost: CostForm::Quadratic(QuadraticCost { blocks, c }),
            ell: ProxForm::Zero,
            set: SetForm::BoxBalance { bounds, rows: balance },
            g,
        });
    }

    // F is affine with a symmetric PSD matrix, so it is 1/λ_max-cocoercive
    let mut lmax = p.mg_price_slope * (n as f64 + 1.0);
    if win.target.is_some() && net.buses.iter().any(|b| b.storage.is_some()) {
        lmax = lmax.max(2.0 * sw * win.dt * win.dt * hours as f64);
    }
    let options = GameOptions {
        cocoercivity: Some(1.0 / lmax),
        lipschitz_f: Some(lmax),
        ..GameOptions::default()
    };

    let layout = Layout::new(dims.clone(), m);
    let selection = selection(net, &ml, &layout, win)?;
    // every cost reads every p_mg,j, so all agents talk to each other
    GameSpec::new(agents, m, CommGraph::complete(n), Some(selection), options)
}

fn selection(net: &BusNetwork, ml: &MarketLayout, layout: &Layout, win: &Window) -> Result<SelectionFunction> {
    let p = &net.params;
    let gidx = |i: usize, h: usize, f: Field| layout.x_range(i).start + ml.idx(i, h, f);
    let mut rows = Vec::new();
    for h in 0..win.hours {
        for (i, bus) in net.buses.iter().enumerate() {
            let pg_ref = bus.gen.as_ref().map_or(0.0, |g| g.max);
            rows.push(SelectionRow::unit(gidx(i, h, Field::Gen), pg_ref, p.q_d));
            rows.push(SelectionRow::unit(gidx(i, h, Field::Grid), 0.0, p.q_mg));
            // the main-grid bus is the phase reference, θ̄ = 0
            rows.push(SelectionRow::unit(gidx(i, h, Field::Theta), 0.0, p.q_theta));
            for k in 0..ml.partners[i].len() {
                rows.push(SelectionRow::unit(gidx(i, h, Field::Trade(k)), 0.0, p.q_tr));
            }
            rows.push(SelectionRow::unit(gidx(i, h, Field::Storage), 0.0, p.q_st));
        }
        for (k, l) in net.lines.iter().enumerate() {
            rows.push(SelectionRow {
                idx: vec![gidx(l.from, h, Field::Theta), gidx(l.to, h, Field::Theta)],
                coef: vec![l.b, -l.b],
                target: 0.0,
                weight: win.q_pf[h][k],
            });
        }
    }
    for k in layout.lambda_all() {
        rows.push(SelectionRow::unit(k, 0.0, p.q_lambda));
    }
    for k in layout.nu_all() {
        rows.push(SelectionRow::unit(k, 0.0, p.q_nu));
    }
    SelectionFunction::quadratic(rows, layout, None, None)
}

fn check_profiles(net: &BusNetwork, hours: usize) -> Result<()> {
    if hours == 0 {
        return Err(GneError::ProfileMismatch("horizon must be at least one hour".into()));
    }
    for b in &net.buses {
        if b.demand.len() < hours {
            return Err(GneError::ProfileMismatch(format!(
                "bus {} has {} demand values for a {hours}-hour horizon",
                b.id,
                b.demand.len()
            )));
        }
    }
    Ok(())
}

/// Day-ahead clearing over `params.hours` hourly steps.
pub fn build_day_ahead(net: &BusNetwork) -> Result<MarketGame> {
    let hours = net.params.hours;
    check_profiles(net, hours)?;
    let win = Window {
        hours,
        dt: 1.0,
        demand: net.buses.iter().map(|b| b.demand[..hours].to_vec()).collect(),
        charge0: net.buses.iter().map(|b| b.storage.as_ref().map_or(0.0, |s| s.initial)).collect(),
        target: None,
        q_pf: vec![vec![net.params.q_pf; net.lines.len()]; hours],
    };
    let spec = assemble(net, &win)?;
    Ok(MarketGame {
        spec,
        layout: MarketLayout::new(net, hours),
        flow_weights: vec![net.params.q_pf; net.lines.len()],
    })
}

/// Hourly profile read at time τ (hours), linear between whole hours and periodic.
fn demand_at(profile: &[f64], tau: f64) -> f64 {
    let len = profile.len();
    let k = tau.floor();
    let s = tau - k;
    let a = profile[(k as usize) % len];
    let b = profile[(k as usize + 1) % len];
    a + s * (b - a)
}

/// Rolling real-time market: `steps` windows of `horizon` samples of `dt` hours each.
/// Window t starts at the planned charge and pays for missing the planned charge at its end;
/// the penalised line carries `q_pf_peak` on samples inside the peak window.
pub fn build_real_time(net: &BusNetwork, plan: &DayAheadPlan) -> Result<RealTimeMarket> {
    let rt = &net.params.real_time;
    if rt.horizon == 0 || rt.steps == 0 || !(rt.dt > 0.0) {
        return Err(GneError::validation("market data", "real-time horizon, steps and dt must be positive"));
    }
    let line_ref = rt
        .line
        .as_ref()
        .ok_or_else(|| GneError::validation("market data", "real_time.line names no penalised line"))?;
    let (a, b) = (net.resolve(&line_ref.0)?, net.resolve(&line_ref.1)?);
    let (line, _) = net
        .find_line(a, b)
        .ok_or_else(|| GneError::validation("market data", "real_time.line is not a line of the network"))?;
    check_profiles(net, 1)?;
    if let Some(b) = net.buses.iter().find(|b| b.demand.len() != net.buses[0].demand.len()) {
        return Err(GneError::ProfileMismatch(format!("bus {} has a demand profile of different length", b.id)));
    }

    let span = rt.horizon as f64 * rt.dt;
    let mut specs = Vec::with_capacity(rt.steps);
    let mut peak = Vec::with_capacity(rt.steps);
    let mut sample_time = Vec::with_capacity(rt.steps);
    for t in 0..rt.steps {
        let start = t as f64 * span;
        let times: Vec<f64> = (0..rt.horizon).map(|h| start + h as f64 * rt.dt).collect();
        let is_peak: Vec<bool> = times.iter().map(|&s| s >= rt.peak_start && s < rt.peak_end).collect();
        let mut charge0 = vec![0.0; net.n_buses()];
        let mut target = vec![0.0; net.n_buses()];
        for (i, bus) in net.buses.iter().enumerate() {
            if bus.storage.is_some() {
                charge0[i] = plan.charge_at(&bus.id, start)?;
                target[i] = plan.charge_at(&bus.id, start + span)?;
            }
        }
        let q_pf = is_peak
            .iter()
            .map(|&pk| {
                let mut q = vec![net.params.q_pf; net.lines.len()];
                if pk {
                    q[line] = rt.q_pf_peak;
                }
                q
            })
            .collect();
        let win = Window {
            hours: rt.horizon,
            dt: rt.dt,
            demand: net.buses.iter().map(|b| times.iter().map(|&s| demand_at(&b.demand, s)).collect()).collect(),
            charge0,
            target: Some(target),
            q_pf,
        };
        let spec = assemble(net, &win).map_err(|e| GneError::InstanceValidation { t: t + 1, source: Box::new(e) })?;
        specs.push(spec);
        peak.push(is_peak);
        sample_time.push(times);
    }
    Ok(RealTimeMarket {
        sequence: GameSequence::new(specs.into_iter().map(Arc::new).collect(), crate::online::SequenceMode::Arbitrary, None, None)?,
        layout: MarketLayout::new(net, rt.horizon),
        line,
        peak,
        sample_time,
    })
}
