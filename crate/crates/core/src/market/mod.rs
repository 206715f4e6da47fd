//! Peer-to-peer electricity market on a DC power-flow distribution network.
//!
//! Every bus is one agent. Per hour h agent i decides
//! `(p_g, p_mg, p_st, {p_tr(i,j)}_{j ∈ N_i}, θ)`: generation, purchase from the main grid,
//! storage discharge, bilateral trades (positive = bought from j) and the bus phase.

mod build;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use build::{build_day_ahead, build_real_time, MarketGame, RealTimeMarket};

use crate::error::{GneError, Result};
use crate::game::{GameSpec, JointState};

/// A bus reference: 1-based position (number) or bus id (string).
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum BusRef {
    Index(usize),
    Id(String),
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub max: f64,
    /// Linear generation cost per unit.
    #[serde(default)]
    pub cost: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Storage {
    pub capacity: f64,
    /// Charge/discharge power limit.
    pub power: f64,
    pub initial: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: String,
    #[serde(default)]
    pub mg: bool,
    #[serde(default)]
    pub gen: Option<Generator>,
    #[serde(default)]
    pub storage: Option<Storage>,
    /// Hourly demand.
    pub demand: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineDoc {
    from: BusRef,
    to: BusRef,
    b: f64,
    limit: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Susceptance.
    pub b: f64,
    pub limit: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealTimeParams {
    /// Samples per window.
    pub horizon: usize,
    pub steps: usize,
    /// Sampling time in hours.
    pub dt: f64,
    pub peak_start: f64,
    pub peak_end: f64,
    /// Line whose flow is penalised during the peak window.
    pub line: Option<(BusRef, BusRef)>,
    pub q_pf_peak: f64,
    /// Weight of the charge-state deviation term.
    pub storage_weight: f64,
}

impl Default for RealTimeParams {
    fn default() -> Self {
        RealTimeParams {
            horizon: 8,
            steps: 12,
            dt: 0.25,
            peak_start: 6.0,
            peak_end: 16.0,
            line: None,
            q_pf_peak: 1.0,
            storage_weight: 1.0,
        }
    }
}

/// Prices, device limits and selection weights.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketParams {
    pub hours: usize,
    /// Main-grid price is `mg_price_base + mg_price_slope · Σ_j p_mg_j`.
    pub mg_price_base: f64,
    pub mg_price_slope: f64,
    pub trade_price: f64,
    pub mg_max: f64,
    pub trade_max: f64,
    pub theta_max: f64,
    pub q_d: f64,
    pub q_mg: f64,
    pub q_theta: f64,
    pub q_pf: f64,
    pub q_tr: f64,
    pub q_st: f64,
    pub q_lambda: f64,
    pub q_nu: f64,
    pub real_time: RealTimeParams,
}

impl Default for MarketParams {
    fn default() -> Self {
        MarketParams {
            hours: 24,
            mg_price_base: 0.4,
            mg_price_slope: 0.05,
            trade_price: 0.05,
            mg_max: 2.0,
            trade_max: 1.0,
            theta_max: 1.0,
            q_d: 0.5,
            q_mg: 0.5,
            q_theta: 0.5,
            q_pf: 0.5,
            q_tr: 0.5,
            q_st: 0.5,
            q_lambda: 0.5,
            q_nu: 0.5,
            real_time: RealTimeParams::default(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    #[serde(default)]
    name: Option<String>,
    buses: Vec<Bus>,
    lines: Vec<LineDoc>,
    #[serde(default)]
    trading: Vec<(BusRef, BusRef)>,
    #[serde(default)]
    market: MarketParams,
}

#[derive(Clone, Debug)]
pub struct BusNetwork {
    pub name: Option<String>,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    /// Unordered trading pairs, i < j.
    pub trading: Vec<(usize, usize)>,
    pub params: MarketParams,
    mg_bus: usize,
}

pub fn load_network(path: impl AsRef<Path>) -> Result<BusNetwork> {
    let text = std::fs::read_to_string(path.as_ref())?;
    BusNetwork::from_json(&serde_json::from_str(&text)?)
}

fn finite_nonneg(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(GneError::validation("market data", format!("{what} must be finite and non-negative, got {v}")))
    }
}

impl BusNetwork {
    pub fn from_json(v: &Value) -> Result<Self> {
        let doc: NetworkDoc = serde_json::from_value(v.clone())?;
        let n = doc.buses.len();
        if n == 0 {
            return Err(GneError::validation("market data", "network has no buses"));
        }
        let ids: BTreeMap<&str, usize> = doc.buses.iter().enumerate().map(|(k, b)| (b.id.as_str(), k)).collect();
        if ids.len() != n {
            return Err(GneError::validation("market data", "bus ids must be unique"));
        }
        let resolve = |r: &BusRef| -> Result<usize> {
            match r {
                BusRef::Index(k) if (1..=n).contains(k) => Ok(k - 1),
                BusRef::Index(k) => Err(GneError::Parse(format!("bus index {k} out of range 1..={n}"))),
                BusRef::Id(s) => ids.get(s.as_str()).copied().ok_or_else(|| GneError::Parse(format!("unknown bus id {s:?}"))),
            }
        };

        let mut lines = Vec::with_capacity(doc.lines.len());
        for l in &doc.lines {
            let (from, to) = (resolve(&l.from)?, resolve(&l.to)?);
            if from == to {
                return Err(GneError::validation("market data", format!("line at bus {} is a self-loop", doc.buses[from].id)));
            }
            if lines.iter().any(|o: &Line| (o.from, o.to) == (from, to) || (o.from, o.to) == (to, from)) {
                return Err(GneError::validation("market data", "duplicate line"));
            }
            if !(l.b > 0.0 && l.b.is_finite() && l.limit > 0.0) {
                return Err(GneError::validation("market data", "line susceptance and limit must be positive"));
            }
            lines.push(Line { from, to, b: l.b, limit: l.limit });
        }

        let mut trading = Vec::with_capacity(doc.trading.len());
        for (a, b) in &doc.trading {
            let (a, b) = (resolve(a)?, resolve(b)?);
            if a == b {
                return Err(GneError::validation("market data", "a bus cannot trade with itself"));
            }
            let pair = (a.min(b), a.max(b));
            if trading.contains(&pair) {
                return Err(GneError::validation("market data", "duplicate trading pair"));
            }
            trading.push(pair);
        }

        let mg: Vec<usize> = doc.buses.iter().enumerate().filter(|(_, b)| b.mg).map(|(k, _)| k).collect();
        if mg.len() != 1 {
            return Err(GneError::validation(
                "market data",
                format!("exactly one bus must connect to the main grid, found {}", mg.len()),
            ));
        }
        for b in &doc.buses {
            if let Some(g) = &b.gen {
                finite_nonneg("generator max", g.max)?;
            }
            if let Some(s) = &b.storage {
                finite_nonneg("storage capacity", s.capacity)?;
                finite_nonneg("storage power", s.power)?;
                if !(0.0..=s.capacity).contains(&s.initial) {
                    return Err(GneError::validation("market data", format!("bus {}: initial charge outside [0, capacity]", b.id)));
                }
            }
            if b.demand.iter().any(|d| !d.is_finite()) {
                return Err(GneError::ProfileMismatch(format!("bus {}: non-finite demand", b.id)));
            }
        }
        let p = &doc.market;
        for (what, v) in [
            ("mg_max", p.mg_max),
            ("trade_max", p.trade_max),
            ("theta_max", p.theta_max),
            ("mg_price_base", p.mg_price_base),
        ] {
            finite_nonneg(what, v)?;
        }
        if !(p.mg_price_slope > 0.0) {
            return Err(GneError::validation("market data", "mg_price_slope must be positive"));
        }
        for (what, v) in [
            ("q_d", p.q_d),
            ("q_mg", p.q_mg),
            ("q_theta", p.q_theta),
            ("q_pf", p.q_pf),
            ("q_tr", p.q_tr),
            ("q_st", p.q_st),
            ("q_lambda", p.q_lambda),
            ("q_nu", p.q_nu),
            ("q_pf_peak", p.real_time.q_pf_peak),
            ("storage_weight", p.real_time.storage_weight),
        ] {
            finite_nonneg(what, v)?;
        }

        let net = BusNetwork {
            name: doc.name,
            buses: doc.buses,
            lines,
            trading,
            params: doc.market,
            mg_bus: mg[0],
        };
        if let Some(k) = net.islanded_bus() {
            return Err(GneError::IslandedBus(k + 1));
        }
        Ok(net)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn mg_bus(&self) -> usize {
        self.mg_bus
    }

    /// Trading partners of bus i, ascending.
    pub fn partners(&self, i: usize) -> Vec<usize> {
        let mut p: Vec<usize> = self
            .trading
            .iter()
            .filter_map(|&(a, b)| if a == i { Some(b) } else if b == i { Some(a) } else { None })
            .collect();
        p.sort_unstable();
        p
    }

    /// First bus not reachable from bus 0 over the lines.
    fn islanded_bus(&self) -> Option<usize> {
        let n = self.n_buses();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for l in &self.lines {
                let v = if l.from == u { l.to } else if l.to == u { l.from } else { continue };
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.iter().position(|s| !s)
    }

    /// Index of the line joining buses a and b, and +1/−1 for its orientation.
    pub fn find_line(&self, a: usize, b: usize) -> Option<(usize, f64)> {
        self.lines.iter().position(|l| (l.from, l.to) == (a, b)).map(|k| (k, 1.0)).or_else(|| {
            self.lines.iter().position(|l| (l.from, l.to) == (b, a)).map(|k| (k, -1.0))
        })
    }

    pub fn resolve(&self, r: &BusRef) -> Result<usize> {
        match r {
            BusRef::Index(k) if (1..=self.n_buses()).contains(k) => Ok(k - 1),
            BusRef::Index(k) => Err(GneError::Parse(format!("bus index {k} out of range"))),
            BusRef::Id(s) => self
                .buses
                .iter()
                .position(|b| &b.id == s)
                .ok_or_else(|| GneError::Parse(format!("unknown bus id {s:?}"))),
        }
    }

    pub fn line_label(&self, k: usize) -> String {
        let l = &self.lines[k];
        format!("{}-{}", self.buses[l.from].id, self.buses[l.to].id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    Gen,
    Grid,
    Storage,
    /// k-th trading partner in ascending bus order
    Trade(usize),
    Theta,
}

/// Position of each market variable inside the agents' decision blocks.
#[derive(Clone, Debug)]
pub struct MarketLayout {
    pub hours: usize,
    pub partners: Vec<Vec<usize>>,
}

impl MarketLayout {
    pub fn new(net: &BusNetwork, hours: usize) -> Self {
        MarketLayout {
            hours,
            partners: (0..net.n_buses()).map(|i| net.partners(i)).collect(),
        }
    }

    /// Variables per hour for agent i.
    pub fn width(&self, i: usize) -> usize {
        4 + self.partners[i].len()
    }

    pub fn dim(&self, i: usize) -> usize {
        self.hours * self.width(i)
    }

    pub fn dims(&self) -> Vec<usize> {
        (0..self.partners.len()).map(|i| self.dim(i)).collect()
    }

    /// Index of a variable inside agent i's block.
    pub fn idx(&self, i: usize, h: usize, f: Field) -> usize {
        let off = match f {
            Field::Gen => 0,
            Field::Grid => 1,
            Field::Storage => 2,
            Field::Trade(k) => {
                debug_assert!(k < self.partners[i].len());
                3 + k
            }
            Field::Theta => 3 + self.partners[i].len(),
        };
        h * self.width(i) + off
    }

    /// Position of j in i's partner list.
    pub fn partner_slot(&self, i: usize, j: usize) -> Option<usize> {
        self.partners[i].iter().position(|&p| p == j)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LineFlow {
    pub line: usize,
    pub hour: usize,
    pub flow: f64,
}

/// b_ij (θ_i − θ_j) for every line and hour (0-based indices).
pub fn line_flows(net: &BusNetwork, layout: &MarketLayout, spec: &GameSpec, w: &JointState) -> Result<Vec<LineFlow>> {
    let dims = layout.dims();
    if spec.layout().dims() != dims.as_slice() {
        return Err(GneError::DimensionMismatch {
            expected: dims.iter().sum(),
            got: spec.layout().n(),
        });
    }
    if w.layout().len() != spec.layout().len() {
        return Err(GneError::DimensionMismatch {
            expected: spec.layout().len(),
            got: w.layout().len(),
        });
    }
    let mut out = Vec::with_capacity(net.lines.len() * layout.hours);
    for (k, l) in net.lines.iter().enumerate() {
        for h in 0..layout.hours {
            let ti = w.x_block(l.from)[layout.idx(l.from, h, Field::Theta)];
            let tj = w.x_block(l.to)[layout.idx(l.to, h, Field::Theta)];
            out.push(LineFlow { line: k, hour: h, flow: l.b * (ti - tj) });
        }
    }
    Ok(out)
}

/// `line,hour,flow` with 1-based hours and the line named `from-to`.
pub fn write_flows_csv<W: Write>(net: &BusNetwork, flows: &[LineFlow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "line,hour,flow")?;
    for f in flows {
        writeln!(out, "{},{},{:.16e}", net.line_label(f.line), f.hour + 1, f.flow)?;
    }
    Ok(())
}

/// Σ_lines,hours q_l (flow)², the line-flow part of the selection function.
pub fn weighted_flow_energy(flows: &[LineFlow], weights: &[f64]) -> f64 {
    flows.iter().map(|f| weights[f.line] * f.flow * f.flow).sum()
}

/// Storage charge state planned by the day-ahead market, at every whole hour 0..=H.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct DayAheadPlan {
    /// bus id → charge trajectory
    pub charge: BTreeMap<String, Vec<f64>>,
}

impl DayAheadPlan {
    /// x_ch,h = x_ch,0 − Σ_{h' ≤ h} p_st,h' for every storage bus.
    pub fn from_solution(net: &BusNetwork, layout: &MarketLayout, w: &JointState) -> Self {
        let mut charge = BTreeMap::new();
        for (i, bus) in net.buses.iter().enumerate() {
            let Some(s) = &bus.storage else { continue };
            let x = w.x_block(i);
            let mut traj = Vec::with_capacity(layout.hours + 1);
            let mut c = s.initial;
            traj.push(c);
            for h in 0..layout.hours {
                c -= x[layout.idx(i, h, Field::Storage)];
                traj.push(c);
            }
            charge.insert(bus.id.clone(), traj);
        }
        DayAheadPlan { charge }
    }

    /// Planned charge at time τ (hours), linear between whole hours.
    pub fn charge_at(&self, bus: &str, tau: f64) -> Result<f64> {
        let traj = self
            .charge
            .get(bus)
            .ok_or_else(|| GneError::PlanMissing(format!("no charge plan for storage bus {bus}")))?;
        let end = traj.len() as f64 - 1.0;
        if traj.is_empty() || tau < 0.0 || tau > end + 1e-9 {
            return Err(GneError::PlanMissing(format!("plan for bus {bus} does not cover hour {tau}")));
        }
        if traj.len() == 1 {
            return Ok(traj[0]);
        }
        let k = (tau.floor() as usize).min(traj.len() - 2);
        let s = tau - k as f64;
        Ok(traj[k] + s * (traj[k + 1] - traj[k]))
    }
}
