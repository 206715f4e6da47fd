//! Round-based simulation of the distributed iterations. Each agent holds only its own
//! (x_i, λ_i, ν_i); everything it knows about other agents arrives through its mailbox.

#[cfg(test)]
mod tests;

use std::cell::Cell;
use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::error::{GneError, Result};
use crate::game::{prox, GameSpec, JointState, SelectionFunction};
use crate::hsdm::BetaSchedule;
use crate::linalg;
use crate::operators::{bc_block, t_fbf, t_pfb, AgentView, PrimalOf, StepMode, StepSizes};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Exchange1,
    Local1,
    Exchange2,
    Local2,
    Coord,
    Hsdm,
}

pub const PHASES: [Phase; 6] = [
    Phase::Exchange1,
    Phase::Local1,
    Phase::Exchange2,
    Phase::Local2,
    Phase::Coord,
    Phase::Hsdm,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    X,
    Lambda,
    Nu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Node {
    Agent(usize),
    Coordinator,
}

impl Serialize for Node {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Node::Agent(i) => s.serialize_u64(*i as u64 + 1),
            Node::Coordinator => s.serialize_str("coordinator"),
        }
    }
}

/// One line of the message log.
#[derive(Clone, Debug, Serialize)]
pub struct LogEntry {
    pub round: usize,
    pub phase: Phase,
    pub from: Node,
    pub to: Node,
    pub bytes: usize,
}

/// Inbound queues keyed by (round, sender, block). An agent may only dequeue from its
/// communication neighbours.
pub struct Mailbox {
    inbox: Vec<BTreeMap<(usize, usize, BlockKind), Vec<f64>>>,
    allowed: Vec<Vec<usize>>,
}

impl Mailbox {
    fn new(spec: &GameSpec) -> Self {
        let n = spec.n_agents();
        Mailbox {
            inbox: vec![BTreeMap::new(); n],
            allowed: (0..n).map(|i| spec.graph().neighbors(i).to_vec()).collect(),
        }
    }

    fn deliver(&mut self, round: usize, from: usize, to: usize, kind: BlockKind, payload: Vec<f64>) {
        self.inbox[to].insert((round, from, kind), payload);
    }

    pub fn take(&mut self, agent: usize, round: usize, from: usize, kind: BlockKind) -> Result<Vec<f64>> {
        if !self.allowed[agent].contains(&from) {
            return Err(GneError::LocalityViolation { agent, block: from });
        }
        self.inbox[agent].remove(&(round, from, kind)).ok_or_else(|| {
            GneError::validation(
                "mailbox",
                format!("agent {} expected {kind:?} from {} in round {round}", agent + 1, from + 1),
            )
        })
    }

    pub fn pending(&self) -> usize {
        self.inbox.iter().map(|q| q.len()).sum()
    }
}

/// What agent i currently knows of its neighbours.
#[derive(Clone, Default)]
struct Received {
    x: HashMap<usize, Vec<f64>>,
    lambda: HashMap<usize, Vec<f64>>,
    nu: HashMap<usize, Vec<f64>>,
}

/// Own blocks plus received neighbour blocks. Any other read is recorded as a violation.
struct LocalView<'a> {
    own: usize,
    x: &'a [f64],
    lambda: &'a [f64],
    nu: &'a [f64],
    recv: &'a Received,
    zeros: &'a [f64],
    violation: Cell<Option<usize>>,
}

impl LocalView<'_> {
    fn get<'b>(&'b self, j: usize, map: &'b HashMap<usize, Vec<f64>>, own: &'b [f64]) -> &'b [f64] {
        if j == self.own {
            return own;
        }
        match map.get(&j) {
            Some(v) => v,
            None => {
                self.violation.set(Some(j));
                self.zeros
            }
        }
    }
}

impl AgentView for LocalView<'_> {
    fn x(&self, j: usize) -> &[f64] {
        self.get(j, &self.recv.x, self.x)
    }
    fn lambda(&self, j: usize) -> &[f64] {
        self.get(j, &self.recv.lambda, self.lambda)
    }
    fn nu(&self, j: usize) -> &[f64] {
        self.get(j, &self.recv.nu, self.nu)
    }
}

#[derive(Clone)]
struct AgentNode {
    x: Vec<f64>,
    lambda: Vec<f64>,
    nu: Vec<f64>,
    recv: Received,
    /// neighbours' start-of-round ν, kept across the pFB ν⁺ exchange
    prev_nu: HashMap<usize, Vec<f64>>,
    /// (ℬ+𝒞)_i at the round's starting point (FBF)
    bc: Vec<f64>,
    /// ω̃_i (FBF) or the partial pFB update, laid out x ‖ λ ‖ ν
    mid: Vec<f64>,
    /// T(ω)_i
    out: Vec<f64>,
    grad: Vec<f64>,
}

/// Gathers T(ω) from every agent and hands back ∇_{ω_i}φ.
pub struct Coordinator {
    phi: SelectionFunction,
    calls: usize,
}

impl Coordinator {
    fn gradients(&mut self, spec: &GameSpec, blocks: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.calls += 1;
        let layout = spec.layout();
        let mut w = vec![0.0; layout.len()];
        for (i, b) in blocks.iter().enumerate() {
            scatter(spec, i, b, &mut w);
        }
        let mut g = vec![0.0; w.len()];
        self.phi.gradient(&w, &mut g);
        (0..blocks.len()).map(|i| gather(spec, i, &g)).collect()
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

fn gather(spec: &GameSpec, i: usize, w: &[f64]) -> Vec<f64> {
    let l = spec.layout();
    let mut v = w[l.x_range(i)].to_vec();
    v.extend_from_slice(&w[l.lambda_range(i)]);
    v.extend_from_slice(&w[l.nu_range(i)]);
    v
}

fn scatter(spec: &GameSpec, i: usize, b: &[f64], w: &mut [f64]) {
    let l = spec.layout();
    let (ni, m) = (l.dim(i), l.m());
    w[l.x_range(i)].copy_from_slice(&b[..ni]);
    w[l.lambda_range(i)].copy_from_slice(&b[ni..ni + m]);
    w[l.nu_range(i)].copy_from_slice(&b[ni + m..]);
}

#[derive(Clone, Debug, Default, Serialize, PartialEq, Eq)]
pub struct MessageCounts {
    /// block messages between agents
    pub agent: usize,
    pub coordinator: usize,
    pub bytes: usize,
    pub exchange_phases: usize,
}

#[derive(Clone, Debug)]
pub struct NetConfig {
    /// HSDM step schedule; None runs plain T iterations.
    pub schedule: Option<BetaSchedule>,
    /// Send every gradient through the coordinator even when φ is separable.
    pub force_coordinator: bool,
    /// Process agents within a phase in a random order drawn from this seed.
    pub shuffle_seed: Option<u64>,
    /// Worker threads for the local phases.
    pub threads: usize,
    pub log_messages: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            schedule: None,
            force_coordinator: false,
            shuffle_seed: None,
            threads: 1,
            log_messages: false,
        }
    }
}

pub struct Network {
    spec: Arc<GameSpec>,
    steps: StepSizes,
    cfg: NetConfig,
    agents: Vec<AgentNode>,
    mailbox: Mailbox,
    coordinator: Option<Coordinator>,
    phi: Option<SelectionFunction>,
    /// x_i goes to every j with i ∈ N_j^J
    x_receivers: Vec<Vec<usize>>,
    round: usize,
    counts: MessageCounts,
    per_round: Vec<MessageCounts>,
    log: Vec<LogEntry>,
    violations: usize,
    rng: Option<ChaCha8Rng>,
    zeros: Vec<f64>,
}

impl Network {
    pub fn new(spec: Arc<GameSpec>, steps: StepSizes, w0: &JointState, cfg: NetConfig) -> Result<Self> {
        if w0.layout().as_ref() != spec.layout().as_ref() {
            return Err(GneError::DimensionMismatch { expected: spec.layout().len(), got: w0.layout().len() });
        }
        steps.validate(&spec)?;
        if steps.mode == StepMode::Pfb {
            if let Some(i) = spec.agents().iter().position(|a| !a.g.is_affine()) {
                return Err(GneError::NotAffine { agent: i });
            }
        }
        let n = spec.n_agents();
        let phi = match (&cfg.schedule, spec.selection()) {
            (Some(_), Some(phi)) => Some(phi.clone()),
            (Some(_), None) => return Err(GneError::validation("selection", "HSDM rounds need a selection function")),
            (None, _) => None,
        };
        let coordinator = match &phi {
            Some(phi) if cfg.force_coordinator || !phi.is_separable() => Some(Coordinator { phi: phi.clone(), calls: 0 }),
            _ => None,
        };
        let mut x_receivers = vec![Vec::new(); n];
        for j in 0..n {
            for &i in spec.cost_neighbors(j) {
                x_receivers[i].push(j);
            }
        }
        let width = spec.layout().dims().iter().copied().max().unwrap_or(0).max(spec.m());
        let agents = (0..n)
            .map(|i| AgentNode {
                x: w0.x_block(i).to_vec(),
                lambda: w0.lambda(i).to_vec(),
                nu: w0.nu(i).to_vec(),
                recv: Received::default(),
                prev_nu: HashMap::new(),
                bc: Vec::new(),
                mid: Vec::new(),
                out: Vec::new(),
                grad: Vec::new(),
            })
            .collect();
        Ok(Network {
            mailbox: Mailbox::new(&spec),
            rng: cfg.shuffle_seed.map(ChaCha8Rng::seed_from_u64),
            spec,
            steps,
            cfg,
            agents,
            coordinator,
            phi,
            x_receivers,
            round: 0,
            counts: MessageCounts::default(),
            per_round: Vec::new(),
            log: Vec::new(),
            violations: 0,
            zeros: vec![0.0; width],
        })
    }

    pub fn state(&self) -> JointState {
        let mut w = JointState::zeros(self.spec.layout().clone());
        for (i, a) in self.agents.iter().enumerate() {
            w.x_block_mut(i).copy_from_slice(&a.x);
            w.lambda_mut(i).copy_from_slice(&a.lambda);
            w.nu_mut(i).copy_from_slice(&a.nu);
        }
        w
    }

    pub fn counts(&self) -> &MessageCounts {
        &self.counts
    }

    /// Message counts of each completed outer iteration.
    pub fn per_round(&self) -> &[MessageCounts] {
        &self.per_round
    }

    pub fn violations(&self) -> usize {
        self.violations
    }

    pub fn coordinator_calls(&self) -> usize {
        self.coordinator.as_ref().map_or(0, |c| c.calls())
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// JSON lines {round, phase, from, to, bytes}.
    pub fn write_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.log {
            serde_json::to_writer(&mut out, e)?;
            writeln!(out)?;
        }
        Ok(())
    }

    fn order(&mut self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.agents.len()).collect();
        if let Some(rng) = self.rng.as_mut() {
            idx.shuffle(rng);
        }
        idx
    }

    fn send(&mut self, phase: Phase, from: usize, to: usize, kind: BlockKind, payload: Vec<f64>) {
        let bytes = 8 * payload.len();
        self.counts.agent += 1;
        self.counts.bytes += bytes;
        if self.cfg.log_messages {
            self.log.push(LogEntry { round: self.round, phase, from: Node::Agent(from), to: Node::Agent(to), bytes });
        }
        self.mailbox.deliver(self.round, from, to, kind, payload);
    }

    fn log_coordinator(&mut self, from: Node, to: Node, len: usize) {
        let bytes = 8 * len;
        self.counts.coordinator += 1;
        self.counts.bytes += bytes;
        if self.cfg.log_messages {
            self.log.push(LogEntry { round: self.round, phase: Phase::Coord, from, to, bytes });
        }
    }

    /// Which blocks agent i sends in an exchange phase, from which buffer.
    fn exchange(&mut self, phase: Phase) -> Result<()> {
        self.counts.exchange_phases += 1;
        let spec = self.spec.clone();
        let m = spec.m();
        let pfb = self.steps.mode == StepMode::Pfb;
        for i in self.order() {
            let a = &self.agents[i];
            let ni = a.x.len();
            // second pFB exchange carries ν⁺ only; FBF's second exchange carries ω̃
            let (x, lambda, nu): (Vec<f64>, Vec<f64>, Vec<f64>) = match phase {
                Phase::Exchange1 => (a.x.clone(), a.lambda.clone(), a.nu.clone()),
                _ => (a.mid[..ni].to_vec(), a.mid[ni..ni + m].to_vec(), a.mid[ni + m..].to_vec()),
            };
            let second_pfb = pfb && phase == Phase::Exchange2;
            if !second_pfb {
                for j in self.x_receivers[i].clone() {
                    self.send(phase, i, j, BlockKind::X, x.clone());
                }
            }
            for &j in spec.graph().neighbors(i) {
                if !second_pfb {
                    self.send(phase, i, j, BlockKind::Lambda, lambda.clone());
                }
                self.send(phase, i, j, BlockKind::Nu, nu.clone());
            }
        }
        // receive: every agent drains exactly what its neighbours sent this round
        for i in 0..self.agents.len() {
            let mut recv = Received::default();
            if pfb && phase == Phase::Exchange2 {
                recv.x = std::mem::take(&mut self.agents[i].recv.x);
                recv.lambda = std::mem::take(&mut self.agents[i].recv.lambda);
            } else {
                for &j in spec.cost_neighbors(i) {
                    recv.x.insert(j, self.mailbox.take(i, self.round, j, BlockKind::X)?);
                }
                for &j in spec.graph().neighbors(i) {
                    recv.lambda.insert(j, self.mailbox.take(i, self.round, j, BlockKind::Lambda)?);
                }
            }
            for &j in spec.graph().neighbors(i) {
                recv.nu.insert(j, self.mailbox.take(i, self.round, j, BlockKind::Nu)?);
            }
            let a = &mut self.agents[i];
            if pfb && phase == Phase::Exchange2 {
                a.prev_nu = std::mem::take(&mut a.recv.nu);
            }
            a.recv = recv;
        }
        if self.mailbox.pending() != 0 {
            return Err(GneError::validation("mailbox", "undelivered messages at the barrier"));
        }
        Ok(())
    }

    /// Run one phase for every agent. Local phases are pure functions of an agent's
    /// own data, so they may run concurrently; results are written back in agent order.
    pub fn run_round(&mut self, phase: Phase) -> Result<()> {
        match phase {
            Phase::Exchange1 | Phase::Exchange2 => self.exchange(phase),
            Phase::Local1 | Phase::Local2 => {
                let order = self.order();
                let results = {
                    let ctx = LocalCtx { spec: &self.spec, steps: &self.steps, zeros: &self.zeros, phase };
                    let agents = &self.agents;
                    run_agents(&order, self.cfg.threads, |i| ctx.run(i, &agents[i]))
                };
                for (i, r) in results {
                    let (node, violation) = r?;
                    if let Some(j) = violation {
                        self.violations += 1;
                        return Err(GneError::LocalityViolation { agent: i, block: j });
                    }
                    self.agents[i] = node;
                }
                Ok(())
            }
            Phase::Coord => {
                let Some(sched) = self.cfg.schedule else { return Ok(()) };
                if sched.beta(self.round) == 0.0 {
                    return Ok(());
                }
                let spec = self.spec.clone();
                match self.coordinator.as_mut() {
                    Some(c) => {
                        let blocks: Vec<Vec<f64>> = self.agents.iter().map(|a| a.out.clone()).collect();
                        let grads = c.gradients(&spec, &blocks);
                        for (i, g) in grads.into_iter().enumerate() {
                            self.log_coordinator(Node::Agent(i), Node::Coordinator, blocks[i].len());
                            self.log_coordinator(Node::Coordinator, Node::Agent(i), g.len());
                            self.agents[i].grad = g;
                        }
                    }
                    None => {
                        let order = self.order();
                        let phi = self.phi.as_ref().expect("schedule implies phi");
                        let layout = spec.layout();
                        for i in order {
                            let a = &mut self.agents[i];
                            let (ni, m) = (a.x.len(), spec.m());
                            let mut g = vec![0.0; ni + 2 * m];
                            let ok = phi.agent_gradient(layout, i, &a.out[..ni], &a.out[ni..ni + m], &a.out[ni + m..], &mut g);
                            debug_assert!(ok);
                            a.grad = g;
                        }
                    }
                }
                Ok(())
            }
            Phase::Hsdm => {
                let beta = self.cfg.schedule.map_or(0.0, |s| s.beta(self.round));
                let m = self.spec.m();
                for a in &mut self.agents {
                    let mut next = a.out.clone();
                    if beta != 0.0 {
                        for (v, g) in next.iter_mut().zip(&a.grad) {
                            *v -= beta * g;
                        }
                    }
                    let ni = a.x.len();
                    a.x.copy_from_slice(&next[..ni]);
                    a.lambda.copy_from_slice(&next[ni..ni + m]);
                    a.nu.copy_from_slice(&next[ni + m..]);
                }
                Ok(())
            }
        }
    }

    /// One outer iteration: both exchanges, both local steps, the coordinator and the HSDM step.
    pub fn outer_iteration(&mut self) -> Result<()> {
        self.round += 1;
        let before = self.counts.clone();
        for phase in PHASES {
            self.run_round(phase)?;
        }
        self.per_round.push(MessageCounts {
            agent: self.counts.agent - before.agent,
            coordinator: self.counts.coordinator - before.coordinator,
            bytes: self.counts.bytes - before.bytes,
            exchange_phases: self.counts.exchange_phases - before.exchange_phases,
        });
        Ok(())
    }
}

fn run_agents<T: Send>(order: &[usize], threads: usize, f: impl Fn(usize) -> T + Sync) -> Vec<(usize, T)> {
    let mut out: Vec<(usize, T)> = if threads <= 1 || order.len() < 2 {
        order.iter().map(|&i| (i, f(i))).collect()
    } else {
        let chunk = order.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = order
                .chunks(chunk)
                .map(|c| {
                    let f = &f;
                    s.spawn(move || c.iter().map(|&i| (i, f(i))).collect::<Vec<_>>())
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("agent thread panicked")).collect()
        })
    };
    out.sort_by_key(|p| p.0);
    out
}

struct LocalCtx<'a> {
    spec: &'a GameSpec,
    steps: &'a StepSizes,
    zeros: &'a [f64],
    phase: Phase,
}

impl LocalCtx<'_> {
    fn view<'b>(&'b self, i: usize, x: &'b [f64], lambda: &'b [f64], nu: &'b [f64], recv: &'b Received) -> LocalView<'b> {
        LocalView { own: i, x, lambda, nu, recv, zeros: self.zeros, violation: Cell::new(None) }
    }

    fn run(&self, i: usize, node: &AgentNode) -> Result<(AgentNode, Option<usize>)> {
        let mut a = node.clone();
        let violation = match (self.steps.mode, self.phase) {
            (StepMode::Fbf, Phase::Local1) => self.fbf_first(i, &mut a)?,
            (StepMode::Fbf, _) => self.fbf_second(i, &mut a)?,
            (StepMode::Pfb, Phase::Local1) => self.pfb_first(i, &mut a)?,
            (StepMode::Pfb, _) => self.pfb_second(i, &mut a)?,
        };
        Ok((a, violation))
    }

    /// ω̃_i = J_A(ω_i − Ψ_i⁻¹(ℬ+𝒞)_i(ω))
    fn fbf_first(&self, i: usize, a: &mut AgentNode) -> Result<Option<usize>> {
        let spec = self.spec;
        let (ni, m) = (a.x.len(), spec.m());
        let mut bc = vec![0.0; ni + 2 * m];
        let view = self.view(i, &a.x, &a.lambda, &a.nu, &a.recv);
        bc_block(spec, i, &view, &mut bc);
        let violation = view.violation.get();
        let (rho, tau, sig) = (self.steps.rho[i], self.steps.tau[i], self.steps.sigma[i]);
        let v: Vec<f64> = a.x.iter().zip(&bc[..ni]).map(|(x, b)| x - rho * b).collect();
        let mut mid = vec![0.0; ni + 2 * m];
        let ag = spec.agent(i);
        prox(i, &ag.set, &ag.ell, &v, rho, &mut mid[..ni])?;
        for k in 0..m {
            mid[ni + k] = (a.lambda[k] - tau * bc[ni + k]).max(0.0);
            mid[ni + m + k] = a.nu[k] - sig * bc[ni + m + k];
        }
        a.bc = bc;
        a.mid = mid;
        Ok(violation)
    }

    /// T(ω)_i = ω̃_i − Ψ_i⁻¹((ℬ+𝒞)_i(ω̃) − (ℬ+𝒞)_i(ω))
    fn fbf_second(&self, i: usize, a: &mut AgentNode) -> Result<Option<usize>> {
        let spec = self.spec;
        let (ni, m) = (a.x.len(), spec.m());
        let mut bt = vec![0.0; ni + 2 * m];
        let view = self.view(i, &a.mid[..ni], &a.mid[ni..ni + m], &a.mid[ni + m..], &a.recv);
        bc_block(spec, i, &view, &mut bt);
        let violation = view.violation.get();
        let mut out = a.mid.clone();
        for k in 0..out.len() {
            let s = if k < ni {
                self.steps.rho[i]
            } else if k < ni + m {
                self.steps.tau[i]
            } else {
                self.steps.sigma[i]
            };
            out[k] -= s * (bt[k] - a.bc[k]);
        }
        a.out = out;
        Ok(violation)
    }

    /// x⁺_i and ν⁺_i; λ_i is kept until the ν⁺ exchange.
    fn pfb_first(&self, i: usize, a: &mut AgentNode) -> Result<Option<usize>> {
        let spec = self.spec;
        let (ni, m) = (a.x.len(), spec.m());
        let ag = spec.agent(i);
        let view = self.view(i, &a.x, &a.lambda, &a.nu, &a.recv);
        let mut buf = vec![0.0; ni];
        spec.pseudogradient_block(i, &PrimalOf(&view), &mut buf);
        linalg::csr_tmul_add(ag.g.linear_part(), &a.lambda, &mut buf);
        let v: Vec<f64> = a.x.iter().zip(&buf).map(|(x, g)| x - self.steps.rho[i] * g).collect();
        let mut mid = vec![0.0; ni + 2 * m];
        mid[..ni].copy_from_slice(&a.x);
        prox(i, &ag.set, &ag.ell, &v, self.steps.rho[i], &mut mid[..ni])?;
        let mut ll = vec![0.0; m];
        spec.graph().laplacian_block(i, |j| view.lambda(j), &mut ll);
        mid[ni..ni + m].copy_from_slice(&a.lambda);
        mid[ni + m..].copy_from_slice(&a.nu);
        for (t, l) in mid[ni + m..].iter_mut().zip(&ll) {
            *t -= self.steps.sigma[i] * l;
        }
        let violation = view.violation.get();
        a.mid = mid;
        Ok(violation)
    }

    /// λ⁺_i from the reflected x, the neighbours' ν⁺ and the start-of-round ν and λ.
    fn pfb_second(&self, i: usize, a: &mut AgentNode) -> Result<Option<usize>> {
        let spec = self.spec;
        let (ni, m) = (a.x.len(), spec.m());
        let ag = spec.agent(i);
        let refl: Vec<f64> = a.mid[..ni].iter().zip(&a.x).map(|(p, x)| 2.0 * p - x).collect();
        let mut r = vec![0.0; m];
        linalg::csr_mul_add(ag.g.linear_part(), &refl, &mut r);

        let old_nu = Received { x: HashMap::new(), lambda: a.recv.lambda.clone(), nu: a.prev_nu.clone() };
        let old = self.view(i, &a.x, &a.lambda, &a.nu, &old_nu);
        let new = self.view(i, &a.mid[..ni], &a.mid[ni..ni + m], &a.mid[ni + m..], &a.recv);
        let mut ll = vec![0.0; m];
        spec.graph().laplacian_block(i, |j| old.lambda(j), &mut ll);
        let mut lnu_new = vec![0.0; m];
        spec.graph().laplacian_block(i, |j| new.nu(j), &mut lnu_new);
        let mut lnu_old = vec![0.0; m];
        spec.graph().laplacian_block(i, |j| old.nu(j), &mut lnu_old);
        let b = ag.g.offset();
        let mut out = a.mid.clone();
        for k in 0..m {
            let step = r[k] - b[k] + 2.0 * lnu_new[k] - lnu_old[k] - ll[k];
            out[ni + k] = (a.lambda[k] + self.steps.tau[i] * step).max(0.0);
        }
        a.out = out;
        Ok(old.violation.get().or(new.violation.get()))
    }
}

/// Closed-form block-message count of one outer iteration (agent-to-agent plus coordinator).
pub fn expected_messages(spec: &GameSpec, mode: StepMode, coordinator: bool) -> MessageCounts {
    let n = spec.n_agents();
    let full: usize = (0..n).map(|i| spec.cost_neighbors(i).len() + 2 * spec.graph().degree(i)).sum();
    let nu_only: usize = (0..n).map(|i| spec.graph().degree(i)).sum();
    let agent = match mode {
        StepMode::Fbf => 2 * full,
        StepMode::Pfb => full + nu_only,
    };
    MessageCounts {
        agent,
        coordinator: if coordinator { 2 * n } else { 0 },
        bytes: 0,
        exchange_phases: 2,
    }
}

/// Exchange rounds per iteration in units of one full (x, λ, ν) neighbour exchange.
pub fn full_round_equivalents(spec: &GameSpec, mode: StepMode) -> f64 {
    let n = spec.n_agents();
    let full: usize = (0..n).map(|i| spec.cost_neighbors(i).len() + 2 * spec.graph().degree(i)).sum();
    if full == 0 {
        return 0.0;
    }
    expected_messages(spec, mode, false).agent as f64 / full as f64
}

/// Run `iters` outer iterations through the network and through the monolithic operator
/// with the same HSDM schedule; returns the largest state deviation seen.
pub fn equivalence_check(
    spec: Arc<GameSpec>,
    steps: &StepSizes,
    w: &JointState,
    iters: usize,
    schedule: Option<BetaSchedule>,
) -> Result<f64> {
    let cfg = NetConfig { schedule, ..NetConfig::default() };
    let mut net = Network::new(spec.clone(), steps.clone(), w, cfg)?;
    let phi = schedule.and(spec.selection());
    let mut mono = w.clone();
    let mut grad = vec![0.0; w.layout().len()];
    let mut worst: f64 = 0.0;
    for k in 1..=iters {
        net.outer_iteration()?;
        let mut t = match steps.mode {
            StepMode::Fbf => t_fbf(&spec, steps, &mono)?.0,
            StepMode::Pfb => t_pfb(&spec, steps, &mono)?,
        };
        if let (Some(s), Some(phi)) = (schedule, phi) {
            let beta = s.beta(k);
            if beta != 0.0 {
                phi.gradient(t.as_slice(), &mut grad);
                for (v, g) in t.as_mut_slice().iter_mut().zip(&grad) {
                    *v -= beta * g;
                }
            }
        }
        mono = t;
        let dev = net
            .state()
            .as_slice()
            .iter()
            .zip(mono.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(dev);
    }
    Ok(worst)
}
