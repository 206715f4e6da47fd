//! Game description: agents, local sets, coupling constraints, communication graph and
//! selection function, plus structural validation.

mod check;
mod constraint;
mod cost;
mod graph;
mod load;
mod residual;
mod selection;
mod sets;
mod state;

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use check::{
    cocoercivity_probe, cost_gradient_check, sample_state, selection_constants_check, selection_gradient_check, ProbeCheck,
    COORDINATE_CHECK_MAX,
};
pub use constraint::ConstraintForm;
pub use cost::{BlockSource, CostForm, CostOracle, QuadraticCost, StackedBlocks};
pub use graph::CommGraph;
pub use load::{load_game, parse_game};
pub use residual::{feasible_set_residual, kkt_residual, FeasibilityResidual};
pub use selection::{SelectionFunction, SelectionKind, SelectionOracle, SelectionRow};
pub use sets::{project_box_balance, prox, BalanceRow, BoxSet, ProjectionOracle, ProxForm, ProxOracle, SetForm};
pub use state::{JointState, Layout};

use crate::error::{GneError, Result};
use crate::linalg;

/// Dense monotonicity eigencheck is used up to this primal dimension; beyond it, a sampled probe.
const EIGEN_CHECK_MAX_DIM: usize = 400;

#[derive(Clone, Debug)]
pub struct AgentSpec {
    pub id: usize,
    pub dim: usize,
    pub cost: CostForm,
    pub ell: ProxForm,
    pub set: SetForm,
    pub g: ConstraintForm,
}

/// Optional metadata a game file may declare.
#[derive(Clone, Debug, Default, Serialize)]
pub struct GameOptions {
    pub slater_point: Option<Vec<f64>>,
    /// Cocoercivity modulus η of F (needed by pFB).
    pub cocoercivity: Option<f64>,
    pub lipschitz_f: Option<f64>,
    /// Declared Lipschitz constant of B + C (skips estimation).
    pub lipschitz_b: Option<f64>,
    /// Bound on ‖λ_i‖ used by the nonlinear-g Lipschitz estimate.
    pub dual_bound: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MonotonicityCheck {
    Eigen { min_eigenvalue: f64 },
    Probe { pairs: usize, worst_ratio: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub monotonicity: MonotonicityCheck,
    pub connected: bool,
    pub algebraic_connectivity: f64,
    pub slater: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct GameSpec {
    agents: Vec<AgentSpec>,
    graph: CommGraph,
    layout: Arc<Layout>,
    selection: Option<SelectionFunction>,
    options: GameOptions,
    deps: Vec<Vec<usize>>,
    report: AssumptionReport,
}

impl GameSpec {
    pub fn new(
        agents: Vec<AgentSpec>,
        m: usize,
        graph: CommGraph,
        selection: Option<SelectionFunction>,
        options: GameOptions,
    ) -> Result<Self> {
        if agents.is_empty() {
            return Err(GneError::validation("game", "no agents"));
        }
        let layout = Arc::new(Layout::new(agents.iter().map(|a| a.dim).collect(), m));
        for (i, a) in agents.iter().enumerate() {
            validate_agent(i, a, m, &layout)?;
        }
        if graph.n() != agents.len() {
            return Err(GneError::validation(
                "graph",
                format!("graph has {} nodes for {} agents", graph.n(), agents.len()),
            ));
        }
        if !graph.is_connected() {
            return Err(GneError::validation("connected graph", "graph not connected"));
        }
        let deps: Vec<Vec<usize>> = agents.iter().enumerate().map(|(i, a)| a.cost.dependencies(i)).collect();
        for (i, d) in deps.iter().enumerate() {
            for &j in d {
                if !graph.neighbors(i).contains(&j) {
                    return Err(GneError::validation(
                        "cost neighbours within communication neighbours",
                        format!("agent {} reads x_{} but they are not graph neighbours", i + 1, j + 1),
                    ));
                }
            }
        }
        let report = AssumptionReport {
            monotonicity: MonotonicityCheck::Probe { pairs: 0, worst_ratio: 0.0 },
            connected: true,
            algebraic_connectivity: graph.algebraic_connectivity(),
            slater: None,
            warnings: Vec::new(),
        };
        let mut spec = GameSpec {
            agents,
            graph,
            layout,
            selection,
            options,
            deps,
            report,
        };
        spec.report.monotonicity = spec.check_monotonicity()?;
        spec.check_slater()?;
        Ok(spec)
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn m(&self) -> usize {
        self.layout.m()
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &AgentSpec {
        &self.agents[i]
    }

    pub fn graph(&self) -> &CommGraph {
        &self.graph
    }

    pub fn selection(&self) -> Option<&SelectionFunction> {
        self.selection.as_ref()
    }

    pub fn options(&self) -> &GameOptions {
        &self.options
    }

    pub fn report(&self) -> &AssumptionReport {
        &self.report
    }

    /// N_i^J: agents whose decisions enter agent i's gradient.
    pub fn cost_neighbors(&self, i: usize) -> &[usize] {
        &self.deps[i]
    }

    pub fn with_selection(&self, selection: SelectionFunction) -> GameSpec {
        let mut s = self.clone();
        s.selection = Some(selection);
        s
    }

    pub fn is_affine(&self) -> bool {
        self.agents.iter().all(|a| a.g.is_affine())
    }

    pub fn is_quadratic(&self) -> bool {
        self.agents.iter().all(|a| matches!(a.cost, CostForm::Quadratic(_)))
    }

    /// ∇_{x_i} f_i
    pub fn pseudogradient_block(&self, i: usize, x: &dyn BlockSource, out: &mut [f64]) {
        self.agents[i].cost.gradient(x, out);
    }

    /// F(x)
    pub fn pseudogradient(&self, x: &[f64]) -> Vec<f64> {
        let src = StackedBlocks { x, layout: &self.layout };
        let mut out = vec![0.0; self.layout.n()];
        for i in 0..self.n_agents() {
            let r = self.layout.x_range(i);
            self.pseudogradient_block(i, &src, &mut out[r]);
        }
        out
    }

    /// Σ_j g_j(x_j)
    pub fn coupling(&self, x: &[f64]) -> Vec<f64> {
        let m = self.m();
        let mut sum = vec![0.0; m];
        let mut gi = vec![0.0; m];
        for (i, a) in self.agents.iter().enumerate() {
            a.g.eval(&x[self.layout.x_range(i)], &mut gi);
            for k in 0..m {
                sum[k] += gi[k];
            }
        }
        sum
    }

    /// x at local-set anchors, λ = 0, ν = 0.
    pub fn initial_state(&self) -> JointState {
        let mut s = JointState::zeros(self.layout.clone());
        for (i, a) in self.agents.iter().enumerate() {
            s.x_block_mut(i).copy_from_slice(&a.set.anchor());
        }
        s
    }

    /// Dense (M, c) with F(x) = Mx + c when every cost is quadratic.
    pub fn dense_pseudogradient(&self) -> Option<(DMatrix<f64>, Vec<f64>)> {
        let n = self.layout.n();
        let mut mat = DMatrix::zeros(n, n);
        let mut c = vec![0.0; n];
        for (i, a) in self.agents.iter().enumerate() {
            let CostForm::Quadratic(q) = &a.cost else {
                return None;
            };
            let ri = self.layout.x_range(i);
            c[ri.clone()].copy_from_slice(&q.c);
            for (j, blk) in &q.blocks {
                let rj = self.layout.x_range(*j);
                let d = linalg::csr_to_dense(blk);
                mat.view_mut((ri.start, rj.start), (ri.len(), rj.len())).copy_from(&d);
            }
        }
        Some((mat, c))
    }

    fn check_monotonicity(&self) -> Result<MonotonicityCheck> {
        let n = self.layout.n();
        if self.is_quadratic() && n <= EIGEN_CHECK_MAX_DIM {
            let (mat, _) = self.dense_pseudogradient().expect("quadratic");
            let (lo, hi, v) = linalg::sym_eig_extremes(&mat);
            if lo < -1e-10 * hi.abs().max(1.0) {
                let witness: Vec<String> = v.iter().map(|t| format!("{t:.6}")).collect();
                return Err(GneError::validation(
                    "monotone pseudogradient",
                    format!(
                        "sym(M) has eigenvalue {lo:e}; witness pair u = [{}], v = 0 gives <F(u)-F(v), u-v> = {lo:e}",
                        witness.join(", ")
                    ),
                ));
            }
            return Ok(MonotonicityCheck::Eigen { min_eigenvalue: lo });
        }
        let (pairs, worst, witness) = self.monotonicity_probe(1000, 0);
        if worst < -1e-10 {
            let (u, v) = witness;
            return Err(GneError::validation(
                "monotone pseudogradient",
                format!("probe ratio {worst:e} at u = {u:?}, v = {v:?}"),
            ));
        }
        Ok(MonotonicityCheck::Probe { pairs, worst_ratio: worst })
    }

    /// min over sampled pairs of ⟨F(u)−F(v), u−v⟩ / ‖u−v‖², with the worst pair.
    pub fn monotonicity_probe(&self, pairs: usize, seed: u64) -> (usize, f64, (Vec<f64>, Vec<f64>)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.layout.n();
        let mut worst = f64::INFINITY;
        let mut witness = (Vec::new(), Vec::new());
        let (lo, hi) = self.primal_bounds();
        for _ in 0..pairs {
            let mut sample = || -> Vec<f64> {
                (0..n)
                    .map(|k| {
                        let w = (hi[k] - lo[k]).max(1.0);
                        rng.gen_range(lo[k] - w..hi[k] + w)
                    })
                    .collect()
            };
            let u = sample();
            let v = sample();
            let fu = self.pseudogradient(&u);
            let fv = self.pseudogradient(&v);
            let d: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
            let num: f64 = fu.iter().zip(&fv).zip(&d).map(|((a, b), e)| (a - b) * e).sum();
            let r = num / linalg::dot(&d, &d).max(f64::MIN_POSITIVE);
            if r < worst {
                worst = r;
                witness = (u, v);
            }
        }
        (pairs, worst, witness)
    }

    /// Concatenated bounding boxes of the local sets.
    pub fn primal_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::with_capacity(self.layout.n());
        let mut hi = Vec::with_capacity(self.layout.n());
        for a in &self.agents {
            lo.extend_from_slice(&a.set.bounds().lo);
            hi.extend_from_slice(&a.set.bounds().hi);
        }
        (lo, hi)
    }

    fn check_slater(&mut self) -> Result<()> {
        let Some(p) = self.options.slater_point.clone() else {
            if self.m() > 0 {
                self.report
                    .warnings
                    .push("no Slater point supplied; constraint qualification not checked".into());
            }
            return Ok(());
        };
        if p.len() != self.layout.n() {
            return Err(GneError::DimensionMismatch {
                expected: self.layout.n(),
                got: p.len(),
            });
        }
        let res = feasible_set_residual(self, &p)?;
        let local = res.local.iter().copied().fold(0.0, f64::max);
        let slack = self.coupling(&p).into_iter().fold(f64::NEG_INFINITY, f64::max);
        if local > 1e-12 || slack >= 0.0 {
            return Err(GneError::validation(
                "Slater point",
                format!("supplied point has local violation {local:e} and max coupling value {slack:e} (must be < 0)"),
            ));
        }
        self.report.slater = Some(-slack);
        Ok(())
    }
}

fn validate_agent(i: usize, a: &AgentSpec, m: usize, layout: &Layout) -> Result<()> {
    let who = |s: &str| format!("agent {}: {s}", i + 1);
    if a.dim == 0 {
        return Err(GneError::validation("agent dimension", who("dim must be positive")));
    }
    if a.set.dim() != a.dim {
        return Err(GneError::validation("local set", who("box dimension differs from dim")));
    }
    if let SetForm::BoxBalance { bounds, rows } = &a.set {
        let mut used = vec![false; a.dim];
        for r in rows {
            let (mut lo, mut hi) = (0.0, 0.0);
            for &k in &r.idx {
                if k >= a.dim || used[k] {
                    return Err(GneError::validation("local set", who("balance rows must be disjoint and in range")));
                }
                used[k] = true;
                lo += bounds.lo[k];
                hi += bounds.hi[k];
            }
            if r.rhs < lo - 1e-12 || r.rhs > hi + 1e-12 {
                return Err(GneError::validation(
                    "nonempty local set",
                    who(&format!("balance {} outside [{lo}, {hi}]", r.rhs)),
                ));
            }
        }
    }
    match &a.ell {
        ProxForm::L1 { weights } => {
            if weights.len() != a.dim || weights.iter().any(|w| *w < 0.0) {
                return Err(GneError::validation("nonsmooth term", who("l1 weights must be nonnegative, one per coordinate")));
            }
            if !matches!(a.set, SetForm::Box(_)) {
                return Err(GneError::validation("nonsmooth term", who("l1 term needs a plain box set")));
            }
        }
        ProxForm::IndicatorBox(b) => {
            if b.dim() != a.dim {
                return Err(GneError::validation("nonsmooth term", who("indicator box dimension")));
            }
            a.set.bounds().intersect(b).map_err(|_| {
                GneError::validation("nonempty local set", who("indicator box does not meet the local box"))
            })?;
        }
        _ => {}
    }
    if a.g.m() != m || a.g.linear_part().nrows() != m || a.g.linear_part().ncols() != a.dim {
        return Err(GneError::validation(
            "coupling constraint",
            who(&format!("g must map R^{} to R^{m}", a.dim)),
        ));
    }
    if let ConstraintForm::Quad { d, .. } = &a.g {
        if d.nrows() != m || d.ncols() != a.dim || d.iter().any(|v| *v < 0.0) {
            return Err(GneError::validation("convex coupling constraint", who("D must be m x n_i and nonnegative")));
        }
    }
    if let CostForm::Quadratic(q) = &a.cost {
        if q.c.len() != a.dim {
            return Err(GneError::DimensionMismatch { expected: a.dim, got: q.c.len() });
        }
        for (j, blk) in &q.blocks {
            if *j >= layout.n_agents() || blk.nrows() != a.dim || blk.ncols() != layout.dim(*j) {
                return Err(GneError::validation("cost", who(&format!("block for agent {} has the wrong shape", j + 1))));
            }
        }
        if let Some(own) = q.block(i) {
            let d = linalg::csr_to_dense(own);
            let asym = (&d - d.transpose()).amax();
            if asym > 1e-12 * d.amax().max(1.0) {
                return Err(GneError::validation(
                    "pseudogradient of a cost",
                    who("own block M_ii must be symmetric"),
                ));
            }
        }
    }
    Ok(())
}
