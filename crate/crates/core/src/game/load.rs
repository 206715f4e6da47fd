//! JSON game files.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;
use serde_json::Value;

use super::{
    AgentSpec, BoxSet, CommGraph, ConstraintForm, CostForm, GameOptions, GameSpec, Layout, ProxForm,
    QuadraticCost, SelectionFunction, SelectionRow, SetForm,
};
use crate::error::{GneError, Result};
use crate::linalg;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GameFile {
    agents: Vec<AgentFile>,
    #[serde(default)]
    graph: Option<GraphFile>,
    m: usize,
    #[serde(default)]
    pseudogradient: Option<PseudogradientFile>,
    #[serde(default)]
    selection: Option<Value>,
    #[serde(default)]
    slater_point: Option<Vec<f64>>,
    #[serde(default)]
    cocoercivity: Option<f64>,
    #[serde(default)]
    lipschitz_f: Option<f64>,
    #[serde(default)]
    lipschitz_b: Option<f64>,
    #[serde(default)]
    dual_bound: Option<f64>,
    #[serde(default)]
    name: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PseudogradientFile {
    #[serde(rename = "M")]
    mat: Vec<Vec<f64>>,
    #[serde(default)]
    c: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    edges: Vec<[usize; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentFile {
    dim: usize,
    #[serde(default)]
    cost: Option<CostFile>,
    #[serde(default)]
    ell: Option<EllFile>,
    #[serde(rename = "box")]
    bounds: BoxFile,
    #[serde(default)]
    g: Option<GFile>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum CostFile {
    Zero,
    /// Agent's row-block of M over the full primal vector, plus its linear term.
    Quadratic {
        #[serde(rename = "M")]
        mat: Vec<Vec<f64>>,
        #[serde(default)]
        c: Option<Vec<f64>>,
    },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum EllFile {
    Zero,
    L1 { weights: Vec<f64> },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxFile {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GFile {
    kind: String,
    #[serde(rename = "A", default)]
    a_upper: Option<Vec<Vec<f64>>>,
    #[serde(rename = "a", default)]
    a_lower: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    b: Option<Vec<f64>>,
    #[serde(rename = "D", default)]
    d: Option<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum SelectionFile {
    Projection {
        x_ref: Vec<f64>,
        #[serde(default)]
        weight: Option<f64>,
        #[serde(default)]
        dual_weight: Option<f64>,
    },
    Quadratic {
        #[serde(rename = "Q")]
        q: Vec<Vec<f64>>,
        #[serde(rename = "ref", default)]
        target: Option<Vec<f64>>,
        #[serde(rename = "W", default)]
        w: Option<Vec<f64>>,
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default)]
        lipschitz: Option<f64>,
    },
    Sparse {
        rows: Vec<SparseRowFile>,
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default)]
        lipschitz: Option<f64>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SparseRowFile {
    idx: Vec<usize>,
    coef: Vec<f64>,
    #[serde(rename = "ref", default)]
    target: f64,
    #[serde(default = "one")]
    weight: f64,
}

fn one() -> f64 {
    1.0
}

pub fn load_game(path: impl AsRef<Path>) -> Result<GameSpec> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let v: Value = serde_json::from_str(&text)?;
    parse_game(&v)
}

fn dense(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(GneError::Parse(format!("{what}: expected a {nrows} x {ncols} matrix")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

pub fn parse_game(v: &Value) -> Result<GameSpec> {
    let mut v = v.clone();
    if let Some(obj) = v.as_object_mut() {
        // scenario files carry a timeline next to the base game
        obj.remove("timeline");
    }
    let file: GameFile = serde_json::from_value(v)?;
    let _ = file.name;
    let m = file.m;
    let dims: Vec<usize> = file.agents.iter().map(|a| a.dim).collect();
    let layout = Layout::new(dims, m);
    let n = layout.n();

    let global = match &file.pseudogradient {
        Some(pg) => {
            let mat = dense(&pg.mat, n, n, "pseudogradient.M")?;
            let c = pg.c.clone().unwrap_or_else(|| vec![0.0; n]);
            if c.len() != n {
                return Err(GneError::Parse("pseudogradient.c has the wrong length".into()));
            }
            Some((mat, c))
        }
        None => None,
    };

    let mut agents = Vec::with_capacity(file.agents.len());
    for (i, a) in file.agents.iter().enumerate() {
        let who = |s: &str| format!("agent {}: {s}", i + 1);
        let r = layout.x_range(i);
        let bounds = BoxSet::new(a.bounds.lo.clone(), a.bounds.hi.clone())?;
        if bounds.dim() != a.dim {
            return Err(GneError::Parse(who("box dimension differs from dim")));
        }
        let cost = match (&a.cost, &global) {
            (Some(_), Some(_)) => {
                return Err(GneError::Parse(who("cost given both per agent and globally")));
            }
            (Some(CostFile::Quadratic { mat, c }), None) => {
                let rows = dense(mat, a.dim, n, &who("cost.M"))?;
                let c = c.clone().unwrap_or_else(|| vec![0.0; a.dim]);
                CostForm::Quadratic(QuadraticCost::from_dense_rows(&rows, c, &layout))
            }
            (Some(CostFile::Zero), None) | (None, None) => {
                CostForm::Quadratic(QuadraticCost { blocks: Vec::new(), c: vec![0.0; a.dim] })
            }
            (None, Some((mat, c))) => {
                let rows = mat.rows(r.start, r.len()).into_owned();
                CostForm::Quadratic(QuadraticCost::from_dense_rows(&rows, c[r.clone()].to_vec(), &layout))
            }
        };
        let ell = match &a.ell {
            None | Some(EllFile::Zero) => ProxForm::Zero,
            Some(EllFile::L1 { weights }) => ProxForm::L1 { weights: weights.clone() },
            Some(EllFile::Box { lo, hi }) => ProxForm::IndicatorBox(BoxSet::new(lo.clone(), hi.clone())?),
        };
        let g = match &a.g {
            None => {
                if m > 0 {
                    ConstraintForm::Affine {
                        a: nalgebra_sparse::CsrMatrix::zeros(m, a.dim),
                        b: vec![0.0; m],
                    }
                } else {
                    ConstraintForm::empty(a.dim)
                }
            }
            Some(gf) => {
                let amat = gf.a_upper.as_ref().or(gf.a_lower.as_ref());
                let amat = match amat {
                    Some(rows) => dense(rows, m, a.dim, &who("g.A"))?,
                    None => DMatrix::zeros(m, a.dim),
                };
                let b = gf.b.clone().unwrap_or_else(|| vec![0.0; m]);
                if b.len() != m {
                    return Err(GneError::Parse(who("g.b must have m entries")));
                }
                match gf.kind.as_str() {
                    "affine" => ConstraintForm::Affine { a: linalg::csr_from_dense(&amat), b },
                    "quad" => {
                        let d = match &gf.d {
                            Some(rows) => dense(rows, m, a.dim, &who("g.D"))?,
                            None => DMatrix::zeros(m, a.dim),
                        };
                        ConstraintForm::Quad { d, a: linalg::csr_from_dense(&amat), b }
                    }
                    other => return Err(GneError::Parse(who(&format!("unknown constraint kind '{other}'")))),
                }
            }
        };
        agents.push(AgentSpec {
            id: i,
            dim: a.dim,
            cost,
            ell,
            set: SetForm::Box(bounds),
            g,
        });
    }

    let n_agents = agents.len();
    let edges: Vec<(usize, usize)> = match &file.graph {
        Some(g) => {
            let mut e = Vec::with_capacity(g.edges.len());
            for [a, b] in &g.edges {
                if *a == 0 || *b == 0 {
                    return Err(GneError::Parse("graph edges are 1-based".into()));
                }
                e.push((a - 1, b - 1));
            }
            e
        }
        None => Vec::new(),
    };
    let graph = CommGraph::new(n_agents, &edges)?;
    let selection = match file.selection {
        Some(s) => Some(parse_selection(s, &layout)?),
        None => None,
    };
    let options = GameOptions {
        slater_point: file.slater_point,
        cocoercivity: file.cocoercivity,
        lipschitz_f: file.lipschitz_f,
        lipschitz_b: file.lipschitz_b,
        dual_bound: file.dual_bound,
    };
    GameSpec::new(agents, m, graph, selection, options)
}

pub(crate) fn parse_selection(v: Value, layout: &Layout) -> Result<SelectionFunction> {
    let s: SelectionFile = serde_json::from_value(v)?;
    match s {
        SelectionFile::Projection { x_ref, weight, dual_weight } => {
            SelectionFunction::projection(layout, &x_ref, weight.unwrap_or(1.0), dual_weight.unwrap_or(0.0))
        }
        SelectionFile::Quadratic { q, target, w, sigma, lipschitz } => {
            let len = layout.len();
            let rows_n = q.len();
            let qm = dense(&q, rows_n, len, "selection.Q")?;
            let target = target.unwrap_or_else(|| vec![0.0; rows_n]);
            let w = w.unwrap_or_else(|| vec![1.0; rows_n]);
            if target.len() != rows_n || w.len() != rows_n {
                return Err(GneError::Parse("selection ref/W must have one entry per row of Q".into()));
            }
            let rows = (0..rows_n)
                .map(|r| {
                    let (idx, coef): (Vec<usize>, Vec<f64>) =
                        (0..len).filter(|&c| qm[(r, c)] != 0.0).map(|c| (c, qm[(r, c)])).unzip();
                    SelectionRow { idx, coef, target: target[r], weight: w[r] }
                })
                .collect();
            SelectionFunction::quadratic(rows, layout, sigma, lipschitz)
        }
        SelectionFile::Sparse { rows, sigma, lipschitz } => {
            let mut out = Vec::with_capacity(rows.len());
            for r in rows {
                if r.idx.iter().any(|&k| k == 0) {
                    return Err(GneError::Parse("selection row indices are 1-based".into()));
                }
                out.push(SelectionRow {
                    idx: r.idx.iter().map(|k| k - 1).collect(),
                    coef: r.coef,
                    target: r.target,
                    weight: r.weight,
                });
            }
            SelectionFunction::quadratic(out, layout, sigma, lipschitz)
        }
    }
}
