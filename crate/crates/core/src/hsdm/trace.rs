use std::io::Write;

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub k: usize,
    /// ‖T(ω) − ω‖ in the operator's norm
    pub residual: f64,
    /// φ at T(ω), the point returned as the solution
    pub phi: f64,
    pub coupling_viol: f64,
    pub dual_disagreement: f64,
    pub beta: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    #[default]
    MaxIter,
}

/// Append-only per-iteration log.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RunTrace {
    pub records: Vec<RunRecord>,
    pub stop: StopReason,
}

pub const TRACE_HEADER: &str = "k,residual,phi,coupling_viol,dual_disagreement,beta,wall_ms";

impl RunTrace {
    pub fn push(&mut self, r: RunRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&RunRecord> {
        self.records.last()
    }

    /// |φ_{k−window} − φ_k| ≤ tol at the latest record.
    pub fn phi_stalled(&self, window: usize, tol: f64) -> bool {
        let n = self.records.len();
        if n <= window {
            return false;
        }
        (self.records[n - 1 - window].phi - self.records[n - 1].phi).abs() <= tol
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.k, r.residual, r.phi, r.coupling_viol, r.dual_disagreement, r.beta, r.wall_ms
            )?;
        }
        Ok(())
    }
}
