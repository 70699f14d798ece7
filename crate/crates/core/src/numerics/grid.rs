use crate::error::{QsdError, Result};

/// Uniform time grid. Nodes sit at `t0 + k dt`; when `half_steps` is set the
/// midpoints `t0 + (k + 1/2) dt` are also sampled, giving `2 n_steps + 1`
/// half-grid points addressed by a half index `j` with time `t0 + j dt / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    dt: f64,
    n_steps: usize,
    half_steps: bool,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(QsdError::InvalidSpec(format!("dt must be positive, got {dt}")));
        }
        if n_steps == 0 {
            return Err(QsdError::InvalidSpec("grid needs at least one step".into()));
        }
        if !t0.is_finite() {
            return Err(QsdError::InvalidSpec("t0 must be finite".into()));
        }
        Ok(Self {
            t0,
            dt,
            n_steps,
            half_steps: true,
        })
    }

    /// Grid on `[0, t_max]`; `t_max / dt` is rounded to the nearest step count.
    pub fn span(t_max: f64, dt: f64) -> Result<Self> {
        if !(t_max > 0.0) {
            return Err(QsdError::InvalidSpec(format!("t_max must be positive, got {t_max}")));
        }
        if !(dt > 0.0) || dt > t_max {
            return Err(QsdError::InvalidSpec(format!(
                "dt must satisfy 0 < dt <= t_max, got dt = {dt}, t_max = {t_max}"
            )));
        }
        let n = (t_max / dt).round().max(1.0) as usize;
        Self::new(0.0, dt, n)
    }

    /// Same grid without midpoint samples.
    pub fn without_half_steps(mut self) -> Self {
        self.half_steps = false;
        self
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    pub fn has_half_steps(&self) -> bool {
        self.half_steps
    }
    pub fn t_max(&self) -> f64 {
        self.time(self.n_steps)
    }

    /// Number of full nodes, `n_steps + 1`.
    pub fn node_count(&self) -> usize {
        self.n_steps + 1
    }

    /// Number of sample points: `2 n_steps + 1` with half steps, else the node count.
    pub fn sample_count(&self) -> usize {
        if self.half_steps {
            2 * self.n_steps + 1
        } else {
            self.n_steps + 1
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn half_time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * 0.5 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.node_count()).map(|k| self.time(k)).collect()
    }

    pub fn half_times(&self) -> Vec<f64> {
        (0..2 * self.n_steps + 1).map(|j| self.half_time(j)).collect()
    }

    pub(crate) fn require_half_steps(&self) -> Result<()> {
        if self.half_steps {
            Ok(())
        } else {
            Err(QsdError::GridMismatch(
                "RK4 midpoint samples need a grid with half steps".into(),
            ))
        }
    }

    /// Checks that a series holds one value per half-grid sample.
    pub fn check_half_series(&self, len: usize, what: &str) -> Result<()> {
        let want = 2 * self.n_steps + 1;
        if len == want {
            Ok(())
        } else {
            Err(QsdError::GridMismatch(format!(
                "{what}: expected {want} half-grid samples, got {len}"
            )))
        }
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.n_steps == other.n_steps
            && self.half_steps == other.half_steps
            && (self.t0 - other.t0).abs() <= 1e-12 * (1.0 + self.t0.abs())
            && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }

    pub fn ensure_same(&self, other: &TimeGrid, what: &str) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(QsdError::GridMismatch(format!("{what}: {self:?} vs {other:?}")))
        }
    }
}
