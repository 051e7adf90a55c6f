//! Linear programs over photon-number-resolved yields.
//!
//! Variables are the yields `s[m][n]` (and error-yields `t[m][n]`) for
//! `m, n ≤ cutoff`, plus one slack per row absorbing the photon-number tail
//! beyond the cutoff. Every row is an interval constraint
//! `low ≤ Σ w[m][n]·s[m][n] + tail ≤ high`.
//!
//! Gains span many orders of magnitude (dark-count floors near 1e-14 next to
//! signal gains near 1e-3), so every variable is rescaled to `[0, 1]` by its
//! largest feasible value and every row by its upper end before the problem
//! reaches the simplex solver.

use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};

use crate::error::{Error, Result};

/// One interval constraint on a weighted sum of yields.
#[derive(Debug, Clone)]
pub struct Row {
    /// Row-major `(cutoff+1)²` weights.
    pub weights: Vec<f64>,
    /// Upper bound on the tail contribution.
    pub tail_cap: f64,
    pub low: f64,
    pub high: f64,
}

/// Gain rows constrain the yields `s`; error rows constrain the
/// error-yields `t ≤ s`.
#[derive(Debug, Clone)]
pub struct YieldProgram {
    pub cutoff: usize,
    pub gain_rows: Vec<Row>,
    pub error_rows: Vec<Row>,
}

impl YieldProgram {
    fn dim(&self) -> usize {
        self.cutoff + 1
    }

    fn cells(&self) -> usize {
        self.dim() * self.dim()
    }

    fn target(&self) -> usize {
        self.dim() + 1
    }

    /// Largest value each cell can take given the upper ends of `rows` and
    /// an absolute cap.
    fn scales(&self, rows: &[Row], cap: &[f64]) -> Vec<f64> {
        (0..self.cells())
            .map(|k| {
                rows.iter()
                    .filter(|r| r.weights[k] > 0.0)
                    .map(|r| r.high / r.weights[k])
                    .fold(cap[k], f64::min)
                    .max(0.0)
            })
            .collect()
    }

    /// Minimum of `s[1][1]` over the yields consistent with the gain rows.
    pub fn min_s11(&self) -> Result<f64> {
        let cells = self.cells();
        let s_scale = self.scales(&self.gain_rows, &vec![1.0; cells]);
        let target = self.target();
        if s_scale[target] == 0.0 {
            self.check_zero_feasible(&self.gain_rows)?;
            return Ok(0.0);
        }

        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let s_vars = add_cells(&mut lp, &s_scale, Some(target));
        let tails = add_tails(&mut lp, &self.gain_rows, None);
        for (row, tail) in self.gain_rows.iter().zip(&tails) {
            add_interval(&mut lp, row, &s_vars, &s_scale, *tail)?;
        }
        let sol = solve(&lp)?;
        let u = sol.var_value(s_vars[target].expect("target variable"));
        Ok((u * s_scale[target]).max(0.0))
    }

    /// Maximum of `t[1][1]` over yields and error-yields consistent with all
    /// rows and with `t ≤ s` cell by cell.
    pub fn max_t11(&self) -> Result<f64> {
        let cells = self.cells();
        let s_scale = self.scales(&self.gain_rows, &vec![1.0; cells]);
        let t_scale = self.scales(&self.error_rows, &s_scale);
        let target = self.target();
        if t_scale[target] == 0.0 {
            return Ok(0.0);
        }

        let mut lp = Problem::new(OptimizationDirection::Maximize);
        let s_vars = add_cells(&mut lp, &s_scale, None);
        let t_vars = add_cells(&mut lp, &t_scale, Some(target));
        let s_tails = add_tails(&mut lp, &self.gain_rows, None);
        let t_tails = add_tails(&mut lp, &self.error_rows, Some(&self.gain_rows));
        for (row, tail) in self.gain_rows.iter().zip(&s_tails) {
            add_interval(&mut lp, row, &s_vars, &s_scale, *tail)?;
        }
        for (row, tail) in self.error_rows.iter().zip(&t_tails) {
            add_interval(&mut lp, row, &t_vars, &t_scale, *tail)?;
        }
        for k in 0..cells {
            if let (Some(t), Some(s)) = (t_vars[k], s_vars[k]) {
                // t_scale ≤ s_scale by construction.
                lp.add_constraint(
                    [(t, t_scale[k] / s_scale[k]), (s, -1.0)],
                    ComparisonOp::Le,
                    0.0,
                );
            }
        }
        for (ts, tt) in s_tails.iter().zip(&t_tails) {
            if let (Some((sv, ss)), Some((tv, tsc))) = (ts, tt) {
                lp.add_constraint([(*tv, *tsc / *ss), (*sv, -1.0)], ComparisonOp::Le, 0.0);
            }
        }
        let sol = solve(&lp)?;
        let u = sol.var_value(t_vars[target].expect("target variable"));
        Ok((u * t_scale[target]).max(0.0))
    }

    /// Errors unless some yields reproduce `rows`.
    fn check_zero_feasible(&self, rows: &[Row]) -> Result<()> {
        if rows.iter().all(|r| r.high == 0.0) {
            if rows.iter().any(|r| r.low > 0.0) {
                return Err(Error::Inconsistent(
                    "positive gain with zero upper bound".into(),
                ));
            }
            return Ok(());
        }
        let s_scale = self.scales(rows, &vec![1.0; self.cells()]);
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let vars = add_cells(&mut lp, &s_scale, None);
        let tails = add_tails(&mut lp, rows, None);
        for (row, tail) in rows.iter().zip(&tails) {
            add_interval(&mut lp, row, &vars, &s_scale, *tail)?;
        }
        solve(&lp).map(|_| ())
    }
}

fn add_cells(lp: &mut Problem, scale: &[f64], objective: Option<usize>) -> Vec<Option<Variable>> {
    scale
        .iter()
        .enumerate()
        .map(|(k, &sc)| {
            (sc > 0.0).then(|| {
                let c = if Some(k) == objective { 1.0 } else { 0.0 };
                lp.add_var(c, (0.0, 1.0))
            })
        })
        .collect()
}

/// One tail slack per row, scaled by its cap. When `outer` is given, the cap
/// is also limited by the matching row's cap there.
fn add_tails(
    lp: &mut Problem,
    rows: &[Row],
    outer: Option<&[Row]>,
) -> Vec<Option<(Variable, f64)>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let mut cap = r.tail_cap.min(r.high);
            if let Some(o) = outer {
                cap = cap.min(o[i].tail_cap.min(o[i].high));
            }
            (cap > 0.0).then(|| (lp.add_var(0.0, (0.0, 1.0)), cap))
        })
        .collect()
}

fn add_interval(
    lp: &mut Problem,
    row: &Row,
    vars: &[Option<Variable>],
    scale: &[f64],
    tail: Option<(Variable, f64)>,
) -> Result<()> {
    if row.high <= 0.0 {
        if row.low > 0.0 {
            return Err(Error::Inconsistent("interval with low > high".into()));
        }
        // Every weighted cell already has zero scale.
        return Ok(());
    }
    let norm = row.high;
    let mut terms: Vec<(Variable, f64)> = vars
        .iter()
        .zip(&row.weights)
        .zip(scale)
        .filter_map(|((v, &w), &sc)| match v {
            Some(v) if w > 0.0 => Some((*v, w * sc / norm)),
            _ => None,
        })
        .collect();
    if let Some((v, cap)) = tail {
        terms.push((v, cap / norm));
    }
    if terms.is_empty() {
        if row.low > 0.0 {
            return Err(Error::Inconsistent(
                "positive gain required but no yield can produce it".into(),
            ));
        }
        return Ok(());
    }
    lp.add_constraint(terms.as_slice(), ComparisonOp::Le, 1.0);
    if row.low > 0.0 {
        lp.add_constraint(terms.as_slice(), ComparisonOp::Ge, row.low / norm);
    }
    Ok(())
}

fn solve(lp: &Problem) -> Result<microlp::Solution> {
    match lp.solve() {
        Ok(outcome) => {
            let sol = outcome
                .into_solution()
                .map_err(|e| Error::Solver(format!("{e:?}")))?;
            if !matches!(sol.status(), microlp::SolutionStatus::Optimal) {
                return Err(Error::Solver(format!(
                    "not proven optimal: {:?}",
                    sol.status()
                )));
            }
            Ok(sol)
        }
        Err(microlp::Error::Infeasible) => Err(Error::Inconsistent(
            "no photon-number yields reproduce the observed gains".into(),
        )),
        Err(e) => Err(Error::Solver(e.to_string())),
    }
}
