//! Dense two-phase simplex for small equality-form linear programs.
//!
//! Only used for hull-membership questions on a handful of variables, so the
//! tableau is kept dense and pivoting follows Bland's rule to rule out cycling.

const PIVOT_EPS: f64 = 1e-11;
const FEASIBILITY_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    objective: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.width]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        let f = self.objective[c];
        if f != 0.0 {
            for (v, pv) in self.objective.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
        }
        self.basis[r] = c;
    }

    /// Runs simplex iterations over columns `< allowed`. Returns false when unbounded.
    fn optimize(&mut self, allowed: usize) -> bool {
        loop {
            let entering = (0..allowed).find(|&j| self.objective[j] < -PIVOT_EPS);
            let Some(c) = entering else {
                return true;
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][c];
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i) / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - PIVOT_EPS
                                || ((ratio - br).abs() <= PIVOT_EPS && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match best {
                Some((r, _)) => self.pivot(r, c),
                None => return false,
            }
        }
    }
}

/// Minimizes `c·x` subject to `a x = b`, `x ≥ 0`.
pub(crate) fn minimize(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> LpOutcome {
    let m = a.len();
    let n = c.len();
    let width = n + m;

    let mut rows = Vec::with_capacity(m);
    for (i, row) in a.iter().enumerate() {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        let mut t = vec![0.0; width + 1];
        for (j, v) in row.iter().enumerate() {
            t[j] = sign * v;
        }
        t[n + i] = 1.0;
        t[width] = sign * b[i];
        rows.push(t);
    }

    // phase one: minimize the sum of artificials
    let mut objective = vec![0.0; width + 1];
    for row in &rows {
        for j in 0..n {
            objective[j] -= row[j];
        }
        objective[width] -= row[width];
    }
    let mut tab = Tableau {
        rows,
        objective,
        basis: (n..n + m).collect(),
        width,
    };
    tab.optimize(width);
    if -tab.objective[width] > FEASIBILITY_EPS {
        return LpOutcome::Infeasible;
    }

    // drive artificials out of the basis; drop redundant rows
    let mut i = 0;
    while i < tab.rows.len() {
        if tab.basis[i] >= n {
            match (0..n).find(|&j| tab.rows[i][j].abs() > PIVOT_EPS) {
                Some(j) => tab.pivot(i, j),
                None => {
                    tab.rows.remove(i);
                    tab.basis.remove(i);
                    continue;
                }
            }
        }
        i += 1;
    }

    // phase two
    let mut objective = vec![0.0; width + 1];
    objective[..n].copy_from_slice(c);
    for (i, &bi) in tab.basis.iter().enumerate() {
        let cb = if bi < n { c[bi] } else { 0.0 };
        if cb != 0.0 {
            for (v, rv) in objective.iter_mut().zip(&tab.rows[i]) {
                *v -= cb * rv;
            }
        }
    }
    tab.objective = objective;
    if !tab.optimize(n) {
        return LpOutcome::Unbounded;
    }

    let mut x = vec![0.0; n];
    for (i, &bi) in tab.basis.iter().enumerate() {
        if bi < n {
            x[bi] = tab.rhs(i).max(0.0);
        }
    }
    let value = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    LpOutcome::Optimal { x, value }
}
