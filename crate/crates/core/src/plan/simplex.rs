//! Dense two-phase simplex over exact rationals with Bland's rule.
//!
//! Problems are `maximize c·x` subject to linear rows and `x ≥ 0`.

use num_traits::{Signed, Zero};

use super::rational::Rational;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<Rational>,
    pub rel: Relation,
    pub rhs: Rational,
}

impl Constraint {
    pub fn new(coeffs: Vec<Rational>, rel: Relation, rhs: Rational) -> Self {
        Self { coeffs, rel, rhs }
    }
}

#[derive(Debug, Clone)]
pub struct Lp {
    pub n_vars: usize,
    pub objective: Vec<Rational>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: Rational, x: Vec<Rational> },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(self) -> Option<(Rational, Vec<Rational>)> {
        match self {
            Self::Optimal { value, x } => Some((value, x)),
            _ => None,
        }
    }
}

struct Tableau {
    rows: Vec<Vec<Rational>>,
    rhs: Vec<Rational>,
    basis: Vec<usize>,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let inv = self.rows[row][col].recip();
        for v in self.rows[row].iter_mut() {
            if !v.is_zero() {
                *v *= &inv;
            }
        }
        self.rhs[row] *= &inv;
        let pivot_row = self.rows[row].clone();
        let pivot_rhs = self.rhs[row].clone();
        for r in 0..self.rows.len() {
            if r == row || self.rows[r][col].is_zero() {
                continue;
            }
            let factor = self.rows[r][col].clone();
            for (k, pv) in pivot_row.iter().enumerate() {
                if !pv.is_zero() {
                    let delta = &factor * pv;
                    self.rows[r][k] -= delta;
                }
            }
            let delta = &factor * &pivot_rhs;
            self.rhs[r] -= delta;
        }
        self.basis[row] = col;
    }

    fn reduced_costs(&self, cost: &[Rational]) -> Vec<Rational> {
        let mut d = cost.to_vec();
        for (i, &b) in self.basis.iter().enumerate() {
            if cost[b].is_zero() {
                continue;
            }
            for (j, v) in self.rows[i].iter().enumerate() {
                if !v.is_zero() {
                    d[j] -= &cost[b] * v;
                }
            }
        }
        d
    }

    /// Returns false when the objective is unbounded over allowed columns.
    fn optimize(&mut self, cost: &[Rational], allowed: &[bool]) -> bool {
        loop {
            let d = self.reduced_costs(cost);
            let Some(col) = (0..d.len()).find(|&j| allowed[j] && d[j].is_positive()) else {
                return true;
            };
            let mut best: Option<(usize, Rational)> = None;
            for r in 0..self.rows.len() {
                let a = &self.rows[r][col];
                if !a.is_positive() {
                    continue;
                }
                let ratio = &self.rhs[r] / a;
                let better = match &best {
                    None => true,
                    Some((br, bv)) => {
                        ratio < *bv || (ratio == *bv && self.basis[r] < self.basis[*br])
                    }
                };
                if better {
                    best = Some((r, ratio));
                }
            }
            match best {
                Some((row, _)) => self.pivot(row, col),
                None => return false,
            }
        }
    }

    fn objective_value(&self, cost: &[Rational]) -> Rational {
        self.basis
            .iter()
            .zip(&self.rhs)
            .fold(Rational::zero(), |acc, (&b, v)| acc + &cost[b] * v)
    }
}

pub fn maximize(lp: &Lp) -> LpOutcome {
    let n = lp.n_vars;
    let m = lp.constraints.len();
    let mut normalized: Vec<(Vec<Rational>, Relation, Rational)> = Vec::with_capacity(m);
    for c in &lp.constraints {
        assert_eq!(c.coeffs.len(), n, "constraint width mismatch");
        if c.rhs.is_negative() {
            let rel = match c.rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
            normalized.push((c.coeffs.iter().map(|x| -x).collect(), rel, -&c.rhs));
        } else {
            normalized.push((c.coeffs.clone(), c.rel, c.rhs.clone()));
        }
    }
    let n_slack = normalized.iter().filter(|c| c.1 != Relation::Eq).count();
    let n_art = normalized.iter().filter(|c| c.1 != Relation::Le).count();
    let width = n + n_slack + n_art;
    let art_start = n + n_slack;

    let mut tab = Tableau {
        rows: Vec::with_capacity(m),
        rhs: Vec::with_capacity(m),
        basis: Vec::with_capacity(m),
    };
    let (mut s, mut a) = (n, art_start);
    for (coeffs, rel, rhs) in normalized {
        let mut row = coeffs;
        row.resize(width, Rational::zero());
        match rel {
            Relation::Le => {
                row[s] = Rational::from_integer(1.into());
                tab.basis.push(s);
                s += 1;
            }
            Relation::Ge => {
                row[s] = Rational::from_integer((-1).into());
                row[a] = Rational::from_integer(1.into());
                tab.basis.push(a);
                s += 1;
                a += 1;
            }
            Relation::Eq => {
                row[a] = Rational::from_integer(1.into());
                tab.basis.push(a);
                a += 1;
            }
        }
        tab.rows.push(row);
        tab.rhs.push(rhs);
    }

    if n_art > 0 {
        let mut phase1 = vec![Rational::zero(); width];
        for c in phase1.iter_mut().skip(art_start) {
            *c = Rational::from_integer((-1).into());
        }
        let allowed = vec![true; width];
        tab.optimize(&phase1, &allowed);
        if tab.objective_value(&phase1).is_negative() {
            return LpOutcome::Infeasible;
        }
        // Drive zero-level artificials out of the basis; drop redundant rows.
        let mut r = 0;
        while r < tab.rows.len() {
            if tab.basis[r] >= art_start {
                match (0..art_start).find(|&j| !tab.rows[r][j].is_zero()) {
                    Some(j) => {
                        tab.pivot(r, j);
                        r += 1;
                    }
                    None => {
                        tab.rows.remove(r);
                        tab.rhs.remove(r);
                        tab.basis.remove(r);
                    }
                }
            } else {
                r += 1;
            }
        }
    }

    let mut cost = lp.objective.clone();
    assert_eq!(cost.len(), n, "objective width mismatch");
    cost.resize(width, Rational::zero());
    let allowed: Vec<bool> = (0..width).map(|j| j < art_start).collect();
    if !tab.optimize(&cost, &allowed) {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![Rational::zero(); n];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.rhs[i].clone();
        }
    }
    LpOutcome::Optimal {
        value: tab.objective_value(&cost),
        x,
    }
}
