use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ValueError;

pub const MAX_DEGREE: u32 = 6;

/// Monomial basis Υ(x) with every term of total degree ≥ 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub n: usize,
    pub degree: u32,
    /// Exponent multi-index per term, each of length `n`.
    pub terms: Vec<Vec<u32>>,
}

fn compositions(n: usize, total: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if prefix.len() == n - 1 {
        prefix.push(total);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for e in (0..=total).rev() {
        prefix.push(e);
        compositions(n, total - e, prefix, out);
        prefix.pop();
    }
}

impl BasisSpec {
    /// All monomials with total degree in `2..=degree`, graded, and within a
    /// degree ordered by descending exponent of x₁, then x₂, ….
    pub fn monomials(n: usize, degree: u32) -> Result<Self, ValueError> {
        if n == 0 || !(2..=MAX_DEGREE).contains(&degree) {
            return Err(ValueError::InvalidBasis(format!(
                "need n ≥ 1 and degree in 2..={MAX_DEGREE}, got n = {n}, degree = {degree}"
            )));
        }
        let mut terms = Vec::new();
        for d in 2..=degree {
            compositions(n, d, &mut Vec::with_capacity(n), &mut terms);
        }
        Ok(Self { n, degree, terms })
    }

    pub fn from_terms(n: usize, terms: Vec<Vec<u32>>) -> Result<Self, ValueError> {
        let mut seen = std::collections::HashSet::new();
        let mut degree = 0;
        for t in &terms {
            let d: u32 = t.iter().sum();
            if t.len() != n || d < 2 || d > MAX_DEGREE {
                return Err(ValueError::InvalidBasis(format!("bad term {t:?}")));
            }
            if !seen.insert(t.clone()) {
                return Err(ValueError::InvalidBasis(format!("duplicate term {t:?}")));
            }
            degree = degree.max(d);
        }
        if terms.is_empty() {
            return Err(ValueError::InvalidBasis("empty basis".into()));
        }
        Ok(Self { n, degree, terms })
    }

    pub fn count(&self) -> usize {
        self.terms.len()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(&self.terms) {
            *o = t.iter().zip(x).map(|(&e, &xi)| xi.powi(e as i32)).product();
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.count()];
        self.eval_into(x, &mut out);
        out
    }

    /// Wᵀ Υ(x).
    pub fn value(&self, w: &[f64], x: &[f64]) -> f64 {
        self.terms
            .iter()
            .zip(w)
            .map(|(t, wi)| wi * t.iter().zip(x).map(|(&e, &xi)| xi.powi(e as i32)).product::<f64>())
            .sum()
    }

    /// ∇(WᵀΥ)(x) written into `grad`; does not allocate.
    pub fn gradient_into(&self, w: &[f64], x: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
        for (t, &wt) in self.terms.iter().zip(w) {
            if wt == 0.0 {
                continue;
            }
            for i in 0..self.n {
                if t[i] == 0 {
                    continue;
                }
                let mut d = wt * t[i] as f64;
                for (j, (&e, &xj)) in t.iter().zip(x).enumerate() {
                    let p = if j == i { e - 1 } else { e };
                    d *= xj.powi(p as i32);
                }
                grad[i] += d;
            }
        }
    }

    /// ∇²(WᵀΥ)(x).
    pub fn hessian(&self, w: &[f64], x: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let mut h = DMatrix::zeros(n, n);
        let mut e = vec![0u32; n];
        for (t, &wt) in self.terms.iter().zip(w) {
            for i in 0..n {
                for k in i..n {
                    e.copy_from_slice(t);
                    let mut c = wt;
                    for idx in [i, k] {
                        if e[idx] == 0 {
                            c = 0.0;
                            break;
                        }
                        c *= e[idx] as f64;
                        e[idx] -= 1;
                    }
                    if c == 0.0 {
                        continue;
                    }
                    let v: f64 = c * e.iter().zip(x).map(|(&p, &xj)| xj.powi(p as i32)).product::<f64>();
                    h[(i, k)] += v;
                    if i != k {
                        h[(k, i)] += v;
                    }
                }
            }
        }
        h
    }
}
