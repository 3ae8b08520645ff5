//! Generator EDMD with input-Kronecker dictionaries, and tensor-product
//! Legendre dictionaries.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jitter, symmetrized};
use crate::model::{augment_input, augment_state};

type BasisFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Ordered list of scalar observables, the constant first.
#[derive(Clone)]
pub struct Dictionary {
    dim_in: usize,
    domain: Vec<(f64, f64)>,
    names: Vec<String>,
    funcs: Vec<BasisFn>,
}

impl fmt::Debug for Dictionary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dictionary")
            .field("dim_in", &self.dim_in)
            .field("domain", &self.domain)
            .field("names", &self.names)
            .finish()
    }
}

impl Dictionary {
    /// Builds a dictionary from named functions. The first must be the
    /// constant one; this is checked at the center of the domain box.
    pub fn new(
        dim_in: usize,
        domain: Vec<(f64, f64)>,
        funcs: Vec<(String, BasisFn)>,
    ) -> Result<Self> {
        if domain.len() != dim_in {
            return Err(Error::Dimension {
                context: "dictionary domain",
                expected: dim_in,
                found: domain.len(),
            });
        }
        if domain
            .iter()
            .any(|(a, b)| a >= b || !a.is_finite() || !b.is_finite())
        {
            return Err(Error::InvalidInput("empty or non-finite domain box".into()));
        }
        let center: Vec<f64> = domain.iter().map(|(a, b)| 0.5 * (a + b)).collect();
        match funcs.first() {
            Some((_, f)) if f(&center) == 1.0 => {}
            _ => {
                return Err(Error::InvalidInput(
                    "first dictionary function must be the constant 1".into(),
                ))
            }
        }
        let (names, funcs) = funcs.into_iter().unzip();
        Ok(Dictionary {
            dim_in,
            domain,
            names,
            funcs,
        })
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn len(&self) -> usize {
        self.funcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.funcs.is_empty()
    }

    pub fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.funcs.len(), self.funcs.iter().map(|f| f(x)))
    }
}

/// Legendre polynomial `P_k(s)` by the three-term recurrence.
pub fn legendre(k: usize, s: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, s);
    if k == 0 {
        return p0;
    }
    for j in 1..k {
        let jf = j as f64;
        let p2 = ((2.0 * jf + 1.0) * s * p1 - jf * p0) / (jf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Tensor-product Legendre basis rescaled to `domain`, orthonormal with
/// respect to the uniform probability measure on the box.
///
/// Functions are ordered by total degree, then lexicographically by the
/// degree tuple, so the constant comes first.
pub fn legendre_dictionary(domain: &[(f64, f64)], degrees: &[usize]) -> Result<Dictionary> {
    if domain.len() != degrees.len() {
        return Err(Error::Dimension {
            context: "legendre degrees",
            expected: domain.len(),
            found: degrees.len(),
        });
    }
    let mut indices: Vec<Vec<usize>> = vec![Vec::new()];
    for &d in degrees {
        indices = indices
            .into_iter()
            .flat_map(|idx| {
                (0..=d).map(move |k| {
                    let mut v = idx.clone();
                    v.push(k);
                    v
                })
            })
            .collect();
    }
    indices.sort_by(|a, b| {
        let (sa, sb): (usize, usize) = (a.iter().sum(), b.iter().sum());
        sa.cmp(&sb).then_with(|| a.cmp(b))
    });
    let dom = domain.to_vec();
    let funcs = indices
        .into_iter()
        .map(|idx| {
            let name = format!("P{:?}", idx);
            let dom = dom.clone();
            let f: BasisFn = Arc::new(move |x: &[f64]| {
                idx.iter()
                    .zip(&dom)
                    .zip(x)
                    .map(|((&k, &(a, b)), &xi)| {
                        let s = (2.0 * xi - a - b) / (b - a);
                        ((2 * k + 1) as f64).sqrt() * legendre(k, s)
                    })
                    .product()
            });
            (name, f)
        })
        .collect();
    Dictionary::new(domain.len(), dom, funcs)
}

/// Snapshot matrices for generator EDMD: columns of `Ψ` are `u_l ⊗ (1, z_l)`
/// and columns of `Ψ̇` are `(z_{l+1} − z_l)/dt`.
pub fn lift_snapshots<'a, I, S>(
    inputs: I,
    states: S,
    dt: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)>
where
    I: IntoIterator<Item = &'a [DVector<f64>]>,
    S: IntoIterator<Item = &'a [DVector<f64>]>,
{
    let mut psi_cols = Vec::new();
    let mut dot_cols = Vec::new();
    for (us, zs) in inputs.into_iter().zip(states) {
        if zs.len() != us.len() + 1 {
            return Err(Error::Dimension {
                context: "states per trajectory",
                expected: us.len() + 1,
                found: zs.len(),
            });
        }
        for (l, u) in us.iter().enumerate() {
            let ua = augment_input(u);
            let za = augment_state(&zs[l]);
            psi_cols.push(ua.kronecker(&za));
            dot_cols.push((&zs[l + 1] - &zs[l]) / dt);
        }
    }
    if psi_cols.is_empty() {
        return Err(Error::InvalidInput("no transitions to fit".into()));
    }
    Ok((
        DMatrix::from_columns(&psi_cols),
        DMatrix::from_columns(&dot_cols),
    ))
}

/// Least-squares generator stack `(Ψ Ψᵀ)⁻¹ Ψ Ψ̇ᵀ`, with blocks `Ṽ_0, …, Ṽ_q`
/// stacked input-channel-major.
pub fn edmd_generator_fit(psi: &DMatrix<f64>, psi_dot: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if psi.ncols() != psi_dot.ncols() {
        return Err(Error::Dimension {
            context: "snapshot count",
            expected: psi.ncols(),
            found: psi_dot.ncols(),
        });
    }
    let n = psi_dot.nrows();
    if !psi.nrows().is_multiple_of(n + 1) {
        return Err(Error::Dimension {
            context: "lifted snapshot rows (multiple of n+1)",
            expected: n + 1,
            found: psi.nrows(),
        });
    }
    let gram = symmetrized(psi * psi.transpose());
    let chol = cholesky_jitter(&gram)
        .ok_or_else(|| Error::Identifiability("EDMD Gram matrix is rank deficient".into()))?;
    Ok(chol.solve(&(psi * psi_dot.transpose())))
}
