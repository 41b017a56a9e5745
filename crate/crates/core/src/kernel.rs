//! Coagulation kernels.
//!
//! A kernel `K(l, m)` is the merge rate of a particle of mass `l` with one of
//! mass `m`. Every kernel here is symmetric, nonnegative, bounded and vanishes
//! when either argument is zero (an empty site never merges).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::KernelError;

/// Default mass ceiling for the memoized kernel table.
pub const DEFAULT_MEMO_CEILING: usize = 256;

/// Declarative kernel description, as it appears in run configurations.
///
/// Serialized with an inline `kind` tag, e.g. `{ kind = "constant", c = 1.0 }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelDecl {
    /// `K(l, m) = c`.
    Constant { c: f64 },
    /// `min(c0 (l^{1/3} + m^{1/3}) (l^{-1/3} + m^{-1/3}), cap)`.
    CappedBrownian { c0: f64, cap: f64 },
    /// Dense square table indexed from mass 1; pairs outside the table use
    /// `default`. `table[l - 1][m - 1] = K(l, m)`.
    LookupTable { table: Vec<Vec<f64>>, default: f64 },
}

impl KernelDecl {
    pub fn constant(c: f64) -> Self {
        KernelDecl::Constant { c }
    }

    pub fn capped_brownian(c0: f64, cap: f64) -> Self {
        KernelDecl::CappedBrownian { c0, cap }
    }

    fn raw(&self, l: u64, m: u64) -> f64 {
        if l == 0 || m == 0 {
            return 0.0;
        }
        match self {
            KernelDecl::Constant { c } => *c,
            KernelDecl::CappedBrownian { c0, cap } => {
                let a = (l as f64).cbrt();
                let b = (m as f64).cbrt();
                (c0 * (a + b) * (1.0 / a + 1.0 / b)).min(*cap)
            }
            KernelDecl::LookupTable { table, default } => {
                let size = table.len() as u64;
                if l <= size && m <= size {
                    table[(l - 1) as usize][(m - 1) as usize]
                } else {
                    *default
                }
            }
        }
    }
}

/// A validated, immutable kernel with a memoized value table.
///
/// Cloning is cheap: the memo table is shared.
#[derive(Clone, Debug)]
pub struct Kernel {
    decl: KernelDecl,
    sup_norm: f64,
    ceiling: usize,
    memo: Arc<Vec<f64>>,
}

impl Kernel {
    pub fn new(decl: KernelDecl) -> Result<Self, KernelError> {
        Self::with_memo_ceiling(decl, DEFAULT_MEMO_CEILING)
    }

    pub fn constant(c: f64) -> Result<Self, KernelError> {
        Self::new(KernelDecl::constant(c))
    }

    pub fn capped_brownian(c0: f64, cap: f64) -> Result<Self, KernelError> {
        Self::new(KernelDecl::capped_brownian(c0, cap))
    }

    /// Builds a kernel whose values are precomputed for masses up to
    /// `ceiling`. Larger masses are evaluated on demand.
    pub fn with_memo_ceiling(decl: KernelDecl, ceiling: usize) -> Result<Self, KernelError> {
        let sup_norm = validate(&decl)?;
        let width = ceiling + 1;
        let mut memo = vec![0.0; width * width];
        for l in 1..width {
            for m in l..width {
                let v = decl.raw(l as u64, m as u64);
                memo[l * width + m] = v;
                memo[m * width + l] = v;
            }
        }
        Ok(Kernel {
            decl,
            sup_norm,
            ceiling,
            memo: Arc::new(memo),
        })
    }

    pub fn decl(&self) -> &KernelDecl {
        &self.decl
    }

    #[inline]
    pub fn evaluate(&self, l: u64, m: u64) -> f64 {
        let c = self.ceiling as u64;
        if l <= c && m <= c {
            self.memo[l as usize * (self.ceiling + 1) + m as usize]
        } else {
            self.decl.raw(l, m)
        }
    }

    /// `‖K‖∞` over all of `ℕ × ℕ`.
    ///
    /// The uncapped Brownian form grows without bound in the mass ratio, so
    /// for the capped variant the supremum is always the cap.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    /// Supremum of `K(l, m)` over pairs with `l + m <= total_mass`, i.e. over
    /// every pair that can meet in a system of total mass `total_mass`.
    /// Never exceeds [`Kernel::sup_norm`].
    pub fn sup_norm_within(&self, total_mass: u64) -> f64 {
        if total_mass < 2 {
            return 0.0;
        }
        match &self.decl {
            KernelDecl::Constant { c } => *c,
            KernelDecl::CappedBrownian { c0, cap } => {
                // Depends only on the ratio r = m / l and increases with it;
                // the largest ratio available is total_mass - 1.
                let r = ((total_mass - 1) as f64).cbrt();
                (c0 * (2.0 + r + 1.0 / r)).min(*cap)
            }
            KernelDecl::LookupTable { table, default } => {
                let size = table.len() as u64;
                let mut best: f64 = 0.0;
                for l in 1..=size.min(total_mass - 1) {
                    for m in 1..=size.min(total_mass - l) {
                        best = best.max(table[(l - 1) as usize][(m - 1) as usize]);
                    }
                }
                if total_mass > size + 1 {
                    best = best.max(*default);
                }
                best
            }
        }
    }

    /// True when the kernel is identically zero.
    pub fn is_zero(&self) -> bool {
        self.sup_norm == 0.0
    }
}

fn check_param(name: &'static str, v: f64) -> Result<(), KernelError> {
    if !v.is_finite() {
        return Err(KernelError::NonFinite { name });
    }
    if v < 0.0 {
        return Err(KernelError::Negative { name, value: v });
    }
    Ok(())
}

fn validate(decl: &KernelDecl) -> Result<f64, KernelError> {
    match decl {
        KernelDecl::Constant { c } => {
            check_param("c", *c)?;
            Ok(*c)
        }
        KernelDecl::CappedBrownian { c0, cap } => {
            check_param("c0", *c0)?;
            check_param("cap", *cap)?;
            // c0 = 0 makes the kernel identically zero.
            Ok(if *c0 == 0.0 { 0.0 } else { *cap })
        }
        KernelDecl::LookupTable { table, default } => {
            check_param("default", *default)?;
            let size = table.len();
            let mut sup = *default;
            for (i, row) in table.iter().enumerate() {
                if row.len() != size {
                    return Err(KernelError::NotSquare {
                        row: i + 1,
                        len: row.len(),
                        expected: size,
                    });
                }
                for (j, &v) in row.iter().enumerate() {
                    check_param("table entry", v)?;
                    if v != table[j][i] {
                        return Err(KernelError::Asymmetric { l: i + 1, m: j + 1 });
                    }
                    sup = sup.max(v);
                }
            }
            Ok(sup)
        }
    }
}
