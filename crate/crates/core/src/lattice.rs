//! Path-count coefficients `c^n(i, j)`.
//!
//! `c^n(i, j)` counts lattice paths `s_0 = i, s_1, ..., s_n = j` on the
//! positive integers where each step may go down by at most one
//! (`s_{t+1} >= s_t - 1`). They appear as the entries of powers of the
//! lower-Hessenberg block of the k-limited absorbing chain.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("c^{n}({i},{j}) overflows 128-bit integers")]
    Overflow { n: usize, i: usize, j: usize },
    #[error("power must be at least 1")]
    ZeroPower,
}

/// Table of `c^n(i, j)` for `1 <= i <= i_max`, `1 <= j <= width`.
#[derive(Debug, Clone, PartialEq)]
pub struct CTable<T> {
    pub n: usize,
    pub i_max: usize,
    pub width: usize,
    values: Vec<T>,
}

impl<T: Copy + Default> CTable<T> {
    /// Entry `c^n(i, j)`; zero outside the stored range.
    pub fn get(&self, i: usize, j: usize) -> T {
        if i == 0 || j == 0 || i > self.i_max || j > self.width {
            return T::default();
        }
        self.values[(i - 1) * self.width + (j - 1)]
    }

    /// Row `i` as a slice indexed by `j - 1`.
    pub fn row(&self, i: usize) -> &[T] {
        &self.values[(i - 1) * self.width..i * self.width]
    }
}

impl CTable<u128> {
    pub fn to_f64(&self) -> CTable<f64> {
        CTable {
            n: self.n,
            i_max: self.i_max,
            width: self.width,
            values: self.values.iter().map(|&v| v as f64).collect(),
        }
    }
}

fn base_case(i: usize, j: usize) -> bool {
    i == 1 || j + 1 >= i
}

/// Exact table by the prefix-sum recurrence `c^n(i,j) = sum_{l=1}^{j+1} c^{n-1}(i,l)`.
pub fn c_recurrence(n: usize, i_max: usize, width: usize) -> Result<CTable<u128>, LatticeError> {
    if n == 0 {
        return Err(LatticeError::ZeroPower);
    }
    // Level m needs columns up to width + (n - m).
    let full = width + n - 1;
    let mut values = Vec::with_capacity(i_max * width);
    for i in 1..=i_max {
        let mut row: Vec<u128> = (1..=full).map(|j| base_case(i, j) as u128).collect();
        for level in 2..=n {
            let len = width + n - level;
            let mut next = Vec::with_capacity(len);
            let mut acc: u128 = row[0];
            for j in 1..=len {
                acc = acc
                    .checked_add(row[j])
                    .ok_or(LatticeError::Overflow { n: level, i, j })?;
                next.push(acc);
            }
            row = next;
        }
        values.extend_from_slice(&row[..width]);
    }
    Ok(CTable {
        n,
        i_max,
        width,
        values,
    })
}

/// Floating-point table by the same recurrence with compensated prefix sums.
/// Used when exact entries exceed 128 bits.
pub fn c_recurrence_f64(n: usize, i_max: usize, width: usize) -> Result<CTable<f64>, LatticeError> {
    if n == 0 {
        return Err(LatticeError::ZeroPower);
    }
    let full = width + n - 1;
    let mut values = Vec::with_capacity(i_max * width);
    for i in 1..=i_max {
        let mut row: Vec<f64> = (1..=full).map(|j| base_case(i, j) as u8 as f64).collect();
        for level in 2..=n {
            let len = width + n - level;
            let mut next = Vec::with_capacity(len);
            let (mut sum, mut comp) = (row[0], 0.0);
            for &v in &row[1..=len] {
                let t = sum + v;
                comp += if sum.abs() >= v.abs() {
                    (sum - t) + v
                } else {
                    (v - t) + sum
                };
                sum = t;
                next.push(sum + comp);
            }
            row = next;
        }
        values.extend_from_slice(&row[..width]);
    }
    Ok(CTable {
        n,
        i_max,
        width,
        values,
    })
}

/// `c^n` as floats: exact integers converted when they fit, compensated
/// floating-point recurrence otherwise.
pub fn c_table_f64(n: usize, i_max: usize, width: usize) -> Result<CTable<f64>, LatticeError> {
    match c_recurrence(n, i_max, width) {
        Ok(t) => Ok(t.to_f64()),
        Err(LatticeError::Overflow { .. }) => c_recurrence_f64(n, i_max, width),
        Err(e) => Err(e),
    }
}

/// Binomial coefficient, zero when `k > n`.
pub fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for t in 0..k {
        // acc * (n - t) / (t + 1) stays integral at every step.
        acc = acc.checked_mul((n - t) as u128)? / (t as u128 + 1);
    }
    Some(acc)
}

fn binom_signed(a: isize, b: isize) -> u128 {
    if a < 0 || b < 0 || b > a {
        return 0;
    }
    binomial(a as usize, b as usize).expect("closed form within u128 range")
}

/// Binomial closed form of `c^n(i, j)`.
///
/// For `i > n` the entry is `C(n + j - (i - n) - 1, n - 1)` when `j >= i - n`
/// and zero for `j < i - n`.
pub fn c_closed_form(n: usize, i: usize, j: usize) -> u128 {
    if n == 0 || i == 0 || j == 0 {
        return 0;
    }
    if n == 1 {
        return base_case(i, j) as u128;
    }
    let (n_, i_, j_) = (n as isize, i as isize, j as isize);
    if i == 1 {
        binom_signed(2 * n_ + j_ - 2, n_ - 1) - binom_signed(2 * n_ + j_ - 2, n_ + j_)
    } else if i < n {
        binom_signed(2 * n_ + j_ - i_ - 1, n_ - 1) - binom_signed(2 * n_ + j_ - i_ - 1, n_ + j_)
    } else if i == n {
        binom_signed(n_ + j_ - 1, n_ - 1)
    } else {
        let shift = i_ - n_;
        if j_ >= shift {
            binom_signed(n_ + j_ - shift - 1, n_ - 1)
        } else {
            0
        }
    }
}

/// Counts paths by dynamic programming over an explicit level graph with
/// states `1..=graph_bound` and edges `s -> s'` for `s' >= s - 1`.
pub fn c_bruteforce(n: usize, i: usize, j: usize, graph_bound: usize) -> u128 {
    if i == 0 || j == 0 || i > graph_bound || j > graph_bound {
        return 0;
    }
    let mut level = vec![0u128; graph_bound + 1];
    level[i] = 1;
    for _ in 0..n {
        let mut next = vec![0u128; graph_bound + 1];
        for (s, &count) in level.iter().enumerate().skip(1) {
            if count == 0 {
                continue;
            }
            for slot in next.iter_mut().skip(s.saturating_sub(1).max(1)) {
                *slot += count;
            }
        }
        level = next;
    }
    level[j]
}
