//! Sparse symmetric LDLᵀ factorization with a fill-reducing ordering.
//!
//! The factorization is up-looking and never pivots, so it is meant for
//! positive definite or quasidefinite matrices. The pattern is analysed once
//! and the numeric factorization can be repeated with new values.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Symmetric matrix pattern in compressed columns, both triangles stored.
#[derive(Debug, Clone)]
pub(crate) struct SymPattern {
    pub n: usize,
    pub colptr: Vec<usize>,
    pub rowidx: Vec<usize>,
}

impl SymPattern {
    /// Build from `(i, j)` pairs; each pair is mirrored and duplicates merged.
    /// The diagonal is always present.
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cols: Vec<Vec<usize>> = (0..n).map(|j| vec![j]).collect();
        for (i, j) in pairs {
            cols[j].push(i);
            if i != j {
                cols[i].push(j);
            }
        }
        let mut colptr = Vec::with_capacity(n + 1);
        let mut rowidx = Vec::new();
        colptr.push(0);
        for mut c in cols {
            c.sort_unstable();
            c.dedup();
            rowidx.extend(c);
            colptr.push(rowidx.len());
        }
        Self { n, colptr, rowidx }
    }

    /// Storage position of entry `(i, j)`.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.colptr[j];
        let hi = self.colptr[j + 1];
        self.rowidx[lo..hi].binary_search(&i).ok().map(|k| lo + k)
    }

    pub fn nnz(&self) -> usize {
        self.rowidx.len()
    }
}

/// Minimum-degree ordering on the elimination graph. Nodes whose degree is
/// far above typical are held back and placed last.
pub(crate) fn minimum_degree(pat: &SymPattern) -> Vec<usize> {
    let n = pat.n;
    let dense_cut = 20 + (10.0 * (n as f64).sqrt()) as usize;
    let degree0 = |j: usize| pat.colptr[j + 1] - pat.colptr[j] - 1;
    let dense: Vec<bool> = (0..n).map(|j| degree0(j) > dense_cut).collect();

    let mut adj: Vec<Vec<usize>> = (0..n)
        .map(|j| {
            if dense[j] {
                return Vec::new();
            }
            pat.rowidx[pat.colptr[j]..pat.colptr[j + 1]]
                .iter()
                .copied()
                .filter(|&i| i != j && !dense[i])
                .collect()
        })
        .collect();
    let mut done = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..n)
        .filter(|&j| !dense[j])
        .map(|j| Reverse((adj[j].len(), j)))
        .collect();
    let mut order = Vec::with_capacity(n);
    let mut merged = Vec::new();
    while let Some(Reverse((deg, v))) = heap.pop() {
        if done[v] || deg != adj[v].len() {
            continue;
        }
        done[v] = true;
        order.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            // adj[u] := (adj[u] ∪ nbrs) \ {u, v}, both sorted
            merged.clear();
            let a = &adj[u];
            let (mut p, mut q) = (0, 0);
            while p < a.len() || q < nbrs.len() {
                let next = match (a.get(p), nbrs.get(q)) {
                    (Some(&x), Some(&y)) if x == y => {
                        p += 1;
                        q += 1;
                        x
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        p += 1;
                        x
                    }
                    (Some(_), Some(&y)) => {
                        q += 1;
                        y
                    }
                    (Some(&x), None) => {
                        p += 1;
                        x
                    }
                    (None, Some(&y)) => {
                        q += 1;
                        y
                    }
                    (None, None) => unreachable!(),
                };
                if next != u && next != v && !done[next] {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    let mut tail: Vec<usize> = (0..n).filter(|&j| dense[j]).collect();
    tail.sort_by_key(|&j| degree0(j));
    order.extend(tail);
    order
}

#[derive(Debug)]
pub(crate) struct ZeroPivot(pub usize);

/// Symbolic analysis plus storage for repeated numeric factorizations.
#[derive(Debug, Clone)]
pub(crate) struct Ldl {
    pub pattern: SymPattern,
    perm: Vec<usize>,
    pinv: Vec<usize>,
    parent: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

const NO_PARENT: usize = usize::MAX;

impl Ldl {
    pub fn analyse(pattern: SymPattern) -> Self {
        let n = pattern.n;
        let perm = minimum_degree(&pattern);
        let mut pinv = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            pinv[p] = k;
        }
        let mut parent = vec![NO_PARENT; n];
        let mut flag = vec![0usize; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            let kk = perm[k];
            for p in pattern.colptr[kk]..pattern.colptr[kk + 1] {
                let mut i = pinv[pattern.rowidx[p]];
                if i < k {
                    while flag[i] != k {
                        if parent[i] == NO_PARENT {
                            parent[i] = k;
                        }
                        lnz[i] += 1;
                        flag[i] = k;
                        i = parent[i];
                    }
                }
            }
        }
        let mut lp = vec![0; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        let total = lp[n];
        Self {
            pattern,
            perm,
            pinv,
            parent,
            lp,
            li: vec![0; total],
            lx: vec![0.0; total],
            d: vec![0.0; n],
        }
    }

    pub fn factor_nnz(&self) -> usize {
        self.lp[self.pattern.n]
    }

    /// Factor the matrix whose values are laid out like `pattern`.
    /// `fix_pivot(original_index, d)` may replace a tiny pivot.
    pub fn factor(
        &mut self,
        values: &[f64],
        mut fix_pivot: impl FnMut(usize, f64) -> f64,
    ) -> Result<(), ZeroPivot> {
        let n = self.pattern.n;
        let pat = &self.pattern;
        let mut y = vec![0.0; n];
        let mut flag = vec![0usize; n];
        let mut lnz = vec![0usize; n];
        let mut stack = vec![0usize; n];
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            let kk = self.perm[k];
            for p in pat.colptr[kk]..pat.colptr[kk + 1] {
                let mut i = self.pinv[pat.rowidx[p]];
                if i <= k {
                    y[i] += values[p];
                    let mut len = 0;
                    while flag[i] != k {
                        stack[len] = i;
                        len += 1;
                        flag[i] = k;
                        i = self.parent[i];
                    }
                    while len > 0 {
                        top -= 1;
                        len -= 1;
                        stack[top] = stack[len];
                    }
                }
            }
            let mut dk = y[k];
            y[k] = 0.0;
            for &i in &stack[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let p2 = self.lp[i] + lnz[i];
                for p in self.lp[i]..p2 {
                    y[self.li[p]] -= self.lx[p] * yi;
                }
                let l = yi / self.d[i];
                dk -= l * yi;
                self.li[p2] = k;
                self.lx[p2] = l;
                lnz[i] += 1;
            }
            dk = fix_pivot(kk, dk);
            if dk == 0.0 || !dk.is_finite() {
                return Err(ZeroPivot(kk));
            }
            self.d[k] = dk;
        }
        Ok(())
    }

    /// Solve in place with the last factorization.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.pattern.n;
        let mut x: Vec<f64> = (0..n).map(|k| b[self.perm[k]]).collect();
        for j in 0..n {
            let xj = x[j];
            for p in self.lp[j]..self.lp[j + 1] {
                x[self.li[p]] -= self.lx[p] * xj;
            }
        }
        for j in 0..n {
            x[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut s = x[j];
            for p in self.lp[j]..self.lp[j + 1] {
                s -= self.lx[p] * x[self.li[p]];
            }
            x[j] = s;
        }
        for k in 0..n {
            b[self.perm[k]] = x[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_mul(n: usize, pat: &SymPattern, vals: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for j in 0..n {
            for p in pat.colptr[j]..pat.colptr[j + 1] {
                out[pat.rowidx[p]] += vals[p] * x[j];
            }
        }
        out
    }

    #[test]
    fn tridiagonal_solve() {
        let n = 6;
        let pat = SymPattern::from_pairs(n, (1..n).map(|i| (i, i - 1)));
        let mut vals = vec![0.0; pat.nnz()];
        for j in 0..n {
            vals[pat.position(j, j).unwrap()] = 4.0;
            if j > 0 {
                vals[pat.position(j, j - 1).unwrap()] = -1.0;
                vals[pat.position(j - 1, j).unwrap()] = -1.0;
            }
        }
        let mut ldl = Ldl::analyse(pat.clone());
        ldl.factor(&vals, |_, d| d).unwrap();
        let x: Vec<f64> = (0..n).map(|i| i as f64 - 2.0).collect();
        let mut b = dense_mul(n, &pat, &vals, &x);
        ldl.solve(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn random_quasidefinite_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n1, n2) = (40, 15);
        let n = n1 + n2;
        let mut pairs = Vec::new();
        for _ in 0..120 {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            // no coupling inside the negative block
            if i >= n1 && j >= n1 {
                continue;
            }
            pairs.push((i, j));
        }
        let pat = SymPattern::from_pairs(n, pairs.clone());
        let mut vals = vec![0.0; pat.nnz()];
        for &(i, j) in &pairs {
            if i != j {
                let v: f64 = rng.random_range(-1.0..1.0);
                vals[pat.position(i, j).unwrap()] = v;
                vals[pat.position(j, i).unwrap()] = v;
            }
        }
        for j in 0..n {
            vals[pat.position(j, j).unwrap()] = if j < n1 { 10.0 } else { -10.0 };
        }
        let mut ldl = Ldl::analyse(pat.clone());
        ldl.factor(&vals, |_, d| d).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut b = dense_mul(n, &pat, &vals, &x);
        ldl.solve(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn ordering_is_a_permutation() {
        let pat = SymPattern::from_pairs(50, (0..49).map(|i| (i, 49)).chain((1..49).map(|i| (i, i - 1))));
        let mut ord = minimum_degree(&pat);
        ord.sort_unstable();
        assert_eq!(ord, (0..50).collect::<Vec<_>>());
    }
}
