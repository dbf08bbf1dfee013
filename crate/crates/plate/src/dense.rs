//! Small dense linear algebra used for local element solves and the
//! generalized eigenvalue estimates. Row-major storage throughout.

/// Dense row-major matrix.
#[derive(Debug, Clone)]
pub struct DMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DMat { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DenseError {
    Singular { pivot_row: usize },
    NotPositiveDefinite { row: usize },
    RankDeficient { column: usize },
    NoConvergence,
}

impl std::fmt::Display for DenseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DenseError::Singular { pivot_row } => write!(f, "singular matrix at pivot row {pivot_row}"),
            DenseError::NotPositiveDefinite { row } => {
                write!(f, "matrix not positive definite at row {row}")
            }
            DenseError::RankDeficient { column } => write!(f, "rank deficient at column {column}"),
            DenseError::NoConvergence => write!(f, "eigenvalue iteration did not converge"),
        }
    }
}

impl std::error::Error for DenseError {}

/// Solve A X = B in place by LU with partial pivoting. `b` holds `nrhs`
/// right-hand sides column-wise as a DMat (n x nrhs); the solution overwrites
/// `b`.
pub fn lu_solve(a: &DMat, b: &mut DMat) -> Result<(), DenseError> {
    assert_eq!(a.rows, a.cols);
    assert_eq!(a.rows, b.rows);
    let n = a.rows;
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut p = k;
        let mut max = lu.get(k, k).abs();
        for i in (k + 1)..n {
            let v = lu.get(i, k).abs();
            if v > max {
                max = v;
                p = i;
            }
        }
        if max == 0.0 {
            return Err(DenseError::Singular { pivot_row: k });
        }
        if p != k {
            for j in 0..n {
                let t = lu.get(k, j);
                lu.set(k, j, lu.get(p, j));
                lu.set(p, j, t);
            }
            perm.swap(k, p);
        }
        let piv = lu.get(k, k);
        for i in (k + 1)..n {
            let f = lu.get(i, k) / piv;
            lu.set(i, k, f);
            for j in (k + 1)..n {
                let v = lu.get(i, j) - f * lu.get(k, j);
                lu.set(i, j, v);
            }
        }
    }
    let nrhs = b.cols;
    let orig = b.clone();
    for r in 0..nrhs {
        // Apply permutation, then forward/back substitution.
        for i in 0..n {
            b.set(i, r, orig.get(perm[i], r));
        }
        for i in 0..n {
            let mut s = b.get(i, r);
            for j in 0..i {
                s -= lu.get(i, j) * b.get(j, r);
            }
            b.set(i, r, s);
        }
        for i in (0..n).rev() {
            let mut s = b.get(i, r);
            for j in (i + 1)..n {
                s -= lu.get(i, j) * b.get(j, r);
            }
            b.set(i, r, s / lu.get(i, i));
        }
    }
    Ok(())
}

/// Least-squares solution of the overdetermined system A X = B via Householder
/// QR (A is m x n with m >= n and full column rank). Returns X (n x nrhs).
pub fn qr_least_squares(a: &DMat, b: &DMat) -> Result<DMat, DenseError> {
    let m = a.rows;
    let n = a.cols;
    assert!(m >= n);
    assert_eq!(b.rows, m);
    let mut r = a.clone();
    let mut qtb = b.clone();
    for k in 0..n {
        // Householder vector for column k.
        let mut norm = 0.0;
        for i in k..m {
            norm += r.get(i, k) * r.get(i, k);
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            return Err(DenseError::RankDeficient { column: k });
        }
        let alpha = if r.get(k, k) >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; m - k];
        v[0] = r.get(k, k) - alpha;
        for i in (k + 1)..m {
            v[i - k] = r.get(i, k);
        }
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        if vtv == 0.0 {
            continue;
        }
        // Apply H = I - 2 v v^T / (v^T v) to R and Q^T B.
        for j in k..n {
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i - k] * r.get(i, j);
            }
            let f = 2.0 * dot / vtv;
            for i in k..m {
                let val = r.get(i, j) - f * v[i - k];
                r.set(i, j, val);
            }
        }
        for j in 0..qtb.cols {
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i - k] * qtb.get(i, j);
            }
            let f = 2.0 * dot / vtv;
            for i in k..m {
                let val = qtb.get(i, j) - f * v[i - k];
                qtb.set(i, j, val);
            }
        }
    }
    // Back substitution on the upper-triangular n x n block.
    let mut x = DMat::zeros(n, b.cols);
    for c in 0..b.cols {
        for i in (0..n).rev() {
            let mut s = qtb.get(i, c);
            for j in (i + 1)..n {
                s -= r.get(i, j) * x.get(j, c);
            }
            let d = r.get(i, i);
            if d.abs() < 1e-300 {
                return Err(DenseError::RankDeficient { column: i });
            }
            x.set(i, c, s / d);
        }
    }
    Ok(x)
}

/// Cholesky factorization A = L L^T of a symmetric positive definite matrix.
pub fn cholesky(a: &DMat) -> Result<DMat, DenseError> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut l = DMat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 {
                    return Err(DenseError::NotPositiveDefinite { row: i });
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method,
/// returned in ascending order.
pub fn sym_eigenvalues(a: &DMat) -> Result<Vec<f64>, DenseError> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut m = a.clone();
    // Symmetrize against roundoff in the input.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    let off = |m: &DMat| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m.get(i, j) * m.get(i, j);
                }
            }
        }
        s
    };
    let scale: f64 = (0..n).map(|i| m.get(i, i).abs()).fold(1e-300, f64::max);
    for _sweep in 0..100 {
        if off(&m).sqrt() <= 1e-14 * scale * n as f64 {
            let mut ev: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            return Ok(ev);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    Err(DenseError::NoConvergence)
}

/// Smallest eigenvalue of the symmetric pencil A x = lambda G x with G
/// symmetric positive definite: transform with the Cholesky factor of G and
/// solve the standard symmetric problem.
pub fn min_generalized_eigenvalue(a: &DMat, g: &DMat) -> Result<f64, DenseError> {
    let n = a.rows;
    let l = cholesky(g)?;
    // B = L^{-1} A L^{-T}.
    // First Y = L^{-1} A (forward substitution on columns of A).
    let mut y = a.clone();
    for c in 0..n {
        for i in 0..n {
            let mut s = y.get(i, c);
            for k in 0..i {
                s -= l.get(i, k) * y.get(k, c);
            }
            y.set(i, c, s / l.get(i, i));
        }
    }
    // B^T = L^{-1} Y^T, i.e. solve L B^T = Y^T.
    let mut bt = DMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            bt.set(i, j, y.get(j, i));
        }
    }
    for c in 0..n {
        for i in 0..n {
            let mut s = bt.get(i, c);
            for k in 0..i {
                s -= l.get(i, k) * bt.get(k, c);
            }
            bt.set(i, c, s / l.get(i, i));
        }
    }
    let ev = sym_eigenvalues(&bt)?;
    Ok(ev[0])
}
