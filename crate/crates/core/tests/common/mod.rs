//! Reference implementations used as test oracles. Deliberately naive: plain vectors,
//! Gauss-Jordan elimination, finite differences and projected gradient ascent.
#![allow(dead_code)]

use fmapg::TabularMdp;

pub type Rows = Vec<Vec<f64>>;

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &Rows) -> Rows {
    let n = a.len();
    let mut m: Rows = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        for x in m[col].iter_mut() {
            *x /= p;
        }
        for i in 0..n {
            if i != col {
                let f = m[i][col];
                if f != 0.0 {
                    for j in 0..2 * n {
                        m[i][j] -= f * m[col][j];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub struct OracleEval {
    pub v: Vec<f64>,
    pub q: Rows,
    pub d: Vec<f64>,
    pub ret: f64,
}

impl OracleEval {
    pub fn adv(&self, s: usize, a: usize) -> f64 {
        self.q[s][a] - self.v[s]
    }
}

/// Exact evaluation for an arbitrary (not necessarily normalised) action table.
pub fn evaluate(mdp: &TabularMdp, p: &Rows) -> OracleEval {
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.discount());
    let mut kernel = vec![vec![0.0; ns]; ns];
    let mut r_pi = vec![0.0; ns];
    for s in 0..ns {
        for a in 0..na {
            r_pi[s] += p[s][a] * mdp.rewards()[(s, a)];
            for (s2, t) in mdp.next_dist(s, a).iter().enumerate() {
                kernel[s][s2] += p[s][a] * t;
            }
        }
    }
    let system: Rows = (0..ns)
        .map(|i| (0..ns).map(|j| f64::from(u8::from(i == j)) - g * kernel[i][j]).collect())
        .collect();
    let inv = gauss_jordan_inverse(&system);
    let v: Vec<f64> = (0..ns).map(|i| (0..ns).map(|j| inv[i][j] * r_pi[j]).sum()).collect();
    let d0 = mdp.initial();
    // d = (I − γP_π)^{-T} d₀
    let d: Vec<f64> = (0..ns).map(|j| (0..ns).map(|i| inv[i][j] * d0[i]).sum()).collect();
    let q: Rows = (0..ns)
        .map(|s| {
            (0..na)
                .map(|a| {
                    mdp.rewards()[(s, a)]
                        + g * mdp.next_dist(s, a).iter().zip(&v).map(|(t, x)| t * x).sum::<f64>()
                })
                .collect()
        })
        .collect();
    let ret = (0..ns).map(|s| d0[s] * v[s]).sum();
    OracleEval { v, q, d, ret }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn softmax_rows(z: &Rows) -> Rows {
    z.iter().map(|r| softmax(r)).collect()
}

pub fn to_rows(t: &nalgebra::DMatrix<f64>) -> Rows {
    (0..t.nrows()).map(|i| t.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(r: &Rows) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(r.len(), r[0].len(), |i, j| r[i][j])
}

/// Central differences of J in every raw probability coordinate (off-simplex evaluation).
pub fn fd_direct(mdp: &TabularMdp, p: &Rows, h: f64) -> Rows {
    let mut g = p.clone();
    for s in 0..p.len() {
        for a in 0..p[0].len() {
            let mut up = p.clone();
            up[s][a] += h;
            let mut down = p.clone();
            down[s][a] -= h;
            g[s][a] = (evaluate(mdp, &up).ret - evaluate(mdp, &down).ret) / (2.0 * h);
        }
    }
    g
}

/// Central differences of J over logits.
pub fn fd_softmax(mdp: &TabularMdp, z: &Rows, h: f64) -> Rows {
    let mut g = z.clone();
    for s in 0..z.len() {
        for a in 0..z[0].len() {
            let mut up = z.clone();
            up[s][a] += h;
            let mut down = z.clone();
            down[s][a] -= h;
            g[s][a] = (evaluate(mdp, &softmax_rows(&up)).ret - evaluate(mdp, &softmax_rows(&down)).ret)
                / (2.0 * h);
        }
    }
    g
}

pub fn max_abs(a: &Rows) -> f64 {
    a.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn max_abs_diff(a: &Rows, b: &Rows) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Euclidean projection onto `{x ≥ floor, Σx = 1}`.
pub fn project_simplex(y: &[f64], floor: f64) -> Vec<f64> {
    let n = y.len();
    let mass = 1.0 - floor * n as f64;
    let shifted: Vec<f64> = y.iter().map(|v| v - floor).collect();
    let mut u = shifted.clone();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        acc += ui;
        let t = (acc - mass) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    shifted.iter().map(|v| (v - theta).max(0.0) + floor).collect()
}

/// Maximise a concave `f` over the simplex (entries kept ≥ `floor`) by projected
/// gradient ascent with backtracking.
pub fn maximize_on_simplex(
    x0: &[f64],
    floor: f64,
    f: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
) -> Vec<f64> {
    let mut x = project_simplex(x0, floor);
    let mut fx = f(&x);
    let mut step = 1.0;
    for _ in 0..200_000 {
        let g = grad(&x);
        let mut improved = false;
        step *= 2.0;
        while step > 1e-18 {
            let cand = project_simplex(
                &x.iter().zip(&g).map(|(a, b)| a + step * b).collect::<Vec<_>>(),
                floor,
            );
            let fc = f(&cand);
            let moved: f64 = cand.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
            if fc > fx && moved > 0.0 {
                let done = moved < 1e-15;
                x = cand;
                fx = fc;
                improved = !done;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    x
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Small deterministic generator for test inputs (SplitMix64).
pub struct TestRng(pub u64);

impl TestRng {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn logits(&mut self, ns: usize, na: usize, scale: f64) -> Rows {
        (0..ns).map(|_| (0..na).map(|_| self.uniform(-scale, scale)).collect()).collect()
    }
}
