//! Method of Moving Asymptotes, following Svanberg's `mmasub`/`subsolv`.
//!
//! Minimises `f0(x)` subject to `f_i(x) <= 0` and box bounds, using the
//! standard artificial-variable form with `a0 = 1`, `a_i = 0`, `c_i = c`
//! and `d_i = d`. The convex subproblem is solved with a primal-dual
//! interior point method.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmaSettings {
    /// Largest change per variable as a fraction of its range.
    pub move_limit: f64,
    pub asyinit: f64,
    pub asyincr: f64,
    pub asydecr: f64,
    pub albefa: f64,
    pub raa0: f64,
    pub epsimin: f64,
    /// Cost on the artificial constraint-relaxation variables.
    pub c: f64,
    pub d: f64,
    /// Artificial variables above this mark the subproblem as relaxed.
    pub slack_tol: f64,
}

impl Default for MmaSettings {
    fn default() -> Self {
        Self {
            move_limit: 0.1,
            asyinit: 0.5,
            asyincr: 1.2,
            asydecr: 0.7,
            albefa: 0.1,
            raa0: 1e-5,
            epsimin: 1e-7,
            c: 1e3,
            d: 1.0,
            slack_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmaState {
    pub n: usize,
    pub m: usize,
    /// Number of completed steps.
    pub iter: usize,
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    pub xold1: Vec<f64>,
    pub xold2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmaOutcome {
    pub x: Vec<f64>,
    /// Largest artificial relaxation variable of the subproblem.
    pub max_slack: f64,
    /// True when the subproblem could only be met by relaxing a constraint.
    pub relaxed: bool,
}

/// Inputs of one MMA step. `dfdx` is row-major `m x n`.
pub struct MmaProblem<'a> {
    pub x: &'a [f64],
    pub xmin: &'a [f64],
    pub xmax: &'a [f64],
    pub df0dx: &'a [f64],
    pub fval: &'a [f64],
    pub dfdx: &'a [f64],
}

impl MmaState {
    pub fn new(n: usize, m: usize) -> Self {
        Self { n, m, iter: 0, low: vec![0.0; n], upp: vec![1.0; n], xold1: vec![0.0; n], xold2: vec![0.0; n] }
    }

    /// One outer MMA iteration. `move_scale` shrinks the move limit (1 keeps
    /// it as configured).
    pub fn step(&mut self, s: &MmaSettings, p: &MmaProblem, move_scale: f64) -> Result<MmaOutcome> {
        let (n, m) = (self.n, self.m);
        if p.x.len() != n || p.xmin.len() != n || p.xmax.len() != n || p.df0dx.len() != n {
            return invalid("MMA: variable vectors have the wrong length");
        }
        if p.fval.len() != m || p.dfdx.len() != m * n {
            return invalid("MMA: constraint data has the wrong shape");
        }
        let finite = p.df0dx.iter().chain(p.fval).chain(p.dfdx).chain(p.x).all(|v| v.is_finite());
        if !finite {
            return invalid("MMA: non-finite gradient or constraint value");
        }
        let xval = p.x;
        let iter = self.iter + 1;
        let mv = s.move_limit * move_scale;

        let range: Vec<f64> = (0..n).map(|j| (p.xmax[j] - p.xmin[j]).max(1e-5)).collect();
        if iter <= 2 {
            for j in 0..n {
                self.low[j] = xval[j] - s.asyinit * range[j];
                self.upp[j] = xval[j] + s.asyinit * range[j];
            }
        } else {
            for j in 0..n {
                let zzz = (xval[j] - self.xold1[j]) * (self.xold1[j] - self.xold2[j]);
                let factor = if zzz > 0.0 {
                    s.asyincr
                } else if zzz < 0.0 {
                    s.asydecr
                } else {
                    1.0
                };
                let mut low = xval[j] - factor * (self.xold1[j] - self.low[j]);
                let mut upp = xval[j] + factor * (self.upp[j] - self.xold1[j]);
                low = low.max(xval[j] - 10.0 * range[j]).min(xval[j] - 0.01 * range[j]);
                upp = upp.min(xval[j] + 10.0 * range[j]).max(xval[j] + 0.01 * range[j]);
                self.low[j] = low;
                self.upp[j] = upp;
            }
        }

        let mut alfa = vec![0.0; n];
        let mut beta = vec![0.0; n];
        for j in 0..n {
            let a = (self.low[j] + s.albefa * (xval[j] - self.low[j])).max(xval[j] - mv * range[j]);
            alfa[j] = a.max(p.xmin[j]);
            let b = (self.upp[j] - s.albefa * (self.upp[j] - xval[j])).min(xval[j] + mv * range[j]);
            beta[j] = b.min(p.xmax[j]);
            if alfa[j] > beta[j] {
                // bounds pinched shut: hold the variable where it is
                let mid = xval[j].clamp(p.xmin[j], p.xmax[j]);
                alfa[j] = mid;
                beta[j] = mid;
            }
        }

        let mut p0 = vec![0.0; n];
        let mut q0 = vec![0.0; n];
        let mut pm = vec![0.0; m * n];
        let mut qm = vec![0.0; m * n];
        let mut b = vec![0.0; m];
        for j in 0..n {
            let xmamiinv = 1.0 / range[j];
            let ux1 = self.upp[j] - xval[j];
            let xl1 = xval[j] - self.low[j];
            let (ux2, xl2) = (ux1 * ux1, xl1 * xl1);
            let g = p.df0dx[j];
            let (pp, qq) = (g.max(0.0), (-g).max(0.0));
            let pq = 0.001 * (pp + qq) + s.raa0 * xmamiinv;
            p0[j] = (pp + pq) * ux2;
            q0[j] = (qq + pq) * xl2;
            for i in 0..m {
                let g = p.dfdx[i * n + j];
                let (pp, qq) = (g.max(0.0), (-g).max(0.0));
                let pq = 0.001 * (pp + qq) + s.raa0 * xmamiinv;
                pm[i * n + j] = (pp + pq) * ux2;
                qm[i * n + j] = (qq + pq) * xl2;
                b[i] += pm[i * n + j] / ux1 + qm[i * n + j] / xl1;
            }
        }
        for i in 0..m {
            b[i] -= p.fval[i];
        }

        let sub = Subproblem {
            n,
            m,
            epsimin: s.epsimin,
            low: &self.low,
            upp: &self.upp,
            alfa: &alfa,
            beta: &beta,
            p0: &p0,
            q0: &q0,
            p: &pm,
            q: &qm,
            b: &b,
            c: s.c,
            d: s.d,
        };
        let (x, y) = sub.solve();
        if x.iter().any(|v| !v.is_finite()) {
            return invalid("MMA subproblem produced a non-finite iterate");
        }

        self.xold2 = std::mem::replace(&mut self.xold1, xval.to_vec());
        self.iter = iter;
        let max_slack = y.iter().cloned().fold(0.0, f64::max);
        Ok(MmaOutcome { x, max_slack, relaxed: max_slack > s.slack_tol })
    }
}

struct Subproblem<'a> {
    n: usize,
    m: usize,
    epsimin: f64,
    low: &'a [f64],
    upp: &'a [f64],
    alfa: &'a [f64],
    beta: &'a [f64],
    p0: &'a [f64],
    q0: &'a [f64],
    p: &'a [f64],
    q: &'a [f64],
    b: &'a [f64],
    c: f64,
    d: f64,
}

/// Primal-dual variables of the subproblem. `a0 = 1` and `a = 0`.
#[derive(Clone)]
struct Pd {
    x: Vec<f64>,
    y: Vec<f64>,
    z: f64,
    lam: Vec<f64>,
    xsi: Vec<f64>,
    eta: Vec<f64>,
    mu: Vec<f64>,
    zet: f64,
    s: Vec<f64>,
}

impl Pd {
    fn axpy(&self, t: f64, d: &Pd) -> Pd {
        let f = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + t * y).collect::<Vec<_>>();
        Pd {
            x: f(&self.x, &d.x),
            y: f(&self.y, &d.y),
            z: self.z + t * d.z,
            lam: f(&self.lam, &d.lam),
            xsi: f(&self.xsi, &d.xsi),
            eta: f(&self.eta, &d.eta),
            mu: f(&self.mu, &d.mu),
            zet: self.zet + t * d.zet,
            s: f(&self.s, &d.s),
        }
    }
}

impl Subproblem<'_> {
    fn plam_qlam(&self, lam: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.n, self.m);
        let mut plam = self.p0.to_vec();
        let mut qlam = self.q0.to_vec();
        for i in 0..m {
            for j in 0..n {
                plam[j] += self.p[i * n + j] * lam[i];
                qlam[j] += self.q[i * n + j] * lam[i];
            }
        }
        (plam, qlam)
    }

    fn gvec(&self, x: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        (0..m)
            .map(|i| {
                (0..n)
                    .map(|j| self.p[i * n + j] / (self.upp[j] - x[j]) + self.q[i * n + j] / (x[j] - self.low[j]))
                    .sum()
            })
            .collect()
    }

    fn residual(&self, v: &Pd, epsi: f64) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let (plam, qlam) = self.plam_qlam(&v.lam);
        let gvec = self.gvec(&v.x);
        let mut r = Vec::with_capacity(3 * n + 4 * m + 2);
        for j in 0..n {
            let ux = self.upp[j] - v.x[j];
            let xl = v.x[j] - self.low[j];
            r.push(plam[j] / (ux * ux) - qlam[j] / (xl * xl) - v.xsi[j] + v.eta[j]);
        }
        for i in 0..m {
            r.push(self.c + self.d * v.y[i] - v.mu[i] - v.lam[i]);
        }
        r.push(1.0 - v.zet);
        for i in 0..m {
            r.push(gvec[i] - v.y[i] + v.s[i] - self.b[i]);
        }
        for j in 0..n {
            r.push(v.xsi[j] * (v.x[j] - self.alfa[j]) - epsi);
        }
        for j in 0..n {
            r.push(v.eta[j] * (self.beta[j] - v.x[j]) - epsi);
        }
        for i in 0..m {
            r.push(v.mu[i] * v.y[i] - epsi);
        }
        r.push(v.zet * v.z - epsi);
        for i in 0..m {
            r.push(v.lam[i] * v.s[i] - epsi);
        }
        r
    }

    fn newton_direction(&self, v: &Pd, epsi: f64) -> Option<Pd> {
        let (n, m) = (self.n, self.m);
        let (plam, qlam) = self.plam_qlam(&v.lam);
        let gvec = self.gvec(&v.x);
        let mut gg = DMatrix::<f64>::zeros(m, n);
        let mut delx = vec![0.0; n];
        let mut diagx = vec![0.0; n];
        for j in 0..n {
            let ux1 = self.upp[j] - v.x[j];
            let xl1 = v.x[j] - self.low[j];
            let (ux2, xl2) = (ux1 * ux1, xl1 * xl1);
            for i in 0..m {
                gg[(i, j)] = self.p[i * n + j] / ux2 - self.q[i * n + j] / xl2;
            }
            let dpsidx = plam[j] / ux2 - qlam[j] / xl2;
            let xa = v.x[j] - self.alfa[j];
            let bx = self.beta[j] - v.x[j];
            delx[j] = dpsidx - epsi / xa + epsi / bx;
            diagx[j] = 2.0 * (plam[j] / (ux2 * ux1) + qlam[j] / (xl2 * xl1)) + v.xsi[j] / xa + v.eta[j] / bx;
        }
        let dely: Vec<f64> = (0..m).map(|i| self.c + self.d * v.y[i] - v.lam[i] - epsi / v.y[i]).collect();
        let delz = 1.0 - epsi / v.z;
        let dellam: Vec<f64> = (0..m).map(|i| gvec[i] - v.y[i] - self.b[i] + epsi / v.lam[i]).collect();
        let diagy: Vec<f64> = (0..m).map(|i| self.d + v.mu[i] / v.y[i]).collect();
        let diaglamyi: Vec<f64> = (0..m).map(|i| v.s[i] / v.lam[i] + 1.0 / diagy[i]).collect();

        let (dx, dz, dlam);
        if m < n {
            // (m + 1) system in (dlam, dz); a = 0 decouples dz except through zet
            let mut aa = DMatrix::<f64>::zeros(m + 1, m + 1);
            let mut bb = DVector::<f64>::zeros(m + 1);
            for i in 0..m {
                let mut s = dellam[i] + dely[i] / diagy[i];
                for j in 0..n {
                    s -= gg[(i, j)] * delx[j] / diagx[j];
                }
                bb[i] = s;
                for k in 0..m {
                    let mut a = 0.0;
                    for j in 0..n {
                        a += gg[(i, j)] * gg[(k, j)] / diagx[j];
                    }
                    aa[(i, k)] = a;
                }
                aa[(i, i)] += diaglamyi[i];
            }
            aa[(m, m)] = -v.zet / v.z;
            bb[m] = delz;
            let sol = aa.lu().solve(&bb)?;
            let dl: Vec<f64> = (0..m).map(|i| sol[i]).collect();
            dz = sol[m];
            dx = (0..n)
                .map(|j| {
                    let gl: f64 = (0..m).map(|i| gg[(i, j)] * dl[i]).sum();
                    -delx[j] / diagx[j] - gl / diagx[j]
                })
                .collect::<Vec<_>>();
            dlam = dl;
        } else {
            let dellamyi: Vec<f64> = (0..m).map(|i| dellam[i] + dely[i] / diagy[i]).collect();
            let mut aa = DMatrix::<f64>::zeros(n + 1, n + 1);
            let mut bb = DVector::<f64>::zeros(n + 1);
            for j in 0..n {
                for k in 0..n {
                    let mut a = 0.0;
                    for i in 0..m {
                        a += gg[(i, j)] * gg[(i, k)] / diaglamyi[i];
                    }
                    aa[(j, k)] = a;
                }
                aa[(j, j)] += diagx[j];
                let mut bx = delx[j];
                for i in 0..m {
                    bx += gg[(i, j)] * dellamyi[i] / diaglamyi[i];
                }
                bb[j] = -bx;
            }
            aa[(n, n)] = v.zet / v.z;
            bb[n] = -delz;
            let sol = aa.lu().solve(&bb)?;
            let dxv: Vec<f64> = (0..n).map(|j| sol[j]).collect();
            dz = sol[n];
            dlam = (0..m)
                .map(|i| {
                    let gdx: f64 = (0..n).map(|j| gg[(i, j)] * dxv[j]).sum();
                    gdx / diaglamyi[i] + dellamyi[i] / diaglamyi[i]
                })
                .collect::<Vec<_>>();
            dx = dxv;
        }
        let dy: Vec<f64> = (0..m).map(|i| -dely[i] / diagy[i] + dlam[i] / diagy[i]).collect();
        let dxsi: Vec<f64> = (0..n)
            .map(|j| {
                let xa = v.x[j] - self.alfa[j];
                -v.xsi[j] + epsi / xa - v.xsi[j] * dx[j] / xa
            })
            .collect();
        let deta: Vec<f64> = (0..n)
            .map(|j| {
                let bx = self.beta[j] - v.x[j];
                -v.eta[j] + epsi / bx + v.eta[j] * dx[j] / bx
            })
            .collect();
        let dmu: Vec<f64> = (0..m).map(|i| -v.mu[i] + epsi / v.y[i] - v.mu[i] * dy[i] / v.y[i]).collect();
        let dzet = -v.zet + epsi / v.z - v.zet * dz / v.z;
        let ds: Vec<f64> = (0..m).map(|i| -v.s[i] + epsi / v.lam[i] - v.s[i] * dlam[i] / v.lam[i]).collect();
        Some(Pd { x: dx, y: dy, z: dz, lam: dlam, xsi: dxsi, eta: deta, mu: dmu, zet: dzet, s: ds })
    }

    fn max_step(&self, v: &Pd, d: &Pd) -> f64 {
        let mut stm: f64 = 1.0;
        let mut push = |val: f64, dv: f64| {
            let r = -1.01 * dv / val;
            if r > stm {
                stm = r;
            }
        };
        for (a, b) in v.y.iter().zip(&d.y) {
            push(*a, *b);
        }
        push(v.z, d.z);
        for (a, b) in v.lam.iter().zip(&d.lam).chain(v.xsi.iter().zip(&d.xsi)) {
            push(*a, *b);
        }
        for (a, b) in v.eta.iter().zip(&d.eta).chain(v.mu.iter().zip(&d.mu)).chain(v.s.iter().zip(&d.s)) {
            push(*a, *b);
        }
        push(v.zet, d.zet);
        for j in 0..self.n {
            push(v.x[j] - self.alfa[j], d.x[j]);
            push(self.beta[j] - v.x[j], -d.x[j]);
        }
        1.0 / stm
    }

    /// Returns `(x, y)` of the subproblem's solution.
    fn solve(&self) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.n, self.m);
        // variables pinned by alfa == beta are removed by clamping at the end
        let x: Vec<f64> = (0..n)
            .map(|j| if self.beta[j] > self.alfa[j] { 0.5 * (self.alfa[j] + self.beta[j]) } else { self.alfa[j] })
            .collect();
        let pinned: Vec<bool> = (0..n).map(|j| !(self.beta[j] > self.alfa[j])).collect();
        if pinned.iter().any(|&p| p) {
            return self.solve_reduced(&pinned, &x);
        }
        let mut v = Pd {
            xsi: x.iter().zip(self.alfa).map(|(x, a)| (1.0 / (x - a)).max(1.0)).collect(),
            eta: x.iter().zip(self.beta).map(|(x, b)| (1.0 / (b - x)).max(1.0)).collect(),
            x,
            y: vec![1.0; m],
            z: 1.0,
            lam: vec![1.0; m],
            mu: vec![(0.5 * self.c).max(1.0); m],
            zet: 1.0,
            s: vec![1.0; m],
        };
        let norm = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>().sqrt();
        let maxabs = |r: &[f64]| r.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let mut epsi = 1.0;
        while epsi > self.epsimin {
            let r = self.residual(&v, epsi);
            let mut resnorm = norm(&r);
            let mut resmax = maxabs(&r);
            let mut it = 0;
            while resmax > 0.9 * epsi && it < 200 {
                it += 1;
                let Some(d) = self.newton_direction(&v, epsi) else { break };
                let mut steg = self.max_step(&v, &d);
                let mut trial = v.axpy(steg, &d);
                let mut r = self.residual(&trial, epsi);
                let mut resnew = norm(&r);
                let mut itto = 0;
                while resnew > resnorm && itto < 50 {
                    itto += 1;
                    steg *= 0.5;
                    trial = v.axpy(steg, &d);
                    r = self.residual(&trial, epsi);
                    resnew = norm(&r);
                }
                v = trial;
                resnorm = resnew;
                resmax = maxabs(&r);
            }
            epsi *= 0.1;
        }
        (v.x, v.y)
    }

    /// Solves with pinned variables held fixed and folded into the constants.
    fn solve_reduced(&self, pinned: &[bool], x0: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.n, self.m);
        let free: Vec<usize> = (0..n).filter(|&j| !pinned[j]).collect();
        let nf = free.len();
        let mut b = self.b.to_vec();
        for j in (0..n).filter(|&j| pinned[j]) {
            for i in 0..m {
                b[i] -= self.p[i * n + j] / (self.upp[j] - x0[j]) + self.q[i * n + j] / (x0[j] - self.low[j]);
            }
        }
        let pick = |v: &[f64]| free.iter().map(|&j| v[j]).collect::<Vec<_>>();
        let pick_m = |v: &[f64]| {
            let mut out = Vec::with_capacity(m * nf);
            for i in 0..m {
                out.extend(free.iter().map(|&j| v[i * n + j]));
            }
            out
        };
        let (low, upp, alfa, beta, p0, q0) =
            (pick(self.low), pick(self.upp), pick(self.alfa), pick(self.beta), pick(self.p0), pick(self.q0));
        let (p, q) = (pick_m(self.p), pick_m(self.q));
        let mut x = x0.to_vec();
        let y = if nf == 0 {
            // every variable fixed: only the artificial variables remain
            (0..m).map(|i| (-b[i]).max(0.0)).collect()
        } else {
            let sub = Subproblem {
                n: nf,
                m,
                epsimin: self.epsimin,
                low: &low,
                upp: &upp,
                alfa: &alfa,
                beta: &beta,
                p0: &p0,
                q0: &q0,
                p: &p,
                q: &q,
                b: &b,
                c: self.c,
                d: self.d,
            };
            let (xf, y) = sub.solve();
            for (k, &j) in free.iter().enumerate() {
                x[j] = xf[k];
            }
            y
        };
        (x, y)
    }
}
