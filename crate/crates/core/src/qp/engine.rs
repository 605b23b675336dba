//! Convex QP engine: `min ½x'Hx + c'x  s.t.  E x = f,  G x ≤ h` with `H ⪰ 0`.
//!
//! A Mehrotra predictor–corrector interior-point method finds an approximate
//! primal–dual point on a row-normalised copy of the problem. The point is
//! then polished: a candidate active set is fixed, the equality-constrained
//! KKT system is solved exactly (proximally regularised and iteratively
//! refined, so the correction from the interior point is small when the
//! solution is not unique), and the inequality multipliers are recovered by
//! nonnegative least squares. A polished point is accepted only if it passes
//! primal feasibility, dual feasibility and stationarity checks, in which
//! case it is a KKT point and therefore optimal.

use nalgebra::Cholesky;

use super::nnls::nnls_with_free;
use crate::error::{Error, Result};
use crate::linalg::{max_abs_vec, select_rows};
use crate::{Matrix, Vector};

/// Residual at which a polished point is accepted (normalised units).
pub(crate) const ACCEPT_RESIDUAL: f64 = 1e-9;
/// Residual at which an unpolished interior point is still accepted.
pub(crate) const FALLBACK_RESIDUAL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub(crate) struct ConvexQp {
    pub h: Matrix,
    pub c: Vector,
    pub eq_a: Matrix,
    pub eq_b: Vector,
    pub g: Matrix,
    pub hv: Vector,
    /// Diagonal Tikhonov term added to the objective during the interior-point
    /// phase only. On directions where `H` is singular it steers the iterate
    /// towards the minimum-norm optimal point; polishing drops it again.
    pub ridge: Vector,
}

#[derive(Debug, Clone)]
pub(crate) struct ConvexSolution {
    pub x: Vector,
    pub ineq_mult: Vector,
    pub residual: f64,
}

/// Row-normalised working copy.
struct Normalized {
    h: Matrix,
    c: Vector,
    e: Matrix,
    f: Vector,
    g: Matrix,
    hv: Vector,
    ridge: Vector,
    obj_scale: f64,
    /// original row index and norm of each kept inequality row
    ineq_rows: Vec<(usize, f64)>,
    n_ineq_orig: usize,
}

fn normalize(p: &ConvexQp) -> Result<Normalized> {
    let n = p.h.nrows();
    // scale by the curvature alone, so a tiny weight does not make every
    // stationarity residual look small
    let top = p.h.abs().max();
    let obj_scale = if top > 0.0 && top.is_finite() { top } else { 1.0f64.max(max_abs_vec(&p.c)) };
    let hn = &p.h / obj_scale;
    let cn = &p.c / obj_scale;

    let mut ineq_rows = Vec::new();
    for j in 0..p.g.nrows() {
        let norm = p.g.row(j).norm();
        let rhs = p.hv[j];
        if norm <= 1e-14 * (1.0 + rhs.abs()) {
            if rhs < -1e-12 {
                let mut cert = vec![0.0; p.g.nrows()];
                cert[j] = 1.0;
                return Err(Error::Infeasible { certificate: cert, margin: -rhs });
            }
            continue;
        }
        ineq_rows.push((j, norm));
    }
    let mut g = Matrix::zeros(ineq_rows.len(), n);
    let mut hv = Vector::zeros(ineq_rows.len());
    for (k, &(j, norm)) in ineq_rows.iter().enumerate() {
        g.row_mut(k).copy_from(&(p.g.row(j) / norm));
        hv[k] = p.hv[j] / norm;
    }

    let mut e = p.eq_a.clone();
    let mut f = p.eq_b.clone();
    for j in 0..p.eq_a.nrows() {
        let norm = p.eq_a.row(j).norm();
        let s = if norm > 0.0 { norm } else { 1.0 };
        e.row_mut(j).scale_mut(1.0 / s);
        f[j] /= s;
    }
    Ok(Normalized {
        h: hn,
        c: cn,
        e,
        f,
        g,
        hv,
        ridge: p.ridge.clone(),
        obj_scale,
        ineq_rows,
        n_ineq_orig: p.g.nrows(),
    })
}

struct IpmState {
    x: Vector,
    y: Vector,
    z: Vector,
    s: Vector,
    converged: bool,
    iterations: usize,
}

enum Factor {
    Chol(Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

fn factor_newton(p: &Normalized, d: &Vector) -> Option<Factor> {
    let n = p.h.nrows();
    let me = p.e.nrows();
    let mut scaled_g = p.g.clone();
    for (j, mut row) in scaled_g.row_iter_mut().enumerate() {
        row *= d[j];
    }
    let mut m = &p.h + p.g.transpose() * scaled_g;
    for i in 0..n {
        m[(i, i)] += p.ridge[i] + 1e-13;
    }
    if me == 0 {
        if let Some(ch) = Cholesky::new(m.clone()) {
            return Some(Factor::Chol(ch));
        }
        return Some(Factor::Lu(m.lu()));
    }
    let mut k = Matrix::zeros(n + me, n + me);
    k.view_mut((0, 0), (n, n)).copy_from(&m);
    k.view_mut((0, n), (n, me)).copy_from(&p.e.transpose());
    k.view_mut((n, 0), (me, n)).copy_from(&p.e);
    for i in 0..me {
        k[(n + i, n + i)] = -1e-12;
    }
    Some(Factor::Lu(k.lu()))
}

fn solve_factor(f: &Factor, rhs: &Vector) -> Option<Vector> {
    match f {
        Factor::Chol(ch) => Some(ch.solve(rhs)),
        Factor::Lu(lu) => lu.solve(rhs),
    }
}

fn max_step(v: &Vector, dv: &Vector) -> f64 {
    let mut a: f64 = 1.0;
    for (vi, di) in v.iter().zip(dv.iter()) {
        if *di < 0.0 {
            a = a.min(-vi / di);
        }
    }
    a
}

fn ipm(p: &Normalized, max_iter: usize) -> IpmState {
    let n = p.h.nrows();
    let me = p.e.nrows();
    let mi = p.g.nrows();

    // Initial point from the regularised least-squares problem
    // min ½x'Hx + c'x + ½‖Gx − h‖² s.t. Ex = f.
    let ones = Vector::from_element(mi, 1.0);
    let init = factor_newton(p, &ones);
    let rhs0 = {
        let mut r = Vector::zeros(n + me);
        let top = -&p.c + p.g.transpose() * &p.hv;
        r.rows_mut(0, n).copy_from(&top);
        r.rows_mut(n, me).copy_from(&p.f);
        r
    };
    let sol0 = init.as_ref().and_then(|f| solve_factor(f, &rhs0)).unwrap_or_else(|| Vector::zeros(n + me));
    let mut x = if sol0.iter().all(|v| v.is_finite()) { sol0.rows(0, n).into_owned() } else { Vector::zeros(n) };
    let mut y = Vector::zeros(me);
    let resid0 = &p.hv - &p.g * &x;
    let mut s = resid0.clone();
    let mut z = -resid0;
    let shift = |v: &mut Vector| {
        let m = v.iter().copied().fold(f64::INFINITY, f64::min);
        let add = if m < 1e-2 { 1.0 - m.min(0.0) } else { 0.0 };
        v.iter_mut().for_each(|e| *e += add);
    };
    shift(&mut s);
    shift(&mut z);

    let c_norm = 1.0 + max_abs_vec(&p.c);
    let h_norm = 1.0 + max_abs_vec(&p.hv);
    let f_norm = 1.0 + max_abs_vec(&p.f);

    let mut converged = false;
    let mut it = 0;
    // best iterate by merit; late iterations can lose accuracy once the
    // complementarity gap is far below round-off
    let mut best: Option<(f64, Vector, Vector, Vector, Vector)> = None;
    while it < max_iter {
        let rd = &p.h * &x + p.ridge.component_mul(&x) + &p.c + p.e.transpose() * &y + p.g.transpose() * &z;
        let re = &p.e * &x - &p.f;
        let ri = &p.g * &x + &s - &p.hv;
        let mu = if mi > 0 { s.dot(&z) / mi as f64 } else { 0.0 };
        if max_abs_vec(&rd) <= 1e-12 * c_norm
            && max_abs_vec(&re) <= 1e-12 * f_norm
            && max_abs_vec(&ri) <= 1e-12 * h_norm
            && mu <= 1e-14
        {
            converged = true;
            break;
        }
        let merit = (max_abs_vec(&rd) / c_norm)
            .max(max_abs_vec(&re) / f_norm)
            .max(max_abs_vec(&ri) / h_norm)
            .max(mu);
        if merit.is_finite() && best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, x.clone(), y.clone(), z.clone(), s.clone()));
        }
        if mu <= 1e-20 && merit <= 1e-9 {
            // stalled at round-off level
            converged = true;
            break;
        }
        if !x.iter().chain(z.iter()).all(|v| v.is_finite() && v.abs() < 1e14) {
            break;
        }
        it += 1;
        let d = Vector::from_iterator(mi, s.iter().zip(z.iter()).map(|(si, zi)| zi / si));
        let Some(fac) = factor_newton(p, &d) else { break };

        let newton = |rc: &Vector| -> Option<(Vector, Vector, Vector, Vector)> {
            let tmp = Vector::from_iterator(
                mi,
                (0..mi).map(|j| (rc[j] - z[j] * ri[j]) / s[j]),
            );
            let top = -&rd + p.g.transpose() * tmp;
            let mut rhs = Vector::zeros(n + me);
            rhs.rows_mut(0, n).copy_from(&top);
            rhs.rows_mut(n, me).copy_from(&(-&re));
            let sol = solve_factor(&fac, &rhs)?;
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, me).into_owned();
            let gdx = &p.g * &dx;
            let dz = Vector::from_iterator(mi, (0..mi).map(|j| (-rc[j] + z[j] * ri[j] + z[j] * gdx[j]) / s[j]));
            let ds = -&ri - gdx;
            Some((dx, dy, dz, ds))
        };

        let rc_aff = s.component_mul(&z);
        let Some((_, _, dz_a, ds_a)) = newton(&rc_aff) else { break };
        let a_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let sigma = if mi > 0 {
            let mu_aff = (&s + &ds_a * a_aff).dot(&(&z + &dz_a * a_aff)) / mi as f64;
            (mu_aff / mu).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };
        let rc = &rc_aff + ds_a.component_mul(&dz_a) - Vector::from_element(mi, sigma * mu);
        let Some((dx, dy, dz, ds)) = newton(&rc) else { break };
        if !dx.iter().chain(dz.iter()).chain(ds.iter()).all(|v| v.is_finite()) {
            break;
        }
        let amax = max_step(&s, &ds).min(max_step(&z, &dz));
        let alpha = (0.99 * amax).min(1.0);
        x += &dx * alpha;
        y += &dy * alpha;
        z += &dz * alpha;
        s += &ds * alpha;
    }
    if !converged {
        if let Some((_, bx, by, bz, bs)) = best {
            return IpmState { x: bx, y: by, z: bz, s: bs, converged, iterations: it };
        }
    }
    IpmState { x, y, z, s, converged, iterations: it }
}

/// Stationarity, primal and complementarity residual in normalised units.
fn kkt_residual(p: &Normalized, x: &Vector, y: &Vector, z: &Vector) -> f64 {
    let grad = &p.h * x + &p.c;
    let rd = &grad + p.e.transpose() * y + p.g.transpose() * z;
    let stat = max_abs_vec(&rd) / (1.0 + max_abs_vec(&grad).max(max_abs_vec(&p.c)));
    let xn = x.norm();
    let re = (&p.e * x - &p.f).iter().fold(0.0f64, |a, v| a.max(v.abs())) / (1.0 + max_abs_vec(&p.f));
    let gx = &p.g * x;
    let mut prim: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let zmax = 1.0 + max_abs_vec(z);
    for j in 0..p.g.nrows() {
        let scale = 1.0 + p.hv[j].abs() + xn;
        let slack = p.hv[j] - gx[j];
        prim = prim.max((-slack).max(0.0) / scale);
        comp = comp.max((z[j] * slack).abs() / (scale * zmax));
    }
    let neg = z.iter().fold(0.0f64, |a, v| a.max(-v)) / zmax;
    stat.max(re).max(prim).max(comp).max(neg)
}

/// Equality-constrained step: minimise over `Ex = f`, `G_K x = h_K`, starting
/// from `x0`. Returns the point and the stacked multipliers `(y, z_K)`.
fn eq_qp(p: &Normalized, x0: &Vector, active: &[usize]) -> Option<(Vector, Vector)> {
    let n = p.h.nrows();
    let me = p.e.nrows();
    let ga = select_rows(&p.g, active);
    let na = me + active.len();
    let mut a = Matrix::zeros(na, n);
    a.view_mut((0, 0), (me, n)).copy_from(&p.e);
    a.view_mut((me, 0), (active.len(), n)).copy_from(&ga);
    let mut b = Vector::zeros(na);
    b.rows_mut(0, me).copy_from(&p.f);
    for (k, &j) in active.iter().enumerate() {
        b[me + k] = p.hv[j];
    }

    let mut kkt = Matrix::zeros(n + na, n + na);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
    kkt.view_mut((0, n), (n, na)).copy_from(&a.transpose());
    kkt.view_mut((n, 0), (na, n)).copy_from(&a);
    let mut rhs = Vector::zeros(n + na);
    rhs.rows_mut(0, n).copy_from(&(-(&p.h * x0) - &p.c));
    rhs.rows_mut(n, na).copy_from(&(&b - &a * x0));

    const RHO: f64 = 1e-9;
    let mut reg = kkt.clone();
    for i in 0..n {
        reg[(i, i)] += RHO;
    }
    for i in n..n + na {
        reg[(i, i)] -= RHO;
    }
    let lu = reg.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..25 {
        let r = &rhs - &kkt * &sol;
        if max_abs_vec(&r) <= 1e-15 * (1.0 + max_abs_vec(&rhs)) {
            break;
        }
        sol += lu.solve(&r)?;
    }
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    let x = x0 + sol.rows(0, n);
    let eq_res = max_abs_vec(&(&a * &x - &b)) / (1.0 + max_abs_vec(&b));
    if eq_res > 1e-10 {
        return None;
    }
    Some((x, sol.rows(n, na).into_owned()))
}

/// Scaled violation of each inequality at `x`.
fn violations(p: &Normalized, x: &Vector) -> Vec<f64> {
    let xn = x.norm();
    let gx = &p.g * x;
    (0..p.g.nrows()).map(|j| (gx[j] - p.hv[j]) / (1.0 + p.hv[j].abs() + xn)).collect()
}

/// Multipliers for a feasible `x` on `active`: the direct ones when
/// nonnegative, otherwise nonnegative least squares.
fn recover_multipliers(p: &Normalized, x: &Vector, active: &[usize], lam: &Vector) -> (Vector, Vector, f64) {
    let me = p.e.nrows();
    let lam_max = 1.0 + max_abs_vec(lam);
    let zk_direct: Vec<f64> = (0..active.len()).map(|k| lam[me + k]).collect();
    let (y, zk) = if zk_direct.iter().all(|&v| v >= -1e-11 * lam_max) {
        (
            lam.rows(0, me).into_owned(),
            Vector::from_iterator(active.len(), zk_direct.iter().map(|v| v.max(0.0))),
        )
    } else {
        let target = -(&p.h * x + &p.c);
        nnls_with_free(&p.e.transpose(), &select_rows(&p.g, active).transpose(), &target)
    };
    let mut z = Vector::zeros(p.g.nrows());
    for (k, &j) in active.iter().enumerate() {
        z[j] = zk[k];
    }
    let res = kkt_residual(p, x, &y, &z);
    (y, z, res)
}

fn polish(p: &Normalized, x0: &Vector, active: &[usize]) -> Option<(Vector, Vector, Vector, f64)> {
    let (x, lam) = eq_qp(p, x0, active)?;
    if violations(p, &x).iter().any(|&v| v > 1e-10) {
        return None;
    }
    let (y, z, res) = recover_multipliers(p, &x, active, &lam);
    Some((x, y, z, res))
}

/// Primal active-set repair from a starting working set: add the most
/// violated row or drop the most negative multiplier until a KKT point is
/// reached.
fn repair(p: &Normalized, x0: &Vector, start: &[usize]) -> Option<(Vector, Vector, f64)> {
    let me = p.e.nrows();
    let mi = p.g.nrows();
    let mut k: Vec<usize> = start.to_vec();
    let mut x_ref = x0.clone();
    for _ in 0..(2 * mi + 10) {
        let Some((x, lam)) = eq_qp(p, &x_ref, &k) else {
            // dependent rows with incompatible right-hand sides: shed the last one
            k.pop()?;
            continue;
        };
        let viol = violations(p, &x);
        let worst = (0..mi).filter(|j| !k.contains(j)).max_by(|&a, &b| viol[a].total_cmp(&viol[b]));
        if let Some(j) = worst {
            if viol[j] > 1e-10 {
                k.push(j);
                k.sort_unstable();
                continue;
            }
        }
        let (_y, z, res) = recover_multipliers(p, &x, &k, &lam);
        if res <= ACCEPT_RESIDUAL {
            return Some((x, z, res));
        }
        let lam_max = 1.0 + max_abs_vec(&lam);
        let most_neg = (0..k.len()).min_by(|&a, &b| lam[me + a].total_cmp(&lam[me + b]))?;
        if lam[me + most_neg] >= -1e-11 * lam_max {
            return None;
        }
        k.remove(most_neg);
        x_ref = x;
    }
    None
}

fn candidate_sets(p: &Normalized, st: &IpmState) -> Vec<Vec<usize>> {
    let xn = st.x.norm();
    let mi = p.g.nrows();
    let scale = |j: usize| 1.0 + p.hv[j].abs() + xn;
    let ka: Vec<usize> = (0..mi).filter(|&j| st.s[j] <= st.z[j]).collect();
    let kb: Vec<usize> = (0..mi).filter(|&j| st.s[j] <= 1e-6 * scale(j)).collect();
    let kc: Vec<usize> = (0..mi).filter(|&j| ka.contains(&j) || kb.contains(&j)).collect();
    let kd: Vec<usize> = (0..mi).filter(|&j| st.s[j] <= 1e-9 * scale(j)).collect();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for k in [kc, ka, kb, kd] {
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

fn phase_one(p: &Normalized) -> Result<()> {
    // min t + ½ε‖x‖²  s.t.  Gx − t ≤ h,  −t ≤ 1
    let n = p.h.nrows();
    let mi = p.g.nrows();
    let mut g = Matrix::zeros(mi + 1, n + 1);
    g.view_mut((0, 0), (mi, n)).copy_from(&p.g);
    for j in 0..mi {
        g[(j, n)] = -1.0;
    }
    g[(mi, n)] = -1.0;
    let mut hv = Vector::zeros(mi + 1);
    hv.rows_mut(0, mi).copy_from(&p.hv);
    hv[mi] = 1.0;
    let mut h = Matrix::identity(n + 1, n + 1) * 1e-10;
    h[(n, n)] = 0.0;
    let mut c = Vector::zeros(n + 1);
    c[n] = 1.0;
    let aux = Normalized {
        h,
        c,
        e: Matrix::zeros(0, n + 1),
        f: Vector::zeros(0),
        g,
        hv,
        ridge: Vector::from_element(n + 1, 1e-12),
        obj_scale: 1.0,
        ineq_rows: (0..=mi).map(|j| (j, 1.0)).collect(),
        n_ineq_orig: mi + 1,
    };
    let st = ipm(&aux, 200);
    let t = st.x[n];
    let tol = 1e-9 * (1.0 + max_abs_vec(&p.hv));
    if t > tol {
        let mut cert = vec![0.0; p.n_ineq_orig];
        let mut total = 0.0;
        for (k, &(j, norm)) in p.ineq_rows.iter().enumerate() {
            let v = st.z[k].max(0.0) / norm;
            cert[j] = v;
            total += v;
        }
        if total > 0.0 {
            cert.iter_mut().for_each(|v| *v /= total);
        }
        return Err(Error::Infeasible { certificate: cert, margin: t });
    }
    Ok(())
}

/// Solve the convex QP. Errors: `Infeasible` when phase one certifies an empty
/// feasible set, `SolverFailure` when no point reaches the residual tolerance.
pub(crate) fn solve(p: &ConvexQp) -> Result<ConvexSolution> {
    let np = normalize(p)?;
    let n = np.h.nrows();
    let mi = np.g.nrows();

    let st = if mi == 0 {
        IpmState {
            x: Vector::zeros(n),
            y: Vector::zeros(np.e.nrows()),
            z: Vector::zeros(0),
            s: Vector::zeros(0),
            converged: true,
            iterations: 0,
        }
    } else {
        ipm(&np, 120)
    };

    let mut best: Option<(Vector, Vector, f64)> = None;
    let candidates = candidate_sets(&np, &st);
    for k in &candidates {
        if let Some((x, _y, z, res)) = polish(&np, &st.x, k) {
            if res <= ACCEPT_RESIDUAL {
                best = Some((x, z, res));
                break;
            }
        }
    }
    if best.is_none() && mi > 0 {
        best = repair(&np, &st.x, &candidates[0]);
    }
    if best.is_none() && st.converged && mi > 0 {
        let res = kkt_residual(&np, &st.x, &st.y, &st.z);
        if res <= FALLBACK_RESIDUAL {
            best = Some((st.x.clone(), st.z.clone(), res));
        }
    }
    let Some((x, z, res)) = best else {
        if np.e.nrows() == 0 && mi > 0 {
            phase_one(&np)?;
        }
        let res = if mi > 0 { kkt_residual(&np, &st.x, &st.y, &st.z) } else { f64::INFINITY };
        return Err(Error::SolverFailure {
            reason: format!(
                "no KKT point reached tolerance after {} interior-point iterations (converged: {})",
                st.iterations, st.converged
            ),
            residual: res,
        });
    };

    let mut ineq = Vector::zeros(np.n_ineq_orig);
    for (k, &(j, norm)) in np.ineq_rows.iter().enumerate() {
        ineq[j] = z[k] * np.obj_scale / norm;
    }
    Ok(ConvexSolution { x, ineq_mult: ineq, residual: res })
}
