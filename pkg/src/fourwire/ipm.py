"""Primal-dual interior-point solver for the quadratic constraint systems.

Slack-based path following with a monotone barrier schedule, an l1 merit
line search and inertia-corrected regularization of the symmetric KKT
system. Because the systems are purely quadratic with a linear objective,
the Lagrangian Hessian is refreshed from the multipliers alone.

The condensed Newton system per iteration is

    [ W + Sigma_B + dw I   J_E'      J_I'          ] [dx]
    [ J_E                  -dc I     0             ] [dl]  =  rhs
    [ J_I                  0         -Z^-1 S - dc I] [dz]

with the slack and bound-dual steps recovered afterwards. Target inertia is
(n, m_E + m_I, 0); failures and wrong inertia raise the primal
regularization dw, singular constraint blocks add dc.
"""

from __future__ import annotations

import math
import time

import numpy as np
import scipy.sparse as sp

from .ldlt import FactorizationError, factor_kkt
from .solve import Solution, SolverOptions

_INF = math.inf

_KAPPA_SIGMA = 1e10
_S_MAX = 100.0


class _Problem:
    """Cached views of a ConstraintSystem for the IPM loop."""

    def __init__(self, sys):
        self.sys = sys
        self.n = sys.n_vars
        self.eq_idx = sys.eq_indices
        self.ineq_idx = sys.ineq_indices
        self.m_eq = len(self.eq_idx)
        self.m_ineq = len(self.ineq_idx)
        self.lower, self.upper = sys.bounds_arrays()
        self.has_lb = np.isfinite(self.lower)
        self.has_ub = np.isfinite(self.upper)
        self.grad = sys.objective_gradient()

    def constraints(self, x):
        vals = self.sys.constraint_values(x)
        return vals[self.eq_idx], vals[self.ineq_idx]

    def jacobians(self, x):
        J = self.sys.eval_jacobian(x)
        return J[self.eq_idx], J[self.ineq_idx]

    def hessian(self, lam, z):
        mult = np.zeros(self.sys.n_cons)
        if self.m_eq:
            mult[self.eq_idx] = lam
        if self.m_ineq:
            mult[self.ineq_idx] = z
        return self.sys.eval_lagrangian_hessian(mult)


def _push_into_bounds(x, lower, upper):
    kappa = 1e-2
    lo_pad = np.where(
        np.isfinite(lower),
        np.minimum(kappa * np.maximum(1.0, np.abs(lower)),
                   np.where(np.isfinite(upper), kappa * (upper - lower), _INF)),
        0.0,
    )
    hi_pad = np.where(
        np.isfinite(upper),
        np.minimum(kappa * np.maximum(1.0, np.abs(upper)),
                   np.where(np.isfinite(lower), kappa * (upper - lower), _INF)),
        0.0,
    )
    x = np.maximum(x, np.where(np.isfinite(lower), lower + lo_pad, -_INF))
    x = np.minimum(x, np.where(np.isfinite(upper), upper - hi_pad, _INF))
    return x


def _fraction_to_boundary(v, dv, tau):
    """Largest alpha in (0, 1] with v + alpha dv >= (1 - tau) v."""
    mask = dv < 0
    if not np.any(mask):
        return 1.0
    return float(min(1.0, np.min(-tau * v[mask] / dv[mask])))


def ipm_solve(sys, opts: SolverOptions | None = None) -> Solution:
    """Solve min c'x subject to the system's constraints and bounds."""
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    prob = _Problem(sys)
    n, m_eq, m_ineq = prob.n, prob.m_eq, prob.m_ineq
    if n == 0:
        return Solution("optimal", np.zeros(0), objective=sys.objective_const,
                        wall_time=time.perf_counter() - t0)
    lower, upper = prob.lower, prob.upper
    has_lb, has_ub = prob.has_lb, prob.has_ub
    n_bounded = int(has_lb.sum() + has_ub.sum())
    has_barrier = bool(m_ineq or n_bounded)

    x = _push_into_bounds(sys.initial_point(), lower, upper)
    g_eq, g_ineq = prob.constraints(x)
    mu = opts.mu_init if has_barrier else 0.0
    s = np.maximum(1e-4, -g_ineq) if m_ineq else np.zeros(0)
    lam = np.zeros(m_eq)
    z = np.minimum(np.maximum(mu / s, 1e-8), 1e8) if m_ineq else np.zeros(0)
    vL = np.where(has_lb, mu / np.maximum(x - lower, 1e-8), 0.0)
    vU = np.where(has_ub, mu / np.maximum(upper - x, 1e-8), 0.0)

    delta_w_last = 0.0
    nu = 1.0  # merit penalty

    def dual_infeasibility(x, lam, z, vL, vU, J_eq, J_ineq):
        r = prob.grad.copy()
        if m_eq:
            r += J_eq.T @ lam
        if m_ineq:
            r += J_ineq.T @ z
        r -= vL
        r += vU
        return r

    def kkt_error(x, s, lam, z, vL, vU, g_eq, g_ineq, J_eq, J_ineq, mu_val):
        r_d = dual_infeasibility(x, lam, z, vL, vU, J_eq, J_ineq)
        denom = m_eq + m_ineq + n_bounded
        mult_sum = (
            np.abs(lam).sum() + np.abs(z).sum() + vL[has_lb].sum() + vU[has_ub].sum()
        )
        s_d = max(_S_MAX, mult_sum / max(denom, 1)) / _S_MAX
        s_c = max(
            _S_MAX,
            (z.sum() + vL[has_lb].sum() + vU[has_ub].sum()) / max(m_ineq + n_bounded, 1),
        ) / _S_MAX
        err = np.abs(r_d).max(initial=0.0) / s_d
        if m_eq:
            err = max(err, np.abs(g_eq).max())
        if m_ineq:
            err = max(err, np.abs(g_ineq + s).max())
            err = max(err, np.abs(s * z - mu_val).max() / s_c)
        if n_bounded:
            cl = (x - lower)[has_lb] * vL[has_lb] - mu_val
            cu = (upper - x)[has_ub] * vU[has_ub] - mu_val
            if cl.size:
                err = max(err, np.abs(cl).max() / s_c)
            if cu.size:
                err = max(err, np.abs(cu).max() / s_c)
        return err

    def barrier_value(x, s):
        val = prob.grad @ x
        if m_ineq:
            if np.any(s <= 0):
                return _INF
            val -= mu * np.log(s).sum()
        if n_bounded:
            dl = (x - lower)[has_lb]
            du = (upper - x)[has_ub]
            if np.any(dl <= 0) or np.any(du <= 0):
                return _INF
            val -= mu * (np.log(dl).sum() + np.log(du).sum())
        return val

    def theta(g_eq, g_ineq, s):
        t = 0.0
        if m_eq:
            t += np.abs(g_eq).sum()
        if m_ineq:
            t += np.abs(g_ineq + s).sum()
        return t

    status = "iteration-limit"
    message = ""
    it = 0
    J_eq, J_ineq = prob.jacobians(x)
    for it in range(1, opts.max_iter + 1):
        err0 = kkt_error(x, s, lam, z, vL, vU, g_eq, g_ineq, J_eq, J_ineq, 0.0)
        if err0 <= opts.tol_kkt:
            status = "optimal"
            break
        if has_barrier:
            err_mu = kkt_error(x, s, lam, z, vL, vU, g_eq, g_ineq, J_eq, J_ineq, mu)
            while err_mu <= 10.0 * mu and mu > opts.tol_kkt / 10.0:
                mu = max(opts.tol_kkt / 10.0, opts.mu_reduction * mu)
                err_mu = kkt_error(x, s, lam, z, vL, vU, g_eq, g_ineq, J_eq, J_ineq, mu)

        W = prob.hessian(lam, z)
        sigma_b = np.zeros(n)
        np.add.at(
            sigma_b, np.where(has_lb)[0],
            (vL / np.maximum(x - lower, 1e-300))[has_lb],
        )
        np.add.at(
            sigma_b, np.where(has_ub)[0],
            (vU / np.maximum(upper - x, 1e-300))[has_ub],
        )
        phi = prob.grad.copy()
        if m_eq:
            phi += J_eq.T @ lam
        if m_ineq:
            phi += J_ineq.T @ z
        phi -= np.where(has_lb, mu / np.maximum(x - lower, 1e-300), 0.0)
        phi += np.where(has_ub, mu / np.maximum(upper - x, 1e-300), 0.0)
        rhs = -phi
        if m_eq:
            rhs = np.concatenate([rhs, -g_eq])
        if m_ineq:
            rhs = np.concatenate([rhs, -g_ineq - mu / z])

        sol_vec, delta_w_last, fail = _solve_kkt(
            W, sigma_b, J_eq, J_ineq, s, z, rhs, n, m_eq, m_ineq,
            delta_w_last, opts,
        )
        if fail:
            status = "numerical-failure"
            message = f"KKT regularization failed at iteration {it}"
            break
        dx = sol_vec[:n]
        dlam = sol_vec[n : n + m_eq]
        dz = sol_vec[n + m_eq :]
        ds = (-g_ineq - s - J_ineq @ dx) if m_ineq else np.zeros(0)
        dvL = np.where(
            has_lb,
            mu / np.maximum(x - lower, 1e-300) - vL
            - vL / np.maximum(x - lower, 1e-300) * dx,
            0.0,
        )
        dvU = np.where(
            has_ub,
            mu / np.maximum(upper - x, 1e-300) - vU
            + vU / np.maximum(upper - x, 1e-300) * dx,
            0.0,
        )

        tau = max(0.99, 1.0 - mu) if has_barrier else 1.0
        alpha_max = 1.0
        if m_ineq:
            alpha_max = min(alpha_max, _fraction_to_boundary(s, ds, tau))
        if n_bounded:
            lo_gap = (x - lower)[has_lb]
            alpha_max = min(alpha_max, _fraction_to_boundary(lo_gap, dx[has_lb], tau))
            hi_gap = (upper - x)[has_ub]
            alpha_max = min(alpha_max, _fraction_to_boundary(hi_gap, -dx[has_ub], tau))
        alpha_dual = 1.0
        if m_ineq:
            alpha_dual = min(alpha_dual, _fraction_to_boundary(z, dz, tau))
        if n_bounded:
            alpha_dual = min(alpha_dual, _fraction_to_boundary(vL[has_lb], dvL[has_lb], tau))
            alpha_dual = min(alpha_dual, _fraction_to_boundary(vU[has_ub], dvU[has_ub], tau))

        lam_trial_inf = np.abs(lam + dlam).max(initial=0.0)
        z_trial_inf = np.abs(z + dz).max(initial=0.0)
        nu = max(nu, 1.1 * max(lam_trial_inf, z_trial_inf) + 0.1)
        theta0 = theta(g_eq, g_ineq, s)
        phi0 = barrier_value(x, s)
        grad_bar_x = prob.grad.copy()
        grad_bar_x -= np.where(has_lb, mu / np.maximum(x - lower, 1e-300), 0.0)
        grad_bar_x += np.where(has_ub, mu / np.maximum(upper - x, 1e-300), 0.0)
        grad_phi_dx = float(grad_bar_x @ dx)
        if m_ineq:
            grad_phi_dx += float((-mu / s) @ ds)
        pred = grad_phi_dx - nu * theta0
        merit0 = phi0 + nu * theta0
        alpha = alpha_max
        accepted = False
        while alpha > 1e-12:
            x_t = x + alpha * dx
            s_t = s + alpha * ds if m_ineq else s
            g_eq_t, g_ineq_t = prob.constraints(x_t)
            merit_t = barrier_value(x_t, s_t) + nu * theta(g_eq_t, g_ineq_t, s_t)
            if math.isfinite(merit_t) and (
                merit_t <= merit0 + 1e-4 * alpha * min(pred, 0.0)
                or merit_t <= merit0 - 1e-12 * max(1.0, abs(merit0))
            ):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if delta_w_last < 1e-4:
                delta_w_last = max(delta_w_last * 100.0, 1e-4)
                continue
            status = "numerical-failure"
            message = f"line search failed at iteration {it} (restoration needed)"
            break
        x = x_t
        s = s_t
        g_eq, g_ineq = g_eq_t, g_ineq_t
        lam = lam + alpha * dlam
        z = z + alpha_dual * dz if m_ineq else z
        vL = vL + alpha_dual * dvL
        vU = vU + alpha_dual * dvU
        if m_ineq:
            z = np.clip(z, mu / (_KAPPA_SIGMA * s), _KAPPA_SIGMA * mu / s) if mu > 0 else z
            z = np.maximum(z, 1e-16)
        if n_bounded and mu > 0:
            gap_l = np.maximum(x - lower, 1e-300)
            vL = np.where(
                has_lb, np.clip(vL, mu / (_KAPPA_SIGMA * gap_l), _KAPPA_SIGMA * mu / gap_l), vL
            )
            gap_u = np.maximum(upper - x, 1e-300)
            vU = np.where(
                has_ub, np.clip(vU, mu / (_KAPPA_SIGMA * gap_u), _KAPPA_SIGMA * mu / gap_u), vU
            )
        J_eq, J_ineq = prob.jacobians(x)
        if opts.verbose:
            print(
                f"ipm iter {it}: mu={mu:.2e} err={err0:.2e} alpha={alpha:.2e} "
                f"obj={prob.grad @ x + sys.objective_const:.6e}"
            )

    g_eq, g_ineq = prob.constraints(x)
    J_eq, J_ineq = prob.jacobians(x)
    final_err = kkt_error(x, s, lam, z, vL, vU, g_eq, g_ineq, J_eq, J_ineq, 0.0)
    if status == "optimal" and final_err > opts.tol_kkt:
        status = "numerical-failure"
        message = f"KKT error {final_err:.2e} above tolerance after convergence check"
    resid = sys.eval_residuals(x)
    duals = np.zeros(sys.n_cons)
    if m_eq:
        duals[prob.eq_idx] = lam
    if m_ineq:
        duals[prob.ineq_idx] = z
    return Solution(
        status=status,
        x=x,
        objective=float(prob.grad @ x) + sys.objective_const,
        iterations=it,
        wall_time=time.perf_counter() - t0,
        duals_eq=lam,
        duals_ineq=z,
        kkt_error=float(final_err),
        max_residual=float(np.abs(resid).max()) if len(resid) else 0.0,
        message=message,
    )


def _solve_kkt(W, sigma_b, J_eq, J_ineq, s, z, rhs, n, m_eq, m_ineq,
               delta_w_last, opts):
    """Factor and solve the condensed KKT system with inertia correction."""
    target = (n, m_eq + m_ineq)
    delta_w = 0.0
    delta_c = 0.0
    attempt = 0
    while attempt < 40:
        attempt += 1
        blocks = [[None] * 3 for _ in range(3)]
        H = (W + sp.diags(sigma_b + delta_w)).tocsc()
        blocks[0][0] = H
        if m_eq:
            blocks[0][1] = J_eq.T
            blocks[1][0] = J_eq
            blocks[1][1] = -sp.identity(m_eq) * max(delta_c, 1e-300)
        if m_ineq:
            blocks[0][2] = J_ineq.T
            blocks[2][0] = J_ineq
            blocks[2][2] = -sp.diags(s / z + delta_c)
        keep = [0] + ([1] if m_eq else []) + ([2] if m_ineq else [])
        K = sp.bmat(
            [[blocks[r][c] for c in keep] for r in keep], format="csc"
        )
        try:
            fac = factor_kkt(K, opts.dense_threshold)
        except FactorizationError:
            fac = None
        if fac is not None and fac.inertia[0] == target[0] and fac.inertia[2] == 0:
            sol = fac.solve(rhs)
            # iterative refinement; reject garbage from ill conditioning
            rhs_scale = max(1.0, np.abs(rhs).max(initial=0.0))
            for _ in range(3):
                r = rhs - K @ sol
                if np.abs(r).max(initial=0.0) <= 1e-9 * rhs_scale:
                    break
                sol = sol + fac.solve(r)
            r = rhs - K @ sol
            if np.all(np.isfinite(sol)) and np.abs(r).max(initial=0.0) <= 1e-6 * rhs_scale:
                return sol, delta_w, False
        if fac is not None and fac.inertia[2] > 0 and delta_c == 0.0:
            delta_c = 1e-8
        if delta_w == 0.0:
            delta_w = 1e-4 if delta_w_last == 0.0 else max(
                opts.regularization_min, delta_w_last / 3.0
            )
            delta_c = max(delta_c, 1e-10)
        else:
            delta_w *= 8.0 if delta_w_last != 0.0 else 100.0
        if delta_w > 1e40:
            break
    return np.zeros(n + m_eq + m_ineq), delta_w, True
