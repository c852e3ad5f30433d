"""Compiled numerical kernels for the per-tick hot paths.

Everything here operates on flat float64 arrays: the robot description
packed by ``model.RobotModel.params`` and the environment/force vector
packed by ``environment.pack_envp``. The readable numpy implementations in
:mod:`wbic.model` define the semantics; the test suite cross-checks the two
to tight tolerances. Keep ``fastmath`` off — benchmark runs must be
bit-reproducible.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .environment import (
    ENVP_ACTIVE,
    ENVP_B,
    ENVP_FEEX,
    ENVP_FEEY,
    ENVP_FS,
    ENVP_K,
    ENVP_M,
    ENVP_PREFX,
    ENVP_PREFY,
    ENVP_VX,
    ENVP_VY,
    ENVP_X0,
    ENVP_XREF,
)

# params layout (see model._pack_params):
#   [n, m_act, g, ee_ox, ee_oy]
#   per joint j at 5 + 5 j: [kind, off_x, off_y, ax_x, ax_y]
#   per link i at 5 + 5 n + 5 i: [mass, com_x, com_y, inertia, viscous]
#   actuated indices at 5 + 10 n


@njit(cache=True)
def _chol_solve(A, b):
    """Solve A z = b for symmetric positive definite A (in-place copies)."""
    n = A.shape[0]
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    z = b.copy()
    for i in range(n):
        for k in range(i):
            z[i] -= L[i, k] * z[k]
        z[i] /= L[i, i]
    for i in range(n - 1, -1, -1):
        for k in range(i + 1, n):
            z[i] -= L[k, i] * z[k]
        z[i] /= L[i, i]
    return z


@njit(cache=True)
def _chol_lower_solve(L, rhs):
    """Solve (L L') z = rhs given the lower Cholesky factor."""
    nu = L.shape[0]
    z = rhs.copy()
    for i in range(nu):
        for t in range(i):
            z[i] -= L[i, t] * z[t]
        z[i] /= L[i, i]
    for i in range(nu - 1, -1, -1):
        for t in range(i + 1, nu):
            z[i] -= L[t, i] * z[t]
        z[i] /= L[i, i]
    return z


@njit(cache=True)
def chain_eval(params, q, qd):
    """Mass matrix, bias forces and end-effector data in one chain sweep.

    Returns (M, bias, J_ee, ee) with
    ee = [px, py, phi, vx, vy, omega, drift_ax, drift_ay].
    """
    n = int(params[0])
    g = params[2]

    jp = np.empty((n, 2))
    pphi = np.empty(n)
    lphi = np.empty(n)
    cpos = np.empty((n, 2))
    cacc = np.empty((n, 2))

    px = 0.0
    py = 0.0
    vx = 0.0
    vy = 0.0
    ax = 0.0
    ay = 0.0
    phi = 0.0
    om = 0.0
    for j in range(n):
        base = 5 + 5 * j
        kind = params[base]
        ox = params[base + 1]
        oy = params[base + 2]
        c = np.cos(phi)
        s = np.sin(phi)
        pphi[j] = phi
        if kind == 0.0:
            axx = params[base + 3]
            axy = params[base + 4]
            awx = c * axx - s * axy
            awy = s * axx + c * axy
            rx = c * ox - s * oy + awx * q[j]
            ry = s * ox + c * oy + awy * q[j]
            px += rx
            py += ry
            vx += -om * ry + awx * qd[j]
            vy += om * rx + awy * qd[j]
            ax += -om * om * rx - 2.0 * om * qd[j] * awy
            ay += -om * om * ry + 2.0 * om * qd[j] * awx
        else:
            rx = c * ox - s * oy
            ry = s * ox + c * oy
            px += rx
            py += ry
            vx += -om * ry
            vy += om * rx
            ax += -om * om * rx
            ay += -om * om * ry
            phi += q[j]
            om += qd[j]
        jp[j, 0] = px
        jp[j, 1] = py
        lphi[j] = phi
        lbase = 5 + 5 * n + 5 * j
        cxl = params[lbase + 1]
        cyl = params[lbase + 2]
        cc = np.cos(phi)
        cs = np.sin(phi)
        rcx = cc * cxl - cs * cyl
        rcy = cs * cxl + cc * cyl
        cpos[j, 0] = px + rcx
        cpos[j, 1] = py + rcy
        cacc[j, 0] = ax - om * om * rcx
        cacc[j, 1] = ay - om * om * rcy

    M = np.zeros((n, n))
    bias = np.zeros(n)
    Jv = np.empty((2, n))
    jw = np.empty(n)
    for i in range(n):
        lbase = 5 + 5 * n + 5 * i
        mass = params[lbase]
        iner = params[lbase + 3]
        for j in range(i + 1):
            base = 5 + 5 * j
            if params[base] == 0.0:
                c = np.cos(pphi[j])
                s = np.sin(pphi[j])
                axx = params[base + 3]
                axy = params[base + 4]
                Jv[0, j] = c * axx - s * axy
                Jv[1, j] = s * axx + c * axy
                jw[j] = 0.0
            else:
                Jv[0, j] = -(cpos[i, 1] - jp[j, 1])
                Jv[1, j] = cpos[i, 0] - jp[j, 0]
                jw[j] = 1.0
        aex = cacc[i, 0]
        aey = cacc[i, 1] + g
        for r in range(i + 1):
            bias[r] += mass * (Jv[0, r] * aex + Jv[1, r] * aey)
            for cidx in range(i + 1):
                M[r, cidx] += mass * (
                    Jv[0, r] * Jv[0, cidx] + Jv[1, r] * Jv[1, cidx]
                ) + iner * jw[r] * jw[cidx]
    for j in range(n):
        bias[j] += params[5 + 5 * n + 5 * j + 4] * qd[j]

    phi_e = lphi[n - 1]
    om_e = 0.0
    for j in range(n):
        if params[5 + 5 * j] != 0.0:
            om_e += qd[j]
    ce = np.cos(phi_e)
    se = np.sin(phi_e)
    rex = ce * params[3] - se * params[4]
    rey = se * params[3] + ce * params[4]
    eex = jp[n - 1, 0] + rex
    eey = jp[n - 1, 1] + rey
    J = np.empty((2, n))
    for j in range(n):
        base = 5 + 5 * j
        if params[base] == 0.0:
            c = np.cos(pphi[j])
            s = np.sin(pphi[j])
            axx = params[base + 3]
            axy = params[base + 4]
            J[0, j] = c * axx - s * axy
            J[1, j] = s * axx + c * axy
        else:
            J[0, j] = -(eey - jp[j, 1])
            J[1, j] = eex - jp[j, 0]
    evx = 0.0
    evy = 0.0
    for j in range(n):
        evx += J[0, j] * qd[j]
        evy += J[1, j] * qd[j]
    ee = np.empty(8)
    ee[0] = eex
    ee[1] = eey
    ee[2] = phi_e
    ee[3] = evx
    ee[4] = evy
    ee[5] = om_e
    ee[6] = ax - om_e * om_e * rex
    ee[7] = ay - om_e * om_e * rey
    return M, bias, J, ee


@njit(cache=True)
def qdd_coupled(params, envp, q, qd, tau):
    """Joint accelerations and contact force of the coupled system.

    The environment inertia is folded into the joint-space mass matrix
    through the projected row j = v' J_ee, which keeps the grasp constraint
    satisfied exactly (no drift to stabilize).
    """
    n = int(params[0])
    m_act = int(params[1])
    M, bias, J, ee = chain_eval(params, q, qd)
    rhs = -bias
    feex = envp[ENVP_FEEX]
    feey = envp[ENVP_FEEY]
    for r in range(n):
        rhs[r] -= J[0, r] * feex + J[1, r] * feey
    abase = 5 + 10 * n
    for i in range(m_act):
        rhs[int(params[abase + i])] += tau[i]
    lam = 0.0
    if envp[ENVP_ACTIVE] > 0.5:
        vx = envp[ENVP_VX]
        vy = envp[ENVP_VY]
        me = envp[ENVP_M]
        be = envp[ENVP_B]
        ke = envp[ENVP_K]
        fs = envp[ENVP_FS]
        x = envp[ENVP_XREF] + vx * (ee[0] - envp[ENVP_PREFX]) + vy * (
            ee[1] - envp[ENVP_PREFY]
        )
        xd = vx * ee[3] + vy * ee[4]
        adr = vx * ee[6] + vy * ee[7]
        hold = be * xd + ke * (x - envp[ENVP_X0]) + fs
        jrow = np.empty(n)
        for c in range(n):
            jrow[c] = vx * J[0, c] + vy * J[1, c]
        for r in range(n):
            rhs[r] -= jrow[r] * (me * adr + hold)
            for c in range(n):
                M[r, c] += me * jrow[r] * jrow[c]
        qdd = _chol_solve(M, rhs)
        acc = adr
        for c in range(n):
            acc += jrow[c] * qdd[c]
        lam = me * acc + hold
    else:
        qdd = _chol_solve(M, rhs)
    return qdd, lam


@njit(cache=True)
def f_cont(params, envp, x, tau):
    n = int(params[0])
    qdd, _ = qdd_coupled(params, envp, x[:n], x[n:], tau)
    out = np.empty(2 * n)
    for i in range(n):
        out[i] = x[n + i]
        out[n + i] = qdd[i]
    return out


@njit(cache=True)
def rk4_step(params, envp, x, tau, dt):
    k1 = f_cont(params, envp, x, tau)
    k2 = f_cont(params, envp, x + 0.5 * dt * k1, tau)
    k3 = f_cont(params, envp, x + 0.5 * dt * k2, tau)
    k4 = f_cont(params, envp, x + dt * k3, tau)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def rk4_multi(params, envp, x, tau, dt, steps):
    """RK4 over dt in ``steps`` substeps with the input held constant.

    The optimal-control grid is coarse (tens of ms); a strongly damped
    environment belief can push the contact dynamics outside the stability
    region of a single step, and the integrator must stay usable for any
    belief the identifier can produce.
    """
    h = dt / steps
    out = x
    for _ in range(steps):
        out = rk4_step(params, envp, out, tau, h)
    return out


@njit(cache=True)
def step_with_contact(params, envp, x, tau, dt):
    """One RK4 step plus the contact force at the pre-step state."""
    n = int(params[0])
    _, lam = qdd_coupled(params, envp, x[:n], x[n:], tau)
    return rk4_step(params, envp, x, tau, dt), lam


@njit(cache=True)
def rollout_open(params, envp, x0, U, dt, steps):
    N = U.shape[0]
    nx = x0.shape[0]
    X = np.empty((N + 1, nx))
    X[0] = x0
    for k in range(N):
        X[k + 1] = rk4_multi(params, envp, X[k], U[k], dt, steps)
    return X


@njit(cache=True)
def rollout_feedback(params, envp, x0, X_nom, U_nom, K, kff, alpha, dt, u_clip, steps):
    """Closed-loop rollout u = u_nom + alpha kff + K (x - x_nom).

    Inputs are clamped to +-u_clip to keep diverging trials finite; the
    line search rejects them through their cost.
    """
    N = U_nom.shape[0]
    nx = x0.shape[0]
    nu = U_nom.shape[1]
    X = np.empty((N + 1, nx))
    U = np.empty((N, nu))
    X[0] = x0
    for k in range(N):
        for i in range(nu):
            du = alpha * kff[k, i]
            for j in range(nx):
                du += K[k, i, j] * (X[k, j] - X_nom[k, j])
            u = U_nom[k, i] + du
            if u > u_clip[i]:
                u = u_clip[i]
            elif u < -u_clip[i]:
                u = -u_clip[i]
            U[k, i] = u
        X[k + 1] = rk4_multi(params, envp, X[k], U[k], dt, steps)
        ok = True
        for j in range(nx):
            if not np.isfinite(X[k + 1, j]):
                ok = False
        if not ok:
            for kk in range(k + 1, N):
                X[kk + 1] = X[k + 1]
                U[kk] = U_nom[kk]
            break
    return X, U


@njit(cache=True)
def linearize_traj(params, envp, X, U, dt, steps):
    """Discrete-time linearization (A_k, B_k) along a trajectory.

    Central differences of the integrator step itself, so the linear model
    stays consistent with the rollout map at any state. (Freezing the
    continuous coefficients over the interval is cheaper but its error
    grows with how far the state moves within a step, which corrupts the
    search direction exactly on the aggressive trajectories the solver
    must pass through.)
    """
    N = U.shape[0]
    n = int(params[0])
    m_act = int(params[1])
    nx = 2 * n
    A = np.empty((N, nx, nx))
    B = np.empty((N, nx, m_act))
    for k in range(N):
        x = X[k]
        u = U[k]
        for c in range(nx):
            h = 1e-6 * (1.0 + abs(x[c]))
            xp = x.copy()
            xm = x.copy()
            xp[c] += h
            xm[c] -= h
            fp = rk4_multi(params, envp, xp, u, dt, steps)
            fm = rk4_multi(params, envp, xm, u, dt, steps)
            for r in range(nx):
                A[k, r, c] = (fp[r] - fm[r]) / (2.0 * h)
        for c in range(m_act):
            h = 1e-6 * (1.0 + abs(u[c]))
            up = u.copy()
            um = u.copy()
            up[c] += h
            um[c] -= h
            fp = rk4_multi(params, envp, x, up, dt, steps)
            fm = rk4_multi(params, envp, x, um, dt, steps)
            for r in range(nx):
                B[k, r, c] = (fp[r] - fm[r]) / (2.0 * h)
    return A, B


@njit(cache=True)
def ee_batch(params, X):
    """End-effector position, orientation and Jacobian at every node."""
    N1 = X.shape[0]
    n = int(params[0])
    P = np.empty((N1, 2))
    Phi = np.empty(N1)
    Js = np.empty((N1, 2, n))
    for k in range(N1):
        _, _, J, ee = chain_eval(params, X[k, :n], X[k, n:])
        P[k, 0] = ee[0]
        P[k, 1] = ee[1]
        Phi[k] = ee[2]
        Js[k] = J
    return P, Phi, Js


@njit(cache=True)
def _wrap(a):
    # O(1) wrap to (-pi, pi]; must stay cheap even for wildly diverged
    # rollout angles passing through the cost.
    w = a - 2.0 * np.pi * np.round(a / (2.0 * np.pi))
    if w <= -np.pi:
        w += 2.0 * np.pi
    return w


@njit(cache=True)
def barrier_value(h, mu, delta):
    """Relaxed log barrier: -mu ln h, extended quadratically below delta."""
    if h > delta:
        return -mu * np.log(h)
    z = (h - 2.0 * delta) / delta
    return mu * (0.5 * (z * z - 1.0) - np.log(delta))


@njit(cache=True)
def barrier_derivs(h, mu, delta):
    """(first, second) derivative of the relaxed log barrier wrt h."""
    if h > delta:
        return -mu / h, mu / (h * h)
    return mu * (h - 2.0 * delta) / (delta * delta), mu / (delta * delta)


@njit(cache=True)
def cost_eval(
    params,
    X,
    U,
    xss_ref,
    ee_ref,
    u_ref,
    qss,
    qee,
    rdiag,
    dt,
    mu_u,
    u_lo,
    u_hi,
    delta_u,
    mu_q,
    q_lo,
    q_hi,
    delta_q,
):
    """Total trajectory cost: tracking + input effort + soft constraints.

    Stage terms are integrated with the rectangle rule; the terminal node
    contributes one extra state-cost rectangle. Infeasible or non-finite
    trajectories return a large sentinel cost.
    """
    N = U.shape[0]
    n = int(params[0])
    nx = 2 * n
    nu = U.shape[1]
    total = 0.0
    for k in range(N + 1):
        for j in range(nx):
            if not np.isfinite(X[k, j]):
                return 1e30
        _, _, J, ee = chain_eval(params, X[k, :n], X[k, n:])
        lx = 0.0
        for j in range(nx):
            d = xss_ref[k, j] - X[k, j]
            lx += qss[j] * d * d
        ex = ee_ref[k, 0] - ee[0]
        ey = ee_ref[k, 1] - ee[1]
        ephi = _wrap(ee_ref[k, 2] - ee[2])
        lx += qee[0] * ex * ex + qee[1] * ey * ey + qee[2] * ephi * ephi
        for j in range(n):
            if delta_q[j] > 0.0:
                lx += barrier_value(q_hi[j] - X[k, j], mu_q, delta_q[j])
                lx += barrier_value(X[k, j] - q_lo[j], mu_q, delta_q[j])
        total += lx * dt
        if k < N:
            lu = 0.0
            for i in range(nu):
                d = u_ref[k, i] - U[k, i]
                lu += rdiag[i] * d * d
                if delta_u[i] > 0.0:
                    lu += barrier_value(u_hi[i] - U[k, i], mu_u, delta_u[i])
                    lu += barrier_value(U[k, i] - u_lo[i], mu_u, delta_u[i])
            total += lu * dt
    if not np.isfinite(total):
        return 1e30
    return total


@njit(cache=True)
def cost_quadratize(
    params,
    X,
    U,
    xss_ref,
    ee_ref,
    u_ref,
    qss,
    qee,
    rdiag,
    dt,
    mu_u,
    u_lo,
    u_hi,
    delta_u,
    mu_q,
    q_lo,
    q_hi,
    delta_q,
):
    """Gauss-Newton quadratic model of the cost about (X, U).

    Task-space terms are quadratized through the end-effector Jacobian
    (Gauss-Newton: curvature of the kinematics is dropped), which keeps the
    state Hessians positive semidefinite by construction.
    """
    N = U.shape[0]
    n = int(params[0])
    nx = 2 * n
    nu = U.shape[1]
    Qxx = np.zeros((N + 1, nx, nx))
    qx = np.zeros((N + 1, nx))
    Ruu = np.zeros((N, nu, nu))
    ru = np.zeros((N, nu))
    total = 0.0
    for k in range(N + 1):
        _, _, J, ee = chain_eval(params, X[k, :n], X[k, n:])
        lx = 0.0
        for j in range(nx):
            d = xss_ref[k, j] - X[k, j]
            lx += qss[j] * d * d
            qx[k, j] += -2.0 * qss[j] * d * dt
            Qxx[k, j, j] += 2.0 * qss[j] * dt
        ex = ee_ref[k, 0] - ee[0]
        ey = ee_ref[k, 1] - ee[1]
        ephi = _wrap(ee_ref[k, 2] - ee[2])
        lx += qee[0] * ex * ex + qee[1] * ey * ey + qee[2] * ephi * ephi
        # e = ref - ee(q), so de/dq is -J for the position rows and -jw
        # for the orientation row; the gradient of w e^2 is 2 w e de/dq.
        for a in range(n):
            ja = 5 + 5 * a
            jwa = 0.0 if params[ja] == 0.0 else 1.0
            ga = -2.0 * (qee[0] * ex * J[0, a] + qee[1] * ey * J[1, a])
            ga += -2.0 * qee[2] * ephi * jwa
            qx[k, a] += ga * dt
            for b in range(n):
                jb = 5 + 5 * b
                jwb = 0.0 if params[jb] == 0.0 else 1.0
                hab = 2.0 * (
                    qee[0] * J[0, a] * J[0, b]
                    + qee[1] * J[1, a] * J[1, b]
                    + qee[2] * jwa * jwb
                )
                Qxx[k, a, b] += hab * dt
        for j in range(n):
            if delta_q[j] > 0.0:
                h1 = q_hi[j] - X[k, j]
                h2 = X[k, j] - q_lo[j]
                lx += barrier_value(h1, mu_q, delta_q[j])
                lx += barrier_value(h2, mu_q, delta_q[j])
                d1, dd1 = barrier_derivs(h1, mu_q, delta_q[j])
                d2, dd2 = barrier_derivs(h2, mu_q, delta_q[j])
                qx[k, j] += (-d1 + d2) * dt
                Qxx[k, j, j] += (dd1 + dd2) * dt
        total += lx * dt
        if k < N:
            lu = 0.0
            for i in range(nu):
                d = u_ref[k, i] - U[k, i]
                lu += rdiag[i] * d * d
                ru[k, i] += -2.0 * rdiag[i] * d * dt
                Ruu[k, i, i] += 2.0 * rdiag[i] * dt
                if delta_u[i] > 0.0:
                    h1 = u_hi[i] - U[k, i]
                    h2 = U[k, i] - u_lo[i]
                    lu += barrier_value(h1, mu_u, delta_u[i])
                    lu += barrier_value(h2, mu_u, delta_u[i])
                    d1, dd1 = barrier_derivs(h1, mu_u, delta_u[i])
                    d2, dd2 = barrier_derivs(h2, mu_u, delta_u[i])
                    ru[k, i] += (-d1 + d2) * dt
                    Ruu[k, i, i] += (dd1 + dd2) * dt
            total += lu * dt
    return Qxx, qx, Ruu, ru, total


@njit(cache=True)
def backward_pass(A, B, Qxx, qx, Ruu, ru, reg):
    """Regularized LQ backward sweep.

    Returns (K, kff, dv1, dv2, ok, grad_inf) where dv1/dv2 are the expected
    cost-change coefficients (linear and quadratic in the step length) and
    grad_inf is the largest |dJ/du| entry along the sweep.
    """
    N, nx, nu = B.shape[0], B.shape[1], B.shape[2]
    K = np.zeros((N, nu, nx))
    kff = np.zeros((N, nu))
    Vxx = Qxx[N].copy()
    vx = qx[N].copy()
    dv1 = 0.0
    dv2 = 0.0
    grad_inf = 0.0
    for k in range(N - 1, -1, -1):
        Ak = A[k]
        Bk = B[k]
        BtV = Bk.T @ Vxx
        Qu = ru[k] + Bk.T @ vx
        Quu = Ruu[k] + BtV @ Bk
        Qux = BtV @ Ak
        Qx = qx[k] + Ak.T @ vx
        Qxxk = Qxx[k] + Ak.T @ Vxx @ Ak
        # Gains come from the regularized input block; the value recursion
        # below uses the unregularized one so Vxx stays a true cost-to-go
        # model. Large reg sends both gains to zero, so a small enough step
        # always reduces the true cost.
        Quu_r = Quu.copy()
        Qux_r = Qux
        for i in range(nu):
            Quu_r[i, i] += reg + 1e-12
            if abs(Qu[i]) > grad_inf:
                grad_inf = abs(Qu[i])
        # Cholesky factor; bail out if not positive definite.
        L = np.zeros((nu, nu))
        spd = True
        for i in range(nu):
            for j in range(i + 1):
                s = Quu_r[i, j]
                for t in range(j):
                    s -= L[i, t] * L[j, t]
                if i == j:
                    if s <= 0.0 or not np.isfinite(s):
                        spd = False
                        break
                    L[i, i] = np.sqrt(s)
                else:
                    L[i, j] = s / L[j, j]
            if not spd:
                break
        if not spd:
            return K, kff, 0.0, 0.0, False, grad_inf
        kf = -_chol_lower_solve(L, Qu)
        Km = np.empty((nu, nx))
        for c in range(nx):
            Km[:, c] = -_chol_lower_solve(L, Qux_r[:, c].copy())
        kff[k] = kf
        K[k] = Km
        dv1 += kf @ Qu
        dv2 += kf @ Quu @ kf
        Vxx = Qxxk + Km.T @ Quu @ Km + Km.T @ Qux + Qux.T @ Km
        Vxx = 0.5 * (Vxx + Vxx.T)
        vx = Qx + Km.T @ Quu @ kf + Km.T @ Qu + Qux.T @ kf
    return K, kff, dv1, dv2, True, grad_inf


@njit(cache=True)
def momentum_terms(params, q, qd, tau):
    """Quantities for the generalized-momentum disturbance observer.

    Returns (p, idot_known) with p = M qd and
    idot_known = S' tau + Mdot qd - bias(q, qd); the observer integrates
    idot_known + r. Mdot qd is a directional difference along qd, accurate
    to O(h^2) in an analytic chain.
    """
    n = int(params[0])
    m_act = int(params[1])
    M, bias, _, _ = chain_eval(params, q, qd)
    p = M @ qd
    h = 1e-7
    qp = q + h * qd
    qm = q - h * qd
    Mp, _, _, _ = chain_eval(params, qp, qd)
    Mm, _, _, _ = chain_eval(params, qm, qd)
    idot = (Mp @ qd - Mm @ qd) / (2.0 * h) - bias
    abase = 5 + 10 * n
    for i in range(m_act):
        idot[int(params[abase + i])] += tau[i]
    return p, idot


@njit(cache=True)
def simulate_passive(params, x0, dt, steps):
    """Unforced rollout used by the energy-conservation checks."""
    n = int(params[0])
    m_act = int(params[1])
    envp = np.zeros(13)
    envp[1] = 1.0
    tau = np.zeros(m_act)
    x = x0.copy()
    for _ in range(steps):
        x = rk4_step(params, envp, x, tau, dt)
    return x
