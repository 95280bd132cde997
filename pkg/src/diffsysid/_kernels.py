"""Compiled planar-tree dynamics on packed jets.

Every scalar quantity is stored as a length-``P`` slice whose slot 0 is
the value and slots ``1..P-1`` are partial derivatives with respect to the
active parameters (forward-mode dual numbers). With ``P == 1`` the same
code computes plain values, and because slot 0 never reads the partial
slots the values are bit-identical for every ``P``.

Array conventions (``L`` links, ``J`` joints):

* ``q``, ``qd``: ``(J, P)`` jets
* ``mass``: ``(L, P)``; ``com``: ``(L, 2, P)``; ``damp``, ``fric``: ``(J, P)``
* ``parent``, ``jol`` (joint of link), ``loj`` (link of joint): int arrays
* ``pairs``: rows ``(j, k, deeper_link)`` of coupled joints, ``j <= k``
"""

import numpy as np
from numba import njit

# -- jet helpers -----------------------------------------------------------


@njit(inline="always")
def _jmul(out, a, b):
    a0 = a[0]
    b0 = b[0]
    for p in range(1, out.shape[0]):
        out[p] = a0 * b[p] + b0 * a[p]
    out[0] = a0 * b0


@njit(inline="always")
def _jaxpy(out, a, b, s):
    """out += s * a * b"""
    a0 = a[0]
    b0 = b[0]
    for p in range(1, out.shape[0]):
        out[p] += s * (a0 * b[p] + b0 * a[p])
    out[0] += s * (a0 * b0)


@njit(inline="always")
def _jset(out, a):
    for p in range(out.shape[0]):
        out[p] = a[p]


@njit(inline="always")
def _jzero(out):
    for p in range(out.shape[0]):
        out[p] = 0.0


# -- kinematics ------------------------------------------------------------


@njit(cache=True)
def _kinematics(q, parent, jol, anchor, com, phi, cs, sn, O, C):
    L = parent.shape[0]
    P = q.shape[1]
    for l in range(L):
        pa = parent[l]
        if pa < 0:
            for p in range(P):
                phi[l, p] = 0.0
                O[l, 0, p] = 0.0
                O[l, 1, p] = 0.0
        else:
            k = jol[l]
            ax = anchor[l, 0]
            ay = anchor[l, 1]
            for p in range(P):
                phi[l, p] = phi[pa, p] + q[k, p]
                O[l, 0, p] = O[pa, 0, p] + (ax * cs[pa, p] - ay * sn[pa, p])
                O[l, 1, p] = O[pa, 1, p] + (ax * sn[pa, p] + ay * cs[pa, p])
        c0 = np.cos(phi[l, 0])
        s0 = np.sin(phi[l, 0])
        cs[l, 0] = c0
        sn[l, 0] = s0
        for p in range(1, P):
            cs[l, p] = -s0 * phi[l, p]
            sn[l, p] = c0 * phi[l, p]
        px0 = com[l, 0, 0]
        py0 = com[l, 1, 0]
        for p in range(1, P):
            C[l, 0, p] = O[l, 0, p] + (c0 * com[l, 0, p] + cs[l, p] * px0 - s0 * com[l, 1, p] - sn[l, p] * py0)
            C[l, 1, p] = O[l, 1, p] + (s0 * com[l, 0, p] + sn[l, p] * px0 + c0 * com[l, 1, p] + cs[l, p] * py0)
        C[l, 0, 0] = O[l, 0, 0] + (c0 * px0 - s0 * py0)
        C[l, 1, 0] = O[l, 1, 0] + (s0 * px0 + c0 * py0)


@njit(cache=True)
def fk_batch(qs, parent, jol, anchor, com):
    """Frame origins, absolute angles and world CoMs for each row of ``qs``."""
    T, J = qs.shape
    L = parent.shape[0]
    q = np.zeros((J, 1))
    comj = np.zeros((L, 2, 1))
    comj[:, :, 0] = com
    phi = np.zeros((L, 1))
    cs = np.zeros((L, 1))
    sn = np.zeros((L, 1))
    O = np.zeros((L, 2, 1))
    C = np.zeros((L, 2, 1))
    origins = np.zeros((T, L, 2))
    angles = np.zeros((T, L))
    coms = np.zeros((T, L, 2))
    for t in range(T):
        q[:, 0] = qs[t]
        _kinematics(q, parent, jol, anchor, comj, phi, cs, sn, O, C)
        origins[t] = O[:, :, 0]
        angles[t] = phi[:, 0]
        coms[t] = C[:, :, 0]
    return origins, angles, coms


# -- dynamics --------------------------------------------------------------


@njit(cache=True)
def _mass_and_bias(q, qd, mass, com, inertia, parent, jol, loj, anchor, pairs, gx, gy, wk, M, bias):
    """Mass matrix ``M`` (J, J, P) and bias forces (J, P) at ``(q, qd)``.

    Uses subtree (composite) sums of mass, first and second moments and of
    the velocity-product accelerations, so that
    ``M[j, k] = sum_i m_i (C_i - O_j).(C_i - O_k) + I_i`` over the common
    subtree and ``bias_k = sum_i m_i perp(C_i - O_k).(a_i - g)``.
    """
    phi, cs, sn, O, C, w, aO, aC, Ms, S, Q, F, T, t1, t2, t3 = wk
    L = parent.shape[0]
    J = q.shape[0]
    P = q.shape[1]
    _kinematics(q, parent, jol, anchor, com, phi, cs, sn, O, C)

    # velocity-product accelerations (zero joint accelerations)
    for l in range(L):
        pa = parent[l]
        if pa < 0:
            for p in range(P):
                w[l, p] = 0.0
                aO[l, 0, p] = 0.0
                aO[l, 1, p] = 0.0
        else:
            k = jol[l]
            wp0 = w[pa, 0]
            w2 = wp0 * wp0
            rx0 = O[l, 0, 0] - O[pa, 0, 0]
            ry0 = O[l, 1, 0] - O[pa, 1, 0]
            for p in range(1, P):
                dw2 = 2.0 * wp0 * w[pa, p]
                aO[l, 0, p] = aO[pa, 0, p] - (w2 * (O[l, 0, p] - O[pa, 0, p]) + dw2 * rx0)
                aO[l, 1, p] = aO[pa, 1, p] - (w2 * (O[l, 1, p] - O[pa, 1, p]) + dw2 * ry0)
            aO[l, 0, 0] = aO[pa, 0, 0] - w2 * rx0
            aO[l, 1, 0] = aO[pa, 1, 0] - w2 * ry0
            for p in range(P):
                w[l, p] = w[pa, p] + qd[k, p]
        wl0 = w[l, 0]
        w2 = wl0 * wl0
        rx0 = C[l, 0, 0] - O[l, 0, 0]
        ry0 = C[l, 1, 0] - O[l, 1, 0]
        for p in range(1, P):
            dw2 = 2.0 * wl0 * w[l, p]
            aC[l, 0, p] = aO[l, 0, p] - (w2 * (C[l, 0, p] - O[l, 0, p]) + dw2 * rx0)
            aC[l, 1, p] = aO[l, 1, p] - (w2 * (C[l, 1, p] - O[l, 1, p]) + dw2 * ry0)
        aC[l, 0, 0] = aO[l, 0, 0] - w2 * rx0
        aC[l, 1, 0] = aO[l, 1, 0] - w2 * ry0

    # per-link moments; gravity enters as a = aC - g
    for l in range(L):
        m = mass[l]
        _jset(Ms[l], m)
        _jmul(S[l, 0], m, C[l, 0])
        _jmul(S[l, 1], m, C[l, 1])
        # Q = m |C|^2 + I
        _jmul(t1, C[l, 0], C[l, 0])
        _jaxpy(t1, C[l, 1], C[l, 1], 1.0)
        _jmul(Q[l], m, t1)
        Q[l, 0] += inertia[l]
        # F = m a
        _jset(t2, aC[l, 0])
        t2[0] -= gx
        _jset(t3, aC[l, 1])
        t3[0] -= gy
        _jmul(F[l, 0], m, t2)
        _jmul(F[l, 1], m, t3)
        # T = m perp(C) . a = m (C_x a_y - C_y a_x)
        _jmul(t1, C[l, 0], t3)
        _jaxpy(t1, C[l, 1], t2, -1.0)
        _jmul(T[l], m, t1)
    for l in range(L - 1, 0, -1):
        pa = parent[l]
        for p in range(P):
            Ms[pa, p] += Ms[l, p]
            S[pa, 0, p] += S[l, 0, p]
            S[pa, 1, p] += S[l, 1, p]
            Q[pa, p] += Q[l, p]
            F[pa, 0, p] += F[l, 0, p]
            F[pa, 1, p] += F[l, 1, p]
            T[pa, p] += T[l, p]

    for j in range(J):
        for k in range(J):
            for p in range(P):
                M[j, k, p] = 0.0
    for r in range(pairs.shape[0]):
        j = pairs[r, 0]
        k = pairs[r, 1]
        ld = pairs[r, 2]
        lj = loj[j]
        lk = loj[k]
        # Q - (O_j + O_k).S + Ms (O_j . O_k)
        _jset(t1, Q[ld])
        for p in range(P):
            t2[p] = O[lj, 0, p] + O[lk, 0, p]
            t3[p] = O[lj, 1, p] + O[lk, 1, p]
        _jaxpy(t1, t2, S[ld, 0], -1.0)
        _jaxpy(t1, t3, S[ld, 1], -1.0)
        _jmul(t2, O[lj, 0], O[lk, 0])
        _jaxpy(t2, O[lj, 1], O[lk, 1], 1.0)
        _jaxpy(t1, Ms[ld], t2, 1.0)
        for p in range(P):
            M[j, k, p] = t1[p]
            M[k, j, p] = t1[p]

    for k in range(J):
        lk = loj[k]
        # T - perp(O).F = T + O_y F_x - O_x F_y
        _jset(t1, T[lk])
        _jaxpy(t1, O[lk, 1], F[lk, 0], 1.0)
        _jaxpy(t1, O[lk, 0], F[lk, 1], -1.0)
        _jset(bias[k], t1)


@njit(cache=True)
def _joint_torque(q, qd, u, damp, fric, kp, kd, tlim, veps, tau):
    """Clamped PD minus viscous damping minus tanh-smoothed Coulomb friction."""
    J = q.shape[0]
    P = q.shape[1]
    for k in range(J):
        pd0 = kp[k] * (u[k] - q[k, 0]) - kd[k] * qd[k, 0]
        saturated = False
        if pd0 > tlim[k]:
            pd0 = tlim[k]
            saturated = True
        elif pd0 < -tlim[k]:
            pd0 = -tlim[k]
            saturated = True
        v0 = qd[k, 0]
        th = np.tanh(v0 / veps)
        dth = (1.0 - th * th) / veps
        b0 = damp[k, 0]
        f0 = fric[k, 0]
        for p in range(1, P):
            dpd = 0.0
            if not saturated:
                dpd = -kp[k] * q[k, p] - kd[k] * qd[k, p]
            tau[k, p] = dpd - (b0 * qd[k, p] + damp[k, p] * v0) - (f0 * dth * qd[k, p] + fric[k, p] * th)
        tau[k, 0] = pd0 - b0 * v0 - f0 * th


@njit(cache=True)
def _limit_spring(q, qlo, qhi, klim, tau):
    J = q.shape[0]
    P = q.shape[1]
    for k in range(J):
        if q[k, 0] > qhi[k]:
            for p in range(1, P):
                tau[k, p] -= klim * q[k, p]
            tau[k, 0] -= klim * (q[k, 0] - qhi[k])
        elif q[k, 0] < qlo[k]:
            for p in range(1, P):
                tau[k, p] -= klim * q[k, p]
            tau[k, 0] += klim * (qlo[k] - q[k, 0])


@njit(cache=True)
def _solve_spd(M, rhs, x, Lc, y):
    """Solve ``M x = rhs`` for jets: Cholesky on the values, implicit rule for partials."""
    J = M.shape[0]
    P = M.shape[2]
    for i in range(J):
        for j in range(i + 1):
            s = M[i, j, 0]
            for k in range(j):
                s -= Lc[i, k] * Lc[j, k]
            if i == j:
                if s <= 0.0:
                    return False
                Lc[i, i] = np.sqrt(s)
            else:
                Lc[i, j] = s / Lc[j, j]
    for p in range(P):
        if p == 0:
            for i in range(J):
                y[i] = rhs[i, 0]
        else:
            for i in range(J):
                s = rhs[i, p]
                for k in range(J):
                    s -= M[i, k, p] * x[k, 0]
                y[i] = s
        for i in range(J):
            s = y[i]
            for k in range(i):
                s -= Lc[i, k] * y[k]
            y[i] = s / Lc[i, i]
        for i in range(J - 1, -1, -1):
            s = y[i]
            for k in range(i + 1, J):
                s -= Lc[k, i] * y[k]
            y[i] = s / Lc[i, i]
        for i in range(J):
            x[i, p] = y[i]
    return True


@njit(cache=True)
def _workspace(L, J, P):
    return (
        np.zeros((L, P)),  # phi
        np.zeros((L, P)),  # cos
        np.zeros((L, P)),  # sin
        np.zeros((L, 2, P)),  # O
        np.zeros((L, 2, P)),  # C
        np.zeros((L, P)),  # w
        np.zeros((L, 2, P)),  # aO
        np.zeros((L, 2, P)),  # aC
        np.zeros((L, P)),  # subtree mass
        np.zeros((L, 2, P)),  # subtree first moment
        np.zeros((L, P)),  # subtree second moment + inertia
        np.zeros((L, 2, P)),  # subtree force
        np.zeros((L, P)),  # subtree moment of force
        np.zeros(P),
        np.zeros(P),
        np.zeros(P),
    )


@njit(cache=True)
def mass_bias(q0, qd0, mass, com, inertia, parent, jol, loj, anchor, pairs, gx, gy):
    """Plain-valued ``M(q)`` and ``bias(q, qd)``."""
    J = q0.shape[0]
    L = parent.shape[0]
    q = np.zeros((J, 1))
    qd = np.zeros((J, 1))
    q[:, 0] = q0
    qd[:, 0] = qd0
    m = np.zeros((L, 1))
    m[:, 0] = mass
    c = np.zeros((L, 2, 1))
    c[:, :, 0] = com
    M = np.zeros((J, J, 1))
    bias = np.zeros((J, 1))
    wk = _workspace(L, J, 1)
    _mass_and_bias(q, qd, m, c, inertia, parent, jol, loj, anchor, pairs, gx, gy, wk, M, bias)
    return M[:, :, 0].copy(), bias[:, 0].copy()


@njit(cache=True)
def joint_torque_values(q0, qd0, u, damp0, fric0, kp, kd, tlim, veps):
    J = q0.shape[0]
    q = np.zeros((J, 1))
    qd = np.zeros((J, 1))
    damp = np.zeros((J, 1))
    fric = np.zeros((J, 1))
    q[:, 0] = q0
    qd[:, 0] = qd0
    damp[:, 0] = damp0
    fric[:, 0] = fric0
    tau = np.zeros((J, 1))
    _joint_torque(q, qd, u, damp, fric, kp, kd, tlim, veps, tau)
    return tau[:, 0].copy()


# -- rollouts --------------------------------------------------------------

DIVERGED = 1e6


@njit(cache=True)
def rollout_batch(
    q0, qd0, actions, ref, use_ref, upper,
    mass, com, inertia, damp, fric,
    kp, kd, tlim, qlo, qhi, veps, klim,
    parent, jol, loj, anchor, pairs, gx, gy, h, substeps,
    record_jets,
):
    """Roll out ``B`` fragments of ``N`` control steps with shared parameters.

    Returns ``(q, qd, bodies, torques, body_jets, loss, status)`` where
    ``loss[b]`` is a ``(2, P)`` jet of (all-body, upper-body) squared CoM
    errors summed over steps ``1..N`` and ``status[b]`` is 0 or the 1-based
    control step at which the state diverged.
    """
    B = q0.shape[0]
    N = actions.shape[1]
    J = q0.shape[1]
    L = parent.shape[0]
    P = mass.shape[1]
    out_q = np.zeros((B, N + 1, J))
    out_qd = np.zeros((B, N + 1, J))
    out_body = np.zeros((B, N + 1, L, 2))
    out_tau = np.zeros((B, N, J))
    if record_jets:
        out_jets = np.zeros((B, N + 1, L, 2, P))
    else:
        out_jets = np.zeros((0, 0, L, 2, P))
    loss = np.zeros((B, 2, P))
    status = np.zeros(B, dtype=np.int64)

    wk = _workspace(L, J, P)
    phi, cs, sn, O, C = wk[0], wk[1], wk[2], wk[3], wk[4]
    q = np.zeros((J, P))
    qd = np.zeros((J, P))
    M = np.zeros((J, J, P))
    bias = np.zeros((J, P))
    tau = np.zeros((J, P))
    qdd = np.zeros((J, P))
    Lc = np.zeros((J, J))
    y = np.zeros(J)

    for b in range(B):
        for k in range(J):
            for p in range(P):
                q[k, p] = 0.0
                qd[k, p] = 0.0
            q[k, 0] = q0[b, k]
            qd[k, 0] = qd0[b, k]
        _kinematics(q, parent, jol, anchor, com, phi, cs, sn, O, C)
        out_q[b, 0] = q[:, 0]
        out_qd[b, 0] = qd[:, 0]
        out_body[b, 0] = C[:, :, 0]
        if record_jets:
            out_jets[b, 0] = C
        for t in range(N):
            u = actions[b, t]
            for s in range(substeps):
                _mass_and_bias(q, qd, mass, com, inertia, parent, jol, loj, anchor, pairs, gx, gy, wk, M, bias)
                _joint_torque(q, qd, u, damp, fric, kp, kd, tlim, veps, tau)
                _limit_spring(q, qlo, qhi, klim, tau)
                for k in range(J):
                    out_tau[b, t, k] += tau[k, 0] / substeps
                    for p in range(P):
                        tau[k, p] -= bias[k, p]
                if not _solve_spd(M, tau, qdd, Lc, y):
                    status[b] = t + 1
                    break
                for k in range(J):
                    for p in range(P):
                        qd[k, p] += h * qdd[k, p]
                        q[k, p] += h * qd[k, p]
            if status[b] != 0:
                break
            bad = False
            for k in range(J):
                if not (abs(q[k, 0]) <= DIVERGED and abs(qd[k, 0]) <= DIVERGED):
                    bad = True
            if bad:
                status[b] = t + 1
                break
            _kinematics(q, parent, jol, anchor, com, phi, cs, sn, O, C)
            out_q[b, t + 1] = q[:, 0]
            out_qd[b, t + 1] = qd[:, 0]
            out_body[b, t + 1] = C[:, :, 0]
            if record_jets:
                out_jets[b, t + 1] = C
            if use_ref:
                for l in range(L):
                    ex = C[l, 0, 0] - ref[b, t + 1, l, 0]
                    ez = C[l, 1, 0] - ref[b, t + 1, l, 1]
                    e2 = ex * ex + ez * ez
                    loss[b, 0, 0] += e2
                    if upper[l]:
                        loss[b, 1, 0] += e2
                    for p in range(1, P):
                        de = 2.0 * (ex * C[l, 0, p] + ez * C[l, 1, p])
                        loss[b, 0, p] += de
                        if upper[l]:
                            loss[b, 1, p] += de
    return out_q, out_qd, out_body, out_tau, out_jets, loss, status
