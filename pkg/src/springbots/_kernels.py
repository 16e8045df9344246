"""Compiled forward dynamics and the matching reverse pass.

Everything here works on plain arrays so it can run without the GIL. The
reverse pass differentiates exactly what the forward pass computes, with
contact branches frozen as taken in the forward pass. Intermediate values
are recomputed from stored states; states are stored every ``stride``
steps and regenerated segment by segment during the backward sweep.
"""

import math

import numpy as np
from numba import njit

NO_SLIP = 0
RUGGED = 1

OK = 0
DEGENERATE = 1
NONFINITE = 2

DEGENERATE_LENGTH = 1e-9
N_CPG = 10

_jit = njit(cache=True, nogil=True)


@_jit
def line_index(lines, x):
    lo = 0
    hi = lines.shape[0] - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if lines[mid, 0] <= x:
            lo = mid
        else:
            hi = mid - 1
    return lo


@_jit
def line_height(lines, i, x):
    return lines[i, 3] + lines[i, 4] * (x - lines[i, 2])


@_jit
def contact(x, y, vx, vy, dt, lines, mode):
    """Advance one mass by dt with time-of-impact contact.

    Returns (x, y, vx, vy, code) where code packs the branch taken:
    bit0 contact, bit1 toi from the smooth formula, bit2 friction keeps a
    tangent term, bit3 final clamp onto the surface.
    """
    code = 0
    xn = x + dt * vx
    yn = y + dt * vy
    i = line_index(lines, xn)
    x2 = xn
    y2 = yn
    nvx = vx
    nvy = vy
    if yn <= line_height(lines, i, xn):
        m = lines[i, 4]
        s = math.sqrt(1.0 + m * m)
        nx = -m / s
        ny = 1.0 / s
        d0 = (x - lines[i, 2]) * nx + (y - lines[i, 3]) * ny
        vn = vx * nx + vy * ny
        if vn <= 0.0:
            code |= 1
            toi = 0.0
            if vn < 0.0:
                toi = -d0 / vn
                if toi < 0.0:
                    toi = 0.0
                elif toi > dt:
                    toi = dt
                else:
                    code |= 2
            px = x + toi * vx
            py = y + toi * vy
            if mode == NO_SLIP:
                nvx = 0.0
                nvy = 0.0
            else:
                tx = 1.0 / s
                ty = m / s
                vt = vx * tx + vy * ty
                if abs(vn) <= abs(vt):
                    code |= 4
                    vt2 = vt - abs(vn) * np.sign(vt)
                else:
                    vt2 = 0.0
                nvx = vt2 * tx
                nvy = vt2 * ty
            rem = dt - toi
            x2 = px + rem * nvx
            y2 = py + rem * nvy
    j = line_index(lines, x2)
    h2 = line_height(lines, j, x2)
    if y2 < h2:
        code |= 8
        y2 = h2
    return x2, y2, nvx, nvy, code


@_jit
def contact_vjp(x, y, vx, vy, dt, lines, mode, gX, gY, gVX, gVY):
    """Pull output adjoints back through ``contact``; returns (gx, gy, gvx, gvy)."""
    xn = x + dt * vx
    yn = y + dt * vy
    i = line_index(lines, xn)
    is_contact = False
    toi = 0.0
    smooth_toi = False
    keep_tangent = False
    nx = 0.0
    ny = 1.0
    tx = 1.0
    ty = 0.0
    d0 = 0.0
    vn = 0.0
    vt = 0.0
    nvx = vx
    nvy = vy
    if yn <= line_height(lines, i, xn):
        m = lines[i, 4]
        s = math.sqrt(1.0 + m * m)
        nx = -m / s
        ny = 1.0 / s
        tx = 1.0 / s
        ty = m / s
        d0 = (x - lines[i, 2]) * nx + (y - lines[i, 3]) * ny
        vn = vx * nx + vy * ny
        if vn <= 0.0:
            is_contact = True
            if vn < 0.0:
                toi = -d0 / vn
                if toi < 0.0:
                    toi = 0.0
                elif toi > dt:
                    toi = dt
                else:
                    smooth_toi = True
            if mode == NO_SLIP:
                nvx = 0.0
                nvy = 0.0
            else:
                vt = vx * tx + vy * ty
                if abs(vn) <= abs(vt):
                    keep_tangent = True
                    vt2 = vt - abs(vn) * np.sign(vt)
                else:
                    vt2 = 0.0
                nvx = vt2 * tx
                nvy = vt2 * ty
    if is_contact:
        rem = dt - toi
        x2 = x + toi * vx + rem * nvx
        y2 = y + toi * vy + rem * nvy
    else:
        x2 = xn
        y2 = yn
    # final clamp
    j = line_index(lines, x2)
    if y2 < line_height(lines, j, x2):
        gX = gX + lines[j, 4] * gY
        gY = 0.0
    if not is_contact:
        return gX, gY, gVX + dt * gX, gVY + dt * gY
    rem = dt - toi
    g_nvx = gVX + rem * gX
    g_nvy = gVY + rem * gY
    g_rem = gX * nvx + gY * nvy
    g_toi = -g_rem + gX * vx + gY * vy
    gx = gX
    gy = gY
    gvx = toi * gX
    gvy = toi * gY
    if mode != NO_SLIP and keep_tangent:
        g_vt2 = g_nvx * tx + g_nvy * ty
        g_vn = -g_vt2 * np.sign(vt) * np.sign(vn)
        gvx += g_vt2 * tx + g_vn * nx
        gvy += g_vt2 * ty + g_vn * ny
    if smooth_toi:
        g_d0 = -g_toi / vn
        g_vn = g_toi * d0 / (vn * vn)
        gx += g_d0 * nx
        gy += g_d0 * ny
        gvx += g_vn * nx
        gvy += g_vn * ny
    return gx, gy, gvx, gvy


@_jit
def controller(xt, vt, ref, t, omega, w1, b1, w2, b2, s, h, a):
    """Fill sensors s, hidden activations h and actuations a for state (xt, vt)."""
    M = xt.shape[0]
    for i in range(N_CPG):
        s[i] = math.sin(omega * t + 2.0 * math.pi * i / N_CPG)
    cx = 0.0
    cy = 0.0
    for i in range(M):
        cx += xt[i, 0]
        cy += xt[i, 1]
    cx /= M
    cy /= M
    for i in range(M):
        o = N_CPG + 4 * i
        s[o] = vt[i, 0]
        s[o + 1] = vt[i, 1]
        s[o + 2] = (xt[i, 0] - cx) - ref[i, 0]
        s[o + 3] = (xt[i, 1] - cy) - ref[i, 1]
    H = w1.shape[0]
    NI = w1.shape[1]
    for r in range(H):
        z = b1[r]
        for c in range(NI):
            z += w1[r, c] * s[c]
        h[r] = math.tanh(z)
    for r in range(w2.shape[0]):
        z = b2[r]
        for c in range(H):
            z += w2[r, c] * h[c]
        a[r] = math.tanh(z)


@_jit
def spring_forces(xt, springs, rest, act_idx, a, k, amp, F):
    """Accumulate Hookean spring forces into F; returns DEGENERATE on a zero-length spring."""
    status = OK
    F[:, :] = 0.0
    for q in range(springs.shape[0]):
        i = springs[q, 0]
        j = springs[q, 1]
        dx = xt[j, 0] - xt[i, 0]
        dy = xt[j, 1] - xt[i, 1]
        L = math.sqrt(dx * dx + dy * dy)
        if L < DEGENERATE_LENGTH:
            status = DEGENERATE
            continue
        target = rest[q]
        if act_idx[q] >= 0:
            target = rest[q] * (1.0 + amp * a[act_idx[q]])
        mag = k * (L - target) / L
        fx = mag * dx
        fy = mag * dy
        F[i, 0] += fx
        F[i, 1] += fy
        F[j, 0] -= fx
        F[j, 1] -= fy
    return status


@_jit
def advance(xt, vt, a, cfg, springs, rest, act_idx, lines, ground, mode, F, x_out, v_out):
    """Physics update for given actuations; returns a status code.

    cfg = [dt, k, gravity, damping, amp, mass, omega].
    """
    dt = cfg[0]
    decay = math.exp(-dt * cfg[3])
    status = spring_forces(xt, springs, rest, act_idx, a, cfg[1], cfg[4], F)
    inv_m = 1.0 / cfg[5]
    for i in range(xt.shape[0]):
        vx = (vt[i, 0] + dt * F[i, 0] * inv_m) * decay
        vy = (vt[i, 1] + dt * (F[i, 1] * inv_m - cfg[2])) * decay
        if ground:
            x2, y2, vx2, vy2, _ = contact(xt[i, 0], xt[i, 1], vx, vy, dt, lines, mode)
        else:
            x2 = xt[i, 0] + dt * vx
            y2 = xt[i, 1] + dt * vy
            vx2 = vx
            vy2 = vy
        x_out[i, 0] = x2
        x_out[i, 1] = y2
        v_out[i, 0] = vx2
        v_out[i, 1] = vy2
        if not (math.isfinite(x2) and math.isfinite(y2) and math.isfinite(vx2) and math.isfinite(vy2)):
            status = NONFINITE
    return status


@_jit
def step(xt, vt, ref, t, cfg, w1, b1, w2, b2, springs, rest, act_idx,
         lines, ground, mode, s, h, a, F, x_out, v_out):
    """Controller plus physics from (xt, vt) into (x_out, v_out); returns a status code."""
    controller(xt, vt, ref, t, cfg[6], w1, b1, w2, b2, s, h, a)
    return advance(xt, vt, a, cfg, springs, rest, act_idx, lines, ground, mode, F, x_out, v_out)


@_jit
def step_vjp(xt, vt, ref, t, cfg, w1, b1, w2, b2, springs, rest, act_idx,
             lines, ground, mode, s, h, a, F, gx_next, gv_next, gx, gv,
             gw1, gb1, gw2, gb2, ga, gh, gs):
    """Reverse of ``step``: reads adjoints of the next state, writes those of (xt, vt)
    and accumulates parameter adjoints."""
    dt = cfg[0]
    k = cfg[1]
    amp = cfg[4]
    decay = math.exp(-dt * cfg[3])
    inv_m = 1.0 / cfg[5]
    M = xt.shape[0]
    controller(xt, vt, ref, t, cfg[6], w1, b1, w2, b2, s, h, a)
    spring_forces(xt, springs, rest, act_idx, a, k, amp, F)

    # contact and integration
    for i in range(M):
        vx = (vt[i, 0] + dt * F[i, 0] * inv_m) * decay
        vy = (vt[i, 1] + dt * (F[i, 1] * inv_m - cfg[2])) * decay
        if ground:
            g0, g1, g2, g3 = contact_vjp(xt[i, 0], xt[i, 1], vx, vy, dt, lines, mode,
                                         gx_next[i, 0], gx_next[i, 1], gv_next[i, 0], gv_next[i, 1])
        else:
            g0 = gx_next[i, 0]
            g1 = gx_next[i, 1]
            g2 = gv_next[i, 0] + dt * g0
            g3 = gv_next[i, 1] + dt * g1
        gx[i, 0] = g0
        gx[i, 1] = g1
        gv[i, 0] = decay * g2
        gv[i, 1] = decay * g3
        # reuse F as the force adjoint
        F[i, 0] = decay * dt * inv_m * g2
        F[i, 1] = decay * dt * inv_m * g3

    # springs
    for r in range(ga.shape[0]):
        ga[r] = 0.0
    for q in range(springs.shape[0]):
        i = springs[q, 0]
        j = springs[q, 1]
        dx = xt[j, 0] - xt[i, 0]
        dy = xt[j, 1] - xt[i, 1]
        L = math.sqrt(dx * dx + dy * dy)
        if L < DEGENERATE_LENGTH:
            continue
        target = rest[q]
        if act_idx[q] >= 0:
            target = rest[q] * (1.0 + amp * a[act_idx[q]])
        ux = dx / L
        uy = dy / L
        gfx = F[i, 0] - F[j, 0]
        gfy = F[i, 1] - F[j, 1]
        ug = ux * gfx + uy * gfy
        ratio = (L - target) / L
        gdx = k * (ug * ux + ratio * (gfx - ug * ux))
        gdy = k * (ug * uy + ratio * (gfy - ug * uy))
        gx[j, 0] += gdx
        gx[j, 1] += gdy
        gx[i, 0] -= gdx
        gx[i, 1] -= gdy
        if act_idx[q] >= 0:
            ga[act_idx[q]] += -k * ug * rest[q] * amp

    # controller
    H = w1.shape[0]
    NI = w1.shape[1]
    for c in range(H):
        gh[c] = 0.0
    for r in range(w2.shape[0]):
        gz = ga[r] * (1.0 - a[r] * a[r])
        gb2[r] += gz
        for c in range(H):
            gw2[r, c] += gz * h[c]
            gh[c] += w2[r, c] * gz
    for c in range(NI):
        gs[c] = 0.0
    for r in range(H):
        gz = gh[r] * (1.0 - h[r] * h[r])
        gb1[r] += gz
        for c in range(NI):
            gw1[r, c] += gz * s[c]
            gs[c] += w1[r, c] * gz

    # sensors
    mx = 0.0
    my = 0.0
    for i in range(M):
        o = N_CPG + 4 * i
        gv[i, 0] += gs[o]
        gv[i, 1] += gs[o + 1]
        mx += gs[o + 2]
        my += gs[o + 3]
    mx /= M
    my /= M
    for i in range(M):
        o = N_CPG + 4 * i
        gx[i, 0] += gs[o + 2] - mx
        gx[i, 1] += gs[o + 3] - my


@_jit
def _alloc(M, w1, w2):
    s = np.zeros(w1.shape[1])
    h = np.zeros(w1.shape[0])
    a = np.zeros(w2.shape[0])
    F = np.zeros((M, 2))
    return s, h, a, F


@_jit
def _reference(x0):
    M = x0.shape[0]
    ref = np.empty((M, 2))
    cx = 0.0
    cy = 0.0
    for i in range(M):
        cx += x0[i, 0]
        cy += x0[i, 1]
    cx /= M
    cy /= M
    for i in range(M):
        ref[i, 0] = x0[i, 0] - cx
        ref[i, 1] = x0[i, 1] - cy
    return ref


@_jit
def simulate(x0, steps, cfg, w1, b1, w2, b2, springs, rest, act_idx, lines, ground, mode, X, V):
    """Roll out from rest, writing every state into X, V of shape (steps + 1, M, 2).

    Returns (steps_completed, status).
    """
    M = x0.shape[0]
    ref = _reference(x0)
    s, h, a, F = _alloc(M, w1, w2)
    X[0] = x0
    V[0] = 0.0
    for t in range(steps):
        status = step(X[t], V[t], ref, t, cfg, w1, b1, w2, b2, springs, rest, act_idx,
                      lines, ground, mode, s, h, a, F, X[t + 1], V[t + 1])
        if status != OK:
            return t + 1, status
    return steps, OK


@_jit
def loss_and_grad(x0, steps, cfg, w1, b1, w2, b2, springs, rest, act_idx, lines, ground, mode,
                  stride, weights, gw1, gb1, gw2, gb2):
    """Terminal loss ``sum(weights * (x_T - x_0))`` and its parameter gradient.

    weights = -1/M on every x coordinate gives the negated net CoM
    x-displacement. States are kept every ``stride`` steps; stride 1 keeps
    the full tape.
    Returns (loss, status); gradient arrays are overwritten.
    """
    M = x0.shape[0]
    ref = _reference(x0)
    s, h, a, F = _alloc(M, w1, w2)
    n_ck = (steps + stride - 1) // stride + 1
    CX = np.empty((n_ck, M, 2))
    CV = np.empty((n_ck, M, 2))
    xt = x0.copy()
    vt = np.zeros((M, 2))
    xn = np.empty((M, 2))
    vn = np.empty((M, 2))
    CX[0] = xt
    CV[0] = vt
    for t in range(steps):
        status = step(xt, vt, ref, t, cfg, w1, b1, w2, b2, springs, rest, act_idx,
                      lines, ground, mode, s, h, a, F, xn, vn)
        if status != OK:
            return np.nan, status
        xt, xn = xn, xt
        vt, vn = vn, vt
        if (t + 1) % stride == 0:
            CX[(t + 1) // stride] = xt
            CV[(t + 1) // stride] = vt
    loss = 0.0
    for i in range(M):
        loss += weights[i, 0] * (xt[i, 0] - x0[i, 0]) + weights[i, 1] * (xt[i, 1] - x0[i, 1])

    gw1[:, :] = 0.0
    gb1[:] = 0.0
    gw2[:, :] = 0.0
    gb2[:] = 0.0
    ga = np.zeros(w2.shape[0])
    gh = np.zeros(w1.shape[0])
    gs = np.zeros(w1.shape[1])
    gx_next = np.zeros((M, 2))
    gv_next = np.zeros((M, 2))
    gx = np.zeros((M, 2))
    gv = np.zeros((M, 2))
    gx_next[:, :] = weights
    SX = np.empty((stride + 1, M, 2))
    SV = np.empty((stride + 1, M, 2))
    seg = (steps - 1) // stride
    while seg >= 0:
        t0 = seg * stride
        t1 = min(t0 + stride, steps)
        SX[0] = CX[seg]
        SV[0] = CV[seg]
        for t in range(t0, t1 - 1):
            step(SX[t - t0], SV[t - t0], ref, t, cfg, w1, b1, w2, b2, springs, rest, act_idx,
                 lines, ground, mode, s, h, a, F, SX[t - t0 + 1], SV[t - t0 + 1])
        for t in range(t1 - 1, t0 - 1, -1):
            step_vjp(SX[t - t0], SV[t - t0], ref, t, cfg, w1, b1, w2, b2, springs, rest, act_idx,
                     lines, ground, mode, s, h, a, F, gx_next, gv_next, gx, gv,
                     gw1, gb1, gw2, gb2, ga, gh, gs)
            gx_next, gx = gx, gx_next
            gv_next, gv = gv, gv_next
        seg -= 1
    return loss, OK


@_jit
def branch_codes(X, V, steps, cfg, w1, b1, w2, b2, springs, rest, act_idx, lines, mode):
    """Contact branch code per (step, mass) for a stored trajectory."""
    M = X.shape[1]
    ref = _reference(X[0])
    s, h, a, F = _alloc(M, w1, w2)
    out = np.zeros((steps, M), dtype=np.int64)
    dt = cfg[0]
    decay = math.exp(-dt * cfg[3])
    for t in range(steps):
        controller(X[t], V[t], ref, t, cfg[6], w1, b1, w2, b2, s, h, a)
        spring_forces(X[t], springs, rest, act_idx, a, cfg[1], cfg[4], F)
        for i in range(M):
            vx = (V[t, i, 0] + dt * F[i, 0] / cfg[5]) * decay
            vy = (V[t, i, 1] + dt * (F[i, 1] / cfg[5] - cfg[2])) * decay
            xn = X[t, i, 0] + dt * vx
            c = contact(X[t, i, 0], X[t, i, 1], vx, vy, dt, lines, mode)[4]
            out[t, i] = c | (line_index(lines, xn) << 4)
    return out
