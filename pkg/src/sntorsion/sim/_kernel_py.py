"""Pure-Python stochastic Heun integrator (reference for the compiled kernel).

State per branch: angle and angular velocity. Branch 0 is the full angle
theta; branch 1 is the mean branch <theta>, integrated only in quadratic mode.

    theta'' = -w_t^2 theta - gamma theta' + (tau + u)/I
              - w_sn^2 (theta - m)                     (quadratic mode)
              + tau_sn(theta)/I                        (non-quadratic mode)
    m''     = -w_m^2 m - gamma m' + (tau_cl + u_m)/I   (quadratic mode)

Noise torques are held constant over a step. Sensor noise is sampled on the grid,
so ``n_tot``/``n_mean`` carry one more sample than there are steps. The servo is a
state-space system discretised with the trapezoidal (Tustin) rule:

    x_{k+1} = Ad x_k + Bd (y_k + y_{k+1}),   u_k = -(C x_k + D y_k)

Its input at the predictor stage uses the predicted angle, which keeps the
scheme second order with feedback in the loop.
"""

from __future__ import annotations

import math

MODE_OFF = 0
MODE_QUADRATIC = 1
MODE_NONQUADRATIC = 2


def _servo_step(ad, bd, x, yy, r):
    out = []
    for i in range(r):
        s = bd[i] * yy
        for j in range(r):
            s += ad[i][j] * x[j]
        out.append(s)
    return out


def run_heun(z, xs, xm, dt, inv_i, wt2, wm2, gamma, wsn2, mode, nq_scale, nq_w,
             ad, bd, cc, dd, tq_tot, tq_mean, n_tot, n_mean, decim,
             o_th, o_m, o_y, o_u, o_sn):
    """Advance ``len(tq_tot)`` steps in place. Returns -1, or the first step at which
    the state stopped being finite."""
    th, om, m, v = z[0], z[1], z[2], z[3]
    r = len(xs)
    ad_ = [[ad[i][j] for j in range(r)] for i in range(r)]
    bd_ = [bd[i] for i in range(r)]
    cc_ = [cc[i] for i in range(r)]
    x = [xs[i] for i in range(r)]
    xmn = [xm[i] for i in range(r)]
    quad = mode == MODE_QUADRATIC
    nonq = mode == MODE_NONQUADRATIC
    h2 = 0.5 * dt
    n_steps = len(tq_tot)
    rec = 0
    bad = -1

    for k in range(n_steps):
        tau = tq_tot[k]
        y = th + n_tot[k]
        y1n = n_tot[k + 1]
        u = -dd * y
        for i in range(r):
            u -= cc_[i] * x[i]

        tsn = 0.0
        if nonq:
            tsn = -nq_scale * (th / nq_w) * math.exp(-th * th / (2.0 * nq_w))
        if k % decim == 0:
            o_th[rec] = th
            o_m[rec] = m
            o_y[rec] = y
            o_u[rec] = u
            o_sn[rec] = tsn
            rec += 1

        # predictor, branch 0
        a0 = -wt2 * th - gamma * om + inv_i * (tau + u + tsn)
        if quad:
            a0 -= wsn2 * (th - m)
        th_p = th + dt * om
        om_p = om + dt * a0

        # mean branch predictor
        if quad:
            taum = tq_mean[k]
            ym = m + n_mean[k]
            um = -dd * ym
            for i in range(r):
                um -= cc_[i] * xmn[i]
            am0 = -wm2 * m - gamma * v + inv_i * (taum + um)
            m_p = m + dt * v
            v_p = v + dt * am0
            ym_p = m_p + n_mean[k + 1]
            um_p = -dd * ym_p
            for i in range(r):
                s = bd_[i] * (ym + ym_p)
                for j in range(r):
                    s += ad_[i][j] * xmn[j]
                um_p -= cc_[i] * s
            am_p = -wm2 * m_p - gamma * v_p + inv_i * (taum + um_p)
        else:
            m_p = m

        # servo at the predicted point
        y_p = th_p + y1n
        u_p = -dd * y_p
        for i in range(r):
            s = bd_[i] * (y + y_p)
            for j in range(r):
                s += ad_[i][j] * x[j]
            u_p -= cc_[i] * s
        tsn_p = 0.0
        if nonq:
            tsn_p = -nq_scale * (th_p / nq_w) * math.exp(-th_p * th_p / (2.0 * nq_w))
        a_p = -wt2 * th_p - gamma * om_p + inv_i * (tau + u_p + tsn_p)
        if quad:
            a_p -= wsn2 * (th_p - m_p)

        # corrector
        th_n = th + h2 * (om + om_p)
        om_n = om + h2 * (a0 + a_p)
        y_n = th_n + y1n
        x = _servo_step(ad_, bd_, x, y + y_n, r)
        th, om = th_n, om_n
        if quad:
            m_n = m + h2 * (v + v_p)
            v_n = v + h2 * (am0 + am_p)
            ym_n = m_n + n_mean[k + 1]
            xmn = _servo_step(ad_, bd_, xmn, ym + ym_n, r)
            m, v = m_n, v_n
        if not (abs(th) < 1e300 and abs(om) < 1e300):
            bad = k
            break

    z[0], z[1], z[2], z[3] = th, om, m, v
    for i in range(r):
        xs[i] = x[i]
        xm[i] = xmn[i]
    return bad
