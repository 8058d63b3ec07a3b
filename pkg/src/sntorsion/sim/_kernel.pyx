# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stochastic Heun integrator. Mirrors _kernel_py.run_heun step for step."""

from libc.math cimport exp, fabs

cdef enum:
    MAXR = 8


def run_heun(double[::1] z, double[::1] xs, double[::1] xm, double dt, double inv_i,
             double wt2, double wm2, double gamma, double wsn2, int mode,
             double nq_scale, double nq_w,
             double[:, ::1] ad, double[::1] bd, double[::1] cc, double dd,
             double[::1] tq_tot, double[::1] tq_mean, double[::1] n_tot, double[::1] n_mean,
             Py_ssize_t decim,
             double[::1] o_th, double[::1] o_m, double[::1] o_y, double[::1] o_u, double[::1] o_sn):
    cdef Py_ssize_t r = xs.shape[0]
    if r > MAXR:
        raise ValueError("servo order above 8 is not supported by the compiled kernel")
    cdef double x[MAXR]
    cdef double xn[MAXR]
    cdef double xmn[MAXR]
    cdef double th = z[0], om = z[1], m = z[2], v = z[3]
    cdef double h2 = 0.5 * dt
    cdef bint quad = mode == 1
    cdef bint nonq = mode == 2
    cdef Py_ssize_t n_steps = tq_tot.shape[0]
    cdef Py_ssize_t k, i, j, rec = 0, bad = -1
    cdef double tau, y, y1n, u, tsn, a0, th_p, om_p, taum = 0.0, ym = 0.0, um, am0 = 0.0
    cdef double m_p, v_p = 0.0, ym_p, um_p, am_p = 0.0, s, y_p, u_p, tsn_p, a_p
    cdef double th_n, om_n, y_n, m_n, v_n, ym_n

    for i in range(r):
        x[i] = xs[i]
        xmn[i] = xm[i]

    with nogil:
        for k in range(n_steps):
            tau = tq_tot[k]
            y = th + n_tot[k]
            y1n = n_tot[k + 1]
            u = -dd * y
            for i in range(r):
                u -= cc[i] * x[i]

            tsn = 0.0
            if nonq:
                tsn = -nq_scale * (th / nq_w) * exp(-th * th / (2.0 * nq_w))
            if k % decim == 0:
                o_th[rec] = th
                o_m[rec] = m
                o_y[rec] = y
                o_u[rec] = u
                o_sn[rec] = tsn
                rec += 1

            a0 = -wt2 * th - gamma * om + inv_i * (tau + u + tsn)
            if quad:
                a0 -= wsn2 * (th - m)
            th_p = th + dt * om
            om_p = om + dt * a0

            if quad:
                taum = tq_mean[k]
                ym = m + n_mean[k]
                um = -dd * ym
                for i in range(r):
                    um -= cc[i] * xmn[i]
                am0 = -wm2 * m - gamma * v + inv_i * (taum + um)
                m_p = m + dt * v
                v_p = v + dt * am0
                ym_p = m_p + n_mean[k + 1]
                um_p = -dd * ym_p
                for i in range(r):
                    s = bd[i] * (ym + ym_p)
                    for j in range(r):
                        s += ad[i, j] * xmn[j]
                    um_p -= cc[i] * s
                am_p = -wm2 * m_p - gamma * v_p + inv_i * (taum + um_p)
            else:
                m_p = m

            y_p = th_p + y1n
            u_p = -dd * y_p
            for i in range(r):
                s = bd[i] * (y + y_p)
                for j in range(r):
                    s += ad[i, j] * x[j]
                u_p -= cc[i] * s
            tsn_p = 0.0
            if nonq:
                tsn_p = -nq_scale * (th_p / nq_w) * exp(-th_p * th_p / (2.0 * nq_w))
            a_p = -wt2 * th_p - gamma * om_p + inv_i * (tau + u_p + tsn_p)
            if quad:
                a_p -= wsn2 * (th_p - m_p)

            th_n = th + h2 * (om + om_p)
            om_n = om + h2 * (a0 + a_p)
            y_n = th_n + y1n
            for i in range(r):
                s = bd[i] * (y + y_n)
                for j in range(r):
                    s += ad[i, j] * x[j]
                xn[i] = s
            for i in range(r):
                x[i] = xn[i]
            th = th_n
            om = om_n
            if quad:
                m_n = m + h2 * (v + v_p)
                v_n = v + h2 * (am0 + am_p)
                ym_n = m_n + n_mean[k + 1]
                for i in range(r):
                    s = bd[i] * (ym + ym_n)
                    for j in range(r):
                        s += ad[i, j] * xmn[j]
                    xn[i] = s
                for i in range(r):
                    xmn[i] = xn[i]
                m = m_n
                v = v_n
            if not (fabs(th) < 1e300 and fabs(om) < 1e300):
                bad = k
                break

    z[0] = th
    z[1] = om
    z[2] = m
    z[3] = v
    for i in range(r):
        xs[i] = x[i]
        xm[i] = xmn[i]
    return bad
