# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled training kernels.

Same API as ``_fallback``: forward logits, per-sample input gradients, and
the penalized batch objective with parameter gradients.  Matrix
contractions go straight to BLAS through scipy's capsule bindings; all the
elementwise work between them (activations, softmax head, penalty rows,
bias sums) is fused into C loops over flat per-layer blocks, so one call
does the whole batch with no Python dispatch in between.

Results are bit-stable run to run for a fixed build.  They differ from the
numpy backend in the last bits: both use the same BLAS, but the head and
activation sweeps here use libm rather than numpy's vectorized
transcendentals.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp as c_exp, log as c_log, tanh as c_tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

ACT_TANH = 0
ACT_LEAKY = 1


# Row-major wrappers around Fortran dgemm (a row-major matrix is its own
# transpose seen column-major, so operand order flips).

cdef inline void _mm_abt(double* out, const double* a, const double* w,
                         int m, int n, int k, double beta) noexcept nogil:
    """out (m,n) = a (m,k) @ w (n,k)^T + beta * out"""
    cdef char ct = c'T', cn = c'N'
    cdef double alpha = 1.0
    dgemm(&ct, &cn, &n, &m, &k, &alpha, <double*> w, &k, <double*> a, &k,
          &beta, out, &n)


cdef inline void _mm_ab(double* out, const double* a, const double* w,
                        int m, int n, int k, double beta) noexcept nogil:
    """out (m,n) = a (m,k) @ w (k,n) + beta * out"""
    cdef char cn = c'N'
    cdef double alpha = 1.0
    dgemm(&cn, &cn, &n, &m, &k, &alpha, <double*> w, &n, <double*> a, &k,
          &beta, out, &n)


cdef inline void _mm_atb_acc(double* out, const double* a, const double* b,
                             int rows, int m, int n) noexcept nogil:
    """out (m,n) += a (rows,m)^T @ b (rows,n)"""
    cdef char ct = c'T', cn = c'N'
    cdef double alpha = 1.0, one = 1.0
    dgemm(&cn, &ct, &n, &m, &rows, &alpha, <double*> b, &n, <double*> a, &m,
          &one, out, &n)


cdef inline double _act(int act, double slope, double s) noexcept nogil:
    if act == 0:
        return c_tanh(s)
    if s >= 0.0:
        return s
    return slope * s


cdef inline double _dact(int act, double slope, double s, double a) noexcept nogil:
    if act == 0:
        return 1.0 - a * a
    if s >= 0.0:
        return 1.0
    return slope


cdef inline double _ddact(int act, double a, double d) noexcept nogil:
    # second derivative; zero for piecewise-linear activations
    if act == 0:
        return -2.0 * a * d
    return 0.0


cdef void _forward(const double* wf, const double* bf, const long* wd,
                   const long* wo, const long* bo, const long* loff,
                   Py_ssize_t n_layers, int act, double slope,
                   const double* x, Py_ssize_t batch,
                   double* av, double* sv) noexcept nogil:
    """Fill all activation and pre-activation blocks for the batch."""
    cdef Py_ssize_t l, r, i, n
    cdef int din, dout
    cdef double* s_l
    cdef double* a_l
    cdef const double* brow

    n = batch * wd[0]
    for i in range(n):
        av[i] = x[i]
    for l in range(1, n_layers + 1):
        din = <int> wd[l - 1]
        dout = <int> wd[l]
        s_l = sv + loff[l]
        a_l = av + loff[l]
        _mm_abt(s_l, av + loff[l - 1], wf + wo[l - 1],
                <int> batch, dout, din, 0.0)
        brow = bf + bo[l - 1]
        if l < n_layers:
            for r in range(batch):
                for i in range(dout):
                    s_l[r * dout + i] += brow[i]
                    a_l[r * dout + i] = _act(act, slope, s_l[r * dout + i])
        else:
            for r in range(batch):
                for i in range(dout):
                    s_l[r * dout + i] += brow[i]
                    a_l[r * dout + i] = s_l[r * dout + i]


cdef double _head(const double* logits, const double* y, Py_ssize_t batch,
                  Py_ssize_t n_out, double* probs, double* delta_head) noexcept nogil:
    """Softmax rows, loss sum (left to right), and the head residual P - Y."""
    cdef Py_ssize_t r, i
    cdef double m, total, loss, loss_sum = 0.0
    cdef const double* lrow
    cdef const double* yrow
    cdef double* prow

    for r in range(batch):
        lrow = logits + r * n_out
        yrow = y + r * n_out
        prow = probs + r * n_out
        m = lrow[0]
        for i in range(1, n_out):
            if lrow[i] > m:
                m = lrow[i]
        total = 0.0
        for i in range(n_out):
            prow[i] = c_exp(lrow[i] - m)
            total += prow[i]
        loss = m + c_log(total)
        for i in range(n_out):
            prow[i] = prow[i] / total
            loss -= yrow[i] * lrow[i]
            delta_head[r * n_out + i] = prow[i] - yrow[i]
        loss_sum += loss
    return loss_sum


cdef void _backward(const double* wf, const long* wd, const long* wo,
                    const long* loff, Py_ssize_t n_layers, int act,
                    double slope, Py_ssize_t batch, const double* av,
                    const double* sv, double* delta, double* tv) noexcept nogil:
    """Pull the head residual back to the input block delta[loff[0]]."""
    cdef Py_ssize_t l, i, n
    cdef int din, dout
    cdef const double* s_l
    cdef const double* a_l
    cdef double* t_l
    cdef double* d_l

    for l in range(n_layers, 0, -1):
        din = <int> wd[l - 1]
        dout = <int> wd[l]
        s_l = sv + loff[l]
        a_l = av + loff[l]
        d_l = delta + loff[l]
        t_l = tv + loff[l]
        n = batch * dout
        if l < n_layers:
            for i in range(n):
                t_l[i] = _dact(act, slope, s_l[i], a_l[i]) * d_l[i]
        else:
            for i in range(n):
                t_l[i] = d_l[i]
        _mm_ab(delta + loff[l - 1], t_l, wf + wo[l - 1],
               <int> batch, din, dout, 0.0)


cdef void _flatten(list ws, list bs, double[::1] wflat, double[::1] bflat,
                   long[::1] widths, long[::1] woff, long[::1] boff):
    cdef Py_ssize_t n_layers = len(ws)
    cdef Py_ssize_t l, i, j, din, dout
    cdef long wpos = 0, bpos = 0
    cdef double[:, ::1] w
    cdef double[::1] bias

    for l in range(n_layers):
        w = ws[l]
        bias = bs[l]
        dout = w.shape[0]
        din = w.shape[1]
        woff[l] = wpos
        boff[l] = bpos
        for i in range(dout):
            for j in range(din):
                wflat[wpos] = w[i, j]
                wpos += 1
        for i in range(dout):
            bflat[bpos] = bias[i]
            bpos += 1


def _layout(list ws, list bs):
    cdef Py_ssize_t n_layers = len(ws)
    widths = np.empty(n_layers + 1, dtype=np.int64)
    widths[0] = ws[0].shape[1]
    for l in range(n_layers):
        widths[l + 1] = ws[l].shape[0]
    woff = np.zeros(n_layers, dtype=np.int64)
    boff = np.zeros(n_layers, dtype=np.int64)
    n_w = int(sum(w.size for w in ws))
    n_b = int(sum(v.size for v in bs))
    wflat = np.empty(n_w, dtype=np.float64)
    bflat = np.empty(n_b, dtype=np.float64)
    _flatten(ws, bs, wflat, bflat, widths, woff, boff)
    return widths, woff, boff, wflat, bflat


cdef class _Workspace:
    """Pointer bundle for one call: layout tables plus scratch blocks."""
    cdef object keepalive
    cdef double* wf
    cdef double* bf
    cdef long* wd
    cdef long* wo
    cdef long* bo
    cdef long* loff
    cdef Py_ssize_t n_layers, batch, total, maxw


cdef _Workspace _prepare(list ws, list bs, Py_ssize_t batch):
    widths, woff, boff, wflat, bflat = _layout(ws, bs)
    cdef Py_ssize_t n_layers = len(ws)
    loff = np.zeros(n_layers + 2, dtype=np.int64)
    np.cumsum(batch * widths, out=loff[1:n_layers + 2])

    cdef _Workspace wk = _Workspace()
    wk.keepalive = (widths, woff, boff, wflat, bflat, loff)
    cdef double[::1] wf_v = wflat
    cdef double[::1] bf_v = bflat
    cdef long[::1] wd_v = widths
    cdef long[::1] wo_v = woff
    cdef long[::1] bo_v = boff
    cdef long[::1] lo_v = loff
    wk.wf = &wf_v[0]
    wk.bf = &bf_v[0]
    wk.wd = &wd_v[0]
    wk.wo = &wo_v[0]
    wk.bo = &bo_v[0]
    wk.loff = &lo_v[0]
    wk.n_layers = n_layers
    wk.batch = batch
    wk.total = int(loff[n_layers + 1])
    wk.maxw = int(np.max(widths))
    return wk


def forward_logits(list ws, list bs, int act, double slope, double[:, ::1] x):
    cdef _Workspace wk = _prepare(ws, bs, x.shape[0])
    cdef Py_ssize_t n_out = wk.wd[wk.n_layers]

    scratch = np.empty(2 * wk.total, dtype=np.float64)
    out = np.empty((wk.batch, n_out), dtype=np.float64)
    cdef double[::1] scr = scratch
    cdef double[:, ::1] outv = out
    cdef double* av = &scr[0]
    cdef double* sv = av + wk.total
    cdef double* head = av + wk.loff[wk.n_layers]
    cdef Py_ssize_t i, n = wk.batch * n_out

    with nogil:
        _forward(wk.wf, wk.bf, wk.wd, wk.wo, wk.bo, wk.loff, wk.n_layers,
                 act, slope, &x[0, 0], wk.batch, av, sv)
        for i in range(n):
            (&outv[0, 0])[i] = head[i]
    return out


def input_gradients(list ws, list bs, int act, double slope,
                    double[:, ::1] x, double[:, ::1] y):
    cdef _Workspace wk = _prepare(ws, bs, x.shape[0])
    cdef Py_ssize_t n_out = wk.wd[wk.n_layers]
    cdef Py_ssize_t n_in = wk.wd[0]

    scratch = np.empty(4 * wk.total + wk.batch * n_out, dtype=np.float64)
    out = np.empty((wk.batch, n_in), dtype=np.float64)
    cdef double[::1] scr = scratch
    cdef double[:, ::1] outv = out
    cdef double* av = &scr[0]
    cdef double* sv = av + wk.total
    cdef double* delta = sv + wk.total
    cdef double* tv = delta + wk.total
    cdef double* probs = tv + wk.total
    cdef Py_ssize_t i, n = wk.batch * n_in

    with nogil:
        _forward(wk.wf, wk.bf, wk.wd, wk.wo, wk.bo, wk.loff, wk.n_layers,
                 act, slope, &x[0, 0], wk.batch, av, sv)
        _head(av + wk.loff[wk.n_layers], &y[0, 0], wk.batch, n_out, probs,
              delta + wk.loff[wk.n_layers])
        _backward(wk.wf, wk.wd, wk.wo, wk.loff, wk.n_layers, act, slope,
                  wk.batch, av, sv, delta, tv)
        for i in range(n):
            (&outv[0, 0])[i] = delta[i]
    return out


def penalized_objective(list ws, list bs, int act, double slope,
                        double[:, ::1] x, double[:, ::1] y, double lam):
    cdef _Workspace wk = _prepare(ws, bs, x.shape[0])
    cdef Py_ssize_t n_layers = wk.n_layers
    cdef Py_ssize_t batch = wk.batch
    cdef Py_ssize_t n_out = wk.wd[n_layers]
    cdef Py_ssize_t n_in = wk.wd[0]
    cdef Py_ssize_t bm = batch * wk.maxw

    widths = wk.keepalive[0]
    wflat = wk.keepalive[3]
    bflat = wk.keepalive[4]
    cdef Py_ssize_t n_w = wflat.shape[0]
    cdef Py_ssize_t n_b = bflat.shape[0]

    # av, sv, delta, tv, sbar2 blocks; probs; two ping-pong rows each for
    # the upward (dbar) and downward (abar) sweeps; tbar; sbar
    scratch = np.empty(5 * wk.total + batch * n_out + 6 * bm, dtype=np.float64)
    gw_acc = np.zeros(n_w, dtype=np.float64)
    gb_acc = np.zeros(n_b, dtype=np.float64)
    pw_acc = np.zeros(n_w, dtype=np.float64)
    pb_acc = np.zeros(n_b, dtype=np.float64)

    cdef double[::1] scr = scratch
    cdef double[::1] gw_v = gw_acc
    cdef double[::1] gb_v = gb_acc
    cdef double[::1] pw_v = pw_acc
    cdef double[::1] pb_v = pb_acc

    cdef double* av = &scr[0]
    cdef double* sv = av + wk.total
    cdef double* delta = sv + wk.total
    cdef double* tv = delta + wk.total
    cdef double* sbar2 = tv + wk.total
    cdef double* probs = sbar2 + wk.total
    cdef double* dbar_a = probs + batch * n_out
    cdef double* dbar_b = dbar_a + bm
    cdef double* tbar = dbar_b + bm
    cdef double* abar_a = tbar + bm
    cdef double* abar_b = abar_a + bm
    cdef double* sbar = abar_b + bm
    cdef double* gw = &gw_v[0]
    cdef double* gb = &gb_v[0]
    cdef double* pw = &pw_v[0]
    cdef double* pb = &pb_v[0]
    cdef double* dbar
    cdef double* dnext
    cdef double* abar
    cdef double* anext
    cdef double* swap

    cdef Py_ssize_t l, r, i, n
    cdef int din, dout
    cdef const double* s_l
    cdef const double* a_l
    cdef const double* t_l
    cdef double* s2_l
    cdef double loss_sum, pen_sum = 0.0, dot, d
    cdef int want_pen = 1 if lam != 0.0 else 0

    with nogil:
        _forward(wk.wf, wk.bf, wk.wd, wk.wo, wk.bo, wk.loff, n_layers,
                 act, slope, &x[0, 0], batch, av, sv)
        loss_sum = _head(av + wk.loff[n_layers], &y[0, 0], batch, n_out,
                         probs, delta + wk.loff[n_layers])
        _backward(wk.wf, wk.wd, wk.wo, wk.loff, n_layers, act, slope,
                  batch, av, sv, delta, tv)

        for r in range(batch):
            dot = 0.0
            for i in range(n_in):
                dot += delta[r * n_in + i] * delta[r * n_in + i]
            pen_sum += dot

        # first-order parameter gradients from the loss sweep
        for l in range(1, n_layers + 1):
            din = <int> wk.wd[l - 1]
            dout = <int> wk.wd[l]
            t_l = tv + wk.loff[l]
            _mm_atb_acc(gw + wk.wo[l - 1], t_l, av + wk.loff[l - 1],
                        <int> batch, dout, din)
            for r in range(batch):
                for i in range(dout):
                    gb[wk.bo[l - 1] + i] += t_l[r * dout + i]

        if want_pen:
            # adjoint of the input-gradient computation, input upward
            dbar = dbar_a
            dnext = dbar_b
            n = batch * n_in
            for i in range(n):
                dbar[i] = 2.0 * delta[i]
            for l in range(1, n_layers + 1):
                din = <int> wk.wd[l - 1]
                dout = <int> wk.wd[l]
                s_l = sv + wk.loff[l]
                a_l = av + wk.loff[l]
                t_l = tv + wk.loff[l]
                s2_l = sbar2 + wk.loff[l]
                _mm_abt(tbar, dbar, wk.wf + wk.wo[l - 1],
                        <int> batch, dout, din, 0.0)
                _mm_atb_acc(pw + wk.wo[l - 1], t_l, dbar,
                            <int> batch, dout, din)
                n = batch * dout
                if l < n_layers:
                    for i in range(n):
                        d = _dact(act, slope, s_l[i], a_l[i])
                        s2_l[i] = _ddact(act, a_l[i], d) * (delta + wk.loff[l])[i] * tbar[i]
                        dnext[i] = d * tbar[i]
                else:
                    for i in range(n):
                        s2_l[i] = 0.0
                        dnext[i] = tbar[i]
                swap = dbar
                dbar = dnext
                dnext = swap

            # softmax head: the residual rows P - Y depend on the logits
            abar = abar_a
            anext = abar_b
            for r in range(batch):
                dot = 0.0
                for i in range(n_out):
                    dot += probs[r * n_out + i] * dbar[r * n_out + i]
                for i in range(n_out):
                    abar[r * n_out + i] = probs[r * n_out + i] * (dbar[r * n_out + i] - dot)

            # downward through the forward pass
            for l in range(n_layers, 0, -1):
                din = <int> wk.wd[l - 1]
                dout = <int> wk.wd[l]
                s_l = sv + wk.loff[l]
                a_l = av + wk.loff[l]
                s2_l = sbar2 + wk.loff[l]
                n = batch * dout
                if l < n_layers:
                    for i in range(n):
                        sbar[i] = _dact(act, slope, s_l[i], a_l[i]) * abar[i] + s2_l[i]
                else:
                    for i in range(n):
                        sbar[i] = abar[i] + s2_l[i]
                _mm_atb_acc(pw + wk.wo[l - 1], sbar, av + wk.loff[l - 1],
                            <int> batch, dout, din)
                for r in range(batch):
                    for i in range(dout):
                        pb[wk.bo[l - 1] + i] += sbar[r * dout + i]
                _mm_ab(anext, sbar, wk.wf + wk.wo[l - 1],
                       <int> batch, din, dout, 0.0)
                swap = abar
                abar = anext
                anext = swap

    cdef double mean_loss = loss_sum / batch
    cdef double mean_pen = pen_sum / batch
    cdef double objective = mean_loss + lam * mean_pen

    grads = []
    scale = 1.0 / batch
    pos_w = 0
    pos_b = 0
    for l in range(n_layers):
        dout_py = int(widths[l + 1])
        din_py = int(widths[l])
        gw_l = gw_acc[pos_w:pos_w + dout_py * din_py].reshape(dout_py, din_py)
        gb_l = gb_acc[pos_b:pos_b + dout_py]
        if lam != 0.0:
            pw_l = pw_acc[pos_w:pos_w + dout_py * din_py].reshape(dout_py, din_py)
            pb_l = pb_acc[pos_b:pos_b + dout_py]
            grads.append(scale * gw_l + (lam * scale) * pw_l)
            grads.append(scale * gb_l + (lam * scale) * pb_l)
        else:
            grads.append(scale * gw_l)
            grads.append(scale * gb_l)
        pos_w += dout_py * din_py
        pos_b += dout_py
    return objective, mean_loss, mean_pen, grads
