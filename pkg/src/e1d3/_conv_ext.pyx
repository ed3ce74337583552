# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled 3D cross-correlation kernels.

Same contract as :mod:`e1d3._conv_py`. Internally every operation is an
implicit-im2col product on a flattened grid:

    y[o, q] = sum_t W[o, t] * buf[off[t] + q]

where ``q`` runs over the flattened output grid and ``off`` is a table of
tap offsets (channel base plus spatial shift). Positions near the far
border of each grid row read past the valid region; those outputs are
garbage and get cropped by the caller. Stride 2 is handled by splitting
the input into its eight parity phases, which turns it into stride 1.

Each output is accumulated over taps in table order, so results are
bit-reproducible for a given build.
"""
import numpy as np

cdef extern from *:
    """
    #include <string.h>
    typedef double v8d __attribute__((vector_size(64)));
    static inline v8d ld8(const double* p) { v8d v; memcpy(&v, p, sizeof(v)); return v; }
    static inline void st8(double* p, v8d v) { memcpy(p, &v, sizeof(v)); }
    static inline double hsum8(v8d v) {
        return ((v[0] + v[1]) + (v[2] + v[3])) + ((v[4] + v[5]) + (v[6] + v[7]));
    }

    #define DEF_FWD_TILE(NB)                                                              \\
    static inline void fwd_tile_##NB(const double* restrict x,                           \\
                                     const Py_ssize_t* restrict off,                      \\
                                     const double* restrict wt, Py_ssize_t T,             \\
                                     double* restrict y, Py_ssize_t ys, Py_ssize_t q) {   \\
        v8d a0[NB], a1[NB];                                                               \\
        for (int j = 0; j < NB; ++j) { a0[j] = (v8d){0}; a1[j] = (v8d){0}; }              \\
        for (Py_ssize_t t = 0; t < T; ++t) {                                              \\
            const double* p = x + off[t] + q;                                             \\
            v8d x0 = ld8(p), x1 = ld8(p + 8);                                             \\
            for (int j = 0; j < NB; ++j) {                                                \\
                double w = wt[j * T + t];                                                 \\
                a0[j] += w * x0; a1[j] += w * x1;                                         \\
            }                                                                             \\
        }                                                                                 \\
        for (int j = 0; j < NB; ++j) {                                                    \\
            st8(y + j * ys + q, a0[j]); st8(y + j * ys + q + 8, a1[j]);                   \\
        }                                                                                 \\
    }
    DEF_FWD_TILE(8)
    DEF_FWD_TILE(4)
    DEF_FWD_TILE(1)

    /* y[o, q] for o in [0, O), q in [0, L); rows of y are ys apart */
    static void gemm_fwd(const double* restrict x, const Py_ssize_t* restrict off, Py_ssize_t T,
                         const double* restrict wt, Py_ssize_t O,
                         double* restrict y, Py_ssize_t ys, Py_ssize_t L) {
        Py_ssize_t o = 0, q, t;
        Py_ssize_t L16 = L - L % 16;
        while (o < O) {
            int nb = (O - o >= 8) ? 8 : (O - o >= 4) ? 4 : 1;
            const double* w = wt + o * T;
            double* yo = y + o * ys;
            for (q = 0; q < L16; q += 16) {
                if (nb == 8) fwd_tile_8(x, off, w, T, yo, ys, q);
                else if (nb == 4) fwd_tile_4(x, off, w, T, yo, ys, q);
                else fwd_tile_1(x, off, w, T, yo, ys, q);
            }
            for (q = L16; q < L; ++q) {
                for (int j = 0; j < nb; ++j) {
                    double s = 0.0;
                    for (t = 0; t < T; ++t) s += w[j * T + t] * x[off[t] + q];
                    yo[j * ys + q] = s;
                }
            }
            o += nb;
        }
    }

    /* gw[o, t] += sum_{q < L} g[o, q] * x[off[t] + q]; rows of g are gs apart */
    static void gemm_wgrad(const double* restrict x, const Py_ssize_t* restrict off, Py_ssize_t T,
                           const double* restrict g, Py_ssize_t gs, Py_ssize_t O,
                           double* restrict gw, Py_ssize_t L) {
        Py_ssize_t L8 = L - L % 8;
        Py_ssize_t o = 0, t, q;
        while (o < O) {
            int ob = (O - o >= 4) ? 4 : 1;
            t = 0;
            while (t < T) {
                int tb = (T - t >= 4) ? 4 : 1;
                v8d acc[4][4];
                for (int i = 0; i < 4; ++i) for (int j = 0; j < 4; ++j) acc[i][j] = (v8d){0};
                if (ob == 4 && tb == 4) {
                    const double* g0 = g + o * gs; const double* g1 = g0 + gs;
                    const double* g2 = g1 + gs; const double* g3 = g2 + gs;
                    const double* x0 = x + off[t]; const double* x1 = x + off[t + 1];
                    const double* x2 = x + off[t + 2]; const double* x3 = x + off[t + 3];
                    for (q = 0; q < L8; q += 8) {
                        v8d gv0 = ld8(g0 + q), gv1 = ld8(g1 + q), gv2 = ld8(g2 + q), gv3 = ld8(g3 + q);
                        v8d xv0 = ld8(x0 + q), xv1 = ld8(x1 + q), xv2 = ld8(x2 + q), xv3 = ld8(x3 + q);
                        acc[0][0] += gv0 * xv0; acc[0][1] += gv0 * xv1; acc[0][2] += gv0 * xv2; acc[0][3] += gv0 * xv3;
                        acc[1][0] += gv1 * xv0; acc[1][1] += gv1 * xv1; acc[1][2] += gv1 * xv2; acc[1][3] += gv1 * xv3;
                        acc[2][0] += gv2 * xv0; acc[2][1] += gv2 * xv1; acc[2][2] += gv2 * xv2; acc[2][3] += gv2 * xv3;
                        acc[3][0] += gv3 * xv0; acc[3][1] += gv3 * xv1; acc[3][2] += gv3 * xv2; acc[3][3] += gv3 * xv3;
                    }
                } else {
                    for (int i = 0; i < ob; ++i) {
                        const double* gi = g + (o + i) * gs;
                        for (int j = 0; j < tb; ++j) {
                            const double* xj = x + off[t + j];
                            for (q = 0; q < L8; q += 8) acc[i][j] += ld8(gi + q) * ld8(xj + q);
                        }
                    }
                }
                for (int i = 0; i < ob; ++i) {
                    const double* gi = g + (o + i) * gs;
                    for (int j = 0; j < tb; ++j) {
                        const double* xj = x + off[t + j];
                        double s = hsum8(acc[i][j]);
                        for (q = L8; q < L; ++q) s += gi[q] * xj[q];
                        gw[(o + i) * T + t + j] += s;
                    }
                }
                t += tb;
            }
            o += ob;
        }
    }
    """
    void gemm_fwd(const double* x, const Py_ssize_t* off, Py_ssize_t T,
                  const double* wt, Py_ssize_t O, double* y, Py_ssize_t ys, Py_ssize_t L) nogil
    void gemm_wgrad(const double* x, const Py_ssize_t* off, Py_ssize_t T,
                    const double* g, Py_ssize_t gs, Py_ssize_t O, double* gw, Py_ssize_t L) nogil


def _grid_fwd(const double[:, :, ::1] buf, const Py_ssize_t[::1] off,
              const double[:, ::1] wt, Py_ssize_t L, Py_ssize_t V):
    """buf (N, B, V) -> y (N, O, V); only q < L is computed, the rest stays zero."""
    cdef Py_ssize_t N = buf.shape[0], T = off.shape[0], O = wt.shape[0], n
    y = np.zeros((N, O, V), dtype=np.float64)
    cdef double[:, :, ::1] yv = y
    if N == 0 or O == 0 or T == 0 or L <= 0:
        return y
    with nogil:
        for n in range(N):
            gemm_fwd(&buf[n, 0, 0], &off[0], T, &wt[0, 0], O, &yv[n, 0, 0], V, L)
    return y


def _grid_wgrad(const double[:, :, ::1] buf, const Py_ssize_t[::1] off,
                const double[:, :, ::1] g, Py_ssize_t L):
    """buf (N, B, V), g (N, O, V) -> gw (O, T), summed over the batch in order."""
    cdef Py_ssize_t N = buf.shape[0], T = off.shape[0], O = g.shape[1], V = g.shape[2], n
    gw = np.zeros((O, T), dtype=np.float64)
    cdef double[:, ::1] gwv = gw
    if N == 0 or O == 0 or T == 0 or L <= 0:
        return gw
    with nogil:
        for n in range(N):
            gemm_wgrad(&buf[n, 0, 0], &off[0], T, &g[n, 0, 0], V, O, &gwv[0, 0], L)
    return gw


# --- tap tables (plain Python) -----------------------------------------------

def _offsets(n_chan, shifts, grid):
    """Channel-major offsets for every (channel, spatial shift) pair."""
    g1, g2 = grid[1], grid[2]
    vol = grid[0] * g1 * g2
    return np.array(
        [c * vol + (s0 * g1 + s1) * g2 + s2 for c in range(n_chan) for (s0, s1, s2) in shifts],
        dtype=np.intp,
    )


def _valid_len(grid, max_shift):
    return grid[0] * grid[1] * grid[2] - max_shift * (grid[1] * grid[2] + grid[2] + 1)


def _phases(xp, grid):
    """Split (N, C, D, H, W) into its 8 parity phases on a common grid."""
    N, C = xp.shape[:2]
    out = np.zeros((N, C, 8) + tuple(grid), dtype=np.float64)
    for ph in range(8):
        a, b, e = ph >> 2, (ph >> 1) & 1, ph & 1
        sub = xp[:, :, a::2, b::2, e::2]
        out[:, :, ph, : sub.shape[2], : sub.shape[3], : sub.shape[4]] = sub
    return out.reshape(N, C * 8, -1)


def _input_plan(xp, k, stride):
    """Flattened buffer, grid, tap offsets, kernel column order, valid length."""
    N, C = xp.shape[:2]
    if stride == 1:
        grid = tuple(xp.shape[2:])
        shifts = [(a, b, e) for a in range(k) for b in range(k) for e in range(k)]
        return xp.reshape(N, C, -1), grid, _offsets(C, shifts, grid), None, _valid_len(grid, k - 1)
    grid = tuple((n + 1) // 2 for n in xp.shape[2:])
    vol = grid[0] * grid[1] * grid[2]
    offs, cols = [], []
    for c in range(C):
        for a in range(k):
            for b in range(k):
                for e in range(k):
                    ph = ((a & 1) << 2) | ((b & 1) << 1) | (e & 1)
                    offs.append((c * 8 + ph) * vol + ((a >> 1) * grid[1] + (b >> 1)) * grid[2] + (e >> 1))
                    cols.append(((c * k + a) * k + b) * k + e)
    L = _valid_len(grid, (k - 1) // 2)
    return _phases(xp, grid), grid, np.array(offs, dtype=np.intp), cols, L


def corr3d(xp, w, int stride):
    xp = np.ascontiguousarray(xp, dtype=np.float64)
    N = xp.shape[0]
    O, k = w.shape[0], w.shape[2]
    out_sp = tuple((n - k) // stride + 1 for n in xp.shape[2:])
    buf, grid, off, cols, L = _input_plan(xp, k, stride)
    wt = w.reshape(O, -1)
    if cols is not None:
        wt = wt[:, cols]
    V = grid[0] * grid[1] * grid[2]
    y = _grid_fwd(buf, off, np.ascontiguousarray(wt), L, V).reshape((N, O) + grid)
    return np.ascontiguousarray(y[:, :, : out_sp[0], : out_sp[1], : out_sp[2]])


def corr3d_grad_weight(xp, gout, int stride, int k):
    xp = np.ascontiguousarray(xp, dtype=np.float64)
    N, C = xp.shape[:2]
    O = gout.shape[1]
    do, ho, wo = gout.shape[2:]
    buf, grid, off, cols, L = _input_plan(xp, k, stride)
    g = np.zeros((N, O) + grid, dtype=np.float64)
    g[:, :, :do, :ho, :wo] = gout
    gw = _grid_wgrad(buf, off, g.reshape(N, O, -1), L)
    if cols is not None:
        out = np.empty_like(gw)
        out[:, cols] = gw
        gw = out
    return gw.reshape(O, C, k, k, k)


def corr3d_grad_input(gout, w, int stride, tuple padded_shape):
    gout = np.ascontiguousarray(gout, dtype=np.float64)
    N, O = gout.shape[:2]
    C, k = w.shape[1], w.shape[2]
    do, ho, wo = gout.shape[2:]
    shifts_all = [(a, b, e) for a in range(k) for b in range(k) for e in range(k)]
    if stride == 1:
        # full correlation with the flipped, channel-transposed kernel
        m = k - 1
        gp = np.pad(gout, ((0, 0), (0, 0), (m, m), (m, m), (m, m)))
        grid = gp.shape[2:]
        off = _offsets(O, shifts_all, grid)
        wf = w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4)
        wt = np.ascontiguousarray(wf.reshape(C, -1))
        V = grid[0] * grid[1] * grid[2]
        y = _grid_fwd(gp.reshape(N, O, -1), off, wt, _valid_len(grid, m), V).reshape((N, C) + grid)
        sp = padded_shape[2:]
        return np.ascontiguousarray(y[:, :, : sp[0], : sp[1], : sp[2]])

    # stride 2: each parity phase of the input gradient is a stride-1 full
    # correlation of the output gradient, padded by M on the low side
    M = (k - 1) // 2
    grid = tuple((n + 1) // 2 + M for n in padded_shape[2:])
    gp = np.zeros((N, O) + grid, dtype=np.float64)
    gp[:, :, M : M + do, M : M + ho, M : M + wo] = gout
    buf = gp.reshape(N, O, -1)
    V = grid[0] * grid[1] * grid[2]
    L = _valid_len(grid, M)
    gx = np.zeros(padded_shape, dtype=np.float64)
    w2 = w.reshape(O, C, -1)
    for ph in range(8):
        pa, pb, pe = ph >> 2, (ph >> 1) & 1, ph & 1
        shifts, cols = [], []
        for a in range(pa, k, 2):
            for b in range(pb, k, 2):
                for e in range(pe, k, 2):
                    shifts.append((M - (a >> 1), M - (b >> 1), M - (e >> 1)))
                    cols.append((a * k + b) * k + e)
        if not shifts:
            continue
        off = _offsets(O, shifts, grid)
        wt = np.ascontiguousarray(w2[:, :, cols].transpose(1, 0, 2).reshape(C, -1))
        y = _grid_fwd(buf, off, wt, L, V).reshape((N, C) + grid)
        tgt = gx[:, :, pa::2, pb::2, pe::2]
        tgt[...] = y[:, :, : tgt.shape[2], : tgt.shape[3], : tgt.shape[4]]
    return gx
