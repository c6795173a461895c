# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: horizontal bilinear warp and semi-global matching."""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport floor
from libc.stdint cimport uint64_t
from libc.stdlib cimport calloc, free

cnp.import_array()

ctypedef fused real:
    float
    double


cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


cdef inline int popcount64(uint64_t v) noexcept nogil:
    return __builtin_popcountll(v)


def warp_forward(real[:, :, :, ::1] src, real[:, :, ::1] disp, int sign, int num_threads=1):
    cdef Py_ssize_t n = src.shape[0], c = src.shape[1], h = src.shape[2], w = src.shape[3]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t row, b, y, x, ch, x0, x1
    cdef double xs, a
    for row in prange(n * h, nogil=True, num_threads=num_threads, schedule="static"):
        b = row // h
        y = row % h
        for x in range(w):
            xs = x - sign * <double>disp[b, y, x]
            if xs < 0:
                xs = 0
            elif xs > w - 1:
                xs = w - 1
            x0 = <Py_ssize_t>floor(xs)
            x1 = x0 + 1
            if x1 > w - 1:
                x1 = w - 1
            a = xs - x0
            for ch in range(c):
                out[b, ch, y, x] = <real>((1.0 - a) * src[b, ch, y, x0] + a * src[b, ch, y, x1])
    return out_arr


def warp_backward(real[:, :, :, ::1] src, real[:, :, ::1] disp, int sign, real[:, :, :, ::1] gout,
                  bint need_src=True, int num_threads=1):
    cdef Py_ssize_t n = src.shape[0], c = src.shape[1], h = src.shape[2], w = src.shape[3]
    dtype = np.float32 if real is float else np.float64
    gdisp_arr = np.zeros((n, h, w), dtype=dtype)
    gsrc_arr = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, ::1] gdisp = gdisp_arr
    cdef real[:, :, :, ::1] gsrc = gsrc_arr
    cdef Py_ssize_t row, b, y, x, ch, x0, x1
    cdef double xs, raw, a, acc, g
    cdef bint inside
    for row in prange(n * h, nogil=True, num_threads=num_threads, schedule="static"):
        b = row // h
        y = row % h
        for x in range(w):
            raw = x - sign * <double>disp[b, y, x]
            xs = raw
            inside = 1
            if xs < 0:
                xs = 0
                inside = 0
            elif xs > w - 1:
                xs = w - 1
                inside = 0
            x0 = <Py_ssize_t>floor(xs)
            x1 = x0 + 1
            if x1 > w - 1:
                x1 = w - 1
            a = xs - x0
            acc = 0.0
            for ch in range(c):
                g = gout[b, ch, y, x]
                if inside:
                    acc = acc + g * (src[b, ch, y, x1] - src[b, ch, y, x0])
                if need_src:
                    gsrc[b, ch, y, x0] += <real>((1.0 - a) * g)
                    gsrc[b, ch, y, x1] += <real>(a * g)
            gdisp[b, y, x] = <real>(-sign * acc)
    return (gsrc_arr if need_src else None), gdisp_arr


def census(float[:, ::1] img, int win):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef int r = win // 2
    cdef int nbits = win * win - 1
    cdef int nwords = (nbits + 63) // 64
    out_arr = np.zeros((h, w, nwords), dtype=np.uint64)
    cdef uint64_t[:, :, ::1] out = out_arr
    # edge replication via a padded copy keeps the inner loop free of clamps
    cdef float[:, ::1] pad = np.pad(np.asarray(img), r, mode="edge")
    cdef Py_ssize_t y, x
    cdef int dy, dx, bit = 0, word, shift
    cdef const float* row
    cdef const float* ctr
    cdef uint64_t* dst
    with nogil:
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                if dy == 0 and dx == 0:
                    continue
                word = bit >> 6
                shift = bit & 63
                for y in range(h):
                    row = &pad[y + r + dy, r + dx]
                    ctr = &img[y, 0]
                    dst = &out[y, 0, word]
                    for x in range(w):
                        dst[x * nwords] |= (<uint64_t>(row[x] < ctr[x])) << shift
                bit += 1
    return out_arr


def cost_volume(uint64_t[:, :, ::1] cl, uint64_t[:, :, ::1] cr, int max_disp, float max_cost):
    cdef Py_ssize_t h = cl.shape[0], w = cl.shape[1], nw = cl.shape[2]
    out_arr = np.empty((h, w, max_disp), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef Py_ssize_t y, x, d, k
    cdef int dist
    with nogil:
        for y in range(h):
            for x in range(w):
                for d in range(max_disp):
                    if x - d < 0:
                        out[y, x, d] = max_cost
                        continue
                    dist = 0
                    for k in range(nw):
                        dist = dist + popcount64(cl[y, x, k] ^ cr[y, x - d, k])
                    out[y, x, d] = dist
    return out_arr


cdef int[8] DIR_Y = [0, 0, 1, -1, 1, 1, -1, -1]
cdef int[8] DIR_X = [1, -1, 0, 0, 1, -1, 1, -1]


cdef void _aggregate_path(const float[:, :, ::1] cost, float[:, :, ::1] lr, int dy, int dx,
                          float p1, float p2) noexcept nogil:
    cdef Py_ssize_t h = cost.shape[0], w = cost.shape[1], nd = cost.shape[2]
    cdef Py_ssize_t iy, ix, y, x, py, px, d
    cdef float minprev, best, v
    for iy in range(h):
        y = iy if dy >= 0 else h - 1 - iy
        for ix in range(w):
            x = ix if dx >= 0 else w - 1 - ix
            py = y - dy
            px = x - dx
            if py < 0 or py >= h or px < 0 or px >= w:
                for d in range(nd):
                    lr[y, x, d] = cost[y, x, d]
                continue
            minprev = lr[py, px, 0]
            for d in range(1, nd):
                if lr[py, px, d] < minprev:
                    minprev = lr[py, px, d]
            for d in range(nd):
                best = lr[py, px, d]
                if d > 0:
                    v = lr[py, px, d - 1] + p1
                    if v < best:
                        best = v
                if d < nd - 1:
                    v = lr[py, px, d + 1] + p1
                    if v < best:
                        best = v
                v = minprev + p2
                if v < best:
                    best = v
                lr[y, x, d] = cost[y, x, d] + best - minprev


def aggregate(float[:, :, ::1] cost, float p1, float p2, int paths, int num_threads=1):
    cdef Py_ssize_t h = cost.shape[0], w = cost.shape[1], nd = cost.shape[2]
    if paths not in (4, 8):
        raise ValueError("paths must be 4 or 8")
    per_path_arr = np.empty((paths, h, w, nd), dtype=np.float32)
    cdef float[:, :, :, ::1] per_path = per_path_arr
    cdef int k
    for k in prange(paths, nogil=True, num_threads=num_threads, schedule="static"):
        _aggregate_path(cost, per_path[k], DIR_Y[k], DIR_X[k], p1, p2)
    # fixed summation order keeps the result independent of the thread count
    out = per_path_arr[0].copy()
    for k in range(1, paths):
        out += per_path_arr[k]
    return out


# -- "same" convolution, stride 1 ----------------------------------------------

cdef extern from *:
    """
    static inline void gd_axpy_f(float *__restrict a, const float *__restrict s, float w, Py_ssize_t n) {
        for (Py_ssize_t i = 0; i < n; ++i) a[i] += w * s[i];
    }
    static inline void gd_axpy_d(double *__restrict a, const double *__restrict s, double w, Py_ssize_t n) {
        for (Py_ssize_t i = 0; i < n; ++i) a[i] += w * s[i];
    }
    static inline void gd_fma_f(float *__restrict a, const float *__restrict u, const float *__restrict v, Py_ssize_t n) {
        for (Py_ssize_t i = 0; i < n; ++i) a[i] += u[i] * v[i];
    }
    static inline void gd_fma_d(double *__restrict a, const double *__restrict u, const double *__restrict v, Py_ssize_t n) {
        for (Py_ssize_t i = 0; i < n; ++i) a[i] += u[i] * v[i];
    }
    """
    void gd_axpy_f(float *a, const float *s, float w, Py_ssize_t n) nogil
    void gd_axpy_d(double *a, const double *s, double w, Py_ssize_t n) nogil
    void gd_fma_f(float *a, const float *u, const float *v, Py_ssize_t n) nogil
    void gd_fma_d(double *a, const double *u, const double *v, Py_ssize_t n) nogil


def conv_same_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] weight, real[::1] bias, int num_threads=1):
    """out[n,o,y,x] = b[o] + sum_{c,i,j} w[o,c,i,j] x[n,c,y+i-r,x+j-r], zero padded."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = weight.shape[0], k = weight.shape[2], r = k // 2
    if weight.shape[1] != c or weight.shape[3] != k or k % 2 == 0:
        raise ValueError("conv_same_forward: kernel must be (out, in, k, k) with odd k")
    if bias.shape[0] != o:
        raise ValueError("conv_same_forward: bias length must match output channels")
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, o, h, wd), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t task, bi, oi, y, ci, i, j, yy, xx, dx, lo, hi
    for task in prange(n * o * h, nogil=True, num_threads=num_threads, schedule="static"):
        bi = task // (o * h)
        oi = (task // h) % o
        y = task % h
        for xx in range(wd):
            out[bi, oi, y, xx] = bias[oi]
        for ci in range(c):
            for i in range(k):
                yy = y + i - r
                if yy < 0 or yy >= h:
                    continue
                for j in range(k):
                    dx = j - r
                    lo = 0 if dx >= 0 else -dx
                    hi = wd - dx if dx > 0 else wd
                    if hi <= lo:
                        continue
                    if real is float:
                        gd_axpy_f(&out[bi, oi, y, lo], &x[bi, ci, yy, lo + dx], weight[oi, ci, i, j], hi - lo)
                    else:
                        gd_axpy_d(&out[bi, oi, y, lo], &x[bi, ci, yy, lo + dx], weight[oi, ci, i, j], hi - lo)
    return out_arr


def conv_same_grad_weight(real[:, :, :, ::1] x, real[:, :, :, ::1] gout, int k, int num_threads=1):
    """gw[o,c,i,j] = sum_{n,y,x} g[n,o,y,x] x[n,c,y+i-r,x+j-r].

    Products are accumulated per column in a k*k x W buffer and reduced in
    double once per (o, c), so the result does not depend on the thread count.
    """
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = gout.shape[1], r = k // 2
    if gout.shape[0] != n or gout.shape[2] != h or gout.shape[3] != wd:
        raise ValueError("conv_same_grad_weight: gradient shape does not match input")
    acc_arr = np.zeros((o * c, k * k), dtype=np.float64)
    cdef double[:, ::1] acc = acc_arr
    cdef Py_ssize_t task, oi, ci, bi, y, i, j, yy, dx, lo, hi, q
    cdef real *buf
    cdef double s
    for task in prange(o * c, nogil=True, num_threads=num_threads, schedule="static"):
        oi = task // c
        ci = task % c
        buf = <real *> calloc(k * k * wd, sizeof(real))
        for bi in range(n):
            for y in range(h):
                for i in range(k):
                    yy = y + i - r
                    if yy < 0 or yy >= h:
                        continue
                    for j in range(k):
                        dx = j - r
                        lo = 0 if dx >= 0 else -dx
                        hi = wd - dx if dx > 0 else wd
                        if hi <= lo:
                            continue
                        if real is float:
                            gd_fma_f(buf + (i * k + j) * wd + lo, &gout[bi, oi, y, lo], &x[bi, ci, yy, lo + dx], hi - lo)
                        else:
                            gd_fma_d(buf + (i * k + j) * wd + lo, &gout[bi, oi, y, lo], &x[bi, ci, yy, lo + dx], hi - lo)
        for q in range(k * k):
            s = 0.0
            for y in range(wd):
                s = s + buf[q * wd + y]
            acc[task, q] = s
        free(buf)
    dtype = np.float32 if real is float else np.float64
    return acc_arr.reshape(o, c, k, k).astype(dtype)
