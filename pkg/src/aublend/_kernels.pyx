# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled inner loops: blendshape composition and codebook lookup.

Both functions must round exactly like the numpy fallback in _kernels_py:
composition accumulates one weighted delta field at a time (no FMA, see the
-ffp-contract=off compile flag), and the distance scan sums squared
differences left to right, keeping the lowest index on ties.
"""


def compose_core(const double[:, ::1] template,
                 const double[:, :, ::1] basis_stack,
                 const long long[::1] indices,
                 const double[::1] weights,
                 double[:, ::1] out):
    """out = template + sum_i weights[i] * basis_stack[indices[i]]."""
    cdef Py_ssize_t v_count = template.shape[0]
    cdef Py_ssize_t k_count = indices.shape[0]
    cdef Py_ssize_t v, c, i, row
    cdef double w
    for v in range(v_count):
        for c in range(3):
            out[v, c] = template[v, c]
    for i in range(k_count):
        row = <Py_ssize_t> indices[i]
        w = weights[i]
        for v in range(v_count):
            for c in range(3):
                out[v, c] = out[v, c] + w * basis_stack[row, v, c]


def nearest_entries(const double[:, ::1] tokens,
                    const double[:, ::1] entries,
                    long long[::1] out_idx):
    """Exhaustive nearest-neighbor scan by squared Euclidean distance."""
    cdef Py_ssize_t n_count = tokens.shape[0]
    cdef Py_ssize_t p_count = entries.shape[0]
    cdef Py_ssize_t dim = tokens.shape[1]
    cdef Py_ssize_t n, p, d, best
    cdef double dist, diff, best_dist
    for n in range(n_count):
        best = 0
        best_dist = 0.0
        for p in range(p_count):
            dist = 0.0
            for d in range(dim):
                diff = tokens[n, d] - entries[p, d]
                dist = dist + diff * diff
            if p == 0 or dist < best_dist:
                best_dist = dist
                best = p
        out_idx[n] = best
