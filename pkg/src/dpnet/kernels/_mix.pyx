# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Fused CSR mixing update: out = a * (A @ prev) + b * prev + c * x."""

cimport cython


def mix_update(const int[::1] indptr, const int[::1] indices, const double[::1] data,
               const double[:, ::1] prev, const double[:, ::1] x,
               double a, double b, double c, double[:, ::1] out):
    cdef Py_ssize_t n = prev.shape[0]
    cdef Py_ssize_t R = prev.shape[1]
    cdef Py_ssize_t i, k, r, j
    cdef double w, acc
    cdef double* orow
    cdef const double* prow
    if out.shape[0] != n or out.shape[1] != R or x.shape[0] != n or x.shape[1] != R:
        raise ValueError("shape mismatch")
    if indptr.shape[0] != n + 1:
        raise ValueError("indptr length does not match the state")
    if n == 0 or R == 0:
        return
    # accumulate in CSR order so results match scipy's csr_matvecs bit for bit
    with nogil:
        if R == 1:
            for i in range(n):
                acc = 0.0
                for k in range(indptr[i], indptr[i + 1]):
                    acc = acc + data[k] * prev[indices[k], 0]
                out[i, 0] = a * acc + b * prev[i, 0] + c * x[i, 0]
        else:
            for i in range(n):
                orow = &out[i, 0]
                for r in range(R):
                    orow[r] = 0.0
                for k in range(indptr[i], indptr[i + 1]):
                    j = indices[k]
                    w = data[k]
                    prow = &prev[j, 0]
                    for r in range(R):
                        orow[r] = orow[r] + w * prow[r]
                for r in range(R):
                    orow[r] = a * orow[r] + b * prev[i, r] + c * x[i, r]
