"""Pure numpy/scipy version of the fused mixing update."""

import numpy as np
import scipy.sparse as sp


def mix_update(indptr, indices, data, prev, x, a, b, c, out):
    n = prev.shape[0]
    A = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    y = A @ prev
    np.multiply(y, a, out=out)
    out += b * prev
    out += c * x
    return out
