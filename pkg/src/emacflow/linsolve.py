"""Sparse direct factorization with factorize-once/solve-many reuse.

Backed by SuperLU (scipy.sparse.linalg.splu) with partial pivoting,
which handles the symmetric-indefinite saddle-point systems produced by
the mixed discretization. Global counters track factorizations and
solves for run statistics.
"""

import re

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrixError(Exception):
    """Numerically singular pivot during factorization."""

    def __init__(self, message, pivot=-1):
        super().__init__(message)
        self.pivot = pivot


class Counters:
    def __init__(self):
        self.factorizations = 0
        self.solves = 0

    def reset(self):
        self.factorizations = 0
        self.solves = 0


counters = Counters()


class Factorization:
    """Reusable LU factorization bound to one matrix snapshot."""

    def __init__(self, A, step_index=None):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        if not np.all(np.isfinite(A.data)):
            raise ValueError("matrix contains non-finite entries")
        self.shape = A.shape
        self.step_index = step_index
        try:
            self._lu = spla.splu(A)
        except RuntimeError as exc:
            msg = str(exc)
            m = re.search(r"singular.*?(\d+)", msg, re.IGNORECASE)
            pivot = int(m.group(1)) if m else -1
            raise SingularMatrixError(f"factorization failed: {msg}", pivot=pivot)
        counters.factorizations += 1

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.shape[0]:
            raise ValueError(f"rhs length {b.shape[0]} does not match {self.shape}")
        counters.solves += 1
        if not b.any():
            return np.zeros_like(b)
        return self._lu.solve(b)


def factorize(A, step_index=None):
    return Factorization(A, step_index=step_index)


def solve(F: Factorization, b):
    return F.solve(b)
