"""Matrix exponential by scaling and squaring with a degree-13 Padé core,
and transition matrices of continuous-time Markov chains."""

from __future__ import annotations

import numpy as np

# Padé(13) numerator coefficients b_0..b_13
_B13 = np.array([
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
    129060195264000.0, 10559470521600.0, 670442572800.0, 33522128640.0, 1323241920.0,
    40840800.0, 960960.0, 16380.0, 182.0, 1.0,
])
# 1-norm bound below which Padé(13) needs no scaling (double precision)
_THETA13 = 5.371920351148152

CLAMP_TOL = 1e-12


class NotAGenerator(ValueError):
    pass


def expm(A: np.ndarray) -> np.ndarray:
    """exp(A) for a square matrix."""
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ValueError("expm needs a square matrix")
    norm = np.abs(A).sum(axis=0).max() if n else 0.0
    s = max(0, int(np.ceil(np.log2(norm / _THETA13)))) if norm > _THETA13 else 0
    A = A / 2.0**s
    I = np.eye(n)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    b = _B13
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


def check_generator(G: np.ndarray, tol: float = 1e-9) -> None:
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise NotAGenerator("a generator must be square")
    off = G - np.diag(np.diag(G))
    if np.any(off < 0):
        raise NotAGenerator("generator off-diagonal entries must be non-negative")
    scale = max(1.0, np.abs(G).max())
    if np.any(np.abs(G.sum(axis=1)) > tol * scale):
        raise NotAGenerator("generator rows must sum to zero")


def matrix_exp(G: np.ndarray, dt: float) -> np.ndarray:
    """Transition matrix exp(dt G) of a CTMC, tiny negatives clamped to 0."""
    if dt < 0:
        raise ValueError("time step must be non-negative")
    check_generator(G)
    if dt == 0:
        return np.eye(np.asarray(G).shape[0])
    P = expm(dt * np.asarray(G, dtype=np.float64))
    P[(P < 0) & (P > -CLAMP_TOL)] = 0.0
    return P


def si_generator(b1: float, b2: float, N: int) -> np.ndarray:
    """Generator over the susceptible count S = 0..N.

    From S = i the chain moves to i - 1 at rate [b1 + b2 (N - i)] i; b2 = 0
    gives the death model.
    """
    i = np.arange(N + 1, dtype=np.float64)
    rate = (b1 + b2 * (N - i)) * i
    G = np.zeros((N + 1, N + 1))
    G[np.arange(1, N + 1), np.arange(N)] = rate[1:]
    G[np.arange(N + 1), np.arange(N + 1)] = -rate
    return G
