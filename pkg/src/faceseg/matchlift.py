"""Pairwise-evidence matrices and the MatchLift convex program (stage 3).

The relaxation minimizes  -<X, X_in> + 1/2 <X, 11^T>  subject to X >= 0
elementwise, X_ii = 1, and the bordered matrix [[m, 1^T], [1, X]] being
positive semidefinite, where m bounds the number of faces. It is solved by
two-block consensus ADMM on the bordered (N+1) x (N+1) variable: one block
projects onto the PSD cone (eigenvalue clamping), the other applies the
closed-form prox of the linear objective followed by projection onto the
affine/box constraint set.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

SOFT = "soft"
HARD = "hard"

MATRIX_MAGIC = b"FSPM0001"


@dataclass
class PairMatrix:
    """Symmetric N x N same-face evidence with unit diagonal.

    SOFT matrices hold probabilities in [0, 1]; HARD matrices hold 0/1
    decisions.
    """

    values: np.ndarray
    kind: str = SOFT

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ValueError("pair matrix must be square")
        if self.kind not in (SOFT, HARD):
            raise ValueError(f"kind must be '{SOFT}' or '{HARD}'")
        if not np.allclose(self.values, self.values.T, atol=1e-8):
            raise ValueError("pair matrix must be symmetric")
        if not np.allclose(np.diag(self.values), 1.0, atol=1e-8):
            raise ValueError("pair matrix must have unit diagonal")
        if self.values.min() < -1e-9 or self.values.max() > 1.0 + 1e-9:
            raise ValueError("entries must lie in [0, 1]")
        if self.kind == HARD:
            rounded = np.round(self.values)
            if not np.allclose(self.values, rounded, atol=1e-9):
                raise ValueError("hard matrix entries must be 0 or 1")

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass
class SolverParams:
    rho: float = 1.0
    tol: float = 1e-6
    max_iter: int = 5000
    adapt_rho: bool = False  # residual balancing: factor 2 every 50 iterations
    adapt_factor: float = 2.0
    adapt_interval: int = 50
    adapt_ratio: float = 10.0


@dataclass
class SdpSolution:
    x: np.ndarray
    objective: float
    iterations: int
    primal_residual: float
    dual_residual: float
    m_used: int
    converged: bool
    residual_history: list[float] = field(default_factory=list, repr=False)


@dataclass
class FeasibilityReport:
    max_diag_deviation: float
    most_negative_entry: float
    min_bordered_eigenvalue: float


def harden(soft: PairMatrix, threshold: float = 0.5) -> PairMatrix:
    """Threshold a soft matrix into hard 0/1 decisions; a value exactly at the
    threshold counts as "same". The diagonal is forced to 1."""
    if soft.kind != SOFT:
        raise ValueError("harden expects a SOFT matrix")
    values = (soft.values >= threshold).astype(np.float64)
    np.fill_diagonal(values, 1.0)
    return PairMatrix(values, HARD)


def bordered(x: np.ndarray, m: float) -> np.ndarray:
    """The (N+1) x (N+1) matrix [[m, 1^T], [1, X]]."""
    n = x.shape[0]
    z = np.empty((n + 1, n + 1))
    z[0, 0] = m
    z[0, 1:] = 1.0
    z[1:, 0] = 1.0
    z[1:, 1:] = x
    return z


def psd_project(a: np.ndarray) -> np.ndarray:
    """Frobenius-nearest positive semidefinite matrix: clamp negative
    eigenvalues of the symmetrized input to zero."""
    sym = (a + a.T) / 2.0
    evals, evecs = np.linalg.eigh(sym)
    if evals[0] >= 0.0:
        return sym
    clamped = np.clip(evals, 0.0, None)
    return (evecs * clamped) @ evecs.T


def _project_constraints(v: np.ndarray, m: float) -> np.ndarray:
    # Projection onto {Z00 = m, border = 1, diag(X) = 1, X >= 0}; the
    # constraints are entrywise separable so assignment/clamping is exact.
    out = (v + v.T) / 2.0
    out[0, 0] = m
    out[0, 1:] = 1.0
    out[1:, 0] = 1.0
    inner = out[1:, 1:]
    np.clip(inner, 0.0, None, out=inner)
    np.fill_diagonal(inner, 1.0)
    return out


def solve_matchlift(
    x_in: PairMatrix, m: int, params: SolverParams | None = None
) -> SdpSolution:
    """Solve the consistency relaxation for the given face-count bound m.

    Returns the X block of the constraint-feasible iterate; its distance to
    the PSD cone is bounded by the final primal residual. When the residual
    target is not reached within max_iter, the partial solution is returned
    with converged=False.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    params = params if params is not None else SolverParams()
    n = x_in.n
    cost = np.zeros((n + 1, n + 1))
    cost[1:, 1:] = 0.5 - x_in.values

    w = bordered(x_in.values, m)
    u = np.zeros_like(w)
    rho = params.rho
    primal = dual = np.inf
    history: list[float] = []
    iterations = 0
    converged = False

    for iterations in range(1, params.max_iter + 1):
        z = psd_project(w - u)
        w_prev = w
        w = _project_constraints(z + u - cost / rho, m)
        primal = float(np.linalg.norm(z - w))
        dual = float(rho * np.linalg.norm(w - w_prev))
        if iterations == 1 or iterations % 10 == 0:
            history.append(max(primal, dual))
        if max(primal, dual) <= params.tol:
            converged = True
            break
        u = u + z - w
        if params.adapt_rho and iterations % params.adapt_interval == 0:
            if primal > params.adapt_ratio * dual:
                rho *= params.adapt_factor
                u /= params.adapt_factor
            elif dual > params.adapt_ratio * primal:
                rho /= params.adapt_factor
                u *= params.adapt_factor

    x = w[1:, 1:].copy()
    objective = float(-np.sum(x * x_in.values) + 0.5 * np.sum(x))
    return SdpSolution(
        x=x,
        objective=objective,
        iterations=iterations,
        primal_residual=primal,
        dual_residual=dual,
        m_used=m,
        converged=converged,
        residual_history=history,
    )


def estimate_m(x_in: PairMatrix) -> int:
    """Estimate the face count from the eigenvalue spectrum of the input.

    Sorts eigenvalues descending and returns the count before the largest
    consecutive ratio gap among the top min(N, 30); when no gap exists (all
    ratios ~1, e.g. the identity) it falls back to N. The default pipeline
    prefers a fixed overestimate, since underestimating m joins unrelated
    clusters.
    """
    evals = np.linalg.eigvalsh(x_in.values)[::-1]
    evals = np.clip(evals, 0.0, None)
    n = evals.shape[0]
    top = min(n, 30)
    if top < 2:
        return n
    tiny = max(evals[0], 1.0) * 1e-12
    best_ratio = 1.0
    best_index = n
    for i in range(top - 1):
        hi, lo = evals[i], evals[i + 1]
        if hi <= tiny and lo <= tiny:
            ratio = 1.0
        elif lo <= tiny:
            ratio = np.inf
        else:
            ratio = hi / lo
        if ratio > best_ratio * (1.0 + 1e-9):
            best_ratio = ratio
            best_index = i + 1
    return int(best_index) if best_ratio > 1.0 + 1e-9 else n


def feasibility_report(x: np.ndarray, m: float) -> FeasibilityReport:
    """The residuals behind the solution invariants: diagonal deviation,
    most negative entry, and minimum bordered eigenvalue."""
    x = np.asarray(x, dtype=np.float64)
    return FeasibilityReport(
        max_diag_deviation=float(np.max(np.abs(np.diag(x) - 1.0))),
        most_negative_entry=float(x.min()),
        min_bordered_eigenvalue=float(np.linalg.eigvalsh(bordered(x, m))[0]),
    )


def write_matrix(matrix: PairMatrix, path) -> None:
    """Binary matrix file: magic, N, kind byte, row-major float64 values."""
    with open(path, "wb") as handle:
        handle.write(MATRIX_MAGIC)
        handle.write(struct.pack("<QB", matrix.n, 0 if matrix.kind == SOFT else 1))
        handle.write(np.ascontiguousarray(matrix.values, dtype=np.float64).tobytes())


def read_matrix(path) -> PairMatrix:
    with open(path, "rb") as handle:
        magic = handle.read(len(MATRIX_MAGIC))
        if magic != MATRIX_MAGIC:
            raise ValueError(f"{path}: not a faceseg matrix file")
        n, kind_byte = struct.unpack("<QB", handle.read(9))
        values = np.frombuffer(handle.read(n * n * 8), dtype=np.float64).reshape(n, n)
    return PairMatrix(values.copy(), SOFT if kind_byte == 0 else HARD)


def write_matrix_csv(matrix: PairMatrix, path) -> None:
    np.savetxt(path, matrix.values, delimiter=",", fmt="%.17g")


def read_matrix_csv(path, kind: str = SOFT) -> PairMatrix:
    values = np.atleast_2d(np.loadtxt(path, delimiter=","))
    return PairMatrix(values, kind)
