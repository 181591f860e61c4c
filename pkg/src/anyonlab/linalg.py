"""Small dense complex linear algebra.

Everything in this package runs on modest matrices (dimension capped at a few
thousand), stored as complex ``numpy`` arrays.  This module provides the
operations the rest of the library leans on:

* tensor products with an explicit size cap,
* weighted partial traces over the left factor of a bipartite space,
* spectral decomposition of normal matrices into eigenvalue clusters and
  orthogonal projectors,
* JSON serialization of matrices.

Index convention for bipartite spaces
-------------------------------------
A composite basis state ``|left, right>`` of ``V_L (x) V_R`` is flattened as
``index = right * dim_left + left``: the *right* factor is the slow (most
significant) index and the *left* factor the fast one.  All fixture matrices
and partial traces in the package follow this packing.

Normal-matrix eigensolver
-------------------------
A normal matrix ``M`` is split as ``M = H + iK`` with ``H, K`` Hermitian and
commuting.  ``H`` is diagonalised first; within each (near-)degenerate
eigenspace of ``H`` the restriction of ``K`` is diagonalised to resolve the
imaginary parts.  This yields a genuinely orthonormal eigenbasis even for
degenerate complex eigenvalues, which ``numpy.linalg.eig`` does not guarantee.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConvergenceFailure,
    DimensionMismatch,
    NotNormal,
    NotSquare,
    NotUnitary,
    SizeOverflow,
    ValidationError,
)

#: Residual tolerance for normality / unitarity / hermiticity checks.
DEFAULT_NORMALITY_TOL = 1e-10

#: Eigenvalues closer than this are merged into one degenerate cluster.
DEFAULT_CLUSTER_TOL = 1e-8

#: Default cap on the total dimension of any matrix built by this package.
DEFAULT_DIM_CAP = 4096


def as_complex_matrix(m, name: str = "matrix") -> np.ndarray:
    """Return ``m`` as a 2-d complex128 array, requiring finite entries."""
    arr = np.asarray(m, dtype=np.complex128)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr.real)) or not np.all(np.isfinite(arr.imag)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def require_square(m: np.ndarray, name: str = "matrix") -> int:
    if m.shape[0] != m.shape[1]:
        raise NotSquare(f"{name} must be square, got shape {m.shape}")
    return m.shape[0]


def normality_residual(m: np.ndarray) -> float:
    """Frobenius norm of the commutator ``[m, m^dagger]``."""
    mh = m.conj().T
    return float(np.linalg.norm(m @ mh - mh @ m))


def unitarity_residual(m: np.ndarray) -> float:
    n = m.shape[0]
    return float(np.linalg.norm(m @ m.conj().T - np.eye(n)))


def hermiticity_residual(m: np.ndarray) -> float:
    return float(np.linalg.norm(m - m.conj().T))


def require_unitary(m: np.ndarray, tol: float = DEFAULT_NORMALITY_TOL, name: str = "matrix") -> None:
    res = unitarity_residual(m)
    if res > tol:
        raise NotUnitary(f"{name} is not unitary: residual {res:.3e} > {tol:.1e}")


@dataclass(frozen=True)
class SpectralDecomposition:
    """Clustered eigenvalues of a normal matrix with orthogonal projectors.

    Attributes
    ----------
    eigenvalues : ndarray, shape (k,)
        One representative complex eigenvalue per cluster.
    projectors : ndarray, shape (k, n, n)
        Orthogonal projector onto each cluster's eigenspace.  They sum to the
        identity, are mutually orthogonal, and ``sum_j eigenvalues[j] *
        projectors[j]`` reconstructs the source matrix.
    source_dim : int
        Dimension ``n`` of the decomposed matrix.
    """

    eigenvalues: np.ndarray
    projectors: np.ndarray
    source_dim: int

    def __len__(self) -> int:
        return len(self.eigenvalues)

    def reconstruct(self) -> np.ndarray:
        """Rebuild ``sum_j lambda_j E_j``."""
        return np.tensordot(self.eigenvalues, self.projectors, axes=1)

    def ranks(self) -> np.ndarray:
        """Rank (trace) of each projector, rounded to integers."""
        return np.array([int(round(np.trace(p).real)) for p in self.projectors])

    def weights(self, psi: np.ndarray) -> np.ndarray:
        """Spectral weights ``<psi|E_j|psi>`` of a state vector."""
        psi = np.asarray(psi, dtype=np.complex128).reshape(-1)
        if psi.shape[0] != self.source_dim:
            raise DimensionMismatch(
                f"state has dimension {psi.shape[0]}, decomposition expects {self.source_dim}"
            )
        w = np.array([np.vdot(psi, p @ psi).real for p in self.projectors])
        return w

    def density_weights(self, rho: np.ndarray) -> np.ndarray:
        """Spectral weights ``Tr(E_j rho)`` of a density matrix."""
        rho = as_complex_matrix(rho, "rho")
        if rho.shape[0] != self.source_dim:
            raise DimensionMismatch(
                f"density matrix has dimension {rho.shape[0]}, expected {self.source_dim}"
            )
        return np.array([np.trace(p @ rho).real for p in self.projectors])

    def apply_function(self, f) -> np.ndarray:
        """Evaluate a scalar function of the matrix, ``sum_j f(lambda_j) E_j``."""
        vals = np.array([f(lam) for lam in self.eigenvalues], dtype=np.complex128)
        return np.tensordot(vals, self.projectors, axes=1)


def _cluster_indices(values: np.ndarray, tol: float) -> list[np.ndarray]:
    """Group indices of ``values`` into connected tolerance-ball clusters.

    Greedy union: two values belong to the same cluster when they are linked
    by a chain of pairs each within ``tol``.  Iterated until cluster means are
    pairwise separated by more than ``tol``.
    """
    idx = np.arange(len(values))
    # union-find over the "within tol" graph
    parent = list(range(len(values)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            if abs(values[i] - values[j]) <= tol:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    groups: dict[int, list[int]] = {}
    for i in idx:
        groups.setdefault(find(i), []).append(i)
    clusters = [np.array(g) for g in groups.values()]
    # merge again if cluster means ended up within tol of each other
    while True:
        means = [values[c].mean() for c in clusters]
        merged = False
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                if abs(means[i] - means[j]) <= tol:
                    clusters[i] = np.concatenate([clusters[i], clusters[j]])
                    del clusters[j]
                    merged = True
                    break
            if merged:
                break
        if not merged:
            return clusters


def spectral_decompose(
    m,
    cluster_tol: float = DEFAULT_CLUSTER_TOL,
    normality_tol: float = DEFAULT_NORMALITY_TOL,
) -> SpectralDecomposition:
    """Decompose a normal matrix into clustered eigenvalues and projectors.

    Eigenvalues within a ``cluster_tol`` ball of each other are merged into a
    single degenerate eigenspace.  The returned clusters are pairwise
    separated by more than ``cluster_tol``.

    Raises
    ------
    NotSquare
        If ``m`` is not square.
    NotNormal
        If the commutator residual ``||[m, m^dagger]||`` exceeds
        ``normality_tol`` (scaled by the squared matrix norm).
    ConvergenceFailure
        If the underlying Hermitian eigensolver fails to converge.
    """
    m = as_complex_matrix(m)
    n = require_square(m)
    scale = max(1.0, float(np.linalg.norm(m)) ** 2)
    res = normality_residual(m)
    if res > normality_tol * scale:
        raise NotNormal(f"normality residual {res:.3e} exceeds tolerance {normality_tol * scale:.3e}")

    h = (m + m.conj().T) / 2.0
    k = (m - m.conj().T) / 2.0j
    try:
        h_vals, basis = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - numpy rarely fails here
        raise ConvergenceFailure(f"eigensolver failed on the Hermitian part: {exc}") from exc

    # resolve imaginary parts inside each (near-)degenerate block of H
    eigenvalues = np.empty(n, dtype=np.complex128)
    start = 0
    for stop in range(1, n + 1):
        if stop < n and h_vals[stop] - h_vals[stop - 1] <= cluster_tol:
            continue
        block = basis[:, start:stop]
        k_block = block.conj().T @ k @ block
        k_block = (k_block + k_block.conj().T) / 2.0
        try:
            k_vals, rot = np.linalg.eigh(k_block)
        except np.linalg.LinAlgError as exc:  # pragma: no cover
            raise ConvergenceFailure(f"eigensolver failed on a degenerate block: {exc}") from exc
        basis[:, start:stop] = block @ rot
        eigenvalues[start:stop] = h_vals[start:stop].mean() + 1j * k_vals
        start = stop

    clusters = _cluster_indices(eigenvalues, cluster_tol)
    clustered_vals = []
    projectors = []
    for cluster in clusters:
        vecs, _ = np.linalg.qr(basis[:, cluster])
        projectors.append(vecs @ vecs.conj().T)
        clustered_vals.append(eigenvalues[cluster].mean())
    vals = np.array(clustered_vals, dtype=np.complex128)
    order = np.lexsort((-vals.imag, -vals.real))
    vals = vals[order]
    projs = np.array(projectors, dtype=np.complex128)[order]
    return SpectralDecomposition(eigenvalues=vals, projectors=projs, source_dim=n)


def kron(a, b, dim_cap: int = DEFAULT_DIM_CAP) -> np.ndarray:
    """Tensor product ``a (x) b`` with the first factor as the slow index.

    Raises :class:`SizeOverflow` when the result would exceed ``dim_cap`` in
    either dimension.
    """
    a = as_complex_matrix(a, "a")
    b = as_complex_matrix(b, "b")
    rows = a.shape[0] * b.shape[0]
    cols = a.shape[1] * b.shape[1]
    if rows > dim_cap or cols > dim_cap:
        raise SizeOverflow(f"tensor product of shape ({rows}, {cols}) exceeds cap {dim_cap}")
    return np.kron(a, b)


def partial_trace_left(m, dim_left: int, dim_right: int, weight_left) -> np.ndarray:
    """Weighted partial trace over the left factor of a bipartite operator.

    With the composite packing ``index = right * dim_left + left`` this
    computes ``out[r, s] = sum_{i,j} weight_left[j, i] * m[(i, r), (j, s)]``.
    Passing the identity as ``weight_left`` gives the plain partial trace.

    When ``weight_left`` is a unit-trace density matrix and ``m`` is the
    monodromy of a consistent braid system, the result is the normal operator
    whose eigenvalues govern many-to-one locking; for an arbitrary unitary
    ``m`` normality is not guaranteed.
    """
    m = as_complex_matrix(m)
    n = require_square(m)
    if n != dim_left * dim_right:
        raise DimensionMismatch(
            f"matrix dimension {n} != dim_left * dim_right = {dim_left * dim_right}"
        )
    w = as_complex_matrix(weight_left, "weight_left")
    if w.shape != (dim_left, dim_left):
        raise DimensionMismatch(f"weight_left has shape {w.shape}, expected ({dim_left}, {dim_left})")
    m4 = m.reshape(dim_right, dim_left, dim_right, dim_left)
    return np.einsum("ji,aibj->ab", w, m4)


def principal_unitary_sqrt(
    m,
    cluster_tol: float = DEFAULT_CLUSTER_TOL,
    normality_tol: float = DEFAULT_NORMALITY_TOL,
) -> np.ndarray:
    """Principal square root of a unitary matrix.

    Each eigenvalue ``exp(i a)`` with ``a`` in (-pi, pi] maps to
    ``exp(i a / 2)``.  The result is unitary and squares back to ``m``.
    """
    m = as_complex_matrix(m)
    require_unitary(m, normality_tol)
    dec = spectral_decompose(m, cluster_tol=cluster_tol, normality_tol=normality_tol)
    return dec.apply_function(lambda lam: np.exp(0.5j * np.angle(lam)))


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

def matrix_to_json(m) -> dict:
    """Serialize a matrix to ``{"rows", "cols", "re", "im"}`` (row-major)."""
    m = as_complex_matrix(m)
    return {
        "rows": int(m.shape[0]),
        "cols": int(m.shape[1]),
        "re": [float(x) for x in m.real.reshape(-1)],
        "im": [float(x) for x in m.imag.reshape(-1)],
    }


def matrix_from_json(data: dict) -> np.ndarray:
    """Inverse of :func:`matrix_to_json`."""
    try:
        rows, cols = int(data["rows"]), int(data["cols"])
        re = np.asarray(data["re"], dtype=np.float64)
        im = np.asarray(data["im"], dtype=np.float64)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed matrix JSON: {exc}") from exc
    if re.shape != (rows * cols,) or im.shape != (rows * cols,):
        raise ValidationError("matrix JSON entry count does not match rows * cols")
    return (re + 1j * im).reshape(rows, cols)


def matrix_to_json_str(m) -> str:
    return json.dumps(matrix_to_json(m))


def vector_to_json(v) -> dict:
    v = np.asarray(v, dtype=np.complex128).reshape(-1)
    return {"re": [float(x) for x in v.real], "im": [float(x) for x in v.imag]}


def vector_from_json(data: dict) -> np.ndarray:
    re = np.asarray(data["re"], dtype=np.float64)
    im = np.asarray(data["im"], dtype=np.float64)
    if re.shape != im.shape:
        raise ValidationError("vector JSON re/im length mismatch")
    return re + 1j * im
