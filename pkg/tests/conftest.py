from __future__ import annotations

import numpy as np
import pytest

from anyonlab.apparatus import Apparatus, paper_example
from anyonlab.fixtures import Fixture, load_fixture


def random_unitary(rng: np.random.Generator, n: int) -> np.ndarray:
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_unitary_with_spectrum(
    rng: np.random.Generator, n: int, n_distinct: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """A random unitary with a controlled set of (possibly degenerate) eigenvalues."""
    if n_distinct is None:
        n_distinct = int(rng.integers(2, min(n, 4) + 1))
    # keep distinct phases well separated so clustering is unambiguous
    phases = np.sort(rng.uniform(-np.pi + 0.1, np.pi - 0.1, size=n_distinct))
    while n_distinct > 1 and np.min(np.diff(phases)) < 0.15:
        phases = np.sort(rng.uniform(-np.pi + 0.1, np.pi - 0.1, size=n_distinct))
    assignment = rng.integers(0, n_distinct, size=n)
    assignment[:n_distinct] = np.arange(n_distinct)  # every value appears
    eigs = np.exp(1j * phases[assignment])
    basis = random_unitary(rng, n)
    return (basis * eigs) @ basis.conj().T, eigs


def random_density(rng: np.random.Generator, n: int) -> np.ndarray:
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = z @ z.conj().T
    return rho / np.trace(rho).real


def random_state(rng: np.random.Generator, n: int) -> np.ndarray:
    psi = rng.normal(size=n) + 1j * rng.normal(size=n)
    return psi / np.linalg.norm(psi)


def random_block_monodromy(rng: np.random.Generator, dim_b: int, dim_a: int) -> np.ndarray:
    """Unitary, block diagonal over the target basis: a consistent braid system."""
    m = np.zeros((dim_b * dim_a, dim_b * dim_a), dtype=np.complex128)
    for a in range(dim_a):
        m[a * dim_b : (a + 1) * dim_b, a * dim_b : (a + 1) * dim_b] = random_unitary(rng, dim_b)
    return m


@pytest.fixture(scope="session")
def app() -> Apparatus:
    return paper_example()


@pytest.fixture(scope="session")
def explicit_fixture() -> Fixture:
    return load_fixture("explicitR2")
