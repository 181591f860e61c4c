"""Named fixtures: monodromies with matching braid registries.

Built-in fixtures
-----------------
``explicitR2``
    A six-dimensional monodromy for a two-level incident particle ("B",
    basis ``|+>, |->``) circling a three-level target ("A").  Block diagonal
    over the target basis with eigenvalues +1 and -1, each threefold
    degenerate.  Probing it with ``|+>`` incident particles gives the
    many-to-one operator ``diag(-1/2, 1, -1/2)``.
``swap``
    Trivial braiding of two two-level particles: the exchange is a pure swap,
    the monodromy the identity.
``phase``
    An abelian anyon pair: the exchange is ``i * swap``, the monodromy ``-1``.

A directory of JSON fixtures can override or extend the built-ins via the
``ANYONLAB_FIXTURES`` environment variable; each ``<name>.json`` file carries
a ``dims`` block, a braid-matrix map, and the monodromy pair.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .braid import BraidRegistry
from .errors import ConfigError
from .linalg import matrix_from_json, matrix_to_json
from .schemes import MonodromySpec

FIXTURES_ENV_VAR = "ANYONLAB_FIXTURES"


@dataclass(frozen=True)
class Fixture:
    """A monodromy plus the braid registry that realizes it."""

    name: str
    monodromy: MonodromySpec
    registry: BraidRegistry
    species_b: str
    species_a: str
    description: str = ""
    default_psi_b: np.ndarray | None = None

    def to_json(self) -> dict:
        data = {
            "name": self.name,
            "description": self.description,
            "species": {"b": self.species_b, "a": self.species_a},
            "registry": self.registry.to_json(),
            "monodromy": matrix_to_json(self.monodromy.matrix),
        }
        if self.default_psi_b is not None:
            data["default_psi_b"] = {
                "re": [float(x) for x in self.default_psi_b.real],
                "im": [float(x) for x in self.default_psi_b.imag],
            }
        return data


def explicit_r2_matrix() -> np.ndarray:
    """The six-dimensional block monodromy, basis packed target-major."""
    s = np.sqrt(3.0)
    blocks = (
        np.array([[-0.5, s / 2], [s / 2, 0.5]]),
        np.array([[1.0, 0.0], [0.0, -1.0]]),
        np.array([[-0.5, -s / 2], [-s / 2, 0.5]]),
    )
    m = np.zeros((6, 6), dtype=np.complex128)
    for a, blk in enumerate(blocks):
        m[2 * a : 2 * a + 2, 2 * a : 2 * a + 2] = blk
    return m


def _build_explicit_r2() -> Fixture:
    mono = MonodromySpec.from_matrix(explicit_r2_matrix(), dim_b=2, dim_a=3, name="explicitR2")
    registry = BraidRegistry({"B": 2, "A": 3})
    registry.register_monodromy("B", "A", mono.matrix)
    registry.register_swap("B", "B")
    return Fixture(
        name="explicitR2",
        monodromy=mono,
        registry=registry,
        species_b="B",
        species_a="A",
        description="six-dimensional block monodromy with threefold-degenerate eigenvalues +1, -1",
        default_psi_b=np.array([1.0, 0.0], dtype=np.complex128),
    )


def _build_swap() -> Fixture:
    registry = BraidRegistry({"B": 2, "A": 2})
    registry.register_swap("B", "A")
    registry.register_swap("B", "B")
    registry.register_swap("A", "A")
    mono = MonodromySpec.from_matrix(registry.monodromy("B", "A"), dim_b=2, dim_a=2, name="swap")
    return Fixture(
        name="swap",
        monodromy=mono,
        registry=registry,
        species_b="B",
        species_a="A",
        description="purely permuting exchange; identity monodromy",
        default_psi_b=np.array([1.0, 0.0], dtype=np.complex128),
    )


def _build_phase() -> Fixture:
    registry = BraidRegistry({"B": 2, "A": 2})
    registry.register_phase("B", "A", 1j)
    registry.register_swap("B", "B")
    mono = MonodromySpec.from_matrix(registry.monodromy("B", "A"), dim_b=2, dim_a=2, name="phase")
    return Fixture(
        name="phase",
        monodromy=mono,
        registry=registry,
        species_b="B",
        species_a="A",
        description="abelian exchange i * swap; monodromy -identity",
        default_psi_b=np.array([1.0, 0.0], dtype=np.complex128),
    )


_BUILTIN_FIXTURES = {
    "explicitR2": _build_explicit_r2,
    "swap": _build_swap,
    "phase": _build_phase,
}


def fixture_from_json(data: dict) -> Fixture:
    """Build a fixture from its JSON form (see :meth:`Fixture.to_json`)."""
    try:
        name = str(data["name"])
        species = data["species"]
        species_b, species_a = str(species["b"]), str(species["a"])
        registry = BraidRegistry.from_json(data["registry"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed fixture JSON: missing {exc}") from exc
    dims = registry.species_dims
    if "monodromy" in data:
        matrix = matrix_from_json(data["monodromy"])
    else:
        matrix = registry.monodromy(species_b, species_a)
    mono = MonodromySpec.from_matrix(matrix, dim_b=dims[species_b], dim_a=dims[species_a], name=name)
    psi_b = None
    if "default_psi_b" in data:
        raw = data["default_psi_b"]
        psi_b = np.asarray(raw["re"], dtype=float) + 1j * np.asarray(raw["im"], dtype=float)
    return Fixture(
        name=name,
        monodromy=mono,
        registry=registry,
        species_b=species_b,
        species_a=species_a,
        description=str(data.get("description", "")),
        default_psi_b=psi_b,
    )


def fixture_directory() -> Path | None:
    override = os.environ.get(FIXTURES_ENV_VAR)
    return Path(override) if override else None


def list_fixtures() -> list[str]:
    """Names of all available fixtures, built-ins plus directory overrides."""
    names = set(_BUILTIN_FIXTURES)
    directory = fixture_directory()
    if directory is not None and directory.is_dir():
        names.update(p.stem for p in directory.glob("*.json"))
    return sorted(names)


def load_fixture(name: str) -> Fixture:
    """Load a fixture by name, preferring the override directory."""
    directory = fixture_directory()
    if directory is not None:
        path = directory / f"{name}.json"
        if path.is_file():
            try:
                data = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"fixture file {path} is not valid JSON: {exc}") from exc
            return fixture_from_json(data)
    try:
        return _BUILTIN_FIXTURES[name]()
    except KeyError:
        raise ConfigError(
            f"unknown fixture {name!r}; available: {list_fixtures()}"
        ) from None


def save_fixture(fixture: Fixture, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{fixture.name}.json"
    path.write_text(json.dumps(fixture.to_json(), indent=2, sort_keys=True))
    return path


# ---------------------------------------------------------------------------
# Invariant suite
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckRow:
    name: str
    residual: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.tol


def verify_fixture(fixture: Fixture, tol: float = 1e-10) -> list[CheckRow]:
    """Run the invariant suite on a fixture and return one row per check.

    Covers unitarity of the monodromy and every braid matrix, the braid
    relations, the spectral-decomposition invariants, and (when a default
    incident state ships with the fixture) normality and the unit-disk bound
    of the partial-trace operator.
    """
    from .braid import check_yang_baxter
    from .linalg import normality_residual, unitarity_residual
    from .schemes import compute_U

    rows: list[CheckRow] = []
    mono = fixture.monodromy
    rows.append(CheckRow("monodromy unitarity", unitarity_residual(mono.matrix), tol))
    for left, right in fixture.registry.pairs():
        braid = fixture.registry.get(left, right)
        rows.append(
            CheckRow(f"braid unitarity {left}:{right}", unitarity_residual(braid.matrix), tol)
        )
    double = fixture.registry.monodromy(fixture.species_b, fixture.species_a)
    rows.append(
        CheckRow("double exchange reproduces monodromy",
                 float(np.linalg.norm(double - mono.matrix)), tol)
    )
    dec = mono.decomposition
    rows.append(
        CheckRow("spectral reconstruction",
                 float(np.linalg.norm(dec.reconstruct() - mono.matrix)), tol)
    )
    identity = np.eye(dec.source_dim)
    rows.append(
        CheckRow("projector completeness",
                 float(np.linalg.norm(dec.projectors.sum(axis=0) - identity)), tol)
    )
    ortho = 0.0
    for i, pi in enumerate(dec.projectors):
        for j, pj in enumerate(dec.projectors):
            target = pi if i == j else 0.0
            ortho = max(ortho, float(np.linalg.norm(pi @ pj - target)))
    rows.append(CheckRow("projector orthogonality", ortho, tol))
    rows.append(
        CheckRow("eigenvalues on unit circle",
                 float(np.max(np.abs(np.abs(dec.eigenvalues) - 1.0))), tol)
    )
    yb = check_yang_baxter(fixture.registry)
    rows.append(CheckRow(f"braid relations ({len(yb.checks)} relations)", yb.max_residual, tol))
    if fixture.default_psi_b is not None:
        rho_b = np.outer(fixture.default_psi_b, fixture.default_psi_b.conj())
        u, u_dec = compute_U(mono, rho_b)
        rows.append(CheckRow("partial-trace operator normality", normality_residual(u), tol))
        over = max(0.0, float(np.max(np.abs(u_dec.eigenvalues))) - 1.0)
        rows.append(CheckRow("partial-trace eigenvalues in unit disk", over, tol))
    return rows


__all__ = [
    "Fixture",
    "FIXTURES_ENV_VAR",
    "explicit_r2_matrix",
    "fixture_from_json",
    "list_fixtures",
    "load_fixture",
    "save_fixture",
]
