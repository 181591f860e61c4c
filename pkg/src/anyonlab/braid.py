"""Multi-particle internal states and adjacent-exchange braid operators.

Ordering convention
-------------------
Particles on the line are numbered right to left starting at one, and a
:class:`ParticleSystem` lists its species labels in that slot order:
``slots[0]`` is slot 1, the rightmost particle.  A state of the system is a
complex vector whose flat basis index treats slot 1 as the most significant
digit, i.e. the joint operator of per-slot factors is
``kron(op_slot1, op_slot2, ...)``.  For a two-particle system ``(right=A,
left=B)`` the composite index is therefore ``a * dim_B + b``, matching the
packing used throughout :mod:`anyonlab.linalg`.

Braid operators
---------------
The exchange of slots ``i`` and ``i + 1`` is a unitary on the pair space that
also swaps the two tensor factors.  Every braid matrix is stored as
``swap @ core`` where ``core`` acts on the incoming ``(left, right)`` pair
space without swapping; the clockwise exchange from the same configuration is
``swap @ core^{-1}``.  Matrix components depend only on the species pair, so
registering one ordering of a pair derives the other by conjugating the core
with the swap.

A registry may be built directly from a two-particle monodromy matrix: the
core is taken to be the principal unitary square root of the monodromy, which
reproduces the given monodromy exactly when the exchange is applied twice.
Only the monodromy is observable in the experiments covered here, so any
other square-root convention would give identical statistics.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    IndexOutOfRange,
    MissingBraidMatrix,
    SizeOverflow,
    ValidationError,
)
from .linalg import (
    DEFAULT_CLUSTER_TOL,
    DEFAULT_DIM_CAP,
    DEFAULT_NORMALITY_TOL,
    as_complex_matrix,
    matrix_from_json,
    matrix_to_json,
    principal_unitary_sqrt,
    require_unitary,
)


def swap_matrix(dim_left: int, dim_right: int) -> np.ndarray:
    """Permutation swapping the two factors of a pair space.

    Maps the incoming composite ``r * dim_left + l`` to the outgoing composite
    ``l * dim_right + r`` in which the former left particle now sits in the
    right slot.
    """
    n = dim_left * dim_right
    p = np.zeros((n, n), dtype=np.complex128)
    for l in range(dim_left):
        for r in range(dim_right):
            p[l * dim_right + r, r * dim_left + l] = 1.0
    return p


@dataclass(frozen=True)
class ParticleSystem:
    """An ordered line of particles with per-species internal dimensions."""

    slots: tuple[str, ...]
    species_dims: dict[str, int]
    dim_cap: int = DEFAULT_DIM_CAP

    def __post_init__(self) -> None:
        object.__setattr__(self, "slots", tuple(self.slots))
        for s in self.slots:
            if s not in self.species_dims:
                raise ValidationError(f"no dimension registered for species {s!r}")
        if self.total_dim > self.dim_cap:
            raise SizeOverflow(f"total dimension {self.total_dim} exceeds cap {self.dim_cap}")

    @property
    def n_particles(self) -> int:
        return len(self.slots)

    @property
    def slot_dims(self) -> tuple[int, ...]:
        """Dimension of each slot, slot 1 (rightmost) first."""
        return tuple(self.species_dims[s] for s in self.slots)

    @property
    def total_dim(self) -> int:
        d = 1
        for s in self.slots:
            d *= self.species_dims[s]
        return d

    def swapped(self, i: int) -> "ParticleSystem":
        """The system after exchanging slots ``i`` and ``i + 1``."""
        slots = list(self.slots)
        slots[i - 1], slots[i] = slots[i], slots[i - 1]
        return ParticleSystem(tuple(slots), self.species_dims, self.dim_cap)


@dataclass(frozen=True)
class PureState:
    """A normalized internal state of a particle system."""

    system: ParticleSystem
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        amps = np.asarray(self.amplitudes, dtype=np.complex128).reshape(-1)
        if amps.shape[0] != self.system.total_dim:
            raise DimensionMismatch(
                f"amplitude length {amps.shape[0]} != system dimension {self.system.total_dim}"
            )
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > 1e-9:
            raise ValidationError(f"state norm {norm!r} is not 1")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_unnormalized(cls, system: ParticleSystem, amplitudes) -> "PureState":
        amps = np.asarray(amplitudes, dtype=np.complex128).reshape(-1)
        norm = np.linalg.norm(amps)
        if norm == 0.0:
            raise ValidationError("cannot normalize the zero vector")
        return cls(system, amps / norm)


@dataclass(frozen=True)
class BraidWord:
    """A sequence of adjacent exchanges ``(slot index, sign)``.

    Letters are stored in application order.  Product notation such as
    ``R2^-2 R3 R4 R5^2 R4^-1 R3`` reads right to left, so its letter sequence
    starts with ``(3, +1)`` and ends with two ``(2, -1)`` entries.
    """

    letters: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        for idx, sign in self.letters:
            if sign not in (-1, 1):
                raise ValidationError(f"braid sign must be +1 or -1, got {sign!r}")
            if idx < 1:
                raise IndexOutOfRange(f"braid index {idx} must be >= 1")
        object.__setattr__(self, "letters", tuple((int(i), int(s)) for i, s in self.letters))

    def __len__(self) -> int:
        return len(self.letters)


@dataclass(frozen=True)
class BraidMatrix:
    """The unitary exchanging a ``(left, right)`` species pair, swap included."""

    species_left: str
    species_right: str
    dim_left: int
    dim_right: int
    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = as_complex_matrix(self.matrix, "braid matrix")
        n = self.dim_left * self.dim_right
        if m.shape != (n, n):
            raise DimensionMismatch(f"braid matrix shape {m.shape} != ({n}, {n})")
        require_unitary(m, name="braid matrix")
        object.__setattr__(self, "matrix", m)

    @property
    def includes_swap(self) -> bool:
        return True

    @property
    def core(self) -> np.ndarray:
        """The non-swapping part: ``swap.T @ matrix`` on the incoming pair space."""
        return swap_matrix(self.dim_left, self.dim_right).conj().T @ self.matrix

    @property
    def inverse_matrix(self) -> np.ndarray:
        """The clockwise exchange applied from the same configuration."""
        sigma = swap_matrix(self.dim_left, self.dim_right)
        return sigma @ self.core.conj().T


class BraidRegistry:
    """Braid matrices per ordered species pair, plus species dimensions."""

    def __init__(self, species_dims: dict[str, int]):
        self.species_dims = dict(species_dims)
        self._matrices: dict[tuple[str, str], BraidMatrix] = {}

    def register(self, braid: BraidMatrix, derive_swapped: bool = True) -> None:
        """Register a braid matrix; optionally derive the reversed ordering.

        The reversed-pair core is the same operator conjugated onto the
        swapped space, so a single registration covers both configurations of
        the pair.
        """
        key = (braid.species_left, braid.species_right)
        self._matrices[key] = braid
        rkey = (braid.species_right, braid.species_left)
        if derive_swapped and rkey not in self._matrices:
            sigma = swap_matrix(braid.dim_left, braid.dim_right)
            core_rev = sigma @ braid.core @ sigma.conj().T
            rev = BraidMatrix(
                species_left=braid.species_right,
                species_right=braid.species_left,
                dim_left=braid.dim_right,
                dim_right=braid.dim_left,
                matrix=swap_matrix(braid.dim_right, braid.dim_left) @ core_rev,
            )
            self._matrices[rkey] = rev

    def register_core(self, left: str, right: str, core) -> None:
        """Register from the non-swapping part of the exchange."""
        dl, dr = self.species_dims[left], self.species_dims[right]
        self.register(
            BraidMatrix(left, right, dl, dr, swap_matrix(dl, dr) @ as_complex_matrix(core))
        )

    def register_monodromy(
        self, left: str, right: str, monodromy, cluster_tol: float = DEFAULT_CLUSTER_TOL
    ) -> None:
        """Register the pair exchange as the principal square root of a monodromy."""
        self.register_core(left, right, principal_unitary_sqrt(monodromy, cluster_tol))

    def register_swap(self, left: str, right: str) -> None:
        """Register a purely permuting exchange (trivial braiding)."""
        dl, dr = self.species_dims[left], self.species_dims[right]
        self.register_core(left, right, np.eye(dl * dr))

    def register_phase(self, left: str, right: str, phase: complex) -> None:
        """Register an abelian exchange ``phase * swap``."""
        p = complex(phase)
        if abs(abs(p) - 1.0) > DEFAULT_NORMALITY_TOL:
            raise ValidationError("abelian braid phase must have unit modulus")
        dl, dr = self.species_dims[left], self.species_dims[right]
        self.register_core(left, right, p * np.eye(dl * dr))

    def get(self, left: str, right: str) -> BraidMatrix:
        try:
            return self._matrices[(left, right)]
        except KeyError:
            raise MissingBraidMatrix(f"no braid matrix registered for pair ({left!r}, {right!r})") from None

    def has(self, left: str, right: str) -> bool:
        return (left, right) in self._matrices

    def pairs(self) -> list[tuple[str, str]]:
        return sorted(self._matrices)

    def monodromy(self, left: str, right: str) -> np.ndarray:
        """The no-net-swap double exchange on the ``(left, right)`` pair space."""
        first = self.get(left, right)
        second = self.get(right, left)
        return second.matrix @ first.matrix

    # -- serialization ------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "dims": dict(self.species_dims),
            "matrices": {
                f"{l}:{r}": matrix_to_json(b.matrix) for (l, r), b in self._matrices.items()
            },
        }

    @classmethod
    def from_json(cls, data: dict) -> "BraidRegistry":
        try:
            dims = {str(k): int(v) for k, v in data["dims"].items()}
            raw = data["matrices"]
        except (KeyError, TypeError, AttributeError) as exc:
            raise ValidationError(f"malformed braid registry JSON: {exc}") from exc
        reg = cls(dims)
        # first pass registers everything verbatim, second fills reversed pairs
        entries = []
        for key, mjson in raw.items():
            left, _, right = key.partition(":")
            if not right:
                raise ValidationError(f"braid registry key {key!r} is not 'left:right'")
            entries.append((left, right, matrix_from_json(mjson)))
        for left, right, m in entries:
            reg._matrices[(left, right)] = BraidMatrix(
                left, right, dims[left], dims[right], m
            )
        for left, right, _ in entries:
            if not reg.has(right, left):
                reg.register(reg.get(left, right))
        return reg


def _embedded_pair_operator(system: ParticleSystem, i: int, pair_matrix: np.ndarray) -> np.ndarray:
    """Embed an operator on slots ``(i, i + 1)`` into the full system space."""
    dims = system.slot_dims
    pre = int(np.prod(dims[: i - 1])) if i > 1 else 1
    post = int(np.prod(dims[i + 1 :])) if i + 1 < len(dims) else 1
    return np.kron(np.kron(np.eye(pre), pair_matrix), np.eye(post))


def _pair_braid(system: ParticleSystem, i: int, sign: int, registry: BraidRegistry) -> np.ndarray:
    if not 1 <= i <= system.n_particles - 1:
        raise IndexOutOfRange(
            f"braid index {i} out of range for a {system.n_particles}-particle system"
        )
    right, left = system.slots[i - 1], system.slots[i]
    braid = registry.get(left, right)
    return braid.matrix if sign > 0 else braid.inverse_matrix


def apply_braid(state: PureState, i: int, sign: int, registry: BraidRegistry) -> PureState:
    """Exchange slots ``i`` and ``i + 1`` of a state.

    ``sign = +1`` is the anti-clockwise exchange, ``-1`` the clockwise one.
    The returned state lives on the system with the two slot labels swapped.
    """
    mat = _pair_braid(state.system, i, sign, registry)
    full = _embedded_pair_operator(state.system, i, mat)
    return PureState(state.system.swapped(i), full @ state.amplitudes)


def apply_word(state: PureState, word: BraidWord, registry: BraidRegistry) -> PureState:
    """Apply a braid word letter by letter in application order."""
    for idx, sign in word.letters:
        state = apply_braid(state, idx, sign, registry)
    return state


@dataclass(frozen=True)
class RelationCheck:
    relation: str
    arrangement: tuple[str, ...]
    residual: float


@dataclass(frozen=True)
class YangBaxterReport:
    checks: tuple[RelationCheck, ...]
    skipped: int

    @property
    def max_residual(self) -> float:
        return max((c.residual for c in self.checks), default=0.0)

    def passed(self, tol: float = 1e-10) -> bool:
        return bool(self.checks) and self.max_residual <= tol


def _compose_word(
    system: ParticleSystem, letters, registry: BraidRegistry
) -> tuple[np.ndarray, ParticleSystem]:
    total = np.eye(system.total_dim, dtype=np.complex128)
    cur = system
    for idx, sign in letters:
        mat = _embedded_pair_operator(cur, idx, _pair_braid(cur, idx, sign, registry))
        total = mat @ total
        cur = cur.swapped(idx)
    return total, cur


def check_yang_baxter(
    registry: BraidRegistry,
    arrangements: list[tuple[str, ...]] | None = None,
    max_arrangements: int = 256,
) -> YangBaxterReport:
    """Verify the braid relations for the registered matrices.

    For every 3-slot species arrangement the adjacent-exchange relation
    ``B1 B2 B1 = B2 B1 B2`` is checked, and for every 4-slot arrangement the
    far-commutation relation ``B1 B3 = B3 B1``.  Arrangements that need an
    unregistered pair are skipped and counted.  Residuals are reported; no
    exception is raised for violations.
    """
    species = sorted(registry.species_dims)
    if arrangements is None:
        arrangements = [tuple(t) for t in itertools.product(species, repeat=3)]
        arrangements += [tuple(t) for t in itertools.product(species, repeat=4)]
        arrangements = arrangements[:max_arrangements]
    checks = []
    skipped = 0
    for arrangement in arrangements:
        system = ParticleSystem(arrangement, registry.species_dims)
        if len(arrangement) == 3:
            words = ([(1, 1), (2, 1), (1, 1)], [(2, 1), (1, 1), (2, 1)])
            relation = "braid"
        elif len(arrangement) == 4:
            words = ([(1, 1), (3, 1)], [(3, 1), (1, 1)])
            relation = "commute"
        else:
            raise ValidationError("arrangements must have 3 or 4 slots")
        try:
            lhs, end_l = _compose_word(system, words[0], registry)
            rhs, end_r = _compose_word(system, words[1], registry)
        except MissingBraidMatrix:
            skipped += 1
            continue
        assert end_l.slots == end_r.slots
        checks.append(
            RelationCheck(relation, arrangement, float(np.linalg.norm(lhs - rhs)))
        )
    return YangBaxterReport(checks=tuple(checks), skipped=skipped)
