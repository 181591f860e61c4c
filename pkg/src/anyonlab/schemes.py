"""The three repetition schemes as stochastic processes.

A single *run* injects one particle, observes it at detector 1 or 2, and
(except in the many-to-many scheme) changes the internal state.  A *trial* is
a sequence of runs from a fresh initial state.  The schemes differ in what is
reused between runs:

many-to-many
    Fresh incident and target particles every run: outcomes are i.i.d. draws
    from the initial distribution and the state never changes.

one-to-one
    The same two particles are recycled (with a return exchange), so each
    detection multiplies the state's spectral weight on every monodromy
    eigenspace by that eigenvalue's outcome probability.  The weights form a
    martingale-like race that locks the state into a single eigenspace.

many-to-one
    A fixed target is probed by a stream of identically prepared incident
    particles.  The target's density matrix evolves by a two-outcome channel,
    and the weights on the eigenspaces of ``U = Tr_incident(rho_incident *
    monodromy)`` lock in exactly the same multiplicative fashion.

Two engines are provided and cross-checked: a *full-state* (or reduced
density-matrix) oracle that evolves the actual quantum state, and a fast
*spectral* engine that tracks only the eigenspace weights.  For the
one-to-one scheme their equivalence is an identity for any unitary monodromy.
For many-to-one the spectral shortcut is exact when the braid system is
consistent (trivial same-species braiding satisfying the braid relations,
e.g. the shipped block-diagonal fixture); the reduced-channel oracle is exact
unconditionally and is verified here against the growing full tensor state.

Randomness is counter-based: trial ``t`` of an experiment with seed ``s``
draws from ``Philox(key = (s << 64) + t)``, so results are bit-reproducible
and independent of execution order or thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .apparatus import Apparatus, DetectorDistribution, prob_na
from .braid import BraidRegistry, PureState
from .errors import (
    ConfigError,
    DimensionMismatch,
    NotUnitary,
    SizeOverflow,
    ValidationError,
    ZeroNormComponent,
)
from .linalg import (
    DEFAULT_CLUSTER_TOL,
    DEFAULT_DIM_CAP,
    SpectralDecomposition,
    as_complex_matrix,
    hermiticity_residual,
    partial_trace_left,
    spectral_decompose,
)

#: Patterns closer than this are reported as an unresolvable eigenvalue pair.
PATTERN_TIE_TOL = 1e-12

_SCHEMES = ("many_to_many", "one_to_one", "many_to_one", "many_to_one_conjecture_probe")
_ENGINES = ("oracle", "spectral", "both")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonodromySpec:
    """A validated monodromy: unitary matrix plus spectral decomposition.

    The matrix acts on the pair space of one incident particle (dimension
    ``dim_b``, the fast index) and one target particle (dimension ``dim_a``,
    the slow index).  ``sqrt_matrix`` is the principal unitary square root,
    used wherever a single exchange (rather than a full encircling) acts.
    """

    matrix: np.ndarray
    dim_b: int
    dim_a: int
    decomposition: SpectralDecomposition
    sqrt_matrix: np.ndarray
    name: str | None = None

    @classmethod
    def from_matrix(
        cls,
        matrix,
        dim_b: int,
        dim_a: int,
        cluster_tol: float = DEFAULT_CLUSTER_TOL,
        name: str | None = None,
    ) -> "MonodromySpec":
        m = as_complex_matrix(matrix, "monodromy")
        if m.shape != (dim_b * dim_a, dim_b * dim_a):
            raise DimensionMismatch(
                f"monodromy shape {m.shape} != dim_b * dim_a = {dim_b * dim_a}"
            )
        # decompose first: a corrupted matrix surfaces as NotNormal, and for a
        # normal matrix unitarity reduces to unit-modulus eigenvalues
        dec = spectral_decompose(m, cluster_tol=cluster_tol)
        mod_err = float(np.max(np.abs(np.abs(dec.eigenvalues) - 1.0)))
        if mod_err > 1e-9:
            raise NotUnitary(f"monodromy eigenvalues off the unit circle by {mod_err:.3e}")
        sqrt = dec.apply_function(lambda lam: np.exp(0.5j * np.angle(lam)))
        return cls(matrix=m, dim_b=dim_b, dim_a=dim_a, decomposition=dec,
                   sqrt_matrix=sqrt, name=name)

    @property
    def dim(self) -> int:
        return self.dim_b * self.dim_a


@dataclass(frozen=True)
class RunRecord:
    """One run: its outcome and the monodromy expectation just before it."""

    run_index: int
    outcome: int
    pre_expectation: complex
    post_state: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.outcome not in (1, 2):
            raise ValidationError(f"outcome must be 1 or 2, got {self.outcome!r}")
        if abs(self.pre_expectation) > 1.0 + 1e-9:
            raise ValidationError("pre-run expectation lies outside the unit disk")


@dataclass(frozen=True)
class PatternEstimate:
    """Aggregated detector counts, the empirical interference pattern."""

    n: int
    count_d1: int
    count_d2: int

    def __post_init__(self) -> None:
        if self.count_d1 + self.count_d2 != self.n:
            raise ValidationError("detector counts do not sum to the number of runs")

    @property
    def i_d1(self) -> float:
        return self.count_d1 / self.n if self.n else math.nan

    @property
    def i_d2(self) -> float:
        return self.count_d2 / self.n if self.n else math.nan


@dataclass(frozen=True)
class LockReport:
    """Outcome of lock detection for one trial."""

    locked: bool
    locked_value: complex | None
    spectral_weights: tuple[tuple[complex, float], ...]
    runs_to_lock: int | None
    unresolved_pairs: tuple[tuple[complex, complex], ...] = ()

    def __post_init__(self) -> None:
        total = sum(w for _, w in self.spectral_weights)
        if self.spectral_weights and abs(total - 1.0) > 1e-6:
            raise ValidationError(f"spectral weights sum to {total!r}, expected 1")


@dataclass(frozen=True)
class TrialResult:
    """Everything one trial produced."""

    records: tuple[RunRecord, ...]
    pattern: PatternEstimate
    lock: LockReport
    post_lock_pattern: PatternEstimate


@dataclass
class SchemeConfig:
    """Inputs of a scheme simulation.

    ``initial_state`` is the joint two-particle state for the many-to-many and
    one-to-one schemes.  The many-to-one scheme instead takes the incident
    state ``psi_b`` (identical every run) and the target density matrix
    ``rho_a``; the conjecture probe additionally accepts ``initial_joint``,
    a possibly entangled state of the first incident particle and the target.
    """

    scheme: str
    apparatus: Apparatus
    monodromy: MonodromySpec
    runs: int
    trials: int
    seed: int
    initial_state: np.ndarray | None = None
    psi_b: np.ndarray | None = None
    rho_a: np.ndarray | None = None
    initial_joint: np.ndarray | None = None
    lock_threshold: float = 1.0 - 1e-6
    engine: str = "spectral"
    record_runs: bool = False
    record_states: bool = False  # per-run snapshots; off by default for memory
    dim_cap: int = DEFAULT_DIM_CAP

    def validate(self) -> None:
        if self.scheme not in _SCHEMES:
            raise ConfigError(f"scheme must be one of {_SCHEMES}, got {self.scheme!r}")
        if self.engine not in _ENGINES:
            raise ConfigError(f"engine must be one of {_ENGINES}, got {self.engine!r}")
        if self.runs < 1:
            raise ConfigError(f"runs must be >= 1, got {self.runs}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an integer in [0, 2**64)")
        if not 0.5 < self.lock_threshold < 1.0:
            raise ConfigError(
                f"lock_threshold must lie in (0.5, 1), got {self.lock_threshold}"
            )
        if self.scheme in ("many_to_many", "one_to_one"):
            if self.initial_state is None:
                raise ConfigError(f"scheme {self.scheme!r} requires initial_state")
            psi = np.asarray(self.initial_state, dtype=np.complex128).reshape(-1)
            if psi.shape[0] != self.monodromy.dim:
                raise ConfigError("initial_state dimension does not match the monodromy")
            if abs(np.linalg.norm(psi) - 1.0) > 1e-9:
                raise ConfigError("initial_state is not normalized")
            self.initial_state = psi
        elif self.scheme == "many_to_one":
            self._validate_psi_b()
            if self.rho_a is None:
                raise ConfigError("many_to_one requires rho_a")
            rho = as_complex_matrix(self.rho_a, "rho_a")
            if rho.shape != (self.monodromy.dim_a,) * 2:
                raise ConfigError("rho_a dimension does not match the monodromy")
            if hermiticity_residual(rho) > 1e-9:
                raise ConfigError("rho_a is not Hermitian")
            if abs(np.trace(rho).real - 1.0) > 1e-9:
                raise ConfigError("rho_a does not have unit trace")
            if np.linalg.eigvalsh((rho + rho.conj().T) / 2).min() < -1e-9:
                raise ConfigError("rho_a is not positive semi-definite")
            self.rho_a = rho
        else:  # conjecture probe
            self._validate_psi_b()
            if self.initial_joint is None and self.rho_a is None:
                raise ConfigError("the conjecture probe requires initial_joint or rho_a")
            if self.initial_joint is not None:
                joint = np.asarray(self.initial_joint, dtype=np.complex128).reshape(-1)
                if joint.shape[0] != self.monodromy.dim:
                    raise ConfigError("initial_joint dimension does not match the monodromy")
                if abs(np.linalg.norm(joint) - 1.0) > 1e-9:
                    raise ConfigError("initial_joint is not normalized")
                self.initial_joint = joint
            full_dim = self.monodromy.dim_a * self.monodromy.dim_b**self.runs
            if full_dim > self.dim_cap:
                raise SizeOverflow(
                    f"full-state probe dimension {full_dim} exceeds cap {self.dim_cap};"
                    " reduce runs"
                )

    def _validate_psi_b(self) -> None:
        if self.psi_b is None:
            raise ConfigError(f"scheme {self.scheme!r} requires psi_b")
        psi = np.asarray(self.psi_b, dtype=np.complex128).reshape(-1)
        if psi.shape[0] != self.monodromy.dim_b:
            raise ConfigError("psi_b dimension does not match the monodromy")
        if abs(np.linalg.norm(psi) - 1.0) > 1e-9:
            raise ConfigError("psi_b is not normalized")
        self.psi_b = psi


def trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    """Counter-based generator for one trial, independent of execution order."""
    return np.random.Generator(np.random.Philox(key=(seed << 64) + trial_index))


# ---------------------------------------------------------------------------
# Single-run operations
# ---------------------------------------------------------------------------

def update_coefficients(app: Apparatus, outcome: int) -> tuple[complex, complex]:
    """Amplitude pair ``(a, b)`` multiplying the exchange and its inverse.

    Gauge: the full relative phase ``exp(i theta)`` rides on the
    counterclockwise path, the clockwise path carries none.  Any other split
    changes states by an unobservable global phase.
    """
    phase = complex(math.cos(app.theta), math.sin(app.theta))
    if outcome == 1:
        return app.bs1.t * app.bs2.r_prime * phase, app.bs1.r * app.bs2.t
    if outcome == 2:
        return app.bs1.t * app.bs2.t_prime * phase, app.bs1.r * app.bs2.r
    raise ValidationError(f"outcome must be 1 or 2, got {outcome!r}")


def run_probabilities(app: Apparatus, psi, monodromy) -> DetectorDistribution:
    """Detector distribution for a joint state: the non-abelian form at
    the state's monodromy expectation value."""
    psi = np.asarray(psi, dtype=np.complex128).reshape(-1)
    m = as_complex_matrix(monodromy, "monodromy")
    if m.shape[0] != psi.shape[0]:
        raise DimensionMismatch("state and monodromy dimensions differ")
    z = np.vdot(psi, m @ psi)
    if abs(z) > 1.0:
        z /= abs(z) + 1e-300  # shave numerical overshoot off the disk edge
    return prob_na(app, z)


def project_after_detection(
    app: Apparatus, state: PureState, registry: BraidRegistry, outcome: int
) -> tuple[PureState, float]:
    """Post-measurement state of a two-particle system, before any return pass.

    Applies ``a * R + b * R_inverse`` with the outcome's coefficient pair and
    normalizes.  The returned state lives on the swapped system (the incident
    particle has crossed to the other side).  The second element is the
    squared norm ``K`` of the unnormalized component, which equals the
    outcome probability at full coherence.
    """
    if state.system.n_particles != 2:
        raise DimensionMismatch("projection requires a two-particle state")
    a, b = update_coefficients(app, outcome)
    right, left = state.system.slots[0], state.system.slots[1]
    braid = registry.get(left, right)
    component = (a * braid.matrix + b * braid.inverse_matrix) @ state.amplitudes
    k = float(np.vdot(component, component).real)
    if k <= 1e-28:
        raise ZeroNormComponent(f"outcome D{outcome} has zero probability")
    return PureState(state.system.swapped(1), component / math.sqrt(k)), k


def step_one_to_one(app: Apparatus, psi, monodromy, outcome: int) -> tuple[np.ndarray, float]:
    """One full one-to-one run on a pure state: detection plus return pass.

    The combined operator is ``a * monodromy + b * identity``; the returned
    ``K`` is the outcome probability at full coherence.
    """
    psi = np.asarray(psi, dtype=np.complex128).reshape(-1)
    m = as_complex_matrix(monodromy, "monodromy")
    a, b = update_coefficients(app, outcome)
    component = a * (m @ psi) + b * psi
    k = float(np.vdot(component, component).real)
    if k <= 1e-28:
        raise ZeroNormComponent(f"outcome D{outcome} has zero probability")
    return component / math.sqrt(k), k


def step_one_to_one_density(
    app: Apparatus, rho, monodromy, outcome: int
) -> tuple[np.ndarray, float]:
    """One one-to-one run on a density matrix, with dephasing.

    The exchange-vs-inverse cross terms are scaled by the coherence ``q``; at
    ``q = 1`` this is the pure-state update in density form, and for any ``q``
    the returned probability matches the closed-form detector distribution.
    """
    rho = as_complex_matrix(rho, "rho")
    m = as_complex_matrix(monodromy, "monodromy")
    a, b = update_coefficients(app, outcome)
    m_rho = m @ rho
    direct = (abs(a) ** 2) * (m_rho @ m.conj().T) + (abs(b) ** 2) * rho
    cross = a * np.conj(b) * m_rho
    new_rho = direct + app.q * (cross + cross.conj().T)
    p = float(np.trace(new_rho).real)
    if p <= 1e-28:
        raise ZeroNormComponent(f"outcome D{outcome} has zero probability")
    return new_rho / p, p


def compute_U(
    monodromy, rho_b, dim_b: int | None = None, dim_a: int | None = None,
    cluster_tol: float = DEFAULT_CLUSTER_TOL,
) -> tuple[np.ndarray, SpectralDecomposition]:
    """The many-to-one operator: weighted partial trace of the monodromy.

    Accepts either a :class:`MonodromySpec` or a plain matrix with explicit
    dimensions.  The result is checked for normality (guaranteed for
    consistent braid systems) and its eigenvalues for ``|kappa| <= 1``.
    """
    if isinstance(monodromy, MonodromySpec):
        m, db, da = monodromy.matrix, monodromy.dim_b, monodromy.dim_a
    else:
        if dim_b is None or dim_a is None:
            raise DimensionMismatch("dim_b and dim_a are required with a plain matrix")
        m, db, da = as_complex_matrix(monodromy), dim_b, dim_a
    rho_b = as_complex_matrix(rho_b, "rho_b")
    if hermiticity_residual(rho_b) > 1e-9 or abs(np.trace(rho_b).real - 1.0) > 1e-9:
        raise ValidationError("rho_b must be Hermitian with unit trace")
    u = partial_trace_left(m, db, da, rho_b)
    dec = spectral_decompose(u, cluster_tol=cluster_tol)
    top = float(np.max(np.abs(dec.eigenvalues)))
    if top > 1.0 + 1e-9:
        raise ValidationError(f"|kappa| = {top!r} exceeds 1; inputs are inconsistent")
    return u, dec


def step_many_to_one(
    app: Apparatus, rho_a, psi_b, monodromy: MonodromySpec, outcome: int, q: float | None = None
) -> tuple[np.ndarray, float]:
    """One many-to-one run: the exact reduced channel on the target.

    Builds ``a * S + b * S^{-1}`` from the principal exchange root ``S``,
    applies it to ``psi_b (x) rho_a``, traces out the incident particle, and
    normalizes.  Cross terms between the exchange and its inverse are scaled
    by the coherence (``app.q`` unless overridden), which reproduces the
    closed-form outcome probability for every coherence value.

    This marginal is exact for any unitary monodromy: the incident particle
    is fresh and the spent ones are never touched again, so tracing them out
    commutes with the update.
    """
    rho_a = as_complex_matrix(rho_a, "rho_a")
    psi_b = np.asarray(psi_b, dtype=np.complex128).reshape(-1)
    if q is None:
        q = app.q
    a, b = update_coefficients(app, outcome)
    s = monodromy.sqrt_matrix
    rho_joint = np.kron(rho_a, np.outer(psi_b, psi_b.conj()))
    sr = s @ rho_joint
    sl = s.conj().T @ rho_joint
    direct = (abs(a) ** 2) * (sr @ s.conj().T) + (abs(b) ** 2) * (sl @ s)
    cross = (a * np.conj(b)) * (sr @ s)
    rho_new = direct + q * (cross + cross.conj().T)
    p = float(np.trace(rho_new).real)
    if p <= 1e-28:
        raise ZeroNormComponent(f"outcome D{outcome} has zero probability")
    reduced = partial_trace_left(rho_new, monodromy.dim_b, monodromy.dim_a,
                                 np.eye(monodromy.dim_b))
    return reduced / p, p


# ---------------------------------------------------------------------------
# Spectral-weight engine (vectorized across trials)
# ---------------------------------------------------------------------------

@dataclass
class EngineOutput:
    """Per-trial arrays produced by a batch engine."""

    eigenvalues: np.ndarray          # (K,)
    pattern_d1: np.ndarray           # (K,) eigenpattern P[D1] per eigenvalue
    count_d1: np.ndarray             # (T,)
    locked_at: np.ndarray            # (T,) first run with weight >= threshold, -1 if never
    count_d1_post: np.ndarray        # (T,) detector-1 counts on runs after locking
    n_post: np.ndarray               # (T,) number of runs after locking
    final_weights: np.ndarray        # (T, K)
    outcomes: np.ndarray | None = None      # (T, N) when collected
    history_p1: np.ndarray | None = None    # (T, N) per-run P[D1]
    history_z: np.ndarray | None = None     # (T, N) per-run expectation
    history_max_weight: np.ndarray | None = None  # (T, N)
    state_snapshots: list[np.ndarray] | None = None  # opt-in, oracle engines only

    @property
    def n_runs(self) -> int:
        return self.outcomes.shape[1] if self.outcomes is not None else -1

    def locked_values(self) -> np.ndarray:
        idx = np.argmax(self.final_weights, axis=1)
        return self.eigenvalues[idx]


def eigenpattern_d1(app: Apparatus, eigenvalues) -> np.ndarray:
    """``P[D1]`` for each eigenvalue, the locked interference patterns."""
    return np.array([prob_na(app, lam).p_d1 for lam in np.asarray(eigenvalues)])


def unresolved_pattern_pairs(eigenvalues, pattern_d1) -> tuple[tuple[complex, complex], ...]:
    """Eigenvalue pairs whose locked patterns coincide, hence cannot be told apart."""
    pairs = []
    for i in range(len(eigenvalues)):
        for j in range(i + 1, len(eigenvalues)):
            if abs(pattern_d1[i] - pattern_d1[j]) <= PATTERN_TIE_TOL:
                pairs.append((complex(eigenvalues[i]), complex(eigenvalues[j])))
    return tuple(pairs)


def spectral_weight_engine(
    eigenvalues,
    pattern_d1,
    start_weights,
    lock_threshold: float,
    uniforms: np.ndarray | None = None,
    forced_outcomes: np.ndarray | None = None,
    collect_history: bool = False,
) -> EngineOutput:
    """Evolve eigenspace weights for a batch of trials.

    Each run samples a detector from the weight-mixed eigenpatterns (or takes
    the next forced outcome) and multiplies every weight by its eigenvalue's
    probability for that outcome.  All reductions loop over the (few)
    eigenvalues in fixed order so results are bitwise reproducible and
    independent of how trials are batched.
    """
    eig = np.asarray(eigenvalues, dtype=np.complex128)
    p1 = np.asarray(pattern_d1, dtype=np.float64)
    k_count = len(eig)
    if uniforms is not None:
        t_count, n_runs = uniforms.shape
    elif forced_outcomes is not None:
        forced_outcomes = np.asarray(forced_outcomes)
        t_count, n_runs = forced_outcomes.shape
    else:
        raise ValidationError("either uniforms or forced_outcomes is required")

    w = np.broadcast_to(np.asarray(start_weights, dtype=np.float64), (t_count, k_count)).copy()
    count1 = np.zeros(t_count, dtype=np.int64)
    count1_post = np.zeros(t_count, dtype=np.int64)
    n_post = np.zeros(t_count, dtype=np.int64)
    locked_at = np.full(t_count, -1, dtype=np.int64)
    max_w = w[:, 0].copy()
    for k in range(1, k_count):
        np.maximum(max_w, w[:, k], out=max_w)
    locked_at[max_w >= lock_threshold] = 0

    outcomes = np.empty((t_count, n_runs), dtype=np.int8)
    hist_p1 = np.empty((t_count, n_runs)) if collect_history else None
    hist_z = np.empty((t_count, n_runs), dtype=np.complex128) if collect_history else None
    hist_mw = np.empty((t_count, n_runs)) if collect_history else None

    for j in range(n_runs):
        prob1 = w[:, 0] * p1[0]
        for k in range(1, k_count):
            prob1 = prob1 + w[:, k] * p1[k]
        if collect_history:
            hist_p1[:, j] = prob1
            z = w[:, 0] * eig[0]
            for k in range(1, k_count):
                z = z + w[:, k] * eig[k]
            hist_z[:, j] = z
        if forced_outcomes is not None:
            out1 = forced_outcomes[:, j] == 1
        else:
            out1 = uniforms[:, j] < prob1
        outcomes[:, j] = np.where(out1, 1, 2)
        count1 += out1
        already = locked_at >= 0
        n_post += already
        count1_post += already & out1

        for k in range(k_count):
            w[:, k] *= np.where(out1, p1[k], 1.0 - p1[k])
        total = w[:, 0].copy()
        for k in range(1, k_count):
            total += w[:, k]
        dead = total <= 0.0
        if np.any(dead):
            # a forced outcome with zero probability kills every branch
            raise ZeroNormComponent("an outcome with zero probability was forced")
        w /= total[:, None]
        max_w = w[:, 0].copy()
        for k in range(1, k_count):
            np.maximum(max_w, w[:, k], out=max_w)
        newly = (locked_at < 0) & (max_w >= lock_threshold)
        locked_at[newly] = j + 1
        if collect_history:
            hist_mw[:, j] = max_w

    return EngineOutput(
        eigenvalues=eig,
        pattern_d1=p1,
        count_d1=count1,
        locked_at=locked_at,
        count_d1_post=count1_post,
        n_post=n_post,
        final_weights=w,
        outcomes=outcomes,
        history_p1=hist_p1,
        history_z=hist_z,
        history_max_weight=hist_mw,
    )


# ---------------------------------------------------------------------------
# Oracle engines (one trial at a time)
# ---------------------------------------------------------------------------

def _oracle_one_to_one(
    cfg: SchemeConfig,
    uniforms: np.ndarray,
    forced_outcomes=None,
) -> EngineOutput:
    """Full-state one-to-one trial; density-matrix form below full coherence."""
    dec = cfg.monodromy.decomposition
    eig = dec.eigenvalues
    p1 = eigenpattern_d1(cfg.apparatus, eig)
    n_runs = len(uniforms)
    pure = cfg.apparatus.q >= 1.0
    psi = cfg.initial_state.copy()
    rho = None if pure else np.outer(psi, psi.conj())
    m = cfg.monodromy.matrix
    snapshots: list[np.ndarray] | None = [] if cfg.record_states else None

    outcomes = np.empty((1, n_runs), dtype=np.int8)
    hist_p1 = np.empty((1, n_runs))
    hist_z = np.empty((1, n_runs), dtype=np.complex128)
    hist_mw = np.empty((1, n_runs))
    count1 = 0
    count1_post = 0
    n_post = 0

    def weights():
        return dec.weights(psi) if pure else dec.density_weights(rho)

    w = weights()
    locked_at = 0 if w.max() >= cfg.lock_threshold else -1
    for j in range(n_runs):
        z = np.vdot(psi, m @ psi) if pure else np.trace(m @ rho)
        if abs(z) > 1.0:
            z /= abs(z) + 1e-300
        dist = prob_na(cfg.apparatus, z)
        hist_p1[0, j] = dist.p_d1
        hist_z[0, j] = z
        if forced_outcomes is not None:
            out = int(forced_outcomes[j])
        else:
            out = 1 if uniforms[j] < dist.p_d1 else 2
        outcomes[0, j] = out
        count1 += out == 1
        if locked_at >= 0:
            n_post += 1
            count1_post += out == 1
        if pure:
            psi, _ = step_one_to_one(cfg.apparatus, psi, m, out)
        else:
            rho, _ = step_one_to_one_density(cfg.apparatus, rho, m, out)
        if snapshots is not None:
            snapshots.append(psi.copy() if pure else rho.copy())
        w = weights()
        hist_mw[0, j] = w.max()
        if locked_at < 0 and w.max() >= cfg.lock_threshold:
            locked_at = j + 1

    return EngineOutput(
        eigenvalues=eig,
        pattern_d1=p1,
        count_d1=np.array([count1]),
        locked_at=np.array([locked_at]),
        count_d1_post=np.array([count1_post]),
        n_post=np.array([n_post]),
        final_weights=w.reshape(1, -1),
        outcomes=outcomes,
        history_p1=hist_p1,
        history_z=hist_z,
        history_max_weight=hist_mw,
        state_snapshots=snapshots,
    )


def _oracle_many_to_one(
    cfg: SchemeConfig,
    uniforms: np.ndarray,
    forced_outcomes=None,
) -> EngineOutput:
    """Reduced-channel many-to-one trial on the target density matrix."""
    u_op, u_dec = compute_U(cfg.monodromy, np.outer(cfg.psi_b, cfg.psi_b.conj()))
    eig = u_dec.eigenvalues
    p1 = eigenpattern_d1(cfg.apparatus, eig)
    n_runs = len(uniforms)
    rho = cfg.rho_a.copy()
    snapshots: list[np.ndarray] | None = [] if cfg.record_states else None

    outcomes = np.empty((1, n_runs), dtype=np.int8)
    hist_p1 = np.empty((1, n_runs))
    hist_z = np.empty((1, n_runs), dtype=np.complex128)
    hist_mw = np.empty((1, n_runs))
    count1 = 0
    count1_post = 0
    n_post = 0

    w = u_dec.density_weights(rho)
    locked_at = 0 if w.max() >= cfg.lock_threshold else -1
    for j in range(n_runs):
        z = np.trace(u_op @ rho)
        if abs(z) > 1.0:
            z /= abs(z) + 1e-300
        dist = prob_na(cfg.apparatus, z)
        hist_p1[0, j] = dist.p_d1
        hist_z[0, j] = z
        if forced_outcomes is not None:
            out = int(forced_outcomes[j])
        else:
            out = 1 if uniforms[j] < dist.p_d1 else 2
        outcomes[0, j] = out
        count1 += out == 1
        if locked_at >= 0:
            n_post += 1
            count1_post += out == 1
        rho, _ = step_many_to_one(cfg.apparatus, rho, cfg.psi_b, cfg.monodromy, out)
        if snapshots is not None:
            snapshots.append(rho.copy())
        w = u_dec.density_weights(rho)
        hist_mw[0, j] = w.max()
        if locked_at < 0 and w.max() >= cfg.lock_threshold:
            locked_at = j + 1

    return EngineOutput(
        eigenvalues=eig,
        pattern_d1=p1,
        count_d1=np.array([count1]),
        locked_at=np.array([locked_at]),
        count_d1_post=np.array([count1_post]),
        n_post=np.array([n_post]),
        final_weights=w.reshape(1, -1),
        outcomes=outcomes,
        history_p1=hist_p1,
        history_z=hist_z,
        history_max_weight=hist_mw,
        state_snapshots=snapshots,
    )


# ---------------------------------------------------------------------------
# Full tensor-product oracle (used by the conjecture probe and cross-checks)
# ---------------------------------------------------------------------------

def _apply_pair(state_t: np.ndarray, mat: np.ndarray, axis: int,
                dims_out: tuple[int, int]) -> np.ndarray:
    """Apply a two-slot operator on axes ``(axis, axis + 1)`` of a state tensor."""
    shape = state_t.shape
    m4 = mat.reshape(dims_out[0], dims_out[1], shape[axis], shape[axis + 1])
    out = np.tensordot(m4, state_t, axes=[[2, 3], [axis, axis + 1]])
    return np.moveaxis(out, [0, 1], [axis, axis + 1])


class FullStateManyToOne:
    """Evolves the complete multi-particle state of a many-to-one experiment.

    Slot 1 (the most significant tensor axis) starts as the target; run ``j``
    exchanges the target with the fresh incident particle next to it, so the
    target drifts one slot leftward per run while spent particles accumulate
    on its right, untouched.  Memory grows exponentially with the number of
    runs, which is why this engine is an oracle rather than the default.
    """

    def __init__(self, cfg: SchemeConfig):
        self.cfg = cfg
        mono = cfg.monodromy
        self.db, self.da = mono.dim_b, mono.dim_a
        from .braid import swap_matrix  # local import to avoid cycles at module load

        self.sigma = swap_matrix(self.db, self.da)
        self.sqrt = mono.sqrt_matrix
        self.m2 = mono.matrix
        if cfg.initial_joint is not None:
            block = cfg.initial_joint
        else:
            psi_a = self._psi_a_from_rho()
            block = np.kron(psi_a, cfg.psi_b)
        rest = np.array([1.0], dtype=np.complex128)
        for _ in range(cfg.runs):
            rest = np.kron(rest, cfg.psi_b)
        state = np.kron(block, rest)
        dims = [self.da, self.db] + [self.db] * cfg.runs
        self.dims = dims
        self.state_t = state.reshape(dims)
        self.run_index = 0

    def _psi_a_from_rho(self) -> np.ndarray:
        rho = self.cfg.rho_a
        vals, vecs = np.linalg.eigh(rho)
        if vals.max() < 1.0 - 1e-9:
            raise ConfigError("full-state probe requires a pure target state")
        return vecs[:, int(np.argmax(vals))]

    def expectation(self) -> complex:
        axis = self.run_index
        bra = self.state_t.reshape(-1)
        ket = _apply_pair(self.state_t, self.m2, axis,
                          (self.dims[axis], self.dims[axis + 1])).reshape(-1)
        return complex(np.vdot(bra, ket))

    def step(self, outcome: int) -> float:
        a, b = update_coefficients(self.cfg.apparatus, outcome)
        axis = self.run_index
        op = self.sigma @ (a * self.sqrt + b * self.sqrt.conj().T)
        new_t = _apply_pair(self.state_t, op, axis, (self.db, self.da))
        self.dims[axis], self.dims[axis + 1] = self.db, self.da
        flat = new_t.reshape(-1)
        p = float(np.vdot(flat, flat).real)
        if p <= 1e-28:
            raise ZeroNormComponent(f"outcome D{outcome} has zero probability")
        self.state_t = new_t / math.sqrt(p)
        self.run_index += 1
        return p

    def reduced_rho_a(self) -> np.ndarray:
        """Marginal of the target, traced over all incident particles."""
        flat = self.state_t.reshape(-1)
        axis = self.run_index
        t = self.state_t
        # move the target axis first, flatten the rest, then contract
        moved = np.moveaxis(t, axis, 0).reshape(self.da, -1)
        return moved @ moved.conj().T


# ---------------------------------------------------------------------------
# Scheme simulators (single trial)
# ---------------------------------------------------------------------------

def _result_from_engine(out: EngineOutput, record_runs: bool) -> TrialResult:
    n_runs = out.outcomes.shape[1]
    records = ()
    if record_runs:
        snaps = out.state_snapshots
        records = tuple(
            RunRecord(
                run_index=j,
                outcome=int(out.outcomes[0, j]),
                pre_expectation=complex(out.history_z[0, j]),
                post_state=snaps[j] if snaps is not None else None,
            )
            for j in range(n_runs)
        )
    locked = out.locked_at[0] >= 0
    weights = tuple(
        (complex(lam), float(w)) for lam, w in zip(out.eigenvalues, out.final_weights[0])
    )
    lock = LockReport(
        locked=bool(locked),
        locked_value=complex(out.locked_values()[0]) if locked else None,
        spectral_weights=weights,
        runs_to_lock=int(out.locked_at[0]) if locked else None,
        unresolved_pairs=unresolved_pattern_pairs(out.eigenvalues, out.pattern_d1),
    )
    count1 = int(out.count_d1[0])
    pattern = PatternEstimate(n=n_runs, count_d1=count1, count_d2=n_runs - count1)
    post = PatternEstimate(
        n=int(out.n_post[0]),
        count_d1=int(out.count_d1_post[0]),
        count_d2=int(out.n_post[0] - out.count_d1_post[0]),
    )
    return TrialResult(records=records, pattern=pattern, lock=lock, post_lock_pattern=post)


def _check_engines_agree(spectral: EngineOutput, oracle: EngineOutput, tol: float = 1e-10) -> None:
    gap = float(np.max(np.abs(spectral.history_p1 - oracle.history_p1)))
    if gap > tol:
        raise ValidationError(
            f"spectral and oracle engines disagree: max per-run probability gap {gap:.3e}"
        )


def _start_weights_one_to_one(cfg: SchemeConfig) -> np.ndarray:
    return cfg.monodromy.decomposition.weights(cfg.initial_state)


def simulate_one_to_one(
    cfg: SchemeConfig, rng: np.random.Generator | None = None, trial_index: int = 0
) -> TrialResult:
    """Run one one-to-one trial.

    With ``engine="both"`` the spectral engine samples the outcomes and the
    full-state oracle replays them; their per-run probabilities must agree to
    1e-10 or the trial fails.
    """
    cfg.validate()
    rng = rng if rng is not None else trial_rng(cfg.seed, trial_index)
    uniforms = rng.random(cfg.runs)
    if cfg.engine == "oracle":
        out = _oracle_one_to_one(cfg, uniforms)
    else:
        dec = cfg.monodromy.decomposition
        out = spectral_weight_engine(
            dec.eigenvalues,
            eigenpattern_d1(cfg.apparatus, dec.eigenvalues),
            _start_weights_one_to_one(cfg),
            cfg.lock_threshold,
            uniforms=uniforms.reshape(1, -1),
            collect_history=True,
        )
        if cfg.engine == "both":
            oracle = _oracle_one_to_one(cfg, uniforms, forced_outcomes=out.outcomes[0])
            _check_engines_agree(out, oracle)
    return _result_from_engine(out, cfg.record_runs)


def simulate_many_to_one(
    cfg: SchemeConfig, rng: np.random.Generator | None = None, trial_index: int = 0
) -> TrialResult:
    """Run one many-to-one trial on the reduced target state."""
    cfg.validate()
    rng = rng if rng is not None else trial_rng(cfg.seed, trial_index)
    uniforms = rng.random(cfg.runs)
    if cfg.engine == "oracle":
        out = _oracle_many_to_one(cfg, uniforms)
    else:
        _, u_dec = compute_U(cfg.monodromy, np.outer(cfg.psi_b, cfg.psi_b.conj()))
        out = spectral_weight_engine(
            u_dec.eigenvalues,
            eigenpattern_d1(cfg.apparatus, u_dec.eigenvalues),
            u_dec.density_weights(cfg.rho_a),
            cfg.lock_threshold,
            uniforms=uniforms.reshape(1, -1),
            collect_history=True,
        )
        if cfg.engine == "both":
            oracle = _oracle_many_to_one(cfg, uniforms, forced_outcomes=out.outcomes[0])
            _check_engines_agree(out, oracle)
    return _result_from_engine(out, cfg.record_runs)


def simulate_many_to_many(
    cfg: SchemeConfig, rng: np.random.Generator | None = None, trial_index: int = 0
) -> PatternEstimate:
    """Run one many-to-many trial: independent draws, no state update."""
    cfg.validate()
    rng = rng if rng is not None else trial_rng(cfg.seed, trial_index)
    dist = run_probabilities(cfg.apparatus, cfg.initial_state, cfg.monodromy.matrix)
    count1 = int(np.count_nonzero(rng.random(cfg.runs) < dist.p_d1))
    return PatternEstimate(n=cfg.runs, count_d1=count1, count_d2=cfg.runs - count1)


@dataclass(frozen=True)
class ConjectureTrial:
    expectations: tuple[complex, ...]
    outcomes: tuple[int, ...]
    stabilized: bool
    final_expectation: complex


@dataclass(frozen=True)
class ConjectureReport:
    """Exploratory output of the generalized many-to-one probe."""

    trials: tuple[ConjectureTrial, ...]
    stabilization_tol: float
    kappa_reference: tuple[complex, ...] | None

    @property
    def stabilized_fraction(self) -> float:
        if not self.trials:
            return math.nan
        return sum(t.stabilized for t in self.trials) / len(self.trials)

    def stabilized_values(self) -> list[complex]:
        return [t.final_expectation for t in self.trials if t.stabilized]

    def max_distance_to_kappa(self) -> float | None:
        if self.kappa_reference is None:
            return None
        vals = self.stabilized_values()
        if not vals:
            return None
        ref = np.asarray(self.kappa_reference)
        return max(float(np.min(np.abs(ref - v))) for v in vals)


def probe_conjecture(
    cfg: SchemeConfig,
    rng: np.random.Generator | None = None,
    stabilization_tol: float = 1e-3,
) -> ConjectureReport:
    """Full-state probe of the generalized many-to-one claim.

    Evolves the complete tensor-product state (no reduced dynamics) for
    ``cfg.runs`` runs per trial and reports whether the per-run monodromy
    expectations stabilize, together with the stabilized values.  For a
    factorized initial state the stabilized values are compared against the
    eigenvalues of the partial-trace operator; for entangled initial states
    the report is purely exploratory and asserts nothing.

    Incident particles only ever exchange with the target here, so the mutual
    statistics of the incident species never enters the evolution; it
    constrains which initial states the conjecture covers, not the dynamics.
    """
    cfg.validate()
    kappa_ref = None
    if cfg.initial_joint is None:
        _, u_dec = compute_U(cfg.monodromy, np.outer(cfg.psi_b, cfg.psi_b.conj()))
        kappa_ref = tuple(complex(v) for v in u_dec.eigenvalues)
    trials = []
    for t in range(cfg.trials):
        gen = rng if (rng is not None and cfg.trials == 1) else trial_rng(cfg.seed, t)
        uniforms = gen.random(cfg.runs)
        engine = FullStateManyToOne(cfg)
        zs = []
        outs = []
        for j in range(cfg.runs):
            z = engine.expectation()
            zs.append(complex(z))
            dist = prob_na(cfg.apparatus, z if abs(z) <= 1.0 else z / abs(z))
            out = 1 if uniforms[j] < dist.p_d1 else 2
            outs.append(out)
            engine.step(out)
        zs.append(complex(engine.expectation()))
        stabilized = abs(zs[-1] - zs[-2]) <= stabilization_tol
        trials.append(
            ConjectureTrial(
                expectations=tuple(zs),
                outcomes=tuple(outs),
                stabilized=stabilized,
                final_expectation=zs[-1],
            )
        )
    return ConjectureReport(
        trials=tuple(trials),
        stabilization_tol=stabilization_tol,
        kappa_reference=kappa_ref,
    )


# ---------------------------------------------------------------------------
# Helpers for building initial states
# ---------------------------------------------------------------------------

def state_with_weights(
    dec: SpectralDecomposition, weights, reference: np.ndarray | None = None
) -> np.ndarray:
    """A state with prescribed spectral weights.

    Takes one deterministic unit vector from each eigenspace (the normalized
    projection of a fixed reference vector) and mixes them with amplitudes
    ``sqrt(w)``.  Weights must be nonnegative and sum to one.
    """
    w = np.asarray(weights, dtype=np.float64)
    if len(w) != len(dec):
        raise DimensionMismatch("one weight per eigenvalue cluster is required")
    if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-9:
        raise ValidationError("weights must be nonnegative and sum to 1")
    dim = dec.source_dim
    candidates = [np.ones(dim) / math.sqrt(dim)]
    candidates += [np.eye(dim)[j] for j in range(dim)]
    if reference is not None:
        candidates.insert(0, np.asarray(reference, dtype=np.complex128).reshape(-1))
    psi = np.zeros(dim, dtype=np.complex128)
    for k, proj in enumerate(dec.projectors):
        if w[k] <= 0.0:
            continue
        for ref in candidates:
            comp = proj @ ref
            norm = np.linalg.norm(comp)
            if norm > 1e-8:
                psi = psi + math.sqrt(w[k]) * comp / norm
                break
        else:
            raise ValidationError("could not find a reference vector inside an eigenspace")
    return psi / np.linalg.norm(psi)
