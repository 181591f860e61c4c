"""Exact locking analytics via dynamic programming over outcome counts.

After ``n`` runs, the probability of a particular outcome sequence is a
mixture of per-branch products: each eigenvalue branch contributes its initial
weight times the product of its per-run outcome probabilities.  With two
detectors, everything depends on the sequence only through the number ``k``
of detector-1 outcomes, so quantities over all ``2^n`` sequences collapse to
``n + 1`` atoms computed by a Pascal-style recurrence.

The central object is the atomic distribution of the log weight ratio

    z_n = ln( weight of branch 1 after n runs / weight of branch 2 )

whose two runaway components prove locking: their means drift linearly in
``n`` while their widths grow only like ``sqrt(n)``, so the mass near ``z = 0``
vanishes and the far tails converge to the initial branch weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .apparatus import Apparatus, prob_na
from .errors import DimensionMismatch, ValidationError, ZeroLikelihood
from .linalg import SpectralDecomposition

#: Two branch distributions closer than this are treated as indistinguishable.
BRANCH_TIE_TOL = 1e-12

#: Atoms whose positions differ by less than this (scaled) are merged.
ATOM_MERGE_TOL = 1e-11


@dataclass(frozen=True)
class LikelihoodFamily:
    """Per-branch outcome distributions with initial weights.

    ``branches[j] = (P_j[D1], P_j[D2])`` is the locked detector distribution
    of branch ``j``; ``weights[j]`` its initial spectral weight.  ``labels``
    optionally carries the eigenvalues the branches belong to.
    """

    branches: tuple[tuple[float, float], ...]
    weights: tuple[float, ...]
    labels: tuple[complex, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.branches) < 1:
            raise ValidationError("a likelihood family needs at least one branch")
        if len(self.weights) != len(self.branches):
            raise DimensionMismatch("one weight per branch is required")
        for p1, p2 in self.branches:
            if not (-1e-12 <= p1 <= 1 + 1e-12 and -1e-12 <= p2 <= 1 + 1e-12):
                raise ValidationError(f"branch probabilities ({p1}, {p2}) outside [0, 1]")
            if abs(p1 + p2 - 1.0) > 1e-9:
                raise ValidationError("branch distribution does not sum to 1")
        if any(w < -1e-12 for w in self.weights):
            raise ValidationError("weights must be nonnegative")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValidationError("weights must sum to 1")
        if self.labels is not None and len(self.labels) != len(self.branches):
            raise DimensionMismatch("one label per branch is required")

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    @classmethod
    def from_spectrum(cls, app: Apparatus, eigenvalues, weights) -> "LikelihoodFamily":
        """Branches from eigenvalues: the locked pattern of each eigenvalue."""
        eigenvalues = [complex(v) for v in eigenvalues]
        branches = tuple(prob_na(app, lam).as_tuple() for lam in eigenvalues)
        return cls(branches=branches, weights=tuple(float(w) for w in weights),
                   labels=tuple(eigenvalues))

    @classmethod
    def from_state(cls, app: Apparatus, dec: SpectralDecomposition, psi) -> "LikelihoodFamily":
        return cls.from_spectrum(app, dec.eigenvalues, dec.weights(psi))

    @classmethod
    def from_density(cls, app: Apparatus, dec: SpectralDecomposition, rho) -> "LikelihoodFamily":
        return cls.from_spectrum(app, dec.eigenvalues, dec.density_weights(rho))

    def indistinguishable_pairs(self) -> tuple[tuple[int, int], ...]:
        out = []
        for i in range(self.n_branches):
            for j in range(i + 1, self.n_branches):
                if abs(self.branches[i][0] - self.branches[j][0]) <= BRANCH_TIE_TOL:
                    out.append((i, j))
        return tuple(out)


def sequence_probability(fam: LikelihoodFamily, outcomes) -> float:
    """Probability of one outcome sequence: the mixture of branch products."""
    outcomes = list(outcomes)
    if not outcomes:
        raise ValidationError("outcome sequence must be non-empty")
    total = 0.0
    for (p1, p2), w in zip(fam.branches, fam.weights):
        prod = w
        for o in outcomes:
            if o not in (1, 2):
                raise ValidationError(f"outcomes must be 1 or 2, got {o!r}")
            prod *= p1 if o == 1 else p2
        total += prod
    return total


def _binomial_masses(n: int, p: float) -> np.ndarray:
    """Masses of the detector-1 count after ``n`` i.i.d. runs, by recurrence.

    One run is folded in per step, so the result is exact up to O(n) rounding;
    the final vector is renormalized to absorb that drift.
    """
    m = np.zeros(n + 1, dtype=np.float64)
    m[0] = 1.0
    q = 1.0 - p
    for j in range(1, n + 1):
        m[1 : j + 1] = m[1 : j + 1] * q + m[0:j] * p
        m[0] = m[0] * q
    total = m.sum()
    if abs(total - 1.0) > 1e-9:
        raise ValidationError(f"binomial masses drifted to {total!r}")
    return m / total


def _log_ratio(a: float, b: float) -> float:
    """``ln(a / b)`` with signed infinities at boundary zeros."""
    if a == 0.0 and b == 0.0:
        return 0.0  # outcome impossible in both branches; never realized
    if b == 0.0:
        return math.inf
    if a == 0.0:
        return -math.inf
    return math.log(a / b)


def _log_weight(w: float) -> float:
    return math.log(w) if w > 0.0 else -math.inf


def _merge_atoms(z: np.ndarray, mass: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge atoms at (numerically) equal positions; drop zero-mass atoms."""
    keep = mass > 0.0
    z, mass = z[keep], mass[keep]
    if len(z) == 0:
        return z, mass
    order = np.argsort(z)
    z, mass = z[order], mass[order]
    out_z = [z[0]]
    out_m = [mass[0]]
    for zi, mi in zip(z[1:], mass[1:]):
        if zi == out_z[-1] or abs(zi - out_z[-1]) <= ATOM_MERGE_TOL * (1.0 + abs(zi)):
            out_m[-1] += mi
        else:
            out_z.append(zi)
            out_m.append(mi)
    return np.array(out_z), np.array(out_m)


@dataclass(frozen=True)
class ZDistribution:
    """An atomic distribution of the log weight ratio after ``n`` runs."""

    n: int
    z: np.ndarray
    mass: np.ndarray
    degenerate: bool = False

    def __post_init__(self) -> None:
        if np.any(self.mass < 0.0):
            raise ValidationError("atom masses must be nonnegative")
        if abs(self.mass.sum() - 1.0) > 1e-12:
            raise ValidationError(f"atom masses sum to {self.mass.sum()!r}, expected 1")

    def __len__(self) -> int:
        return len(self.z)

    def mean(self) -> float:
        return float(np.sum(self.z * self.mass))

    def variance(self) -> float:
        mu = self.mean()
        return float(np.sum((self.z - mu) ** 2 * self.mass))

    def region_masses(self, z_cut: float) -> tuple[float, float, float]:
        """Masses of the mid band ``|z| < z_cut`` and the two tails."""
        upper = float(self.mass[self.z >= z_cut].sum())
        lower = float(self.mass[self.z <= -z_cut].sum())
        return 1.0 - upper - lower, upper, lower

    def convolve(self, other: "ZDistribution") -> "ZDistribution":
        """Distribution of the sum of independent draws."""
        z = (self.z[:, None] + other.z[None, :]).reshape(-1)
        m = (self.mass[:, None] * other.mass[None, :]).reshape(-1)
        z, m = _merge_atoms(z, m)
        return ZDistribution(n=self.n + other.n, z=z, mass=m,
                             degenerate=self.degenerate and other.degenerate)


@dataclass(frozen=True)
class ZFamilyResult:
    """The mixture distribution and its two branch components."""

    mixture: ZDistribution
    branch_a: ZDistribution
    branch_b: ZDistribution
    offset: float  # ln(alpha^2 / beta^2), the shift between mixture and branches


def _require_two_branches(fam: LikelihoodFamily) -> None:
    if fam.n_branches != 2:
        raise DimensionMismatch(
            f"this operation needs exactly two branches, family has {fam.n_branches}"
        )


def z_distribution(fam: LikelihoodFamily, n: int) -> ZFamilyResult:
    """Exact distribution of the log weight ratio after ``n`` runs.

    Atoms are indexed by the detector-1 count ``k``; the position is
    ``ln(w1/w2) + k ln(A1/B1) + (n - k) ln(A2/B2)`` and the mass a mixture of
    two binomial terms.  Branch zeros produce explicit atoms at signed
    infinity.  The branch components (which omit the weight offset) are
    returned alongside the mixture.
    """
    _require_two_branches(fam)
    if n < 0:
        raise ValidationError("n must be nonnegative")
    (a1, a2), (b1, b2) = fam.branches
    alpha2, beta2 = fam.weights
    degenerate = abs(a1 - b1) <= BRANCH_TIE_TOL

    k = np.arange(n + 1, dtype=np.float64)
    l1 = _log_ratio(a1, b1)
    l2 = _log_ratio(a2, b2)
    with np.errstate(invalid="ignore"):
        z_branch = k * l1 + (n - k) * l2
    # 0 * inf at k = 0 or k = n: the offending term is absent, not nan
    if n > 0:
        if math.isinf(l1):
            z_branch[0] = n * l2
        if math.isinf(l2):
            z_branch[n] = n * l1
    else:
        z_branch = np.zeros(1)

    pa = _binomial_masses(n, a1)
    pb = _binomial_masses(n, b1)
    offset = _log_ratio(alpha2, beta2)
    mix_mass = alpha2 * pa + beta2 * pb
    with np.errstate(invalid="ignore"):
        mix_z = z_branch + offset
    if math.isinf(offset):
        mix_z = np.full(n + 1, offset)

    za, ma = _merge_atoms(z_branch.copy(), pa)
    zb, mb = _merge_atoms(z_branch.copy(), pb)
    zm, mm = _merge_atoms(mix_z, mix_mass)
    return ZFamilyResult(
        mixture=ZDistribution(n=n, z=zm, mass=mm, degenerate=degenerate),
        branch_a=ZDistribution(n=n, z=za, mass=ma, degenerate=degenerate),
        branch_b=ZDistribution(n=n, z=zb, mass=mb, degenerate=degenerate),
        offset=offset,
    )


@dataclass(frozen=True)
class Moments:
    """Exact means and variances of the branch components after ``n`` runs.

    The per-run quantities satisfy ``mu_a = n * m_a`` and ``var_a = n * s_a2``
    (and likewise for branch B with ``mu_b = -n * m_b``); both scale exactly
    linearly in ``n``.  ``unresolvable`` marks a family whose branches are
    identical, where all drifts vanish and locking cannot discriminate.
    """

    n: int
    mu_a: float
    var_a: float
    mu_b: float
    var_b: float
    m_a: float
    s_a2: float
    m_b: float
    s_b2: float
    unresolvable: bool


def moments(fam: LikelihoodFamily, n: int) -> Moments:
    """Means and variances of the two branch components at ``n`` runs."""
    _require_two_branches(fam)
    (a1, a2), (b1, b2) = fam.branches
    for x, y in ((a1, b1), (a2, b2)):
        if (x == 0.0) != (y == 0.0):
            raise ZeroLikelihood(
                "a branch assigns probability zero to an outcome the other allows;"
                " moments are infinite"
            )
    terms = [(a, b) for a, b in ((a1, b1), (a2, b2)) if a != 0.0 or b != 0.0]
    m_a = sum(a * math.log(a / b) for a, b in terms)
    second_a = sum(a * math.log(a / b) ** 2 for a, b in terms)
    m_b = -sum(b * math.log(a / b) for a, b in terms)
    second_b = sum(b * math.log(a / b) ** 2 for a, b in terms)
    s_a2 = second_a - m_a**2
    s_b2 = second_b - m_b**2
    unresolvable = abs(a1 - b1) <= BRANCH_TIE_TOL
    return Moments(
        n=n,
        mu_a=n * m_a,
        var_a=n * s_a2,
        mu_b=-n * m_b,
        var_b=n * s_b2,
        m_a=m_a,
        s_a2=s_a2,
        m_b=m_b,
        s_b2=s_b2,
        unresolvable=unresolvable,
    )


def locking_masses(fam: LikelihoodFamily, n: int, z_cut: float = 25.0) -> tuple[float, float, float]:
    """Exact ``(mid, upper, lower)`` masses of the mixture at ``n`` runs.

    As ``n`` grows the mid band empties and the tails converge to the initial
    branch weights: the finite-``n`` numbers behind the locking limit.
    """
    if z_cut <= 0.0:
        raise ValidationError("z_cut must be positive")
    mixture = z_distribution(fam, n).mixture
    return mixture.region_masses(z_cut)


# ---------------------------------------------------------------------------
# More than two branches
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiZDistribution:
    """Joint atomic distribution of all log weight ratios to branch 1.

    Atoms are indexed by the detector-1 count; ``ratios[:, j-2]`` holds
    ``ln(score_1 / score_j)`` where ``score_j`` is branch ``j``'s unnormalized
    weight after the runs.  ``groups`` partitions branch indices into classes
    with identical outcome distributions (indistinguishable branches).
    """

    n: int
    mass: np.ndarray          # (m,)
    ratios: np.ndarray        # (m, K-1)
    log_scores: np.ndarray    # (m, K)
    groups: tuple[tuple[int, ...], ...]
    weights: tuple[float, ...]

    @property
    def n_branches(self) -> int:
        return self.log_scores.shape[1]

    def region_masses(self, z_cut: float) -> tuple[float, dict[tuple[int, ...], float]]:
        """Mass locked into each indistinguishable group, plus the mid mass.

        An atom belongs to a group's region when the group's combined score
        exceeds every other group's by at least ``z_cut`` in log.
        """
        group_scores = []
        for g in self.groups:
            cols = self.log_scores[:, list(g)]
            with np.errstate(invalid="ignore"):
                group_scores.append(_logsumexp_rows(cols))
        scores = np.stack(group_scores, axis=1)  # (m, G)
        masses: dict[tuple[int, ...], float] = {g: 0.0 for g in self.groups}
        mid = 0.0
        for i in range(scores.shape[0]):
            row = scores[i]
            top = int(np.argmax(row))
            others = np.delete(row, top)
            gap = row[top] - (others.max() if len(others) else -math.inf)
            if gap >= z_cut:
                masses[self.groups[top]] += float(self.mass[i])
            else:
                mid += float(self.mass[i])
        return mid, masses


def _logsumexp_rows(cols: np.ndarray) -> np.ndarray:
    top = np.max(cols, axis=1)
    out = np.full(len(top), -math.inf)
    ok = ~np.isneginf(top)
    if np.any(ok):
        out[ok] = top[ok] + np.log(np.sum(np.exp(cols[ok] - top[ok, None]), axis=1))
    return out


def z_distribution_multi(fam: LikelihoodFamily, n: int) -> MultiZDistribution:
    """Joint log-ratio distribution for a family with any number of branches."""
    if fam.n_branches < 2:
        raise DimensionMismatch("the multi-branch distribution needs at least two branches")
    if n < 0:
        raise ValidationError("n must be nonnegative")
    k = np.arange(n + 1, dtype=np.float64)
    k_rev = n - k
    scores = np.empty((n + 1, fam.n_branches))
    mass = np.zeros(n + 1)
    for j, ((p1, p2), w) in enumerate(zip(fam.branches, fam.weights)):
        lw = _log_weight(w)
        with np.errstate(divide="ignore", invalid="ignore"):
            col = lw + k * (math.log(p1) if p1 > 0 else -math.inf) \
                     + k_rev * (math.log(p2) if p2 > 0 else -math.inf)
        col = np.asarray(col)
        if p1 == 0.0 and n > 0:
            col[1:] = -math.inf
            col[0] = lw + n * (math.log(p2) if p2 > 0 else -math.inf)
        if p2 == 0.0 and n > 0:
            col[:n] = -math.inf
            col[n] = lw + n * (math.log(p1) if p1 > 0 else -math.inf)
        if p1 == 0.0 and p2 == 0.0:
            col[:] = -math.inf
        scores[:, j] = col
        if w > 0.0:
            mass += w * _binomial_masses(n, p1)
    with np.errstate(invalid="ignore"):
        ratios = scores[:, [0]] - scores[:, 1:]
    # -inf minus -inf: both branches dead on this atom; ratio is immaterial
    ratios = np.nan_to_num(ratios, nan=0.0, posinf=math.inf, neginf=-math.inf)
    keep = mass > 0.0
    total = mass[keep].sum()
    if abs(total - 1.0) > 1e-9:
        raise ValidationError(f"multi-branch masses drifted to {total!r}")
    groups: list[list[int]] = []
    for j in range(fam.n_branches):
        for g in groups:
            if abs(fam.branches[g[0]][0] - fam.branches[j][0]) <= BRANCH_TIE_TOL:
                g.append(j)
                break
        else:
            groups.append([j])
    return MultiZDistribution(
        n=n,
        mass=mass[keep] / total,
        ratios=ratios[keep],
        log_scores=scores[keep],
        groups=tuple(tuple(g) for g in groups),
        weights=fam.weights,
    )


# ---------------------------------------------------------------------------
# Convolution identities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvolutionReport:
    """Residuals of the branch self-convolution identity.

    The branch-A component at two runs must equal the self-convolution of the
    one-run component exactly, while the mixture does not convolve (except in
    degenerate families): locking is driven by the branches, not the mixture.
    """

    pa_residual: float
    p_residual: float
    pa_matches: bool
    p_differs: bool
    degenerate: bool


def _mass_near(dist: ZDistribution, z: float) -> float:
    if math.isinf(z):
        return float(dist.mass[dist.z == z].sum())
    close = np.isfinite(dist.z) & (np.abs(dist.z - z) <= ATOM_MERGE_TOL * (1 + abs(z)))
    return float(dist.mass[close].sum())


def _atom_distance(x: ZDistribution, y: ZDistribution) -> float:
    """Total-variation-style distance between two atomic distributions."""
    zs = np.unique(np.concatenate([x.z, y.z]))
    return sum(abs(_mass_near(x, z) - _mass_near(y, z)) for z in zs) / 2.0


def convolution_check(fam: LikelihoodFamily, tol: float = 1e-12) -> ConvolutionReport:
    """Verify the self-convolution identity of the branch components."""
    _require_two_branches(fam)
    one = z_distribution(fam, 1)
    two = z_distribution(fam, 2)
    pa_residual = _atom_distance(two.branch_a, one.branch_a.convolve(one.branch_a))
    p_residual = _atom_distance(two.mixture, one.mixture.convolve(one.mixture))
    degenerate = one.mixture.degenerate or fam.weights[0] in (0.0, 1.0)
    return ConvolutionReport(
        pa_residual=pa_residual,
        p_residual=p_residual,
        pa_matches=pa_residual <= tol,
        p_differs=p_residual > tol,
        degenerate=degenerate,
    )


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def z_family_csv(result: ZFamilyResult) -> str:
    """CSV with columns ``z, mass, branch`` over mixture and both branches."""
    lines = ["z,mass,branch"]
    for dist, tag in ((result.mixture, "mixed"), (result.branch_a, "A"), (result.branch_b, "B")):
        for z, m in zip(dist.z, dist.mass):
            lines.append(f"{float(z)!r},{float(m)!r},{tag}")
    return "\n".join(lines) + "\n"


def multi_z_csv(multi: MultiZDistribution) -> str:
    """CSV with one log-ratio column per branch beyond the first."""
    header = ",".join(["z"] + [f"z{j + 3}" for j in range(multi.ratios.shape[1] - 1)]
                      + ["mass", "branch"])
    lines = [header]
    for row, m in zip(multi.ratios, multi.mass):
        lines.append(",".join(repr(float(v)) for v in row) + f",{float(m)!r},mixed")
    return "\n".join(lines) + "\n"
