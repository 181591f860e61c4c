"""Interference experiments with non-abelian anyons in a two-detector
Mach-Zehnder interferometer: closed-form detector distributions, braid-group
state evolution, the three repetition schemes with measurement-induced
locking, and exact locking analytics."""

__version__ = "0.1.0"

from .apparatus import (
    Apparatus,
    BeamSplitter,
    DetectorDistribution,
    apparatus_preset,
    cross_term,
    decompose_na,
    paper_example,
    prob_ab,
    prob_na,
    prob_ordinary,
)
from .braid import (
    BraidMatrix,
    BraidRegistry,
    BraidWord,
    ParticleSystem,
    PureState,
    apply_braid,
    apply_word,
    check_yang_baxter,
    swap_matrix,
)
from .convergence import (
    LikelihoodFamily,
    ZDistribution,
    convolution_check,
    locking_masses,
    moments,
    sequence_probability,
    z_distribution,
    z_distribution_multi,
)
from .linalg import (
    SpectralDecomposition,
    kron,
    partial_trace_left,
    principal_unitary_sqrt,
    spectral_decompose,
)
from .schemes import (
    LockReport,
    MonodromySpec,
    PatternEstimate,
    RunRecord,
    SchemeConfig,
    TrialResult,
    compute_U,
    probe_conjecture,
    project_after_detection,
    run_probabilities,
    simulate_many_to_many,
    simulate_many_to_one,
    simulate_one_to_one,
    step_many_to_one,
    step_one_to_one,
    trial_rng,
)

__all__ = [name for name in dir() if not name.startswith("_")]
