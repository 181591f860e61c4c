from __future__ import annotations

import cmath
import itertools
import math

import numpy as np
import pytest

from anyonlab import errors
from anyonlab.apparatus import Apparatus, BeamSplitter, prob_ab, prob_na, prob_ordinary
from anyonlab.braid import ParticleSystem, PureState, swap_matrix
from anyonlab.convergence import LikelihoodFamily, sequence_probability
from anyonlab.linalg import partial_trace_left
from anyonlab.schemes import (
    FullStateManyToOne,
    MonodromySpec,
    SchemeConfig,
    compute_U,
    eigenpattern_d1,
    probe_conjecture,
    project_after_detection,
    run_probabilities,
    simulate_many_to_many,
    simulate_many_to_one,
    simulate_one_to_one,
    spectral_weight_engine,
    state_with_weights,
    step_many_to_one,
    step_one_to_one,
    step_one_to_one_density,
    trial_rng,
    update_coefficients,
)
from conftest import (
    random_block_monodromy,
    random_density,
    random_state,
    random_unitary_with_spectrum,
)


def _one_to_one_cfg(app, mono, psi, **kw):
    defaults = dict(scheme="one_to_one", apparatus=app, monodromy=mono,
                    initial_state=psi, runs=50, trials=1, seed=77)
    defaults.update(kw)
    return SchemeConfig(**defaults)


def _random_apparatus(rng) -> Apparatus:
    chi = rng.uniform(0.2, math.pi / 2 - 0.2)
    t = math.sin(chi) * cmath.exp(1j * rng.uniform(0, 2 * math.pi))
    r = math.cos(chi) * cmath.exp(1j * rng.uniform(0, 2 * math.pi))
    bs1 = BeamSplitter.from_t_r(t, r)
    chi = rng.uniform(0.2, math.pi / 2 - 0.2)
    t = math.sin(chi) * cmath.exp(1j * rng.uniform(0, 2 * math.pi))
    r = math.cos(chi) * cmath.exp(1j * rng.uniform(0, 2 * math.pi))
    bs2 = BeamSplitter.from_t_r(t, r)
    return Apparatus(bs1=bs1, bs2=bs2, q=float(rng.uniform(0.4, 1.0)),
                     theta=float(rng.uniform(0, 2 * math.pi)))


def _random_monodromy_spec(rng, dim: int | None = None) -> MonodromySpec:
    n = dim or int(rng.choice([4, 6, 8]))
    m, _ = random_unitary_with_spectrum(rng, n)
    dim_b = 2 if n % 2 == 0 else 1
    return MonodromySpec.from_matrix(m, dim_b=dim_b, dim_a=n // dim_b)


# ---------------------------------------------------------------------------
# run probabilities
# ---------------------------------------------------------------------------

def test_run_probabilities_eigenstate(app, explicit_fixture):
    dec = explicit_fixture.monodromy.decomposition
    psi = state_with_weights(dec, [1.0, 0.0])
    dist = run_probabilities(app, psi, explicit_fixture.monodromy.matrix)
    assert dist.as_tuple() == pytest.approx((0.9, 0.1), abs=1e-12)


def test_run_probabilities_equal_superposition(app, explicit_fixture):
    dec = explicit_fixture.monodromy.decomposition
    psi = state_with_weights(dec, [0.5, 0.5])
    dist = run_probabilities(app, psi, explicit_fixture.monodromy.matrix)
    assert dist.as_tuple() == pytest.approx((0.5, 0.5), abs=1e-12)


def test_run_probabilities_matches_decomposition_route(app):
    rng = np.random.default_rng(30)
    for _ in range(10):
        mono = _random_monodromy_spec(rng)
        psi = random_state(rng, mono.dim)
        direct = run_probabilities(app, psi, mono.matrix)
        weights = mono.decomposition.weights(psi)
        recombined = sum(
            w * prob_ab(app, lam).p_d1
            for lam, w in zip(mono.decomposition.eigenvalues, weights)
        )
        assert direct.p_d1 == pytest.approx(recombined, abs=1e-12)


# ---------------------------------------------------------------------------
# post-measurement projection
# ---------------------------------------------------------------------------

def test_projection_abelian_braid_leaves_state(app):
    from anyonlab.fixtures import load_fixture

    fixture = load_fixture("phase")
    reg = fixture.registry
    system = ParticleSystem(("A", "B"), reg.species_dims)
    psi = random_state(np.random.default_rng(31), 4)
    state = PureState(system, psi)
    post, k = project_after_detection(app, state, reg, outcome=1)
    swapped = swap_matrix(2, 2) @ psi
    fidelity = abs(np.vdot(post.amplitudes, swapped))
    assert fidelity == pytest.approx(1.0, abs=1e-12)
    assert k == pytest.approx(prob_ab(app, -1.0).p_d1, abs=1e-12)


def test_projection_eigenstate_unchanged(app, explicit_fixture):
    reg = explicit_fixture.registry
    dec = explicit_fixture.monodromy.decomposition
    system = ParticleSystem(("A", "B"), reg.species_dims)
    for idx, lam in enumerate(dec.eigenvalues):
        weights = [0.0, 0.0]
        weights[idx] = 1.0
        psi = state_with_weights(dec, weights)
        post, k = project_after_detection(app, PureState(system, psi), reg, outcome=1)
        fidelity = abs(np.vdot(post.amplitudes, swap_matrix(2, 3) @ psi))
        assert fidelity == pytest.approx(1.0, abs=1e-12)
        assert k == pytest.approx(prob_ab(app, lam).p_d1, abs=1e-12)


def test_projection_updates_spectral_weights(app, explicit_fixture):
    # weights against the swap-conjugated projectors multiply by the
    # outcome probability of each eigenvalue
    reg = explicit_fixture.registry
    mono = explicit_fixture.monodromy
    dec = mono.decomposition
    sigma = swap_matrix(2, 3)
    system = ParticleSystem(("A", "B"), reg.species_dims)
    psi = random_state(np.random.default_rng(32), 6)
    weights_before = dec.weights(psi)
    post, k = project_after_detection(app, PureState(system, psi), reg, outcome=1)
    for lam, w_before, proj in zip(dec.eigenvalues, weights_before, dec.projectors):
        conj_proj = sigma @ proj @ sigma.conj().T
        w_after = float(np.vdot(post.amplitudes, conj_proj @ post.amplitudes).real)
        assert w_after == pytest.approx(w_before * prob_ab(app, lam).p_d1 / k, abs=1e-12)


def test_projection_rejects_zero_probability_outcome(app):
    # an eigenvalue can make one detector dark; conditioning on it must fail
    theta = app.theta
    dark = cmath.exp(-1j * theta)
    mono = MonodromySpec.from_matrix(np.diag([dark, dark.conjugate()]), dim_b=1, dim_a=2)
    psi = np.array([1.0, 0.0], dtype=complex)
    assert prob_na(app, dark).p_d2 == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(errors.ZeroNormComponent):
        step_one_to_one(app, psi, mono.matrix, outcome=2)


# ---------------------------------------------------------------------------
# one-to-one steps
# ---------------------------------------------------------------------------

def test_step_one_to_one_eigenstate_phase(app, explicit_fixture):
    mono = explicit_fixture.monodromy
    dec = mono.decomposition
    for idx, lam in enumerate(dec.eigenvalues):
        weights = [0.0, 0.0]
        weights[idx] = 1.0
        psi = state_with_weights(dec, weights)
        for outcome in (1, 2):
            a, b = update_coefficients(app, outcome)
            new_psi, k = step_one_to_one(app, psi, mono.matrix, outcome)
            phase = (a * lam + b) / math.sqrt(k)
            np.testing.assert_allclose(new_psi, phase * psi, atol=1e-12)
            assert abs(abs(phase) - 1.0) < 1e-12


def test_step_one_to_one_multiplicative_weights(app, explicit_fixture):
    mono = explicit_fixture.monodromy
    dec = mono.decomposition
    psi = random_state(np.random.default_rng(33), 6)
    w = dec.weights(psi)
    for outcome in (1, 2):
        new_psi, k = step_one_to_one(app, psi, mono.matrix, outcome)
        w_new = dec.weights(new_psi)
        for lam, wb, wa in zip(dec.eigenvalues, w, w_new):
            assert wa == pytest.approx(wb * prob_ab(app, lam).probability(outcome) / k,
                                       abs=1e-12)


def test_step_density_matches_pure_at_full_coherence(app, explicit_fixture):
    mono = explicit_fixture.monodromy
    psi = random_state(np.random.default_rng(34), 6)
    rho = np.outer(psi, psi.conj())
    psi1, k1 = step_one_to_one(app, psi, mono.matrix, 1)
    rho1, p1 = step_one_to_one_density(app, rho, mono.matrix, 1)
    assert p1 == pytest.approx(k1, abs=1e-12)
    np.testing.assert_allclose(rho1, np.outer(psi1, psi1.conj()), atol=1e-12)


def test_step_density_dephased_weights_still_multiply(explicit_fixture):
    rng = np.random.default_rng(35)
    app_q = Apparatus(
        bs1=BeamSplitter.from_t_r(1j / math.sqrt(2), 1 / math.sqrt(2)),
        bs2=BeamSplitter.from_t_r(1j / math.sqrt(2), 1 / math.sqrt(2)),
        q=0.6,
        theta=math.acos(0.8),
    )
    mono = explicit_fixture.monodromy
    dec = mono.decomposition
    rho = random_density(rng, 6)
    w = dec.density_weights(rho)
    rho1, p = step_one_to_one_density(app_q, rho, mono.matrix, 1)
    for lam, wb, wa in zip(dec.eigenvalues, w, dec.density_weights(rho1)):
        assert wa == pytest.approx(wb * prob_ab(app_q, lam).p_d1 / p, abs=1e-12)


# ---------------------------------------------------------------------------
# one-to-one simulation
# ---------------------------------------------------------------------------

def test_simulate_eigenstate_locks_immediately(app, explicit_fixture):
    psi = state_with_weights(explicit_fixture.monodromy.decomposition, [1.0, 0.0])
    cfg = _one_to_one_cfg(app, explicit_fixture.monodromy, psi, runs=2000, record_runs=True)
    res = simulate_one_to_one(cfg)
    assert res.lock.locked and res.lock.runs_to_lock == 0
    assert res.lock.locked_value == pytest.approx(1.0)
    # every run draws from the locked pattern
    sigma4 = 4 * math.sqrt(0.9 * 0.1 / 2000)
    assert res.pattern.i_d1 == pytest.approx(0.9, abs=sigma4)
    assert len(res.records) == 2000
    assert all(abs(r.pre_expectation - 1.0) < 1e-9 for r in res.records)


def test_simulate_lock_frequencies_and_patterns(app, explicit_fixture):
    trials = 1200
    psi = state_with_weights(explicit_fixture.monodromy.decomposition, [0.375, 0.625])
    cfg = _one_to_one_cfg(app, explicit_fixture.monodromy, psi, runs=60, seed=1234)
    cfg.validate()
    hits = 0
    post1 = post_n = 0
    for t in range(trials):
        res = simulate_one_to_one(cfg, trial_index=t)
        assert res.lock.locked
        if res.lock.locked_value == pytest.approx(1.0):
            hits += 1
            post1 += res.post_lock_pattern.count_d1
            post_n += res.post_lock_pattern.n
    sigma4 = 4 * math.sqrt(0.375 * 0.625 / trials)
    assert hits / trials == pytest.approx(0.375, abs=sigma4)
    sigma4_pattern = 4 * math.sqrt(0.9 * 0.1 / post_n)
    assert post1 / post_n == pytest.approx(0.9, abs=sigma4_pattern + 1e-6)


def test_simulate_degenerate_lock_projects_onto_eigenspace(app, explicit_fixture):
    # drive the full-state evolution by hand and compare the locked state with
    # the normalized projection of the initial state
    mono = explicit_fixture.monodromy
    dec = mono.decomposition
    rng = trial_rng(4242, 0)
    psi0 = random_state(np.random.default_rng(36), 6)
    psi = psi0.copy()
    for _ in range(200):
        dist = run_probabilities(app, psi, mono.matrix)
        outcome = 1 if rng.random() < dist.p_d1 else 2
        psi, _ = step_one_to_one(app, psi, mono.matrix, outcome)
    weights = dec.weights(psi)
    idx = int(np.argmax(weights))
    assert weights[idx] > 1.0 - 1e-9
    target = dec.projectors[idx] @ psi0
    target = target / np.linalg.norm(target)
    overlap = abs(np.vdot(dec.projectors[idx] @ psi / np.linalg.norm(dec.projectors[idx] @ psi),
                          target))
    assert overlap == pytest.approx(1.0, abs=1e-9)


def test_one_to_one_engines_agree(app, explicit_fixture):
    psi = state_with_weights(explicit_fixture.monodromy.decomposition, [0.375, 0.625])
    cfg = _one_to_one_cfg(app, explicit_fixture.monodromy, psi, runs=80, engine="both")
    simulate_one_to_one(cfg)  # raises on any per-run probability gap > 1e-10


def test_one_to_one_engines_agree_random_and_dephased():
    rng = np.random.default_rng(37)
    for _ in range(10):
        app = _random_apparatus(rng)
        mono = _random_monodromy_spec(rng)
        psi = random_state(rng, mono.dim)
        cfg = SchemeConfig(scheme="one_to_one", apparatus=app, monodromy=mono,
                           initial_state=psi, runs=40, trials=1,
                           seed=int(rng.integers(0, 2**32)), engine="both")
        simulate_one_to_one(cfg)


def test_record_states_opt_in(app, explicit_fixture):
    psi = state_with_weights(explicit_fixture.monodromy.decomposition, [0.5, 0.5])
    base = _one_to_one_cfg(app, explicit_fixture.monodromy, psi, runs=10,
                           engine="oracle", record_runs=True)
    res = simulate_one_to_one(base)
    assert all(r.post_state is None for r in res.records)
    with_states = _one_to_one_cfg(app, explicit_fixture.monodromy, psi, runs=10,
                                  engine="oracle", record_runs=True, record_states=True)
    res = simulate_one_to_one(with_states)
    assert all(r.post_state is not None and r.post_state.shape == (6,) for r in res.records)
    # the recorded state after each run carries the next run's expectation
    for before, after in zip(res.records, res.records[1:]):
        z = np.vdot(before.post_state,
                    explicit_fixture.monodromy.matrix @ before.post_state)
        assert after.pre_expectation == pytest.approx(complex(z), abs=1e-12)


def test_simulation_is_deterministic(app, explicit_fixture):
    psi = state_with_weights(explicit_fixture.monodromy.decomposition, [0.5, 0.5])
    cfg = _one_to_one_cfg(app, explicit_fixture.monodromy, psi, runs=100, record_runs=True)
    res1 = simulate_one_to_one(cfg, trial_index=3)
    res2 = simulate_one_to_one(cfg, trial_index=3)
    assert [r.outcome for r in res1.records] == [r.outcome for r in res2.records]
    other = simulate_one_to_one(cfg, trial_index=4)
    assert [r.outcome for r in res1.records] != [r.outcome for r in other.records]


def test_sequence_probability_matches_engine_replay(app, explicit_fixture):
    # the probability of any outcome sequence factorizes through the spectral
    # weights; replaying the sequence through the engine multiplies to the same
    dec = explicit_fixture.monodromy.decomposition
    psi = state_with_weights(dec, [0.375, 0.625])
    fam = LikelihoodFamily.from_state(app, dec, psi)
    n = 6
    sequences = list(itertools.product((1, 2), repeat=n))
    forced = np.array(sequences, dtype=np.int8)
    out = spectral_weight_engine(
        dec.eigenvalues, eigenpattern_d1(app, dec.eigenvalues), dec.weights(psi),
        lock_threshold=1 - 1e-9, forced_outcomes=forced, collect_history=True,
    )
    probs = np.where(forced == 1, out.history_p1, 1.0 - out.history_p1).prod(axis=1)
    total = 0.0
    for seq, p_engine in zip(sequences, probs):
        p_formula = sequence_probability(fam, seq)
        assert p_engine == pytest.approx(p_formula, abs=1e-13)
        total += p_formula
    assert total == pytest.approx(1.0, abs=1e-12)


def test_lock_reports_unresolved_pairs_when_dephased(explicit_fixture):
    app0 = Apparatus(
        bs1=BeamSplitter.from_t_r(1j / math.sqrt(2), 1 / math.sqrt(2)),
        bs2=BeamSplitter.from_t_r(1j / math.sqrt(2), 1 / math.sqrt(2)),
        q=0.0,
        theta=math.acos(0.8),
    )
    psi = state_with_weights(explicit_fixture.monodromy.decomposition, [0.5, 0.5])
    cfg = _one_to_one_cfg(app0, explicit_fixture.monodromy, psi, runs=30)
    res = simulate_one_to_one(cfg)
    assert res.lock.unresolved_pairs  # both eigenvalues give the same pattern
    assert not res.lock.locked


def test_max_weight_is_empirically_nondecreasing(app, explicit_fixture):
    dec = explicit_fixture.monodromy.decomposition
    psi = state_with_weights(dec, [0.5, 0.5])
    trials, runs = 2000, 50
    uniforms = np.stack([trial_rng(99, t).random(runs) for t in range(trials)])
    out = spectral_weight_engine(
        dec.eigenvalues, eigenpattern_d1(app, dec.eigenvalues), dec.weights(psi),
        lock_threshold=1 - 1e-6, uniforms=uniforms, collect_history=True,
    )
    means = out.history_max_weight.mean(axis=0)
    assert np.all(np.diff(means) > -2e-3)
    assert means[-1] > 0.999


# ---------------------------------------------------------------------------
# many-to-many
# ---------------------------------------------------------------------------

def test_many_to_many_matches_closed_form(app, explicit_fixture):
    dec = explicit_fixture.monodromy.decomposition
    for weights, expected in (([0.5, 0.5], 0.5), ([1.0, 0.0], 0.9), ([0.0, 1.0], 0.1)):
        psi = state_with_weights(dec, weights)
        cfg = SchemeConfig(scheme="many_to_many", apparatus=app,
                           monodromy=explicit_fixture.monodromy,
                           initial_state=psi, runs=100_000, trials=1, seed=5)
        pattern = simulate_many_to_many(cfg)
        sigma4 = 4 * math.sqrt(max(expected * (1 - expected), 0.25 / 100) / cfg.runs)
        assert pattern.i_d1 == pytest.approx(expected, abs=sigma4)


# ---------------------------------------------------------------------------
# many-to-one
# ---------------------------------------------------------------------------

def test_compute_u_fixture(app, explicit_fixture):
    rho_b = np.array([[1.0, 0.0], [0.0, 0.0]])
    u, dec = compute_U(explicit_fixture.monodromy, rho_b)
    np.testing.assert_allclose(u, np.diag([-0.5, 1.0, -0.5]), atol=1e-12)
    np.testing.assert_allclose(dec.eigenvalues, [1.0, -0.5], atol=1e-12)


def test_compute_u_abelian_limit():
    lam = cmath.exp(0.9j)
    mono = MonodromySpec.from_matrix(lam * np.eye(6), dim_b=2, dim_a=3)
    rho_b = random_density(np.random.default_rng(38), 2)
    u, dec = compute_U(mono, rho_b)
    np.testing.assert_allclose(u, lam * np.eye(3), atol=1e-12)
    assert len(dec) == 1


def test_compute_u_random_block_kappa_in_disk():
    rng = np.random.default_rng(39)
    for _ in range(10):
        m = random_block_monodromy(rng, 2, 3)
        mono = MonodromySpec.from_matrix(m, dim_b=2, dim_a=3)
        _, dec = compute_U(mono, random_density(rng, 2))
        assert np.max(np.abs(dec.eigenvalues)) <= 1.0 + 1e-10


def test_step_many_to_one_trivial_monodromy(app):
    mono = MonodromySpec.from_matrix(np.eye(4), dim_b=2, dim_a=2)
    rho = random_density(np.random.default_rng(40), 2)
    psi_b = np.array([1.0, 0.0], dtype=complex)
    for outcome in (1, 2):
        rho_new, p = step_many_to_one(app, rho, psi_b, mono, outcome)
        np.testing.assert_allclose(rho_new, rho, atol=1e-12)
        assert p == pytest.approx(prob_ordinary(app).probability(outcome), abs=1e-12)


def test_step_many_to_one_locked_eigenvector(app, explicit_fixture):
    mono = explicit_fixture.monodromy
    psi_b = np.array([1.0, 0.0], dtype=complex)
    rho = np.zeros((3, 3), dtype=complex)
    rho[1, 1] = 1.0  # the kappa = +1 eigenvector of diag(-1/2, 1, -1/2)
    for outcome in (1, 2):
        rho_new, p = step_many_to_one(app, rho, psi_b, mono, outcome)
        np.testing.assert_allclose(rho_new, rho, atol=1e-12)
        assert p == pytest.approx((0.9, 0.1)[outcome - 1], abs=1e-12)


def test_step_many_to_one_multiplicative_weights(app, explicit_fixture):
    mono = explicit_fixture.monodromy
    psi_b = np.array([1.0, 0.0], dtype=complex)
    _, u_dec = compute_U(mono, np.outer(psi_b, psi_b.conj()))
    rho = random_density(np.random.default_rng(41), 3)
    w = u_dec.density_weights(rho)
    for outcome in (1, 2):
        rho_new, p = step_many_to_one(app, rho, psi_b, mono, outcome)
        for kappa, wb, wa in zip(u_dec.eigenvalues, w, u_dec.density_weights(rho_new)):
            assert wa == pytest.approx(wb * prob_na(app, kappa).probability(outcome) / p,
                                       abs=1e-12)


def test_reduced_channel_equals_full_state_marginal(app):
    # exact for any unitary monodromy, not only consistent braid systems
    rng = np.random.default_rng(42)
    m, _ = random_unitary_with_spectrum(rng, 6, n_distinct=3)
    mono = MonodromySpec.from_matrix(m, dim_b=2, dim_a=3)
    psi_b = random_state(rng, 2)
    psi_a = random_state(rng, 3)
    cfg = SchemeConfig(scheme="many_to_one_conjecture_probe", apparatus=app,
                       monodromy=mono, psi_b=psi_b,
                       rho_a=np.outer(psi_a, psi_a.conj()),
                       runs=4, trials=1, seed=1)
    cfg.validate()
    engine = FullStateManyToOne(cfg)
    rho = np.outer(psi_a, psi_a.conj())
    u_op = partial_trace_left(mono.matrix, 2, 3, np.outer(psi_b, psi_b.conj()))
    for outcome in (1, 2, 1, 2):
        z_full = engine.expectation()
        z_red = complex(np.trace(u_op @ rho))
        assert z_full == pytest.approx(z_red, abs=1e-11)
        p_full = engine.step(outcome)
        rho, p_red = step_many_to_one(app, rho, psi_b, mono, outcome)
        assert p_full == pytest.approx(p_red, abs=1e-11)
    np.testing.assert_allclose(engine.reduced_rho_a(), rho, atol=1e-10)


def test_many_to_one_engines_agree(app, explicit_fixture):
    psi_b = np.array([1.0, 0.0], dtype=complex)
    cfg = SchemeConfig(scheme="many_to_one", apparatus=app,
                       monodromy=explicit_fixture.monodromy, psi_b=psi_b,
                       rho_a=np.eye(3, dtype=complex) / 3,
                       runs=60, trials=1, seed=8, engine="both")
    simulate_many_to_one(cfg)


def test_many_to_one_engines_agree_dephased(explicit_fixture):
    # cross terms scale with the coherence inside the reduced channel exactly
    # as the eigenpatterns do, so the engines stay equivalent below q = 1
    app_q = Apparatus(
        bs1=BeamSplitter.from_t_r(1j / math.sqrt(2), 1 / math.sqrt(2)),
        bs2=BeamSplitter.from_t_r(1j / math.sqrt(2), 1 / math.sqrt(2)),
        q=0.55,
        theta=math.acos(0.8),
    )
    rng = np.random.default_rng(43)
    cfg = SchemeConfig(scheme="many_to_one", apparatus=app_q,
                       monodromy=explicit_fixture.monodromy,
                       psi_b=random_state(rng, 2), rho_a=random_density(rng, 3),
                       runs=80, trials=1, seed=9, engine="both")
    simulate_many_to_one(cfg)


def test_many_to_one_lock_frequencies(app, explicit_fixture):
    trials = 1000
    psi_b = np.array([1.0, 0.0], dtype=complex)
    hits = {1.0: 0, -0.5: 0}
    post = {1.0: [0, 0], -0.5: [0, 0]}
    cfg = SchemeConfig(scheme="many_to_one", apparatus=app,
                       monodromy=explicit_fixture.monodromy, psi_b=psi_b,
                       rho_a=np.eye(3, dtype=complex) / 3,
                       runs=120, trials=1, seed=4321)
    cfg.validate()
    for t in range(trials):
        res = simulate_many_to_one(cfg, trial_index=t)
        assert res.lock.locked
        key = 1.0 if abs(res.lock.locked_value - 1.0) < 1e-9 else -0.5
        hits[key] += 1
        post[key][0] += res.post_lock_pattern.count_d1
        post[key][1] += res.post_lock_pattern.n
    sigma4 = 4 * math.sqrt((1 / 3) * (2 / 3) / trials)
    assert hits[1.0] / trials == pytest.approx(1 / 3, abs=sigma4)
    for key, expected in ((1.0, 0.9), (-0.5, 0.3)):
        c1, n = post[key]
        sigma4_p = 4 * math.sqrt(expected * (1 - expected) / n)
        assert c1 / n == pytest.approx(expected, abs=sigma4_p + 1e-6)


def test_trial_averaged_locked_value_conserved(app, explicit_fixture):
    # one-to-one: the mean locked eigenvalue converges to the initial
    # monodromy expectation; many-to-one analogously to Tr(U rho)
    dec = explicit_fixture.monodromy.decomposition
    psi = state_with_weights(dec, [0.375, 0.625])
    uniforms = np.stack([trial_rng(2718, t).random(80) for t in range(4000)])
    out = spectral_weight_engine(
        dec.eigenvalues, eigenpattern_d1(app, dec.eigenvalues), dec.weights(psi),
        lock_threshold=1 - 1e-6, uniforms=uniforms,
    )
    locked_mean = out.locked_values().mean()
    se = np.std(out.locked_values().real) / math.sqrt(len(out.locked_values()))
    assert abs(locked_mean - (-0.25)) <= 4 * se + 1e-6


# ---------------------------------------------------------------------------
# conjecture probe
# ---------------------------------------------------------------------------

def test_probe_unentangled_matches_kappa(app, explicit_fixture):
    cfg = SchemeConfig(scheme="many_to_one_conjecture_probe", apparatus=app,
                       monodromy=explicit_fixture.monodromy,
                       psi_b=np.array([1.0, 0.0], dtype=complex),
                       rho_a=np.diag([0.0, 1.0, 0.0]).astype(complex),
                       runs=9, trials=20, seed=11)
    report = probe_conjecture(cfg)
    assert report.kappa_reference is not None
    assert report.stabilized_fraction == 1.0
    assert report.max_distance_to_kappa() < 1e-9


def test_probe_eigenstate_product_stabilizes_immediately(app, explicit_fixture):
    cfg = SchemeConfig(scheme="many_to_one_conjecture_probe", apparatus=app,
                       monodromy=explicit_fixture.monodromy,
                       psi_b=np.array([1.0, 0.0], dtype=complex),
                       rho_a=np.diag([0.0, 1.0, 0.0]).astype(complex),
                       runs=6, trials=5, seed=12)
    report = probe_conjecture(cfg)
    for trial in report.trials:
        for z in trial.expectations:
            assert z == pytest.approx(1.0, abs=1e-9)


def test_probe_entangled_emits_report(app, explicit_fixture):
    joint = np.zeros(6, dtype=complex)
    joint[0] = joint[5] = 1 / math.sqrt(2)  # entangled pair across incident and target
    cfg = SchemeConfig(scheme="many_to_one_conjecture_probe", apparatus=app,
                       monodromy=explicit_fixture.monodromy,
                       psi_b=np.array([1.0, 0.0], dtype=complex),
                       initial_joint=joint,
                       runs=8, trials=10, seed=13)
    report = probe_conjecture(cfg)
    assert report.kappa_reference is None
    assert len(report.trials) == 10
    for trial in report.trials:
        assert len(trial.expectations) == 9
        assert all(abs(z) <= 1 + 1e-9 for z in trial.expectations)


def test_probe_respects_dimension_cap(app, explicit_fixture):
    cfg = SchemeConfig(scheme="many_to_one_conjecture_probe", apparatus=app,
                       monodromy=explicit_fixture.monodromy,
                       psi_b=np.array([1.0, 0.0], dtype=complex),
                       rho_a=np.eye(3, dtype=complex) / 3,
                       runs=12, trials=1, seed=14)
    with pytest.raises(errors.SizeOverflow):
        cfg.validate()


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

def test_config_rejects_bad_fields(app, explicit_fixture):
    psi = state_with_weights(explicit_fixture.monodromy.decomposition, [0.5, 0.5])
    good = dict(scheme="one_to_one", apparatus=app, monodromy=explicit_fixture.monodromy,
                initial_state=psi, runs=10, trials=1, seed=0)
    for bad in (
        dict(good, scheme="one_to_many"),
        dict(good, runs=0),
        dict(good, trials=0),
        dict(good, seed=-1),
        dict(good, lock_threshold=0.4),
        dict(good, engine="fast"),
        dict(good, initial_state=psi[:4]),
        dict(good, initial_state=psi * 2),
    ):
        with pytest.raises(errors.ConfigError):
            SchemeConfig(**bad).validate()
