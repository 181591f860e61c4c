"""Experiment orchestration: config ingestion, trial fan-out, outputs.

An experiment is one JSON document (see :func:`config_from_json`) naming the
scheme, the apparatus (inline or preset), the monodromy (inline or fixture),
the initial state, and the sampling parameters.  Trials are distributed over
a thread pool in chunks; every trial owns a counter-based random stream keyed
by ``(seed, trial index)``, and aggregation is order-independent, so outputs
are byte-identical for any thread count.

Every output file embeds the configuration hash and the tool version:
``summary.json`` as top-level keys, ``trials.jsonl`` in a leading meta line,
and CSV files in a comment header.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .apparatus import Apparatus, apparatus_preset
from .convergence import (
    LikelihoodFamily,
    locking_masses,
    moments,
    z_distribution,
    z_family_csv,
)
from .errors import ConfigError
from .fixtures import load_fixture
from .linalg import matrix_from_json, vector_from_json
from .schemes import (
    MonodromySpec,
    SchemeConfig,
    compute_U,
    eigenpattern_d1,
    probe_conjecture,
    simulate_many_to_many,
    simulate_many_to_one,
    simulate_one_to_one,
    spectral_weight_engine,
    state_with_weights,
    trial_rng,
    unresolved_pattern_pairs,
)

TOOL_NAME = "anyonlab"


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

def config_hash(raw: dict) -> str:
    """Canonical SHA-256 over the experiment document."""
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _parse_apparatus(node) -> Apparatus:
    if isinstance(node, str):
        return apparatus_preset(node)
    if isinstance(node, dict):
        return Apparatus.from_json(node)
    raise ConfigError("apparatus must be a preset name or a JSON object")


def _parse_monodromy(node) -> tuple[MonodromySpec, object]:
    """Returns the monodromy and, when it came from a fixture, the fixture."""
    if isinstance(node, str):
        fixture = load_fixture(node)
        return fixture.monodromy, fixture
    if isinstance(node, dict):
        try:
            matrix = matrix_from_json(node["matrix"])
            dim_b, dim_a = int(node["dim_b"]), int(node["dim_a"])
        except KeyError as exc:
            raise ConfigError(f"inline monodromy requires field {exc}") from exc
        return MonodromySpec.from_matrix(matrix, dim_b=dim_b, dim_a=dim_a), None
    raise ConfigError("monodromy must be a fixture name or {matrix, dim_b, dim_a}")


def _parse_state(node, mono: MonodromySpec) -> np.ndarray:
    if isinstance(node, dict) and "amplitudes" in node:
        psi = vector_from_json(node["amplitudes"])
    elif isinstance(node, dict) and "spectral_weights" in node:
        psi = state_with_weights(mono.decomposition, node["spectral_weights"])
    else:
        raise ConfigError("initial_state must carry 'amplitudes' or 'spectral_weights'")
    norm = np.linalg.norm(psi)
    if norm == 0.0:
        raise ConfigError("initial_state must not be the zero vector")
    return psi / norm

def _parse_rho_a(node, mono: MonodromySpec) -> np.ndarray:
    d = mono.dim_a
    if node == "maximally_mixed":
        return np.eye(d, dtype=np.complex128) / d
    if isinstance(node, dict) and "matrix" in node:
        return matrix_from_json(node["matrix"])
    if isinstance(node, dict) and "basis_state" in node:
        j = int(node["basis_state"])
        if not 0 <= j < d:
            raise ConfigError(f"basis_state {j} out of range for dimension {d}")
        rho = np.zeros((d, d), dtype=np.complex128)
        rho[j, j] = 1.0
        return rho
    if isinstance(node, dict) and "amplitudes" in node:
        psi = vector_from_json(node["amplitudes"])
        psi = psi / np.linalg.norm(psi)
        return np.outer(psi, psi.conj())
    raise ConfigError(
        "rho_a must be 'maximally_mixed', {matrix}, {basis_state} or {amplitudes}"
    )


def _parse_psi_b(node, mono: MonodromySpec, fixture) -> np.ndarray:
    if node == "fixture_default":
        if fixture is None or fixture.default_psi_b is None:
            raise ConfigError("psi_b 'fixture_default' needs a fixture with a default")
        psi = np.asarray(fixture.default_psi_b, dtype=np.complex128)
    elif isinstance(node, dict):
        psi = vector_from_json(node)
    else:
        raise ConfigError("psi_b must be 'fixture_default' or {re, im}")
    return psi / np.linalg.norm(psi)


@dataclass
class Experiment:
    """A parsed experiment: scheme config plus bookkeeping for outputs."""

    raw: dict
    scheme_config: SchemeConfig
    hash: str
    fixture_name: str | None
    z_cut: float

    @property
    def scheme(self) -> str:
        return self.scheme_config.scheme


def config_from_json(raw: dict) -> Experiment:
    """Validate an experiment document and build the scheme configuration."""
    if not isinstance(raw, dict):
        raise ConfigError("experiment config must be a JSON object")
    for key in ("scheme", "apparatus", "monodromy", "runs", "trials", "seed"):
        if key not in raw:
            raise ConfigError(f"experiment config is missing required field {key!r}")
    app = _parse_apparatus(raw["apparatus"])
    mono, fixture = _parse_monodromy(raw["monodromy"])
    cfg = SchemeConfig(
        scheme=str(raw["scheme"]),
        apparatus=app,
        monodromy=mono,
        runs=int(raw["runs"]),
        trials=int(raw["trials"]),
        seed=int(raw["seed"]),
        lock_threshold=float(raw.get("lock_threshold", 1.0 - 1e-6)),
        engine=str(raw.get("engine", "spectral")),
    )
    if cfg.scheme in ("many_to_many", "one_to_one"):
        if "initial_state" not in raw:
            raise ConfigError(f"scheme {cfg.scheme!r} requires initial_state")
        cfg.initial_state = _parse_state(raw["initial_state"], mono)
    elif cfg.scheme in ("many_to_one", "many_to_one_conjecture_probe"):
        cfg.psi_b = _parse_psi_b(raw.get("psi_b", "fixture_default"), mono, fixture)
        if "rho_a" in raw:
            cfg.rho_a = _parse_rho_a(raw["rho_a"], mono)
        if "initial_joint" in raw:
            cfg.initial_joint = _parse_state({"amplitudes": raw["initial_joint"]}, mono)
    cfg.validate()
    return Experiment(
        raw=raw,
        scheme_config=cfg,
        hash=config_hash(raw),
        fixture_name=raw["monodromy"] if isinstance(raw["monodromy"], str) else None,
        z_cut=float(raw.get("z_cut", 25.0)),
    )


def load_config(path: str | Path) -> Experiment:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return config_from_json(raw)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def _preset_documents() -> dict[str, dict]:
    return {
        # locking race with initial spectral weights 3/8 and 5/8
        "paper_one_to_one_38": {
            "scheme": "one_to_one",
            "apparatus": "paper_example",
            "monodromy": "explicitR2",
            "initial_state": {"spectral_weights": [0.375, 0.625]},
            "runs": 400,
            "trials": 20000,
            "seed": 20010501,
            "engine": "spectral",
        },
        "paper_one_to_one_half": {
            "scheme": "one_to_one",
            "apparatus": "paper_example",
            "monodromy": "explicitR2",
            "initial_state": {"spectral_weights": [0.5, 0.5]},
            "runs": 400,
            "trials": 20000,
            "seed": 20010502,
            "engine": "spectral",
        },
        # fixed target probed by a stream of |+> particles
        "paper_many_to_one": {
            "scheme": "many_to_one",
            "apparatus": "paper_example",
            "monodromy": "explicitR2",
            "psi_b": "fixture_default",
            "rho_a": "maximally_mixed",
            "runs": 400,
            "trials": 20000,
            "seed": 20010503,
            "engine": "spectral",
        },
        # fresh particles every run, one preset per initial weight row
        "paper_many_to_many_half": {
            "scheme": "many_to_many",
            "apparatus": "paper_example",
            "monodromy": "explicitR2",
            "initial_state": {"spectral_weights": [0.5, 0.5]},
            "runs": 200000,
            "trials": 1,
            "seed": 20010504,
        },
        "paper_many_to_many_plus": {
            "scheme": "many_to_many",
            "apparatus": "paper_example",
            "monodromy": "explicitR2",
            "initial_state": {"spectral_weights": [1.0, 0.0]},
            "runs": 200000,
            "trials": 1,
            "seed": 20010505,
        },
        "paper_many_to_many_minus": {
            "scheme": "many_to_many",
            "apparatus": "paper_example",
            "monodromy": "explicitR2",
            "initial_state": {"spectral_weights": [0.0, 1.0]},
            "runs": 200000,
            "trials": 1,
            "seed": 20010506,
        },
        # topological phase factor -1: every eigenvalue of the monodromy is -1
        "paper_ab_minus1": {
            "scheme": "many_to_many",
            "apparatus": "paper_example",
            "monodromy": "phase",
            "initial_state": {"spectral_weights": [1.0]},
            "runs": 200000,
            "trials": 1,
            "seed": 20010507,
        },
        # full-state probe of the entangled many-to-one conjecture
        "conjecture_probe_unentangled": {
            "scheme": "many_to_one_conjecture_probe",
            "apparatus": "paper_example",
            "monodromy": "explicitR2",
            "psi_b": "fixture_default",
            "rho_a": {"basis_state": 0},
            "runs": 9,
            "trials": 50,
            "seed": 20010508,
        },
        "conjecture_probe_entangled": {
            "scheme": "many_to_one_conjecture_probe",
            "apparatus": "paper_example",
            "monodromy": "explicitR2",
            "psi_b": "fixture_default",
            "initial_joint": {
                "re": [1 / math.sqrt(2), 0, 0, 0, 0, 1 / math.sqrt(2)],
                "im": [0, 0, 0, 0, 0, 0],
            },
            "runs": 9,
            "trials": 50,
            "seed": 20010509,
        },
        # maximally mixed target over three levels, lock odds one third / two thirds
        "paper_many_to_one_pure2": {
            "scheme": "many_to_one",
            "apparatus": "paper_example",
            "monodromy": "explicitR2",
            "psi_b": "fixture_default",
            "rho_a": {"basis_state": 1},
            "runs": 400,
            "trials": 2000,
            "seed": 20010510,
            "engine": "spectral",
        },
        "paper_analyze_family": {
            "scheme": "one_to_one",
            "apparatus": "paper_example",
            "monodromy": "explicitR2",
            "initial_state": {"spectral_weights": [0.5, 0.5]},
            "runs": 200,
            "trials": 1,
            "seed": 20010511,
            "z_cut": 25.0,
        },
    }


def preset_names() -> list[str]:
    return sorted(k for k in _preset_documents() if not k.startswith("_"))


def load_preset(name: str) -> Experiment:
    docs = _preset_documents()
    if name not in docs or name.startswith("_"):
        raise ConfigError(f"unknown preset {name!r}; available: {preset_names()}")
    return config_from_json(docs[name])


def load_config_or_preset(ref: str | Path) -> Experiment:
    """Accept either a preset name or a path to a JSON config."""
    if isinstance(ref, str) and ref in _preset_documents() and not ref.startswith("_"):
        return load_preset(ref)
    return load_config(ref)


# ---------------------------------------------------------------------------
# Trial execution
# ---------------------------------------------------------------------------

@dataclass
class TrialTable:
    """Per-trial results of a locking scheme, as flat arrays."""

    eigenvalues: np.ndarray      # (K,)
    pattern_d1: np.ndarray       # (K,)
    count_d1: np.ndarray         # (T,)
    runs: int
    locked_at: np.ndarray        # (T,) -1 when never locked
    locked_index: np.ndarray     # (T,) argmax weight eigenvalue index
    count_d1_post: np.ndarray
    n_post: np.ndarray
    final_weights: np.ndarray    # (T, K)


def _uniform_block(seed: int, trial_indices: np.ndarray, runs: int) -> np.ndarray:
    rows = [trial_rng(seed, int(t)).random(runs) for t in trial_indices]
    return np.stack(rows, axis=0)


def _run_chunk_spectral(cfg: SchemeConfig, eigs, p1, w0, trial_indices) -> dict:
    uniforms = _uniform_block(cfg.seed, trial_indices, cfg.runs)
    out = spectral_weight_engine(eigs, p1, w0, cfg.lock_threshold, uniforms=uniforms)
    return {
        "count_d1": out.count_d1,
        "locked_at": out.locked_at,
        "count_d1_post": out.count_d1_post,
        "n_post": out.n_post,
        "final_weights": out.final_weights,
    }


def _run_chunk_oracle(cfg: SchemeConfig, trial_indices) -> dict:
    sim = simulate_one_to_one if cfg.scheme == "one_to_one" else simulate_many_to_one
    rows = {k: [] for k in ("count_d1", "locked_at", "count_d1_post", "n_post", "final_weights")}
    for t in trial_indices:
        res = sim(cfg, trial_index=int(t))
        rows["count_d1"].append(res.pattern.count_d1)
        rows["locked_at"].append(res.lock.runs_to_lock if res.lock.locked else -1)
        rows["count_d1_post"].append(res.post_lock_pattern.count_d1)
        rows["n_post"].append(res.post_lock_pattern.n)
        rows["final_weights"].append([w for _, w in res.lock.spectral_weights])
    return {k: np.asarray(v) for k, v in rows.items()}


def run_locking_trials(cfg: SchemeConfig, threads: int = 1) -> TrialTable:
    """Execute all trials of a one-to-one or many-to-one experiment."""
    cfg.validate()
    if cfg.scheme == "one_to_one":
        dec = cfg.monodromy.decomposition
        eigs = dec.eigenvalues
        w0 = dec.weights(cfg.initial_state)
    elif cfg.scheme == "many_to_one":
        _, u_dec = compute_U(cfg.monodromy, np.outer(cfg.psi_b, cfg.psi_b.conj()))
        eigs = u_dec.eigenvalues
        w0 = u_dec.density_weights(cfg.rho_a)
    else:
        raise ConfigError(f"run_locking_trials does not handle scheme {cfg.scheme!r}")
    p1 = eigenpattern_d1(cfg.apparatus, eigs)

    all_trials = np.arange(cfg.trials)
    n_chunks = max(1, min(threads * 4, cfg.trials))
    chunks = np.array_split(all_trials, n_chunks)
    if cfg.engine == "spectral":
        worker = lambda idx: _run_chunk_spectral(cfg, eigs, p1, w0, idx)
    else:
        worker = lambda idx: _run_chunk_oracle(cfg, idx)

    if threads <= 1:
        results = [worker(c) for c in chunks if len(c)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(worker, [c for c in chunks if len(c)]))

    def cat(key):
        return np.concatenate([r[key] for r in results], axis=0)

    final_weights = cat("final_weights")
    return TrialTable(
        eigenvalues=eigs,
        pattern_d1=p1,
        count_d1=cat("count_d1"),
        runs=cfg.runs,
        locked_at=cat("locked_at"),
        locked_index=np.argmax(final_weights, axis=1),
        count_d1_post=cat("count_d1_post"),
        n_post=cat("n_post"),
        final_weights=final_weights,
    )


def run_many_to_many_trials(cfg: SchemeConfig, threads: int = 1) -> TrialTable:
    cfg.validate()
    dec = cfg.monodromy.decomposition
    eigs = dec.eigenvalues
    counts = np.zeros(cfg.trials, dtype=np.int64)

    def worker(idx):
        return idx, np.array(
            [simulate_many_to_many(cfg, trial_index=int(t)).count_d1 for t in idx]
        )

    chunks = [c for c in np.array_split(np.arange(cfg.trials), max(1, threads * 4)) if len(c)]
    if threads <= 1:
        results = [worker(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(worker, chunks))
    for idx, vals in results:
        counts[idx] = vals
    t = cfg.trials
    return TrialTable(
        eigenvalues=eigs,
        pattern_d1=eigenpattern_d1(cfg.apparatus, eigs),
        count_d1=counts,
        runs=cfg.runs,
        locked_at=np.full(t, -1, dtype=np.int64),
        locked_index=np.zeros(t, dtype=np.int64),
        count_d1_post=np.zeros(t, dtype=np.int64),
        n_post=np.zeros(t, dtype=np.int64),
        final_weights=np.zeros((t, len(eigs))),
    )


# ---------------------------------------------------------------------------
# Aggregation and output files
# ---------------------------------------------------------------------------

def _c2(z: complex) -> list[float]:
    return [float(np.real(z)), float(np.imag(z))]


def summarize(exp: Experiment, table: TrialTable) -> dict:
    """Aggregate a trial table into the summary document."""
    locked = table.locked_at >= 0
    total_runs = int(table.runs) * len(table.count_d1)
    count_d1 = int(table.count_d1.sum())
    summary = {
        "tool": {"name": TOOL_NAME, "version": __version__},
        "config_hash": exp.hash,
        "scheme": exp.scheme,
        "runs": int(table.runs),
        "trials": len(table.count_d1),
        "seed": exp.scheme_config.seed,
        "eigenvalues": [_c2(v) for v in table.eigenvalues],
        "eigenpatterns_d1": [float(p) for p in table.pattern_d1],
        "aggregate_pattern": {
            "count_d1": count_d1,
            "count_d2": total_runs - count_d1,
            "i_d1": count_d1 / total_runs,
            "i_d2": (total_runs - count_d1) / total_runs,
        },
    }
    frequencies = []
    for k, lam in enumerate(table.eigenvalues):
        in_group = locked & (table.locked_index == k)
        n_group = int(np.count_nonzero(in_group))
        entry = {
            "eigenvalue": _c2(lam),
            "count": n_group,
            "frequency": n_group / len(table.count_d1),
        }
        n_post = int(table.n_post[in_group].sum())
        if n_post:
            c1 = int(table.count_d1_post[in_group].sum())
            entry["post_lock_pattern"] = {
                "n": n_post,
                "count_d1": c1,
                "i_d1": c1 / n_post,
                "i_d2": (n_post - c1) / n_post,
            }
        frequencies.append(entry)
    n_locked = int(np.count_nonzero(locked))
    avg = None
    if n_locked:
        vals = table.eigenvalues[table.locked_index[locked]]
        avg = _c2(vals.sum() / n_locked)
    summary["lock"] = {
        "count_locked": n_locked,
        "fraction_locked": n_locked / len(table.count_d1),
        "frequencies": frequencies,
        "average_locked_value": avg,
        "mean_runs_to_lock": (
            float(table.locked_at[locked].mean()) if n_locked else None
        ),
        "unresolved_pairs": [
            [_c2(a), _c2(b)]
            for a, b in unresolved_pattern_pairs(table.eigenvalues, table.pattern_d1)
        ],
    }
    return summary


def _dump_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def write_outputs(
    exp: Experiment, table: TrialTable, out_dir: Path, formats: list[str]
) -> dict:
    """Write summary/trials/pattern files; returns the summary document."""
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = summarize(exp, table)
    if "json" in formats:
        _dump_json(out_dir / "summary.json", summary)
    if "jsonl" in formats:
        meta = {"meta": {"config_hash": exp.hash, "tool_version": __version__}}
        lines = [json.dumps(meta, sort_keys=True)]
        locked = table.locked_at >= 0
        for t in range(len(table.count_d1)):
            rec = {
                "trial": t,
                "locked_value": (
                    _c2(table.eigenvalues[table.locked_index[t]]) if locked[t] else None
                ),
                "runs_to_lock": int(table.locked_at[t]) if locked[t] else None,
                "count_d1": int(table.count_d1[t]),
                "count_d2": int(table.runs - table.count_d1[t]),
                "n": int(table.runs),
                "count_d1_post_lock": int(table.count_d1_post[t]),
                "n_post_lock": int(table.n_post[t]),
            }
            lines.append(json.dumps(rec, sort_keys=True))
        (out_dir / "trials.jsonl").write_text("\n".join(lines) + "\n")
    if "csv" in formats:
        rows = [f"# config_hash={exp.hash} tool_version={__version__}",
                "trial,n,count_d1,count_d2,i_d1,i_d2"]
        for t in range(len(table.count_d1)):
            c1 = int(table.count_d1[t])
            rows.append(
                f"{t},{table.runs},{c1},{table.runs - c1},"
                f"{c1 / table.runs!r},{(table.runs - c1) / table.runs!r}"
            )
        (out_dir / "pattern.csv").write_text("\n".join(rows) + "\n")
    return summary


def run_experiment(
    exp: Experiment, out_dir: Path, threads: int = 1,
    formats: list[str] | None = None,
) -> dict:
    """Execute a parsed experiment end to end and write its outputs."""
    formats = formats or ["json", "jsonl"]
    cfg = exp.scheme_config
    if cfg.scheme in ("one_to_one", "many_to_one"):
        table = run_locking_trials(cfg, threads=threads)
    elif cfg.scheme == "many_to_many":
        table = run_many_to_many_trials(cfg, threads=threads)
    else:
        report = probe_conjecture(cfg)
        out_dir.mkdir(parents=True, exist_ok=True)
        doc = {
            "tool": {"name": TOOL_NAME, "version": __version__},
            "config_hash": exp.hash,
            "scheme": cfg.scheme,
            "stabilized_fraction": report.stabilized_fraction,
            "stabilization_tol": report.stabilization_tol,
            "kappa_reference": (
                [_c2(v) for v in report.kappa_reference]
                if report.kappa_reference is not None
                else None
            ),
            "max_distance_to_kappa": report.max_distance_to_kappa(),
            "final_expectations": [_c2(t.final_expectation) for t in report.trials],
        }
        _dump_json(out_dir / "summary.json", doc)
        return doc
    return write_outputs(exp, table, out_dir, formats)


def analyze_experiment(exp: Experiment, out_dir: Path) -> dict:
    """Closed-form locking analytics for the family implied by the config."""
    cfg = exp.scheme_config
    if cfg.scheme in ("one_to_one", "many_to_many"):
        fam = LikelihoodFamily.from_state(
            cfg.apparatus, cfg.monodromy.decomposition, cfg.initial_state
        )
    elif cfg.scheme == "many_to_one":
        _, u_dec = compute_U(cfg.monodromy, np.outer(cfg.psi_b, cfg.psi_b.conj()))
        fam = LikelihoodFamily.from_density(cfg.apparatus, u_dec, cfg.rho_a)
    else:
        raise ConfigError(f"analyze does not support scheme {cfg.scheme!r}")
    out_dir.mkdir(parents=True, exist_ok=True)
    n = cfg.runs
    doc = {
        "tool": {"name": TOOL_NAME, "version": __version__},
        "config_hash": exp.hash,
        "n": n,
        "z_cut": exp.z_cut,
        "branches": [list(b) for b in fam.branches],
        "weights": list(fam.weights),
    }
    if fam.n_branches == 2:
        mom = moments(fam, n)
        doc["moments"] = {
            "mu_a": mom.mu_a, "var_a": mom.var_a,
            "mu_b": mom.mu_b, "var_b": mom.var_b,
            "m_a": mom.m_a, "s_a2": mom.s_a2,
            "m_b": mom.m_b, "s_b2": mom.s_b2,
        }
        doc["unresolvable"] = mom.unresolvable
        mid, upper, lower = locking_masses(fam, n, exp.z_cut)
        doc["locking_masses"] = {"mid": mid, "upper": upper, "lower": lower}
        result = z_distribution(fam, n)
        csv_text = z_family_csv(result)
        header = f"# config_hash={exp.hash} tool_version={__version__}\n"
        (out_dir / "z_dist.csv").write_text(header + csv_text)
    else:
        doc["unresolvable"] = bool(fam.indistinguishable_pairs())
        doc["note"] = "moments and z distribution require exactly two branches"
    _dump_json(out_dir / "moments.json", doc)
    return doc
