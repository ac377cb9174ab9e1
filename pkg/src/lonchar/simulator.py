"""Monte-Carlo generation of protocol runs.

Each run is either an RBS run (Alice counts photons) or a characterization
run (Alice heterodynes). Runs are generated in fixed-size chunks; chunk ``c``
draws from its own generator seeded by ``(seed, c)``, so any chunk can be
regenerated alone and chunks can be produced in any order or in parallel.
"""
from __future__ import annotations

import json
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .fock_oracle import MAX_MODES, MAX_PHOTONS, UnsupportedScaleError, lossy_conditional_distribution
from .lon_core import LonError, check_subunitary, haar_random_unitary, load_matrix
from .stats_analytic import SqueezeParam

__all__ = [
    "ConfigError",
    "CutoffExceededError",
    "ExperimentConfig",
    "RunRecord",
    "RbsSampler",
    "chunk_rng",
    "build_networks",
    "sample_characterization_run",
    "sample_cc_characterization_run",
    "sample_rbs_run",
    "sample_marginal_output_counts",
    "draw_characterization",
    "characterization_arrays",
    "generate_runs",
    "write_stream",
    "read_stream",
    "records_to_arrays",
    "default_workers",
]

KINDS = ("rbs", "characterization")
INPUT_KINDS = ("two-mode-squeezed", "classical-classical")


class ConfigError(LonError):
    pass


class CutoffExceededError(LonError):
    pass


@dataclass
class ExperimentConfig:
    modes: int
    chi_sq: float | str = "rbs"
    runs: int = 0
    run_mix: float = 1.0
    seed: int = 0
    photon_cutoff: int = MAX_PHOTONS
    input_kind: str = "two-mode-squeezed"
    on_cutoff: str = "resample"
    shuffle: bool = True
    chunk_size: int = 4096
    network: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.modes, int) or self.modes < 1:
            raise ConfigError(f"modes must be a positive integer, got {self.modes!r}")
        if not isinstance(self.runs, int) or self.runs < 0:
            raise ConfigError(f"runs must be a nonnegative integer, got {self.runs!r}")
        if not 0.0 <= float(self.run_mix) <= 1.0:
            raise ConfigError("run_mix must lie in [0, 1]")
        if self.input_kind not in INPUT_KINDS:
            raise ConfigError(f"input_kind must be one of {INPUT_KINDS}")
        if self.on_cutoff not in ("resample", "error"):
            raise ConfigError("on_cutoff must be 'resample' or 'error'")
        if self.chunk_size < 1:
            raise ConfigError("chunk_size must be positive")
        try:
            self.squeeze
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def squeeze(self) -> SqueezeParam:
        if isinstance(self.chi_sq, str):
            return SqueezeParam.from_rule(self.modes, self.chi_sq)
        return SqueezeParam(float(self.chi_sq))

    def resolved(self) -> dict:
        out = asdict(self)
        out["chi_sq"] = self.squeeze.chi_sq
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "modes" not in obj:
            raise ConfigError("config needs 'modes'")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(obj)


@dataclass
class RunRecord:
    kind: str
    bob_counts: np.ndarray
    alice_counts: np.ndarray | None = None
    alice_amplitudes: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown run kind {self.kind!r}")
        if (self.alice_counts is None) == (self.alice_amplitudes is None):
            raise ValueError("exactly one of alice_counts / alice_amplitudes must be set")
        if (self.kind == "rbs") != (self.alice_counts is not None):
            raise ValueError("rbs runs carry counts; characterization runs carry amplitudes")

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.alice_counts is not None:
            out["alice_counts"] = [int(x) for x in self.alice_counts]
        else:
            out["alice_re"] = [float(x) for x in self.alice_amplitudes.real]
            out["alice_im"] = [float(x) for x in self.alice_amplitudes.imag]
        out["bob_counts"] = [int(x) for x in self.bob_counts]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "RunRecord":
        bob = np.asarray(obj["bob_counts"], dtype=np.int64)
        if "alice_counts" in obj:
            return cls(obj["kind"], bob, alice_counts=np.asarray(obj["alice_counts"], dtype=np.int64))
        amp = np.asarray(obj["alice_re"], dtype=float) + 1j * np.asarray(obj["alice_im"], dtype=float)
        return cls(obj["kind"], bob, alice_amplitudes=amp)


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(chunk),)))


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("LONCHAR_THREADS", "1")))
    except ValueError:
        return 1


def build_networks(cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    """Ideal unitary ``U`` and Bob's lossy ``L`` described by ``cfg.network``.

    Recognized keys: ``unitary_seed``; ``ideal_path`` (overrides the seed);
    ``transmissivity_sq`` (uniform loss, ``L = t U``); ``singular_values`` with
    ``loss_seed`` (``L = W diag(t) W^H U``); ``matrix_path`` (explicit ``L``).
    """
    net = dict(cfg.network)
    allowed = {"unitary_seed", "ideal_path", "transmissivity_sq", "singular_values", "loss_seed", "matrix_path"}
    extra = set(net) - allowed
    if extra:
        raise ConfigError(f"unknown network fields: {sorted(extra)}")
    m = cfg.modes
    try:
        if "ideal_path" in net:
            U = load_matrix(net["ideal_path"])
        else:
            U = haar_random_unitary(m, int(net.get("unitary_seed", 0)))
        if "matrix_path" in net:
            L = load_matrix(net["matrix_path"])
        elif "singular_values" in net:
            t = np.asarray(net["singular_values"], dtype=float)
            if t.shape != (m,) or np.any(t < 0) or np.any(t > 1):
                raise ConfigError("singular_values must be M numbers in [0, 1]")
            w = haar_random_unitary(m, int(net.get("loss_seed", 1)))
            L = (w * t) @ w.conj().T @ U
        else:
            t_sq = float(net.get("transmissivity_sq", 1.0))
            if not 0.0 <= t_sq <= 1.0:
                raise ConfigError("transmissivity_sq must lie in [0, 1]")
            L = math.sqrt(t_sq) * U
    except OSError as exc:
        raise ConfigError(str(exc)) from exc
    if U.shape != (m, m) or L.shape != (m, m):
        raise ConfigError("network matrices do not match 'modes'")
    return U, check_subunitary(L)


def _complex_normal(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    z = rng.standard_normal(shape + (2,))
    return math.sqrt(variance / 2.0) * (z[..., 0] + 1j * z[..., 1])


def draw_characterization(rng: np.random.Generator, n: int, L, chi_sq: float, cc: bool = False):
    """Heterodyne outcomes and Bob's counts for ``n`` characterization runs.

    Alice's amplitudes follow the thermal Q-function (per-mode variance
    ``1/(1-chi^2)``); Bob's counts are Poisson with means
    ``chi^2 |(conj(alpha) @ L)_i|^2``. With ``cc`` the amplitudes feeding
    Bob are phase-randomized mode by mode, as for the classically
    correlated input; the recorded amplitudes are not.
    """
    L = np.asarray(L, dtype=complex)
    m = L.shape[0]
    alpha = _complex_normal(rng, (n, m), 1.0 / (1.0 - chi_sq))
    drive = alpha
    if cc:
        drive = alpha * np.exp(2j * np.pi * rng.random((n, m)))
    means = chi_sq * np.abs(drive.conj() @ L) ** 2
    bob = rng.poisson(means)
    return alpha, bob


def sample_characterization_run(cfg: ExperimentConfig, L, rng: np.random.Generator) -> RunRecord:
    alpha, bob = draw_characterization(rng, 1, L, cfg.squeeze.chi_sq)
    return RunRecord("characterization", bob[0], alice_amplitudes=alpha[0])


def sample_cc_characterization_run(cfg: ExperimentConfig, L, rng: np.random.Generator) -> RunRecord:
    alpha, bob = draw_characterization(rng, 1, L, cfg.squeeze.chi_sq, cc=True)
    return RunRecord("characterization", bob[0], alice_amplitudes=alpha[0])


def sample_marginal_output_counts(cfg: ExperimentConfig, L, rng: np.random.Generator, n: int | None = None):
    """Bob's unconditional counts, drawn through the Gaussian P-function of the output.

    Input amplitudes are i.i.d. complex Gaussian with mean photon number
    ``nbar`` per mode and are propagated through ``L`` before Poisson
    detection. Returns one count vector, or an ``(n, M)`` array if ``n`` is given.
    """
    L = np.asarray(L, dtype=complex)
    nbar = cfg.squeeze.mean_photon
    k = 1 if n is None else n
    beta = _complex_normal(rng, (k, L.shape[0]), nbar)
    counts = rng.poisson(np.abs(beta @ L) ** 2)
    return counts[0] if n is None else counts


def _geometric_counts(rng: np.random.Generator, shape, chi_sq: float) -> np.ndarray:
    if chi_sq == 0.0:
        return np.zeros(shape, dtype=np.int64)
    u = 1.0 - rng.random(shape)  # (0, 1]
    return np.floor(np.log(u) / math.log(chi_sq)).astype(np.int64)


class RbsSampler:
    """Exact sampler of Bob's counts given Alice's record, with cached oracle tables."""

    def __init__(self, L, photon_cutoff: int = MAX_PHOTONS):
        self.L = check_subunitary(L)
        m = self.L.shape[0]
        if m > MAX_MODES:
            raise UnsupportedScaleError(f"RBS runs need M <= {MAX_MODES}, got {m}")
        if photon_cutoff > MAX_PHOTONS:
            raise UnsupportedScaleError(f"photon cutoff {photon_cutoff} exceeds {MAX_PHOTONS}")
        self.photon_cutoff = photon_cutoff
        self._tables: dict = {}
        self._lock = threading.Lock()
        self.overflows = 0

    def table(self, n_a: tuple):
        tab = self._tables.get(n_a)
        if tab is None:
            dist = lossy_conditional_distribution(self.L, n_a)
            cdf = np.cumsum(dist.probs)
            cdf /= cdf[-1]
            tab = (dist.states, cdf)
            self._tables[n_a] = tab
        return tab

    def sample_alice(self, rng: np.random.Generator, chi_sq: float, on_cutoff: str = "resample") -> np.ndarray:
        return self.sample_alice_batch(rng, 1, chi_sq, on_cutoff)[0]

    def sample_alice_batch(self, rng: np.random.Generator, n: int, chi_sq: float, on_cutoff: str = "resample") -> np.ndarray:
        """``n`` records of i.i.d. geometric counts with ``|n_A| <= photon_cutoff``.

        Over-cutoff records are redrawn (and counted in ``overflows``) or,
        with ``on_cutoff="error"``, raise :class:`CutoffExceededError`.
        """
        m = self.L.shape[0]
        out = _geometric_counts(rng, (n, m), chi_sq)
        bad = np.flatnonzero(out.sum(axis=1) > self.photon_cutoff)
        while bad.size:
            with self._lock:
                self.overflows += int(bad.size)
            if on_cutoff == "error":
                raise CutoffExceededError(f"sampled {int(out[bad[0]].sum())} photons > cutoff {self.photon_cutoff}")
            out[bad] = _geometric_counts(rng, (bad.size, m), chi_sq)
            bad = bad[out[bad].sum(axis=1) > self.photon_cutoff]
        return out

    def sample_bob(self, rng: np.random.Generator, n_a) -> np.ndarray:
        return self.sample_bob_batch(rng, np.asarray(n_a)[None, :])[0]

    def sample_bob_batch(self, rng: np.random.Generator, n_a: np.ndarray) -> np.ndarray:
        """Bob's counts for each row of ``n_a``, by inverse-CDF on the exact tables."""
        u = rng.random(n_a.shape[0])
        out = np.zeros_like(n_a)
        keys = [tuple(int(x) for x in row) for row in n_a]
        groups: dict = {}
        for k, key in enumerate(keys):
            groups.setdefault(key, []).append(k)
        for key, rows in groups.items():
            states, cdf = self.table(key)
            idx = np.minimum(np.searchsorted(cdf, u[rows], side="right"), len(states) - 1)
            out[rows] = np.asarray(states, dtype=np.int64)[idx]
        return out


def sample_rbs_run(cfg: ExperimentConfig, L, rng: np.random.Generator, sampler: RbsSampler | None = None) -> RunRecord:
    if sampler is None:
        sampler = RbsSampler(L, cfg.photon_cutoff)
    n_a = sampler.sample_alice(rng, cfg.squeeze.chi_sq, cfg.on_cutoff)
    n_b = sampler.sample_bob(rng, n_a)
    return RunRecord("rbs", n_b, alice_counts=n_a)


def _chunk_kinds(cfg: ExperimentConfig, rng: np.random.Generator, start: int, size: int) -> np.ndarray:
    """Boolean mask, True for characterization runs."""
    mix = float(cfg.run_mix)
    if cfg.shuffle:
        return rng.random(size) < mix
    k = np.arange(start, start + size)
    return np.floor((k + 1) * mix) > np.floor(k * mix)


def _generate_chunk(cfg: ExperimentConfig, L, chunk: int, sampler: RbsSampler | None) -> list[RunRecord]:
    start = chunk * cfg.chunk_size
    size = min(cfg.chunk_size, cfg.runs - start)
    rng = chunk_rng(cfg.seed, chunk)
    is_char = _chunk_kinds(cfg, rng, start, size)
    chi_sq = cfg.squeeze.chi_sq
    n_char = int(is_char.sum())
    alpha, bob = draw_characterization(rng, n_char, L, chi_sq, cc=cfg.input_kind == "classical-classical")
    n_rbs = size - n_char
    n_a = n_b = None
    if n_rbs:
        n_a = sampler.sample_alice_batch(rng, n_rbs, chi_sq, cfg.on_cutoff)
        n_b = sampler.sample_bob_batch(rng, n_a)
    out: list[RunRecord] = []
    c = r = 0
    for flag in is_char:
        if flag:
            out.append(RunRecord("characterization", bob[c], alice_amplitudes=alpha[c]))
            c += 1
        else:
            out.append(RunRecord("rbs", n_b[r], alice_counts=n_a[r]))
            r += 1
    return out


def generate_runs(cfg: ExperimentConfig, L, workers: int | None = None, sampler: RbsSampler | None = None) -> Iterator[RunRecord]:
    """Yield ``cfg.runs`` records in run-index order."""
    L = check_subunitary(L)
    if L.shape[0] != cfg.modes:
        raise ConfigError("network size does not match config modes")
    if cfg.run_mix < 1.0 and cfg.runs > 0 and sampler is None:
        sampler = RbsSampler(L, cfg.photon_cutoff)
    n_chunks = -(-cfg.runs // cfg.chunk_size)
    workers = default_workers() if workers is None else workers
    if workers <= 1 or n_chunks <= 1:
        for c in range(n_chunks):
            yield from _generate_chunk(cfg, L, c, sampler)
        return
    # RBS table cache is shared; fill order does not affect draws
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for recs in pool.map(lambda c: _generate_chunk(cfg, L, c, sampler), range(n_chunks)):
            yield from recs


def characterization_arrays(cfg: ExperimentConfig, L, runs: int | None = None, cc: bool | None = None):
    """All-characterization stream as arrays ``(alpha, bob)``, chunked like :func:`generate_runs`."""
    runs = cfg.runs if runs is None else runs
    cc = (cfg.input_kind == "classical-classical") if cc is None else cc
    chi_sq = cfg.squeeze.chi_sq
    alphas, bobs = [], []
    for c in range(-(-runs // cfg.chunk_size)):
        size = min(cfg.chunk_size, runs - c * cfg.chunk_size)
        a, b = draw_characterization(chunk_rng(cfg.seed, c), size, L, chi_sq, cc=cc)
        alphas.append(a)
        bobs.append(b)
    if not alphas:
        m = np.asarray(L).shape[0]
        return np.zeros((0, m), dtype=complex), np.zeros((0, m), dtype=np.int64)
    return np.concatenate(alphas), np.concatenate(bobs)


def write_stream(path, records: Iterable[RunRecord], header: dict | None = None) -> dict:
    """Write NDJSON; the optional header line is ``{"kind": "header", ...}``.

    Returns a summary with run counts by kind and per-mode Bob count means.
    """
    counts = {k: 0 for k in KINDS}
    bob_sum = None
    with open(path, "w") as fh:
        if header is not None:
            fh.write(json.dumps({"kind": "header", **header}, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec.to_json()) + "\n")
            counts[rec.kind] += 1
            bob_sum = rec.bob_counts.astype(float) if bob_sum is None else bob_sum + rec.bob_counts
    total = sum(counts.values())
    means = [] if bob_sum is None else [float(x) / total for x in bob_sum]
    return {"runs": total, "by_kind": counts, "bob_count_means": means}


def read_stream(path) -> Iterator[RunRecord]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LonError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            if obj.get("kind") == "header":
                continue
            yield RunRecord.from_json(obj)


def records_to_arrays(records: Iterable[RunRecord]):
    """Split records into characterization arrays and a Bob-count array for all runs.

    Returns ``(alpha, bob_char, bob_all, n_rbs)``.
    """
    alphas, bob_char, bob_all = [], [], []
    n_rbs = 0
    for rec in records:
        bob_all.append(rec.bob_counts)
        if rec.kind == "characterization":
            alphas.append(rec.alice_amplitudes)
            bob_char.append(rec.bob_counts)
        else:
            n_rbs += 1
    m = len(bob_all[0]) if bob_all else 0
    alpha = np.array(alphas, dtype=complex).reshape(-1, m)
    return (
        alpha,
        np.array(bob_char, dtype=np.int64).reshape(-1, m),
        np.array(bob_all, dtype=np.int64).reshape(-1, m),
        n_rbs,
    )
