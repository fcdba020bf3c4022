"""Detector tomography with coherent probes.

A phase-insensitive detector is probed with coherent states of mean photon
number ``mu_j``; outcome n occurs with probability
``p[j, n] = sum_k poisson(k; mu_j) r[k, n]``. The diagonal POVM ``r`` is
recovered from outcome counts by an expectation-maximization fixed point
that keeps every ``r[k, :]`` a probability vector.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import poisson, truncnorm

from .detectors import DetectorModel, Povm, build_povm
from .fock import FockCutoff, poisson_matrix

PROB_FLOOR = 1e-300
UNIDENTIFIED_WEIGHT = 1e-6


class InsufficientCutoffError(ValueError):
    pass


class LabelMismatchError(ValueError):
    pass


class LikelihoodSingularityWarning(RuntimeWarning):
    """An observed outcome had zero predicted probability and was clamped."""


@dataclass(frozen=True, eq=False)
class ProbeGrid:
    """Coherent-probe settings.

    Attributes:
        amplitudes_sq: mean photon numbers |alpha_j|^2, strictly increasing.
        shots_per_probe: detector trials M recorded per probe.
        amplitude_error_sigma: relative standard deviation of the probe
            intensity calibration, drawn once per probe setting.
    """

    amplitudes_sq: np.ndarray
    shots_per_probe: int
    amplitude_error_sigma: float = 0.05

    def __post_init__(self):
        mus = np.array(self.amplitudes_sq, dtype=float)
        if mus.ndim != 1 or mus.size == 0:
            raise ValueError("amplitudes_sq must be a non-empty vector")
        if np.any(mus < 0) or np.any(np.diff(mus) <= 0):
            raise ValueError("amplitudes_sq must be non-negative and strictly increasing")
        if int(self.shots_per_probe) != self.shots_per_probe or self.shots_per_probe < 1:
            raise ValueError(f"shots_per_probe must be a positive integer, got {self.shots_per_probe}")
        if not self.amplitude_error_sigma >= 0:
            raise ValueError(f"amplitude_error_sigma must be >= 0, got {self.amplitude_error_sigma}")
        mus.setflags(write=False)
        object.__setattr__(self, "amplitudes_sq", mus)
        object.__setattr__(self, "shots_per_probe", int(self.shots_per_probe))

    @classmethod
    def uniform(cls, mu_max: float = 10.0, step: float = 0.1, shots_per_probe: int = 100_000,
                amplitude_error_sigma: float = 0.05) -> "ProbeGrid":
        n = int(round(mu_max / step))
        mus = np.round(np.arange(n + 1) * step, 12)
        return cls(mus, shots_per_probe, amplitude_error_sigma)

    @property
    def mu_max(self) -> float:
        return float(self.amplitudes_sq[-1])


@dataclass(frozen=True, eq=False)
class TomographyDataset:
    grid: ProbeGrid
    counts: np.ndarray
    outcome_labels: tuple[str, ...]
    seed: int | None = None
    detector: DetectorModel | None = None

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != self.grid.amplitudes_sq.size:
            raise ValueError(f"counts must have one row per probe, got shape {c.shape}")
        if c.shape[1] != len(self.outcome_labels):
            raise LabelMismatchError(
                f"{c.shape[1]} count columns but {len(self.outcome_labels)} outcome labels {tuple(self.outcome_labels)}"
            )
        if np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0)):
            raise ValueError("counts must be non-negative integers")
        c = c.astype(np.int64)
        if np.any(c.sum(axis=1) != self.grid.shots_per_probe):
            raise ValueError("every probe row must sum to shots_per_probe")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "outcome_labels", tuple(str(x) for x in self.outcome_labels))

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.grid.shots_per_probe

    def sidecar(self) -> dict:
        return {
            "seed": self.seed,
            "sigma": self.grid.amplitude_error_sigma,
            "outcome_labels": list(self.outcome_labels),
            "detector": self.detector.to_dict() if self.detector is not None else None,
        }

    def save(self, csv_path) -> tuple[Path, Path]:
        """Write ``<name>.csv`` and its ``<name>.json`` sidecar."""
        csv_path = Path(csv_path)
        with csv_path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mu", "shots"] + [f"count_outcome_{n}" for n in range(self.counts.shape[1])])
            for mu, row in zip(self.grid.amplitudes_sq, self.counts):
                w.writerow([repr(float(mu)), self.grid.shots_per_probe] + [int(x) for x in row])
        side = csv_path.with_suffix(".json")
        side.write_text(json.dumps(self.sidecar(), indent=1) + "\n")
        return csv_path, side

    @classmethod
    def load(cls, csv_path) -> "TomographyDataset":
        csv_path = Path(csv_path)
        meta = json.loads(csv_path.with_suffix(".json").read_text())
        with csv_path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        n_cols = len(header) - 2
        if header[:2] != ["mu", "shots"] or header[2:] != [f"count_outcome_{n}" for n in range(n_cols)]:
            raise ValueError(f"unexpected dataset header {header}")
        labels = tuple(meta["outcome_labels"])
        if len(labels) != n_cols:
            raise LabelMismatchError(f"sidecar lists {len(labels)} labels {labels} but the CSV has {n_cols} count columns")
        mus = np.array([float(r[0]) for r in body])
        shots = {int(r[1]) for r in body}
        if len(shots) != 1:
            raise ValueError("all probes must share one shot count")
        counts = np.array([[int(x) for x in r[2:]] for r in body], dtype=np.int64)
        grid = ProbeGrid(mus, shots.pop(), float(meta.get("sigma", 0.0)))
        det = meta.get("detector")
        return cls(grid, counts, labels, meta.get("seed"), DetectorModel.from_dict(det) if det else None)


def _check_cutoff(mus: np.ndarray, cutoff: FockCutoff) -> None:
    tail = poisson.sf(cutoff.k_max, float(np.max(mus)))
    if tail > max(cutoff.tail_epsilon, 1e-10):
        raise InsufficientCutoffError(
            f"k_max={cutoff.k_max} leaves Poisson tail {tail:.2e} at mu={np.max(mus):g}"
        )


def predicted_probabilities(povm: Povm, grid: ProbeGrid | np.ndarray) -> np.ndarray:
    """Outcome probabilities ``p[j, n]`` for each probe j (rows sum to 1 up to the Poisson tail)."""
    mus = grid.amplitudes_sq if isinstance(grid, ProbeGrid) else np.asarray(grid, dtype=float)
    _check_cutoff(mus, povm.cutoff)
    return poisson_matrix(mus, povm.cutoff) @ povm.matrix()


def simulate_dataset(true_model: DetectorModel, grid: ProbeGrid, seed: int) -> TomographyDataset:
    """Synthetic coherent-probe counts for a known detector.

    Each probe setting gets one relative intensity error drawn from a normal
    distribution of width ``sigma`` truncated at 3 sigma; its M shots are
    then sampled from the multinomial outcome distribution.
    """
    rng = np.random.default_rng(seed)
    sigma = grid.amplitude_error_sigma
    mus = grid.amplitudes_sq
    if sigma > 0:
        eps = truncnorm.rvs(-3.0, 3.0, loc=0.0, scale=sigma, size=mus.size, random_state=rng)
        mus = np.clip(mus * (1.0 + eps), 0.0, None)
    cutoff = FockCutoff.for_poisson(float(mus.max()))
    p = predicted_probabilities(build_povm(true_model, cutoff), mus)
    p = np.clip(p, 0.0, None)
    p /= p.sum(axis=1, keepdims=True)
    counts = np.stack([rng.multinomial(grid.shots_per_probe, row) for row in p])
    return TomographyDataset(grid, counts, true_model.labels, seed, true_model)


def _loglik(counts: np.ndarray, p: np.ndarray) -> tuple[float, bool]:
    observed = counts > 0
    clamped = bool(np.any(observed & (p <= 0.0)))
    safe = np.where(observed, np.maximum(p, PROB_FLOOR), 1.0)
    return float(np.sum(counts * np.log(safe))), clamped


def loglikelihood(dataset: TomographyDataset, povm: Povm) -> float:
    """``sum_{j,n} f[j,n] ln p[j,n]``; zero-probability observations are clamped with a warning."""
    if tuple(povm.labels) != dataset.outcome_labels:
        raise LabelMismatchError(f"POVM labels {povm.labels} != dataset labels {dataset.outcome_labels}")
    value, clamped = _loglik(dataset.counts, predicted_probabilities(povm, dataset.grid))
    if clamped:
        warnings.warn("observed outcome with zero predicted probability; clamped to 1e-300",
                      LikelihoodSingularityWarning, stacklevel=2)
    return value


@dataclass(eq=False)
class ReconstructionResult:
    povm: Povm
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    final_delta: float
    completeness_trace: np.ndarray
    unidentified_k: list[int] = field(default_factory=list)
    singular: bool = False

    @property
    def final_loglik(self) -> float:
        return float(self.loglik_trace[-1])

    def run_log(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_loglik": self.final_loglik,
            "converged": self.converged,
            "final_delta": self.final_delta,
            "unidentified_k_levels": self.unidentified_k,
            "singular_likelihood": self.singular,
            "max_completeness_violation": float(self.completeness_trace.max()),
        }


def ml_reconstruct(
    dataset: TomographyDataset,
    cutoff: FockCutoff | None = None,
    tol: float = 1e-10,
    max_iter: int = 5000,
    init: np.ndarray | None = None,
    update: str = "squared",
) -> ReconstructionResult:
    """Maximum-likelihood diagonal POVM from coherent-probe counts.

    Each iteration forms the gain ``g[k, n] = sum_j c[j, k] f[j, n] / p[j, n]``
    (frequencies normalized by the total shot count), multiplies ``r`` by
    ``g**2`` (or ``g`` with ``update="linear"``, the plain EM step) and
    renormalizes every Fock level to sum to one. Iteration stops when the
    per-shot log-likelihood gain drops below ``tol``. Uniform
    initialization unless ``init`` is given.
    """
    if update not in ("squared", "linear"):
        raise ValueError(f"update must be 'squared' or 'linear', got {update!r}")
    mus = dataset.grid.amplitudes_sq
    if not np.any(mus > 0):
        raise ValueError("dataset needs at least one probe with mu > 0")
    cutoff = cutoff or FockCutoff.for_poisson(float(mus.max()))
    _check_cutoff(mus, cutoff)
    n_out = len(dataset.outcome_labels)
    C = poisson_matrix(mus, cutoff)
    F = dataset.counts.astype(float)
    n_total = F.sum()
    power = 2 if update == "squared" else 1

    if init is None:
        r = np.full((cutoff.dim, n_out), 1.0 / n_out)
    else:
        r = np.array(init, dtype=float)
        if r.shape != (cutoff.dim, n_out):
            raise ValueError(f"init must have shape {(cutoff.dim, n_out)}, got {r.shape}")

    p = C @ r
    ll, singular = _loglik(F, p)
    trace = [ll]
    completeness = [float(np.abs(r.sum(axis=1) - 1.0).max())]
    converged = False
    delta = math.inf
    it = 0
    observed = F > 0
    for it in range(1, max_iter + 1):
        ratio = np.where(observed, F / np.maximum(p, PROB_FLOOR), 0.0) / n_total
        g = C.T @ ratio
        # per-level rescaling cancels in the normalization and avoids overflow
        g /= np.maximum(g.max(axis=1, keepdims=True), PROB_FLOOR)
        rn = r * g**power
        h = rn.sum(axis=1, keepdims=True)
        # levels no probe reaches keep their previous value
        r = np.where(h > 0, rn / np.where(h > 0, h, 1.0), r)
        completeness.append(float(np.abs(r.sum(axis=1) - 1.0).max()))
        p = C @ r
        ll_new, clamped = _loglik(F, p)
        singular |= clamped
        delta = (ll_new - ll) / n_total
        trace.append(ll_new)
        ll = ll_new
        if delta < tol:
            converged = True
            break

    if singular:
        warnings.warn("likelihood singularity: observed outcome with zero predicted probability",
                      LikelihoodSingularityWarning, stacklevel=2)
    unidentified = [int(k) for k in np.flatnonzero(C.sum(axis=0) < UNIDENTIFIED_WEIGHT)]
    povm = Povm.from_matrix(r, dataset.outcome_labels, cutoff)
    return ReconstructionResult(
        povm, np.array(trace), it, converged, float(delta), np.array(completeness), unidentified, singular,
    )


@dataclass(frozen=True)
class PovmDistance:
    max_abs: float
    l1: dict[str, float]
    k_limit: int


def compare_povm(a: Povm, b: Povm, k_limit: int | None = None) -> PovmDistance:
    """Largest and per-outcome L1 coefficient differences over k <= k_limit."""
    if tuple(a.labels) != tuple(b.labels):
        raise LabelMismatchError(f"outcome labels differ: {a.labels} vs {b.labels}")
    k = min(a.cutoff.k_max, b.cutoff.k_max)
    if k_limit is not None:
        k = min(k, k_limit)
    diff = np.abs(a.matrix()[: k + 1] - b.matrix()[: k + 1])
    return PovmDistance(
        float(diff.max()),
        {lab: float(diff[:, n].sum()) for n, lab in enumerate(a.labels)},
        k,
    )
