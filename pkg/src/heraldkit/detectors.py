"""Photon-counter POVMs: ideal number-resolving, on/off APD and two-bin TMD.

All three detector families are phase-insensitive, so every POVM element is
diagonal in the Fock basis with ``r[k, n] = P(n clicks | k photons)``.
Elements that tend to the identity at large k (APD "on", TMD "2 clicks",
the last ideal outcome) are stored complement-flagged.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fock import DiagonalFockOperator, FockCutoff

BRUTE_FORCE_MAX_K = 60


class DetectorKind(str, enum.Enum):
    IDEAL = "ideal"
    APD = "apd"
    TMD = "tmd"


@dataclass(frozen=True)
class DetectorModel:
    """Detector family and its physical parameters.

    Attributes:
        kind: detector family.
        eta: quantum efficiency, per-photon detection probability.
        nu: mean number of Poissonian dark counts per detection window.
        reflectivity: intensity reflectivity R of the TMD splitter; the
            transmission is 1 - R. Ignored for other kinds.
        n_outcomes: number of outcomes of the ideal detector; the last one
            collects every photon number >= n_outcomes - 1.
    """

    kind: DetectorKind
    eta: float = 1.0
    nu: float = 0.0
    reflectivity: float = 0.5
    n_outcomes: int = 3

    def __post_init__(self):
        object.__setattr__(self, "kind", DetectorKind(self.kind))
        if not (0.0 <= self.eta <= 1.0):
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not (self.nu >= 0.0 and math.isfinite(self.nu)):
            raise ValueError(f"nu must be finite and >= 0, got {self.nu}")
        if self.kind is DetectorKind.TMD and not (0.0 < self.reflectivity < 1.0):
            raise ValueError(f"reflectivity must lie in (0, 1), got {self.reflectivity}")
        if self.kind is DetectorKind.IDEAL and self.n_outcomes < 1:
            raise ValueError(f"n_outcomes must be >= 1, got {self.n_outcomes}")

    @classmethod
    def apd(cls, eta: float, nu: float = 0.0) -> "DetectorModel":
        return cls(DetectorKind.APD, eta, nu)

    @classmethod
    def tmd(cls, eta: float, nu: float = 0.0, reflectivity: float = 0.5) -> "DetectorModel":
        return cls(DetectorKind.TMD, eta, nu, reflectivity)

    @classmethod
    def ideal(cls, n_outcomes: int = 3) -> "DetectorModel":
        return cls(DetectorKind.IDEAL, n_outcomes=n_outcomes)

    @property
    def transmission(self) -> float:
        return 1.0 - self.reflectivity

    @property
    def labels(self) -> tuple[str, ...]:
        if self.kind is DetectorKind.APD:
            return ("off", "on")
        if self.kind is DetectorKind.TMD:
            return ("0", "1", "2")
        return tuple(str(n) for n in range(self.n_outcomes))

    @property
    def herald_label(self) -> str:
        """Outcome that announces a single photon."""
        return "on" if self.kind is DetectorKind.APD else "1"

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "eta": self.eta, "nu": self.nu}
        if self.kind is DetectorKind.TMD:
            d["reflectivity"] = self.reflectivity
        if self.kind is DetectorKind.IDEAL:
            d["n_outcomes"] = self.n_outcomes
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorModel":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Povm:
    """Ordered detector outcomes, each a diagonal POVM element."""

    labels: tuple[str, ...]
    elements: tuple[DiagonalFockOperator, ...]
    cutoff: FockCutoff
    model: DetectorModel | None = None

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        object.__setattr__(self, "elements", tuple(self.elements))
        if len(self.labels) != len(self.elements):
            raise ValueError("one label is required per element")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate outcome labels: {self.labels}")
        for e in self.elements:
            if e.k_max != self.cutoff.k_max:
                raise ValueError(f"element has k_max={e.k_max}, cutoff says {self.cutoff.k_max}")

    def __len__(self):
        return len(self.elements)

    @property
    def outcomes(self) -> list[tuple[str, DiagonalFockOperator]]:
        return list(zip(self.labels, self.elements))

    def index(self, outcome: int | str) -> int:
        if isinstance(outcome, (int, np.integer)) and not isinstance(outcome, bool):
            if not 0 <= outcome < len(self):
                raise IndexError(f"outcome index {outcome} out of range for {len(self)} outcomes")
            return int(outcome)
        try:
            return self.labels.index(str(outcome))
        except ValueError:
            raise KeyError(f"unknown outcome {outcome!r}; labels are {self.labels}") from None

    def element(self, outcome: int | str) -> DiagonalFockOperator:
        return self.elements[self.index(outcome)]

    def matrix(self) -> np.ndarray:
        """``r[k, n]`` for k = 0..k_max, one column per outcome."""
        return np.stack([e.diagonal() for e in self.elements], axis=1)

    def to_dict(self) -> dict:
        return {
            "detector": self.model.to_dict() if self.model is not None else None,
            "cutoff": {"k_max": self.cutoff.k_max, "tail_epsilon": self.cutoff.tail_epsilon},
            "outcomes": [
                {"label": lab, "complement_flag": e.complement, "coeffs": [float(c) for c in e.coeffs]}
                for lab, e in self.outcomes
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Povm":
        cutoff = FockCutoff(**d["cutoff"])
        model = DetectorModel.from_dict(d["detector"]) if d.get("detector") else None
        outs = d["outcomes"]
        return cls(
            labels=tuple(o["label"] for o in outs),
            elements=tuple(DiagonalFockOperator(np.array(o["coeffs"], dtype=float), bool(o["complement_flag"])) for o in outs),
            cutoff=cutoff,
            model=model,
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Povm":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def from_matrix(cls, r: np.ndarray, labels, cutoff: FockCutoff, model=None) -> "Povm":
        """Wrap a coefficient table; the last outcome is stored as the complement of the others."""
        r = np.asarray(r, dtype=float)
        if r.shape != (cutoff.dim, len(labels)):
            raise ValueError(f"matrix shape {r.shape} does not match cutoff/labels")
        elements = [DiagonalFockOperator(r[:, n]) for n in range(r.shape[1] - 1)]
        elements.append(DiagonalFockOperator(r[:, :-1].sum(axis=1), complement=True))
        return cls(tuple(labels), tuple(elements), cutoff, model)


def _as_cutoff(cutoff) -> FockCutoff:
    return cutoff if isinstance(cutoff, FockCutoff) else FockCutoff(int(cutoff))


def povm_ideal_pnr(cutoff: FockCutoff | int, n_outcomes: int = 3) -> Povm:
    """Projectors |n><n| for n < n_outcomes - 1; the last outcome takes the rest."""
    cutoff = _as_cutoff(cutoff)
    if not 1 <= n_outcomes <= cutoff.k_max:
        raise ValueError(f"n_outcomes must lie in [1, {cutoff.k_max}], got {n_outcomes}")
    elements = [DiagonalFockOperator.fock(n, cutoff.k_max) for n in range(n_outcomes - 1)]
    rest = np.zeros(cutoff.dim)
    rest[: n_outcomes - 1] = 1.0
    elements.append(DiagonalFockOperator(rest, complement=True))
    model = DetectorModel.ideal(n_outcomes)
    return Povm(model.labels, tuple(elements), cutoff, model)


def povm_apd(model: DetectorModel, cutoff: FockCutoff | int) -> Povm:
    if model.kind is not DetectorKind.APD:
        raise ValueError(f"expected an APD model, got {model.kind.value}")
    cutoff = _as_cutoff(cutoff)
    k = np.arange(cutoff.dim)
    off = math.exp(-model.nu) * (1.0 - model.eta) ** k
    return Povm(
        model.labels,
        (DiagonalFockOperator(off), DiagonalFockOperator(off, complement=True)),
        cutoff,
        model,
    )


def povm_tmd(model: DetectorModel, cutoff: FockCutoff | int) -> Povm:
    if model.kind is not DetectorKind.TMD:
        raise ValueError(f"expected a TMD model, got {model.kind.value}")
    cutoff = _as_cutoff(cutoff)
    k = np.arange(cutoff.dim)
    eta, nu, R, T = model.eta, model.nu, model.reflectivity, model.transmission
    r0 = math.exp(-nu) * (1.0 - eta) ** k
    r1 = math.exp(-nu / 2) * ((1.0 - R * eta) ** k + (1.0 - T * eta) ** k) - 2.0 * r0
    # exact cancellation at k=0 can leave -1e-17
    r1 = np.clip(r1, 0.0, None)
    return Povm(
        model.labels,
        (DiagonalFockOperator(r0), DiagonalFockOperator(r1), DiagonalFockOperator(r0 + r1, complement=True)),
        cutoff,
        model,
    )


def build_povm(model: DetectorModel, cutoff: FockCutoff | int) -> Povm:
    if model.kind is DetectorKind.APD:
        return povm_apd(model, cutoff)
    if model.kind is DetectorKind.TMD:
        return povm_tmd(model, cutoff)
    return povm_ideal_pnr(cutoff, model.n_outcomes)


def povm_brute_force(model: DetectorModel, cutoff: FockCutoff | int) -> Povm:
    """Enumeration oracle for ``P(n clicks | k photons)``.

    Every split of k photons over the detector's time bins is enumerated with
    its binomial weight; each bin fails to click with probability
    ``exp(-nu_bin) * (1 - eta)**p`` for p photons in it, and the click
    patterns are tallied. Shares no code with the closed-form constructors.
    """
    cutoff = _as_cutoff(cutoff)
    if cutoff.k_max > BRUTE_FORCE_MAX_K:
        raise ValueError(f"brute force is limited to k_max <= {BRUTE_FORCE_MAX_K}, got {cutoff.k_max}")
    labels = model.labels
    table = np.zeros((cutoff.dim, len(labels)))

    if model.kind is DetectorKind.IDEAL:
        for k in range(cutoff.dim):
            table[k, min(k, model.n_outcomes - 1)] = 1.0
        return Povm.from_matrix(table, labels, cutoff, model)

    if model.kind is DetectorKind.APD:
        bins = [(1.0, model.nu)]
    else:
        bins = [(model.reflectivity, model.nu / 2), (model.transmission, model.nu / 2)]

    def silent(p: int, nu_bin: float) -> float:
        return math.exp(-nu_bin) * (1.0 - model.eta) ** p

    for k in range(cutoff.dim):
        if len(bins) == 1:
            q = silent(k, bins[0][1])
            table[k] = (q, 1.0 - q)
            continue
        (ra, nua), (rb, nub) = bins
        for p in range(k + 1):
            w = math.comb(k, p) * ra**p * rb ** (k - p)
            qa, qb = silent(p, nua), silent(k - p, nub)
            table[k, 0] += w * qa * qb
            table[k, 1] += w * (qa * (1.0 - qb) + (1.0 - qa) * qb)
            table[k, 2] += w * (1.0 - qa) * (1.0 - qb)
    elements = [DiagonalFockOperator(table[:, n]) for n in range(len(labels))]
    return Povm(labels, tuple(elements), cutoff, model)


@dataclass(frozen=True)
class PovmDiagnostics:
    max_completeness_violation: float
    min_coeff: float
    max_coeff: float
    truncated_traces: dict[str, float]
    out_of_range: list[tuple[int, str]]

    @property
    def ok(self) -> bool:
        return not self.out_of_range and self.max_completeness_violation <= 1e-12


def validate_povm(povm: Povm, atol: float = 1e-12) -> PovmDiagnostics:
    r = povm.matrix()
    bad = np.argwhere((r < -atol) | (r > 1.0 + atol))
    return PovmDiagnostics(
        max_completeness_violation=float(np.abs(r.sum(axis=1) - 1.0).max()),
        min_coeff=float(r.min()),
        max_coeff=float(r.max()),
        truncated_traces={lab: float(r[:, n].sum()) for n, lab in enumerate(povm.labels)},
        out_of_range=[(int(k), povm.labels[n]) for k, n in bad],
    )
