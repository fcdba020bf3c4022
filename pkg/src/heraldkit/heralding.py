"""Heralded single-photon preparation from twin beams.

A twin-beam source ``sqrt(1 - lam^2) sum_k lam^k |k>|k>`` is measured on one
arm by a detector; outcome n leaves the other arm in the diagonal state
``rho_c ∝ sum_k lam^(2k) r[k, n] |k><k|`` with probability
``Pr(n) = (1 - lam^2) sum_k lam^(2k) r[k, n]``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate, optimize

from .detectors import DetectorKind, DetectorModel, Povm, build_povm
from .fock import DiagonalFockOperator, FockCutoff, wigner_diagonal, wigner_fock_radial


class ImpossibleOutcomeError(ValueError):
    """The heralding outcome has zero probability."""


class UnsupportedClosedFormError(ValueError):
    """No closed form exists for this detector; use the series path."""


class NoSolutionError(ValueError):
    """A target fidelity cannot be reached on the requested branch."""


class QuadraturePrecisionError(RuntimeError):
    pass


@dataclass(frozen=True)
class TwinBeamSource:
    lam: float

    def __post_init__(self):
        if not 0.0 <= self.lam < 1.0:
            raise ValueError(f"lambda must lie in [0, 1), got {self.lam}")

    @property
    def mean_photon_number(self) -> float:
        return self.lam**2 / (1.0 - self.lam**2)

    def cutoff(self, tail_epsilon: float = 1e-12) -> FockCutoff:
        return FockCutoff.for_squeezing(self.lam, tail_epsilon)


@dataclass(frozen=True, eq=False)
class HeraldedState:
    state: DiagonalFockOperator
    rate: float
    outcome_label: str
    lam: float

    @property
    def populations(self) -> np.ndarray:
        return self.state.coeffs


def _source(source) -> TwinBeamSource:
    return source if isinstance(source, TwinBeamSource) else TwinBeamSource(float(source))


def conditional_state(source: TwinBeamSource | float, povm: Povm, outcome: int | str) -> HeraldedState:
    """State left on the signal arm after ``outcome`` on the idler arm.

    The sum runs over the POVM's cutoff; pick it with
    :meth:`TwinBeamSource.cutoff` so the neglected tail is below tolerance.
    """
    source = _source(source)
    n = povm.index(outcome)
    r = povm.elements[n].diagonal()
    lam2 = source.lam**2
    weights = lam2 ** np.arange(r.size) * r
    total = weights.sum()
    if not total > 0.0:
        raise ImpossibleOutcomeError(
            f"outcome {povm.labels[n]!r} has zero probability at lambda={source.lam}"
        )
    state = DiagonalFockOperator(weights / total)
    rate = min(max((1.0 - lam2) * total, 0.0), 1.0)
    return HeraldedState(state, float(rate), povm.labels[n], source.lam)


def outcome_rates(source: TwinBeamSource | float, povm: Povm) -> np.ndarray:
    """Pr(n) for every outcome of the POVM."""
    source = _source(source)
    lam2 = source.lam**2
    w = lam2 ** np.arange(povm.cutoff.dim)
    return (1.0 - lam2) * (w @ povm.matrix())


def high_gain_limit_state(element: DiagonalFockOperator) -> DiagonalFockOperator:
    """The element normalized by its trace on the truncated space."""
    d = element.diagonal()
    tr = d.sum()
    if not tr > 0.0:
        raise ImpossibleOutcomeError("POVM element has zero truncated trace")
    return DiagonalFockOperator(d / tr)


def total_variation(p: DiagonalFockOperator, q: DiagonalFockOperator) -> float:
    a, b = p.diagonal(), q.diagonal()
    n = max(a.size, b.size)
    a = np.pad(a, (0, n - a.size))
    b = np.pad(b, (0, n - b.size))
    return 0.5 * float(np.abs(a - b).sum())


def fidelity_single_photon(state: HeraldedState | DiagonalFockOperator) -> float:
    """Overlap with |1>, i.e. the one-photon population."""
    op = state.state if isinstance(state, HeraldedState) else state
    return float(op.coeffs[1]) if op.k_max >= 1 else 0.0


def fidelity_overlap_wigner(
    state: HeraldedState | DiagonalFockOperator,
    target: DiagonalFockOperator | None = None,
    tol: float = 1e-9,
) -> float:
    """Fidelity with a pure target from the radial Wigner overlap.

    ``F = int W_c W_t / int W_t^2`` over phase space; both integrals are
    radial because every operator here is phase-insensitive. The target
    defaults to the single-photon state.
    """
    op = state.state if isinstance(state, HeraldedState) else state
    if target is None:
        target = DiagonalFockOperator.fock(1, 1)
    n_t = int(np.argmax(target.coeffs))
    r_max = 6.0 + 2.0 * math.sqrt(n_t + 1)

    def overlap(r):
        return wigner_diagonal(op, r) * wigner_diagonal(target, r) * r

    def norm(r):
        return wigner_diagonal(target, r) ** 2 * r

    num, err_num = integrate.quad(overlap, 0.0, r_max, limit=400, epsabs=1e-13, epsrel=1e-12)
    den, err_den = integrate.quad(norm, 0.0, r_max, limit=400, epsabs=1e-13, epsrel=1e-12)
    if err_num > tol * max(den, 1e-300) or err_den > tol * den:
        raise QuadraturePrecisionError(f"Wigner overlap quadrature did not converge (errors {err_num:.2e}, {err_den:.2e})")
    return num / den


@dataclass(frozen=True)
class MetricsRow:
    lam: float
    eta: float
    nu: float
    detector: str
    outcome: str
    fidelity: float
    rate: float
    method: str


def _check_closed_form(model: DetectorModel) -> None:
    if model.kind is DetectorKind.TMD and model.reflectivity != 0.5:
        raise UnsupportedClosedFormError(
            f"TMD closed forms assume a balanced splitter; R={model.reflectivity} needs the series path"
        )
    if model.kind is DetectorKind.IDEAL and model.n_outcomes < 3:
        raise UnsupportedClosedFormError("ideal detector needs a dedicated one-photon outcome (n_outcomes >= 3)")


def closed_form_metrics(model: DetectorModel, lam: float) -> MetricsRow:
    """Single-photon fidelity and heralding rate from the analytic sums."""
    _check_closed_form(model)
    TwinBeamSource(lam)
    l2 = lam * lam
    eta, nu = model.eta, model.nu
    if model.kind is DetectorKind.IDEAL:
        fid, rate = 1.0, (1.0 - l2) * l2
        if rate == 0.0:
            raise ImpossibleOutcomeError("one-photon outcome impossible at lambda=0")
    elif model.kind is DetectorKind.APD:
        e = math.exp(-nu)
        geo = 1.0 / (1.0 - (1.0 - eta) * l2)
        denom = 1.0 / (1.0 - l2) - e * geo
        if not denom > 0.0:
            raise ImpossibleOutcomeError(f"APD 'on' impossible at lambda={lam}, nu={nu}")
        fid = l2 * (1.0 - e * (1.0 - eta)) / denom
        rate = 1.0 - e * (1.0 - l2) * geo
    else:
        eh = math.exp(-nu / 2)
        half = 1.0 / (1.0 - (1.0 - eta / 2) * l2)
        full = 1.0 / (1.0 - (1.0 - eta) * l2)
        denom = half - eh * full
        if not denom > 0.0:
            raise ImpossibleOutcomeError(f"TMD one-click impossible at lambda={lam}, nu={nu}")
        fid = l2 * (1.0 - eta / 2 - eh * (1.0 - eta)) / denom
        rate = 2.0 * (1.0 - l2) * (eh * half - eh * eh * full)
    return MetricsRow(lam, eta, nu, model.kind.value, model.herald_label, fid, rate, "closed_form")


def heralding_cutoff(model: DetectorModel, lam: float) -> FockCutoff:
    """Squeezing-tail cutoff, raised so an ideal detector keeps all its outcomes."""
    cutoff = TwinBeamSource(lam).cutoff()
    if model.kind is DetectorKind.IDEAL and cutoff.k_max < model.n_outcomes:
        cutoff = FockCutoff(model.n_outcomes, cutoff.tail_epsilon)
    return cutoff


def series_metrics(model: DetectorModel, lam: float, cutoff: FockCutoff | None = None) -> MetricsRow:
    """Same quantities as :func:`closed_form_metrics` from the truncated Fock sum."""
    source = TwinBeamSource(lam)
    povm = build_povm(model, cutoff or heralding_cutoff(model, lam))
    hs = conditional_state(source, povm, model.herald_label)
    return MetricsRow(
        lam, model.eta, model.nu, model.kind.value, model.herald_label,
        fidelity_single_photon(hs), hs.rate, "series",
    )


def metrics(model: DetectorModel, lam: float, method: str = "auto") -> MetricsRow:
    if method == "series":
        return series_metrics(model, lam)
    if method == "closed_form":
        return closed_form_metrics(model, lam)
    try:
        return closed_form_metrics(model, lam)
    except UnsupportedClosedFormError:
        return series_metrics(model, lam)


SWEEP_HEADER = (
    "lambda", "eta", "nu", "detector", "outcome",
    "fidelity_series", "fidelity_closed", "rate_series", "rate_closed",
)


@dataclass(frozen=True)
class SweepRow:
    lam: float
    eta: float
    nu: float
    detector: str
    outcome: str
    fidelity_series: float
    fidelity_closed: float
    rate_series: float
    rate_closed: float
    impossible: bool = False

    @property
    def fidelity_diff(self) -> float:
        return abs(self.fidelity_series - self.fidelity_closed)

    @property
    def rate_diff(self) -> float:
        return abs(self.rate_series - self.rate_closed)


@dataclass
class SweepTable:
    rows: list[SweepRow] = field(default_factory=list)

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    def select(self, **match) -> list[SweepRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in self.rows:
            w.writerow([
                _fmt(r.lam), _fmt(r.eta), _fmt(r.nu), r.detector, r.outcome,
                _fmt(r.fidelity_series), _fmt(r.fidelity_closed),
                _fmt(r.rate_series), _fmt(r.rate_closed),
            ])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return "nan" if x != x else f"{x:.12g}"


def _sweep_row(model: DetectorModel, lam: float) -> SweepRow:
    nan = float("nan")
    try:
        s = series_metrics(model, lam)
    except ImpossibleOutcomeError:
        return SweepRow(lam, model.eta, model.nu, model.kind.value, model.herald_label, nan, nan, 0.0, 0.0, True)
    try:
        c = closed_form_metrics(model, lam)
        fc, rc = c.fidelity, c.rate
    except (UnsupportedClosedFormError, ImpossibleOutcomeError):
        fc, rc = nan, nan
    return SweepRow(lam, model.eta, model.nu, model.kind.value, model.herald_label, s.fidelity, fc, s.rate, rc)


def sweep(models: Sequence[DetectorModel], lambdas: Iterable[float], nus: Iterable[float] | None = None) -> SweepTable:
    """One row per (model, nu, lambda), carrying both series and closed-form values.

    ``nus`` overrides each model's dark-count level; when omitted the model's
    own ``nu`` is used.
    """
    lambdas = [float(x) for x in lambdas]
    nus = None if nus is None else [float(x) for x in nus]
    if not models or not lambdas or (nus is not None and not nus):
        raise ValueError("sweep grids must be non-empty")
    table = SweepTable()
    for model in models:
        for nu in (nus if nus is not None else [model.nu]):
            m = replace(model, nu=nu)
            for lam in lambdas:
                table.rows.append(_sweep_row(m, lam))
    return table


def golden_section_max(f, lo: float, hi: float, tol: float = 1e-9) -> float:
    """Maximizer of a unimodal function on [lo, hi]."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


LAMBDA_MIN = 1e-6


def optimal_lambda(model: DetectorModel, method: str = "auto", tol: float = 1e-9) -> tuple[float, float]:
    """Squeezing parameter maximizing the single-photon fidelity, and that fidelity."""
    hi = _lambda_hi(model, method)
    if model.nu == 0.0 or model.kind is DetectorKind.IDEAL:
        lam = LAMBDA_MIN
    else:
        lam = golden_section_max(lambda x: metrics(model, x, method).fidelity, LAMBDA_MIN, hi, tol)
    return lam, metrics(model, lam, method).fidelity


def _lambda_hi(model: DetectorModel, method: str) -> float:
    try:
        if method != "series":
            _check_closed_form(model)
            return 1.0 - 1e-9
    except UnsupportedClosedFormError:
        pass
    return 0.99


def rate_at_target_fidelity(
    model: DetectorModel, f_target: float, branch: str = "decreasing", method: str = "auto"
) -> tuple[float, float]:
    """Squeezing parameter reaching ``f_target`` and the heralding rate there.

    Without dark counts the fidelity falls monotonically with lambda. With
    dark counts it rises to an optimum then falls; ``branch`` selects the
    side of the optimum to solve on.
    """
    if branch not in ("decreasing", "increasing"):
        raise ValueError(f"branch must be 'decreasing' or 'increasing', got {branch!r}")
    if model.kind is DetectorKind.IDEAL:
        if f_target > 1.0:
            raise NoSolutionError(f"fidelity {f_target} exceeds 1")
        lam = 1.0 / math.sqrt(2.0)
        return lam, metrics(model, lam, method).rate
    if branch == "increasing" and model.nu == 0.0:
        raise NoSolutionError("without dark counts the fidelity has no increasing branch")

    lam_peak, f_peak = optimal_lambda(model, method)
    if f_target > f_peak:
        raise NoSolutionError(f"fidelity {f_target} exceeds the maximum {f_peak:.12g}")
    a, b = (lam_peak, _lambda_hi(model, method)) if branch == "decreasing" else (LAMBDA_MIN, lam_peak)

    def g(x):
        return metrics(model, x, method).fidelity - f_target

    ga, gb = g(a), g(b)
    if ga * gb > 0.0:
        raise NoSolutionError(f"fidelity {f_target} not reached on the {branch} branch")
    if ga == 0.0:
        lam = a
    elif gb == 0.0:
        lam = b
    else:
        lam = optimize.bisect(g, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    if abs(g(lam)) > 1e-10:
        raise NoSolutionError(f"bisection stalled at |dF|={abs(g(lam)):.2e}")
    return lam, metrics(model, lam, method).rate
