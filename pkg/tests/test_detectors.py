import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heraldkit.detectors import (
    DetectorKind,
    DetectorModel,
    Povm,
    build_povm,
    povm_apd,
    povm_brute_force,
    povm_ideal_pnr,
    povm_tmd,
    validate_povm,
)
from heraldkit.fock import DiagonalFockOperator, FockCutoff

ETAS = [0.1, 0.28, 0.5, 0.9, 1.0]
NUS = [0.0, 0.01, 0.08, 0.2]
RS = [0.3, 0.5, 0.7]

etas = st.floats(0.0, 1.0)
nus = st.floats(0.0, 2.0)
refl = st.floats(0.01, 0.99)


def pattern_probabilities(model, k):
    """P(n | k) by enumerating each photon's bin and detection, and each bin's dark count."""
    if model.kind is DetectorKind.APD:
        bins = [(1.0, model.nu)]
    else:
        bins = [(model.reflectivity, model.nu / 2), (1 - model.reflectivity, model.nu / 2)]
    terms = [[] for _ in range(len(bins) + 1)]
    photon_choices = [(b, hit) for b in range(len(bins)) for hit in (True, False)]
    for pattern in itertools.product(photon_choices, repeat=k):
        w = 1.0
        fired = [False] * len(bins)
        for b, hit in pattern:
            w *= bins[b][0] * (model.eta if hit else 1 - model.eta)
            fired[b] |= hit
        for darks in itertools.product((True, False), repeat=len(bins)):
            wd = w
            clicks = 0
            for b, dark in enumerate(darks):
                p_dark = 1 - math.exp(-bins[b][1])
                wd *= p_dark if dark else 1 - p_dark
                clicks += fired[b] or dark
            terms[clicks].append(wd)
    return np.array([math.fsum(t) for t in terms])


@pytest.mark.parametrize("model", [
    DetectorModel.apd(0.5, 0.0),
    DetectorModel.apd(0.28, 0.1),
    DetectorModel.tmd(0.9, 0.08, 0.5),
    DetectorModel.tmd(0.5, 0.2, 0.3),
    DetectorModel.tmd(1.0, 0.0, 0.5),
])
def test_closed_form_matches_pattern_enumeration(model):
    povm = build_povm(model, FockCutoff(7))
    r = povm.matrix()
    for k in range(8):
        assert r[k] == pytest.approx(pattern_probabilities(model, k), abs=1e-13)


# -- ideal detector

def test_ideal_projectors():
    povm = povm_ideal_pnr(FockCutoff(10), 3)
    one = povm.element("1")
    assert one.expectation(DiagonalFockOperator.fock(1, 10).coeffs) == 1.0
    assert one.expectation(DiagonalFockOperator.fock(2, 10).coeffs) == 0.0
    assert validate_povm(povm).max_completeness_violation == 0.0
    assert povm.element("2").diagonal()[5] == 1.0


def test_ideal_outcome_range():
    with pytest.raises(ValueError):
        povm_ideal_pnr(FockCutoff(4), 5)
    with pytest.raises(ValueError):
        povm_ideal_pnr(FockCutoff(4), 0)


# -- APD

def test_apd_examples():
    r = povm_apd(DetectorModel.apd(0.5, 0.0), FockCutoff(5)).matrix()
    assert r[0, 0] == 1.0
    assert r[2, 1] == pytest.approx(0.75, abs=1e-15)
    assert povm_apd(DetectorModel.apd(0.3, 0.2), FockCutoff(5)).matrix()[0, 1] == pytest.approx(1 - math.exp(-0.2))


def test_apd_on_is_complement():
    povm = povm_apd(DetectorModel.apd(0.3, 0.1), FockCutoff(20))
    assert povm.element("on").complement and not povm.element("off").complement


def test_model_validation():
    with pytest.raises(ValueError, match="eta"):
        DetectorModel.apd(1.2)
    with pytest.raises(ValueError, match="nu"):
        DetectorModel.apd(0.5, -0.1)
    with pytest.raises(ValueError, match="reflectivity"):
        DetectorModel.tmd(0.5, 0.0, 1.0)
    with pytest.raises(ValueError):
        povm_apd(DetectorModel.tmd(0.5), FockCutoff(3))


# -- TMD

def test_tmd_examples():
    r = povm_tmd(DetectorModel.tmd(0.37, 0.0, 0.5), FockCutoff(5)).matrix()
    assert r[1, 1] == pytest.approx(0.37, abs=1e-15)
    r = povm_tmd(DetectorModel.tmd(1.0, 0.0, 0.5), FockCutoff(5)).matrix()
    assert r[2, 1] == pytest.approx(0.5, abs=1e-15)
    assert r[2, 2] == pytest.approx(0.5, abs=1e-15)
    r = povm_tmd(DetectorModel.tmd(0.6, 0.3, 0.5), FockCutoff(5)).matrix()
    assert r[0, 0] == pytest.approx(math.exp(-0.3))


def test_tmd_degenerate_splitter_reduces_to_apd():
    cut = FockCutoff(40)
    for eta in (0.28, 0.9):
        tmd = povm_brute_force(DetectorModel.tmd(eta, 0.0, 1e-6), cut).matrix()
        apd = povm_apd(DetectorModel.apd(eta, 0.0), cut).matrix()
        assert np.abs(tmd[:, 1] - apd[:, 1]).max() < 1e-4
        assert np.abs(povm_tmd(DetectorModel.tmd(eta, 0.0, 1e-6), cut).matrix()[:, 1] - apd[:, 1]).max() < 1e-4


def test_tmd_coefficients_in_range_to_cap():
    d = validate_povm(povm_tmd(DetectorModel.tmd(0.9, 0.08, 0.5), FockCutoff(400)))
    assert d.ok and d.min_coeff >= 0.0 and d.max_coeff <= 1.0


# -- enumeration oracle

@pytest.mark.parametrize("eta", ETAS)
@pytest.mark.parametrize("nu", NUS)
def test_oracle_agreement_apd(eta, nu):
    m = DetectorModel.apd(eta, nu)
    cut = FockCutoff(40)
    assert np.abs(povm_apd(m, cut).matrix() - povm_brute_force(m, cut).matrix()).max() <= 1e-12


@pytest.mark.parametrize("eta", ETAS)
@pytest.mark.parametrize("nu", NUS)
@pytest.mark.parametrize("R", RS)
def test_oracle_agreement_tmd(eta, nu, R):
    m = DetectorModel.tmd(eta, nu, R)
    cut = FockCutoff(40)
    assert np.abs(povm_tmd(m, cut).matrix() - povm_brute_force(m, cut).matrix()).max() <= 1e-12


def test_oracle_agreement_ideal():
    m = DetectorModel.ideal(4)
    cut = FockCutoff(12)
    assert np.array_equal(build_povm(m, cut).matrix(), povm_brute_force(m, cut).matrix())


def test_oracle_cost_guard():
    with pytest.raises(ValueError):
        povm_brute_force(DetectorModel.apd(0.5), FockCutoff(61))


# -- properties

@given(eta=st.floats(0.01, 0.99), nu=nus)
def test_apd_monotone_in_k(eta, nu):
    r = povm_apd(DetectorModel.apd(eta, nu), FockCutoff(30)).matrix()
    off = r[:, 0]
    # strictness holds until the coefficients underflow
    live = off > 1e-300
    assert np.all(np.diff(off[live]) < 0)
    assert np.all(np.diff(r[:, 1]) >= 0)


@given(eta=etas, nu=nus, R=refl)
def test_noise_factorization(eta, nu, R):
    cut = FockCutoff(30)
    for noisy, clean in (
        (DetectorModel.apd(eta, nu), DetectorModel.apd(eta, 0.0)),
        (DetectorModel.tmd(eta, nu, R), DetectorModel.tmd(eta, 0.0, R)),
    ):
        a = build_povm(noisy, cut).matrix()[:, 0]
        b = build_povm(clean, cut).matrix()[:, 0]
        assert a == pytest.approx(math.exp(-nu) * b, rel=1e-14, abs=1e-300)


@given(eta=etas, nu=nus, R=refl)
def test_reflectivity_symmetry(eta, nu, R):
    cut = FockCutoff(30)
    a = povm_tmd(DetectorModel.tmd(eta, nu, R), cut).matrix()
    b = povm_tmd(DetectorModel.tmd(eta, nu, 1 - R), cut).matrix()
    assert np.abs(a - b).max() <= 1e-14


@given(nu=nus, R=refl)
def test_zero_efficiency_is_photon_blind(nu, R):
    for m in (DetectorModel.apd(0.0, nu), DetectorModel.tmd(0.0, nu, R)):
        r = build_povm(m, FockCutoff(20)).matrix()
        assert np.abs(r - r[0]).max() <= 1e-15


@settings(deadline=None)
@given(eta=etas, nu=nus, R=refl, k_max=st.integers(1, 200))
def test_completeness_and_range(eta, nu, R, k_max):
    for m in (DetectorModel.apd(eta, nu), DetectorModel.tmd(eta, nu, R)):
        d = validate_povm(build_povm(m, FockCutoff(k_max)))
        assert d.max_completeness_violation <= 1e-12
        assert d.min_coeff >= -1e-15 and d.max_coeff <= 1 + 1e-15


# -- diagnostics and serialization

def test_validate_flags_out_of_range():
    cut = FockCutoff(5)
    off = np.full(6, 0.5)
    off[3] = 1.2
    bad = Povm(("off", "on"), (DiagonalFockOperator(off), DiagonalFockOperator(off, complement=True)), cut)
    d = validate_povm(bad)
    assert (3, "off") in d.out_of_range and (3, "on") in d.out_of_range
    assert not d.ok


def test_validate_reports_traces():
    povm = povm_apd(DetectorModel.apd(0.5), FockCutoff(50))
    d = validate_povm(povm)
    assert d.truncated_traces["off"] == pytest.approx(2.0, abs=1e-12)
    assert d.truncated_traces["on"] == pytest.approx(49.0, abs=1e-12)


@pytest.mark.parametrize("model", [DetectorModel.apd(0.28, 0.013), DetectorModel.tmd(0.9, 0.08, 0.3), DetectorModel.ideal(4)])
def test_json_round_trip_bit_exact(model, tmp_path):
    povm = build_povm(model, FockCutoff(60))
    path = tmp_path / "povm.json"
    povm.save(path)
    back = Povm.load(path)
    assert back.labels == povm.labels and back.model == povm.model and back.cutoff == povm.cutoff
    for a, b in zip(povm.elements, back.elements):
        assert a.complement == b.complement
        assert np.array_equal(a.coeffs, b.coeffs)
    assert json.loads(path.read_text())["outcomes"][-1]["complement_flag"] is True


def test_povm_lookup():
    povm = build_povm(DetectorModel.tmd(0.5), FockCutoff(5))
    assert povm.index("1") == 1 and povm.index(2) == 2
    with pytest.raises(KeyError):
        povm.element("on")
    with pytest.raises(IndexError):
        povm.element(3)
