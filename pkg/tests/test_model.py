import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sharedstep.laws import StepLaw
from sharedstep.model import (
    IndependentModel,
    ModelError,
    SharedStepModel,
    UndefinedQuantityError,
    UnsupportedLawError,
    coeff_c,
    coeff_c_joint,
    coeff_kappa,
    conditional_cdf,
    disease_cdf,
    disease_cdf_closed,
    disease_cdf_numeric,
    expected_n,
    expected_n_given_positive,
    first_step_ratio,
    generating_function,
    joint_cdf,
    joint_cdf_closed,
    joint_cdf_numeric,
    load_model,
    model_from_dict,
    moment_report,
    prob_zero,
    prob_zero_indep,
    variance_n,
    variance_n_indep,
)

from . import oracles

P = StepLaw.power_law


def two(l0=1.0, q0=0.0, lj=1.0, qj=0.0, lk=1.0, qk=0.0):
    return SharedStepModel(P(l0, q0), (("j", P(lj, qj)), ("k", P(lk, qk))))


# --------------------------------------------------------------- coefficients


def test_coeff_values():
    assert coeff_c(1, 1) == pytest.approx(1 / 6, rel=1e-14)
    assert coeff_c(0, 0) == pytest.approx(1 / 2, rel=1e-14)
    assert coeff_c_joint(0, 0, 0) == pytest.approx(1 / 3, rel=1e-14)
    assert coeff_kappa(0, 0, 0)[2] == pytest.approx(3 / 4, rel=1e-14)


def test_coeff_matches_convolution_oracle():
    # c_j is the chain cdf at t=1 with unit rates
    assert coeff_c(1, 1) == pytest.approx(oracles.chain_cdf(1, 1, 1, 1, 1.0), rel=1e-12)
    assert coeff_c_joint(0, 0, 0) == pytest.approx(oracles.joint_cdf(1, 0, 1, 0, 1, 0, 1.0), rel=1e-12)


@given(st.floats(-0.9, 6), st.floats(-0.9, 6), st.floats(-0.9, 6))
def test_kappa_identities(q0, qj, qk):
    kj, kk, kjk = coeff_kappa(q0, qj, qk)
    cj, ck, cjk = coeff_c(q0, qj), coeff_c(q0, qk), coeff_c_joint(q0, qj, qk)
    assert kj * cj == pytest.approx(cjk, rel=1e-12)
    assert kk * ck == pytest.approx(cjk, rel=1e-12)
    assert kjk * cjk == pytest.approx(cj * ck, rel=1e-12)


@given(st.floats(-0.9, 6), st.floats(-0.9, 6))
def test_coeff_c_against_factorials(q0, qj):
    ref = oracles.factorial(q0 + 1) * oracles.factorial(qj + 1) / oracles.factorial(q0 + qj + 2)
    assert coeff_c(q0, qj) == pytest.approx(ref, rel=1e-11)


def test_coeff_domain():
    with pytest.raises(ValueError):
        coeff_c(-1, 0)
    with pytest.raises(ValueError):
        coeff_kappa(0, 0, -1.5)


# ---------------------------------------------------------------------- cdfs


def test_disease_cdf_closed_examples():
    m = SharedStepModel(P(1, 1), (("j", P(1, 1)),))
    assert disease_cdf_closed(m, "j", 1.0) == pytest.approx(1 / 6, rel=1e-14)
    assert disease_cdf_closed(m, "j", 0.0) == 0.0
    m2 = SharedStepModel(P(0.02, 1), (("j", P(1, 1)),))
    m1 = SharedStepModel(P(0.01, 1), (("j", P(1, 1)),))
    assert disease_cdf_closed(m2, "j", 0.5) == pytest.approx(2 * disease_cdf_closed(m1, "j", 0.5), rel=1e-14)


def test_closed_numeric_example():
    first, second = P(1, 2), P(1, 3)
    m = SharedStepModel(first, (("j", second),))
    assert disease_cdf_numeric(first, second, 0.8) == pytest.approx(disease_cdf_closed(m, "j", 0.8), abs=1e-8)
    assert disease_cdf_numeric(first, second, 0.0) == 0.0


def test_numeric_matches_mpmath_outside_support():
    # closed form no longer exact once F0 saturates; compare quadrature to the oracle
    first, second = P(2.0, 1.0), P(0.5, 0.5)
    t = 1.5
    assert disease_cdf_numeric(first, second, t) == pytest.approx(oracles.chain_cdf(2.0, 1.0, 0.5, 0.5, t), abs=1e-8)


def test_joint_examples():
    m = two()
    assert joint_cdf(m, "j", "k", 1.0) == pytest.approx(1 / 3, rel=1e-12)
    assert joint_cdf_numeric(m, "j", "k", 1.0) == pytest.approx(1 / 3, abs=1e-9)
    assert joint_cdf(m, "j", "k", 0.0) == 0.0
    m = two(0.3, 1.2, 0.7, 2.0, 0.4, 0.5)
    assert joint_cdf(m, "j", "k", 0.9) == pytest.approx(joint_cdf(m, "k", "j", 0.9), rel=1e-14)
    with pytest.raises(ModelError):
        joint_cdf(m, "j", "j", 0.5)


def test_exponential_pair_matches_closed_form():
    from sharedstep.exponential import exp_disease_cdf, exp_joint

    m = SharedStepModel(StepLaw.exponential(1.0), (("j", StepLaw.exponential(2.0)), ("k", StepLaw.exponential(0.5))))
    assert disease_cdf(m, "j", 1.3) == pytest.approx(exp_disease_cdf(2.0, 1.3), abs=1e-9)
    assert joint_cdf(m, "j", "k", 1.3) == pytest.approx(exp_joint(2.0, 0.5, 1.3), abs=1e-9)


def test_closed_requires_power_laws():
    m = SharedStepModel(StepLaw.exponential(1.0), (("j", P(1, 1)),))
    with pytest.raises(UnsupportedLawError):
        disease_cdf_closed(m, "j", 0.5)


def test_independent_joint_is_product():
    m = two(0.5, 1, 0.5, 1, 0.5, 2).independent()
    t = 0.9
    assert joint_cdf(m, "j", "k", t) == pytest.approx(disease_cdf(m, "j", t) * disease_cdf(m, "k", t), rel=1e-12)


def test_conditional_and_ratio():
    q0, qj, qk = 1.0, 2.0, 0.5
    m = two(0.2, q0, 0.3, qj, 0.4, qk)
    t = 0.7
    kj, kk, kjk = coeff_kappa(q0, qj, qk)
    assert conditional_cdf(m, "j", "k", t) == pytest.approx(0.3 * t ** (qj + 1) * kk, rel=1e-12)
    assert conditional_cdf(m, "k", "j", t) == pytest.approx(0.4 * t ** (qk + 1) * kj, rel=1e-12)
    assert conditional_cdf(m, "j", "k", t) == pytest.approx(
        joint_cdf(m, "j", "k", t) / disease_cdf(m, "k", t), rel=1e-14)
    assert first_step_ratio(m, "j", "k", t) == pytest.approx(0.2 * t ** (q0 + 1) * kjk, rel=1e-12)
    m2 = two(0.4, q0, 0.3, qj, 0.4, qk)
    assert first_step_ratio(m2, "j", "k", t) == pytest.approx(2 * first_step_ratio(m, "j", "k", t), rel=1e-12)
    with pytest.raises(UndefinedQuantityError):
        conditional_cdf(m, "j", "k", 0.0)


@pytest.mark.parametrize("fn,power", [
    (lambda m, t: conditional_cdf(m, "j", "k", t), 2.0 + 1),
    (lambda m, t: first_step_ratio(m, "j", "k", t), 1.0 + 1),
])
def test_log_slopes(fn, power):
    m = two(0.2, 1.0, 0.3, 2.0, 0.4, 0.5)
    t, h = 0.5, 1e-4
    slope = (math.log(fn(m, t * math.exp(h))) - math.log(fn(m, t * math.exp(-h)))) / (2 * h)
    assert slope == pytest.approx(power, rel=1e-7)


def test_unit_ratio_slope_is_one():
    m = two()
    t, h = 0.3, 1e-4
    r = lambda t: first_step_ratio(m, "j", "k", t)
    assert (math.log(r(t * math.exp(h))) - math.log(r(t * math.exp(-h)))) / (2 * h) == pytest.approx(1.0, rel=1e-7)


# ------------------------------------------------------------------- moments


def test_generating_function_normalised():
    m = two(0.3, 1, 0.5, 0.5, 0.6, 2)
    assert generating_function(m, 0.0, 0.8) == pytest.approx(1.0, abs=1e-9)
    empty = SharedStepModel(P(1, 1), ())
    assert generating_function(empty, 1.7, 0.5) == pytest.approx(1.0, abs=1e-12)


def test_single_disease_moments():
    m = SharedStepModel(P(0.5, 1), (("a", P(0.8, 0.5)),))
    t = 1.0
    F = disease_cdf(m, "a", t)
    assert expected_n(m, t) == F
    assert variance_n(m, t) == pytest.approx(F * (1 - F), rel=1e-9)
    assert prob_zero(m, t) == pytest.approx(1 - disease_cdf_numeric(m.first, m.second("a"), t), abs=1e-9)
    assert expected_n_given_positive(m, t) == pytest.approx(1.0, rel=1e-8)


def test_prob_zero_at_origin():
    m = two()
    assert prob_zero(m, 0.0) == 1.0
    assert prob_zero_indep(m, 0.0) == 1.0
    with pytest.raises(UndefinedQuantityError):
        expected_n_given_positive(m, 0.0)


def test_variance_dispatch():
    m = two(0.5, 1, 0.5, 1, 0.5, 1)
    ind = m.independent()
    assert variance_n(ind, 0.9) == variance_n_indep(ind, 0.9)
    # shared step correlates the diseases
    assert variance_n(m, 0.9) > variance_n_indep(m, 0.9)


def test_moment_report_consistency():
    m = two(0.5, 1, 0.5, 1, 0.5, 1)
    r = moment_report(m, 0.9)
    assert r.expected_n_given_positive == pytest.approx(r.expected_n / (1 - r.prob_zero), rel=1e-14)
    assert r.variance_n == pytest.approx(variance_n(m, 0.9), rel=1e-12)


rates = st.floats(0.05, 2.0)
powers = st.floats(0.0, 3.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(rates, powers), min_size=1, max_size=4), rates, powers, st.floats(0.1, 0.9))
def test_shared_vs_independent_properties(ds, l0, q0, frac):
    diseases = tuple((f"d{i}", P(l, q)) for i, (l, q) in enumerate(ds))
    m = SharedStepModel(P(l0, q0), diseases)
    t = frac * m.first.support_end
    ind = m.independent()
    assert expected_n(m, t) == expected_n(ind, t)
    assert prob_zero(m, t) >= prob_zero(ind, t) - 1e-9
    if prob_zero(m, t) >= prob_zero(ind, t) and prob_zero(ind, t) < 1:
        assert expected_n_given_positive(m, t) >= expected_n_given_positive(ind, t) - 1e-9


# ---------------------------------------------------------------------- JSON


def test_json_roundtrip(tmp_path):
    m = SharedStepModel(P(0.01, 1), (("j", StepLaw.weibull(0.1, 2)), ("k", StepLaw.exponential(0.3))))
    path = tmp_path / "m.json"
    path.write_text(json.dumps(m.to_dict()))
    assert load_model(path) == m


@pytest.mark.parametrize("doc", [
    {"first": {"kind": "PowerLawCdf", "lambda": 1}, "diseases": [], "extra": 1},
    {"first": {"kind": "Gamma", "lambda": 1}, "diseases": []},
    {"first": {"kind": "PowerLawCdf", "lambda": -1}, "diseases": []},
    {"first": {"kind": "PowerLawCdf", "lambda": 1}, "diseases": [{"kind": "Exponential", "lambda": 1}]},
    {"first": {"kind": "PowerLawCdf", "lambda": 1, "rate": 2}, "diseases": []},
    {"first": {"kind": "PowerLawCdf", "lambda": "1"}, "diseases": []},
])
def test_json_rejects_bad_documents(doc):
    with pytest.raises(ModelError):
        model_from_dict(doc)


def test_duplicate_names_rejected():
    with pytest.raises(ModelError):
        SharedStepModel(P(1, 0), (("a", P(1, 0)), ("a", P(1, 1))))


def test_invalid_json_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(ModelError):
        load_model(p)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 3), st.floats(-0.5, 4), st.floats(0.05, 3), st.floats(-0.5, 4),
       st.floats(0.05, 3), st.floats(-0.5, 4), st.floats(0.01, 0.99))
def test_closed_equals_tight_quadrature_relatively(l0, q0, lj, qj, lk, qk, frac):
    from sharedstep.numeric import QuadratureSpec

    tight = QuadratureSpec(abs_tol=1e-300, rel_tol=1e-12, max_subdivisions=500)
    m = two(l0, q0, lj, qj, lk, qk)
    t = frac * min(m.first.support_end, m.second("j").support_end, m.second("k").support_end)
    c = disease_cdf_closed(m, "j", t)
    assert disease_cdf_numeric(m.first, m.second("j"), t, tight) == pytest.approx(c, rel=1e-9)
    c = joint_cdf_closed(m, "j", "k", t)
    assert joint_cdf_numeric(m, "j", "k", t, tight) == pytest.approx(c, rel=1e-9)
