import json

import numpy as np
import pytest

from lemkit.analysis import (
    delta_t_histogram, equivalence_suite, gradcheck_suite, hmm_suite, prop1_suite, prop2_suite,
    prop3_scaling, state_bounds,
)
from lemkit.cell import LemParams, init_params


def test_state_bound_formula():
    proof, statement = state_bounds(1, 0.5)
    assert proof[0] == pytest.approx(1.0)
    assert statement[0] == pytest.approx(np.sqrt(0.75))


def test_prop1_small_suite():
    rep = prop1_suite(10, 50, seed=3)
    assert rep.passed and rep.worst_margin >= 0 and rep.cases == 10
    assert rep.extra["statement_form_pass"]
    json.loads(rep.to_json())
    with pytest.raises(ValueError):
        prop1_suite(1, 1, delta_t_max=0.6)


def test_prop2_small_suite():
    rep = prop2_suite(5, seed=1)
    assert rep.passed
    assert all(d["empirical_max_abs"] <= d["bound_unconditional"] for d in rep.details)


def test_prop3_returns_diagnostics():
    slope, k_ratio, rep = prop3_scaling(d=4, n=20, k_list=(1, 5, 10), dt_list=(1e-2, 3e-2, 1e-1))
    assert np.isfinite(slope) and k_ratio >= 1
    assert rep.extra["censored_k"] == [1]
    assert "wy_norm_1" in rep.extra
    with pytest.raises(ValueError):
        prop3_scaling(n=20, k_list=(15,))


def test_histogram_count_and_constant_gates():
    p = init_params(5, 2, 1, 0.5, 0)
    u = np.random.default_rng(0).uniform(size=(30, 4, 2))
    h = delta_t_histogram(p, [u, u[:, :2]])
    assert h.count == 2 * 5 * 30 * 6
    assert h.span_orders < 1.0
    const = LemParams.zeros(3, 2, 1, 0.7)
    hc = delta_t_histogram(const, [u])
    assert hc.span_orders == 0.0
    assert np.all(hc.dt_values == 0.35)
    assert np.isnan(hc.exponent_dt)


def test_histogram_csv(tmp_path):
    h = delta_t_histogram(init_params(2, 2, 1, 1.0, 0), [np.ones((3, 1, 2))])
    h.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "gate,value" and len(lines) == 1 + 12


def test_quick_suites_pass():
    assert gradcheck_suite(2, seed=5).passed
    assert equivalence_suite(d=3, m=2, n_steps=20).passed
    rep = hmm_suite()
    assert rep.passed and rep.extra["checks"]["accuracy"]
