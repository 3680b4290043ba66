import numpy as np
import pytest

from fsisplit import Laws, ThickLaw
from fsisplit.scheme import CoupledState, SchemeConfig, initial_state
from fsisplit.studies import (
    RefinementTable,
    generator_dissipativity,
    operator_coercivity,
    operator_monotonicity,
    probe_operator,
    reduction_error,
    refinement_study,
    state_norm,
    structure_generator_terms,
    random_structure_state,
    worker_count,
)
from helpers import make_setup


def test_zero_data_refinement_is_zero():
    setup = make_setup()
    table = refinement_study((SchemeConfig(dt=0.02, n_steps=2), setup, CoupledState.zeros(setup.spaces)), 3)
    assert table.differences == [0.0, 0.0]
    assert table.monotone
    assert table.terminations == ["HORIZON"] * 3
    assert table.to_csv().splitlines()[0] == "level,dt,difference,order"


def test_refinement_needs_three_levels():
    setup = make_setup()
    with pytest.raises(ValueError):
        refinement_study((SchemeConfig(), setup, CoupledState.zeros(setup.spaces)), 2)


def test_parallel_levels_match_serial():
    setup = make_setup(p=2.0)
    job = (SchemeConfig(dt=0.02, n_steps=2), setup, initial_state(setup.spaces, 0.02))
    serial = refinement_study(job, 3, workers=1)
    parallel = refinement_study(job, 3, workers=2)
    assert serial.differences == parallel.differences


def test_worker_count(monkeypatch):
    monkeypatch.setenv("FSISPLIT_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("FSISPLIT_THREADS", "zero")
    assert worker_count() == 1
    monkeypatch.delenv("FSISPLIT_THREADS")
    assert worker_count() == 1


def test_refinement_table_helpers():
    t = RefinementTable([0.1, 0.05, 0.025], [2.0, 1.0], [1.0])
    assert t.monotone
    assert not RefinementTable([0.1, 0.05, 0.025], [1.0, 2.0], [-1.0]).monotone


def test_state_norm_subsets():
    setup = make_setup()
    s = initial_state(setup.spaces, 0.05, velocity=0.2)
    full = state_norm(s - CoupledState.zeros(setup.spaces), setup.spaces)
    disp = state_norm({"beta": s.beta, "d": s.d}, setup.spaces)
    vel = state_norm({"v": s.v, "V": s.V}, setup.spaces)
    assert full == pytest.approx(np.hypot(disp, vel), rel=1e-12)
    assert state_norm({}, setup.spaces) == 0.0


@pytest.mark.parametrize("p", [2.5, 3.0, 4.0])
def test_operator_probes(p):
    setup = make_setup(p=p)
    op, _, _ = probe_operator(setup, 0.01, seed=2)
    assert operator_monotonicity(op, 50, seed=2).min() > 0
    assert operator_coercivity(op, 50, seed=3) > 0


def test_generator_dissipativity_and_terms():
    setup = make_setup()
    laws = Laws(thick=ThickLaw(1.7, 0.4))
    assert generator_dissipativity(setup.spaces, laws, 30, seed=5).max() <= 1e-12
    terms = structure_generator_terms(random_structure_state(setup.spaces, np.random.default_rng(0)),
                                      setup.spaces, laws)
    assert set(terms) == {"thin_velocity", "thin_elastic", "traction_thin", "thick_velocity",
                          "thick_interior"}
    assert abs(terms["thin_velocity"] + terms["thin_elastic"]) <= 1e-12 * abs(terms["thin_elastic"])


def test_reduction_error_small():
    assert reduction_error(make_setup(p=2.0), 0.01, seed=4) < 1e-10
