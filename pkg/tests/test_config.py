import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fsisplit.config import (
    ConfigParseError,
    ConfigValidationError,
    RunConfig,
    config_hash,
    default_config_text,
    from_mapping,
    load_config,
    parse_config,
    serialize_config,
)
from fsisplit.signals import Signal


def test_defaults_round_trip():
    cfg = parse_config(default_config_text())
    assert cfg == RunConfig()
    assert parse_config("") == RunConfig()
    assert cfg.fluid.p == 3.0 and cfg.scheme.fluid_solver == "picard" and cfg.initial.thick == "lifting"


def test_load_from_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("fluid: {p: 4.0}\nscheme: {dt: 0.02, n_steps: 5, T: 0.1}\n")
    cfg = load_config(str(path))
    assert cfg.fluid.p == 4.0 and cfg.scheme_config().n_steps == 5


def test_shear_thinning_rejected():
    with pytest.raises(ConfigValidationError) as err:
        parse_config("fluid: {p: 1.5}\n")
    assert any("fluid.p" in v and "p > 2" in v for v in err.value.violations)
    with pytest.raises(ConfigValidationError):
        parse_config("fluid: {p: 2.0}\n")
    assert parse_config("fluid: {p: 2.0, reduction: true}\n").fluid.p == 2.0


def test_every_violation_reported_at_once():
    text = (
        "geometry: {L: -1}\n"
        "resolution: {nz: 0}\n"
        "fluid: {alpha: 0, colour: red}\n"
        "scheme: {dt: 0.01, n_steps: 10, T: 0.5, fluid_solver: anderson}\n"
        "initial: {thick: ruled}\n"
        "boundary: {P_in: {kind: square}}\n"
        "extras: 1\n"
    )
    with pytest.raises(ConfigValidationError) as err:
        parse_config(text)
    joined = "\n".join(err.value.violations)
    for needle in ("geometry.L", "resolution.nz", "fluid.alpha", "fluid.colour", "scheme.T",
                   "scheme.fluid_solver", "initial.thick", "boundary.P_in.kind", "extras"):
        assert needle in joined, needle
    assert len(err.value.violations) >= 9
    assert str(err.value).count("\n") == len(err.value.violations)


def test_wrong_types_are_violations():
    with pytest.raises(ConfigValidationError) as err:
        parse_config("resolution: {nz: 2.5}\nscheme: {dt: fast}\nseed: x\n")
    joined = "\n".join(err.value.violations)
    assert "resolution.nz" in joined and "scheme.dt" in joined and "seed" in joined


def test_parse_error_location():
    with pytest.raises(ConfigParseError) as err:
        parse_config("fluid:\n  p: 3.0\n  alpha: [1.0\n")
    assert err.value.line is not None and err.value.line >= 3
    assert err.value.column is not None
    assert f"line {err.value.line}" in str(err.value)


def test_overrides_clear_horizon():
    cfg = parse_config("scheme: {dt: 0.01, n_steps: 10, T: 0.1}\n")
    new = cfg.with_overrides(dt=0.02, n_steps=3, directory="x", seed=9)
    assert new.scheme.dt == 0.02 and new.scheme.n_steps == 3 and new.scheme.T is None
    assert new.output.directory == "x" and new.seed == 9
    assert cfg.with_overrides() == cfg


def test_hash_tracks_content():
    a = RunConfig()
    assert config_hash(a) == config_hash(parse_config(serialize_config(a)))
    assert config_hash(a) != config_hash(a.with_overrides(seed=1))


def test_kappa_overrides_applied_after_certification():
    cfg = parse_config("fluid: {p: 3.0, kappa1: 10.0}\n")
    law = cfg.fluid_law()
    assert law.kappa1 == 10.0 and law.kappa2 == 0.0 and law.kappa3 is not None


def test_problem_setup_and_initial_state():
    cfg = parse_config("resolution: {nz: 4, nr: 2, nz_thick: 4, nr_thick: 2, n_thin: 4}\n"
                       "thin: {nonlinearity: cubic, gamma: 3.0}\n"
                       "initial: {amplitude: 0.02, velocity: 0.1}\n"
                       "boundary: {P_in: {kind: pulse, value: 2.0, start: 0.0, width: 0.1}}\n")
    setup = cfg.problem_setup()
    assert setup.laws.thin.active and not setup.unforced
    s0 = cfg.initial_state(setup)
    assert np.abs(s0.beta).max() == pytest.approx(0.02, rel=0.05)


finite = st.floats(0.1, 10.0, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(L=finite, p=st.floats(2.01, 6.0), alpha=finite, dt=st.floats(1e-4, 0.1),
       n=st.integers(0, 50), nz=st.integers(1, 40), gamma=st.floats(0.0, 100.0),
       solver=st.sampled_from(["picard", "newton", "auto"]), seed=st.integers(0, 2**31))
def test_serialize_parse_round_trip(L, p, alpha, dt, n, nz, gamma, solver, seed):
    cfg = from_mapping({
        "geometry": {"L": L}, "resolution": {"nz": nz}, "fluid": {"p": p, "alpha": alpha},
        "thin": {"nonlinearity": "cubic", "gamma": gamma},
        "scheme": {"dt": dt, "n_steps": n, "fluid_solver": solver}, "seed": seed,
        "boundary": {"P_in": {"kind": "table", "times": [0.0, 1.0], "values": [1.0, -1.0]}},
    })
    back = parse_config(serialize_config(cfg))
    assert back == cfg
    assert config_hash(back) == config_hash(cfg)


# --- signals -----------------------------------------------------------------


def test_signal_means():
    assert Signal("constant", 2.5).mean(0.0, 0.3) == 2.5
    pulse = Signal("pulse", 4.0, 0.1, 0.2)
    # int_0^w sin^2(pi t / w) dt = w / 2
    assert pulse.mean(0.0, 0.4) == pytest.approx(4.0 * 0.1 / 0.4, rel=1e-6)
    assert pulse.mean(0.35, 0.4) == 0.0
    table = Signal("table", times=(0.0, 1.0), values=(0.0, 2.0))
    assert table.mean(0.25, 0.75) == pytest.approx(1.0, rel=1e-14)
    assert table(2.0) == 2.0
    assert Signal().is_zero and not pulse.is_zero


def test_signal_validation():
    for bad in (dict(kind="square"), dict(kind="pulse", width=0.0),
                dict(kind="table", times=(0.0, 0.0), values=(1.0, 2.0)),
                dict(kind="table", times=(0.0,), values=())):
        with pytest.raises(ValueError):
            Signal(**bad)
    assert math.isclose(Signal("pulse", 1.0, 0.0, 1.0)(0.5), 1.0)
