import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metachan.config import (
    ConfigError,
    build_model,
    build_observables,
    config_from_dict,
    hyperfine_vectors,
    initial_state,
    load_config,
    loads,
    model_hamiltonians,
    normalize_model,
    parse_operator,
)
from metachan.hs_algebra import PAULI_X, PAULI_Y, PAULI_Z, SIGMA_MINUS
from metachan.models import khz

CONFIGS = sorted(Path(__file__).resolve().parent.parent.joinpath("configs").glob("*.json"))


def base(**model):
    m = {"type": "single_qubit", "B": "Z", "C": "X", "gamma": 0.05}
    m.update(model)
    return {"schema": 1, "model": m, "run": {"samples": 10, "rounds": [5]}, "output": {"dir": "o"}}


def test_shipped_configs_exist():
    names = {p.name for p in CONFIGS}
    assert {"single_qubit.json", "gamma_scan.json", "nv_two_qubit.json", "dd_two_qubit.json"} <= names


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_round_trip_and_build(path):
    cfg = load_config(path)
    assert loads(cfg.dumps()) == cfg
    built = build_model(cfg.model)
    assert built.natural.shape == (built.dim**2, built.dim**2)


def test_parse_operator_forms():
    assert np.array_equal(parse_operator("Z"), PAULI_Z)
    assert np.array_equal(parse_operator("XY"), np.kron(PAULI_X, PAULI_Y))
    assert np.array_equal(parse_operator("sigma_minus"), SIGMA_MINUS)
    assert np.array_equal(parse_operator("zero", dim=3), np.zeros((3, 3)))
    assert np.array_equal(parse_operator([[1, 0], [0, 2]]), np.diag([1, 2]))
    assert np.array_equal(parse_operator({"re": [[0, 0], [0, 0]], "im": [[0, -1], [1, 0]]}), PAULI_Y)


@pytest.mark.parametrize(
    "spec, kw",
    [("Q", {}), ("zero", {}), ([[1, 2, 3]], {}), ({"im": [[1]]}, {}), ("Z", {"dim": 4}), (3, {}), ([[np.inf]], {})],
)
def test_parse_operator_errors(spec, kw):
    with pytest.raises(ConfigError):
        parse_operator(spec, **kw)


@pytest.mark.parametrize(
    "tree",
    [
        [],
        {"model": {"type": "single_qubit", "B": "Z"}},
        {**base(), "schema": 2},
        {**base(), "extra": 1},
        {**base(), "run": {"rounds": [10, 5]}},
        {**base(), "run": {"rounds": []}},
        {**base(), "run": {"samples": 0}},
        {**base(), "run": {"bogus": 1}},
        {**base(), "run": {"thresholds": [-0.5, 0.2, 0.1, 0.5]}},
        {**base(), "run": {"window": [5, 5]}},
        {**base(), "run": {"seed": 1.5}},
        {**base(), "output": {"dir": 3}},
        base(type="unknown"),
        base(gamma=-1),
        base(t=0),
        base(B=[[0, 1], [0, 0]]),
        base(B="ZZ"),
        base(color="red"),
        {"schema": 1, "model": {"type": "spin_bath", "hyperfine_khz": [[0, 0, 1]]}},
        {"schema": 1, "model": {"type": "spin_bath", "t": 1, "hyperfine_khz": [[0, 0, 1]], "hyperfine_polar": {}}},
        {"schema": 1, "model": {"type": "spin_bath", "t": 1, "hyperfine_khz": [[0, 0, 1]] * 6}},
        {"schema": 1, "model": {"type": "dd_effective", "t": 1, "hyperfine_khz": [[1, 0, 0]], "detuning": 1, "detuning_fraction": 0.1}},
        {"schema": 1, "model": {"type": "dissipative", "B": "Z", "jumps": [{"op": "Z"}]}},
        {"schema": 1, "model": {"type": "kraus", "kraus": []}},
    ],
)
def test_invalid_configs(tree):
    with pytest.raises(ConfigError):
        config_from_dict(tree)


def test_invalid_json_text():
    with pytest.raises(ConfigError):
        loads("{not json")
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.json")


def test_defaults_filled():
    cfg = config_from_dict({"schema": 1, "model": {"type": "single_qubit", "B": "Z"}})
    assert cfg.model == {"type": "single_qubit", "gamma": 0.0, "delta_phi": np.pi / 2, "t": 1.0, "B": "Z", "C": "zero"}
    assert cfg.run.samples == 10000 and cfg.output == "out"


def test_overrides():
    cfg = config_from_dict(base())
    new = cfg.with_overrides(seed=9, out="elsewhere", emit_trajectories=True)
    assert new.run.seed == 9 and new.output == "elsewhere" and new.run.emit_trajectories
    assert cfg.run.seed == 0
    with pytest.raises(ConfigError):
        cfg.with_overrides(seed=-1)


def test_hyperfine_polar_matches_cartesian():
    polar = normalize_model(
        {"type": "spin_bath", "t": 1, "hyperfine_polar": {"magnitude_khz": [2.0], "theta_deg": [90], "phi_deg": [90]}}
    )
    assert np.allclose(hyperfine_vectors(polar), [[0, 2, 0]], atol=1e-12)
    B, _ = model_hamiltonians(polar)
    assert np.allclose(B, khz(2.0) * PAULI_Y / 2)


def test_pair_coupling_sets_distance():
    model = normalize_model(
        {
            "type": "spin_bath", "t": 1, "hyperfine_khz": [[0, 0, 1], [0, 0, 2]],
            "pair_coupling": {"hz": 11.6, "theta_deg": 0, "phi_deg": 0},
        }
    )
    _, C = model_hamiltonians(model)
    # r along z: C = D (I.I - 3 Iz Iz) with D = 11.6 Hz in rad/ms
    d = khz(11.6e-3)
    ref = d * (np.kron(PAULI_X, PAULI_X) + np.kron(PAULI_Y, PAULI_Y) - 2 * np.kron(PAULI_Z, PAULI_Z)) / 4
    assert np.allclose(C, ref, atol=1e-12)


def test_dd_detuning_fraction():
    model = normalize_model({"type": "dd_effective", "t": 1, "hyperfine_khz": [[1, 0, 0]], "field_gauss": 200, "detuning_fraction": 1e-3})
    _, C = model_hamiltonians(model)
    assert np.allclose(C, 1e-3 * 1345.66 * PAULI_Z / 2, rtol=1e-5)


def test_kraus_model_reports_tp_residual():
    cfg = config_from_dict({"schema": 1, "model": {"type": "kraus", "kraus": [[[1.1, 0], [0, 1.1]]]}})
    built = build_model(cfg.model)
    assert built.description["kraus_tp_residual"] == pytest.approx(0.21)
    with pytest.raises(ConfigError):
        config_from_dict({"schema": 1, "model": {"type": "kraus", "kraus": ["Z"]}, "run": {"gamma_scan": {"start": 0, "stop": 1}}})


def test_initial_states_and_observables():
    built = build_model(config_from_dict(base()).model)
    assert np.allclose(initial_state("maximally_mixed", built), np.eye(2) / 2)
    assert np.allclose(initial_state({"b_eigenstate": 0}, built), np.diag([0, 1]))
    assert np.allclose(initial_state([[1, 0], [0, 0]], built), np.diag([1, 0]))
    with pytest.raises(ConfigError):
        initial_state([[2, 0], [0, 0]], built)
    with pytest.raises(ConfigError):
        initial_state({"b_eigenstate": 2}, built)
    assert [o.name for o in build_observables(None, built)] == ["sigma_z"]
    obs = build_observables([{"name": "p0", "fidelity": [[1, 0], [0, 0]]}, "X"], built)
    assert [o.kind for o in obs] == ["fidelity", "expect"]
    with pytest.raises(ConfigError):
        build_observables(["Z", "Z"], built)
    with pytest.raises(ConfigError):
        build_observables([{"name": "bad"}], built)


def test_multi_qubit_default_observables():
    built = build_model(load_config(CONFIGS[[p.name for p in CONFIGS].index("nv_two_qubit.json")]).model)
    assert [o.name for o in build_observables(None, built)] == ["F1", "F2", "F3", "F4"]


paulis = st.text(alphabet="IXYZ", min_size=1, max_size=1)


@given(
    b=paulis,
    c=paulis,
    gamma=st.floats(0, 1),
    t=st.floats(0.01, 10),
    samples=st.integers(1, 10**6),
    rounds=st.lists(st.integers(1, 10**5), min_size=1, max_size=5, unique=True).map(sorted),
    seed=st.integers(0, 2**63 - 1),
    bins=st.none() | st.integers(2, 200),
    window=st.none() | st.tuples(st.integers(0, 50), st.integers(51, 100)).map(list),
)
@settings(max_examples=60)
def test_round_trip_property(b, c, gamma, t, samples, rounds, seed, bins, window):
    tree = {
        "schema": 1,
        "model": {"type": "single_qubit", "B": b, "C": c, "gamma": gamma, "t": t},
        "run": {"samples": samples, "rounds": rounds, "seed": seed, "bins": bins, "window": window, "thresholds": [-0.5, 0.0, 0.5]},
        "output": {"dir": "x"},
    }
    cfg = config_from_dict(tree)
    assert loads(cfg.dumps()) == cfg
    assert config_from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
