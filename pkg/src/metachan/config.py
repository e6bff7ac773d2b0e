"""Experiment configuration: a versioned JSON tree describing a model, a run and an output directory.

Operators are given as Pauli strings (``"Z"``, ``"XI"``), names
(``"sigma_minus"``, ``"zero"``, ``"identity"``), real nested lists or
``{"re": [[...]], "im": [[...]]}``. Frequencies in spin models are in kHz
(converted to rad/ms) and times in ms.
"""

import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import reduce

import numpy as np

from .channels import natural_from_kraus, tp_residual_kraus
from .hs_algebra import PAULI_I, PAULI_X, PAULI_Y, PAULI_Z, SIGMA_MINUS, check_state
from .models import (
    ConditionalMaps,
    LindbladSpec,
    RimSpec,
    SpinSystem,
    dd_effective_hamiltonians,
    dissipative_rim_maps,
    khz,
    larmor_from_field,
    rim_channel,
    separation_for_coupling,
    spin_bath_hamiltonians,
)
from .trajectories import DEFAULT_STEP_BUDGET, Observable, parse_thresholds

SCHEMA_VERSION = 1
MODEL_TYPES = ("single_qubit", "spin_bath", "dd_effective", "dissipative", "kraus")
PAULI = {"I": PAULI_I, "X": PAULI_X, "Y": PAULI_Y, "Z": PAULI_Z}
NAMED = {
    "sigma_x": PAULI_X,
    "sigma_y": PAULI_Y,
    "sigma_z": PAULI_Z,
    "sigma_minus": SIGMA_MINUS,
    "sigma_plus": SIGMA_MINUS.conj().T,
}


class ConfigError(ValueError):
    pass


def parse_operator(spec, name="operator", dim=None):
    """Operator from its config form; ``dim`` is needed for ``"zero"`` and ``"identity"``."""
    if isinstance(spec, str):
        key = spec.strip()
        if key in NAMED:
            op = NAMED[key]
        elif key in ("zero", "identity"):
            if dim is None:
                raise ConfigError(f"{name}: '{key}' needs a known dimension")
            op = np.zeros((dim, dim)) if key == "zero" else np.eye(dim)
        elif key and set(key) <= set(PAULI):
            op = reduce(np.kron, [PAULI[c] for c in key])
        else:
            raise ConfigError(f"{name}: unknown operator name {spec!r}")
    elif isinstance(spec, dict):
        if set(spec) - {"re", "im"} or "re" not in spec:
            raise ConfigError(f"{name}: matrix objects need 're' and optional 'im'")
        try:
            re = np.array(spec["re"], dtype=float)
            im = np.array(spec.get("im", np.zeros_like(re)), dtype=float)
            op = re + 1j * im
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: {exc}") from exc
    elif isinstance(spec, list):
        try:
            op = np.array(spec, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: {exc}") from exc
    else:
        raise ConfigError(f"{name}: unsupported operator specification {spec!r}")
    op = np.asarray(op, dtype=complex)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise ConfigError(f"{name}: operator must be square, got shape {op.shape}")
    if dim is not None and op.shape[0] != dim:
        raise ConfigError(f"{name}: expected dimension {dim}, got {op.shape[0]}")
    if not np.all(np.isfinite(op)):
        raise ConfigError(f"{name}: non-finite entries")
    return op


def operator_spec(op):
    op = np.asarray(op, dtype=complex)
    return {"re": op.real.tolist(), "im": op.imag.tolist()}


def _number(d, key, default=None, positive=False, nonneg=False, required=False):
    if key not in d or d[key] is None:
        if required:
            raise ConfigError(f"missing required field {key!r}")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key!r} must be a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(f"{key!r} must be finite")
    if positive and v <= 0:
        raise ConfigError(f"{key!r} must be positive")
    if nonneg and v < 0:
        raise ConfigError(f"{key!r} must be non-negative")
    return v


def _int(v, key, minimum=None):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ConfigError(f"{key!r} must be an integer, got {v!r}")
    v = int(v)
    if minimum is not None and v < minimum:
        raise ConfigError(f"{key!r} must be at least {minimum}")
    return v


def _unit(theta_deg, phi_deg):
    th, ph = math.radians(theta_deg), math.radians(phi_deg)
    return np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)])


_COMMON = {"type", "gamma", "delta_phi", "t"}
_ALLOWED = {
    "single_qubit": _COMMON | {"B", "C"},
    "dissipative": _COMMON | {"B", "C", "jumps", "phi2"},
    "spin_bath": _COMMON | {"hyperfine_khz", "hyperfine_polar", "positions_nm", "pair_coupling", "field_gauss", "include_zeeman"},
    "dd_effective": _COMMON | {"hyperfine_khz", "hyperfine_polar", "field_gauss", "detuning", "detuning_fraction"},
    "kraus": {"type", "kraus"},
}


def normalize_model(model):
    """Validate a model block and fill defaults; returns a new JSON-compatible dict."""
    if not isinstance(model, dict):
        raise ConfigError("'model' must be an object")
    kind = model.get("type")
    if kind not in MODEL_TYPES:
        raise ConfigError(f"model type must be one of {MODEL_TYPES}, got {kind!r}")
    extra = set(model) - _ALLOWED[kind]
    if extra:
        raise ConfigError(f"unknown fields for model {kind!r}: {sorted(extra)}")
    out = {"type": kind}
    if kind == "kraus":
        ops = model.get("kraus")
        if not isinstance(ops, list) or not ops:
            raise ConfigError("kraus model needs a non-empty 'kraus' list")
        out["kraus"] = [operator_spec(parse_operator(s, f"kraus[{i}]")) for i, s in enumerate(ops)]
        return out
    out["gamma"] = _number(model, "gamma", 1.0 if kind in ("spin_bath", "dd_effective") else 0.0, nonneg=True)
    out["delta_phi"] = _number(model, "delta_phi", math.pi / 2)
    out["t"] = _number(model, "t", 1.0 if kind in ("single_qubit", "dissipative") else None, positive=True, required=kind in ("spin_bath", "dd_effective"))
    if kind in ("single_qubit", "dissipative"):
        if "B" not in model:
            raise ConfigError("missing required field 'B'")
        b = parse_operator(model["B"], "B")
        if b.shape != (2, 2):
            raise ConfigError(f"{kind} models act on a qubit; B has dimension {b.shape[0]}")
        c = parse_operator(model.get("C", "zero"), "C", 2)
        out["B"] = model["B"]
        out["C"] = model.get("C", "zero")
        for key, op in (("B", b), ("C", c)):
            if np.max(np.abs(op - op.conj().T)) > 1e-12:
                raise ConfigError(f"{key} must be Hermitian")
    if kind == "dissipative":
        jumps = model.get("jumps", [])
        if not isinstance(jumps, list):
            raise ConfigError("'jumps' must be a list")
        norm = []
        for i, j in enumerate(jumps):
            if not isinstance(j, dict) or "op" not in j:
                raise ConfigError(f"jumps[{i}] needs 'op' and 'rate'")
            parse_operator(j["op"], f"jumps[{i}].op", 2)
            norm.append({"op": j["op"], "rate": _number(j, "rate", required=True, nonneg=True)})
        out["jumps"] = norm
        out["phi2"] = _number(model, "phi2", 0.0)
    if kind in ("spin_bath", "dd_effective"):
        out.update(_normalize_hyperfine(model))
        out["field_gauss"] = _number(model, "field_gauss", 0.0, nonneg=True)
    if kind == "spin_bath":
        k = len(hyperfine_vectors(out))
        if "positions_nm" in model and "pair_coupling" in model:
            raise ConfigError("give either 'positions_nm' or 'pair_coupling'")
        if "positions_nm" in model:
            pos = np.array(model["positions_nm"], dtype=float)
            if pos.shape != (k, 3):
                raise ConfigError(f"positions_nm must have shape ({k}, 3)")
            out["positions_nm"] = pos.tolist()
        elif "pair_coupling" in model:
            pc = model["pair_coupling"]
            if k != 2 or not isinstance(pc, dict):
                raise ConfigError("'pair_coupling' needs exactly two spins and an object value")
            out["pair_coupling"] = {
                "hz": _number(pc, "hz", required=True, positive=True),
                "theta_deg": _number(pc, "theta_deg", 0.0),
                "phi_deg": _number(pc, "phi_deg", 0.0),
            }
        out["include_zeeman"] = bool(model.get("include_zeeman", False))
    if kind == "dd_effective":
        if "detuning" in model and "detuning_fraction" in model:
            raise ConfigError("give either 'detuning' (rad/ms) or 'detuning_fraction' (of the Larmor frequency)")
        if "detuning_fraction" in model:
            out["detuning_fraction"] = _number(model, "detuning_fraction", required=True)
        else:
            out["detuning"] = _number(model, "detuning", 0.0)
    return out


def _normalize_hyperfine(model):
    if ("hyperfine_khz" in model) == ("hyperfine_polar" in model):
        raise ConfigError("give exactly one of 'hyperfine_khz' and 'hyperfine_polar'")
    if "hyperfine_khz" in model:
        a = np.array(model["hyperfine_khz"], dtype=float)
        if a.ndim != 2 or a.shape[1] != 3:
            raise ConfigError("hyperfine_khz must be a list of [ax, ay, az] rows")
    else:
        hp = model["hyperfine_polar"]
        try:
            mag = np.array(hp["magnitude_khz"], dtype=float)
            th = np.array(hp["theta_deg"], dtype=float)
            ph = np.array(hp["phi_deg"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"hyperfine_polar needs magnitude_khz, theta_deg, phi_deg lists ({exc})") from exc
        if not (mag.shape == th.shape == ph.shape) or mag.ndim != 1:
            raise ConfigError("hyperfine_polar lists must have equal length")
        if not 1 <= mag.size <= 5:
            raise ConfigError("between 1 and 5 target spins are supported")
        return {"hyperfine_polar": {"magnitude_khz": mag.tolist(), "theta_deg": th.tolist(), "phi_deg": ph.tolist()}}
    if not 1 <= a.shape[0] <= 5:
        raise ConfigError("between 1 and 5 target spins are supported")
    return {"hyperfine_khz": a.tolist()}


def hyperfine_vectors(model):
    """Hyperfine vectors in kHz, shape ``(K, 3)``."""
    if "hyperfine_khz" in model:
        return np.array(model["hyperfine_khz"], dtype=float)
    hp = model["hyperfine_polar"]
    return np.array([m * _unit(t, p) for m, t, p in zip(hp["magnitude_khz"], hp["theta_deg"], hp["phi_deg"])])


@dataclass(frozen=True)
class RunConfig:
    samples: int = 10000
    rounds: tuple = (10, 100, 1000)
    checkpoints: tuple = ()
    bins: int = None
    seed: int = 0
    thresholds: tuple = None
    l: int = None
    eps_unit: float = 1e-10
    window: tuple = None
    rho0: object = "maximally_mixed"
    observables: object = None
    step_budget: float = DEFAULT_STEP_BUDGET
    gamma_scan: dict = None
    emit_trajectories: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    model: dict
    run: RunConfig = field(default_factory=RunConfig)
    output: str = "out"
    schema: int = SCHEMA_VERSION
    description: str = ""

    def to_dict(self):
        run = asdict(self.run)
        for key in ("rounds", "checkpoints", "thresholds", "window"):
            if run[key] is not None:
                run[key] = list(run[key])
        tree = {"schema": self.schema, "model": self.model, "run": run, "output": {"dir": self.output}}
        if self.description:
            tree["description"] = self.description
        return tree

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_overrides(self, seed=None, out=None, emit_trajectories=None):
        run = self.run
        if seed is not None:
            run = replace(run, seed=_int(seed, "seed", 0))
        if emit_trajectories:
            run = replace(run, emit_trajectories=True)
        return replace(self, run=run, output=self.output if out is None else str(out))


def _normalize_run(run):
    if not isinstance(run, dict):
        raise ConfigError("'run' must be an object")
    allowed = set(RunConfig.__dataclass_fields__)
    extra = set(run) - allowed
    if extra:
        raise ConfigError(f"unknown run fields: {sorted(extra)}")
    d = RunConfig()
    kw = {}
    kw["samples"] = _int(run.get("samples", d.samples), "samples", 1)
    rounds = run.get("rounds", list(d.rounds))
    if not isinstance(rounds, list) or not rounds:
        raise ConfigError("'rounds' must be a non-empty list")
    rounds = tuple(_int(r, "rounds", 1) for r in rounds)
    if any(b <= a for a, b in zip(rounds, rounds[1:])):
        raise ConfigError("'rounds' must be strictly increasing positive integers")
    kw["rounds"] = rounds
    cks = run.get("checkpoints", [])
    if not isinstance(cks, list):
        raise ConfigError("'checkpoints' must be a list")
    kw["checkpoints"] = tuple(sorted({_int(c, "checkpoints", 1) for c in cks}))
    if run.get("bins") is not None:
        kw["bins"] = _int(run["bins"], "bins", 2)
    kw["seed"] = _int(run.get("seed", 0), "seed", 0)
    if run.get("thresholds") is not None:
        try:
            kw["thresholds"] = tuple(float(x) for x in parse_thresholds(run["thresholds"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"thresholds: {exc}") from exc
    if run.get("l") is not None:
        kw["l"] = _int(run["l"], "l", 1)
    kw["eps_unit"] = _number(run, "eps_unit", d.eps_unit, positive=True)
    if run.get("window") is not None:
        w = run["window"]
        if not isinstance(w, list) or len(w) != 2:
            raise ConfigError("'window' must be [start, end]")
        w = tuple(_int(x, "window", 0) for x in w)
        if w[1] <= w[0]:
            raise ConfigError("'window' must have end > start")
        kw["window"] = w
    kw["rho0"] = run.get("rho0", d.rho0)
    kw["observables"] = run.get("observables")
    kw["step_budget"] = _number(run, "step_budget", d.step_budget, positive=True)
    if run.get("gamma_scan") is not None:
        gs = run["gamma_scan"]
        if not isinstance(gs, dict):
            raise ConfigError("'gamma_scan' must be an object")
        kw["gamma_scan"] = {
            "start": _number(gs, "start", required=True, nonneg=True),
            "stop": _number(gs, "stop", required=True, nonneg=True),
            "num": _int(gs.get("num", 2), "num", 1),
        }
    kw["emit_trajectories"] = bool(run.get("emit_trajectories", False))
    return RunConfig(**kw)


def config_from_dict(tree):
    if not isinstance(tree, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(tree) - {"schema", "model", "run", "output", "description"}
    if extra:
        raise ConfigError(f"unknown top-level fields: {sorted(extra)}")
    if tree.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema {tree.get('schema')!r}; expected {SCHEMA_VERSION}")
    if "model" not in tree:
        raise ConfigError("missing 'model'")
    model = normalize_model(tree["model"])
    run = _normalize_run(tree.get("run", {}))
    out = tree.get("output", {})
    if not isinstance(out, dict) or not isinstance(out.get("dir", "out"), str):
        raise ConfigError("'output' must be an object with a string 'dir'")
    description = tree.get("description", "")
    if not isinstance(description, str):
        raise ConfigError("'description' must be a string")
    cfg = ExperimentConfig(model=model, run=run, output=out.get("dir", "out"), description=description)
    if cfg.run.gamma_scan is not None and model["type"] == "kraus":
        raise ConfigError("gamma_scan is not available for the kraus model")
    return cfg


def loads(text):
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return config_from_dict(tree)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return loads(text)


@dataclass(frozen=True, eq=False)
class BuiltModel:
    """Channel data derived from a model block."""

    natural: np.ndarray
    maps: ConditionalMaps
    kraus: tuple
    B: np.ndarray
    dim: int
    description: dict


def _spin_system(model, with_positions):
    a = khz(hyperfine_vectors(model))
    larmor = larmor_from_field(model["field_gauss"])
    positions = None
    if with_positions:
        if "positions_nm" in model:
            positions = np.array(model["positions_nm"], dtype=float)
        elif "pair_coupling" in model:
            pc = model["pair_coupling"]
            r = separation_for_coupling(khz(pc["hz"] * 1e-3))
            positions = np.array([np.zeros(3), r * _unit(pc["theta_deg"], pc["phi_deg"])])
    return SpinSystem(a, positions, larmor)


def model_hamiltonians(model):
    """``(B, C)`` of a RIM-type model block."""
    kind = model["type"]
    if kind in ("single_qubit", "dissipative"):
        return parse_operator(model["B"], "B", 2), parse_operator(model["C"], "C", 2)
    if kind == "spin_bath":
        return spin_bath_hamiltonians(_spin_system(model, True), model["include_zeeman"])
    if kind == "dd_effective":
        system = _spin_system(model, False)
        dw = model["detuning_fraction"] * system.larmor if "detuning_fraction" in model else model["detuning"]
        return dd_effective_hamiltonians(system, dw)
    raise ConfigError(f"model {kind!r} has no Hamiltonian form")


def build_model(model, gamma=None):
    """Channel, outcome maps and ``B`` for a normalized model block."""
    kind = model["type"]
    if kind == "kraus":
        ops = [parse_operator(s, "kraus") for s in model["kraus"]]
        if len({o.shape for o in ops}) != 1:
            raise ConfigError("Kraus operators have different dimensions")
        maps = ConditionalMaps(tuple(np.kron(o, o.conj()) for o in ops), tuple(ops))
        return BuiltModel(natural_from_kraus(ops), maps, tuple(ops), None, ops[0].shape[0],
                          {"type": kind, "kraus_tp_residual": tp_residual_kraus(ops)})
    B, C = model_hamiltonians(model)
    g = model["gamma"] if gamma is None else float(gamma)
    try:
        spec = RimSpec(B, C, g, model["delta_phi"], model["t"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if kind == "dissipative":
        jumps = LindbladSpec(tuple((parse_operator(j["op"], "jump", 2), j["rate"]) for j in model["jumps"]))
        maps = dissipative_rim_maps(spec, jumps, model["phi2"])
        return BuiltModel(maps.natural, maps, (), spec.B, 2, {"type": kind, "gamma": g})
    ch, maps = rim_channel(spec)
    desc = {"type": kind, "gamma": g, "norm_B_t": float(np.linalg.norm(spec.B, 2) * spec.t)}
    return BuiltModel(ch.natural, maps, ch.kraus, spec.B, spec.dim, desc)


def initial_state(spec, built):
    d = built.dim
    if spec == "maximally_mixed":
        return np.eye(d, dtype=complex) / d
    if isinstance(spec, dict) and "b_eigenstate" in spec:
        if built.B is None:
            raise ConfigError("b_eigenstate needs a model with B")
        j = _int(spec["b_eigenstate"], "b_eigenstate", 0)
        _, v = np.linalg.eigh(built.B)
        if j >= d:
            raise ConfigError(f"b_eigenstate index {j} out of range")
        return np.outer(v[:, j], v[:, j].conj())
    rho = parse_operator(spec, "rho0", d)
    try:
        return check_state(rho, name="rho0")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_observables(spec, built):
    """Observable list; the default is ``sigma_z`` for a qubit and B-eigenstate fidelities otherwise."""
    if spec is None:
        spec = ["sigma_z"] if built.dim == 2 else ["b_fidelities"]
    if not isinstance(spec, list):
        raise ConfigError("'observables' must be a list")
    out = []
    for i, item in enumerate(spec):
        if item == "b_fidelities":
            if built.B is None:
                raise ConfigError("b_fidelities needs a model with B")
            _, v = np.linalg.eigh(built.B)
            out.extend(Observable.fidelity(f"F{j + 1}", v[:, j]) for j in range(built.dim))
        elif isinstance(item, str):
            out.append(Observable.expectation(item, parse_operator(item, f"observables[{i}]", built.dim)))
        elif isinstance(item, dict) and "name" in item and ("op" in item) != ("fidelity" in item):
            if "op" in item:
                out.append(Observable.expectation(item["name"], parse_operator(item["op"], item["name"], built.dim)))
            else:
                out.append(Observable.fidelity(item["name"], parse_operator(item["fidelity"], item["name"], built.dim)))
        else:
            raise ConfigError(f"observables[{i}]: expected a name, 'b_fidelities' or an object with name and op/fidelity")
    names = [o.name for o in out]
    if len(set(names)) != len(names):
        raise ConfigError("observable names must be unique")
    return out
