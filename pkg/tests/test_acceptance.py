"""Acceptance criteria 1 to 11, each at its stated tolerance.

Every test records one ``criterion NN PASS|FAIL`` line, printed immediately
and repeated in the pytest terminal summary.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import random_hermitian, random_state, random_unitary
from metachan import cli
from metachan.channels import power, validate
from metachan.config import build_model, config_from_dict, load_config
from metachan.hs_algebra import PAULI_X, PAULI_Z, trace_distance
from metachan.manifold import commutant_projections, ems_from_modes, ems_qubit, fixed_point_space, mm_projector
from metachan.models import RimSpec, rim_channel
from metachan.spectral import classify_spectrum, spectral_decompose
from metachan.trajectories import (
    Observable,
    branch_sum,
    channel_power_state,
    classify_and_average,
    find_peaks,
    polarization_histogram,
    run_ensemble,
)

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"
X_PEAK = np.sin(2) / 2


def record(log, number, title, ok, detail, elapsed):
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'} {title} ({detail}; {elapsed:.1f} s)"
    print(line)
    log.append(line)
    return ok


def qubit(gamma=0.05):
    return rim_channel(RimSpec(PAULI_Z, PAULI_X if gamma else np.zeros((2, 2)), gamma, np.pi / 2, 1.0))


def test_criterion_01_gamma_zero_spectrum(acceptance_log):
    t0 = time.perf_counter()
    ch, _ = qubit(0.0)
    w = spectral_decompose(ch).eigenvalues
    ref = np.array([1, 1, np.cos(2), np.cos(2)])
    err = float(np.max(np.abs(np.sort_complex(w) - np.sort_complex(ref))))
    elapsed = time.perf_counter() - t0
    ok = err < 1e-10 and elapsed < 1
    assert record(acceptance_log, 1, "gamma=0 spectrum {1,1,cos2,cos2}", ok, f"max error {err:.1e}", elapsed)


def test_criterion_02_cptp_suite(acceptance_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = dict(tp=0.0, choi=np.inf, unital=0.0, biorth=0.0, trace=0.0)
    diag = 0
    for k in range(100):
        d = (2, 4)[k % 2]
        spec = RimSpec(random_hermitian(rng, d), random_hermitian(rng, d), rng.uniform(0, 0.5), np.pi / 2, 1.0)
        ch, _ = rim_channel(spec)
        rep = validate(ch)
        worst["tp"] = max(worst["tp"], rep.tp_residual)
        worst["choi"] = min(worst["choi"], rep.min_choi_eigenvalue)
        worst["unital"] = max(worst["unital"], rep.unital_residual)
        sd = spectral_decompose(ch)
        if sd.diagonalizable:
            diag += 1
            worst["biorth"] = max(worst["biorth"], sd.biorthonormality_residual())
            for j in np.flatnonzero(np.abs(sd.eigenvalues) < 1 - 1e-10):
                worst["trace"] = max(worst["trace"], abs(np.trace(sd.right_op(j))))
    elapsed = time.perf_counter() - t0
    ok = (
        worst["tp"] < 1e-10 and worst["choi"] > -1e-10 and worst["unital"] < 1e-10
        and worst["biorth"] < 1e-8 and worst["trace"] < 1e-8 and elapsed < 30
    )
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {diag}/100 diagonalizable"
    assert record(acceptance_log, 2, "CPTP and unitality over 100 random channels", ok, detail, elapsed)


def _block_pair(rng, d):
    """Non-commuting B, C sharing a two-block decomposition, so the commutant has dimension 2."""
    sizes = (1, 2) if d == 3 else (d // 2, d - d // 2)
    u = random_unitary(rng, d)
    B = np.zeros((d, d), dtype=complex)
    C = np.zeros((d, d), dtype=complex)
    start = 0
    for s in sizes:
        B[start:start + s, start:start + s] = random_hermitian(rng, s)
        C[start:start + s, start:start + s] = random_hermitian(rng, s)
        start += s
    return u @ B @ u.conj().T, u @ C @ u.conj().T


def test_criterion_03_fixed_points_vs_commutant(acceptance_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    mismatches, worst_comm, dims = 0, 0.0, []
    for k in range(40):
        d = (2, 3, 4)[k % 3]
        if k < 20:
            u = random_unitary(rng, d)
            B = u @ np.diag(rng.standard_normal(d)) @ u.conj().T
            C = u @ np.diag(rng.standard_normal(d)) @ u.conj().T
        elif k % 2 == 0 and d > 2:
            B, C = _block_pair(rng, d)
        else:
            B, C = random_hermitian(rng, d), random_hermitian(rng, d)
        ch, _ = rim_channel(RimSpec(B, C, rng.uniform(0.05, 0.5), np.pi / 2, 1.0))
        sd = spectral_decompose(ch)
        multiplicity = int(np.sum(np.abs(sd.eigenvalues - 1) <= 1e-9))
        commutant = commutant_projections(B, C).dimension
        mismatches += multiplicity != commutant
        dims.append(commutant)
        fps = fixed_point_space(sd, ch)
        worst_comm = max(worst_comm, fps.commutation_residual(ch.kraus))
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and worst_comm < 1e-8 and elapsed < 60
    detail = f"{mismatches} mismatches, commutant dims {sorted(set(dims))}, max commutator {worst_comm:.1e}"
    assert record(acceptance_log, 3, "eigenvalue-1 multiplicity equals commutant dimension", ok, detail, elapsed)


def test_criterion_04_textbook_ems(acceptance_log):
    t0 = time.perf_counter()
    mm = ems_from_modes(np.diag([0.5, -0.5]), np.diag([1.0, -1.0]))
    errs = [
        abs(mm.h - 1),
        np.max(np.abs(mm.ems[0] - np.diag([1, 0]))),
        np.max(np.abs(mm.ems[1] - np.diag([0, 1]))),
        np.max(np.abs(mm.duals[0] - np.diag([1, 0]))),
    ]
    elapsed = time.perf_counter() - t0
    ok = max(errs) < 1e-12
    assert record(acceptance_log, 4, "textbook EMS h=1, rho1=|0><0|, rho2=|1><1|, P1=|0><0|", ok, f"max error {max(errs):.1e}", elapsed)


def test_criterion_05_unraveling_consistency(acceptance_log):
    t0 = time.perf_counter()
    ch, maps = qubit()
    rho0 = np.diag([1.0, 0.0]).astype(complex)
    total, _ = branch_sum(maps, rho0, 10)
    exact = trace_distance(total, channel_power_state(ch, rho0, 10))
    ens = run_ensemble(maps, rho0, 1000, 10_000, [10, 100, 1000], master_seed=55)
    mc = [trace_distance(ens.mean_states[k], channel_power_state(ch, rho0, m)) for k, m in enumerate(ens.checkpoints)]
    elapsed = time.perf_counter() - t0
    ok = exact < 1e-10 and max(mc) < 0.05 and elapsed < 120
    detail = f"branch sum {exact:.1e}, MC at m=10/100/1000: " + "/".join(f"{x:.4f}" for x in mc)
    assert record(acceptance_log, 5, "unraveling consistency", ok, detail, elapsed)


@pytest.fixture(scope="module")
def qubit_run():
    cfg = load_config(CONFIGS / "single_qubit.json")
    built = build_model(cfg.model)
    sd = spectral_decompose(built.natural)
    _, region = classify_spectrum(sd)
    lo, hi = 2 * region.mu_double_prime, region.mu_prime / 2
    plateau = [m for m in (3, 5, 10, 15, 30, 50, 75, int(np.floor(hi))) if lo <= m <= hi]
    late = cfg.run.rounds[-1]
    cks = sorted({region.midpoint, late, *plateau, *cfg.run.checkpoints})
    obs = [Observable.expectation("sigma_z", PAULI_Z)]
    t0 = time.perf_counter()
    ens = run_ensemble(built.maps, np.eye(2) / 2, late, cfg.run.samples, cks, cfg.run.seed, obs)
    return region, plateau, late, ens, time.perf_counter() - t0


def test_criterion_06_single_qubit_metastability(acceptance_log, qubit_run):
    region, plateau, late, ens, sim_time = qubit_run
    t0 = time.perf_counter()
    mid = region.midpoint
    loc, _ = find_peaks(polarization_histogram(ens, m=mid))
    ok_a = len(loc) == 2 and np.allclose(np.sort(loc), [-X_PEAK, X_PEAK], atol=0.05)

    curves = classify_and_average(ens, None, "sigma_z", plateau)
    low, high = curves.means[0], curves.means[2]
    ok_b = bool(np.all(np.abs(low) > 0.8) and np.all(np.abs(high) > 0.8) and np.all(low < 0) and np.all(high > 0))

    late_loc, _ = find_peaks(polarization_histogram(ens, m=late))
    frac = float(np.mean(np.abs(ens.polarization(late)) < 0.1))
    ok_c = late >= 10 * region.mu_prime and len(late_loc) == 1 and abs(late_loc[0]) < 0.1 and frac > 0.8

    elapsed = sim_time + time.perf_counter() - t0
    detail = (
        f"(a) m*={mid}: {len(loc)} peaks at {np.round(np.sort(loc), 3).tolist()}; "
        f"(b) rounds {plateau}: min |<sz>| {min(np.abs(low).min(), np.abs(high).min()):.3f}; "
        f"(c) m={late} ({late / region.mu_prime:.0f} mu'): {len(late_loc)} peak, {frac:.1%} within |X|<0.1"
    )
    ok = ok_a and ok_b and ok_c and elapsed < 300
    assert record(acceptance_log, 6, "single-qubit metastability", ok, detail, elapsed)


def test_criterion_07_nv_two_qubit(acceptance_log):
    t0 = time.perf_counter()
    cfg = load_config(CONFIGS / "nv_two_qubit.json")
    built = build_model(cfg.model)
    sd = spectral_decompose(built.natural)
    _, region = classify_spectrum(sd)
    mid = region.midpoint
    late = cfg.run.rounds[-1]
    lo, hi = 2 * region.mu_double_prime, region.mu_prime / 2
    window = sorted(m for m in {*cfg.run.checkpoints, *cfg.run.rounds, mid} if lo <= m <= hi)
    _, v = np.linalg.eigh(built.B)
    obs = [Observable.fidelity(f"F{j + 1}", v[:, j]) for j in range(4)]
    cks = sorted({*cfg.run.checkpoints, *cfg.run.rounds, mid})
    ens = run_ensemble(built.maps, np.eye(4) / 4, late, cfg.run.samples, cks, cfg.run.seed, obs)

    n_mid = len(find_peaks(polarization_histogram(ens, bins=cfg.run.bins, m=mid))[0])
    n_late = len(find_peaks(polarization_histogram(ens, bins=cfg.run.bins, m=late))[0])
    # a plateau: one fidelity stays above 0.9 in a class at every window round
    dominant = []
    for c in range(4):
        means = np.array([classify_and_average(ens, cfg.run.thresholds, f"F{j + 1}", window).means[c] for j in range(4)])
        j = int(np.nanargmax(np.nanmin(means, axis=1)))
        dominant.append((j, float(np.nanmin(means[j]))))
    plateaus = {j for j, low in dominant if low > 0.9}
    elapsed = time.perf_counter() - t0
    ok = region.l == 4 and n_mid == 4 and late >= 10 * region.mu_prime and n_late == 1 and len(plateaus) == 4 and elapsed < 600
    detail = (
        f"l={region.l}, window ({region.mu_double_prime:.1f}, {region.mu_prime:.1f}); {n_mid} peaks at m={mid}; "
        f"{n_late} peak at m={late}; class plateaus (F index, min) {[(j + 1, round(x, 3)) for j, x in dominant]}"
    )
    assert record(acceptance_log, 7, "two-qubit NV: 4 peaks, 1 late peak, 4 fidelity plateaus", ok, detail, elapsed)


def test_criterion_08_dd_resonance(acceptance_log):
    t0 = time.perf_counter()
    tree = json.loads((CONFIGS / "dd_two_qubit.json").read_text())
    results = {}
    for frac in (0.0, 1e-3):
        tree["model"]["detuning_fraction"] = frac
        built = build_model(config_from_dict(tree).model)
        sd = spectral_decompose(built.natural)
        mult = int(np.sum(np.abs(sd.eigenvalues - 1) <= 1e-8))
        region = classify_spectrum(sd, eps_unit=1e-8)[1] if frac else None
        results[frac] = (mult, region)
    m0, _ = results[0.0]
    m1, region = results[1e-3]
    ratio = region.mu_prime / region.mu_double_prime if region else 0.0
    elapsed = time.perf_counter() - t0
    ok = m0 == 4 and m1 == 1 and ratio > 10
    detail = f"multiplicity {m0} on resonance, {m1} detuned; mu'={region.mu_prime:.2f}, mu''={region.mu_double_prime:.2f}, ratio {ratio:.2f}"
    assert record(acceptance_log, 8, "DD resonance versus detuning", ok, detail, elapsed)


def test_criterion_09_dissipation(acceptance_log):
    t0 = time.perf_counter()
    deph = load_config(CONFIGS / "dissipative_dephasing.json")
    clean_tree = deph.to_dict()
    clean_tree["model"]["jumps"] = []
    clean = config_from_dict(clean_tree)
    mid = classify_spectrum(spectral_decompose(build_model(clean.model).natural))[1].midpoint
    counts = []
    for cfg in (clean, deph):
        ens = run_ensemble(build_model(cfg.model).maps, np.eye(2) / 2, mid, cfg.run.samples, None, cfg.run.seed)
        counts.append(polarization_histogram(ens, m=mid).counts)
    expected, noisy = counts
    excess = np.abs(noisy - expected) / (3 * np.sqrt(np.maximum(expected, 1)))
    ok_deph = bool(np.all(excess < 1))

    decay = load_config(CONFIGS / "dissipative_decay.json")
    rounds = list(decay.run.rounds)
    ens = run_ensemble(build_model(decay.model).maps, np.eye(2) / 2, rounds[-1], decay.run.samples, rounds, decay.run.seed)
    mass = [int(np.sum(np.abs(ens.polarization(m) - X_PEAK) < 0.1)) for m in rounds]
    ok_decay = len(rounds) == 3 and all(b < a for a, b in zip(mass, mass[1:]))
    elapsed = time.perf_counter() - t0
    detail = (
        f"dephasing at m={mid}: max |diff|/(3 sqrt(expected)) {excess.max():.3f}; "
        f"relaxation mass near X=+{X_PEAK:.3f} at m={rounds}: {mass}"
    )
    assert record(acceptance_log, 9, "dissipation robustness", ok_deph and ok_decay, detail, elapsed)


def test_criterion_10_projector_quality(acceptance_log):
    t0 = time.perf_counter()
    ch, _ = qubit()
    sd = spectral_decompose(ch)
    _, region = classify_spectrum(sd)
    proj = mm_projector(ems_qubit(sd))
    rounds = {
        "m*": region.midpoint,
        "10mu'": int(round(10 * region.mu_prime)),
        "mu''/2": max(1, int(round(region.mu_double_prime / 2))),
    }
    err = {k: float(np.max(np.abs(power(ch, m) - proj))) for k, m in rounds.items()}
    elapsed = time.perf_counter() - t0
    ok = err["m*"] < err["10mu'"] and err["m*"] < err["mu''/2"]
    detail = ", ".join(f"{k}={rounds[k]}: {v:.4f}" for k, v in err.items())
    assert record(acceptance_log, 10, "projector best inside the window", ok, detail, elapsed)


def test_criterion_11_determinism(acceptance_log, tmp_path):
    t0 = time.perf_counter()
    tree = json.loads((CONFIGS / "single_qubit.json").read_text())
    tree["run"]["rounds"] = [15, 100, 1000]
    tree["run"]["checkpoints"] = [3, 5, 10, 30, 50, 200, 400]
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(tree))
    codes = [
        cli.main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / f"t{n}"), "--threads", str(n)])
        for n in (1, 8)
    ]
    names = sorted(p.name for p in (tmp_path / "t1").glob("*.csv"))
    same = [(tmp_path / "t1" / n).read_bytes() == (tmp_path / "t8" / n).read_bytes() for n in names]
    elapsed = time.perf_counter() - t0
    ok = codes == [0, 0] and len(names) == 4 and all(same)
    detail = f"exit codes {codes}, {sum(same)}/{len(names)} CSV files byte-identical"
    assert record(acceptance_log, 11, "1 vs 8 threads give identical CSVs", ok, detail, elapsed)
