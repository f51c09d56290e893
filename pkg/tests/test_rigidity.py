import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from s2flow.errors import PreconditionError, VacuousRegimeError
from s2flow.fields import (FOUR_PI, SphereMap, constant_map, degree, energy,
                           identity_map)
from s2flow.mobius import MobiusParams, pullback, sample
from s2flow.rigidity import (DEGENERATE_FACTOR, SWEEP_HEADER, calibrated_excess,
                             constant_sweep, default_excess_limit,
                             default_flow_config, energy_deficit,
                             excess_tension_probe, fit_mobius, fit_objective,
                             run_case, summarize_sweep, sup_gradient,
                             tension_floor, verify_rigidity, w12_identity_check,
                             write_sweep_csv, write_sweep_summary)
from s2flow.scenarios import ScenarioSpec, generate, standard_family

BASE = MobiusParams(np.array([0.9, 0.1, -0.2, 0.3]), np.array([0.1, -0.15, 0.2]))


def perturbed(mesh, eps, seed, mobius=None):
    spec = ScenarioSpec(kind="perturbed_mobius", level=mesh.level, seed=seed,
                        eps=eps, mobius=mobius)
    return generate(spec, mesh)


# --- calibration ------------------------------------------------------------

def test_energy_deficit_equals_area_deficit(mesh_l4):
    assert energy_deficit(mesh_l4) == pytest.approx(mesh_l4.area_deficit,
                                                    abs=1e-10)


def test_energy_deficit_cached(mesh_l4):
    assert energy_deficit(mesh_l4) is energy_deficit(mesh_l4) or \
        energy_deficit(mesh_l4) == energy_deficit(mesh_l4)
    assert "energy_deficit" in mesh_l4._cache


def test_calibrated_excess_of_identity_is_zero(mesh_l4):
    assert abs(calibrated_excess(identity_map(mesh_l4))) < 1e-12


def test_calibrated_excess_never_far_below_zero(mesh_l4):
    # exact conformal samples can dip slightly below the calibrated ground
    # level (the quadrature error grows with concentration); the dip stays
    # within a few multiples of the per-mesh calibration gap
    allowance = 5.0 * energy_deficit(mesh_l4)
    for rho in (0.0, 0.3, 0.6):
        params = MobiusParams(np.array([1.0, 0.0, 0.0, 0.0]),
                              np.array([0.0, 0.0, rho]))
        assert calibrated_excess(sample(params, mesh_l4)) >= -allowance
    u = perturbed(mesh_l4, eps=0.1, seed=3)
    assert calibrated_excess(u) >= -energy_deficit(mesh_l4)


@given(st.floats(0.0, 0.5), st.integers(0, 10**6))
def test_conformal_sample_excess_floor_property(mesh_l3, rho, seed):
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    params = MobiusParams(rng.standard_normal(4), rho * direction)
    u = sample(params, mesh_l3)
    assert calibrated_excess(u) >= -5.0 * energy_deficit(mesh_l3)


def test_tension_floor_positive_and_refining(mesh_l4, mesh_l5):
    f4, f5 = tension_floor(mesh_l4), tension_floor(mesh_l5)
    assert 0.0 < f5 < f4


def test_default_flow_config_sits_on_floor(mesh_l4):
    cfg = default_flow_config(mesh_l4)
    assert cfg.stop_tension == max(1e-4, 2.0 * tension_floor(mesh_l4))
    assert default_flow_config(mesh_l4, stop_tension=0.5).stop_tension == 0.5
    assert default_flow_config(mesh_l4, scheme="explicit").scheme == "explicit"


def test_default_excess_limit():
    assert default_excess_limit() == pytest.approx(math.pi / 5.0, rel=1e-15)
    assert default_excess_limit(2.0) < default_excess_limit(1.0)


# --- sup gradient -----------------------------------------------------------

def test_sup_gradient_identity_is_sqrt_two(mesh_l4):
    assert sup_gradient(identity_map(mesh_l4)) == pytest.approx(
        math.sqrt(2.0), rel=1e-12)


def test_sup_gradient_tracks_dilation_stretch(mesh_l4):
    # the interpolant's max gradient approaches sqrt(2) * lambda, the
    # continuum maximum of the conformal stretch
    rho = float(np.linalg.norm(BASE.a))
    lam = (1.0 + rho) / (1.0 - rho)
    sup = sup_gradient(sample(BASE, mesh_l4))
    assert abs(sup / (math.sqrt(2.0) * lam) - 1.0) < 0.05


# --- excess/tension probe ----------------------------------------------------

def test_probe_identity_is_degenerate(mesh_l4):
    p = excess_tension_probe(identity_map(mesh_l4))
    assert p.k == 1
    assert p.excess < 0.0
    assert p.degenerate
    assert math.isnan(p.ratio)


def test_probe_constant_map_is_degenerate(mesh_l4):
    # degree 0, energy 0: excess vanishes at mesh precision and the tension
    # is identically zero, so the ratio must come back flagged
    p = excess_tension_probe(constant_map(mesh_l4, [0.0, 0.0, 1.0]))
    assert p.k == 0
    assert abs(p.excess) < 1e-12
    assert p.degenerate
    assert math.isnan(p.ratio)


def test_probe_moderate_excess_is_informative(mesh_l5):
    p = excess_tension_probe(perturbed(mesh_l5, eps=0.2, seed=0))
    assert not p.degenerate
    assert p.excess > DEGENERATE_FACTOR * energy_deficit(mesh_l5)
    assert 0.0 < p.ratio < 1.0  # two orders under the working bound


def test_probe_rejects_large_excess(mesh_l3):
    # hand-built degree-1 map pushed far above the ground energy
    x = mesh_l3.vertices
    w = np.zeros_like(x)
    w[:, 0] = 1.0
    w -= np.einsum("ij,ij->i", w, x)[:, None] * x
    vals = x + 1.5 * w
    vals /= np.linalg.norm(vals, axis=1)[:, None]
    u = SphereMap(mesh_l3, vals)
    assert degree(u) == 1
    assert energy(u) - FOUR_PI > default_excess_limit()
    with pytest.raises(VacuousRegimeError):
        excess_tension_probe(u)


# --- conformal fit -----------------------------------------------------------

def test_fit_recovers_exact_sample(mesh_l4):
    u = sample(BASE, mesh_l4)
    f = fit_mobius(u)
    assert np.linalg.norm(f.a - BASE.a) < 1e-3
    assert min(np.linalg.norm(f.quat - BASE.quat),
               np.linalg.norm(f.quat + BASE.quat)) < 1e-3
    assert fit_objective(u, f) < 1e-8


def test_fit_identity(mesh_l3):
    f = fit_mobius(identity_map(mesh_l3))
    assert np.linalg.norm(f.a) < 1e-6
    ident = np.array([1.0, 0.0, 0.0, 0.0])
    assert min(np.linalg.norm(f.quat - ident), np.linalg.norm(f.quat + ident)) < 1e-6


def test_fit_beats_the_generating_parameters(mesh_l4):
    u = perturbed(mesh_l4, eps=0.1, seed=0, mobius=BASE)
    f = fit_mobius(u)
    assert fit_objective(u, f) <= fit_objective(u, BASE) + 1e-6


# --- seminorm decomposition ---------------------------------------------------

def test_w12_identity_exact_on_equal_maps(mesh_l4):
    w = w12_identity_check(sample(BASE, mesh_l4), BASE)
    assert w.lhs == 0.0 and w.rhs == 0.0 and w.relative_gap == 0.0


def test_w12_identity_constant_against_identity(mesh_l4):
    # both sides reduce to twice the identity energy, exactly, because the
    # mesh's energy deficit equals its area deficit
    w = w12_identity_check(constant_map(mesh_l4, [0.0, 0.0, 1.0]),
                           MobiusParams.identity())
    assert w.lhs == pytest.approx(2.0 * energy(identity_map(mesh_l4)), rel=1e-12)
    assert w.relative_gap < 1e-9


def test_w12_gap_small_and_refining(mesh_l4, mesh_l5):
    gaps = {}
    for mesh in (mesh_l4, mesh_l5):
        u = perturbed(mesh, eps=0.1, seed=0, mobius=BASE)
        gaps[mesh.level] = w12_identity_check(u, BASE).relative_gap
    assert gaps[5] < 0.02
    assert gaps[5] < 0.5 * gaps[4]


# --- the pipeline -------------------------------------------------------------

def test_verify_requires_degree_one(mesh_l3):
    with pytest.raises(PreconditionError):
        verify_rigidity(constant_map(mesh_l3, [0.0, 0.0, 1.0]))
    spec = ScenarioSpec(kind="rational_k", level=3, k=2)
    with pytest.raises(PreconditionError):
        verify_rigidity(generate(spec, mesh_l3))


def test_verify_rejects_vacuous_regime(mesh_l4):
    with pytest.raises(VacuousRegimeError):
        verify_rigidity(perturbed(mesh_l4, eps=0.1, seed=0),
                        excess_limit=1e-4)


def test_verify_mobius_sample(mesh_l4):
    rep = verify_rigidity(sample(BASE, mesh_l4))
    assert rep.flow_status == "Converged"
    assert np.linalg.norm(rep.balance_a + BASE.a) < 5e-3
    assert rep.degenerate and math.isnan(rep.ratio)
    assert rep.seminorm_dist < 0.01
    assert rep.mean_v_norm <= 1e-3


def test_verify_perturbed_case(mesh_l5):
    rep = verify_rigidity(perturbed(mesh_l5, eps=0.2, seed=0, mobius=BASE))
    assert rep.flow_status == "Converged"
    assert not rep.degenerate
    assert 1.0 < rep.ratio < 10.0
    assert rep.mean_v_norm <= 0.5
    assert rep.fitted_params is not None
    assert rep.fit_seminorm_dist >= 0.0
    assert rep.decomposition_residual < 0.05
    d = json.loads(rep.to_json())
    assert d["ratio"] == rep.ratio
    assert d["fitted_params"].startswith("mobius ")


def test_verify_invariant_under_precomposition(mesh_l4):
    # composing the input with a dilation must not change the verdict: the
    # distance and the excess are both conformally natural quantities
    u = perturbed(mesh_l4, eps=0.1, seed=0, mobius=BASE)
    r1 = verify_rigidity(u)
    r2 = verify_rigidity(pullback(u, np.array([0.2, 0.0, 0.0])))
    assert abs(r2.excess - r1.excess) <= 0.05 * r1.excess
    q1 = r1.seminorm_dist / r1.excess
    q2 = r2.seminorm_dist / r2.excess
    assert abs(q2 - q1) <= 0.15 * q1


def test_verify_self_convergence(mesh_l4, mesh_l5):
    ratios = {}
    for mesh in (mesh_l4, mesh_l5):
        rep = verify_rigidity(perturbed(mesh, eps=0.05, seed=2, mobius=BASE))
        assert rep.flow_status == "Converged"
        ratios[mesh.level] = rep.seminorm_dist / rep.excess
    assert abs(ratios[4] - ratios[5]) <= 0.15 * ratios[5]
    assert 1.5 < ratios[5] < 4.0


# --- sweeps --------------------------------------------------------------------

def small_family():
    return [ScenarioSpec(kind="perturbed_mobius", level=3, seed=s, eps=0.1)
            for s in range(2)]


def test_sweep_mobius_family_all_degenerate(mesh_l3):
    fam = [ScenarioSpec(kind="mobius", level=3, seed=s,
                        mobius=MobiusParams(np.array([1.0, 0, 0, 0]),
                                            np.array([0.05 * (s + 1), 0, 0])))
           for s in range(3)]
    rows, summary = constant_sweep(fam)
    assert summary["statuses"] == {"Converged": 3}
    assert summary["n_degenerate"] == 3
    assert all(math.isnan(r.ratio) for r in rows)
    assert summary["mean_v_bound_ok"]


def test_sweep_survives_a_failing_case():
    fam = [ScenarioSpec(kind="perturbed_mobius", level=3, seed=0, eps=0.1),
           ScenarioSpec(kind="concentrated_unbalanced", level=3, seed=1,
                        eps=0.05, a_norm=0.95)]
    rows, summary = constant_sweep(fam)
    assert rows[0].status == "Converged"
    assert rows[1].status.endswith("Error")
    assert math.isnan(rows[1].excess)
    assert summary["n_cases"] == 2 and summary["n_converged"] == 1


def test_sweep_deterministic_and_parallel_agree(tmp_path):
    # rows carry nan fields (flagged ratios), so equality is checked on the
    # serialized artifacts, byte for byte
    fam = small_family()
    rows_a, summary_a = constant_sweep(fam)
    rows_b, summary_b = constant_sweep(fam)
    rows_p, summary_p = constant_sweep(fam, jobs=2)
    paths = []
    for tag, rows in (("a", rows_a), ("b", rows_b), ("p", rows_p)):
        p = tmp_path / f"{tag}.csv"
        write_sweep_csv(rows, p)
        paths.append(p)
    blobs = [p.read_bytes() for p in paths]
    assert blobs[0] == blobs[1] == blobs[2]
    dumps = [json.dumps(s, sort_keys=True) for s in (summary_a, summary_b,
                                                     summary_p)]
    assert dumps[0] == dumps[1] == dumps[2]
    lines = blobs[0].decode().strip().split("\n")
    assert lines[0] == SWEEP_HEADER
    assert len(lines) == 1 + len(rows_a)


def test_sweep_summary_json(tmp_path):
    rows, summary = constant_sweep(small_family())
    out = tmp_path / "summary.json"
    write_sweep_summary(summary, out)
    assert out.read_text() == json.dumps(summary, sort_keys=True, indent=2) + "\n"


def test_run_case_matches_verify(mesh_l4):
    spec = ScenarioSpec(kind="perturbed_mobius", level=4, seed=0, eps=0.1,
                        mobius=BASE)
    row = run_case(spec, mesh_l4)
    rep = verify_rigidity(generate(spec, mesh_l4))
    assert row.case_id == "perturbed_mobius-L4-e0.1-s0"
    assert row.excess == pytest.approx(rep.excess, rel=1e-12)
    assert row.status == rep.flow_status


def test_standard_family_shape():
    fam = standard_family(4)
    assert len(fam) == 20
    assert sorted({s.eps for s in fam}) == [0.02, 0.05, 0.1, 0.2]
    assert all(s.kind == "perturbed_mobius" for s in fam)
