import math

import numpy as np
import pytest

from s2flow.errors import (CertificateError, EnergyMonotonicityError,
                           ParameterDomainError)
from s2flow.fields import (FOUR_PI, energy, identity_map, l2_dist_sq,
                           l2_norm_sq, tension)
from s2flow.flow import (FlowConfig, FlowSample, FlowTrace, TRACE_HEADER,
                         default_dt, detect_concentration, flow_certificates,
                         run_flow, step, write_trace_csv)
from s2flow.mobius import MobiusParams, sample
from s2flow.rigidity import default_flow_config, tension_floor
from s2flow.scenarios import ScenarioSpec, generate

BASE = MobiusParams(np.array([0.9, 0.1, -0.2, 0.3]), np.array([0.1, -0.15, 0.2]))


def perturbed(mesh, eps=0.1, seed=0):
    spec = ScenarioSpec(kind="perturbed_mobius", level=mesh.level, seed=seed,
                        eps=eps)
    return generate(spec, mesh)


def test_default_dt_formulas(mesh_l4):
    assert default_dt(mesh_l4, "explicit") == pytest.approx(
        0.2 * mesh_l4.min_edge_length ** 2, rel=1e-12)
    assert default_dt(mesh_l4, "semi-implicit") == pytest.approx(
        0.5 * mesh_l4.mean_edge_length, rel=1e-12)


def test_bad_scheme_rejected():
    with pytest.raises(ParameterDomainError):
        FlowConfig(scheme="midpoint")


@pytest.mark.parametrize(
    "kwargs",
    [
        {"dt": 0.0},
        {"dt": -0.01},
        {"stop_tension": 0.0},
        {"t_max": -1.0},
        {"record_every": 0},
        {"concentration_radius": -0.2},
        {"concentration_threshold": 0.0},
    ],
)
def test_nonpositive_config_values_rejected(kwargs):
    with pytest.raises(ParameterDomainError):
        FlowConfig(**kwargs)


@pytest.mark.parametrize("scheme", ["explicit", "semi-implicit"])
def test_step_decreases_energy_and_stays_unit(mesh_l4, scheme):
    u = perturbed(mesh_l4, eps=0.2, seed=1)
    u1 = step(u, FlowConfig(scheme=scheme))
    norms = np.linalg.norm(u1.values, axis=1)
    assert np.max(np.abs(norms - 1.0)) < 1e-12
    assert energy(u1) < energy(u)


def test_explicit_step_moves_at_most_dt_tau_pointwise(mesh_l4):
    # normalize(u + dt*tau) is no farther from u than dt*tau itself, vertex
    # by vertex; this chord bound is what the run certificates integrate
    u = perturbed(mesh_l4, eps=0.2, seed=2)
    cfg = FlowConfig(scheme="explicit")
    dt = default_dt(mesh_l4, "explicit")
    u1 = step(u, cfg)
    moved = np.linalg.norm(u1.values - u.values, axis=1)
    allowed = dt * np.linalg.norm(tension(u).vectors, axis=1)
    assert np.all(moved <= allowed + 1e-12)


@pytest.mark.parametrize("scheme", ["explicit", "semi-implicit"])
def test_run_flow_converges_and_certificates_hold(mesh_l4, scheme):
    u0 = perturbed(mesh_l4, eps=0.1, seed=0)
    cfg = default_flow_config(mesh_l4, scheme=scheme, record_every=5)
    v, trace = run_flow(u0, cfg)
    assert trace.status == "Converged"
    assert trace.samples[0].t == 0.0
    energies = [s.energy for s in trace.samples]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(energies, energies[1:]))
    assert all(s.degree == 1 for s in trace.samples)
    certs = flow_certificates(trace)
    assert len(certs.rows) == len(trace.samples) - 1
    assert all(r.lhs <= r.mid * (1 + 1e-6) + 1e-13 for r in certs.rows)
    assert math.sqrt(l2_dist_sq(v, trace.snapshots[-1])) == 0.0


def test_mobius_sample_is_discrete_equilibrium(mesh_l4):
    # with the stop threshold calibrated to the mesh tension floor, an exact
    # moderately dilated sample is already converged: zero steps are taken
    small = MobiusParams(BASE.quat, 0.5 * BASE.a)
    u0 = sample(small, mesh_l4)
    tau = math.sqrt(l2_norm_sq(tension(u0)))
    cfg = default_flow_config(mesh_l4)
    assert tau <= cfg.stop_tension  # the scenario premise
    v, trace = run_flow(u0, cfg)
    assert trace.status == "Converged"
    assert len(trace.samples) == 1
    assert trace.samples[0].path_length == 0.0
    assert np.array_equal(v.values, u0.values)


def test_stop_threshold_sits_above_mesh_floor(mesh_l4):
    cfg = default_flow_config(mesh_l4)
    assert cfg.stop_tension >= 2.0 * tension_floor(mesh_l4) - 1e-15
    assert cfg.stop_tension >= 1e-4


def test_concentrated_start_is_detected_as_singular(mesh_l4):
    spec = ScenarioSpec(kind="concentrated_unbalanced", level=4, seed=1,
                        eps=0.05, a_norm=0.95)
    u0 = generate(spec, mesh_l4)
    v, trace = run_flow(u0, default_flow_config(mesh_l4))
    assert trace.status == "SingularityDetected"
    degs = [s.degree for s in trace.samples]
    assert degs[0] == 1 and degs[-1] != 1


def test_detect_concentration_threshold(mesh_l4):
    flag, max_local, _ = detect_concentration(identity_map(mesh_l4))
    assert not flag
    assert max_local < FOUR_PI - 1.0
    spec = ScenarioSpec(kind="concentrated_unbalanced", level=4, seed=1,
                        eps=0.0, a_norm=0.95)
    u = generate(spec, mesh_l4)
    flag2, max_local2, where = detect_concentration(
        u, FlowConfig(concentration_threshold=5.0))
    assert flag2 and max_local2 >= 5.0
    assert abs(np.linalg.norm(where) - 1.0) < 1e-12


def test_energy_monotonicity_guard_trips_on_huge_dt(mesh_l3):
    u = perturbed(mesh_l3, eps=0.2, seed=4)
    cfg = FlowConfig(scheme="explicit", dt=50.0, t_max=1000.0)
    with pytest.raises(EnergyMonotonicityError):
        run_flow(u, cfg)


def test_certificate_violation_raises():
    # a hand-built trace whose claimed path length cannot cover the actual
    # displacement must be rejected
    import s2flow.mesh as mesh_mod
    from s2flow.fields import constant_map, mean
    m = mesh_mod.build_icosphere(2)
    u0 = constant_map(m, [0.0, 0.0, 1.0])
    u1 = constant_map(m, [0.0, 0.0, -1.0])
    def smp(t, u, plen):
        return FlowSample(t=t, energy=energy(u), tension_sq=0.0, mean=mean(u),
                          degree=0, max_local=0.0, path_length=plen)
    trace = FlowTrace(samples=[smp(0.0, u0, 0.0), smp(1.0, u1, 1e-8)],
                      snapshots=[u0, u1], status="Converged")
    with pytest.raises(CertificateError):
        flow_certificates(trace)


def test_trace_csv_format(tmp_path, mesh_l3):
    u0 = perturbed(mesh_l3, eps=0.1, seed=0)
    cfg = default_flow_config(mesh_l3, record_every=5)
    _, trace = run_flow(u0, cfg)
    out = tmp_path / "trace.csv"
    write_trace_csv(trace, out)
    lines = out.read_text().strip().split("\n")
    assert lines[0] == TRACE_HEADER
    assert len(lines) == 1 + len(trace.samples)
    first = lines[1].split(",")
    assert len(first) == len(TRACE_HEADER.split(","))
    assert float(first[0]) == 0.0
    assert float(first[1]) == pytest.approx(trace.samples[0].energy, rel=1e-15)
