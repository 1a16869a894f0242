import copy

import numpy as np
import pytest

from frgd.errors import ModelError
from frgd.geometry import from_params
from frgd.harmonic import (HarmonicStructure, LevelAssembly, assemble_level, check_homogeneous,
                           check_regular, renorm_residual, solve_harmonic,
                           structure_from_conductances)
from frgd.modelfile import parse_model
from frgd.network import match_vertices, trace
from frgd.structure import BoundarySpec, Edge, FractalModel, GraphConstruction

from conftest import bundle


def vicsek(a=1.0, b=1.0, c=1.0, d=1 / 3):
    bb = bundle("vicsek_overlap")
    env = bb.template.environment({"a": a, "b": b, "c": c, "d": d}, use_closed_form=True)
    return bb.model, bb.template.instantiate(bb.model, env)


def test_vicsek_homogeneous_point():
    m, h = vicsek()
    assert np.allclose(h.factors, [1, 1 / 3, 1 / 2, 1 / 3, 1 / 3, 1 / 3])
    assert renorm_residual(m, h).max() < 1e-10


def test_vicsek_general_family_and_perturbation(rng):
    for _ in range(3):
        d = rng.uniform(0.05, 2)
        m, h = vicsek(rng.uniform(0.1, 5), d + rng.uniform(0.05, 3), rng.uniform(0.1, 5), d)
        assert renorm_residual(m, h).max() < 1e-9
        for k in range(len(h.factors)):
            f = h.factors.copy()
            f[k] *= 1.1
            assert renorm_residual(m, HarmonicStructure(h.laplacians, f)).max() > 1e-3


def test_single_edge_assembly():
    g = GraphConstruction(["A"], [Edge(0, 0, from_params(0.5)), Edge(0, 0, from_params(0.5, translate=[0.5, 0]))])
    m = FractalModel("i", g, BoundarySpec([[[0, 0], [1, 0]]], []))
    h = structure_from_conductances(m, [[(0, 1, 1.0)]], [0.5, 0.5])
    net = assemble_level(m, h, 0, 1)
    assert net.n == 3 and net.conductance((0.0, 0.0), (0.5, 0.0)) == pytest.approx(2.0)
    assert renorm_residual(m, h).max() < 1e-14


@pytest.mark.parametrize("name", ["sg", "vicsek_overlap", "sg_open"])
def test_multilevel_compatibility(name):
    b = bundle(name)
    h = b.template.closed_form(b.model)
    for n in (2, 3):
        hi = assemble_level(b.model, h, 0, n)
        lo = assemble_level(b.model, h, 0, n - 1)
        t = trace(hi, match_vertices(lo, hi))
        assert np.max(np.abs(t.H - lo.H)) < 1e-8 * max(1, np.abs(lo.H).max())


def test_level_two_equals_glued_level_one():
    b = bundle("vicsek_overlap")
    m, h = b.model, b.template.closed_form(b.model)
    direct = assemble_level(m, h, 0, 2)
    # glue level-1 networks of each child, scaled by the edge factor
    H = np.zeros_like(direct.H)
    for k in m.g.out_edges[0]:
        e = m.g.edges[k]
        sub = assemble_level(m, h, e.dst, 1)
        idx = [direct.locate(e.map(p)) for p in sub.points()]
        H[np.ix_(idx, idx)] += sub.H / h.factors[k]
    assert np.max(np.abs(H - direct.H)) < 1e-10


def test_gauge_covariance():
    b = bundle("vicsek_overlap")
    m, h = vicsek(0.7, 2.0, 1.3, 0.4)
    for t in (0.3, 4.0):
        g = h.gauge(1, t, m)
        assert np.max(np.abs(renorm_residual(m, g) - renorm_residual(m, h) * [1, t])) < 1e-9
        assert renorm_residual(m, g).max() < 1e-9
        assert np.allclose(assemble_level(m, g, 0, 2).H, assemble_level(m, h, 0, 2).H, atol=1e-9)


def test_cut_point_sparsity():
    b = bundle("vicsek_overlap")
    m, h = b.model, b.template.closed_form(b.model)
    for n in (1, 2):
        net = assemble_level(m, h, 0, n)
        idx = match_vertices(h.laplacians[0], net)
        T = trace(net, idx).H
        # the centre is a cut point: corners only connect through it
        assert np.all(T[:4, :4][~np.eye(4, dtype=bool)] == 0)


def test_solver_sg():
    b = bundle("sg")
    doc = copy.deepcopy(b.data)
    doc["parameters"]["r"] = "free"
    bb = parse_model(doc)
    res = solve_harmonic(bb.model, bb.template)
    assert res.success
    assert res.values["r"] == pytest.approx(0.6, abs=1e-8)


def test_solver_vicsek_homogeneous():
    b = bundle("vicsek_overlap")
    res = solve_harmonic(b.model, b.template)
    assert res.success
    assert res.values["b"] == pytest.approx(1, abs=1e-7)
    assert res.values["d"] == pytest.approx(1 / 3, abs=1e-7)
    assert np.allclose(res.structure.factors, [1, 1 / 3, 1 / 2, 1 / 3, 1 / 3, 1 / 3], atol=1e-7)


def test_solver_failure_is_reported():
    b = bundle("sg")
    doc = copy.deepcopy(b.data)
    doc["parameters"]["r"] = "free"
    doc["harmonic"]["constraints"] = ["r = 0.9"]
    bb = parse_model(doc)
    res = solve_harmonic(bb.model, bb.template, seeds=3)
    assert not res.success and res.residual > 1e-6 and "restarts" in res.message


def test_regularity():
    m, h = vicsek()
    rep = check_regular(m, h)
    assert rep.regular and rep.bound_ok and rep.rho2 < 1
    b = bundle("sg_open")
    rep = check_regular(b.model, b.template.closed_form(b.model))
    prods = {tuple(c): round(p, 12) for c, p in rep.cycles}
    assert prods[(0,)] == 0.525 and prods[(5,)] == 0.375 and prods[(1, 2)] == 0.375
    assert rep.regular and rep.bound_ok
    f = h.factors.copy()
    loop = [e for e in range(6) if m.g.edges[e].src == m.g.edges[e].dst]
    f[loop[0]] = 1.0
    assert not check_regular(m, HarmonicStructure(h.laplacians, f)).regular


def test_homogeneity():
    m, h = vicsek()
    rep = check_homogeneous(m, h, 5)
    assert rep.homogeneous
    m, h = vicsek(1.0, 2.0, 1.0, 1 / 3)
    rep = check_homogeneous(m, h, 4)
    assert not rep.homogeneous and rep.offending
    b = bundle("interval")
    rep = check_homogeneous(b.model, b.template.closed_form(b.model), 6)
    assert rep.homogeneous and rep.single_valued
    for ratio, vals in rep.table.items():
        assert vals == [pytest.approx(ratio)]


def test_template_errors():
    b = bundle("vicsek_overlap")
    with pytest.raises(ModelError):
        b.template.environment()
    env = b.template.environment({"a": 1, "b": 1, "c": 1, "d": 2}, use_closed_form=True)
    # b < d makes r2 negative
    with pytest.raises(ModelError):
        b.template.instantiate(b.model, env)
