import numpy as np
import pytest
from scipy import linalg

from oracles import dense_structure
from scalemap import engine
from scalemap.engine import FitPlan, SubmodelError, fit, submodel_seed
from scalemap.graph import AdjacencyGraph, DomainPartition, connected_components, lattice_graph
from scalemap.laplace import LaplaceConfig, ObservedData

FIXED = LaplaceConfig(fixed_theta=(np.log(4.0), 0.3))


def two_islands():
    """A 2x3 and a 2x2 lattice with no edges between them."""
    a, _ = lattice_graph(2, 3)
    b, _ = lattice_graph(2, 2)
    edges = list(a.edges) + [(i + 6, j + 6) for i, j in b.edges]
    return AdjacencyGraph.from_edges(10, edges)


def toy_data(n, seed=0, level=15.0):
    rng = np.random.default_rng(seed)
    E = rng.uniform(0.5, 1.5, n) * level
    return ObservedData(rng.poisson(E * np.exp(rng.normal(0, 0.3, n))), E)


def summaries(bundle):
    out = []
    for f in bundle.fits:
        m = f.marginals()
        out.append((f.global_index.copy(), m.mean(), m.var(), f.cpo))
    return out


def test_plan_validation():
    with pytest.raises(ValueError):
        FitPlan("k_order", k=0)
    with pytest.raises(ValueError):
        FitPlan("mystery")
    with pytest.raises(ValueError):
        FitPlan(samples=0)
    assert FitPlan("k_order", k=2).label() == "k2"
    assert FitPlan("disjoint").label() == "disjoint"


def test_submodel_seeds_distinct_and_stable():
    seeds = [submodel_seed(7, d) for d in range(50)]
    assert len(set(seeds)) == 50
    assert seeds == [submodel_seed(7, d) for d in range(50)]
    assert submodel_seed(8, 0) != seeds[0]


def test_single_subregion_disjoint_equals_global():
    g, _ = lattice_graph(4, 4)
    data = toy_data(16)
    glob = fit(FitPlan("global", workers=1), g, data)
    disj = fit(FitPlan("disjoint", workers=1), g, data, DomainPartition.single(16))
    (ig, mg, vg, cg), = summaries(glob)
    (id_, md, vd, cd), = summaries(disj)
    np.testing.assert_array_equal(ig, id_)
    np.testing.assert_allclose(md, mg, atol=1e-10)
    np.testing.assert_allclose(vd, vg, atol=1e-10)
    np.testing.assert_allclose(cd, cg, rtol=1e-10)


def test_disjoint_on_components_equals_separate_global_fits():
    g = two_islands()
    data = toy_data(10, seed=3)
    comps = connected_components(g)
    part = DomainPartition(10, tuple(comps))
    bundle = fit(FitPlan("disjoint", workers=1), g, data, part)
    for f, comp in zip(bundle.fits, comps):
        sub = AdjacencyGraph.from_edges(
            len(comp), [(int(np.searchsorted(comp, i)), int(np.searchsorted(comp, j)))
                        for i, j in g.edges if i in comp and j in comp])
        ref = fit(FitPlan("global", workers=1), sub, data.subset(comp))
        np.testing.assert_allclose(f.marginals().mean(), ref.fits[0].marginals().mean(), atol=1e-6)


def test_first_order_on_closed_partition_equals_disjoint():
    g = two_islands()
    data = toy_data(10, seed=4)
    part = DomainPartition(10, tuple(connected_components(g)))
    disj = fit(FitPlan("disjoint", workers=1), g, data, part)
    k1 = fit(FitPlan("k_order", k=1, workers=1), g, data, part)
    for a, b in zip(summaries(disj), summaries(k1)):
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, atol=1e-12)


def _dense_block_mode(n, edges, blocks, obs, E, tau, lam, p=0.001):
    """Constrained mode of eta for a block-diagonal LCAR with one intercept per block."""
    R, _ = dense_structure(n, edges)
    D = len(blocks)
    Q = np.zeros((n + D, n + D))
    A = np.zeros((D, n + D))
    L = np.zeros((n, n + D))
    for d, b in enumerate(blocks):
        Q[np.ix_(b, b)] = tau * (lam * R[np.ix_(b, b)] + (1 - lam) * np.eye(len(b)))
        Q[n + d, n + d] = p
        A[d, b] = 1.0
        L[b, b] = 1.0
        L[b, n + d] = 1.0
    N = linalg.null_space(A)
    t = np.zeros(N.shape[1])
    for _ in range(100):
        x = N @ t
        mu = E * np.exp(L @ x)
        g = L.T @ (obs - mu) - Q @ x
        H = L.T @ (mu[:, None] * L) + Q
        step = np.linalg.solve(N.T @ H @ N, N.T @ g)
        t += step
        if np.abs(step).max() < 1e-13:
            break
    x = N @ t
    mu = E * np.exp(L @ x)
    C = N @ np.linalg.inv(N.T @ (L.T @ (mu[:, None] * L) + Q) @ N) @ N.T
    return L @ x, np.sqrt(np.diag(L @ C @ L.T))


def test_disjoint_equals_block_diagonal_joint_model():
    # the cross-block edges are dropped by the block precision, as in the disjoint model
    g, _ = lattice_graph(3, 4)
    data = toy_data(12, seed=5)
    part = DomainPartition.from_labels([c // 2 for r in range(3) for c in range(4)])
    bundle = fit(FitPlan("disjoint", workers=1, laplace=FIXED), g, data, part)
    tau, lam = 4.0, 1 / (1 + np.exp(-0.3))
    within = [(i, j) for i, j in g.edges
              if any(i in b and j in b for b in part.membership)]
    m, s = _dense_block_mode(12, within, part.membership, data.obs.astype(float), data.expected, tau, lam)
    for f in bundle.fits:
        mix = f.marginals()
        np.testing.assert_allclose(mix.mean(), m[f.global_index], atol=1e-8)
        np.testing.assert_allclose(np.sqrt(mix.var()), s[f.global_index], rtol=1e-8)


def test_bundle_coverage_and_timing():
    g, coords = lattice_graph(4, 4)
    data = toy_data(16, seed=1)
    part = DomainPartition.from_labels([(r // 2) * 2 + c // 2 for r in range(4) for c in range(4)])
    for plan, covered_once in ((FitPlan("disjoint", workers=1), True),
                               (FitPlan("k_order", k=1, workers=1), False)):
        b = fit(plan, g, data, part)
        assert len(b.fits) == 4
        cover = np.zeros(16, dtype=int)
        for f in b.fits:
            cover[f.global_index] += 1
        assert cover.min() >= 1
        assert (cover.max() == 1) == covered_once
        assert b.T1 <= b.T2
        assert b.T2 == pytest.approx(b.times.sum())


def test_partition_required_for_partitioned_kinds():
    g, _ = lattice_graph(2, 2)
    with pytest.raises(ValueError):
        fit(FitPlan("disjoint"), g, toy_data(4))
    with pytest.raises(ValueError):
        fit(FitPlan("global"), g, toy_data(3))


def test_results_independent_of_worker_count():
    g, _ = lattice_graph(4, 4)
    data = toy_data(16, seed=2)
    part = DomainPartition.from_labels([c // 2 for r in range(4) for c in range(4)])
    one = fit(FitPlan("k_order", k=1, workers=1), g, data, part)
    two = fit(FitPlan("k_order", k=1, workers=2), g, data, part)
    for a, b in zip(summaries(one), summaries(two)):
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
    np.testing.assert_array_equal(one.fits[1].sample_joint(20, 3), two.fits[1].sample_joint(20, 3))


def test_failure_names_subregion(monkeypatch):
    g, _ = lattice_graph(2, 4)
    part = DomainPartition.from_labels([0, 0, 1, 1, 0, 0, 1, 1])
    real = engine.fit_submodel

    def flaky(graph, data, family, config, seed):
        if 2 in graph.global_index:
            raise FloatingPointError("boom")
        return real(graph, data, family, config, seed)

    monkeypatch.setattr(engine, "fit_submodel", flaky)
    with pytest.raises(SubmodelError) as info:
        fit(FitPlan("disjoint", workers=1), g, toy_data(8), part)
    assert info.value.subregion == 1
    assert "subregion 1" in str(info.value)
