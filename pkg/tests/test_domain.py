import numpy as np
import pytest

from dd4dvar import build_domain, decompose, extend, gather, restrict
from dd4dvar.domain import RestrictionMap, overlap_map, subdomain_map


def test_build_domain_reference_grid():
    dom = build_domain(0, 1, 0, 1.5, 640, 9)
    assert dom.dx == pytest.approx(1 / 641, rel=1e-14)
    assert dom.dt == pytest.approx(1.5 / 8, rel=1e-14)
    assert dom.dt == pytest.approx(0.1875)


def test_build_domain_smallest_legal():
    dom = build_domain(0, 1, 0, 1, 2, 2)
    assert dom.dx == pytest.approx(1 / 3)
    assert dom.dt == pytest.approx(1.0)


def test_build_domain_twenty_instants():
    dom = build_domain(0, 1, 0, 1.5, 640, 20)
    assert dom.dt == pytest.approx(1.5 / 19, rel=1e-14)


def test_build_domain_nodes_interior_increasing():
    dom = build_domain(-1, 2, 0, 1, 7, 3)
    nodes = dom.nodes
    assert np.all(np.diff(nodes) > 0)
    assert nodes[0] > dom.x_min and nodes[-1] < dom.x_max


@pytest.mark.parametrize("args", [
    (1, 0, 0, 1, 4, 3),    # reversed space
    (0, 1, 2, 1, 4, 3),    # reversed time
    (0, 1, 0, 1, 1, 3),    # too few nodes
    (0, 1, 0, 1, 4, 1),    # too few instants
])
def test_build_domain_rejects(args):
    with pytest.raises(ValueError):
        build_domain(*args)


def test_decompose_reference_configuration():
    dom = build_domain(0, 1, 0, 1.5, 640, 9)
    dec = decompose(dom, 4, 4, 2)
    sizes = sorted(len(s) for s in dec.subdomain_nodes)
    assert sizes == [161, 161, 162, 162]
    assert dec.adjacency == (1, 2, 2, 1)
    for i in range(4):
        for j in dec.neighbors[i]:
            assert len(dec.overlap_nodes(i, j)) == 2


def test_decompose_trivial():
    dom = build_domain(0, 1, 0, 1, 6, 4)
    dec = decompose(dom, 1, 1, 0)
    assert np.array_equal(dec.subdomain_nodes[0], np.arange(6))
    assert np.array_equal(dec.slab_instants[0], np.arange(4))
    assert dec.neighbors[0] == ()


def test_decompose_eight_node_enumeration():
    # hand enumeration for n_p=8, n=3, 2 subdomains, 2 slabs, delta=2:
    # 1-based I_1={1..5}, I_2={4..8}, I_12={4,5}, K_1={1,2}, K_2={2,3}
    dom = build_domain(0, 1, 0, 1, 8, 3)
    dec = decompose(dom, 2, 2, 2)
    assert np.array_equal(dec.subdomain_nodes[0], np.arange(0, 5))
    assert np.array_equal(dec.subdomain_nodes[1], np.arange(3, 8))
    assert np.array_equal(dec.overlap_nodes(0, 1), np.array([3, 4]))
    assert np.array_equal(dec.slab_instants[0], np.array([0, 1]))
    assert np.array_equal(dec.slab_instants[1], np.array([1, 2]))


@pytest.mark.parametrize("n_p,n,n_sub,n_t,delta", [
    (8, 3, 2, 2, 2),
    (12, 5, 3, 2, 2),
    (16, 5, 4, 4, 2),
    (16, 9, 2, 2, 4),
    (12, 4, 4, 3, 0),
    (640, 9, 4, 4, 2),
])
def test_decomposition_invariants(n_p, n, n_sub, n_t, delta):
    dom = build_domain(0, 1, 0, 1, n_p, n)
    dec = decompose(dom, n_sub, n_t, delta)
    union_nodes = np.unique(np.concatenate(dec.subdomain_nodes))
    assert np.array_equal(union_nodes, np.arange(n_p))
    union_instants = np.unique(np.concatenate(dec.slab_instants))
    assert np.array_equal(union_instants, np.arange(n))
    for i in range(n_sub):
        for j in dec.neighbors[i]:
            assert len(dec.overlap_nodes(i, j)) == delta
    for k in range(n_t - 1):
        shared = np.intersect1d(dec.slab_instants[k], dec.slab_instants[k + 1])
        assert len(shared) == 1
    # ownership is total and the owner's index sets contain the point
    for node in range(n_p):
        for inst in range(n):
            i, k = dec.owner(node, inst)
            assert node in dec.subdomain_nodes[i]
            assert inst in dec.slab_instants[k]


@pytest.mark.parametrize("n_sub,n_t,delta,match", [
    (3, 2, 2, "indivisible"),
    (2, 3, 2, "indivisible"),
    (2, 2, 1, "even"),
    (2, 2, 4, "overlap too large"),
])
def test_decompose_rejects(n_sub, n_t, delta, match):
    dom = build_domain(0, 1, 0, 1, 8, 3)
    with pytest.raises(ValueError, match=match):
        decompose(dom, n_sub, n_t, delta)


def test_restrict_identity_map():
    rmap = RestrictionMap(3, np.array([0, 1, 2]))
    v = np.array([4.0, 5.0, 6.0])
    assert np.array_equal(restrict(rmap, v), v)


def test_restrict_index_selection():
    dom = build_domain(0, 1, 0, 1, 8, 3)
    dec = decompose(dom, 2, 2, 2)
    v = np.array([10.0, 20, 30, 40, 50, 60, 70, 80])
    assert np.array_equal(restrict(subdomain_map(dec, 0), v),
                          np.array([10.0, 20, 30, 40, 50]))


def test_restrict_overlap_of_extension():
    dom = build_domain(0, 1, 0, 1, 8, 3)
    dec = decompose(dom, 2, 2, 2)
    w = np.array([1.0, 2, 3, 4, 5])
    ext = extend(subdomain_map(dec, 0), w)
    got = restrict(overlap_map(dec, 0, 1), ext)
    assert np.array_equal(got, w[3:5])


def test_extend_zero_fill():
    dom = build_domain(0, 1, 0, 1, 8, 3)
    dec = decompose(dom, 2, 2, 2)
    out = extend(subdomain_map(dec, 0), np.ones(5))
    assert np.array_equal(out, np.array([1.0, 1, 1, 1, 1, 0, 0, 0]))
    assert np.array_equal(extend(subdomain_map(dec, 0), np.zeros(5)), np.zeros(8))


def test_restrict_extend_roundtrip_exact():
    rng = np.random.default_rng(11)
    for _ in range(20):
        source = int(rng.integers(2, 40))
        size = int(rng.integers(1, source + 1))
        idx = np.sort(rng.choice(source, size=size, replace=False))
        rmap = RestrictionMap(source, idx)
        x = rng.standard_normal(size)
        assert np.array_equal(restrict(rmap, extend(rmap, x)), x)
        x2 = rng.standard_normal((size, 3))
        assert np.array_equal(restrict(rmap, extend(rmap, x2)), x2)


def test_restrict_dimension_mismatch():
    rmap = RestrictionMap(5, np.array([0, 2]))
    with pytest.raises(ValueError, match="mismatch"):
        restrict(rmap, np.zeros(4))
    with pytest.raises(ValueError, match="mismatch"):
        extend(rmap, np.zeros(3))


def _restrict_all(dec, field):
    return {(i, k): field[np.ix_(dec.subdomain_nodes[i], dec.slab_instants[k])]
            for i, k in dec.pairs()}


def test_gather_identity_single_domain():
    dom = build_domain(0, 1, 0, 1, 6, 3)
    dec = decompose(dom, 1, 1, 0)
    u = np.arange(18.0).reshape(6, 3)
    assert np.array_equal(gather(dec, {(0, 0): u}), u)


def test_gather_of_restrictions_is_exact():
    rng = np.random.default_rng(5)
    for n_p, n, n_sub, n_t, delta in [(8, 3, 2, 2, 2), (16, 5, 4, 2, 2),
                                      (12, 5, 2, 4, 0)]:
        dom = build_domain(0, 1, 0, 1, n_p, n)
        dec = decompose(dom, n_sub, n_t, delta)
        u = rng.standard_normal((n_p, n))
        out, disc = gather(dec, _restrict_all(dec, u), with_discrepancy=True)
        assert np.array_equal(out, u)
        assert disc == 0.0


def test_gather_owner_wins_and_discrepancy_reported():
    dom = build_domain(0, 1, 0, 1, 8, 3)
    dec = decompose(dom, 2, 2, 2)
    u = np.zeros((8, 3))
    locals_ = _restrict_all(dec, u)
    bumped = {key: v.copy() for key, v in locals_.items()}
    # subdomain 2 disagrees on its copy of the overlap nodes {3, 4}
    for k in range(2):
        bumped[(1, k)][0:2, :] += 1.0
    out, disc = gather(dec, bumped, with_discrepancy=True)
    # overlap nodes are owned by subdomain 1, whose values are unchanged
    assert np.array_equal(out, np.zeros((8, 3)))
    assert disc == pytest.approx(1.0)


def test_gather_shape_mismatch():
    dom = build_domain(0, 1, 0, 1, 8, 3)
    dec = decompose(dom, 2, 2, 2)
    locals_ = _restrict_all(dec, np.zeros((8, 3)))
    locals_[(0, 0)] = np.zeros((4, 2))
    with pytest.raises(ValueError, match="shape mismatch"):
        gather(dec, locals_)
