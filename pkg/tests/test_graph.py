import numpy as np
import pytest

from sgn_lab.errors import ConfigurationError
from sgn_lab.graph import (Topology, algebraic_connectivity, column_sums, complete, edge_fraction,
                           generalized_laplacian, generate, geometric, laplacian, mixing_matrix,
                           spectral_summary)


def path3():
    return Topology.from_edges(3, [(0, 1), (1, 2)])


def test_laplacian_single_edge():
    L = laplacian(Topology.from_edges(2, [(0, 1)]))
    np.testing.assert_array_equal(L, [[1, -1], [-1, 1]])
    np.testing.assert_allclose(np.linalg.eigvalsh(L), [0, 2], atol=1e-12)


def test_path_and_complete_spectra():
    assert algebraic_connectivity(laplacian(path3())) == pytest.approx(1.0)
    np.testing.assert_allclose(np.linalg.eigvalsh(laplacian(path3())), [0, 1, 3], atol=1e-12)
    for n in (3, 5, 10):
        assert algebraic_connectivity(laplacian(complete(n))) == pytest.approx(n, abs=1e-10)


def test_generalized_laplacian():
    t = Topology.from_edges(2, [(0, 1)])
    M = generalized_laplacian(t, [1.0, 2.0])
    np.testing.assert_allclose(M, [[2, -2], [-2, 2]])
    assert algebraic_connectivity(M) == pytest.approx(4.0, abs=1e-10)
    np.testing.assert_allclose(generalized_laplacian(path3(), np.ones(3)), laplacian(path3()))
    empty = Topology(3, frozenset())
    np.testing.assert_array_equal(generalized_laplacian(empty, np.ones(3)), np.zeros((3, 3)))
    assert algebraic_connectivity(laplacian(empty)) == 0


def test_disconnected_and_star():
    two = Topology.from_edges(4, [(0, 1), (2, 3)])
    assert abs(algebraic_connectivity(laplacian(two))) < 1e-10
    assert not two.is_connected()
    star = Topology.from_edges(4, [(0, 1), (0, 2), (0, 3)])
    assert algebraic_connectivity(laplacian(star)) == pytest.approx(1.0)
    s = spectral_summary(star, np.ones(4))
    assert s.connected and s.lambda2_hat == pytest.approx(1.0)


def test_rejects_non_symmetric():
    with pytest.raises(ValueError):
        algebraic_connectivity(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_generators():
    assert len(complete(4).edges) == 6
    rng = np.random.default_rng(0)
    assert edge_fraction(6, 1.0, rng).edges == complete(6).edges
    assert edge_fraction(6, 0.0, rng).edges == frozenset()
    assert len(edge_fraction(10, 0.5, rng, exact=True).edges) == 22
    g = geometric([(0, 0), (1, 0), (5, 0)], 2.5)
    assert g.edges == frozenset({(0, 1)})
    assert generate("complete", n=3).edges == complete(3).edges
    with pytest.raises(ConfigurationError):
        generate("ring", n=3)


def test_topology_validation_and_roundtrip(tmp_path):
    with pytest.raises(ConfigurationError):
        Topology.from_edges(3, [(0, 0)])
    with pytest.raises(ConfigurationError):
        Topology.from_edges(3, [(0, 5)])
    with pytest.raises(ConfigurationError):
        Topology.from_edges(3, [(0, 1), (1, 0)])
    t = path3()
    t.dump(tmp_path / "t.json")
    assert Topology.load(tmp_path / "t.json") == t
    assert t.neighbors(1) == [0, 2]


def test_mixing_matrix():
    t = Topology.from_edges(2, [(0, 1)])
    np.testing.assert_allclose(mixing_matrix(t, [1, 1], 0.1, 1), [[0.9, 0.1], [0.1, 0.9]])
    W = mixing_matrix(t, [1, 2], 0.1, 1)
    np.testing.assert_allclose(W, [[0.8, 0.2], [0.1, 0.9]])
    np.testing.assert_allclose(column_sums(W), [0.9, 1.1])
    np.testing.assert_allclose(W.sum(axis=1), 1)
    np.testing.assert_array_equal(mixing_matrix(t, [1, 2], 0.1, 0), np.eye(2))
    with pytest.warns(UserWarning):
        mixing_matrix(t, [1, 1], 1.0, 2.0)
