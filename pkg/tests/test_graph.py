import numpy as np
import pytest

from gcfair.errors import GraphFormatError
from gcfair.graph import Graph, load_graph, load_graph_dir, save_graph, split_nodes
from gcfair.synth import SyntheticParams, generate_synthetic


def _write(tmp_path, edges, header, rows):
    (tmp_path / "edges.tsv").write_text("".join(f"{i}\t{j}\n" for i, j in edges))
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    (tmp_path / "features.csv").write_text("\n".join(lines) + "\n")
    return str(tmp_path / "edges.tsv"), str(tmp_path / "features.csv")


def test_load_symmetrizes_and_dedups(tmp_path):
    e, f = _write(tmp_path, [(0, 1), (1, 0), (1, 2), (2, 2)],
                  ["a", "sensitive", "label"], [[0.5, 0, 1], [1.5, 1, 0], [2.5, 0, 1]])
    g = load_graph(e, f, "sensitive", "label")
    assert g.num_pairs == 2
    assert g.edges.tolist() == [[0, 1], [1, 2]]
    a = g.adjacency.toarray()
    assert np.array_equal(a, a.T) and np.all(np.diag(a) == 0)
    assert a.sum() == 2 * g.num_pairs
    assert g.labels.tolist() == [1, 0, 1]
    assert np.array_equal(g.features[:, g.s_idx], g.sensitive)


def test_nonbinary_sensitive_names_row(tmp_path):
    e, f = _write(tmp_path, [], ["a", "sensitive", "label"], [[0, 0, 1], [0, 1, 1], [0, 2, 0]])
    with pytest.raises(GraphFormatError, match="non-binary sensitive attribute at row 2"):
        load_graph(e, f, "sensitive", "label")


def test_nonbinary_label_names_column(tmp_path):
    e, f = _write(tmp_path, [], ["a", "s", "y"], [[0, 0, 1], [0, 1, 3]])
    with pytest.raises(GraphFormatError, match="non-binary label at row 1"):
        load_graph(e, f, "s", "y")


def test_out_of_range_edge_names_line(tmp_path):
    e, f = _write(tmp_path, [(0, 1), (0, 7)], ["a", "s"], [[0, 0], [1, 1]])
    with pytest.raises(GraphFormatError, match="line 2") as info:
        load_graph(e, f, "s", None)
    assert info.value.line == 2


def test_round_trip_synthetic_is_bit_identical(tmp_path):
    g, _ = generate_synthetic(SyntheticParams(n=120, seed=3))
    save_graph(g, str(tmp_path))
    back = load_graph_dir(str(tmp_path))
    assert back.equals(g)
    assert back.feature_names == g.feature_names


def test_empty_edge_graph_round_trip(tmp_path):
    g = Graph(n=2, edges=np.zeros((0, 2)), features=[[0.1, 0], [0.2, 1]], s_idx=1, labels=[0, 1])
    save_graph(g, str(tmp_path))
    assert (tmp_path / "edges.tsv").read_text() == ""
    assert load_graph_dir(str(tmp_path)).equals(g)


def test_label_free_round_trip(tmp_path):
    g = Graph(n=3, edges=[(0, 2)], features=[[1.0, 0], [2.0, 1], [3.0, 0]], s_idx=1)
    save_graph(g, str(tmp_path))
    header = (tmp_path / "features.csv").read_text().splitlines()[0]
    assert "label" not in header
    back = load_graph_dir(str(tmp_path))
    assert back.labels is None and back.equals(g)


def test_degree_and_average_degree():
    g = Graph(n=4, edges=[(0, 1), (1, 2), (1, 3)], features=np.c_[np.zeros(4), [0, 1, 0, 1]], s_idx=1)
    assert g.degree.tolist() == [1, 3, 1, 1]
    assert g.avg_degree == pytest.approx(2 * 3 / 4)


def test_graph_is_immutable():
    g = Graph(n=2, edges=[(0, 1)], features=[[1.0, 0], [2.0, 1]], s_idx=1)
    with pytest.raises(ValueError):
        g.features[0, 0] = 5.0


@pytest.mark.parametrize("n,sizes", [(10, (6, 2, 2)), (2000, (1200, 400, 400))])
def test_split_sizes(n, sizes):
    g = Graph(n=n, edges=[], features=np.c_[np.zeros(n), np.arange(n) % 2], s_idx=1)
    sp = split_nodes(g, (0.6, 0.2, 0.2), seed=1)
    assert sp.sizes() == sizes
    allnodes = np.concatenate([sp.train, sp.valid, sp.test])
    assert sorted(allnodes.tolist()) == list(range(n))


def test_split_deterministic_and_validated():
    g = Graph(n=50, edges=[], features=np.c_[np.zeros(50), np.arange(50) % 2], s_idx=1)
    assert split_nodes(g, seed=4) == split_nodes(g, seed=4)
    assert not split_nodes(g, seed=4) == split_nodes(g, seed=5)
    with pytest.raises(ValueError):
        split_nodes(g, (0.5, 0.2, 0.2))
