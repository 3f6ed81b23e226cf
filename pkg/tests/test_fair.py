import numpy as np
import pytest
import torch

from gcfair.augment import AugmenterConfig, CounterfactualSet, train_augmenter
from gcfair.fair import (FairModel, TrainConfig, aggregate_cf, encode_node, fairness_loss, load_model, predict,
                         predict_batch, save_model, train_fair)
from gcfair.graph import split_nodes
from gcfair.ppr import Subgraph, build_subgraphs, ppr_scores
from gcfair.synth import SyntheticParams, calibrated, generate_synthetic

SMALL = dict(repr_dim=8, epochs=4, batch_size=16, k=5, lr=1e-2)


@pytest.fixture(scope="module")
def data():
    g, _ = generate_synthetic(calibrated(SyntheticParams(n=60, d_z=6, d=4, seed=0, target_avg_degree=4.0)))
    imp = ppr_scores(g)
    sub = build_subgraphs(g, imp, 5)
    aug = train_augmenter(sub, AugmenterConfig(latent_dim=4, hidden_dim=8, epochs=5, batch_size=20))
    return g, imp, sub, split_nodes(g, seed=0), aug


def _t(*rows):
    return torch.tensor(rows, dtype=torch.float64)


def test_fairness_loss_examples():
    z = _t([1.0, 2.0], [0.5, -1.0])
    assert fairness_loss(z, z, z, 0.4).item() == pytest.approx(0.0, abs=1e-15)
    val = fairness_loss(_t([1.0, 0.0]), _t([0.0, 1.0]), _t([1.0, 0.0]), 0.4)
    assert val.item() == pytest.approx(0.6, abs=1e-15)


def test_fairness_loss_ignores_neighbours_at_zero_weight():
    rng = np.random.default_rng(0)
    z, zs, zn1, zn2 = (torch.tensor(rng.standard_normal((5, 3))) for _ in range(4))
    assert torch.equal(fairness_loss(z, zs, zn1, 0.0), fairness_loss(z, zs, zn2, 0.0))


def test_fairness_loss_variants_select_one_term():
    z, zs, zn = _t([1.0, 0.0]), _t([0.0, 1.0]), _t([-1.0, 0.0])
    assert fairness_loss(z, zs, zn, 0.4, "nn").item() == pytest.approx(1.0)
    assert fairness_loss(z, zs, zn, 0.4, "ns").item() == pytest.approx(2.0)


def test_fairness_loss_zero_norm_rejected():
    with pytest.raises(ValueError):
        fairness_loss(_t([0.0, 0.0]), _t([1.0, 0.0]), _t([1.0, 0.0]), 0.4)


def test_fairness_loss_centering_removes_shared_offset():
    rng = np.random.default_rng(1)
    z, zs, zn = (torch.tensor(rng.standard_normal((6, 4))) for _ in range(3))
    shift = torch.full((1, 4), 50.0)
    a = fairness_loss(z, zs, zn, 0.4, center=True)
    b = fairness_loss(z + shift, zs + shift, zn + shift, 0.4, center=True)
    assert a.item() == pytest.approx(b.item(), abs=1e-10)


def _model(d=3, s_idx=2, **kw):
    return FairModel(d, s_idx, TrainConfig(**{**SMALL, **kw}))


def _sub(feats, adj, central=0):
    feats = np.asarray(feats, dtype=np.float64)
    return Subgraph(central, np.arange(len(feats)), feats, np.asarray(adj, dtype=np.float64),
                    feats[:, 2].astype(np.int64), 2)


def test_aggregate_cf_examples():
    model = _model()
    rng = np.random.default_rng(0)
    a = _sub(np.c_[rng.standard_normal((3, 2)), [1, 0, 1]], [[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    b = _sub(np.c_[rng.standard_normal((3, 2)), [0, 0, 1]], [[0, 1, 1], [1, 0, 0], [1, 0, 0]])
    za, zb = encode_node(model, a), encode_node(model, b)
    assert torch.equal(aggregate_cf(model, CounterfactualSet("self", [a], [None])), za)
    assert torch.allclose(aggregate_cf(model, CounterfactualSet("neighbor", [a, a], [None, None])), za)
    assert torch.allclose(aggregate_cf(model, CounterfactualSet("neighbor", [a, b], [None, None])), (za + zb) / 2)
    with pytest.raises(ValueError):
        aggregate_cf(model, CounterfactualSet("neighbor", [], []))


def test_encode_node_invariant_to_neighbour_permutation():
    model = _model()
    rng = np.random.default_rng(3)
    feats = np.c_[rng.standard_normal((4, 2)), [1, 0, 1, 1]]
    adj = np.array([[0, 1, 1, 0], [1, 0, 0, 1], [1, 0, 0, 1], [0, 1, 1, 0]], dtype=float)
    perm = np.array([0, 3, 1, 2])
    z = encode_node(model, _sub(feats, adj))
    zp = encode_node(model, _sub(feats[perm], adj[perm][:, perm]))
    assert torch.allclose(z, zp, atol=1e-12)
    assert z.shape == (SMALL["repr_dim"],)


def test_single_node_subgraph_depends_only_on_its_features():
    model = _model()
    one = _sub([[0.3, -1.0, 1.0]], [[0]])
    assert torch.equal(encode_node(model, one), encode_node(model, _sub([[0.3, -1.0, 1.0]], [[0]], central=7)))


def test_zero_classifier_predicts_half(data):
    g, imp, *_ = data
    model = FairModel(g.d, g.s_idx, TrainConfig(**SMALL))
    with torch.no_grad():
        for p in model.classifier.parameters():
            p.zero_()
    probs, labels = predict(model, g, imp, np.arange(10))
    assert np.all(probs == 0.5) and np.all(labels == 0)


def _params(model):
    return [p.detach().clone() for p in model.parameters()]


def test_training_is_deterministic(data):
    g, imp, sub, split, aug = data
    cfg = TrainConfig(**SMALL)
    a = train_fair(g, split, imp, aug, cfg, subgraphs=sub)
    b = train_fair(g, split, imp, aug, cfg, subgraphs=sub)
    assert all(torch.equal(x, y) for x, y in zip(_params(a), _params(b)))
    assert a.history == b.history


def test_lambda_zero_matches_baseline(data):
    g, imp, sub, split, _ = data
    a = train_fair(g, split, imp, None, TrainConfig(**SMALL, lam=0.0), subgraphs=sub)
    b = train_fair(g, split, imp, None, TrainConfig(**SMALL, lam=0.0, variant="baseline"), subgraphs=sub)
    assert all(torch.equal(x, y) for x, y in zip(_params(a), _params(b)))
    assert all(h["L_f"] == 0.0 for h in a.history)


def test_full_variant_needs_augmenter(data):
    g, imp, sub, split, _ = data
    with pytest.raises(ValueError):
        train_fair(g, split, imp, None, TrainConfig(**SMALL), subgraphs=sub)


@pytest.mark.parametrize("variant", ["full", "ns", "nn", "np", "nc"])
def test_variants_train_and_record_fairness_loss(data, variant):
    g, imp, sub, split, aug = data
    model = train_fair(g, split, imp, aug, TrainConfig(**{**SMALL, "epochs": 2}, variant=variant), subgraphs=sub)
    assert all(np.isfinite(h["L_f"]) and h["L_f"] >= -1e-12 for h in model.history)
    assert model.best_epoch is not None


def test_save_load_round_trip(data, tmp_path):
    g, imp, sub, split, aug = data
    model = train_fair(g, split, imp, aug, TrainConfig(**SMALL), subgraphs=sub)
    save_model(model, str(tmp_path / "m.ckpt"))
    back = load_model(str(tmp_path / "m.ckpt"))
    p1, _ = predict_batch(model, sub)
    p2, _ = predict_batch(back, sub)
    assert np.array_equal(p1, p2)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lambda_s=1.5)
    with pytest.raises(ValueError):
        TrainConfig(encoder="gat")
    with pytest.raises(ValueError):
        TrainConfig(select="first")
