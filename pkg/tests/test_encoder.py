import numpy as np
import pytest

from dregcn_absa.autodiff import ContractViolation, Tensor
from dregcn_absa.corpus import RelationVocab, build_dependency_graph
from dregcn_absa.encoder import (
    EncoderConfig,
    GcnLayer,
    RelationTable,
    dregcn_layer_forward,
    encode_shared,
    gcn_layer_forward,
    init_dregcn_layer,
    init_encoder_params,
    init_gcn_layer,
    init_relation_table,
    normalize_adjacency,
)
from test_corpus import simple_sentence

RNG = np.random.default_rng(7)


def random_graph(rng, n, n_types):
    """Random symmetric self-looped adjacency with one type per edge."""
    a = np.eye(n)
    q = np.zeros((n, n, n_types))
    for i in range(n):
        q[i, i, 0] = 1.0  # type 0 plays the self relation
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.5:
                a[i, j] = a[j, i] = 1.0
                q[i, j, int(rng.integers(1, n_types))] = 1.0
                q[j, i, int(rng.integers(1, n_types))] = 1.0
    return a, q


def test_encoder_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(mode="bogus")
    cfg = EncoderConfig(mode="cnn_only")
    assert cfg.uses_cnn and not cfg.uses_graph
    cfg2 = EncoderConfig(mode="dregcn_plus_cnn")
    assert cfg2.uses_cnn and cfg2.uses_graph


def test_normalize_adjacency_symmetric():
    a = np.array([[1.0, 1.0], [1.0, 1.0]])
    norm = normalize_adjacency(a)
    np.testing.assert_allclose(norm, 0.5)


def test_gcn_layer_matches_manual_formula():
    d, n = 6, 4
    layer = init_gcn_layer(np.random.default_rng(1), d)
    h = Tensor(RNG.normal(size=(n, d)))
    a, _ = random_graph(RNG, n, 3)
    out = gcn_layer_forward(h, a, layer)
    expect = np.maximum(a @ h.data @ layer.weight.data.T + layer.bias.data, 0.0)
    np.testing.assert_allclose(out.data, expect, atol=1e-12)


def test_dregcn_layer_matches_double_sum_oracle():
    d, m, n, n_types = 5, 3, 4, 4
    rng = np.random.default_rng(2)
    layer = init_dregcn_layer(rng, d, m)
    table = init_relation_table(rng, n_types, m)
    h = Tensor(RNG.normal(size=(n, d)))
    a, q = random_graph(RNG, n, n_types)
    out = dregcn_layer_forward(h, a, q, layer, table)

    w = layer.weight.data  # (d, d + m)
    pre = np.zeros((n, d))
    for i in range(n):
        for j in range(n):
            if a[i, j] == 0:
                continue
            k = int(np.argmax(q[i, j]))
            pre[i] += w @ np.concatenate([h.data[j], table.table.data[k]])
    expect = np.maximum(pre + layer.bias.data, 0.0)
    np.testing.assert_allclose(out.data, expect, atol=1e-10)


def test_dregcn_m0_reduces_to_gcn():
    d, n = 6, 5
    rng = np.random.default_rng(3)
    layer = init_dregcn_layer(rng, d, 0)
    table = init_relation_table(rng, 4, 0)
    gcn = GcnLayer(weight=Tensor(layer.weight.data.copy()), bias=Tensor(layer.bias.data.copy()))
    h = Tensor(RNG.normal(size=(n, d)))
    a, q = random_graph(RNG, n, 4)
    out_dre = dregcn_layer_forward(h, a, q, layer, table)
    out_gcn = gcn_layer_forward(h, a, gcn)
    assert np.abs(out_dre.data - out_gcn.data).max() <= 1e-12


def test_dregcn_zero_relations_reduce_to_gcn():
    # alternative route: m > 0 but R = 0, identical to the node-only path
    d, m, n = 6, 3, 5
    rng = np.random.default_rng(4)
    layer = init_dregcn_layer(rng, d, m)
    table = RelationTable(Tensor(np.zeros((4, m))))
    gcn = GcnLayer(
        weight=Tensor(layer.weight.data[:, :d].copy()),
        bias=Tensor(layer.bias.data.copy()),
    )
    h = Tensor(RNG.normal(size=(n, d)))
    a, q = random_graph(RNG, n, 4)
    out_dre = dregcn_layer_forward(h, a, q, layer, table)
    out_gcn = gcn_layer_forward(h, a, gcn)
    assert np.abs(out_dre.data - out_gcn.data).max() <= 1e-12


def test_dregcn_rejects_inconsistent_indicator():
    d, m, n = 4, 2, 3
    rng = np.random.default_rng(5)
    layer = init_dregcn_layer(rng, d, m)
    table = init_relation_table(rng, 3, m)
    h = Tensor(RNG.normal(size=(n, d)))
    a, q = random_graph(RNG, n, 3)
    q_bad = q.copy()
    free = np.argwhere(a == 0)
    if len(free):
        i, j = free[0]
        q_bad[i, j, 1] = 1.0
        with pytest.raises(ContractViolation):
            dregcn_layer_forward(h, a, q_bad, layer, table)
    q_missing = q.copy()
    q_missing[0, 0] = 0.0  # self edge loses its type
    with pytest.raises(ContractViolation):
        dregcn_layer_forward(h, a, q_missing, layer, table)
    with pytest.raises(ContractViolation):
        dregcn_layer_forward(h, a, q[:, :, :2], layer, table)


def test_encode_shared_output_width_per_mode():
    s = simple_sentence()
    rv = RelationVocab.from_corpus([s])
    graph = build_dependency_graph(s, rv)
    emb = Tensor(RNG.normal(size=(s.n, 7)))
    for mode in ("cnn_only", "vanilla_gcn", "dregcn", "dregcn_plus_cnn"):
        cfg = EncoderConfig(mode=mode, gcn_layers=2, cnn_layers=1, d=10, m=4)
        params = init_encoder_params(np.random.default_rng(6), cfg, 7, rv.size)
        out = encode_shared(emb, graph if cfg.uses_graph else None, cfg, params)
        assert out.shape == (s.n, 10), mode


def test_encode_shared_requires_graph_for_gcn_modes():
    cfg = EncoderConfig(mode="dregcn", d=8, m=4)
    params = init_encoder_params(np.random.default_rng(8), cfg, 7, 5)
    emb = Tensor(RNG.normal(size=(4, 7)))
    with pytest.raises(ContractViolation):
        encode_shared(emb, None, cfg, params)


def test_normalized_adjacency_option_changes_output():
    s = simple_sentence()
    rv = RelationVocab.from_corpus([s])
    graph = build_dependency_graph(s, rv)
    emb = Tensor(RNG.normal(size=(s.n, 7)))
    outs = []
    for norm in (False, True):
        cfg = EncoderConfig(mode="vanilla_gcn", d=8, normalize_adjacency=norm)
        params = init_encoder_params(np.random.default_rng(9), cfg, 7, rv.size)
        outs.append(encode_shared(emb, graph, cfg, params).data)
    assert np.abs(outs[0] - outs[1]).max() > 1e-6
