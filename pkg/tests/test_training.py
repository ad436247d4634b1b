import numpy as np
import pytest

from dregcn_absa import synth
from dregcn_absa.autodiff import Tape, Tensor, backward
from dregcn_absa.corpus import RelationVocab, Sentence, random_embedding_table
from dregcn_absa.encoder import EncoderConfig
from dregcn_absa.heads import MessagePassingConfig
from dregcn_absa.model import (
    CheckpointError,
    Model,
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
)
from dregcn_absa.training import (
    AdamState,
    NumericError,
    TrainConfig,
    adam_step,
    as_loss_mask,
    batch_loss,
    joint_loss,
    multi_run,
    predict_sentence_tags,
    train,
)


def small_model_config(mode="dregcn", variant="none", rounds=0, dropout=0.0):
    return ModelConfig(
        encoder=EncoderConfig(mode=mode, gcn_layers=1, cnn_layers=1, d=8, m=4),
        mp=MessagePassingConfig(variant, rounds),
        d_t=4,
        dropout=dropout,
    )


def build_model(corpus, cfg=None, seed=0):
    cfg = cfg or small_model_config()
    rng = np.random.default_rng(seed)
    words = [w for s in corpus for w in s.tokens]
    general = random_embedding_table(words, 6, rng)
    domain = random_embedding_table(words, 3, rng)
    rv = RelationVocab.from_corpus(corpus)
    return Model(cfg, general, domain, rv, rng), general, domain


# ---------------------------------------------------------------------------
# loss


def test_as_loss_mask():
    np.testing.assert_array_equal(
        as_loss_mask(["BA", "IA", "BP", "IP", "O"]), [True, True, False, False, False]
    )


def test_joint_loss_matches_manual_formula(tiny_corpus):
    model, _, _ = build_model(tiny_corpus)
    s = tiny_corpus[0]
    out = model.forward(s)
    loss = joint_loss(out, s)

    from dregcn_absa.corpus import AE_INDEX, AS_INDEX

    yae, yas = out.final.yae.data, out.final.yas.data
    expect = 0.0
    for i in range(s.n):
        expect += -np.log(yae[i, AE_INDEX[s.ae_tags[i]]]) / s.n
        if s.ae_tags[i] in ("BA", "IA"):
            expect += -np.log(yas[i, AS_INDEX[s.as_tags[i]]]) / s.n
    assert float(loss.data) == pytest.approx(expect, rel=1e-12)


def test_loss_ignores_as_probs_outside_aspects(tiny_corpus):
    model, _, _ = build_model(tiny_corpus)
    s = tiny_corpus[0]
    out = model.forward(s)
    base = float(joint_loss(out, s).data)
    mask = as_loss_mask(s.ae_tags)
    # scramble AS rows on non-aspect tokens
    out.final.yas.data[~mask] = np.roll(out.final.yas.data[~mask], 1, axis=1)
    perturbed = float(joint_loss(out, s).data)
    assert perturbed == base  # exactly, not approximately


def test_aspect_free_batch_gives_zero_as_head_gradient(tiny_corpus):
    aspect_free = Sentence(
        ("it", "works", "fine"),
        ("O", "O", "O"),
        ("none", "none", "none"),
        (1, None, 1),
        ("nsubj", "root", "advmod"),
    )
    model, _, _ = build_model(tiny_corpus)
    params = model.parameters()
    with Tape() as tape:
        loss = batch_loss(model, [aspect_free], np.random.default_rng(0))
    backward(tape, loss, params=list(params.values()))
    for name, p in model.as_head_parameters().items():
        assert p.grad is not None and (p.grad == 0).all(), name
    # sanity: the AE head does receive gradient
    assert np.abs(params["ae/out_w"].grad).max() > 0


# ---------------------------------------------------------------------------
# adam


def test_adam_matches_reference_updates():
    rng = np.random.default_rng(0)
    p = Tensor(rng.normal(size=(3,)))
    ref = p.data.copy()
    m = np.zeros(3)
    v = np.zeros(3)
    state = AdamState()
    lr = 0.1
    for t in range(1, 4):
        g = rng.normal(size=3)
        p.grad = g.copy()
        adam_step({"p": p}, state, lr)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= lr * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(p.data, ref, atol=1e-15)


def test_adam_rejects_non_finite_gradient():
    p = Tensor(np.ones(2))
    p.grad = np.array([np.nan, 0.0])
    with pytest.raises(NumericError, match="p"):
        adam_step({"p": p}, AdamState(), 0.1)


# ---------------------------------------------------------------------------
# prediction and training loop


def test_predict_masks_as_outside_predicted_spans(tiny_corpus):
    model, _, _ = build_model(tiny_corpus)
    s = tiny_corpus[0]
    ae_tags, as_tags = predict_sentence_tags(model, s)
    assert len(ae_tags) == len(as_tags) == s.n
    from dregcn_absa.evaluation import decode_spans

    inside = set()
    for span in decode_spans(ae_tags):
        if span.kind == "aspect":
            inside.update(range(span.start, span.end))
    for i in range(s.n):
        if i in inside:
            assert as_tags[i] in ("pos", "neg", "neu")
        else:
            assert as_tags[i] == "none"


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(runs=0)


def test_train_is_deterministic_under_seed():
    corpus = synth.overfit_corpus(6, seed=1)
    rng = np.random.default_rng(0)
    words = [w for s in corpus for w in s.tokens]
    general = random_embedding_table(words, 6, rng)
    domain = random_embedding_table(words, 3, rng)
    cfg = small_model_config(dropout=0.5)
    tc = TrainConfig(learning_rate=0.01, batch_size=4, epochs=3, seed=5, runs=1)
    a = train(corpus, tc, cfg, general, domain)
    b = train(corpus, tc, cfg, general, domain)
    for name in a.final_snapshot:
        np.testing.assert_array_equal(a.final_snapshot[name], b.final_snapshot[name])
    assert a.history == b.history
    c = train(corpus, TrainConfig(learning_rate=0.01, batch_size=4, epochs=3, seed=6, runs=1),
              cfg, general, domain)
    assert any(
        np.abs(a.final_snapshot[k] - c.final_snapshot[k]).max() > 0 for k in a.final_snapshot
    )


def test_train_loss_decreases():
    corpus = synth.overfit_corpus(8, seed=2)
    rng = np.random.default_rng(0)
    words = [w for s in corpus for w in s.tokens]
    general = random_embedding_table(words, 6, rng)
    domain = random_embedding_table(words, 3, rng)
    tc = TrainConfig(learning_rate=0.01, batch_size=8, epochs=15, seed=0, runs=1)
    result = train(corpus, tc, small_model_config(), general, domain)
    assert result.history[-1]["train_loss"] < result.history[0]["train_loss"]
    assert result.best_dev_f1_i >= 0.0


def test_multi_run_average_is_mean_of_runs():
    corpus = synth.overfit_corpus(8, seed=3)
    rng = np.random.default_rng(0)
    words = [w for s in corpus for w in s.tokens]
    general = random_embedding_table(words, 6, rng)
    domain = random_embedding_table(words, 3, rng)
    tc = TrainConfig(learning_rate=0.01, batch_size=8, epochs=2, seed=0, runs=3)
    report = multi_run(corpus, tc, small_model_config(), general, domain)
    assert report.seeds == [0, 1, 2]
    assert report.averaged.f1_i == pytest.approx(
        np.mean([r.f1_i for r in report.per_run])
    )


def test_freeze_embeddings_excludes_tables(tiny_corpus):
    cfg = small_model_config()
    cfg.freeze_embeddings = True
    model, _, _ = build_model(tiny_corpus, cfg)
    names = model.trainable_parameters()
    assert not any(n.startswith("emb/") for n in names)
    assert any(n.startswith("emb/") for n in model.parameters())


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip_is_bit_exact(tiny_corpus, tmp_path):
    cfg = small_model_config(mode="dregcn_plus_cnn", variant="representations", rounds=2)
    model, _, _ = build_model(tiny_corpus, cfg)
    path = str(tmp_path / "model.npz")
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.cfg.to_dict() == model.cfg.to_dict()
    assert loaded.relation_vocab.index == model.relation_vocab.index
    a, b = model.parameters(), loaded.parameters()
    assert set(a) == set(b)
    for name in a:
        np.testing.assert_array_equal(a[name].data, b[name].data)
    # forward agreement on a real sentence
    s = tiny_corpus[0]
    np.testing.assert_array_equal(
        model.forward(s).final.yae.data, loaded.forward(s).final.yae.data
    )


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.npz"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))


def test_synth_majority_baseline_is_constant_ceiling():
    corpus = synth.relation_type_corpus(40, seed=11, leaves=4)
    ae, asx = synth.majority_baseline_tags(corpus, 5)
    assert len(ae) == len(asx) == 5
    assert ae[0] == "O" and asx[0] == "none"  # the hub is never an aspect
