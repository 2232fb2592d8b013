import json

import numpy as np
import pytest
from conftest import tiny_config

from vir_vlfm.autodiff import Parameter, Tensor, no_grad, ops
from vir_vlfm.autodiff import checkpoint as ckpt
from vir_vlfm.data import load_split
from vir_vlfm.data.dataset import images_of
from vir_vlfm.evaluate import evaluate, evaluate_model, headline
from vir_vlfm.model import frozen_bytes, is_adapt_trainable, load_model
from vir_vlfm.optim import AdamW, lr_at
from vir_vlfm.train import TrainConfig, TrainError, adapt, build_adapt_model, train, validate_loss
from vir_vlfm.vocab import Vocabulary


# -- optimizer ---------------------------------------------------------------------

def test_decay_only_step():
    p = Parameter(np.array([1.0, -2.0]))
    p.grad = np.zeros(2)
    AdamW([("p", p)], weight_decay=0.05).step(0.1)
    np.testing.assert_array_equal(p.data, np.array([1.0, -2.0]) * (1 - 0.1 * 0.05))


def test_first_step_magnitude_is_lr():
    p = Parameter(np.array([0.3, 0.7]))
    p.grad = np.array([2.5, -0.01])
    AdamW([("p", p)], weight_decay=0.0).step(0.01)
    np.testing.assert_allclose(np.abs(p.data - [0.3, 0.7]), 0.01, atol=1e-6)


def test_quadratic_bowl():
    p = Parameter(np.array([3.0, -2.0, 1.0]))
    opt = AdamW([("p", p)], weight_decay=0.0)
    for s in range(100):
        opt.zero_grad()
        ops.sum(p * p).backward()
        opt.step(lr_at(s, 100, 0.3, 1e-4, 0))
    assert float((p.data ** 2).sum()) < 1e-3


def test_nan_gradient_aborts_with_name():
    p = Parameter(np.ones(2))
    p.grad = np.array([np.nan, 0.0])
    before = p.data.copy()
    with pytest.raises(FloatingPointError, match="bad.weight"):
        AdamW([("bad.weight", p)]).step(0.1)
    np.testing.assert_array_equal(p.data, before)


def test_moment_state_shapes():
    p = Parameter(np.ones((2, 3)))
    opt = AdamW([("p", p)])
    assert opt.state.step == 0 and opt.state.m["p"].shape == (2, 3)


def test_schedule_shape():
    total, warm = 200, 10
    lrs = [lr_at(s, total, 5e-5, 1e-5, warm) for s in range(total)]
    assert all(a <= b for a, b in zip(lrs[:warm], lrs[1:warm]))
    assert all(a >= b for a, b in zip(lrs[warm - 1:], lrs[warm:]))
    assert min(lrs) >= 1e-5 and max(lrs) == pytest.approx(5e-5)
    assert lr_at(50, total, 5e-5, 1e-5, warm, cosine=False) == 5e-5


# -- config -------------------------------------------------------------------------

def test_train_config_defaults_and_unknown_keys():
    cfg = TrainConfig()
    assert (cfg.lr, cfg.min_lr, cfg.weight_decay, cfg.batch_size) == (5e-5, 1e-5, 0.05, 16)
    assert cfg.adapters and cfg.fused_adapters and cfg.vrf and cfg.sem and cfg.fusion == "add"
    assert cfg.emphasis_input == "self-other"
    with pytest.raises(TrainError, match="bogus"):
        TrainConfig.from_dict({"bogus": 1})


def test_adapt_requires_pretrain_checkpoint(tiny_data, tmp_path):
    with pytest.raises(TrainError, match="pretrain_checkpoint"):
        train(tiny_config(), tiny_data, tmp_path)
    with pytest.raises(TrainError, match="not found"):
        train(tiny_config(pretrain_checkpoint=str(tmp_path / "none.ckpt")), tiny_data, tmp_path)
    with pytest.raises(TrainError, match="dataset"):
        train(tiny_config(), tmp_path / "missing", tmp_path)


def test_checkpoint_name_mismatch_rejected(tiny_pretrain, tmp_path):
    state = ckpt.load(tiny_pretrain)
    state["encoder.block0.bogus"] = np.zeros(2)
    bad = tmp_path / "bad.ckpt"
    ckpt.save(bad, state)
    with pytest.raises(TrainError, match="bogus"):
        build_adapt_model(tiny_config(pretrain_checkpoint=str(bad)), 42)
    state = ckpt.load(tiny_pretrain)
    del state["encoder.block0.fc1.weight"]
    ckpt.save(bad, state)
    with pytest.raises(TrainError, match="fc1.weight"):
        build_adapt_model(tiny_config(pretrain_checkpoint=str(bad)), 42)


# -- partition and identity at init ----------------------------------------------------------

def test_trainable_partition(tiny_pretrain):
    model = build_adapt_model(tiny_config(pretrain_checkpoint=str(tiny_pretrain)), 42)
    names = set(model.trainable_names())
    assert names and all(is_adapt_trainable(n) for n in names)
    assert any(n.startswith("flow.") for n in names) and "decoder.instr_change" in names
    assert not any(n.startswith(("bridge.qformer", "encoder.embed")) or ".attn." in n for n in names)


def test_text_prior_is_pretrain_only(tiny_pretrain):
    state = ckpt.load(tiny_pretrain)
    assert any(n.startswith("text_prior.") for n in state)
    model = build_adapt_model(tiny_config(pretrain_checkpoint=str(tiny_pretrain)), 42)
    assert model.text_prior is None
    with pytest.raises(ValueError, match="text prior"):
        model.text_loss([[5, 1]])


def test_text_prior_prefix_depends_on_words_not_order(tiny_pretrain):
    tp = load_model(tiny_pretrain).text_prior
    a, b, c = tp([[5, 9, 1]]).data, tp([[9, 5, 1]]).data, tp([[5, 7, 1]]).data
    np.testing.assert_allclose(a, b, atol=1e-14)
    assert np.abs(a - c).max() > 1e-6 and a.shape == (1, 2, 16)


def reference_logits(pretrain_path, img1, img2, tokens):
    """Frozen pretrained backbone, zero flow (patch tokens summed), 0.5-gated queries."""
    base = load_model(pretrain_path)
    b = img1.shape[0]
    with no_grad():
        x = base.encoder.encode_single(np.concatenate([img1, img2]))
        x1, x2 = x.data[:b], x.data[b:]
        f1, f2 = x1.copy(), x2.copy()
        f1[:, 1:] = x1[:, 1:] + x2[:, 1:]
        f2[:, 1:] = x2[:, 1:] + x1[:, 1:]
        q = base.bridge.qformer(Tensor(np.concatenate([f1, f2]))).data
        prefix = base.bridge.project(Tensor(0.5 * q[:b]), Tensor(0.5 * q[b:]))
        return base.decoder.logits(prefix, tokens, "change").data


def test_identity_at_init_exact(tiny_data, tiny_pretrain):
    model = build_adapt_model(tiny_config(pretrain_checkpoint=str(tiny_pretrain)), 42)
    a, b = images_of(load_split(tiny_data, "val")[:3])
    tokens = np.array([[0, 5, 9, 4]] * 3)
    with no_grad():
        got = model.logits(a, b, tokens).data
    assert np.array_equal(got, reference_logits(tiny_pretrain, a, b, tokens))


# -- adapt run ------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def adapt_run(tiny_data, tiny_pretrain, tmp_path_factory):
    out = tmp_path_factory.mktemp("adapt")
    cfg = tiny_config(pretrain_checkpoint=str(tiny_pretrain), lr=1e-3)
    before = frozen_bytes(build_adapt_model(cfg, 42))
    best = adapt(cfg, tiny_data, out, echo=False)
    return out, best, before


def test_freeze_contract(adapt_run):
    out, best, before = adapt_run
    assert frozen_bytes(load_model(out / "last.ckpt")) == before
    logs = [json.loads(l) for l in (out / "log.jsonl").read_text().splitlines()]
    train_rows = [r for r in logs if r["split"] == "train"]
    assert len(train_rows) == 2 and all(r["frozen_grad_max"] == 0.0 for r in train_rows)


def test_frozen_gradients_are_zero_each_step(tiny_data, tiny_pretrain):
    model = build_adapt_model(tiny_config(pretrain_checkpoint=str(tiny_pretrain)), 42)
    recs = load_split(tiny_data, "train")[:4]
    a, b = images_of(recs)
    vocab = Vocabulary.load(tiny_data / "vocab.txt")
    loss = model.loss(a, b, [vocab.encode(r.captions[0]) for r in recs])
    loss.backward()
    for name, p in model.named_parameters():
        if not is_adapt_trainable(name):
            assert p.grad is None or not np.any(p.grad), name
    assert any(p.grad is not None and np.any(p.grad) for n, p in model.named_parameters()
               if n.startswith("bridge.proj"))


def test_log_and_checkpoints(adapt_run):
    out, best, _ = adapt_run
    assert best.exists() and (out / "last.ckpt").exists() and best.with_suffix(".json").exists()
    rows = [json.loads(l) for l in (out / "log.jsonl").read_text().splitlines()]
    assert {"epoch", "step", "split", "loss", "lr"} <= set(rows[0])
    assert rows[1]["split"] == "val" and 0.0 <= rows[1]["exact_match"] <= 1.0
    val = [r for r in rows if r["split"] == "val"]
    assert all(r["loss"] > 0 for r in val)


def test_best_checkpoint_has_lowest_val_loss(adapt_run, tiny_data):
    out, best, _ = adapt_run
    val_recs = load_split(tiny_data, "val")
    vocab = Vocabulary.load(tiny_data / "vocab.txt")
    a, b = images_of(val_recs)
    targets = [[vocab.encode(c) for c in r.captions] for r in val_recs]
    rows = [json.loads(l) for l in (out / "log.jsonl").read_text().splitlines() if '"val"' in l]
    got = validate_loss(load_model(best), a, b, targets)
    assert got == pytest.approx(min(r["loss"] for r in rows), rel=1e-12)


def test_checkpoint_round_trip_reproduces_metrics(adapt_run, tiny_data):
    out, best, _ = adapt_run
    vocab = Vocabulary.load(tiny_data / "vocab.txt")
    recs = load_split(tiny_data, "test")[:4]
    m1 = load_model(best)
    r1 = evaluate_model(m1, vocab, recs, ("rank", "greedy"))
    m1.save(out / "copy.ckpt")
    r2 = evaluate_model(load_model(out / "copy.ckpt"), vocab, recs, ("rank", "greedy"))
    assert json.dumps(r1, sort_keys=True) == json.dumps(r2, sort_keys=True)


def test_evaluate_writes_reports(adapt_run, tiny_data, tmp_path):
    _, best, _ = adapt_run
    reports = evaluate(best, tiny_data, "test", ("rank", "beam"), tmp_path, limit=4)
    assert set(reports) == {"rank", "beam"}
    assert (tmp_path / "test_rank.txt").exists() and (tmp_path / "test_beam.json").exists()
    rows = (tmp_path / "test_predictions.jsonl").read_text().splitlines()
    assert len(rows) == 4 and {"rank", "beam", "references"} <= set(json.loads(rows[0]))
    h = headline(reports["rank"])
    assert h["count"] == 4 and 0 <= h["exact_match"] <= 1


def test_ground_truth_hypotheses_are_perfect(tiny_data):
    from vir_vlfm.metrics import binned_report, make_corpus
    recs = load_split(tiny_data, "test", with_images=False)
    rep = binned_report(make_corpus([r.captions[0] for r in recs], [r.captions for r in recs],
                                    [r.unchanged_iou for r in recs], [r.change_type for r in recs]))
    assert rep["bleu4"]["total"]["all"] == pytest.approx(1.0) and rep["exact_match"]["total"]["all"] == 1.0


@pytest.mark.parametrize("switches", [
    dict(adapters=False, fused_adapters=False, vrf=False, sem=False),
    dict(fusion="concat", emphasis_input="self-other-diff"),
    dict(fused_every=None, vrf=False),
])
def test_ablation_switches_build_and_step(tiny_data, tiny_pretrain, tmp_path, switches):
    cfg = tiny_config(pretrain_checkpoint=str(tiny_pretrain), epochs=1, train_limit=8, val_limit=2, **switches)
    adapt(cfg, tiny_data, tmp_path, echo=False)
    model = load_model(tmp_path / "last.ckpt")
    assert (model.flow is None) == (not cfg.vrf)
    assert (model.bridge.emph is None) == (not cfg.sem)
