import math

import numpy as np
import pytest

from vir_vlfm.autodiff import Tensor, ops
from vir_vlfm.decoder import Decoder, DecoderConfig
from vir_vlfm.optim import AdamW
from vir_vlfm.vocab import Vocabulary

CFG = DecoderConfig(width=16, depth=2, heads=2, max_len=10, instruction_len=2, prefix_len=4)


def make(seed=0, vocab=12, cfg=CFG):
    return Decoder(cfg, vocab, np.random.default_rng(seed))


def prefix(seed, b=1, cfg=CFG):
    return Tensor(np.random.default_rng(seed).normal(size=(b, cfg.prefix_len, cfg.width)))


def test_config_validation():
    with pytest.raises(ValueError):
        DecoderConfig(beams=0)
    with pytest.raises(ValueError):
        DecoderConfig(repetition_penalty=0.9)


def test_untrained_loss_near_log_vocab():
    dec = make(vocab=60)
    loss = dec.caption_loss(prefix(0, 2), [[5, 9, 1], [7, 1]]).item()
    assert abs(loss - math.log(60)) < 0.5


def test_loss_is_order_sensitive():
    dec = make(1)
    p = prefix(1)
    assert dec.caption_loss(p, [[3, 4, 5, 1]]).item() != dec.caption_loss(p, [[5, 3, 4, 1]]).item()


def test_loss_rejects_bad_targets():
    dec = make()
    with pytest.raises(ValueError, match="EOS"):
        dec.caption_loss(prefix(0), [[3, 4]])
    with pytest.raises(ValueError, match="exceeds"):
        dec.caption_loss(prefix(0), [[3] * 10 + [1]])


def test_overfit_single_sample():
    dec = make(2)
    p = prefix(2)
    target = [[4, 7, 7, 3, 1]]
    opt = AdamW(list(dec.named_parameters()), weight_decay=0.0)
    for _ in range(500):
        loss = dec.caption_loss(p, target)
        opt.zero_grad()
        loss.backward()
        opt.step(3e-3)
    assert dec.caption_loss(p, target).item() < 0.01
    assert dec.generate(p)[0] == target[0]


def test_causality():
    dec = make(3)
    p = prefix(3)
    a = np.array([[0, 4, 5, 6, 7]])
    b = np.array([[0, 4, 5, 9, 3]])
    la, lb = dec.logits(p, a).data, dec.logits(p, b).data
    np.testing.assert_array_equal(la[:, :3], lb[:, :3])
    assert np.abs(la[:, 3:] - lb[:, 3:]).max() > 0


def test_prefix_sensitivity_to_half_swap():
    dec = make(4)
    p = prefix(4)
    swapped = Tensor(np.concatenate([p.data[:, 2:], p.data[:, :2]], axis=1))
    toks = np.array([[0, 5, 6]])
    assert np.abs(dec.logits(p, toks).data - dec.logits(swapped, toks).data).max() > 1e-8


def test_instruction_selects_embedding():
    dec = make(5)
    toks = np.array([[0, 5]])
    p = prefix(5)
    assert np.abs(dec.logits(p, toks, "caption").data - dec.logits(p, toks, "change").data).max() > 0


def test_score_matches_loss():
    dec = make(6)
    p = prefix(6)
    cand = [3, 8, 4, 1]
    score = dec.score(p, [cand])[0]
    assert abs(score + len(cand) * dec.caption_loss(p, [cand]).item()) < 1e-10


def test_rank_single_and_duplicates():
    dec = make(7)
    p = prefix(7)
    (only, s), = dec.rank(p, [[3, 4, 1]])
    assert only == [3, 4, 1] and abs(s + 3 * dec.caption_loss(p, [[3, 4, 1]]).item()) < 1e-10
    ranked = dec.rank(p, [[5, 1], [6, 1], [5, 1]])
    scores = {tuple(c): sc for c, sc in ranked}
    assert len(scores) == 2
    dup = [i for i, (c, _) in enumerate(ranked) if c == [5, 1]]
    assert dup == [dup[0], dup[0] + 1] and ranked[dup[0]][1] == ranked[dup[1]][1]
    with pytest.raises(ValueError):
        dec.rank(p, [])


def manual_greedy(dec, p, penalty, steps):
    seq = []
    for _ in range(steps):
        toks = np.array([[Vocabulary.bos] + seq])
        row = dec.logits(p, toks).data[0, -1].copy()
        for t in set(seq):
            row[t] = row[t] / penalty if row[t] > 0 else row[t] * penalty
        seq.append(int(row.argmax()))
        if seq[-1] == Vocabulary.eos:
            break
    return seq


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_single_beam_is_greedy(seed):
    dec = make(seed)
    p = prefix(seed)
    assert dec.generate(p, beams=1, penalty=1.0)[0] == dec.greedy(p)[0] == manual_greedy(dec, p, 1.0, 10)
    assert dec.generate(p, beams=1, penalty=1.5)[0] == manual_greedy(dec, p, 1.5, 10)


def test_neutral_penalty_matches_plain_log_softmax():
    dec = make(8)
    p = prefix(8)
    lp = dec._step_logprobs(p.data[0], [[4, 4, 5]], "change", 1.0, 1.0)
    raw = dec.logits(p, np.array([[0, 4, 4, 5]])).data[0, -1]
    np.testing.assert_allclose(lp[0], ops.log_softmax_values(raw), atol=1e-14)


def test_penalty_is_sign_aware():
    dec = make(9)
    p = prefix(9)
    raw = dec.logits(p, np.array([[0, 4, 5]])).data[0, -1]
    lp = dec._step_logprobs(p.data[0], [[4, 5]], "change", 2.0, 1.0)
    adj = raw.copy()
    for t in (4, 5):
        adj[t] = adj[t] / 2.0 if adj[t] > 0 else adj[t] * 2.0
    np.testing.assert_allclose(lp[0], ops.log_softmax_values(adj), atol=1e-14)


@pytest.mark.parametrize("seed", range(6))
def test_beam_score_not_below_greedy(seed):
    dec = make(seed + 20)
    p = prefix(seed + 20)
    assert dec.generate(p, beams=5)[1] >= dec.generate(p, beams=1)[1] - 1e-12


def test_generation_respects_max_len():
    dec = make(10)
    seq, _ = dec.generate(prefix(10), max_len=3)
    assert len(seq) <= 3
    assert all(len(s) <= 4 for s in dec.greedy(prefix(10, b=3), max_len=4))


def test_batched_greedy_matches_single():
    dec = make(11)
    p = prefix(11, b=3)
    batch = dec.greedy(p)
    for i in range(3):
        assert batch[i] == dec.greedy(Tensor(p.data[i:i + 1]))[0]


def test_vocabulary_round_trip(tmp_path):
    v = Vocabulary(["the", "red", "cube"])
    assert (v.bos, v.eos, v.pad) == (0, 1, 2) and len(v) == 6
    assert v.encode("the red cube") == [3, 4, 5, 1]
    assert v.decode([0, 3, 4, 1, 5]) == "the red"
    v.save(tmp_path / "v.txt")
    w = Vocabulary.load(tmp_path / "v.txt")
    assert w.tokens == v.tokens
    with pytest.raises(KeyError):
        v.encode("the blue cube")
