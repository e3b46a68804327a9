import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from syntaxnav.agent import Rollout, StepTrace, init_model, rollout
from syntaxnav.config import ConfigError, TrainConfig, dump_config, load_config, preset
from syntaxnav.encoder import Vocabulary, encode_instruction
from syntaxnav.nnmath import Tensor, log_softmax, no_tape
from syntaxnav.training import (
    BatchItem,
    LengthMismatch,
    TrainingError,
    batch_indices,
    compute_rewards,
    discounted_returns,
    entropy,
    il_loss,
    load_model,
    mixed_step,
    rl_losses,
    train,
)
from syntaxnav.treeio import DependencyTree
from syntaxnav.world import N_VIEWS, Edge, EnvironmentGraph, Episode, Viewpoint

TINY = dict(embed_dim=6, bilstm_hidden=5, tree_hidden=8, action_dim=4, decoder_hidden=8, value_hidden=6)


def line(n, landmarks=None):
    lms = landmarks or ["sofa", "stairs", "plant", "lamp", "table", "door"]
    vps = [Viewpoint(i, (0.0, 2.0 * i, 0.0), (lms[i % len(lms)],) * N_VIEWS) for i in range(n)]
    return EnvironmentGraph("line", vps, [Edge(i, i + 1, 2.0) for i in range(n - 1)], 6)


def fake_rollout(visits):
    """``visits`` is the position before each action followed by the final position."""
    dummy = StepTrace(0, np.zeros(1), np.zeros(1), np.ones(1), [0], 0, Tensor(np.zeros(1)), Tensor(np.zeros(1)))
    steps = [replace(dummy, viewpoint=v) for v in visits[:-1]]
    path = [v for k, v in enumerate(visits) if k == 0 or v != visits[k - 1]]
    return Rollout(path, steps, True)


# -- returns and rewards ----------------------------------------------------


def test_worked_returns_example():
    R = discounted_returns([-1.0, 1.0, 3.0], 0.9)
    assert R == pytest.approx([2.33, 3.7, 3.0], abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([-3.0, -1.0, 1.0, 3.0]), min_size=1, max_size=10), st.floats(0.01, 1.0))
def test_returns_match_direct_sum(r, gamma):
    R = discounted_returns(r, gamma)
    for t in range(len(r)):
        direct = sum(gamma ** (k - t) * r[k] for k in range(t, len(r)))
        assert abs(R[t] - direct) <= 1e-12


def test_rewards_closer_and_final():
    g = line(6)
    # 0 -> 1 -> 2 -> 3 -> 2 then STOP at 2, 2 m from goal 3: the STOP step scores +3
    assert compute_rewards(fake_rollout([0, 1, 2, 3, 2, 2]), g, goal=3) == [1.0, 1.0, 1.0, -1.0, 3.0]
    # stopping 4 m away scores -3
    assert compute_rewards(fake_rollout([0, 1, 1]), g, goal=3) == [1.0, -3.0]


def test_reward_for_equal_distance_move_is_negative():
    # 1 and 2 are both one edge from the goal 0, so 1 -> 2 is not strictly closer
    vps = [Viewpoint(i, (0.0, 0.0, 0.0), ("sofa",) * N_VIEWS) for i in range(3)]
    g = EnvironmentGraph("tri", vps, [Edge(0, 1, 2.0), Edge(0, 2, 2.0), Edge(1, 2, 2.0)], 4)
    assert compute_rewards(fake_rollout([1, 2, 0, 0]), g, goal=0) == [-1.0, 1.0, 3.0]


# -- losses -----------------------------------------------------------------


def test_il_loss_uniform_closed_form():
    lp = [log_softmax(Tensor(np.zeros(4))) for _ in range(3)]
    assert il_loss(lp, [0, 3, 1]).item() == pytest.approx(3 * math.log(4), abs=1e-12)


def test_il_loss_length_mismatch():
    lp = [log_softmax(Tensor(np.zeros(4)))]
    with pytest.raises(LengthMismatch):
        il_loss(lp, [0, 1])


@pytest.mark.parametrize("k", [1, 2, 3, 5, 36])
def test_entropy_of_uniform(k):
    assert entropy(log_softmax(Tensor(np.zeros(k)))).item() == pytest.approx(math.log(k), abs=1e-12)


def test_zero_advantage_zero_policy_loss():
    ro = fake_rollout([0, 1, 2])
    R = [1.5, -2.0]
    V = [Tensor(np.array(r)) for r in R]
    pol, val = rl_losses(ro, R, V, eta=0.0)
    assert pol.item() == 0.0 and val.item() == 0.0
    with pytest.raises(LengthMismatch):
        rl_losses(ro, R[:1], V, eta=0.0)


# -- mixed step -------------------------------------------------------------


def tiny_cfg(**kw):
    return preset("desk", **{**TINY, "eval_every": 0, **kw})


def one_hop_setup(goal_far=False, seed=0):
    g = line(5)
    tokens = ("walk", "to", "the", "stairs")
    tree = DependencyTree.from_heads(list(tokens), [0, 4, 4, 1])
    path = (0, 1, 2, 3, 4) if goal_far else (0, 1)
    ep = Episode("ep00000", g.name, tokens, tree, path, "train")
    vocab = Vocabulary.build([tokens])
    cfg = tiny_cfg(lambda_il=0.0, eta=0.0, lr=1e-5, max_steps=1)
    model = cfg.model(g.feature_dim)
    params = init_model(model, len(vocab), seed)
    params["value.W_v2"].data[...] = 0.0  # V = 0, so the advantage is the return
    return g, ep, vocab, cfg, model, params


def first_step(params, model, vocab, ep, g, rng=None):
    with no_tape():
        enc = encode_instruction(params, model, vocab.encode(ep.tokens), ep.tree)
        mode = "sample" if rng is not None else "greedy"
        return rollout(params, ep, g, enc, mode, 0.0, rng, max_steps=1)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("goal_far,sign", [(False, 1), (True, -1)])
def test_policy_gradient_sign(seed, goal_far, sign):
    g, ep, vocab, cfg, model, params = one_hop_setup(goal_far, seed)
    sampled = first_step(params, model, vocab, ep, g, np.random.default_rng([seed, 9]))
    a = sampled.actions[0]
    before = first_step(params, model, vocab, ep, g).steps[0].probs[a]
    item = BatchItem(ep, g, 0.0, vocab.encode(ep.tokens), np.random.default_rng([seed, 9]))
    new, rep = mixed_step(params, model, [item], cfg)
    after = first_step(new, model, vocab, ep, g).steps[0].probs[a]
    # one step: the return is +3 within radius and -3 beyond it
    assert rep["L_V"] == pytest.approx(4.5)
    assert sign * (after - before) > 0


def test_mix_identity_and_il_only_skips_rl(small_world):
    cfg = tiny_cfg(iterations=4, batch_size=2)
    seen = []
    train(small_world, cfg, 0, on_log=seen.append)
    for rec in seen:
        assert rec["L_MIX"] == (rec["L_RL"] + rec["L_V"]) + cfg.lambda_il * rec["L_IL"]
    il = train(small_world, replace(cfg, il_only=True), 0).log
    assert all(r["L_RL"] == 0.0 and r["L_V"] == 0.0 for r in il)


def test_empty_batch_rejected():
    _, _, _, cfg, model, params = one_hop_setup()
    with pytest.raises(TrainingError):
        mixed_step(params, model, [], cfg)


def test_overfit_single_episode(small_world):
    ep = next(e for e in small_world.split("train") if len(e.path) >= 3)
    vocab = Vocabulary.build([ep.tokens])
    cfg = tiny_cfg(il_only=True, lr=1e-2)
    model = cfg.model(small_world.feature_dim)
    params = init_model(model, len(vocab), 0)
    item = BatchItem(ep, small_world.graph_for(ep), small_world.start_heading(ep), vocab.encode(ep.tokens))
    for _ in range(300):
        params, rep = mixed_step(params, model, [item], cfg)
        if rep["L_IL"] < 0.01:
            break
    assert rep["L_IL"] < 0.01


# -- batching, determinism, resume ------------------------------------------


def test_batches_cover_each_epoch():
    n, B = 10, 3
    seq = [i for it in range(10) for i in batch_indices(n, B, 7, it)]
    for e in range(3):
        assert sorted(seq[e * n:(e + 1) * n]) == list(range(n))
    assert batch_indices(n, B, 7, 4) == batch_indices(n, B, 7, 4)
    assert seq != [i for it in range(10) for i in batch_indices(n, B, 8, it)]


def test_training_is_deterministic(small_world, tmp_path):
    cfg = tiny_cfg(iterations=12, batch_size=3, eval_every=6, eval_episodes=4)
    a = train(small_world, cfg, 5, out=tmp_path / "a.ckpt", log_path=tmp_path / "a.jsonl")
    b = train(small_world, cfg, 5, out=tmp_path / "b.ckpt", log_path=tmp_path / "b.jsonl")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert "SR_seen" in a.log[5] and "SR_unseen" in a.log[11]
    c = train(small_world, cfg, 6)
    assert any(not np.array_equal(c.params[n].data, a.params[n].data) for n in a.params.names())


def test_resume_is_bit_for_bit(small_world, tmp_path):
    cfg = tiny_cfg(iterations=10, batch_size=3, eval_every=5, eval_episodes=4)
    train(small_world, cfg, 1, out=tmp_path / "full.ckpt", log_path=tmp_path / "full.jsonl")
    part = train(small_world, cfg, 1, out=tmp_path / "part.ckpt", log_path=tmp_path / "part.jsonl", stop_after=4)
    assert part.iteration == 4
    assert load_model(tmp_path / "part.ckpt").header["iteration"] == 4
    train(small_world, cfg, 1, out=tmp_path / "part.ckpt", log_path=tmp_path / "part.jsonl",
          resume=tmp_path / "part.ckpt")
    assert (tmp_path / "full.ckpt").read_bytes() == (tmp_path / "part.ckpt").read_bytes()
    assert (tmp_path / "full.jsonl").read_bytes() == (tmp_path / "part.jsonl").read_bytes()


def test_resume_rejects_other_config(small_world, tmp_path):
    cfg = tiny_cfg(iterations=2, batch_size=2)
    train(small_world, cfg, 1, out=tmp_path / "x.ckpt")
    with pytest.raises(TrainingError):
        train(small_world, replace(cfg, lr=0.5), 1, resume=tmp_path / "x.ckpt")
    with pytest.raises(TrainingError):
        train(small_world, cfg, 2, resume=tmp_path / "x.ckpt")


def test_checkpoint_loads_as_model(small_world, tmp_path):
    cfg = tiny_cfg(iterations=1, batch_size=2, encoder="chain2")
    res = train(small_world, cfg, 0, out=tmp_path / "m.ckpt")
    lm = load_model(tmp_path / "m.ckpt")
    assert lm.model == res.model and lm.vocab.itos == res.vocab.itos
    assert lm.header["iteration"] == 1 and lm.header["world_seed"] == small_world.seed
    for n in res.params.names():
        assert np.array_equal(lm.params[n].data, res.params[n].data)


# -- config -----------------------------------------------------------------


def test_defaults_and_presets():
    cfg = TrainConfig()
    assert (cfg.lambda_il, cfg.gamma, cfg.eta) == (0.2, 0.9, 0.01)
    p = preset("full")
    assert (p.lr, p.batch_size) == (1e-4, 64)
    with pytest.raises(ConfigError):
        preset("huge")


def test_config_round_trip():
    cfg = preset("desk", encoder="chain", il_only=True, lr=3e-4)
    assert load_config(dump_config(cfg)) == cfg
    assert load_config("# just a comment\nbatch_size = 4  # trailing\n").batch_size == 4


@pytest.mark.parametrize("text", ["lr", "nope = 1", "batch_size = four", "il_only = maybe", "encoder = cnn",
                                  "gamma = 0"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        load_config(text)
