import numpy as np
import pytest

from tsda import tensor as T
from tsda.losses import L2, EXPONENTIAL
from tsda.selection import enumerate_configs
from tsda.twostream import (
    CheckpointError,
    SharingMode,
    build_pair,
    coupling_terms,
    features,
    format_pattern,
    init_target_from_source,
    load_checkpoint,
    parse_pattern,
    predict,
    save_checkpoint,
)

MLP = [T.dense(2, 8), T.relu(), T.dense(8, 8), T.relu(), T.dense(8, 2)]
CNN = [T.conv2d(1, 2, 3), T.relu(), T.maxpool2d(), T.flatten(), T.dense(18, 4), T.relu(), T.dense(4, 3)]


def test_pattern_round_trip_and_unicode_minus():
    assert parse_pattern("+x-") == [SharingMode.COUPLED, SharingMode.INDEPENDENT, SharingMode.SHARED]
    assert parse_pattern("+−-") == parse_pattern("+--")
    assert format_pattern(parse_pattern("++---")) == "++---"
    with pytest.raises(ValueError):
        parse_pattern("+*-")


def test_shared_layers_alias_one_parameter_object():
    pair = build_pair(MLP, parse_pattern("+--"), seed=0)
    assert pair.source[2] is pair.target[2]
    assert pair.source[4] is pair.target[4]
    assert pair.source[0] is not pair.target[0]
    assert pair.omega == [0]
    names = pair.named_parameters()
    assert set(names) == {"L0.s.W", "L0.s.b", "L0.t.W", "L0.t.b", "L1.W", "L1.b", "L2.W", "L2.b", "L0.a", "L0.b_shift"}


def test_head_must_be_shared_and_pattern_length_must_match():
    with pytest.raises(ValueError):
        build_pair(MLP, parse_pattern("--+"))
    with pytest.raises(ValueError):
        build_pair(MLP, parse_pattern("+-"))
    with pytest.raises(ValueError):
        build_pair(MLP[:-1], parse_pattern("--"))


def test_source_init_does_not_depend_on_modes():
    a = build_pair(MLP, parse_pattern("---"), seed=3)
    b = build_pair(MLP, parse_pattern("++-"), seed=3)
    for pa, pb in zip(a.source, b.source):
        if pa.weights is not None:
            assert pa.weights.tobytes() == pb.weights.tobytes()


def test_independent_layer_has_no_coupling():
    pair = build_pair(MLP, parse_pattern("x+-"), seed=0)
    assert pair.omega == [1]
    assert set(pair.couplings) == {1}


@pytest.mark.parametrize("form", [L2, EXPONENTIAL])
def test_coupling_vanishes_after_init_from_source(form):
    pair = build_pair(MLP, parse_pattern("++-"), seed=0)
    for i in (0, 2):
        pair.target[i].weights += 1.0
    pair.couplings[0].a[...] = 3.0
    assert sum(coupling_terms(pair, form).values()) > 0
    init_target_from_source(pair)
    assert sum(coupling_terms(pair, form).values()) == 0.0


def test_every_enumerated_pattern_builds():
    for modes in enumerate_configs(3):
        pair = build_pair(CNN, modes, seed=0, input_shape=(1, 8, 8))
        assert pair.modes[-1] == SharingMode.SHARED


def test_streams_agree_when_everything_is_shared():
    pair = build_pair(CNN, parse_pattern("---"), seed=1, input_shape=(1, 8, 8))
    x = np.random.default_rng(0).normal(size=(5, 1, 8, 8))
    np.testing.assert_array_equal(predict(pair, "source", x), predict(pair, "target", x))
    assert features(pair, "source", x).shape == (5, 4)


def test_predict_is_batch_size_invariant():
    pair = build_pair(MLP, parse_pattern("+--"), seed=1)
    x = np.random.default_rng(0).normal(size=(11, 2))
    np.testing.assert_allclose(predict(pair, "target", x, batch_size=3), predict(pair, "target", x), rtol=1e-14)


@pytest.mark.parametrize("pattern", ["---", "+--", "x+-"])
def test_checkpoint_round_trip_is_bit_exact(tmp_path, pattern):
    pair = build_pair(CNN, parse_pattern(pattern), seed=2, input_shape=(1, 8, 8))
    for j in pair.couplings:
        pair.couplings[j].a[...] = 0.9
        pair.couplings[j].b[...] = -0.1
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, pair, "softmax_cross_entropy")
    back, task = load_checkpoint(path)
    assert task == "softmax_cross_entropy"
    assert back.specs == pair.specs and back.modes == pair.modes and back.input_shape == (1, 8, 8)
    for p, q in zip(pair.named_parameters().items(), back.named_parameters().items()):
        assert p[0] == q[0] and p[1].tobytes() == q[1].tobytes()
    # aliasing is restored for shared layers
    for j, i in enumerate(back.param_layers):
        assert (back.source[i] is back.target[i]) == back.is_shared(j)
    save_checkpoint(tmp_path / "again.ckpt", back, task)
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_corruption_is_detected(tmp_path):
    pair = build_pair(MLP, parse_pattern("+--"), seed=0)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, pair, "multiclass_hinge")
    raw = path.read_bytes()
    (tmp_path / "short").write_bytes(raw[:-3])
    (tmp_path / "long").write_bytes(raw + b"\0")
    (tmp_path / "magic").write_bytes(b"X" + raw[1:])
    for name in ("short", "long", "magic"):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / name)
