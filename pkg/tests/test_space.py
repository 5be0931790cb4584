import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nases.space import (
    NUM_OPS,
    Architecture,
    InvalidArchitecture,
    InvalidVector,
    LayerSpec,
    OperatorKind,
    SpaceConfig,
    SpaceTooLarge,
    discretize,
    encode_origin,
    enumerate_space,
    random_architecture,
)


@st.composite
def architectures(draw, max_layers=8, skips=True):
    L = draw(st.integers(1, max_layers))
    layers = []
    for i in range(L):
        op = draw(st.sampled_from(list(OperatorKind)))
        sk = draw(st.frozensets(st.integers(0, i - 1), max_size=i)) if (skips and i) else frozenset()
        layers.append(LayerSpec(op, sk))
    return Architecture(tuple(layers))


def test_dimensions_follow_layer_count():
    cfg = SpaceConfig(15)
    assert cfg.token_width == NUM_OPS + 14
    assert cfg.origin_dim == 15 * 19
    assert SpaceConfig(4, skips_enabled=False).size == 625


@given(architectures())
def test_round_trip_property(arch):
    cfg = SpaceConfig(len(arch))
    v = encode_origin(arch, cfg)
    assert v.shape == (cfg.origin_dim,)
    assert set(np.unique(v)) <= {0.0, 1.0}
    assert discretize(v, cfg) == arch


@given(st.integers(1, 6), st.data())
def test_discretize_always_valid(L, data):
    cfg = SpaceConfig(L)
    v = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=cfg.origin_dim, max_size=cfg.origin_dim)))
    arch = discretize(v, cfg)
    arch.check(cfg)
    assert discretize(encode_origin(arch, cfg), cfg) == arch


@given(architectures())
def test_json_round_trip_is_canonical(arch):
    text = arch.to_json()
    back = Architecture.from_json(text)
    assert back == arch
    assert back.to_json() == text


def test_discretize_tie_takes_lowest_operator():
    cfg = SpaceConfig(1)
    assert discretize(np.full(cfg.origin_dim, 0.3), cfg).ops == [OperatorKind.IDENTITY]
    v = np.array([0.1, 0.9, 0.9, 0.2, 0.0])
    assert discretize(v, cfg).ops == [OperatorKind.SEP_CONV_3X3]


def test_skip_threshold_is_strict():
    cfg = SpaceConfig(2)
    v = np.zeros(cfg.origin_dim)
    v[cfg.token_width + NUM_OPS] = 0.5
    assert discretize(v, cfg).layers[1].skips == frozenset()
    v[cfg.token_width + NUM_OPS] = 0.5001
    assert discretize(v, cfg).layers[1].skips == {0}


def test_non_causal_skip_slots_ignored():
    cfg = SpaceConfig(3)
    v = np.zeros(cfg.origin_dim)
    v[NUM_OPS:cfg.token_width] = 1.0  # layer 0 has no earlier layers
    v[cfg.token_width + NUM_OPS + 1] = 1.0  # layer 1 -> 1 is not earlier either
    arch = discretize(v, cfg)
    assert arch.layers[0].skips == frozenset() and arch.layers[1].skips == frozenset()


def test_disabled_skips_ignore_slots():
    cfg = SpaceConfig(3, skips_enabled=False)
    v = np.ones(cfg.origin_dim)
    assert all(not lay.skips for lay in discretize(v, cfg).layers)


def test_wrong_vector_length():
    with pytest.raises(InvalidVector):
        discretize(np.zeros(7), SpaceConfig(2))


def test_invalid_architectures_rejected():
    with pytest.raises(InvalidArchitecture):
        Architecture((LayerSpec(OperatorKind.IDENTITY, {0}),))
    arch = random_architecture(SpaceConfig(3), 0)
    with pytest.raises(InvalidArchitecture):
        encode_origin(arch, SpaceConfig(4))
    with pytest.raises(InvalidArchitecture):
        Architecture.from_dict({"layers": [{"op": "conv_7x7", "skips": []}]})


def test_enumeration_counts_and_uniqueness():
    for cfg, n in [(SpaceConfig(4, False), 625), (SpaceConfig(3), 5**3 * 2**3), (SpaceConfig(1), 5)]:
        archs = enumerate_space(cfg)
        assert len(archs) == n == cfg.size
        assert len(set(archs)) == n


def test_enumeration_cap():
    with pytest.raises(SpaceTooLarge):
        enumerate_space(SpaceConfig(15))


def test_random_architecture_seeded_and_valid():
    cfg = SpaceConfig(15)
    a, b = random_architecture(cfg, 7), random_architecture(cfg, 7)
    assert a == b
    a.check(cfg)
    assert len({random_architecture(cfg, s) for s in range(50)}) == 50
    assert not any(lay.skips for lay in random_architecture(SpaceConfig(5, False), 3).layers)


def test_encode_origin_examples():
    cfg = SpaceConfig(2)
    arch = Architecture((LayerSpec(OperatorKind.IDENTITY), LayerSpec(OperatorKind.MAX_POOL_3X3, {0})))
    assert encode_origin(arch, cfg).tolist() == [1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1]
    assert encode_origin(Architecture.from_ops([0]), SpaceConfig(1)).tolist() == [1, 0, 0, 0, 0]
    assert len(enumerate_space(SpaceConfig(2))) == 50


def test_random_architecture_op_frequencies():
    cfg = SpaceConfig(4, skips_enabled=False)
    counts = np.zeros((4, NUM_OPS))
    for s in range(10_000):
        for i, op in enumerate(random_architecture(cfg, s).ops):
            counts[i, op] += 1
    freq = counts / 10_000
    assert np.all((freq >= 0.18) & (freq <= 0.22))


@settings(max_examples=50)
@given(st.integers(1, 5), st.data())
def test_discretize_idempotent_on_unit_cube(L, data):
    cfg = SpaceConfig(L)
    v = np.array(data.draw(st.lists(st.floats(0, 1), min_size=cfg.origin_dim, max_size=cfg.origin_dim)))
    d = discretize(v, cfg)
    assert discretize(encode_origin(d, cfg), cfg) == d
