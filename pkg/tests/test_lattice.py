import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from torusflow.errors import InputError
from torusflow.lattice import LatticeSpec, apply_jump, decode, encode, hamming, hamming_matrix, jump_ops

specs = st.builds(LatticeSpec, st.integers(2, 6), st.integers(1, 4))


@given(specs, st.data())
def test_encode_decode_roundtrip(spec, data):
    i = data.draw(st.integers(0, spec.size - 1))
    assert encode(decode(i, spec), spec) == i
    assert spec.encode(spec.coords[i]) == i


def test_little_endian_layout():
    spec = LatticeSpec(3, 2)
    assert encode((1, 0), spec) == 1
    assert encode((0, 1), spec) == 3
    assert decode(7, spec) == (1, 2)


def test_operator_counts_and_order():
    spec = LatticeSpec(4, 2)
    nn = jump_ops(spec, "nnrw")
    assert len(nn) == 4
    assert [(o.axis, o.sign) for o in nn] == [(0, 1), (0, -1), (1, 1), (1, -1)]
    ur = jump_ops(spec, "urw")
    assert len(ur) == 6
    assert [(o.axis, o.shift) for o in ur] == [(0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3)]


@given(specs, st.sampled_from(["nnrw", "urw"]), st.data())
def test_jump_changes_one_coordinate(spec, family, data):
    x = data.draw(st.tuples(*[st.integers(0, spec.m - 1)] * spec.d))
    for op in jump_ops(spec, family):
        y = apply_jump(x, op, spec)
        assert hamming(x, y) == 1
        assert apply_jump(y, op.inverse(spec), spec) == x


@given(specs, st.sampled_from(["nnrw", "urw"]))
def test_jump_table_matches_scalar_action(spec, family):
    table = spec.jump_table(family)
    ops = jump_ops(spec, family)
    for x in range(0, spec.size, max(1, spec.size // 7)):
        for j, op in enumerate(ops):
            assert table[x, j] == encode(op.apply(decode(x, spec), spec), spec)


def test_urw_reaches_every_hamming_neighbour():
    spec = LatticeSpec(3, 2)
    table = spec.jump_table("urw")
    H = hamming_matrix(spec)
    for x in range(spec.size):
        assert sorted(table[x]) == sorted(np.flatnonzero(H[x] == 1))


def test_m2_nnrw_directions_coincide():
    spec = LatticeSpec(2, 1)
    table = spec.jump_table("nnrw")
    assert table[0, 0] == table[0, 1] == 1


@pytest.mark.parametrize("m,d", [(1, 1), (3, 0), (2.5, 1)])
def test_invalid_spec(m, d):
    with pytest.raises(InputError):
        LatticeSpec(m, d)


def test_invalid_states():
    spec = LatticeSpec(3, 2)
    with pytest.raises(InputError):
        encode((3, 0), spec)
    with pytest.raises(InputError):
        encode((0,), spec)
    with pytest.raises(InputError):
        decode(9, spec)
    with pytest.raises(InputError):
        hamming((0, 1), (0,))
    with pytest.raises(InputError):
        jump_ops(spec, "levy")
