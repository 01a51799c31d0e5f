"""
Tests for the rng.py module.
"""

import numpy as np
from pytest import raises

import kvevict as ke


def test_keyed_generator_repeats():
    a = ke.keyed_generator(7, 0, 1, 2).standard_normal(5)
    b = ke.keyed_generator(7, 0, 1, 2).standard_normal(5)
    assert (a == b).all()


def test_keyed_generator_coordinates_differ():
    a = ke.keyed_generator(7, 0, 1, 2).standard_normal(5)
    b = ke.keyed_generator(7, 0, 2, 1).standard_normal(5)
    c = ke.keyed_generator(8, 0, 1, 2).standard_normal(5)
    assert not np.allclose(a, b)
    assert not np.allclose(a, c)


def test_keyed_generator_independent_of_creation_order():
    first = ke.keyed_generator(1, 1, 0, 3).random(4)
    for h in range(10):
        ke.keyed_generator(1, 1, 0, h).random(100)
    again = ke.keyed_generator(1, 1, 0, 3).random(4)
    assert (first == again).all()


def test_keyed_generator_negative():
    with raises(ValueError):
        ke.keyed_generator(-1)
    with raises(ValueError):
        ke.keyed_generator(1, -2)


def test_head_stream_values():
    s = ke.HeadRngStream(3, layer=1, head=2)
    assert s.advance().step == 1
    assert s.at(5).step == 5
    assert s.advance() == ke.HeadRngStream(3, 1, 2, 1)
    assert s.step == 0


def test_head_stream_draws():
    a = ke.HeadRngStream(3, 1, 2).generator().random(3)
    b = ke.HeadRngStream(3, 1, 2).generator().random(3)
    c = ke.HeadRngStream(3, 1, 2).advance().generator().random(3)
    assert (a == b).all()
    assert not np.allclose(a, c)


def test_head_stream_negative():
    with raises(ValueError):
        ke.HeadRngStream(0, layer=-1)
