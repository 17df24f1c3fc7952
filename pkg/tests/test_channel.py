import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dmpnn.channel import (ChannelRealization, argmin_rate, min_rate, rate, rates,
                           sample_channels, sum_rate, utility)
from dmpnn.graphs import complete_graph


def test_same_seed_same_channel():
    np.testing.assert_array_equal(sample_channels(4, 11).gains, sample_channels(4, 11).gains)


def test_gains_must_be_positive():
    with pytest.raises(ValueError):
        ChannelRealization(np.array([[1.0, 0.0], [0.5, 1.0]]))


def test_zero_power_zero_rate():
    a = sample_channels(3, 0)
    assert rate(0, a, [0.0, 5.0, 5.0], complete_graph(3)) == 0.0


def test_single_link_closed_form():
    a = ChannelRealization(np.array([[1.0]]))
    assert rate(0, a, [10.0], complete_graph(1)) == pytest.approx(np.log(11.0))
    assert sum_rate(a, [10.0], complete_graph(1)) == pytest.approx(2.397895, abs=1e-6)


def test_symmetric_pair():
    a = ChannelRealization(np.ones((2, 2)))
    e = complete_graph(2)
    assert rate(0, a, [10.0, 10.0], e) == pytest.approx(np.log(21 / 11))
    assert rate(0, a, [10.0, 10.0], e) == pytest.approx(0.646627, abs=1e-6)
    assert sum_rate(a, [10.0, 10.0], e) == pytest.approx(2 * np.log(21 / 11))
    assert min_rate(a, [10.0, 10.0], e) == pytest.approx(np.log(21 / 11))


def test_all_zero_power():
    a = sample_channels(4, 2)
    assert sum_rate(a, np.zeros(4), complete_graph(4)) == 0.0
    assert min_rate(a, np.zeros(4), complete_graph(4)) == 0.0


def test_min_rate_selects_weak_link():
    a = ChannelRealization(np.array([[50.0, 1.0], [1.0, 0.1]]))
    x = [5.0, 5.0]
    assert argmin_rate(a, x, complete_graph(2)) == 1
    assert min_rate(a, x, complete_graph(2)) == rate(1, a, x, complete_graph(2))


def test_interference_only_from_physical_neighbours():
    a = sample_channels(3, 4)
    x = [3.0, 4.0, 5.0]
    r = rates(a, x, {(0, 1)})
    assert r[2] == pytest.approx(np.log(1 + a.gains[2, 2] * 5.0))
    assert r[0] == pytest.approx(np.log(1 + a.gains[0, 0] * 3.0 / (1 + a.gains[1, 0] * 4.0)))


def test_unknown_utility_tag():
    with pytest.raises(ValueError):
        utility("max-rate", sample_channels(2, 0), [1.0, 1.0], complete_graph(2))


@given(st.integers(1, 6), st.integers(0, 2**32), st.data())
def test_vector_and_scalar_rates_agree(n, seed, data):
    a = sample_channels(n, seed)
    x = np.array(data.draw(st.lists(st.floats(0, 10), min_size=n, max_size=n)))
    e = complete_graph(n)
    r = rates(a, x, e)
    np.testing.assert_allclose(r, [rate(i, a, x, e) for i in range(n)], rtol=1e-12, atol=1e-15)
    assert np.all(r >= 0)


@given(st.integers(2, 5), st.integers(0, 2**32), st.integers(0, 4), st.floats(0.1, 5))
def test_rate_monotone_in_own_power(n, seed, i, extra):
    i = i % n
    a = sample_channels(n, seed)
    x = np.full(n, 3.0)
    y = x.copy()
    y[i] += extra
    e = complete_graph(n)
    assert rate(i, a, y, e) >= rate(i, a, x, e)
    assert all(rate(j, a, y, e) <= rate(j, a, x, e) for j in range(n) if j != i)
