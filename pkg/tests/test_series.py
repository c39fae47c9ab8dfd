import math
import time

import numpy as np
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dickesim.parallel import block_ranges, map_blocks, map_items
from dickesim.series import MomentAccumulator, member_features, reduce_blocks

values = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@given(arrays(float, st.tuples(st.integers(2, 60), st.integers(1, 4)), elements=values),
       st.integers(1, 20))
def test_accumulator_matches_numpy(data, block):
    acc = MomentAccumulator()
    for a, b in block_ranges(data.shape[0], block):
        acc.add(data[a:b])
    assert acc.count == data.shape[0]
    assert np.allclose(acc.mean, data.mean(0), rtol=1e-10, atol=1e-9)
    assert np.allclose(acc.variance(), data.var(0, ddof=1), rtol=1e-8, atol=1e-6)
    assert np.allclose(acc.stderr(), data.std(0, ddof=1) / math.sqrt(data.shape[0]),
                       rtol=1e-8, atol=1e-6)


def test_single_member_gives_nan_spread():
    acc = MomentAccumulator()
    acc.add(np.ones((1, 3)))
    assert np.all(np.isnan(acc.variance())) and np.all(np.isnan(acc.stderr()))


def test_member_features():
    raw = np.array([[2.0, -1.0, 3.0, 0.5, -0.25]])
    f = member_features(raw, 8, 0.5)[0]
    s = 1 / math.sqrt(4.0)
    x, p = math.sqrt(2) * 0.5, -math.sqrt(2) * 0.25
    assert np.allclose(f, [2, -1, 3, x, p, 0.3125 - 0.5, p + 3 * s, p - 3 * s, x - s, x + s])


def test_reduce_blocks_keeps_samples_and_second_moment():
    rng = np.random.default_rng(0)
    raw = rng.normal(size=(30, 4, 5))
    s = reduce_blocks(np.arange(4) * 1e-5, [raw[:10], raw[10:]], 4, 0.5, keep_samples=True)
    assert np.array_equal(s.samples, raw)
    assert np.allclose(s.second_moment("sz"), np.mean(raw[..., 2] ** 2, axis=0))
    assert s.at(2.4e-5) == 2 and np.allclose(s.t_ms, [0, 0.01, 0.02, 0.03])


def test_map_results_in_order_for_any_worker_count():
    def slow(i):
        time.sleep(0.001 * (5 - i % 5))
        return i * i

    expect = [i * i for i in range(23)]
    for w in (1, 2, 7):
        assert map_items(slow, 23, w) == expect
        assert map_blocks(lambda a, b: list(range(a, b)), 23, 4, w) == \
            [list(range(a, b)) for a, b in block_ranges(23, 4)]
