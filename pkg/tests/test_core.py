import numpy as np
import pytest

from core import BallDomain, SampleStream, STREAM_BLOCK, derive_seed, make_rng, next_index, project_ball
from errors import ConfigError, NumericError


class TestProjectBall:
    @pytest.mark.parametrize(
        "x, center, radius, expected",
        [
            ((3.0, 4.0), (0.0, 0.0), 1.0, (0.6, 0.8)),
            ((0.1, 0.2), (0.0, 0.0), 1.0, (0.1, 0.2)),
            ((5.0, 0.0), (1.0, 0.0), 2.0, (3.0, 0.0)),
        ],
    )
    def test_examples(self, x, center, radius, expected):
        domain = BallDomain.ball(radius, center=np.array(center))
        np.testing.assert_allclose(project_ball(np.array(x), domain), expected, atol=1e-15)

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        domain = BallDomain.ball(0.7, center=np.array([0.2, -0.1, 0.3]))
        for _ in range(200):
            once = project_ball(rng.normal(scale=3.0, size=3), domain)
            assert np.array_equal(project_ball(once, domain), once)

    def test_result_is_feasible(self):
        rng = np.random.default_rng(1)
        domain = BallDomain.ball(0.1)
        for _ in range(200):
            assert domain.contains(project_ball(rng.normal(scale=10.0, size=4), domain))

    @pytest.mark.parametrize("center", [np.zeros(3), np.array([1.5, -2.0, 0.25])], ids=["origin", "shifted"])
    def test_non_expansive(self, center):
        rng = np.random.default_rng(2)
        domain = BallDomain.ball(0.8, center=center)
        for _ in range(500):
            x = center + rng.normal(scale=2.0, size=3)
            y = center + rng.normal(scale=2.0, size=3)
            u = rng.normal(size=3)
            v = center + u / np.linalg.norm(u) * 0.8 * rng.random()
            px, py = project_ball(x, domain), project_ball(y, domain)
            assert np.linalg.norm(px - v) <= np.linalg.norm(x - v) + 1e-12
            assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-12

    def test_unbounded_is_identity(self):
        x = np.array([1e6, -3.0])
        assert project_ball(x, BallDomain.whole_space()) is x

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            project_ball(np.array([np.nan, 0.0]), BallDomain.ball(1.0))

    def test_bad_radius(self):
        with pytest.raises(ConfigError):
            BallDomain(radius=0.0)
        with pytest.raises(ConfigError):
            BallDomain(radius=-1.0)


class TestSampleStream:
    def test_same_seed_same_sequence(self):
        a = SampleStream(42, 17).take(1000)
        b = SampleStream(42, 17).take(1000)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        assert not np.array_equal(SampleStream(1, 1000).take(100), SampleStream(2, 1000).take(100))

    def test_single_element(self):
        stream = SampleStream(7, 1)
        assert all(next_index(stream) == 0 for _ in range(50))

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            SampleStream(0, 0)

    def test_take_matches_next_index_across_blocks(self):
        k = STREAM_BLOCK + 100
        stream = SampleStream(3, 50)
        one_by_one = np.array([stream.next_index() for _ in range(k)])
        assert np.array_equal(SampleStream(3, 50).take(k), one_by_one)

    def test_replay_from_position(self):
        full = SampleStream(9, 31).take(STREAM_BLOCK * 2)
        resumed = SampleStream.replay(9, 31, position=STREAM_BLOCK - 5).take(10)
        assert np.array_equal(resumed, full[STREAM_BLOCK - 5:STREAM_BLOCK + 5])

    def test_fork_is_independent(self):
        stream = SampleStream(5, 10)
        stream.take(3)
        fork = stream.fork()
        assert np.array_equal(fork.take(20), stream.take(20))

    def test_range_and_uniformity(self):
        draws = SampleStream(11, 10).take(1_000_000)
        assert draws.min() == 0 and draws.max() == 9
        freq = np.bincount(draws, minlength=10) / draws.size
        np.testing.assert_allclose(freq, 0.1, atol=5e-3)


class TestSeeds:
    def test_derive_seed_deterministic(self):
        assert derive_seed(3, 1, 2) == derive_seed(3, 1, 2)

    def test_derive_seed_keys_matter(self):
        seeds = {derive_seed(0, k) for k in range(100)}
        assert len(seeds) == 100
        assert all(0 <= s < 2**63 for s in seeds)

    def test_make_rng_reproducible(self):
        np.testing.assert_array_equal(make_rng(4, 2).random(5), make_rng(4, 2).random(5))
