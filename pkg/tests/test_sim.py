import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rateless_avc.channel import ChannelFamily, Distribution, Dmc, total_variation
from rateless_avc.sim import (
    Codebook,
    DecoderConfig,
    SimError,
    check_delta_close,
    dsi_decode,
    generate_codebook,
    run_sim,
    transmit,
)
from rateless_avc.stopping import Policy, StateProfile, symmetric_policy, two_piece_policy

TWO_THIRDS = symmetric_policy([2 / 3])


class TestCodebook:
    def test_reproducible(self, fam):
        a = generate_codebook(fam, TWO_THIRDS, 3, 10, seed=5)
        b = generate_codebook(fam, TWO_THIRDS, 3, 10, seed=5)
        assert a.codewords.shape == (8, 10)
        assert np.array_equal(a.codewords, b.codewords)
        assert not np.array_equal(a.codewords, generate_codebook(fam, TWO_THIRDS, 3, 10, seed=6).codewords)
        assert a.codewords.min() >= 0 and a.codewords.max() < 4

    def test_column_frequencies(self, fam):
        pol = two_piece_policy(0.2, 0.5, 0.9)
        book = generate_codebook(fam, pol, 10, 12, seed=1)
        for j in range(12):
            q = np.bincount(book.codewords[:, j], minlength=4) / book.size
            assert total_variation(q, pol.pieces[book.piece_map[j]].dist.probs) <= 0.05
        assert book.piece_map.tolist() == [0] * 5 + [1] * 7

    def test_two_thirds_symbol_frequency(self, fam):
        book = generate_codebook(fam, TWO_THIRDS, 10, 30, seed=2)
        freq = np.bincount(book.codewords.ravel(), minlength=4) / book.codewords.size
        assert freq[0] == pytest.approx(1 / 3, abs=0.01)
        assert freq[1] == pytest.approx(1 / 3, abs=0.01)

    def test_size_guard(self, fam):
        with pytest.raises(SimError, match="guard"):
            generate_codebook(fam, TWO_THIRDS, 15, 2, seed=0)
        assert generate_codebook(fam, TWO_THIRDS, 15, 2, seed=0, max_k=15).size == 2**15


class TestDeltaClose:
    def test_exact_marginals(self, fam):
        words = np.tile(np.arange(4), (8, 1)).T.copy()  # every column is 0,1,2,3
        book = Codebook(2, words, np.zeros(8, int), (Distribution.uniform(4),))
        ok, _, worst = check_delta_close(book, symmetric_policy([0.5]), 0.01)
        assert ok and worst == 0

    def test_constant_codebook_fails_at_once(self, fam):
        book = Codebook(3, np.zeros((8, 20), int), np.zeros(20, int), (TWO_THIRDS.pieces[0].dist,))
        ok, prefix, worst = check_delta_close(book, TWO_THIRDS, 0.1)
        assert not ok and prefix == 1 and worst == pytest.approx(2 / 3)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000), st.floats(0.001, 0.2), st.floats(0, 0.3))
    def test_monotone_in_delta(self, fam, seed, delta, extra):
        book = generate_codebook(fam, TWO_THIRDS, 5, 20, seed)
        if check_delta_close(book, TWO_THIRDS, delta)[0]:
            assert check_delta_close(book, TWO_THIRDS, delta + extra)[0]


def noiseless_family():
    w = np.zeros((4, 5))
    w[[0, 1, 2, 3], [0, 1, 2, 3]] = 1
    return ChannelFamily((("1", Dmc(w)),))


class TestDecoder:
    def test_noiseless_subchannel(self):
        fam = noiseless_family()
        pol = Policy.single(Distribution([0, 0, 0.5, 0.5]))
        book = generate_codebook(fam, pol, 4, 64, seed=3)
        prof = StateProfile.constant("1")
        for msg in range(book.size):
            y = book.codewords[msg]
            # the sent word's type sits within its own quantisation error of the target
            g = np.abs(np.bincount(y, minlength=4)[2:] / 64 - 0.5).max() + 1e-9
            got = dsi_decode(book, fam, prof, y, DecoderConfig(g=max(g, 0.02)))
            assert got == msg

    def test_length_mismatch(self, fam):
        book = generate_codebook(fam, TWO_THIRDS, 3, 10, seed=0)
        with pytest.raises(SimError):
            dsi_decode(book, fam, StateProfile.constant("1"), np.zeros(9, int), DecoderConfig(), decode_time=10)
        with pytest.raises(SimError):
            dsi_decode(book, fam, StateProfile.constant("1"), np.zeros(11, int), DecoderConfig())

    def test_deterministic(self, fam):
        book = generate_codebook(fam, TWO_THIRDS, 6, 40, seed=0)
        prof = StateProfile.parse("1^2,2^inf")
        y = transmit(fam, np.array([0] * 12 + [1] * 28), book.codewords[9], np.random.default_rng(0))
        first = dsi_decode(book, fam, prof, y, DecoderConfig(g=0.05))
        assert all(dsi_decode(book, fam, prof, y, DecoderConfig(g=0.05)) == first for _ in range(3))

    def test_falls_back_to_first_message(self, fam):
        book = generate_codebook(fam, TWO_THIRDS, 3, 12, seed=0)
        assert dsi_decode(book, fam, StateProfile.constant("1"), np.full(12, 4), DecoderConfig(g=0.01)) == 0

    def test_config_validation(self):
        with pytest.raises(SimError):
            DecoderConfig(g=0)
        with pytest.raises(SimError):
            DecoderConfig(delta=0)


class TestRunSim:
    def test_no_trials(self, fam):
        out = run_sim(fam, TWO_THIRDS, StateProfile.constant("1"), 6, DecoderConfig(), 0, seed=0)
        assert out.errors == 0 and out.trials == 0

    def test_subchunks_partition_decode_time(self, fam):
        pol = two_piece_policy(0.3, 1.5)
        out = run_sim(fam, pol, StateProfile.parse("1^0.5,2^1.25,1^inf"), 8, DecoderConfig(delta=0.3), 5, seed=1)
        assert sum(d.length for d in out.per_subchunk_diag) == out.decode_time
        assert len(out.per_subchunk_diag) == 4
        assert out.decode_time == int(np.ceil(1.3 * out.stopping_time))

    def test_single_codeword_never_errs(self, fam):
        out = run_sim(fam, TWO_THIRDS, StateProfile.constant("2"), 0, DecoderConfig(), 30, seed=4)
        assert out.errors == 0

    def test_deterministic(self, fam):
        args = (fam, TWO_THIRDS, StateProfile.constant("2"), 6, DecoderConfig(), 40)
        a, b = run_sim(*args, seed=11), run_sim(*args, seed=11)
        assert a == b
        assert run_sim(*args, seed=11, workers=3) == a

    def test_ensemble_mode(self, fam):
        args = (fam, TWO_THIRDS, StateProfile.constant("2"), 6, DecoderConfig(), 40)
        a = run_sim(*args, seed=11, ensemble=True)
        assert a == run_sim(*args, seed=11, ensemble=True)
        assert a.trials == 40

    def test_unbounded_policy(self, fam):
        with pytest.raises(SimError):
            run_sim(fam, symmetric_policy([0.0]), StateProfile.constant("2"), 4, DecoderConfig(), 1, seed=0)

    @pytest.mark.slow
    def test_error_falls_with_delta(self, fam):
        prof = StateProfile.constant("2")
        lower = 0
        for seed in range(5):
            lo = run_sim(fam, TWO_THIRDS, prof, 8, DecoderConfig(delta=0.1), 500, seed).errors
            hi = run_sim(fam, TWO_THIRDS, prof, 8, DecoderConfig(delta=0.5), 500, seed).errors
            lower += hi < lo
        assert lower >= 3

    def test_sent_word_type_concentrates(self, fam):
        prof = StateProfile.constant("1")
        dist = [run_sim(fam, TWO_THIRDS, prof, k, DecoderConfig(), 100, seed=3).mean_max_distance for k in (6, 8, 10, 12)]
        assert all(b < a for a, b in zip(dist, dist[1:]))

    def test_transmit_follows_channel(self, fam):
        rng = np.random.default_rng(0)
        y = transmit(fam, np.ones(20000, int), np.zeros(20000, int), rng)
        freq = np.bincount(y, minlength=5) / y.size
        assert np.allclose(freq, fam.dmc("2").matrix[0], atol=0.02)


class TestDecoderLimits:
    def test_rate_above_capacity(self, fam):
        out = run_sim(fam, TWO_THIRDS, StateProfile.constant("1"), 8, DecoderConfig(g=0.12), 200, seed=7, decode_time=4)
        assert out.error_rate >= 0.5

    @pytest.mark.parametrize("label", ["1", "2"])
    def test_independent_pair_distance(self, fam, label):
        # a wrong codeword is independent of the output, so its joint type tends to p(x)q(y);
        # the decoder can only reject it when g is below this gap
        p = TWO_THIRDS.pieces[0].dist.probs
        w = fam.dmc(label).matrix
        joint = p[:, None] * w
        indep = p[:, None] * (p @ w)[None, :]
        assert np.abs(joint - indep).max() == pytest.approx(1 / 12, abs=1e-12)
