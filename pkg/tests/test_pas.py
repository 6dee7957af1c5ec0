import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shapelab.errors import ContractError
from shapelab.pas import (
    InterleaverSpec,
    QamConstellation,
    ShapedFrame,
    adjacent_pair_rate,
    deinterleave,
    generate_compound_sequence,
    iid_frame,
    interleave,
    pas_assemble,
    pas_demap,
    read_frame_csv,
    run_length_stats,
    structure_preserving_chain,
    windowed_composition_deviation,
    write_frame_csv,
)
from shapelab.shaping import AmplitudeAlphabet, AmplitudeDistribution, Composition, codec_for

A4 = AmplitudeAlphabet((1, 3, 5, 7))
P_FIG = AmplitudeDistribution(A4, (0.4, 0.3, 0.2, 0.1))
QAM64 = QamConstellation(64)


@pytest.fixture
def frame10():
    return generate_compound_sequence(codec_for(P_FIG, 10), 3, 7)


def assemble(frame, seed=0):
    signs = np.random.default_rng(seed).integers(0, 2, len(frame.amplitudes))
    return pas_assemble(frame, signs, QAM64)


class TestConstellation:
    def test_unit_power_uniform(self):
        assert np.mean(np.abs(QAM64.points()) ** 2) == pytest.approx(1.0, abs=1e-14)

    @pytest.mark.parametrize("order", [4, 16, 64, 256])
    def test_bijection_and_gray(self, order):
        c = QamConstellation(order)
        pts = c.points()
        assert len(np.unique(np.round(pts, 12))) == order
        bits = c.label_bits()
        # nearest neighbours differ in exactly one bit
        d = np.abs(pts[:, None] - pts[None, :])
        dmin = d[d > 0].min()
        for i, j in zip(*np.nonzero(np.isclose(d, dmin))):
            assert np.sum(bits[i] != bits[j]) == 1

    def test_sign_symmetry(self):
        pts = set(np.round(QAM64.points(), 12))
        for p in pts:
            assert np.round(-p.conjugate(), 12) in pts
            assert np.round(p.conjugate(), 12) in pts

    @pytest.mark.parametrize("order", [8, 32, 2])
    def test_rejects_non_square(self, order):
        with pytest.raises(ContractError):
            QamConstellation(order)

    def test_label_matches_points(self):
        rng = np.random.default_rng(0)
        amps = rng.integers(0, 4, 200)
        signs = rng.integers(0, 2, 200)
        frame = ShapedFrame(amps, 200, 1, Composition((50, 50, 50, 50)), A4.levels)
        syms = pas_assemble(frame, signs, QAM64).symbols
        assert np.allclose(QAM64.points()[QAM64.label(amps, signs)], syms)

    def test_symbol_probabilities(self):
        p = QAM64.symbol_probabilities(P_FIG.probs)
        assert p.sum() == pytest.approx(1.0)
        # brute force: pick I and Q amplitude then signs
        pts = QAM64.points() / QAM64.scale
        for lab, pt in enumerate(pts):
            i = int((abs(pt.real) - 1) // 2)
            q = int((abs(pt.imag) - 1) // 2)
            assert p[lab] == pytest.approx(P_FIG.probs[i] * P_FIG.probs[q] / 4)


class TestCompoundSequence:
    def test_three_blocks(self, frame10):
        assert len(frame10.amplitudes) == 30
        assert frame10.boundaries.tolist() == [0, 10, 20]
        for b in frame10.boundaries:
            assert np.bincount(frame10.amplitudes[b : b + 10], minlength=4).tolist() == [4, 3, 2, 1]

    def test_single_long_block_windows_may_deviate(self):
        codec = codec_for(P_FIG, 30)
        assert codec.counts == (12, 9, 6, 3)
        deviates = False
        for seed in range(50):
            f = generate_compound_sequence(codec, 1, seed)
            assert np.bincount(f.amplitudes, minlength=4).tolist() == [12, 9, 6, 3]
            mx, _ = windowed_composition_deviation(f.amplitudes, 10, 10, [0.4, 0.3, 0.2, 0.1])
            deviates |= mx > 0
        assert deviates

    def test_empty(self):
        f = generate_compound_sequence(codec_for(P_FIG, 10), 0, 1)
        assert f.amplitudes.size == 0 and f.boundaries.size == 0

    def test_negative_blocks(self):
        with pytest.raises(ContractError):
            generate_compound_sequence(codec_for(P_FIG, 10), -1, 1)

    @settings(max_examples=25, deadline=None)
    @given(st.sampled_from([2, 5, 10, 16, 33, 100]), st.integers(0, 40), st.integers(0, 2**32 - 1))
    def test_aligned_window_exactness(self, n, blocks, seed):
        codec = codec_for(P_FIG, n)
        f = generate_compound_sequence(codec, blocks, seed)
        assert len(f.amplitudes) == n * blocks
        for b in f.boundaries:
            assert tuple(np.bincount(f.amplitudes[b : b + n], minlength=4)) == codec.counts

    def test_seed_determinism(self):
        codec = codec_for(P_FIG, 20)
        a = generate_compound_sequence(codec, 10, 42).amplitudes
        b = generate_compound_sequence(codec, 10, np.random.default_rng(42)).amplitudes
        assert np.array_equal(a, b)


class TestAssemble:
    def test_single_symbol(self):
        frame = ShapedFrame(np.array([0, 3]), 2, 1, Composition((1, 0, 0, 1)), A4.levels)
        out = pas_assemble(frame, [0, 1], QAM64)
        assert out.symbols.tolist() == [(1 - 7j) * QAM64.scale]

    def test_pairing(self, frame10):
        f = frame10.truncate(4)
        out = pas_assemble(f, [0, 0, 1, 1], QAM64)
        assert out.symbols.size == 2

    def test_odd_length(self, frame10):
        with pytest.raises(ContractError):
            pas_assemble(frame10.truncate(3), [0, 0, 0], QAM64)

    def test_sign_length_mismatch(self, frame10):
        with pytest.raises(ContractError):
            pas_assemble(frame10, [0] * 29, QAM64)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 200), st.integers(0, 2**32 - 1))
    def test_demap_inverts(self, pairs, seed):
        rng = np.random.default_rng(seed)
        f = iid_frame(P_FIG.probs, 2 * pairs, rng, A4.levels)
        signs = rng.integers(0, 2, 2 * pairs)
        out = pas_assemble(f, signs, QAM64)
        amps, sg = pas_demap(out.symbols, QAM64)
        assert np.array_equal(amps, f.amplitudes)
        assert np.array_equal(sg, signs)


class TestInterleaver:
    def test_identity(self):
        s = np.arange(12)
        assert np.array_equal(interleave(s, InterleaverSpec("identity", 4)), s)

    def test_block_2x2(self):
        s = np.array(list("abcd"))
        assert interleave(s, InterleaverSpec.block(2, 2)).tolist() == ["a", "c", "b", "d"]

    def test_block_by_hand(self):
        # rows [0 1 2], [3 4 5] read column-wise
        assert interleave(np.arange(6), InterleaverSpec.block(2, 3)).tolist() == [0, 3, 1, 4, 2, 5]

    def test_length_not_multiple(self):
        with pytest.raises(ContractError):
            interleave(np.arange(5), InterleaverSpec.block(2, 2))
        with pytest.raises(ContractError):
            deinterleave(np.arange(5), InterleaverSpec.block(2, 2))

    def test_bad_block_spec(self):
        with pytest.raises(ContractError):
            InterleaverSpec("block", 6, 2, 2)

    def test_seeded_is_deterministic(self):
        a = InterleaverSpec.permutation(64, 5).permutation_indices()
        b = InterleaverSpec.permutation(64, 5).permutation_indices()
        assert np.array_equal(a, b)
        assert sorted(a.tolist()) == list(range(64))

    @settings(max_examples=50, deadline=None)
    @given(
        st.sampled_from(
            [InterleaverSpec("identity", 3), InterleaverSpec.block(4, 5), InterleaverSpec.permutation(16, 1), InterleaverSpec.permutation(7, 99)]
        ),
        st.integers(0, 6),
        st.integers(0, 2**32 - 1),
    )
    def test_roundtrip(self, spec, reps, seed):
        rng = np.random.default_rng(seed)
        s = rng.normal(size=spec.span * reps) + 1j * rng.normal(size=spec.span * reps)
        assert np.array_equal(deinterleave(interleave(s, spec), spec), s)
        assert np.array_equal(interleave(deinterleave(s, spec), spec), s)


class TestStructurePreserving:
    def test_identity_output(self):
        frame = assemble(generate_compound_sequence(codec_for(P_FIG, 10), 200, 3))
        spec = InterleaverSpec.permutation(500, 11)
        out = structure_preserving_chain(frame, spec)
        assert np.array_equal(out, frame.symbols)
        amps, _ = pas_demap(out, QAM64)
        assert adjacent_pair_rate(amps) == adjacent_pair_rate(frame.amplitudes)
        assert windowed_composition_deviation(amps, 10, 10, P_FIG.probs) == windowed_composition_deviation(
            frame.amplitudes, 10, 10, P_FIG.probs
        )

    def test_plain_interleaving_breaks_structure(self):
        # 1000 blocks of n=10, symbol permutation spanning 100 blocks
        frame = assemble(generate_compound_sequence(codec_for(P_FIG, 10), 1000, 5))
        spec = InterleaverSpec.permutation(500, 21)
        amps, _ = pas_demap(interleave(frame.symbols, spec), QAM64)
        before = windowed_composition_deviation(frame.amplitudes, 10, 10, P_FIG.probs)
        after = windowed_composition_deviation(amps, 10, 10, P_FIG.probs)
        assert before == (0.0, 0.0)
        assert after[0] > before[0] and after[1] > before[1]

    def test_needs_symbols(self, frame10):
        with pytest.raises(ContractError):
            structure_preserving_chain(frame10, InterleaverSpec())


class TestTemporalStats:
    def test_runs(self):
        assert run_length_stats([0, 0, 1, 1]) == {0: {2: 1}, 1: {2: 1}}

    def test_runs_distinct(self):
        stats = run_length_stats([0, 1, 2, 3, 0, 1])
        assert all(set(c) == {1} for c in stats.values())

    def test_runs_empty(self):
        with pytest.raises(ContractError):
            run_length_stats([])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=1, max_size=200))
    def test_runs_account_for_every_symbol(self, seq):
        stats = run_length_stats(seq)
        for level, hist in stats.items():
            assert sum(length * count for length, count in hist.items()) == seq.count(level)
        # brute force via groupby
        expected = {}
        for level, grp in itertools.groupby(seq):
            n = len(list(grp))
            expected.setdefault(level, {}).setdefault(n, 0)
            expected[level][n] += 1
        assert {k: dict(v) for k, v in stats.items()} == expected

    def test_iid_adjacent_rate(self):
        f = iid_frame(P_FIG.probs, 10**6, 2024, A4.levels)
        assert abs(adjacent_pair_rate(f.amplitudes) - sum(p * p for p in P_FIG.probs)) <= 0.01

    def test_pair_rate_examples(self):
        assert adjacent_pair_rate([0, 0, 0]) == 1.0
        assert adjacent_pair_rate([0, 1, 0, 1]) == 0.0
        with pytest.raises(ContractError):
            adjacent_pair_rate([0])

    def test_blockwise_vs_single_block_1e5(self):
        short = generate_compound_sequence(codec_for(P_FIG, 10), 10**4, 1)
        long = generate_compound_sequence(codec_for(P_FIG, 1000), 100, 1)
        assert adjacent_pair_rate(short.amplitudes) <= adjacent_pair_rate(long.amplitudes)

    def test_clustering_ordering_monte_carlo(self):
        short_codec, long_codec = codec_for(P_FIG, 10), codec_for(P_FIG, 1000)
        diffs = []
        for seed in range(100):
            s = generate_compound_sequence(short_codec, 200, seed).amplitudes
            l = generate_compound_sequence(long_codec, 2, 10**6 + seed).amplitudes
            diffs.append(adjacent_pair_rate(l) - adjacent_pair_rate(s))
        diffs = np.asarray(diffs)
        se = diffs.std(ddof=1) / np.sqrt(diffs.size)
        assert diffs.mean() - 3 * se >= 0

    def test_window_deviation_examples(self, frame10):
        assert windowed_composition_deviation(frame10.amplitudes, 10, 10, [0.4, 0.3, 0.2, 0.1])[0] == 0.0
        mx, mean = windowed_composition_deviation([0] * 20, 10, 5, [0.4, 0.3, 0.2, 0.1])
        assert mx == pytest.approx(1.2) and mean == pytest.approx(1.2)
        with pytest.raises(ContractError):
            windowed_composition_deviation([0] * 5, 10, 1, [0.4, 0.3, 0.2, 0.1])

    def test_window_deviation_brute_force(self):
        rng = np.random.default_rng(3)
        a = rng.integers(0, 4, 57)
        target = np.array([0.4, 0.3, 0.2, 0.1])
        devs = [np.abs(np.bincount(a[i : i + 9], minlength=4) / 9 - target).sum() for i in range(0, 57 - 9 + 1, 4)]
        mx, mean = windowed_composition_deviation(a, 9, 4, target)
        assert mx == pytest.approx(max(devs)) and mean == pytest.approx(np.mean(devs))


def test_frame_csv_roundtrip(tmp_path, frame10):
    frame = assemble(frame10)
    path = tmp_path / "frame.csv"
    write_frame_csv(frame, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "index,amplitude_level,sign,symbol_re,symbol_im,block_id"
    assert len(lines) == 31
    cols = read_frame_csv(path)
    assert np.array_equal(cols["amplitude_level"], frame.amplitude_values)
    assert np.array_equal(cols["sign"], frame.signs)
    assert np.array_equal(cols["symbol"][0::2], frame.symbols)
    assert np.array_equal(cols["block_id"], np.repeat([0, 1, 2], 10))
