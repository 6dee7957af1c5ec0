"""PAS symbol streams, symbol interleavers and temporal-structure statistics.

A frame is a concatenation of CCDM blocks. Consecutive amplitude pairs become
the I and Q magnitudes of one QAM symbol; uniform sign bits pick the quadrant.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ContractError
from .shaping import AmplitudeAlphabet, CcdmCodec, Composition, match


def _gray(x: int) -> int:
    return x ^ (x >> 1)


@dataclass(frozen=True)
class QamConstellation:
    """Square ``M``-QAM built from two Gray-labelled PAM quadratures.

    Each quadrature label is ``(sign bit, amplitude bits)`` with the sign bit as
    MSB; sign 0 means positive. The amplitude bits depend only on the magnitude,
    which is what makes the labelling compatible with PAS. Symbol labels are
    ``(I label, Q label)``, I first.
    """

    order: int = 64
    alphabet: AmplitudeAlphabet = field(init=False)
    scale: float = field(init=False)

    def __post_init__(self):
        side = math.isqrt(self.order)
        if self.order < 4 or side * side != self.order or side & (side - 1):
            raise ContractError(f"QAM order must be a square power of 4, got {self.order}")
        num = side // 2
        object.__setattr__(self, "alphabet", AmplitudeAlphabet.pam(num))
        # uniform reference has unit mean power
        energy = 2 * float(np.mean(self.alphabet.values**2))
        object.__setattr__(self, "scale", 1.0 / math.sqrt(energy))

    @property
    def bits_per_quadrature(self) -> int:
        return int(math.log2(self.order)) // 2

    @property
    def bits_per_symbol(self) -> int:
        return 2 * self.bits_per_quadrature

    @property
    def amp_bits(self) -> int:
        return self.bits_per_quadrature - 1

    def amplitude_labels(self) -> np.ndarray:
        """Gray label of each magnitude index (smallest magnitude first)."""
        num = len(self.alphabet)
        return np.array([_gray(num - 1 - j) for j in range(num)], dtype=np.int64)

    def pam_points(self) -> np.ndarray:
        """Unscaled PAM value for each quadrature label ``0 .. sqrt(M)-1``."""
        num = len(self.alphabet)
        values = np.empty(2 * num)
        for j, lab in enumerate(self.amplitude_labels()):
            values[lab] = self.alphabet.levels[j]
            values[(1 << self.amp_bits) | lab] = -self.alphabet.levels[j]
        return values

    def points(self) -> np.ndarray:
        """Scaled complex point for every symbol label ``0 .. M-1``."""
        pam = self.pam_points()
        side = len(pam)
        labels = np.arange(self.order)
        return (pam[labels // side] + 1j * pam[labels % side]) * self.scale

    def label_bits(self) -> np.ndarray:
        """``(M, bits_per_symbol)`` bit matrix, MSB first."""
        m = self.bits_per_symbol
        labels = np.arange(self.order)[:, None]
        return ((labels >> np.arange(m - 1, -1, -1)) & 1).astype(np.uint8)

    def label(self, amplitudes, signs) -> np.ndarray:
        """Symbol labels for interleaved (I, Q) amplitude indices and sign bits."""
        amps = np.asarray(amplitudes, dtype=np.int64).reshape(-1, 2)
        sg = np.asarray(signs, dtype=np.int64).reshape(-1, 2)
        q = (sg << self.amp_bits) | self.amplitude_labels()[amps]
        return (q[:, 0] << self.bits_per_quadrature) | q[:, 1]

    def symbol_probabilities(self, amp_probs) -> np.ndarray:
        """Prior of each symbol label for i.i.d. amplitudes and uniform signs."""
        amp_probs = np.asarray(amp_probs, dtype=float)
        num = len(self.alphabet)
        q = np.empty(2 * num)
        for j, lab in enumerate(self.amplitude_labels()):
            q[lab] = q[(1 << self.amp_bits) | lab] = amp_probs[j] / 2
        labels = np.arange(self.order)
        side = 2 * num
        return q[labels // side] * q[labels % side]


@dataclass(frozen=True)
class ShapedFrame:
    """Concatenated CCDM blocks.

    ``amplitudes`` holds level indices. ``boundaries`` are block start indices.
    A frame cut to a fixed length by :meth:`truncate` may end in a partial block.
    """

    amplitudes: np.ndarray
    block_length: int
    num_blocks: int
    composition: Composition
    levels: tuple[float, ...]
    signs: Optional[np.ndarray] = None
    symbols: Optional[np.ndarray] = None

    @property
    def boundaries(self) -> np.ndarray:
        return np.arange(self.num_blocks) * self.block_length

    @property
    def block_ids(self) -> np.ndarray:
        return np.arange(len(self.amplitudes)) // self.block_length

    @property
    def amplitude_values(self) -> np.ndarray:
        return np.asarray(self.levels)[self.amplitudes]

    def truncate(self, length: int) -> "ShapedFrame":
        if length > len(self.amplitudes):
            raise ContractError(f"cannot truncate {len(self.amplitudes)} amplitudes to {length}")
        blocks = -(-length // self.block_length)
        sg = None if self.signs is None else self.signs[:length]
        sy = None if self.symbols is None else self.symbols[: length // 2]
        return replace(self, amplitudes=self.amplitudes[:length], num_blocks=blocks, signs=sg, symbols=sy)


def _as_rng(data_source) -> np.random.Generator:
    if isinstance(data_source, np.random.Generator):
        return data_source
    return np.random.default_rng(data_source)


def generate_compound_sequence(codec: CcdmCodec, num_blocks: int, data_source, levels=None) -> ShapedFrame:
    """Match ``num_blocks`` independent ``k``-bit words and concatenate the outputs.

    ``data_source`` is a seed or a :class:`numpy.random.Generator`.
    """
    if num_blocks < 0:
        raise ContractError(f"num_blocks must be >= 0, got {num_blocks}")
    rng = _as_rng(data_source)
    if levels is None:
        alpha = codec.composition.alphabet
        levels = alpha.levels if alpha is not None else tuple(float(2 * i + 1) for i in range(len(codec.counts)))
    n = codec.n
    words = rng.integers(0, 2, size=(num_blocks, codec.k), dtype=np.uint8)
    amps = np.empty(num_blocks * n, dtype=np.int64)
    for b in range(num_blocks):
        amps[b * n : (b + 1) * n] = match(codec, words[b])
    return ShapedFrame(amps, n, num_blocks, codec.composition, tuple(levels))


def iid_frame(probs, length: int, data_source, levels) -> ShapedFrame:
    """I.i.d. amplitudes (no matcher), recorded as one block of the realized composition."""
    if length < 1:
        raise ContractError("length must be >= 1")
    rng = _as_rng(data_source)
    probs = np.asarray(probs, dtype=float)
    amps = rng.choice(probs.size, size=length, p=probs / probs.sum()).astype(np.int64)
    comp = Composition(tuple(np.bincount(amps, minlength=probs.size).tolist()))
    return ShapedFrame(amps, length, 1, comp, tuple(levels))


def pas_assemble(frame: ShapedFrame, signs, constellation: QamConstellation) -> ShapedFrame:
    """Attach sign bits and map amplitude pairs to complex symbols."""
    signs = np.asarray(signs, dtype=np.uint8)
    amps = frame.amplitudes
    if signs.shape != amps.shape:
        raise ContractError(f"{signs.size} signs for {amps.size} amplitudes")
    if amps.size % 2:
        raise ContractError("an even number of amplitudes is required (I/Q pairs)")
    if tuple(frame.levels) != constellation.alphabet.levels:
        raise ContractError(f"frame levels {frame.levels} do not match constellation {constellation.alphabet.levels}")
    if signs.size and signs.max() > 1:
        raise ContractError("sign bits must be 0 or 1")
    values = np.asarray(frame.levels)[amps] * (1.0 - 2.0 * signs)
    symbols = (values[0::2] + 1j * values[1::2]) * constellation.scale
    return replace(frame, signs=signs, symbols=symbols)


def pas_demap(symbols, constellation: QamConstellation) -> tuple[np.ndarray, np.ndarray]:
    """Invert :func:`pas_assemble` on noiseless symbols: ``(amplitude indices, signs)``."""
    symbols = np.asarray(symbols) / constellation.scale
    values = np.empty(2 * symbols.size)
    values[0::2] = symbols.real
    values[1::2] = symbols.imag
    signs = (values < 0).astype(np.uint8)
    amps = np.rint((np.abs(values) - 1) / 2).astype(np.int64)
    return np.clip(amps, 0, len(constellation.alphabet) - 1), signs


@dataclass(frozen=True)
class InterleaverSpec:
    kind: str = "identity"
    span: int = 1
    rows: Optional[int] = None
    cols: Optional[int] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("identity", "block", "permutation"):
            raise ContractError(f"unknown interleaver kind {self.kind!r}")
        if self.span < 1:
            raise ContractError("span must be >= 1")
        if self.kind == "block":
            if self.rows is None or self.cols is None or self.rows * self.cols != self.span:
                raise ContractError("block interleaver needs rows * cols == span")
        if self.kind == "permutation" and self.seed is None:
            raise ContractError("seeded permutation needs a seed")

    @classmethod
    def block(cls, rows: int, cols: int) -> "InterleaverSpec":
        return cls("block", rows * cols, rows, cols)

    @classmethod
    def permutation(cls, span: int, seed: int) -> "InterleaverSpec":
        return cls("permutation", span, seed=seed)

    def permutation_indices(self) -> np.ndarray:
        """``out[i] = in[perm[i]]`` within each span."""
        if self.kind == "identity":
            return np.arange(self.span)
        if self.kind == "block":
            # write row-wise, read column-wise
            return np.arange(self.span).reshape(self.rows, self.cols).T.ravel()
        return np.random.default_rng(self.seed).permutation(self.span)


def _check_span(symbols, spec: InterleaverSpec) -> np.ndarray:
    symbols = np.asarray(symbols)
    if symbols.ndim != 1 or symbols.size % spec.span:
        raise ContractError(f"length {symbols.size} is not a multiple of span {spec.span}")
    return symbols


def interleave(symbols, spec: InterleaverSpec) -> np.ndarray:
    symbols = _check_span(symbols, spec)
    return symbols.reshape(-1, spec.span)[:, spec.permutation_indices()].ravel()


def deinterleave(symbols, spec: InterleaverSpec) -> np.ndarray:
    symbols = _check_span(symbols, spec)
    inverse = np.argsort(spec.permutation_indices())
    return symbols.reshape(-1, spec.span)[:, inverse].ravel()


def structure_preserving_chain(frame: ShapedFrame, spec: InterleaverSpec) -> np.ndarray:
    """Transmit stream when interleaving is undone after (stub) FEC encoding.

    The inner-FEC stage sees the interleaved order, but the stream is
    de-interleaved again before transmission, so the emitted symbols keep the
    temporal order produced by the matcher. Receivers re-apply the interleaver
    before decoding.
    """
    if frame.symbols is None:
        raise ContractError("frame has no symbols; run pas_assemble first")
    fec_view = interleave(frame.symbols, spec)
    emitted = deinterleave(fec_view, spec)
    assert np.array_equal(emitted, frame.symbols)
    return emitted


def run_length_stats(amplitudes) -> dict[int, Counter]:
    """Histogram of maximal run lengths, per level: ``{level: {run_length: count}}``."""
    a = np.asarray(amplitudes)
    if a.size == 0:
        raise ContractError("run_length_stats needs a non-empty sequence")
    change = np.flatnonzero(np.diff(a)) + 1
    starts = np.concatenate(([0], change))
    lengths = np.diff(np.concatenate((starts, [a.size])))
    out: dict[int, Counter] = {}
    for value, length in zip(a[starts].tolist(), lengths.tolist()):
        out.setdefault(value, Counter())[length] += 1
    return out


def adjacent_pair_rate(amplitudes) -> float:
    a = np.asarray(amplitudes)
    if a.size < 2:
        raise ContractError("adjacent_pair_rate needs at least 2 amplitudes")
    return float(np.count_nonzero(a[1:] == a[:-1]) / (a.size - 1))


def windowed_composition_deviation(amplitudes, window: int, stride: int, target) -> tuple[float, float]:
    """Max and mean L1 distance between each window's histogram and ``target``.

    ``target`` is a probability vector over level indices, typically ``C / n``.
    """
    a = np.asarray(amplitudes, dtype=np.int64)
    target = np.asarray(target, dtype=float)
    if window < 1 or stride < 1:
        raise ContractError("window and stride must be >= 1")
    if window > a.size:
        raise ContractError(f"window {window} longer than sequence {a.size}")
    m = target.size
    onehot = np.zeros((a.size + 1, m))
    onehot[np.arange(1, a.size + 1), a] = 1.0
    cum = np.cumsum(onehot, axis=0)
    starts = np.arange(0, a.size - window + 1, stride)
    hist = cum[starts + window] - cum[starts]
    dev = np.abs(hist / window - target).sum(axis=1)
    return float(dev.max()), float(dev.mean())


FRAME_CSV_HEADER = ("index", "amplitude_level", "sign", "symbol_re", "symbol_im", "block_id")


def write_frame_csv(frame: ShapedFrame, path) -> None:
    """One row per amplitude; both amplitudes of a pair carry their symbol."""
    values = frame.amplitude_values
    signs = frame.signs if frame.signs is not None else np.zeros(len(values), dtype=np.uint8)
    symbols = frame.symbols
    ids = frame.block_ids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRAME_CSV_HEADER)
        for i in range(len(values)):
            if symbols is not None and i // 2 < len(symbols):
                s = symbols[i // 2]
                re_, im_ = repr(float(s.real)), repr(float(s.imag))
            else:
                re_ = im_ = ""
            w.writerow((i, repr(float(values[i])), int(signs[i]), re_, im_, int(ids[i])))


def read_frame_csv(path) -> dict[str, np.ndarray]:
    """Columns of a frame CSV as arrays (symbols complex, NaN when absent)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != FRAME_CSV_HEADER:
        raise ContractError(f"{path}: not a frame CSV (header {rows[0] if rows else None})")
    body = rows[1:]
    col = lambda j, f: np.array([f(r[j]) if r[j] != "" else np.nan for r in body])
    return {
        "index": col(0, int).astype(np.int64),
        "amplitude_level": col(1, float),
        "sign": col(2, int).astype(np.uint8),
        "symbol": col(3, float) + 1j * col(4, float),
        "block_id": col(5, int).astype(np.int64),
    }
