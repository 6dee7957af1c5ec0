"""Amplitude distributions and the constant-composition distribution matcher.

The matcher maps ``k`` uniform bits to a length-``n`` amplitude sequence with a
fixed composition by lexicographic unranking over all sequences with that
composition. Ranks are computed with Python integers, so ``k`` is exactly
``floor(log2(n! / prod(c_i!)))``.

Amplitude sequences are represented as integer arrays of level indices
(``0`` is the smallest level of the alphabet).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CompositionError, ContractError, DomainError, NumericError, OutOfImageError

GREEK = ("α", "β", "γ", "δ", "ε", "ζ", "η", "θ")

_MB_MAX_ITER = 200
_MB_NU_MAX = 100.0
_MB_TOL = 1e-9


@dataclass(frozen=True)
class AmplitudeAlphabet:
    levels: tuple[float, ...]
    names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise ContractError("alphabet must have at least one level")
        if any(v <= 0 for v in levels):
            raise ContractError(f"levels must be positive, got {levels}")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ContractError(f"levels must be strictly increasing, got {levels}")
        if self.names is None:
            names = GREEK[: len(levels)] if len(levels) <= len(GREEK) else tuple(str(v) for v in levels)
            object.__setattr__(self, "names", tuple(names))
        elif len(self.names) != len(levels):
            raise ContractError("names must align with levels")

    @classmethod
    def pam(cls, num_levels: int) -> "AmplitudeAlphabet":
        """Odd-integer amplitudes ``1, 3, ..., 2*num_levels - 1``."""
        return cls(tuple(range(1, 2 * num_levels, 2)))

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.levels)


@dataclass(frozen=True)
class AmplitudeDistribution:
    alphabet: AmplitudeAlphabet
    probs: tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if len(probs) != len(self.alphabet):
            raise ContractError(f"{len(probs)} probabilities for {len(self.alphabet)} levels")
        if any(p < 0 or not math.isfinite(p) for p in probs):
            raise ContractError(f"probabilities must be finite and non-negative, got {probs}")
        if abs(math.fsum(probs) - 1.0) > 1e-12:
            raise ContractError(f"probabilities sum to {math.fsum(probs)!r}, not 1")

    @classmethod
    def uniform(cls, alphabet: AmplitudeAlphabet) -> "AmplitudeDistribution":
        m = len(alphabet)
        return cls(alphabet, (1.0 / m,) * m)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.probs)

    def mean_energy(self) -> float:
        return float(np.dot(self.array, self.alphabet.values**2))


@dataclass(frozen=True)
class Composition:
    counts: tuple[int, ...]
    alphabet: Optional[AmplitudeAlphabet] = field(default=None, compare=False)

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if not counts or any(c < 0 for c in counts):
            raise ContractError(f"counts must be non-negative, got {counts}")
        if sum(counts) < 1:
            raise ContractError("composition must describe at least one symbol")
        if self.alphabet is not None and len(self.alphabet) != len(counts):
            raise ContractError("counts must align with the alphabet")

    @property
    def n(self) -> int:
        return sum(self.counts)

    def empirical(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.n

    def entropy(self) -> float:
        """Entropy of the realized (quantized) distribution ``counts / n``."""
        return _entropy_bits(self.empirical())


@dataclass(frozen=True)
class CcdmCodec:
    composition: Composition
    num_sequences: int
    k: int

    @property
    def n(self) -> int:
        return self.composition.n

    @property
    def rate(self) -> float:
        return self.k / self.n

    @property
    def counts(self) -> tuple[int, ...]:
        return self.composition.counts


def _entropy_bits(p) -> float:
    p = np.asarray(p, dtype=float)
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def entropy(dist: AmplitudeDistribution) -> float:
    """Entropy in bits per amplitude, with ``0 log 0 = 0``."""
    return _entropy_bits(dist.array)


def _mb_probs(levels: np.ndarray, nu: float) -> np.ndarray:
    e = levels**2
    w = np.exp(-nu * (e - e[0]))
    return w / w.sum()


def mb_distribution(alphabet: AmplitudeAlphabet, target_entropy: float) -> AmplitudeDistribution:
    """Maxwell-Boltzmann distribution ``p_i ~ exp(-nu * level_i**2)`` with the given entropy.

    ``nu`` is found by bisection on ``[0, 100]``; entropy is monotone decreasing in ``nu``.
    """
    h_max = math.log2(len(alphabet))
    if not (0.0 < target_entropy <= h_max) or math.isnan(target_entropy):
        raise DomainError(f"target entropy {target_entropy} outside (0, {h_max}]")
    if h_max - target_entropy <= _MB_TOL:
        return AmplitudeDistribution.uniform(alphabet)

    levels = alphabet.values
    lo, hi = 0.0, _MB_NU_MAX
    if _entropy_bits(_mb_probs(levels, hi)) > target_entropy:
        raise NumericError(f"target entropy {target_entropy} not reachable with nu <= {_MB_NU_MAX}")
    for _ in range(_MB_MAX_ITER):
        nu = 0.5 * (lo + hi)
        probs = _mb_probs(levels, nu)
        h = _entropy_bits(probs)
        if abs(h - target_entropy) <= _MB_TOL:
            # renormalize so the fsum check holds to the last ulp
            probs = probs / math.fsum(probs)
            return AmplitudeDistribution(alphabet, tuple(probs))
        if h > target_entropy:
            lo = nu
        else:
            hi = nu
    raise NumericError(f"bisection for target entropy {target_entropy} did not converge")


def mb_parameter(dist: AmplitudeDistribution) -> float:
    """Recover ``nu`` from an MB distribution (0 for uniform)."""
    p = dist.array
    e = dist.alphabet.values**2
    if len(p) < 2 or np.allclose(p, p[0]):
        return 0.0
    return float((np.log(p[0]) - np.log(p[-1])) / (e[-1] - e[0]))


def quantize_composition(dist: AmplitudeDistribution, n: int) -> Composition:
    """Largest-remainder rounding of ``n * p``; ties go to the lowest index."""
    if n < 1:
        raise ContractError(f"block length must be >= 1, got {n}")
    scaled = []
    for p in dist.probs:
        x = n * p
        # float noise such as 0.3 * 10 == 3.0000000000000004 must not move a count
        r = round(x)
        scaled.append(float(r) if abs(x - r) < 1e-9 else x)
    floors = [int(math.floor(x)) for x in scaled]
    missing = n - sum(floors)
    # remainders equal up to float noise count as ties
    order = sorted(range(len(scaled)), key=lambda i: (-round(scaled[i] - floors[i], 9), i))
    for i in order[:missing]:
        floors[i] += 1
    return Composition(tuple(floors), dist.alphabet)


def multinomial(counts: Sequence[int]) -> int:
    total = 0
    result = 1
    for c in counts:
        total += c
        result *= math.comb(total, c)
    return result


def build_ccdm(composition: Composition) -> CcdmCodec:
    num = multinomial(composition.counts)
    return CcdmCodec(composition, num, num.bit_length() - 1)


def _bits_to_int(bits) -> int:
    if isinstance(bits, str):
        s = bits
    else:
        s = "".join("1" if int(b) else "0" for b in bits)
    if s and set(s) - {"0", "1"}:
        raise ContractError("bit-string may only contain 0 and 1")
    return int(s, 2) if s else 0


def _int_to_bits(value: int, k: int) -> np.ndarray:
    if k == 0:
        return np.zeros(0, dtype=np.uint8)
    return np.frombuffer(format(value, f"0{k}b").encode(), dtype=np.uint8) - ord("0")


def unrank(counts: Sequence[int], rank: int) -> np.ndarray:
    """Sequence of level indices at lexicographic position ``rank``."""
    counts = list(counts)
    remaining = sum(counts)
    total = multinomial(counts)
    if not 0 <= rank < total:
        raise ContractError(f"rank {rank} outside [0, {total})")
    out = np.empty(remaining, dtype=np.int64)
    levels = range(len(counts))
    for pos in range(len(out)):
        for i in levels:
            c = counts[i]
            if c == 0:
                continue
            # sequences whose next symbol is i
            block = total * c // remaining
            if rank < block:
                out[pos] = i
                total = block
                counts[i] -= 1
                break
            rank -= block
        remaining -= 1
    return out


def rank(counts: Sequence[int], seq: Sequence[int]) -> int:
    """Lexicographic position of ``seq`` among sequences with composition ``counts``."""
    counts = list(counts)
    remaining = sum(counts)
    total = multinomial(counts)
    r = 0
    for s in seq:
        for i in range(s):
            if counts[i]:
                r += total * counts[i] // remaining
        total = total * counts[s] // remaining
        counts[s] -= 1
        remaining -= 1
    return r


def match(codec: CcdmCodec, bits) -> np.ndarray:
    """Map exactly ``codec.k`` bits (MSB first) to ``codec.n`` level indices."""
    length = len(bits)
    if length != codec.k:
        raise ContractError(f"expected {codec.k} bits, got {length}")
    return unrank(codec.counts, _bits_to_int(bits))


def dematch(codec: CcdmCodec, seq) -> np.ndarray:
    """Inverse of :func:`match`; returns ``codec.k`` bits."""
    seq = np.asarray(seq, dtype=np.int64)
    if seq.shape != (codec.n,):
        raise ContractError(f"expected a sequence of length {codec.n}, got shape {seq.shape}")
    m = len(codec.counts)
    if seq.size and (seq.min() < 0 or seq.max() >= m):
        raise CompositionError(f"level index outside [0, {m})")
    found = tuple(np.bincount(seq, minlength=m).tolist())
    if found != codec.counts:
        raise CompositionError(f"sequence composition {found} != codec composition {codec.counts}")
    r = rank(codec.counts, seq.tolist())
    if r >> codec.k:
        raise OutOfImageError(f"rank {r} >= 2**{codec.k}; never produced by the matcher")
    return _int_to_bits(r, codec.k)


def rate_loss(codec: CcdmCodec, dist: AmplitudeDistribution) -> float:
    """``H(dist) - k/n`` in bits per amplitude, measured against the target distribution."""
    comp = codec.composition
    if len(comp.counts) != len(dist.probs):
        raise ContractError("codec and distribution have different alphabet sizes")
    if comp.alphabet is not None and comp.alphabet.levels != dist.alphabet.levels:
        raise ContractError("codec and distribution use different alphabets")
    return entropy(dist) - codec.rate


def codec_for(dist: AmplitudeDistribution, n: int) -> CcdmCodec:
    return build_ccdm(quantize_composition(dist, n))
