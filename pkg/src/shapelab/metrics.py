"""Figures of merit: fourth-moment ratio, GMI and the finite-length AIR."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import ContractError
from .pas import QamConstellation

_CHUNK = 1 << 15


def moment_ratio(x, probs=None) -> float:
    """``E|X|^4 / (E|X|^2)^2``.

    With ``probs`` the expectation is exact over the points ``x``; otherwise
    ``x`` is treated as samples.
    """
    x = np.asarray(x)
    p2 = np.abs(x) ** 2
    if probs is None:
        m2, m4 = p2.mean(), (p2**2).mean()
    else:
        w = np.asarray(probs, dtype=float)
        if w.shape != x.shape:
            raise ContractError("probs must align with points")
        m2, m4 = np.dot(w, p2), np.dot(w, p2**2)
    if not m2 > 0:
        raise ContractError("moment ratio undefined for zero power")
    return float(m4 / m2**2)


def symbol_entropy(probs) -> float:
    p = np.asarray(probs, dtype=float)
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def bmd_conditional_entropies(rx, labels, points, priors, noise_var) -> np.ndarray:
    """Per-bit-level estimates of ``H(B_i | Y)`` in bits.

    LLRs are a-posteriori (priors included) under a circular Gaussian auxiliary
    channel of total variance ``noise_var``.
    """
    rx = np.asarray(rx)
    labels = np.asarray(labels)
    m = int(math.log2(points.size))
    bit_of = (np.arange(points.size)[:, None] >> np.arange(m - 1, -1, -1)) & 1
    with np.errstate(divide="ignore"):
        log_prior = np.log(priors)
    acc = np.zeros(m)
    for start in range(0, rx.size, _CHUNK):
        y = rx[start : start + _CHUNK]
        lab = labels[start : start + _CHUNK]
        metric = log_prior[None, :] - np.abs(y[:, None] - points[None, :]) ** 2 / noise_var
        for i in range(m):
            zero = bit_of[:, i] == 0
            llr = logsumexp(metric[:, zero], axis=1) - logsumexp(metric[:, ~zero], axis=1)
            sign = 1.0 - 2.0 * bit_of[lab, i]
            acc[i] += np.logaddexp(0.0, -sign * llr).sum()
    return acc / (rx.size * math.log(2))


def gmi_monte_carlo(
    constellation: QamConstellation,
    amp_probs,
    snr_db: float,
    num_samples: int = 100_000,
    seed: int = 0,
) -> float:
    """Bit-metric decoding rate in bits per 2D symbol on an AWGN channel.

    Symbols are drawn from the PAS prior (i.i.d. amplitudes with probabilities
    ``amp_probs``, uniform signs). The SNR is referred to the mean power of
    that prior. Returns ``max(0, H(X) - sum_i H(B_i | Y))``, which reduces to
    the usual GMI for uniform signalling.
    """
    if snr_db is None or math.isnan(snr_db):
        raise ContractError("SNR must be a number")
    if num_samples < 1:
        raise ContractError("num_samples must be positive")
    priors = constellation.symbol_probabilities(amp_probs)
    points = constellation.points()
    es = float(np.dot(priors, np.abs(points) ** 2))
    noise_var = es / 10 ** (snr_db / 10)

    rng = np.random.default_rng(seed)
    labels = rng.choice(points.size, size=num_samples, p=priors)
    noise = rng.standard_normal((2, num_samples)) * math.sqrt(noise_var / 2)
    rx = points[labels] + noise[0] + 1j * noise[1]

    cond = bmd_conditional_entropies(rx, labels, points, priors, noise_var)
    return max(0.0, symbol_entropy(priors) - float(cond.sum()))


@dataclass(frozen=True)
class AirResult:
    gmi: float
    rate_loss: float
    air_n: float
    n: Optional[int] = None
    snr_eff_db: Optional[float] = None


def air_n(gmi: float, rate_loss: float, n: Optional[int] = None, snr_eff_db: Optional[float] = None) -> AirResult:
    """Finite-length rate: GMI minus the matcher loss of both amplitudes of a 2D symbol."""
    if gmi < 0 or rate_loss < 0:
        raise ContractError(f"gmi and rate_loss must be non-negative, got {gmi}, {rate_loss}")
    return AirResult(gmi, rate_loss, gmi - 2.0 * rate_loss, n, snr_eff_db)
