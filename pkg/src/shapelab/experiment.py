"""Experiment configuration, block-length and launch-power sweeps, CSV output."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, ShapelabError
from .fiber import ChannelPlan, FiberLinkConfig, estimate_snr, rrc_modulate, rx_dsp, ssfm_propagate
from .metrics import air_n, gmi_monte_carlo
from .pas import (
    InterleaverSpec,
    QamConstellation,
    ShapedFrame,
    generate_compound_sequence,
    iid_frame,
    interleave,
    pas_assemble,
    structure_preserving_chain,
)
from .shaping import AmplitudeDistribution, codec_for, mb_distribution, rate_loss

log = logging.getLogger(__name__)

CSV_HEADER = (
    "n",
    "rate_loss_bits_per_amp",
    "snr_eff_db_mean",
    "snr_eff_db_std",
    "gmi_bits_per_2d",
    "air_n_bits_per_2d",
    "num_seeds",
)

SOURCES = ("ccdm", "iid", "uniform")


class ExperimentError(ShapelabError, RuntimeError):
    """A simulation point failed; the message names the offending point."""


@dataclass(frozen=True)
class ExperimentConfig:
    link: FiberLinkConfig = field(default_factory=FiberLinkConfig)
    plan: ChannelPlan = field(default_factory=ChannelPlan)
    qam_order: int = 64
    target_entropy: Optional[float] = 1.75
    distribution: Optional[tuple[float, ...]] = None
    n_list: tuple[int, ...] = (10, 100, 1000, 2000, 5000)
    seeds: tuple[int, ...] = (1, 2, 3)
    num_symbols: int = 2**16
    source: str = "ccdm"
    interleaver: InterleaverSpec = field(default_factory=InterleaverSpec)
    structure_preserving: bool = False
    precision: str = "single"
    gmi_samples: int = 200_000
    gmi_seed: int = 0
    powers: tuple[float, ...] = (-4.0, -3.0, -2.0, -1.0, 0.0)
    power_sweep_n: int = 100
    output: Optional[str] = None
    jobs: int = 1

    def __post_init__(self):
        if not self.n_list:
            raise ConfigError("n_list must not be empty")
        if list(self.n_list) != sorted(self.n_list) or len(set(self.n_list)) != len(self.n_list):
            raise ConfigError(f"n_list must be strictly ascending, got {self.n_list}")
        if min(self.n_list) < 1:
            raise ConfigError("block lengths must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if self.num_symbols < 1:
            raise ConfigError("num_symbols must be >= 1")
        if self.source not in SOURCES:
            raise ConfigError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.num_symbols % self.interleaver.span:
            raise ConfigError(f"num_symbols {self.num_symbols} not a multiple of interleaver span {self.interleaver.span}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.precision not in ("single", "double"):
            raise ConfigError(f"precision must be 'single' or 'double', got {self.precision!r}")
        try:
            self.constellation()
            self.amplitude_distribution()
        except ContractError as exc:
            raise ConfigError(str(exc)) from exc

    def constellation(self) -> QamConstellation:
        return QamConstellation(self.qam_order)

    def amplitude_distribution(self) -> AmplitudeDistribution:
        alphabet = QamConstellation(self.qam_order).alphabet
        if self.source == "uniform":
            return AmplitudeDistribution.uniform(alphabet)
        if self.distribution is not None:
            return AmplitudeDistribution(alphabet, self.distribution)
        if self.target_entropy is None:
            raise ConfigError("either distribution or target_entropy is required")
        return mb_distribution(alphabet, self.target_entropy)

    def with_link(self, **changes) -> "ExperimentConfig":
        return replace(self, link=replace(self.link, **changes))


@dataclass(frozen=True)
class SweepRow:
    n: int
    rate_loss: float
    snr_mean: float
    snr_std: float
    gmi: float
    air_n: float
    num_seeds: int

    @property
    def std_flagged(self) -> bool:
        """Fewer than two seeds: the std column is a placeholder 0."""
        return self.num_seeds < 2


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    per_seed: dict = field(default_factory=dict, compare=False)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def argmax_air(self) -> int:
        return self.rows[int(np.argmax(self.column("air_n")))].n


@dataclass(frozen=True)
class PowerRow:
    launch_power_dbm: float
    snr_mean: float
    snr_std: float
    num_seeds: int


# ---------------------------------------------------------------------------
# configuration files


_LINK_KEYS = {f.name for f in fields(FiberLinkConfig)}
_PLAN_KEYS = {f.name for f in fields(ChannelPlan)}


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def parse_interleaver(text: str) -> InterleaverSpec:
    """``identity``, ``block:ROWS:COLS`` or ``permutation:SPAN:SEED``."""
    parts = [p.strip() for p in text.split(":")]
    try:
        if parts[0] == "identity" and len(parts) == 1:
            return InterleaverSpec()
        if parts[0] == "block" and len(parts) == 3:
            return InterleaverSpec.block(int(parts[1]), int(parts[2]))
        if parts[0] == "permutation" and len(parts) == 3:
            return InterleaverSpec.permutation(int(parts[1]), int(parts[2]))
    except (ValueError, ContractError) as exc:
        raise ConfigError(f"bad interleaver {text!r}: {exc}") from exc
    raise ConfigError(f"bad interleaver {text!r}")


def format_interleaver(spec: InterleaverSpec) -> str:
    if spec.kind == "block":
        return f"block:{spec.rows}:{spec.cols}"
    if spec.kind == "permutation":
        return f"permutation:{spec.span}:{spec.seed}"
    return "identity"


_TOP_PARSERS = {
    "qam_order": int,
    "target_entropy": float,
    "distribution": _floats,
    "n_list": _ints,
    "seeds": _ints,
    "num_symbols": int,
    "source": str,
    "interleaver": parse_interleaver,
    "structure_preserving": _bool,
    "precision": str,
    "gmi_samples": int,
    "gmi_seed": int,
    "powers": _floats,
    "power_sweep_n": int,
    "output": str,
    "jobs": int,
}


def parse_config_text(text: str, origin: str = "<config>") -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    link, plan, top = {}, {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in _LINK_KEYS:
                kind = FiberLinkConfig.__dataclass_fields__[key].type
                link[key] = _bool(value) if kind in ("bool", bool) else (int(value) if key == "num_spans" else float(value))
            elif key in _PLAN_KEYS:
                plan[key] = int(value) if key in ("num_channels", "samples_per_symbol") else float(value)
            elif key in _TOP_PARSERS:
                top[key] = _TOP_PARSERS[key](value)
            else:
                raise ConfigError(f"unknown key {key!r}")
        except ConfigError as exc:
            raise ConfigError(f"{origin}:{lineno}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"{origin}:{lineno}: bad value for {key}: {exc}") from exc
    if "distribution" in top and "target_entropy" not in top:
        top["target_entropy"] = None
    try:
        return ExperimentConfig(link=FiberLinkConfig(**link), plan=ChannelPlan(**plan), **top)
    except ConfigError as exc:
        raise ConfigError(f"{origin}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def dump_config(config: ExperimentConfig) -> str:
    """Inverse of :func:`parse_config_text` (round-trips every field)."""
    out = io.StringIO()
    for f in fields(FiberLinkConfig):
        out.write(f"{f.name} = {getattr(config.link, f.name)}\n")
    for f in fields(ChannelPlan):
        out.write(f"{f.name} = {getattr(config.plan, f.name)}\n")
    for key in _TOP_PARSERS:
        value = getattr(config, key)
        if value is None:
            continue
        if key == "interleaver":
            value = format_interleaver(value)
        elif isinstance(value, tuple):
            value = ",".join(repr(v) for v in value)
        out.write(f"{key} = {value}\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# simulation


def _frame(config: ExperimentConfig, n: int, rng: np.random.Generator) -> ShapedFrame:
    length = 2 * config.num_symbols
    qam = config.constellation()
    dist = config.amplitude_distribution()
    if config.source == "ccdm":
        codec = codec_for(dist, n)
        return generate_compound_sequence(codec, -(-length // n), rng, qam.alphabet.levels).truncate(length)
    return iid_frame(dist.probs, length, rng, qam.alphabet.levels)


def transmit_frames(config: ExperimentConfig, n: int, seed: int) -> list[ShapedFrame]:
    """PAS frames for every WDM channel; seeds are split per channel and per role."""
    qam = config.constellation()
    frames = []
    for ch in range(config.plan.num_channels):
        data_rng = np.random.default_rng([seed, 0, ch])
        sign_rng = np.random.default_rng([seed, 1, ch])
        frame = _frame(config, n, data_rng)
        signs = sign_rng.integers(0, 2, frame.amplitudes.size, dtype=np.uint8)
        frames.append(pas_assemble(frame, signs, qam))
    return frames


def launched_symbols(config: ExperimentConfig, frame: ShapedFrame) -> np.ndarray:
    if config.structure_preserving:
        return structure_preserving_chain(frame, config.interleaver)
    return interleave(frame.symbols, config.interleaver)


def simulate_point(config: ExperimentConfig, n: int, seed: int, launch_power_dbm: Optional[float] = None) -> dict:
    """One propagation run; returns transmit/receive symbols of the measured channel and the SNR."""
    link = config.link if launch_power_dbm is None else replace(config.link, launch_power_dbm=launch_power_dbm)
    frames = transmit_frames(config, n, seed)
    streams = [launched_symbols(config, f) for f in frames]
    wave = rrc_modulate(streams, config.plan, link.launch_power_dbm)
    # ASE realization depends on the seed only, so points at different n share it
    out = ssfm_propagate(wave, link, noise_source=np.random.default_rng([seed, 2]), precision=config.precision)
    center = config.plan.center_index
    rx = rx_dsp(out, link, center)
    est = estimate_snr(streams[center], rx)
    return {"frame": frames[center], "tx": streams[center], "rx": rx, "snr": est, "tx_wave": wave, "rx_wave": out}


def _snr_task(args) -> tuple:
    config, n, seed, power = args
    try:
        snr = simulate_point(config, n, seed, power)["snr"].snr_db
    except ShapelabError as exc:
        raise ExperimentError(f"n={n}, seed={seed}, power={power}: {exc}") from exc
    return (n, seed, power, snr)


def point_key(config: ExperimentConfig, n: int, seed: int, power: Optional[float]) -> tuple:
    """Identity of one propagation run; sweep-only fields are normalized away."""
    base = replace(config, n_list=(1,), seeds=(0,), powers=(), power_sweep_n=1, output=None, jobs=1, gmi_samples=1, gmi_seed=0)
    return (base, n, seed, config.link.launch_power_dbm if power is None else power)


def _run_tasks(tasks: Sequence[tuple], jobs: int, cache: Optional[dict] = None) -> dict:
    """SNR per task; ``cache`` (keyed by :func:`point_key`) is read and filled when given."""
    cache = {} if cache is None else cache
    todo = [t for t in tasks if point_key(*t) not in cache]
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_snr_task, todo))
    else:
        results = []
        for task in todo:
            results.append(_snr_task(task))
            log.info("n=%s seed=%s power=%s snr=%.4f dB", *results[-1])
    for task, (_, _, _, snr) in zip(todo, results):
        cache[point_key(*task)] = snr
    return {(n, seed, power): cache[point_key(config, n, seed, power)] for config, n, seed, power in tasks}


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    std = float(values.std(ddof=1)) if values.size >= 2 else 0.0
    return float(values.mean()), std


def run_sweep_n(
    config: ExperimentConfig, launch_power_dbm: Optional[float] = None, cache: Optional[dict] = None
) -> SweepResult:
    """SNR, GMI and AIR_n for every block length in ``config.n_list``."""
    tasks = [(config, n, s, launch_power_dbm) for n in config.n_list for s in config.seeds]
    snrs = _run_tasks(tasks, config.jobs, cache)
    dist = config.amplitude_distribution()
    qam = config.constellation()
    rows = []
    for n in config.n_list:
        values = [snrs[(n, s, launch_power_dbm)] for s in config.seeds]
        mean, std = _mean_std(values)
        loss = rate_loss(codec_for(dist, n), dist) if config.source == "ccdm" else 0.0
        gmi = gmi_monte_carlo(qam, dist.probs, mean, config.gmi_samples, config.gmi_seed)
        res = air_n(gmi, max(loss, 0.0), n, mean)
        rows.append(SweepRow(n, loss, mean, std, gmi, res.air_n, len(values)))
    per_seed = {n: [snrs[(n, s, launch_power_dbm)] for s in config.seeds] for n in config.n_list}
    return SweepResult(tuple(rows), per_seed)


def run_sweep_power(
    config: ExperimentConfig, powers: Sequence[float], n: Optional[int] = None, cache: Optional[dict] = None
) -> list[PowerRow]:
    """Mean SNR per launch power at a fixed block length."""
    powers = list(powers)
    if not powers:
        raise ContractError("power list is empty")
    n = config.power_sweep_n if n is None else n
    tasks = [(config, n, s, p) for p in powers for s in config.seeds]
    snrs = _run_tasks(tasks, config.jobs, cache)
    rows = []
    for p in sorted(powers):
        mean, std = _mean_std([snrs[(n, s, p)] for s in config.seeds])
        rows.append(PowerRow(p, mean, std, len(config.seeds)))
    return rows


def optimum_power(rows: Sequence[PowerRow]) -> float:
    return max(rows, key=lambda r: r.snr_mean).launch_power_dbm


# ---------------------------------------------------------------------------
# CSV


def emit_csv(result: SweepResult, path) -> None:
    """Write the sweep table; floats use shortest round-trip repr so parsing back is exact."""
    rows = sorted(result.rows, key=lambda r: r.n)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in rows:
                w.writerow((r.n, repr(r.rate_loss), repr(r.snr_mean), repr(r.snr_std), repr(r.gmi), repr(r.air_n), r.num_seeds))
    except OSError as exc:
        raise ExperimentError(f"cannot write {path}: {exc}") from exc


def parse_csv(path) -> SweepResult:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ContractError(f"{path}: unexpected header")
    out = []
    for r in rows[1:]:
        out.append(SweepRow(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]), float(r[5]), int(r[6])))
    return SweepResult(tuple(out))


def emit_power_csv(rows: Sequence[PowerRow], path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("launch_power_dbm", "snr_eff_db_mean", "snr_eff_db_std", "num_seeds"))
            for r in rows:
                w.writerow((repr(r.launch_power_dbm), repr(r.snr_mean), repr(r.snr_std), r.num_seeds))
    except OSError as exc:
        raise ExperimentError(f"cannot write {path}: {exc}") from exc


def is_unimodal(values: Sequence[float]) -> bool:
    """Strictly rises to a single interior peak, then strictly falls."""
    v = list(values)
    k = int(np.argmax(v))
    if k == 0 or k == len(v) - 1:
        return False
    return all(a < b for a, b in zip(v[: k + 1], v[1 : k + 1])) and all(a > b for a, b in zip(v[k:], v[k + 1 :]))


def required_blocks(num_symbols: int, n: int) -> int:
    return math.ceil(2 * num_symbols / n)
