"""Command-line entry point: ``shapelab <subcommand> --config PATH [options]``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiment as ex
from .errors import ConfigError, ContractError, ShapelabError
from .fiber import write_waveform
from .pas import adjacent_pair_rate, read_frame_csv, run_length_stats, windowed_composition_deviation, write_frame_csv
from .shaping import codec_for, dematch, match, rate_loss

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("shapelab")


def _seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from exc
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="key = value configuration file")
    common.add_argument("--output", help="output path (file or directory, per subcommand)")
    common.add_argument("--linear", action="store_true", help="force linear_mode (no Kerr term)")
    common.add_argument("--seeds", type=_seeds, help="comma-separated seed list, overrides the config")
    common.add_argument("--jobs", type=int, help="worker processes for independent points")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="shapelab", description="Finite-length probabilistic shaping lab")
    sub = parser.add_subparsers(dest="command", required=True)

    dm = sub.add_parser("dm", parents=[common], help="distribution matcher on hex words from stdin")
    dm.add_argument("action", choices=("info", "match", "dematch"))
    dm.add_argument("--n", type=int, help="block length (default: first entry of n_list)")

    sub.add_parser("sweep-n", parents=[common], help="SNR / GMI / AIR_n versus block length")

    sp = sub.add_parser("sweep-power", parents=[common], help="SNR versus launch power at fixed n")
    sp.add_argument("--n", type=int, help="block length (default: power_sweep_n)")

    an = sub.add_parser("analyze", parents=[common], help="temporal statistics of a frame CSV")
    an.add_argument("--input", required=True, help="frame CSV written by 'simulate'")
    an.add_argument("--window", type=int, help="sliding window in amplitudes (default: block length)")

    sim = sub.add_parser("simulate", parents=[common], help="single run with frame and waveform dumps")
    sim.add_argument("--n", type=int, help="block length (default: first entry of n_list)")
    sim.add_argument("--seed", type=int, help="seed (default: first configured seed)")
    return parser


def _apply_overrides(config: ex.ExperimentConfig, args) -> ex.ExperimentConfig:
    changes = {}
    if args.seeds is not None:
        changes["seeds"] = args.seeds
    if args.jobs is not None:
        changes["jobs"] = args.jobs
    if args.output is not None:
        changes["output"] = args.output
    if args.linear:
        changes["link"] = replace(config.link, linear_mode=True)
    return replace(config, **changes) if changes else config


def _out_stream(path):
    return open(path, "w", encoding="utf-8") if path else nullcontext(sys.stdout)


def _cmd_dm(config, args) -> int:
    n = args.n or config.n_list[0]
    dist = config.amplitude_distribution()
    codec = codec_for(dist, n)
    width = max(1, -(-codec.k // 4))
    lines = []
    if args.action == "info":
        info = {
            "n": codec.n,
            "k": codec.k,
            "composition": list(codec.counts),
            "rate_bits_per_amp": codec.rate,
            "rate_loss_bits_per_amp": rate_loss(codec, dist),
            "levels": [float(v) for v in dist.alphabet.levels],
        }
        lines.append(json.dumps(info))
    else:
        levels = np.asarray(dist.alphabet.levels, dtype=float)
        for lineno, raw in enumerate(sys.stdin, 1):
            text = raw.strip()
            if not text:
                continue
            if args.action == "match":
                try:
                    value = int(text, 16)
                except ValueError as exc:
                    raise ContractError(f"line {lineno}: not a hex word: {text!r}") from exc
                if value >> codec.k:
                    raise ContractError(f"line {lineno}: word exceeds {codec.k} bits")
                bits = format(value, f"0{codec.k}b") if codec.k else ""
                idx = match(codec, bits)
                lines.append(",".join(f"{levels[i]:g}" for i in idx))
            else:
                try:
                    amps = [float(v) for v in text.split(",")]
                except ValueError as exc:
                    raise ContractError(f"line {lineno}: bad amplitude list") from exc
                lookup = {float(v): i for i, v in enumerate(levels)}
                if any(a not in lookup for a in amps):
                    raise ContractError(f"line {lineno}: amplitude not in alphabet {levels.tolist()}")
                bits = dematch(codec, [lookup[a] for a in amps])
                value = int("".join(map(str, bits.tolist())) or "0", 2)
                lines.append(format(value, f"0{width}x"))
    with _out_stream(args.output) as fh:
        for line in lines:
            fh.write(line + "\n")
    return EXIT_OK


def _cmd_sweep_n(config, args) -> int:
    result = ex.run_sweep_n(config)
    path = config.output or "sweep_n.csv"
    ex.emit_csv(result, path)
    for r in result.rows:
        log.info("n=%d snr=%.3f dB air_n=%.4f", r.n, r.snr_mean, r.air_n)
    print(f"wrote {path}; argmax AIR_n at n={result.argmax_air()}")
    return EXIT_OK


def _cmd_sweep_power(config, args) -> int:
    if not config.powers:
        raise ConfigError("sweep-power needs 'powers = ...' in the config")
    rows = ex.run_sweep_power(config, config.powers, args.n)
    path = config.output or "sweep_power.csv"
    ex.emit_power_csv(rows, path)
    print(f"wrote {path}; optimum launch power {ex.optimum_power(rows)} dBm")
    return EXIT_OK


def _cmd_analyze(config, args) -> int:
    try:
        cols = read_frame_csv(args.input)
    except OSError as exc:
        raise ex.ExperimentError(f"cannot read {args.input}: {exc}") from exc
    levels = np.asarray(config.amplitude_distribution().alphabet.levels, dtype=float)
    lookup = {float(v): i for i, v in enumerate(levels)}
    try:
        idx = np.array([lookup[float(v)] for v in cols["amplitude_level"]], dtype=np.int64)
    except KeyError as exc:
        raise ContractError(f"amplitude {exc} not in the configured alphabet") from exc
    ids = cols["block_id"]
    block = int(np.bincount(ids).max())
    codec = codec_for(config.amplitude_distribution(), block)
    target = np.asarray(codec.counts, dtype=float) / codec.n
    window = args.window or block
    dmax, dmean = windowed_composition_deviation(idx, window, max(1, window // 2), target)
    runs = run_length_stats(idx)
    report = {
        "num_amplitudes": int(idx.size),
        "block_length": block,
        "adjacent_pair_rate": adjacent_pair_rate(idx),
        "window": window,
        "window_deviation_max": dmax,
        "window_deviation_mean": dmean,
        "mean_run_length": {f"{levels[k]:g}": sum(l * c for l, c in v.items()) / sum(v.values()) for k, v in sorted(runs.items())},
        "max_run_length": {f"{levels[k]:g}": max(v) for k, v in sorted(runs.items())},
    }
    with _out_stream(args.output) as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    return EXIT_OK


def _cmd_simulate(config, args) -> int:
    n = args.n or config.n_list[0]
    seed = config.seeds[0] if args.seed is None else args.seed
    out = Path(config.output or "simulate_out")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ex.ExperimentError(f"cannot create {out}: {exc}") from exc
    try:
        res = ex.simulate_point(config, n, seed)
    except ShapelabError as exc:
        raise ex.ExperimentError(f"n={n}, seed={seed}: {exc}") from exc
    write_frame_csv(res["frame"], out / "frame.csv")
    write_waveform(res["tx_wave"], out / "tx.sfl")
    write_waveform(res["rx_wave"], out / "rx.sfl")
    snr = res["snr"]
    summary = {"n": n, "seed": seed, "snr_db": snr.snr_db, "noise_power": snr.noise_power, "num_samples": snr.num_samples}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"snr {snr.snr_db:.4f} dB; dumps in {out}")
    return EXIT_OK


_COMMANDS = {
    "dm": _cmd_dm,
    "sweep-n": _cmd_sweep_n,
    "sweep-power": _cmd_sweep_power,
    "analyze": _cmd_analyze,
    "simulate": _cmd_simulate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = _apply_overrides(ex.load_config(args.config), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](config, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ShapelabError, ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
