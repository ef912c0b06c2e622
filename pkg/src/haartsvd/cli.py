"""``haartsvd`` command line.

Exit codes: 0 success, 1 I/O problem, 2 bad arguments or configuration,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import statistics
import sys
import time
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from .images import read_image, write_image
from .metrics import psnr, ssim
from .noise import AdaptiveParams, load_sidecar, vote_sigma
from .patches import ConfigError, MatchConfig, as_hwc
from .pipeline import DenoiseConfig, denoise_adaptive, filter_with_sigma_map, resolve_bases, tile_layout
from .rng import add_awgn
from .transform import CorruptBasesError, save_bases

log = logging.getLogger("haartsvd")

EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def default_bases_path(ps: int, c: int):
    ref = resources.files("haartsvd") / "data" / f"bases_ps{ps}_c{c}.htsv"
    return Path(str(ref)) if ref.is_file() else None


def _load(path):
    try:
        return read_image(path)
    except (OSError, ValueError) as exc:  # PIL.UnidentifiedImageError is an OSError
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc


def _save(path, image):
    try:
        write_image(path, image)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def _threads(value):
    env = os.environ.get("HTSVD_THREADS")
    value = env if env else value
    if value == "auto":
        return "auto"
    try:
        n = int(value)
    except (TypeError, ValueError):
        raise CliError(f"bad thread count {value!r}", EXIT_CONFIG)
    if n < 1:
        raise CliError(f"bad thread count {value!r}", EXIT_CONFIG)
    return n


def _config(args, image, threads=None) -> DenoiseConfig:
    c = as_hwc(image).shape[2]
    try:
        match = MatchConfig(ps=args.ps, K=args.K, W=args.W, stride=args.stride, gamma_gcp=args.gamma_gcp)
        adaptive = AdaptiveParams(beta=args.beta, gamma_rank=args.gamma_rank)
        bases = args.bases
        if bases == "default":
            path = default_bases_path(args.ps, c)
            if path is None:
                log.info("no bundled bases for ps=%d c=%d; learning from the input", args.ps, c)
                bases = "learn"
            else:
                bases = path
        return DenoiseConfig(match=match, adaptive=adaptive, bases=bases, threads=threads or _threads(args.threads), seed=args.seed)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc


def _add_filter_options(p, threads="1", threads_help="worker count or 'auto' (HTSVD_THREADS overrides)"):
    p.add_argument("--ps", type=int, default=8, help="patch side")
    p.add_argument("--K", type=int, default=32, help="patches per group (power of 2)")
    p.add_argument("--W", type=int, default=18, help="search radius")
    p.add_argument("--stride", type=int, default=4, help="reference patch step")
    p.add_argument("--gamma-gcp", type=float, default=1.2)
    p.add_argument("--beta", type=float, default=1.2)
    p.add_argument("--gamma-rank", type=int, default=13)
    p.add_argument("--bases", default="default", help="'default', 'learn' or an HTSV file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", default=threads, help=threads_help)


def _run_denoise(args, image, cfg):
    cfg = replace(cfg, bases=resolve_bases(image, cfg))
    if args.adaptive:
        overrides = load_sidecar(args.sidecar) if args.sidecar else None
        res = denoise_adaptive(image, cfg, overrides=overrides, return_result=True)
    else:
        tiles = tile_layout(np.shape(image), cfg)
        res = filter_with_sigma_map(image, {t: float(args.sigma) for t in tiles}, cfg)
    return res


def cmd_denoise(args) -> int:
    if args.sidecar and not args.adaptive:
        raise CliError("--sidecar needs --adaptive", EXIT_CONFIG)
    if args.sigma is not None and args.sigma < 0:
        raise CliError("--sigma must be nonnegative", EXIT_CONFIG)
    image = _load(args.input)
    cfg = _config(args, image)
    t0 = time.perf_counter()
    try:
        res = _run_denoise(args, image, cfg)
    except CorruptBasesError as exc:
        raise CliError(str(exc), EXIT_IO) from exc
    except OSError as exc:
        raise CliError(str(exc), EXIT_IO) from exc
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        raise CliError(f"numerical failure: {exc}", EXIT_NUMERIC) from exc
    seconds = time.perf_counter() - t0
    if not np.all(np.isfinite(res.image)):
        raise CliError("numerical failure: non-finite output", EXIT_NUMERIC)
    _save(args.output, res.image)
    if args.json:
        sigma_map = [[int(t[0]), int(t[1]), float(s)] for t, s in sorted(res.sigma_map.items())]
        print(json.dumps({
            "sigma_used": vote_sigma(res.sigma_map.values()),
            "seconds": seconds,
            "tiles": res.tiles,
            "sigma_map": sigma_map,
        }))
    return 0


def _parse_sigmas(text: str):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"bad --sigma {text!r}", EXIT_CONFIG)
    if not vals or any(v < 0 or not math.isfinite(v) for v in vals):
        raise CliError(f"bad --sigma {text!r}", EXIT_CONFIG)
    return vals


def cmd_add_noise(args) -> int:
    sigmas = _parse_sigmas(args.sigma)
    image = _load(args.input)
    channels = as_hwc(image).shape[2]
    if len(sigmas) not in (1, channels):
        raise CliError(f"{len(sigmas)} sigma values for a {channels}-channel image", EXIT_CONFIG)
    _save(args.output, add_awgn(image, sigmas, args.seed, clip=True))
    return 0


def _fmt(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"


def cmd_metrics(args) -> int:
    a, b = _load(args.reference), _load(args.test)
    if np.shape(a) != np.shape(b):
        raise CliError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}", EXIT_CONFIG)
    p, s = psnr(a, b), ssim(a, b)
    if args.json:
        print(json.dumps({"psnr": "inf" if math.isinf(p) else p, "ssim": s}))
    else:
        print(f"PSNR {_fmt(p)} dB")
        print(f"SSIM {s:.6f}")
    return 0


def cmd_learn_bases(args) -> int:
    image = _load(args.input)
    try:
        cfg = DenoiseConfig(match=MatchConfig(ps=args.ps, stride=args.stride, W=max(args.ps, 18)))
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    try:
        bases = resolve_bases(image, cfg)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    try:
        save_bases(bases, args.output)
    except OSError as exc:
        raise CliError(f"cannot write {args.output}: {exc}", EXIT_IO) from exc
    return 0


def cmd_bench(args) -> int:
    image = _load(args.input)
    try:
        counts = [int(x) for x in args.threads.split(",")]
    except ValueError:
        raise CliError(f"bad --threads {args.threads!r}", EXIT_CONFIG)
    if not counts or min(counts) < 1 or args.repeats < 1:
        raise CliError("thread counts and --repeats must be positive", EXIT_CONFIG)
    base = _config(args, image, threads=1)
    bases = resolve_bases(image, base)
    tiles = tile_layout(np.shape(image), base)
    sigma_map = {t: float(args.sigma) for t in tiles}
    report = {}
    outputs = {}
    for n in counts:
        cfg = DenoiseConfig(match=base.match, adaptive=base.adaptive, bases=bases, threads=n, seed=base.seed)
        runs = []
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            out = filter_with_sigma_map(image, sigma_map, cfg, bases=bases).image
            runs.append(time.perf_counter() - t0)
        outputs[n] = out
        report[str(n)] = {"median": statistics.median(runs), "runs": runs}
    ref = outputs[counts[0]]
    max_rel = max(float(np.abs(o - ref).max() / max(np.abs(ref).max(), 1.0)) for o in outputs.values())
    if args.json:
        print(json.dumps({"threads": report, "max_rel_diff": max_rel}))
    else:
        for n in counts:
            print(f"threads={n:<3d} median {report[str(n)]['median']:.3f} s over {args.repeats} runs")
        print(f"max relative difference between outputs {max_rel:.2e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="haartsvd", description="Haar-tSVD image denoising")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("denoise", help="denoise an image")
    p.add_argument("input")
    p.add_argument("output")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--sigma", type=float, help="known noise level on the [0, 255] scale")
    mode.add_argument("--adaptive", action="store_true", help="estimate and adjust sigma per subimage")
    p.add_argument("--sidecar", help="per-subimage sigma predictions (tile_row tile_col sigma)")
    p.add_argument("--json", action="store_true")
    _add_filter_options(p)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("add-noise", help="add seeded Gaussian noise")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--sigma", required=True, help="one value or a comma list per channel")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_add_noise)

    p = sub.add_parser("metrics", help="PSNR and SSIM of TEST against REFERENCE")
    p.add_argument("reference")
    p.add_argument("test")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("learn-bases", help="learn global bases from an image and save them")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--ps", type=int, default=8)
    p.add_argument("--stride", type=int, default=4)
    p.set_defaults(func=cmd_learn_bases)

    p = sub.add_parser("bench", help="time the filter for several worker counts")
    p.add_argument("input")
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--json", action="store_true")
    _add_filter_options(p, threads="1,4", threads_help="comma list of worker counts")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"haartsvd: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
