"""Command line entry point: ``bp-layer <command> [options]``.

Exit codes: 0 on success, 1 when a check suite fails, 2 on usage or
input errors.
"""

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from bp_layer import log
from bp_layer.chain_dp import ChainView, JumpChain, MatrixChain, dp_forward
from bp_layer.config import ALGOS, DEFAULT_PENALTIES, ModelParams, TrainConfig, spec_from_dict
from bp_layer.errors import ERROR_RADIUS, CheckFailure, InputError
from bp_layer.formats.pfm import read_pfm, write_pfm
from bp_layer.formats.pgm import read_pgm, write_pgm
from bp_layer.grid_model import CompatMatrix, FullMatrix, JumpParams
from bp_layer.learning import metrics, train_toy
from bp_layer.matching import load_probability_volume
from bp_layer.parallel import default_workers
from bp_layer.pipeline import run_flow, run_segmentation, run_stereo, stereo_sample
from bp_layer.suites import SUITES, run_suite

EXIT_OK: int = 0
EXIT_CHECK_FAILED: int = 1
EXIT_USAGE: int = 2

BENCH_LABELS: List[int] = [16, 32, 64, 128]
BENCH_REPEATS: int = 3
SEGMENT_DIAGONAL: float = 2.0


def _write_rows(path: Path, rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as out:
        csv.writer(out).writerows(rows)


def _report_metrics(values: Dict[str, float], path: Optional[Path]) -> None:
    rows = [(name, f"{value:.6f}") for name, value in values.items()]
    if path is None:
        for name, value in rows:
            print(f"{name},{value}")
    else:
        _write_rows(path, rows)


def _stereo_labels(max_disp: int, levels: int) -> List[int]:
    return [(max_disp + 1) // 2**k for k in range(levels - 1, -1, -1)]


def _flow_labels(radius: int, levels: int) -> List[int]:
    return [2 * (radius // 2**k) + 1 for k in range(levels - 1, -1, -1)]


def _model_params(args, labels: List[int]) -> ModelParams:
    if args.params is not None:
        return ModelParams.load(args.params)
    if args.pairwise == "matrix":
        return ModelParams.default_matrix(labels)
    return ModelParams.default_jump(len(labels))


def cmd_stereo(args) -> int:
    cfg = TrainConfig(
        args.config,
        max_disp=args.max_disp,
        levels=args.levels,
        algo=args.algo,
        refine_tau=args.refine_tau,
        seed=args.seed,
    )
    left = read_pgm(args.left)
    right = read_pgm(args.right)
    levels = cfg.levels if cfg.algo == "bp" else 1
    params = _model_params(args, _stereo_labels(cfg.max_disp, levels))
    result = run_stereo(left, right, params, cfg, args.threads)
    write_pfm(args.out, result.values)
    log.info(f"Wrote disparities to {args.out}")
    if args.gt is not None:
        _report_metrics(metrics(result.values, read_pfm(args.gt)), args.metrics_out)
    return EXIT_OK


def cmd_flow(args) -> int:
    cfg = TrainConfig(
        args.config,
        levels=args.levels,
        algo=args.algo,
        refine_tau=args.refine_tau,
        seed=args.seed,
    )
    image0 = read_pgm(args.left)
    image1 = read_pgm(args.right)
    limit = min(image0.shape)
    if not 1 <= args.radius < limit:
        raise InputError(ERROR_RADIUS.format(radius=args.radius, limit=limit))
    levels = cfg.levels if cfg.algo == "bp" else 1
    params = _model_params(args, _flow_labels(args.radius, levels))
    rows, cols = run_flow(image0, image1, args.radius, params, cfg, args.threads)
    write_pfm(args.out_u1, rows.values)
    write_pfm(args.out_u2, cols.values)
    log.info(f"Wrote flow components to {args.out_u1} and {args.out_u2}")
    if args.gt_u1 is not None and args.gt_u2 is not None:
        flow = np.stack([rows.values, cols.values], axis=-1)
        truth = np.stack([read_pfm(args.gt_u1), read_pfm(args.gt_u2)], axis=-1)
        _report_metrics(metrics(flow, truth), args.metrics_out)
    return EXIT_OK


def _load_matrix(path: Optional[Path], labels: int) -> FullMatrix:
    if path is None:
        diagonal = SEGMENT_DIAGONAL * np.eye(labels)
        return FullMatrix(CompatMatrix(diagonal, diagonal.copy()))
    data = _read_json(path)
    try:
        return spec_from_dict({"matrix": data})
    except (KeyError, TypeError) as error:
        raise InputError(f"{path}: malformed matrix file ({error!r})") from None


def _read_json(path: Path):
    try:
        with open(path, encoding="utf-8") as matrix_file:
            return json.load(matrix_file)
    except (OSError, ValueError) as error:
        raise InputError(f"{path}: {error}") from None


def cmd_segment(args) -> int:
    probs = load_probability_volume(args.probs)
    labels = probs.shape[-1]
    spec = _load_matrix(args.matrix, labels)
    image = None if args.image is None else read_pgm(args.image)
    result = run_segmentation(probs, spec, args.temperature, image, args.beta, args.threads)
    step = 255 // max(labels - 1, 1)
    write_pgm(args.out, result.values.astype(np.int64) * step)
    log.info(f"Wrote {labels}-class label map to {args.out}")
    return EXIT_OK


def _training_files(data: Path) -> List[Path]:
    lefts = sorted(data.glob("*_left.pgm"))
    if not lefts:
        raise InputError(f"{data}: no *_left.pgm images found")
    return lefts


def cmd_train(args) -> int:
    cfg = TrainConfig(
        args.config,
        learning_rate=args.lr,
        steps=args.steps,
        seed=args.seed,
    )
    samples = []
    for left_path in _training_files(args.data):
        stem = left_path.name[: -len("_left.pgm")]
        right_path = left_path.with_name(f"{stem}_right.pgm")
        disp_path = left_path.with_name(f"{stem}_disp.pfm")
        log.debug(f"Loading training pair {stem}...")
        samples.append(
            stereo_sample(read_pgm(left_path), read_pgm(right_path), read_pfm(disp_path), cfg)
        )
    if args.params is not None:
        params = ModelParams.load(args.params)
    else:
        params = ModelParams.default_jump(cfg.levels)
    params, curve = train_toy(samples, params, cfg, args.threads)
    params.save(args.out_params)
    if args.loss_out is not None:
        _write_rows(args.loss_out, [("step", "loss")] + [(k, f"{v:.9g}") for k, v in enumerate(curve)])
    log.info(f"Loss went from {curve[0]:.6f} to {curve[-1]:.6f}")
    return EXIT_OK


def cmd_check(args) -> int:
    report = run_suite(args.suite, args.seed, args.threads)
    print(report)
    return EXIT_OK


def _bench_view(rng: np.random.Generator, size: int, labels: int, pairwise: str) -> ChainView:
    unaries = rng.normal(size=(size, size, labels))
    weights = np.ones((size, size - 1))
    if pairwise == "matrix":
        return ChainView(unaries, MatrixChain(rng.uniform(0.0, 1.0, (labels, labels)), weights))
    penalties = JumpParams(**DEFAULT_PENALTIES).penalties
    return ChainView(unaries, JumpChain(penalties, weights))


def bench_times(
    labels: Sequence[int], size: int, pairwise: str, seed: int = 0, workers: int = 1
) -> List[float]:
    """Best-of-three wall clock of one message pass over ``size`` chains of ``size`` pixels."""
    rng = np.random.default_rng(seed)
    times = []
    for count in labels:
        view = _bench_view(rng, size, count, pairwise)
        best = np.inf
        for _ in range(BENCH_REPEATS):
            start = time.perf_counter()
            dp_forward(view, workers=workers)
            best = min(best, time.perf_counter() - start)
        log.debug(f"{count} labels: {best:.6f}s")
        times.append(best)
    return times


def fit_slope(labels: Sequence[int], times: Sequence[float]) -> float:
    slope, _ = np.polyfit(np.log(labels), np.log(times), 1)
    return float(slope)


def cmd_bench(args) -> int:
    if len(args.labels) < 2:
        raise InputError("Benchmarking needs at least two label counts")
    times = bench_times(args.labels, args.size, args.pairwise, args.seed, args.threads)
    slope = fit_slope(args.labels, times)
    rows = [(count, f"{seconds:.6f}") for count, seconds in zip(args.labels, times)]
    rows.append(("slope", f"{slope:.4f}"))
    if args.out is None:
        for count, seconds in rows:
            print(f"{count},{seconds}")
    else:
        _write_rows(args.out, rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--threads",
        type=int,
        default=default_workers(),
        help="Worker threads per chain batch (default: all cores)",
    )
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true", help="Log debug output")

    parser = argparse.ArgumentParser(
        prog="bp-layer",
        description="Max-product belief propagation on pixel grids",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    stereo = subparsers.add_parser("stereo", parents=[common], help="Disparity from a rectified pair")
    stereo.add_argument("--left", type=Path, required=True)
    stereo.add_argument("--right", type=Path, required=True)
    stereo.add_argument("--max-disp", type=int, default=None)
    stereo.add_argument("--levels", type=int, default=None)
    stereo.add_argument("--algo", choices=ALGOS, default=None)
    stereo.add_argument("--pairwise", choices=("jump", "matrix"), default="jump")
    stereo.add_argument("--params", type=Path, default=None, help="Model parameters JSON")
    stereo.add_argument("--config", type=Path, default=None, help="Configuration JSON")
    stereo.add_argument("--out", type=Path, required=True)
    stereo.add_argument("--gt", type=Path, default=None)
    stereo.add_argument("--metrics-out", type=Path, default=None)
    stereo.add_argument("--refine-tau", type=int, default=None)
    stereo.set_defaults(handler=cmd_stereo)

    flow = subparsers.add_parser("flow", parents=[common], help="Optical flow between two frames")
    flow.add_argument("--left", type=Path, required=True)
    flow.add_argument("--right", type=Path, required=True)
    flow.add_argument("--radius", type=int, required=True)
    flow.add_argument("--levels", type=int, default=None)
    flow.add_argument("--algo", choices=ALGOS, default=None)
    flow.add_argument("--pairwise", choices=("jump", "matrix"), default="jump")
    flow.add_argument("--params", type=Path, default=None)
    flow.add_argument("--config", type=Path, default=None)
    flow.add_argument("--out-u1", type=Path, required=True)
    flow.add_argument("--out-u2", type=Path, required=True)
    flow.add_argument("--gt-u1", type=Path, default=None)
    flow.add_argument("--gt-u2", type=Path, default=None)
    flow.add_argument("--metrics-out", type=Path, default=None)
    flow.add_argument("--refine-tau", type=int, default=None)
    flow.set_defaults(handler=cmd_flow)

    segment = subparsers.add_parser("segment", parents=[common], help="Smooth a segmentation")
    segment.add_argument("--probs", type=Path, required=True)
    segment.add_argument("--image", type=Path, default=None)
    segment.add_argument("--matrix", type=Path, default=None)
    segment.add_argument("--out", type=Path, required=True)
    segment.add_argument("--temperature", type=float, default=1.0)
    segment.add_argument("--beta", type=float, default=1.0)
    segment.set_defaults(handler=cmd_segment)

    train = subparsers.add_parser("train", parents=[common], help="Fit parameters on stereo pairs")
    train.add_argument("--data", type=Path, required=True)
    train.add_argument("--config", type=Path, default=None)
    train.add_argument("--params", type=Path, default=None)
    train.add_argument("--lr", type=float, default=None)
    train.add_argument("--steps", type=int, default=None)
    train.add_argument("--out-params", type=Path, required=True)
    train.add_argument("--loss-out", type=Path, default=None)
    train.set_defaults(handler=cmd_train)

    check = subparsers.add_parser("check", parents=[common], help="Run a property suite")
    check.add_argument("suite", choices=sorted(SUITES))
    check.set_defaults(handler=cmd_check)

    bench = subparsers.add_parser("bench", parents=[common], help="Time message passing")
    bench.add_argument("--labels", type=int, nargs="+", default=BENCH_LABELS)
    bench.add_argument("--size", type=int, default=64)
    bench.add_argument("--pairwise", choices=("jump", "matrix"), default="jump")
    bench.add_argument("--out", type=Path, default=None)
    bench.set_defaults(handler=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_request:
        return int(exit_request.code or 0)
    log.setup_console(logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.handler(args)
    except CheckFailure as error:
        print(f"check failed: {error}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    except (InputError, OSError) as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
