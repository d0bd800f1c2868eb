"""Command-line entry point: ``liteie <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import plotting
from .bench import CSV_HEADER, parse_resolution, time_pipeline
from .enhance import EnhanceConfig, enhance_image
from .errors import InvalidArgument, LiteIEError
from .evaluate import evaluate_directory, mean_metrics, parse_grid, sweep
from .image import load_image, save_image
from .losses import LossConfig
from .net import deserialize_weights, init_weights, serialize_weights
from .train import TrainConfig, gradient_check, train

__all__ = ["run_cli", "main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

GRADCHECK_TOLERANCE = 1e-4

log = logging.getLogger("liteie")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; route it to our code 1 instead
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _add_enhance_flags(p, default_iters=8):
    p.add_argument("--iters", type=_nonneg_int, default=default_iters, help="enhancement iterations T")
    p.add_argument("--no-irm", action="store_true", help="disable the restoration step")


def _enhance_cfg(args) -> EnhanceConfig:
    return EnhanceConfig(iterations=args.iters, irm_enabled=not args.no_irm)


def _add_train_flags(p, default_steps):
    p.add_argument("--data", required=True, type=Path, help="directory of low-light PNG/PPM images")
    p.add_argument("--steps", type=_nonneg_int, default=default_steps)
    p.add_argument("--topology", default="3-1-3")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.8, help="exposure target scale")
    p.add_argument("--beta", type=float, default=0.4, help="edge-aware TV sharpness")
    p.add_argument("--batch-size", type=_positive_int, default=8)
    p.add_argument("--patch", type=_positive_int, default=256)
    p.add_argument("--lr", type=float, default=1e-4)
    _add_enhance_flags(p)


def _train_cfg(args) -> TrainConfig:
    return TrainConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        patch=args.patch,
        learning_rate=args.lr,
        seed=args.seed,
        loss_cfg=LossConfig(exp_alpha=args.alpha, tv_beta=args.beta),
        enhance_cfg=_enhance_cfg(args),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="liteie", description="Tiny unsupervised low-light image enhancer.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("enhance", help="enhance one image")
    p.add_argument("--weights", required=True, type=Path)
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--backend", choices=("numpy", "numba"), default="numpy")
    _add_enhance_flags(p)

    p = sub.add_parser("train", help="unsupervised training on a directory of images")
    _add_train_flags(p, default_steps=2000)
    p.add_argument("--out", required=True, type=Path, help="weights file to write")
    p.add_argument("--log", type=Path, help="also write the loss log (CSV) here")
    p.add_argument("--checkpoint-every", type=_nonneg_int, default=0)
    p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("eval", help="score enhanced images against references")
    p.add_argument("--weights", type=Path, help="omit together with --unenhanced")
    p.add_argument("--low", required=True, type=Path)
    p.add_argument("--gt", required=True, type=Path)
    p.add_argument("--report", required=True, type=Path)
    p.add_argument("--unenhanced", action="store_true", help="score the raw low-light inputs")
    p.add_argument("--save-dir", type=Path, help="write the enhanced images here")
    p.add_argument("--no-plot", action="store_true")
    _add_enhance_flags(p)

    p = sub.add_parser("bench", help="latency and FLOPs across resolutions")
    p.add_argument("--weights", type=Path, help="default: freshly initialised --topology")
    p.add_argument("--topology", default="3-1-3")
    p.add_argument("--res", action="append", help="WIDTHxHEIGHT, repeatable (default 1920x1080)")
    p.add_argument("--runs", type=int, default=50)
    p.add_argument("--warmup", type=_nonneg_int, default=3)
    p.add_argument("--threads", type=_positive_int, help="thread count for the parallel mode")
    p.add_argument("--single-only", action="store_true", help="skip the parallel mode")
    p.add_argument("--report", type=Path)
    p.add_argument("--no-plot", action="store_true")
    _add_enhance_flags(p)

    p = sub.add_parser("ablate", help="train one model per grid value and report PSNR")
    _add_train_flags(p, default_steps=500)
    p.add_argument("--gt", required=True, type=Path, help="reference images, paired by file name")
    p.add_argument("--eval-low", type=Path, help="low-light eval images (default: --data)")
    p.add_argument("--grid", required=True, help="e.g. alpha=0.4:1.2:0.2 or beta=0.2,0.4,0.6")
    p.add_argument("--report", type=Path)
    p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t", type=_nonneg_int, default=2, help="iterations T")
    p.add_argument("--cases", type=_positive_int, default=1, help="check seeds seed..seed+cases-1")
    p.add_argument("--size", type=_positive_int, default=16)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--topology", default="3-1-3")
    p.add_argument("--no-irm", action="store_true")
    return parser


# -- commands ---------------------------------------------------------------------

def _cmd_enhance(args) -> int:
    weights = deserialize_weights(args.weights)
    image = load_image(args.input)
    out = enhance_image(weights, image, _enhance_cfg(args), backend=args.backend)
    save_image(out, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _train_cfg(args)
    header = "step, total, L_exp, L_tv, L_mscol"
    lines = [header]
    print(header, flush=True)

    def on_record(rec):
        line = rec.format()
        lines.append(line)
        print(line, flush=True)

    weights, records = train(args.data, args.topology, cfg, on_record=on_record,
                             checkpoint_prefix=args.out, checkpoint_every=args.checkpoint_every)
    serialize_weights(weights, args.out)
    if args.log is not None:
        args.log.write_text("\n".join(lines) + "\n")
    if records and not args.no_plot:
        plotting.plot_training_log(records, plotting.figure_path(args.log or args.out))
    log.info("wrote %s", args.out)
    return EXIT_OK


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _cmd_eval(args) -> int:
    if args.unenhanced == (args.weights is not None):
        raise _UsageError("eval needs exactly one of --weights or --unenhanced")
    weights = None if args.unenhanced else deserialize_weights(args.weights)
    if args.save_dir is not None:
        args.save_dir.mkdir(parents=True, exist_ok=True)
    rows, pairing = evaluate_directory(weights, args.low, args.gt, _enhance_cfg(args),
                                       save_dir=args.save_dir)
    for name in pairing.unmatched_low:
        print(f"unmatched low-light image (no reference): {name}")
    for name in pairing.unmatched_gt:
        print(f"unmatched reference image (no low-light input): {name}")
    _write_csv(args.report, ["image", "psnr", "ssim", "mae", "mse"], [r.row(n) for n, r in rows])
    m = mean_metrics(rows)
    print(f"pairs={len(rows)} psnr={m.psnr:.4f} ssim={m.ssim:.4f} mae={m.mae:.4f} mse={m.mse:.4f}")
    if not args.no_plot:
        plotting.plot_eval([n for n, _ in rows], [r.psnr for _, r in rows],
                           plotting.figure_path(args.report))
    return EXIT_OK


def _cmd_bench(args) -> int:
    if args.runs < 1:
        raise InvalidArgument(f"runs must be >= 1, got {args.runs}")
    weights = (deserialize_weights(args.weights) if args.weights is not None
               else init_weights(args.topology, 0))
    cfg = _enhance_cfg(args)
    resolutions = [parse_resolution(r) for r in (args.res or ["1920x1080"])]
    modes = [False] if args.single_only else [False, True]
    reports = []
    print(",".join(CSV_HEADER))
    for h, w in resolutions:
        for parallel in modes:
            rep = time_pipeline(weights, h, w, cfg, runs=args.runs, warmup=args.warmup,
                                parallel=parallel, threads=args.threads)
            reports.append(rep)
            print(",".join(str(v) for v in rep.row()), flush=True)
    if args.report is not None:
        _write_csv(args.report, CSV_HEADER, [r.row() for r in reports])
        if not args.no_plot:
            plotting.plot_bench(reports, plotting.figure_path(args.report))
    return EXIT_OK


def _cmd_ablate(args) -> int:
    key, values = parse_grid(args.grid)
    base = _train_cfg(args)
    print(f"{key},psnr,ssim,final_loss")

    def on_point(pt):
        print(f"{pt.value:g},{pt.psnr:.6f},{pt.ssim:.6f},{pt.final_loss:.10g}", flush=True)

    points = sweep(key, values, args.data, args.gt, args.eval_low, args.topology, base,
                   on_point=on_point)
    best = max(points, key=lambda p: p.psnr)
    print(f"best {key}={best.value:g} psnr={best.psnr:.4f}")
    if args.report is not None:
        _write_csv(args.report, [key, "psnr", "ssim", "final_loss"],
                   [[f"{p.value:g}", f"{p.psnr:.6f}", f"{p.ssim:.6f}", f"{p.final_loss:.10g}"]
                    for p in points])
        if not args.no_plot:
            plotting.plot_sweep(key, [p.value for p in points], [p.psnr for p in points],
                                plotting.figure_path(args.report), ssims=[p.ssim for p in points])
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    worst = 0.0
    for seed in range(args.seed, args.seed + args.cases):
        err = gradient_check(seed, iterations=args.t, irm=not args.no_irm, size=args.size,
                             topology=args.topology, epsilon=args.eps)
        if args.cases > 1:
            print(f"seed={seed} max_rel_err={err:.3e}")
        worst = max(worst, err)
    ok = worst < GRADCHECK_TOLERANCE
    print(f"max relative error {worst:.3e} ({'ok' if ok else 'FAIL'}, tolerance {GRADCHECK_TOLERANCE:g})")
    return EXIT_OK if ok else EXIT_RUNTIME


_COMMANDS = {
    "enhance": _cmd_enhance,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "ablate": _cmd_ablate,
    "gradcheck": _cmd_gradcheck,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"liteie {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LiteIEError, OSError) as exc:
        print(f"liteie {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
