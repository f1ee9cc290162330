"""Command-line interface.

Subcommands: simulate, train, despeckle, eval, gradcheck.  Every run
logs its fully resolved configuration as one JSON line, and the single
--seed flag feeds all derived random streams, so a run is reproducible
from the log alone.  A JSON config file (--config) supplies defaults
with flat keys named like the flags; explicit flags override it.

On failure, files written by the failing command are removed and the
exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .diagnostics import GRADCHECK_TOL, run_gradcheck
from .imaging import ImageFormatError, list_images, load_gray, save_gray, split_dataset
from .metrics import RegionSpec, evaluate
from .network import NetworkConfig, despeckle_image
from .rng import STREAM_SIMULATE, derive_seed
from .speckle import apply_speckle
from .training import EpochStats, TrainConfig, train


class _OutputGuard:
    """Tracks files written by a command so they can be removed if the
    command fails part-way."""

    def __init__(self):
        self.paths: list[Path] = []

    def register(self, path) -> Path:
        p = Path(path)
        self.paths.append(p)
        return p

    def cleanup(self) -> None:
        for p in self.paths:
            try:
                p.unlink(missing_ok=True)
            except OSError:
                pass


def _echo_config(command: str, resolved: dict) -> None:
    print(f"config: {json.dumps({'command': command, **resolved}, sort_keys=True)}")


def _input_images(path: Path) -> list[Path]:
    if path.is_dir():
        images = list_images(path)
        if not images:
            raise FileNotFoundError(f"no .png/.pgm images in {path}")
        return images
    if path.is_file():
        return [path]
    raise FileNotFoundError(f"input path {path} does not exist")


def _parse_under_channels(text: str) -> tuple[int, ...]:
    try:
        widths = tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise ValueError(f"bad under-channels list {text!r}") from exc
    return widths


def _parse_region(text: str) -> RegionSpec:
    parts = text.split(",")
    if len(parts) != 4:
        raise ValueError(f"region must be x0,y0,w,h, got {text!r}")
    x0, y0, w, h = (int(v) for v in parts)
    return RegionSpec(x0=x0, y0=y0, width=w, height=h)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, guard: _OutputGuard) -> int:
    in_path = Path(args.in_path)
    out_dir = Path(args.out)
    images = _input_images(in_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {
        "in": str(in_path),
        "out": str(out_dir),
        "looks": args.looks,
        "seed": args.seed,
    }
    _echo_config("simulate", resolved)
    manifest = []
    for index, src in enumerate(images):
        clean = load_gray(src)
        seed = derive_seed(args.seed, STREAM_SIMULATE, index)
        noisy = apply_speckle(clean, args.looks, seed, clip=True)
        dst = guard.register(out_dir / src.name)
        save_gray(dst, noisy)
        manifest.append(
            {"input": str(src), "output": str(dst), "seed": seed, "looks": args.looks}
        )
    manifest_path = guard.register(out_dir / "manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2))
    print(f"wrote {len(manifest)} speckled images to {out_dir}")
    return 0


def cmd_train(args, guard: _OutputGuard) -> int:
    data_dir = Path(args.data)
    out_path = Path(args.out)
    curve_path = Path(args.curve) if args.curve else Path(str(out_path) + ".curve.csv")

    paths = _input_images(data_dir)
    if len(paths) < 2:
        raise ValueError(f"training needs at least 2 images, found {len(paths)} in {data_dir}")

    config = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        tv_weight=args.tv_weight,
        crop_size=args.crop,
        batch_size=args.batch,
        looks=args.looks,
        seed=args.seed,
    )

    start_epoch = 0
    params = None
    adam_state = None
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        net_config = ckpt.config
        params = ckpt.param_tensors()
        adam_state = ckpt.adam
        start_epoch = ckpt.epoch
    else:
        net_config = NetworkConfig(
            over_channels=args.over_channels,
            under_channels=_parse_under_channels(args.under_channels),
            seed=args.seed,
        )

    resolved = {
        "data": str(data_dir),
        "out": str(out_path),
        "curve": str(curve_path),
        "resume": args.resume,
        "start_epoch": start_epoch,
        "val_fraction": args.val_fraction,
        "over_channels": net_config.over_channels,
        "under_channels": list(net_config.under_channels),
        **asdict(config),
    }
    _echo_config("train", resolved)

    train_set, val_set = split_dataset(paths, 1.0 - args.val_fraction, args.seed)
    train_images = [load_gray(p) for p in train_set.paths]
    val_images = [load_gray(p) for p in val_set.paths]
    print(f"dataset: {len(train_images)} train / {len(val_images)} val images")

    def log(stats: EpochStats) -> None:
        print(
            f"epoch {stats.epoch:4d}  train_loss {stats.train_loss:.6e}  "
            f"val_psnr {stats.val_psnr:.3f}"
        )

    result = train(
        config,
        net_config,
        train_images,
        val_images,
        params=params,
        adam_state=adam_state,
        start_epoch=start_epoch,
        log=log,
    )

    guard.register(out_path)
    save_checkpoint(
        out_path,
        Checkpoint(
            config=net_config,
            params={name: p.data for name, p in result.params.items()},
            adam=result.adam_state,
            epoch=config.epochs,
            seed=args.seed,
        ),
    )
    guard.register(curve_path)
    _append_curve(curve_path, result.history, fresh=not args.resume)
    print(f"checkpoint: {out_path}")
    print(f"loss curve: {curve_path}")
    return 0


def _append_curve(path: Path, history: list[EpochStats], fresh: bool) -> None:
    import csv

    mode = "w" if fresh or not path.exists() else "a"
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(["epoch", "train_loss", "val_psnr"])
        for row in history:
            writer.writerow([row.epoch, repr(row.train_loss), repr(row.val_psnr)])


def cmd_despeckle(args, guard: _OutputGuard) -> int:
    ckpt = load_checkpoint(args.ckpt)
    params = ckpt.param_tensors()
    images = _input_images(Path(args.in_path))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {"ckpt": str(args.ckpt), "in": str(args.in_path), "out": str(out_dir)}
    _echo_config("despeckle", resolved)
    for src in images:
        noisy = load_gray(src)
        restored = despeckle_image(params, noisy)
        dst = guard.register(out_dir / src.name)
        save_gray(dst, restored)
    print(f"despeckled {len(images)} images into {out_dir}")
    return 0


def cmd_eval(args, guard: _OutputGuard) -> int:
    test = load_gray(args.test)
    reference = load_gray(args.reference) if args.reference else None
    regions = tuple(_parse_region(r) for r in args.region or [])
    resolved = {
        "test": str(args.test),
        "reference": str(args.reference) if args.reference else None,
        "regions": [r for r in (args.region or [])],
        "out": args.out,
    }
    _echo_config("eval", resolved)
    report = evaluate(test, reference=reference, regions=regions)

    lines = []
    if report.psnr is not None:
        p = "inf" if report.psnr == float("inf") else f"{report.psnr:.4f}"
        lines.append(f"  psnr [dB] : {p}")
        lines.append(f"  ssim      : {report.ssim:.6f}")
    for r in report.regions:
        e = "inf" if r.enl == float("inf") else f"{r.enl:.4f}"
        lines.append(
            f"  region x0={r.region.x0} y0={r.region.y0} "
            f"{r.region.width}x{r.region.height}: enl={e} cx={r.cx:.6f}"
        )
    print("metrics:")
    print("\n".join(lines))
    payload = json.dumps(report.to_dict(), indent=2)
    if args.out:
        guard.register(args.out).write_text(payload)
        print(f"report: {args.out}")
    else:
        print(payload)
    return 0


def cmd_gradcheck(args, guard: _OutputGuard) -> int:
    resolved = {"seeds": args.seeds, "tol": GRADCHECK_TOL}
    _echo_config("gradcheck", resolved)
    errors, failing = run_gradcheck(seeds=args.seeds)
    for name in sorted(errors):
        status = "FAIL" if name in failing else "ok"
        print(f"  {status:4s}  {name:28s} max rel err {errors[name]:.3e}")
    if failing:
        print(f"gradcheck FAILED for: {', '.join(failing)}")
        return 1
    print("gradcheck passed")
    return 0


# ---------------------------------------------------------------------------
# parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ocsd",
        description="Dual-branch overcomplete/undercomplete SAR despeckling toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="apply synthetic multiplicative speckle")
    p.add_argument("--in", dest="in_path", required=True, help="input image or directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--looks", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the despeckling network")
    p.add_argument("--data", required=True, help="directory of training images")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--curve", default=None, help="loss-curve CSV path")
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--tv-weight", dest="tv_weight", type=float, default=5e-5)
    p.add_argument("--crop", type=int, default=128)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--looks", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-fraction", dest="val_fraction", type=float, default=0.1)
    p.add_argument("--over-channels", dest="over_channels", type=int, default=32)
    p.add_argument(
        "--under-channels",
        dest="under_channels",
        default="32,64,128,256,512",
        help="comma-separated widths of the 5 undercomplete encoder stages",
    )
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("despeckle", help="restore images with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_despeckle)

    p = sub.add_parser("eval", help="compute despeckling metrics")
    p.add_argument("--test", required=True, help="image under evaluation")
    p.add_argument("--reference", default=None, help="clean reference (for PSNR/SSIM)")
    p.add_argument(
        "--region",
        action="append",
        help="x0,y0,w,h rectangle for ENL/Cx (repeatable)",
    )
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference audit of every op")
    p.add_argument("--seeds", type=int, default=100)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def _apply_config_file(argv: list[str], parser: argparse.ArgumentParser) -> list[str]:
    """Pull --config out of argv and turn its JSON keys into parser
    defaults for the named subcommand; explicit flags still win."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise ValueError("--config requires a path")
    config_path = argv[idx + 1]
    argv = argv[:idx] + argv[idx + 2 :]
    values = json.loads(Path(config_path).read_text())
    if not isinstance(values, dict):
        raise ValueError(f"{config_path}: config file must hold a JSON object")
    remap = {k.replace("-", "_"): v for k, v in values.items()}
    for action in parser._subparsers._group_actions:  # noqa: SLF001
        for name, subparser in action.choices.items():
            if argv and argv[0] == name:
                known = {a.dest for a in subparser._actions}  # noqa: SLF001
                unknown = set(remap) - known
                if unknown:
                    raise ValueError(f"{config_path}: unknown config keys {sorted(unknown)}")
                subparser.set_defaults(**remap)
    return argv


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        argv = _apply_config_file(argv, parser)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    guard = _OutputGuard()
    try:
        return args.func(args, guard)
    except (ValueError, CheckpointError, ImageFormatError, OSError) as exc:
        guard.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
