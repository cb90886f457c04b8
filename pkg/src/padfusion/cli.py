"""Command-line entry point.

Exit codes: 0 ok, 1 failed gradient check, 2 missing or
unreadable file, 3 shape mismatch, 4 bad flag value, 5 numeric abort.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import diagnostics as D
from .formats import FormatError, load_image, write_padt
from .fusion import init_pad_block, pad_block_forward, pad_block_param_count
from .network import (
    ModelConfig,
    PadNet,
    TrainingAborted,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    synth_dataset,
    train,
)
from .network.model import encoder_param_count
from .spectral import rfft2
from .tensor import NonFiniteError, ShapeError, Tensor, no_grad

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_MISSING = 2
EXIT_SHAPE = 3
EXIT_FLAG = 4
EXIT_NUMERIC = 5

TIMESTAMP_KEY = "generated_at"
DEFAULT_SEED = 42


class BadFlag(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise BadFlag(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# helpers


def _timestamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _dump_json(path: Path, payload: dict) -> None:
    payload = dict(payload)
    payload[TIMESTAMP_KEY] = _timestamp()
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _positive_float(name):
    def conv(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"{name} must be > 0, got {text}")
        return v

    return conv


def _fraction(text):
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"fraction must be in (0, 1), got {text}")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _non_negative_float(text):
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return v


def _float_list(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}") from None
    if not vals or any(not 0.0 < v <= 1.0 for v in vals):
        raise argparse.ArgumentTypeError(f"rates must lie in (0, 1], got {text}")
    return vals


def _int_list(text):
    vals = [int(t) for t in text.split(",") if t.strip()]
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError(f"expected comma-separated positive ints, got {text}")
    return vals


def resolve_seed(flag_value):
    """Explicit ``--seed`` wins, then ``PAD_SEED``, then the default 42."""
    if flag_value is not None:
        return flag_value
    env = os.environ.get("PAD_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise BadFlag(f"PAD_SEED must be an integer, got {env!r}") from None
    return DEFAULT_SEED


# ---------------------------------------------------------------------------
# commands


def cmd_analyze(args) -> int:
    out = _out_dir(args.out)
    pairs = D.read_manifest(args.manifest)
    rep = D.analyze(pairs, args.eps, args.lf_radius, threads=args.threads)
    sc = rep.scalars()
    payload = {
        "command": "analyze",
        "config": {
            "manifest": str(args.manifest),
            "eps": args.eps,
            "lf_radius_fraction": args.lf_radius,
            "threads": args.threads,
        },
        "n_pairs": rep.n_pairs,
        "eps": rep.eps,
        "lf_radius_fraction": rep.lf_radius_fraction,
        "pair_ids": rep.pair_ids,
    }
    for key in ("rsd", "rad", "appd"):
        name = f"{key}_map.padt"
        write_padt(out / name, getattr(rep, f"{key}_map"))
        payload[key] = {"map_path": name, "mean": sc[key][0], "variance": sc[key][1]}
    payload["appd"].update(
        lf=rep.lf_stats.to_dict(), hf=rep.hf_stats.to_dict(), all=rep.all_stats.to_dict()
    )
    _write_csv(out / "radial_profile.csv", ["radius_bin", "rsd", "rad", "appd"], D.radial_profile(rep))
    _dump_json(out / "report.json", payload)
    print(f"analyzed {rep.n_pairs} pair(s): appd mean {sc['appd'][0]:.6g}, rad mean {sc['rad'][0]:.6g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    out = _out_dir(args.out)
    pairs = D.read_manifest(args.manifest)
    points = D.downsample_sweep(pairs, args.rates, args.eps, args.lf_radius, threads=args.threads)
    rows = [
        (p.rate, p.factor, p.height, p.width, p.rsd[0], p.rsd[1], p.rad[0], p.rad[1], p.appd[0], p.appd[1])
        for p in points
    ]
    header = ["rate", "factor", "height", "width", "rsd_mean", "rsd_var", "rad_mean", "rad_var", "appd_mean", "appd_var"]
    _write_csv(out / "sweep.csv", header, rows)
    payload = {
        "command": "sweep",
        "config": {
            "manifest": str(args.manifest),
            "rates": args.rates,
            "eps": args.eps,
            "lf_radius_fraction": args.lf_radius,
            "threads": args.threads,
        },
        "points": [dict(zip(header, r)) for r in rows],
    }
    _dump_json(out / "sweep.json", payload)
    for r in rows:
        print(f"rate {r[0]:g}: rsd {r[4]:.4g}  rad {r[6]:.4g}  appd {r[8]:.4g}")
    return EXIT_OK


def cmd_masked(args) -> int:
    out = _out_dir(args.out)
    pairs = [p for p in D.read_manifest(args.manifest) if p.mask is not None]
    if not pairs:
        raise ValueError("manifest has no rows with a mask")
    rows = []
    for p in pairs:
        inc, exc = D.masked_diff(p, args.eps)
        mi, me = inc.means, exc.means
        rows.append((p.id, mi["rsd"], mi["rad"], mi["appd"], me["rsd"], me["rad"], me["appd"]))
    header = ["id", "included_rsd", "included_rad", "included_appd", "excluded_rsd", "excluded_rad", "excluded_appd"]
    _write_csv(out / "masked.csv", header, rows)
    _dump_json(
        out / "masked.json",
        {
            "command": "masked",
            "config": {"manifest": str(args.manifest), "eps": args.eps},
            "pairs": [dict(zip(header, r)) for r in rows],
        },
    )
    print(f"masked comparison written for {len(rows)} pair(s)")
    return EXIT_OK


def cmd_enl(args) -> int:
    out = _out_dir(args.out)
    img = load_image(args.image)
    if img.shape[0] != 1:
        img = D.to_grayscale(img)
    enl = D.enl_map(img, args.window)
    write_padt(out / "enl.padt", enl)
    half = args.window // 2
    plane = enl.data[0]
    interior = plane[half:-half, half:-half] if min(plane.shape) > 2 * half else plane
    payload = {
        "command": "enl",
        "config": {"image": str(args.image), "window": args.window, "compare": args.compare and str(args.compare)},
        "map_path": "enl.padt",
        "mean": float(plane.mean()),
        "interior_mean": float(interior.mean()),
    }
    if args.compare:
        other = load_image(args.compare)
        if other.data.size != enl.data.size:
            raise ShapeError(f"compare map has {other.data.size} values, ENL map has {enl.data.size}")
        r, rho = D.correlation(enl.data.ravel(), other.data.ravel())
        payload["pearson"] = r
        payload["spearman"] = rho
    _dump_json(out / "enl.json", payload)
    print(f"ENL interior mean {payload['interior_mean']:.4g}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    out = _out_dir(args.out)
    rgb = load_image(args.rgb)
    sar = load_image(args.sar)
    if rgb.shape[-2:] != sar.shape[-2:]:
        raise ShapeError(f"rgb {rgb.shape} and sar {sar.shape} differ in spatial size")
    c = rgb.shape[0]
    x_sar = Tensor(np.broadcast_to(sar.data[:1], rgb.shape)) if sar.shape[0] != c else sar
    seed = resolve_seed(args.seed)
    rng = np.random.default_rng(seed)
    block = init_pad_block(rng, c, psc_reduction=1, radius_init=args.radius_init, tau=args.tau)
    with no_grad():
        fused, amp0, amp1 = pad_block_forward(rgb, x_sar, block)
    write_padt(out / "fused.padt", fused)
    payload = {
        "command": "fuse",
        "config": {
            "rgb": str(args.rgb),
            "sar": str(args.sar),
            "seed": seed,
            "radius_init": args.radius_init,
            "tau": args.tau,
            "psc_reduction": 1,
        },
        "shape": list(fused.shape),
        "map_path": "fused.padt",
        "param_count": pad_block_param_count(c, 2, 1),
        "amp_drift_mse": float(np.mean((amp1.data - amp0.data) ** 2)),
        "effective_radius": block.asf.radius,
    }
    _dump_json(out / "fuse.json", payload)
    print(f"fused {c}x{fused.shape[-2]}x{fused.shape[-1]} with a {payload['param_count']}-parameter block")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import CASES, GRAD_TOLERANCE, run_suite

    names = args.ops.split(",") if args.ops else list(CASES)
    results = run_suite(names, seeds=args.seeds, h=args.h)
    ok = True
    for r in results:
        flag = "ok" if r.passed else "FAIL"
        ok &= r.passed
        print(f"{r.name:20s} max_err {r.max_error:.3e}  worst seed {r.worst_seed:3d}  {flag}")
    if args.out:
        out = _out_dir(args.out)
        _dump_json(
            out / "gradcheck.json",
            {
                "command": "gradcheck",
                "config": {"ops": names, "seeds": args.seeds, "h": args.h, "tolerance": GRAD_TOLERANCE},
                "results": [
                    {"op": r.name, "max_error": r.max_error, "worst_seed": r.worst_seed, "passed": r.passed}
                    for r in results
                ],
            },
        )
    return EXIT_OK if ok else EXIT_FAIL


def _model_config(args, seed) -> ModelConfig:
    return ModelConfig(
        base_channels=args.c0,
        num_classes=args.classes,
        asf_radius_init=args.radius_init,
        asf_tau=args.tau,
        loss_weights=(args.lambda1, args.lambda2),
        seed=seed,
        fusion=args.fusion,
        zero_asf=args.zero_asf,
        raw_sum_loss=args.raw_sum,
    )


def cmd_train(args) -> int:
    out = _out_dir(args.out)
    seed = resolve_seed(args.seed)
    if args.size % 32:
        raise ValueError(f"--size must be divisible by 32, got {args.size}")
    cfg = _model_config(args, seed)
    data = synth_dataset(args.n, args.size, args.classes, seed=seed)
    held = synth_dataset(args.eval_n, args.size, args.classes, seed=seed + 1) if args.eval_n else None
    resolved = {
        "command": "train",
        "model": cfg.to_dict(),
        "iters": args.iters,
        "lr": args.lr,
        "n": args.n,
        "size": args.size,
        "eval_n": args.eval_n,
        "data_seed": seed,
        "heldout_seed": seed + 1,
    }
    _dump_json(out / "config.json", resolved)
    log_path = out / "train_log.csv"
    with log_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "seg", "aux", "amp", "total"])

        def log_row(row):
            w.writerow([row["iter"]] + [repr(row[k]) for k in ("seg", "aux", "amp", "total")])
            if args.verbose and (row["iter"] % 50 == 0 or row["iter"] == args.iters - 1):
                print(f"iter {row['iter']:4d}  total {row['total']:.5f}", flush=True)

        try:
            result = train(cfg, data, args.iters, args.lr, eval_set=held, callback=log_row)
        except TrainingAborted as exc:
            fh.flush()
            print(f"training aborted at iteration {exc.iteration}", file=sys.stderr)
            return EXIT_NUMERIC
    save_checkpoint(out / "checkpoint.padc", result.model)
    metrics = {
        "command": "train",
        "config": resolved,
        "fusion": cfg.fusion,
        "param_count": result.model.param_count(),
        "train": result.train_metrics,
        "heldout": result.eval_metrics,
        "final_loss": result.log[-1],
    }
    # top-level keys mirror the usual segmentation table columns (held-out split)
    headline = result.eval_metrics or result.train_metrics
    for key in ("OA", "mKappa", "mF1", "mIoU", "per_class_iou"):
        metrics[key] = headline[key]
    _dump_json(out / "metrics.json", metrics)
    tm = result.train_metrics
    print(
        f"[{cfg.fusion}] train acc {tm['pixel_accuracy']:.4f} mIoU {tm['mIoU']:.4f}"
        + (f" | held-out mIoU {result.eval_metrics['mIoU']:.4f}" if result.eval_metrics else "")
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    cfg_path = Path(args.config) if args.config else ckpt.with_name("config.json")
    if not ckpt.exists():
        raise FileNotFoundError(ckpt)
    resolved = json.loads(cfg_path.read_text(encoding="utf-8"))
    model_cfg = dict(resolved["model"])
    model_cfg["loss_weights"] = tuple(model_cfg["loss_weights"])
    cfg = ModelConfig(**model_cfg)
    model = load_checkpoint(ckpt, cfg)
    if args.split == "train":
        data = synth_dataset(resolved["n"], resolved["size"], cfg.num_classes, seed=resolved["data_seed"])
    else:
        data = synth_dataset(args.n or resolved["eval_n"] or 8, resolved["size"], cfg.num_classes, seed=resolved["heldout_seed"])
    m = evaluate(model, data)
    payload = {
        "command": "eval",
        "config": {"checkpoint": str(ckpt), "config_file": str(cfg_path), "split": args.split},
        **m,
    }
    if args.out:
        _dump_json(_out_dir(args.out) / "eval.json", payload)
    print(json.dumps({k: m[k] for k in ("OA", "mKappa", "mF1", "mIoU", "pixel_accuracy")}, sort_keys=True))
    return EXIT_OK


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cmd_bench(args) -> int:
    seed = resolve_seed(args.seed)
    rng = np.random.default_rng(seed)
    rows = []
    c = args.channels
    for size in args.sizes:
        x = Tensor(rng.normal(size=(1, size, size)))
        rows.append(("rfft2", size, _median_time(lambda: rfft2(x), args.repeats), 0))
        block = init_pad_block(rng, c)
        a = Tensor(rng.normal(size=(c, size, size)))
        b = Tensor(rng.normal(size=(c, size, size)))
        with no_grad():
            t = _median_time(lambda: pad_block_forward(a, b, block), args.repeats)
        rows.append(("pad_block_forward", size, t, pad_block_param_count(c)))
        if size % 32 == 0:
            model = PadNet(ModelConfig(base_channels=args.c0, seed=seed))
            rgb = Tensor(rng.random((1, 3, size, size)))
            sar = Tensor(rng.random((1, 1, size, size)))
            with no_grad():
                t = _median_time(lambda: model(rgb, sar), args.repeats)
            rows.append(("full_forward", size, t, model.param_count()))
    header = ["op", "size", "median_seconds", "param_count"]
    if args.out:
        out = _out_dir(args.out)
        _write_csv(out / "bench.csv", header, rows)
        fusion_params = sum(pad_block_param_count(args.c0 * 2**i) for i in range(4))
        _dump_json(
            out / "bench.json",
            {
                "command": "bench",
                "config": {"sizes": args.sizes, "repeats": args.repeats, "channels": c, "c0": args.c0, "seed": seed},
                "fusion_param_count": fusion_params,
                "encoder_param_count": encoder_param_count(3, args.c0) + encoder_param_count(1, args.c0),
                "rows": [dict(zip(header, r)) for r in rows],
            },
        )
    for r in rows:
        print(f"{r[0]:18s} {r[1]:5d}  {r[2] * 1e3:9.3f} ms  params {r[3]}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="padfusion", description="Phase/amplitude spectral analysis and PAD fusion toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def spectral_flags(sp):
        sp.add_argument("--manifest", required=True, type=Path)
        sp.add_argument("--out", required=True, type=Path)
        sp.add_argument("--eps", type=_positive_float("--eps"), default=D.DEFAULT_EPS)
        sp.add_argument("--lf-radius", type=_fraction, default=D.DEFAULT_LF_FRACTION)
        sp.add_argument("--threads", type=_positive_int, default=1)

    sp = sub.add_parser("analyze", help="difference spectra over a manifest of pairs")
    spectral_flags(sp)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("sweep", help="RSD/RAD/APPD trajectories across sampling rates")
    spectral_flags(sp)
    sp.add_argument("--rates", type=_float_list, default=[1.0, 0.5, 0.25])
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("masked", help="metrics with and without masked-out regions")
    sp.add_argument("--manifest", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--eps", type=_positive_float("--eps"), default=D.DEFAULT_EPS)
    sp.set_defaults(func=cmd_masked)

    sp = sub.add_parser("enl", help="equivalent-number-of-looks map of a SAR image")
    sp.add_argument("--image", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--window", type=int, default=9)
    sp.add_argument("--compare", type=Path, default=None, help="map to correlate the ENL map against")
    sp.set_defaults(func=cmd_enl)

    sp = sub.add_parser("fuse", help="run one randomly initialized PAD block on an image pair")
    sp.add_argument("--rgb", required=True, type=Path)
    sp.add_argument("--sar", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--radius-init", type=float, default=0.1)
    sp.add_argument("--tau", type=_positive_float("--tau"), default=10.0)
    sp.set_defaults(func=cmd_fuse)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    sp.add_argument("--ops", default="", help="comma-separated case names (default: all)")
    sp.add_argument("--seeds", type=_positive_int, default=50)
    sp.add_argument("--h", type=float, default=1e-6)
    sp.add_argument("--out", type=Path, default=None)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("train", help="train the toy network on synthetic scenes")
    sp.add_argument("--out", type=Path, default=Path("run"))
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--iters", type=_positive_int, default=500)
    sp.add_argument("--lr", type=_non_negative_float, default=1e-3)
    sp.add_argument("--classes", type=_positive_int, default=3)
    sp.add_argument("--size", type=_positive_int, default=32)
    sp.add_argument("--n", type=_positive_int, default=16)
    sp.add_argument("--eval-n", type=int, default=8, help="held-out scenes (0 disables)")
    sp.add_argument("--c0", type=_positive_int, default=8)
    sp.add_argument("--lambda1", type=_non_negative_float, default=0.4)
    sp.add_argument("--lambda2", type=_non_negative_float, default=0.1)
    sp.add_argument("--radius-init", type=float, default=0.1)
    sp.add_argument("--tau", type=_positive_float("--tau"), default=10.0)
    sp.add_argument("--fusion", choices=["pad", "add"], default="pad")
    sp.add_argument("--zero-asf", action="store_true", help="zero-initialize ASF weights")
    sp.add_argument("--raw-sum", action="store_true", help="un-normalized loss sums")
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on the training or held-out scenes")
    sp.add_argument("--checkpoint", required=True, type=Path)
    sp.add_argument("--config", type=Path, default=None, help="config.json (default: beside the checkpoint)")
    sp.add_argument("--split", choices=["train", "heldout"], default="train")
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--out", type=Path, default=None)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench", help="per-op wall times")
    sp.add_argument("--sizes", type=_int_list, default=[32, 64])
    sp.add_argument("--repeats", type=_positive_int, default=3)
    sp.add_argument("--channels", type=_positive_int, default=8)
    sp.add_argument("--c0", type=_positive_int, default=8)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", type=Path, default=None)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except BadFlag as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FLAG
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except FormatError as exc:
        print(f"error: unreadable file: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ShapeError as exc:
        print(f"error: shape mismatch: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except (TrainingAborted, NonFiniteError) as exc:
        print(f"error: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FLAG


if __name__ == "__main__":
    sys.exit(main())
