"""Command-line interface: ``uqc train|compress|decompress|eval|sweep|diag``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import diagnostics
from .codec import decompress
from .evaluation import evaluate, evaluate_image, format_record, write_records
from .imageio import image_files, load_corpus, read_image, write_png
from .model import MODES, LinearModel
from .training import RdConfig, train

logger = logging.getLogger("uqcodec")

DIAG_TESTS = ("uq-identity", "expected-grad", "gaussian", "lattice", "density")


class UsageError(Exception):
    pass


def default_seed():
    return int(os.environ.get("UQC_SEED", "0"))


def parse_alpha(text):
    try:
        parts = [float(p) for p in text.split(":")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid alpha {text!r}")
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2 or min(parts) <= 0:
        raise argparse.ArgumentTypeError(f"alpha must be A or A:B with positive values, got {text!r}")
    return tuple(parts)


def parse_lambdas(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed lambda list {text!r}")
    if not values or any(not v > 0 for v in values):
        raise argparse.ArgumentTypeError(f"lambda list must hold positive numbers, got {text!r}")
    return values


def parse_modes(text):
    modes = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if not modes or bad:
        raise argparse.ArgumentTypeError(f"modes must be drawn from {', '.join(MODES)}")
    return modes


def _train_config(args):
    """Defaults < config file < flags."""
    values = {}
    if args.config:
        with open(args.config) as f:
            values.update(json.load(f))
    flags = {"lam": args.lam, "mode": args.mode, "channels": args.channels, "steps": args.steps,
             "batch_size": args.batch_size, "crop": args.crop, "learning_rate": args.lr,
             "seed": args.seed, "checkpoint_every": args.checkpoint_every}
    if args.alpha is not None:
        flags["alpha_start"], flags["alpha_end"] = args.alpha
    if args.recon_alpha is not None:
        flags["recon_alpha"] = args.recon_alpha
    if args.no_expected_grads:
        flags["expected_grads"] = False
    values.update({k: v for k, v in flags.items() if v is not None})
    return RdConfig.from_dict(values)


def _write_config(path, config):
    Path(path).write_text(json.dumps(config, sort_keys=True, indent=2) + "\n")


def cmd_train(args):
    if not Path(args.data).is_dir():
        raise UsageError(f"data directory {args.data} does not exist")
    if args.resume and not Path(args.resume).is_file():
        raise UsageError(f"checkpoint {args.resume} does not exist")
    config = _train_config(args)
    out = Path(args.out)
    model, log = train(args.data, config, out_dir=out, resume=args.resume)
    effective = model.config["rd_config"]
    _write_config(out / "config.json", effective)
    print(f"trained {effective['steps']} steps; final loss {log[-1]['loss']:.6g}" if log else "nothing to do")
    return 0


def _load_model(path):
    if not Path(path).is_file():
        raise UsageError(f"model file {path} does not exist")
    return LinearModel.load(path)


def cmd_compress(args):
    model = _load_model(args.model)
    image = read_image(args.input)
    lam = model.config.get("rd_config", {}).get("lam", math.nan)
    record = evaluate_image(model, Path(args.input).name, image, args.mode, seed=args.seed, lam=lam,
                            alpha=args.alpha, output=args.output)
    csv.writer(sys.stdout).writerow(format_record(record))
    return 0


def cmd_decompress(args):
    model = _load_model(args.model)
    image = decompress(Path(args.input).read_bytes(), model)
    write_png(args.output, image)
    return 0


def _named_images(directory):
    files = image_files(directory)
    if not files:
        raise UsageError(f"no images in {directory}")
    return [(p.name, read_image(p)) for p in files]


def cmd_eval(args):
    if not Path(args.data).is_dir():
        raise UsageError(f"data directory {args.data} does not exist")
    model = _load_model(args.model)
    lam = model.config.get("rd_config", {}).get("lam", math.nan)
    records = evaluate(model, _named_images(args.data), args.modes, seed=args.seed, lam=lam,
                       alpha=args.alpha, jobs=args.jobs)
    write_records(args.out, records)
    _write_config(str(args.out) + ".config.json",
                  {"model": str(args.model), "data": str(args.data), "modes": args.modes, "seed": args.seed,
                   "alpha": args.alpha, "model_config": model.config})
    return 0


def cmd_sweep(args):
    for d in (args.data, args.eval_data):
        if not Path(d).is_dir():
            raise UsageError(f"data directory {d} does not exist")
    images = _named_images(args.eval_data)
    corpus = load_corpus(args.data)
    rows = []
    out = Path(args.out)
    work = out.parent / (out.stem + "_models")
    for lam in args.lambdas:
        trained = {}
        for mode in args.modes:
            train_mode = "un-uq-sr" if mode == "un-uq-sr" else "un-uq"
            if train_mode not in trained:
                config = RdConfig(lam=lam, mode=train_mode, channels=args.channels, steps=args.steps,
                                  crop=args.crop, batch_size=args.batch_size, seed=args.seed,
                                  checkpoint_every=args.steps)
                model, _ = train(corpus, config, out_dir=work / f"{train_mode}_lambda{lam:g}")
                trained[train_mode] = model
            records = evaluate(trained[train_mode], images, [mode], seed=args.seed, lam=lam, jobs=args.jobs)
            rows.extend(records)
    write_records(out, rows)
    _write_config(str(out) + ".config.json",
                  {"lambdas": args.lambdas, "modes": args.modes, "steps": args.steps,
                   "channels": args.channels, "crop": args.crop, "batch_size": args.batch_size,
                   "seed": args.seed})
    return 0


def cmd_diag(args):
    rows = []
    if args.test == "uq-identity":
        for y in np.linspace(-5, 5, args.points):
            stat, p = diagnostics.uq_identity(float(y), args.n, seed=args.seed)
            rows.append({"test": args.test, "y": f"{y:.6g}", "statistic": f"{stat:.6g}", "p_value": f"{p:.6g}"})
    elif args.test == "expected-grad":
        ratio, vp, ve = diagnostics.gradient_variance_ratio(args.alpha, args.n, seed=args.seed)
        rows.append({"test": args.test, "alpha": args.alpha, "var_pathwise": f"{vp:.6g}",
                     "var_expected": f"{ve:.6g}", "variance_ratio": f"{ratio:.6g}"})
    elif args.test == "gaussian":
        m = diagnostics.gaussian_channel_moments(args.n, sigma=args.sigma, seed=args.seed)
        rows.append({"test": args.test, "sigma": args.sigma, **{k: f"{v:.6g}" for k, v in m.items()}})
    elif args.test == "lattice":
        stat, p = diagnostics.hexagonal_equivalence(args.n, seed=args.seed)
        rows.append({"test": args.test, "lattice": "A2", "statistic": f"{stat:.6g}", "p_value": f"{p:.6g}"})
    elif args.test == "density":
        chi2, p = diagnostics.softround_density_chi2(args.alpha, args.n, seed=args.seed)
        rows.append({"test": args.test, "alpha": args.alpha, "chi2": f"{chi2:.6g}", "p_value": f"{p:.6g}"})
    fields = list(rows[0])
    target = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(target, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            target.close()
    if args.out:
        _write_config(str(args.out) + ".config.json",
                      {"test": args.test, "n": args.n, "alpha": args.alpha, "sigma": args.sigma,
                       "points": args.points, "seed": args.seed})
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="uqc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a linear block-transform model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="run")
    p.add_argument("--config", help="JSON file with RdConfig fields")
    p.add_argument("--channels", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--alpha", type=parse_alpha, help="soft-rounding sharpness A or schedule A:B")
    p.add_argument("--recon-alpha", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--crop", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--no-expected-grads", action="store_true")
    p.add_argument("--resume")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", help="compress a PNG/JPEG to a .uqc bitstream")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--mode", choices=MODES, default="un-uq")
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int, default=default_seed())
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="decode a .uqc bitstream to PNG")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("eval", help="evaluate a model on an image folder")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--modes", type=parse_modes, default=list(MODES))
    p.add_argument("--out", default="eval.csv")
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train and evaluate one model per lambda")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", required=True)
    p.add_argument("--lambdas", type=parse_lambdas, required=True)
    p.add_argument("--modes", type=parse_modes, default=list(MODES))
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--crop", type=int, default=RdConfig.crop)
    p.add_argument("--batch-size", type=int, default=RdConfig.batch_size)
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diag", help="channel and gradient diagnostics")
    p.add_argument("--test", required=True, choices=DIAG_TESTS)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--alpha", type=float, default=13.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=default_seed())
    p.set_defaults(func=cmd_diag)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", 0) is None:
        args.seed = default_seed()
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"uqc: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and exit non-zero
        if args.verbose:
            logger.exception("command failed")
        print(f"uqc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
