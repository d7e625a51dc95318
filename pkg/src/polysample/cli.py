"""``polysample`` command-line entry point.

Exit codes: 0 success, 1 a checked property failed, 2 usage or IO error.
Every command accepts ``--config FILE`` holding flat ``key = value`` lines
whose keys are long flag names; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from .gradcheck import run_gradchecks
from .metrics import c_cons, s_cons
from .nets import ClassifierSpec, SimpleClassifier, SimpleUNet, UNetSpec, load_classifier, save_classifier
from .polyphase import OddExtentError
from .synthetic import SyntheticSpec, gen_synthetic, read_manifest, write_split
from .tensorfile import TensorFileError
from .training import EpochLog, OptimizerConfig, TauSchedule, train
from .verify import run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def read_config(path: str) -> Dict[str, str]:
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _apply_config(parser: argparse.ArgumentParser, config: Dict[str, str]) -> None:
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, value in config.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise UsageError(f"unknown config key {key!r}")
        try:
            defaults[key] = action.type(value) if action.type else value
        except ValueError as exc:
            raise UsageError(f"config key {key!r}: {exc}") from None
        if action.choices is not None and defaults[key] not in action.choices:
            raise UsageError(f"config key {key!r} must be one of {list(action.choices)}")
    parser.set_defaults(**defaults)


def _write_json(path: Optional[str], payload: dict) -> None:
    if path:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")


def _even(value: str) -> int:
    n = int(value)
    if n <= 0 or n % 2:
        raise argparse.ArgumentTypeError(f"extent must be a positive even integer, got {n}")
    return n


def _positive(value: str) -> int:
    n = int(value)
    if n <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {n}")
    return n


# -- commands ---------------------------------------------------------------

def cmd_verify(args) -> int:
    report = run_suite(args.extent, args.trials, args.seed, feature_channels=args.features)
    for r in report.results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<28} max residual {r.max_residual:.3e}")
    _write_json(args.out, report.to_dict())
    if not report.passed:
        print("failing properties: " + ", ".join(report.failing), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_gradchecks(args.trials, args.seed)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<32} max rel error {r.max_rel_error:.3e}")
    _write_json(args.out, {"trials": args.trials, "seed": args.seed,
                           "results": [vars(r) for r in results],
                           "passed": all(r.passed for r in results)})
    failing = [r.name for r in results if not r.passed]
    if failing:
        print("failing ops: " + ", ".join(failing), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(num_classes=args.classes, image_extent=args.extent,
                         channels=args.channels, train_size=args.train_size,
                         test_size=args.test_size, noise_sigma=args.noise,
                         family=args.family, seed=args.seed)
    data = gen_synthetic(spec)
    train_path = write_split(args.out, "train", data.train_images, data.train_labels, data.train_masks)
    test_path = write_split(args.out, "test", data.test_images, data.test_labels, data.test_masks)
    print(f"wrote {len(data.train_images)} training samples to {train_path}")
    print(f"wrote {len(data.test_images)} test samples to {test_path}")
    return EXIT_OK


def _manifest(path: str, split: str) -> str:
    if os.path.isdir(path):
        for candidate in (os.path.join(path, split, "manifest.csv"),
                          os.path.join(path, "manifest.csv")):
            if os.path.isfile(candidate):
                return candidate
        raise UsageError(f"no {split}/manifest.csv or manifest.csv under {path}")
    if not os.path.isfile(path):
        raise UsageError(f"manifest not found: {path}")
    return path


def _labelled(path: str):
    images, labels = read_manifest(path)
    if labels.ndim != 1:
        raise UsageError(f"{path} is a segmentation manifest; a label manifest is required")
    return images, labels


def cmd_train(args) -> int:
    images, labels = _labelled(_manifest(args.data, "train"))
    eval_set = None
    if os.path.isdir(args.data) and os.path.isfile(os.path.join(args.data, "test", "manifest.csv")):
        eval_set = _labelled(os.path.join(args.data, "test", "manifest.csv"))
    rng = np.random.default_rng(args.seed)
    if args.init:
        model = load_classifier(args.init)
        if model.spec.in_channels != images.shape[1]:
            raise UsageError(f"checkpoint expects {model.spec.in_channels} channels, "
                             f"data has {images.shape[1]}")
    else:
        spec = ClassifierSpec(in_channels=images.shape[1], feature_channels=args.features,
                              num_classes=int(labels.max()) + 1, pool=args.pool)
        model = SimpleClassifier(spec, rng=rng)
    cfg = OptimizerConfig(lr=args.lr, momentum=args.momentum, weight_decay=args.weight_decay)
    schedule = TauSchedule() if args.tau_schedule == "step" else TauSchedule.imagenet_multistep()
    history: List[EpochLog] = train(model, images, labels, args.epochs, cfg, schedule, rng,
                                    batch_size=args.batch_size, sampling=args.sampling,
                                    eval_set=eval_set)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "checkpoint.lpst")
    save_classifier(ckpt, model)
    log_path = os.path.join(args.out, "train_log.csv")
    with open(log_path, "w") as fh:
        fh.write(EpochLog.CSV_HEADER + "\n")
        fh.writelines(e.csv_row() + "\n" for e in history)
    if history:
        print(f"final loss {history[-1].loss:.4f}  accuracy {history[-1].acc:.4f}")
    print(f"checkpoint: {ckpt}\nlog: {log_path}")
    return EXIT_OK


def cmd_eval_consistency(args) -> int:
    model = load_classifier(args.checkpoint)
    images, _ = _labelled(_manifest(args.data, "test"))
    if images.shape[1] != model.spec.in_channels:
        raise UsageError(f"checkpoint expects {model.spec.in_channels} channels, "
                         f"data has {images.shape[1]}")
    rng = np.random.default_rng(args.seed)
    if args.metric == "c_cons":
        report = c_cons(model.forward, images, pairs_per_image=args.pairs, rng=rng)
    else:
        report = s_cons(model.forward, images, args.max_shift, pairs_per_image=args.pairs, rng=rng)
    print(report.table())
    _write_json(args.out, json.loads(report.to_json()))
    if args.min_agreement is not None and report.agreement < args.min_agreement:
        print(f"agreement {report.agreement:.6f} below required {args.min_agreement}",
              file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _roll(a, s1, s2):
    return np.roll(a, (-s1, -s2), axis=(-2, -1))


def cmd_demo(args) -> int:
    rng = np.random.default_rng(args.seed)
    img = rng.uniform(size=(1, 3, args.extent, args.extent))
    clf = SimpleClassifier(ClassifierSpec(feature_channels=args.features), rng=rng)
    y_orig = clf.forward(img).data
    y_roll = clf.forward(_roll(img, 1, 1)).data
    print("y_orig : " + np.array2string(y_orig[0], precision=4))
    print("y_roll : " + np.array2string(y_roll[0], precision=4))
    inv = float(np.linalg.norm(y_orig - y_roll))
    print("Norm(y_orig-y_roll): %e" % inv)

    unet = SimpleUNet(UNetSpec(feature_channels=args.features), rng=rng)
    u_orig = unet.forward(img).data
    u_roll_s = _roll(unet.forward(_roll(img, 1, 1)).data, -1, -1)
    eqv = float(np.linalg.norm(u_orig - u_roll_s))
    print("Norm(y_orig-y_roll_s): %e" % eqv)
    return EXIT_OK if max(inv, eqv) <= 1e-9 else EXIT_FAIL


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polysample",
                                     description="Polyphase sampling layers: checks, training, metrics.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key=value file; flags override it")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        return p

    p = add("verify", cmd_verify, "run the shift-equivariance suite")
    p.add_argument("--extent", type=_even, default=16)
    p.add_argument("--trials", type=_positive, default=3)
    p.add_argument("--features", type=_positive, default=4, help="network width")
    p.add_argument("--out", help="JSON report path")

    p = add("gradcheck", cmd_gradcheck, "central-difference checks of every op")
    p.add_argument("--trials", type=_positive, default=5)
    p.add_argument("--out", help="JSON report path")

    p = add("gen-data", cmd_gen_data, "write a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--extent", type=_even, default=16)
    p.add_argument("--channels", type=_positive, default=3)
    p.add_argument("--train-size", type=_positive, default=600)
    p.add_argument("--test-size", type=_positive, default=200)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--family", choices=("gratings", "blobs"), default="gratings")

    p = add("train", cmd_train, "train a classifier")
    p.add_argument("--data", required=True, help="dataset directory or manifest.csv")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--init", help="start from this checkpoint")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--batch-size", type=_positive, default=16)
    p.add_argument("--features", type=_positive, default=32)
    p.add_argument("--pool", choices=("lpd", "aps", "plain"), default="lpd")
    p.add_argument("--sampling", choices=("gumbel", "softmax"), default="gumbel")
    p.add_argument("--tau-schedule", choices=("step", "multistep"), default="step")

    p = add("eval-consistency", cmd_eval_consistency, "measure shift consistency")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory or manifest.csv")
    p.add_argument("--metric", choices=("c_cons", "s_cons"), default="c_cons")
    p.add_argument("--pairs", type=_positive, default=5)
    p.add_argument("--max-shift", type=int, default=2, help="s_cons only")
    p.add_argument("--min-agreement", type=float, help="exit 1 below this agreement")
    p.add_argument("--out", help="JSON report path")

    p = add("demo-equivariance", cmd_demo, "print invariance/equivariance residuals")
    p.add_argument("--extent", type=_even, default=32)
    p.add_argument("--features", type=_positive, default=32)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.config:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            _apply_config(sub, read_config(args.config))
            args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, OddExtentError, TensorFileError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
