"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 aborted on a
non-finite training loss.
"""

import argparse
import logging
import sys

from . import checks, data_io, harness, networks
from .config import RunConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_NAN = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="fcgan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_train = sub.add_parser("train", help="run the training loop")
    p_train.add_argument("--config", required=True, help="key = value config file")
    p_train.add_argument("--resume", default=None, help="checkpoint to resume from")

    p_sample = sub.add_parser("sample", help="write sample grids from a checkpoint")
    p_sample.add_argument("--ckpt", required=True)
    p_sample.add_argument("--n", type=int, default=64)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--out", required=True, help="output PNG path")

    p_eval = sub.add_parser("eval", help="FID and precision/recall for a checkpoint")
    p_eval.add_argument("--ckpt", default=None)
    p_eval.add_argument("--data", default=None, help="dataset dir or synthetic spec")
    p_eval.add_argument("--embedder", default="randconv", help="pixel | randconv[:seed]")
    p_eval.add_argument("--n", type=int, default=10000)
    p_eval.add_argument("--k", type=int, default=3)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--step", type=int, default=0)
    p_eval.add_argument("--real-features", default=None,
                        help="precomputed real-side .npz feature set")
    p_eval.add_argument("--fake-features", default=None,
                        help="precomputed fake-side .npz feature set")
    p_eval.add_argument("--out", default=None, help="append the report to this JSONL file")

    p_grad = sub.add_parser("gradcheck", help="finite-difference and SVD verification")
    p_grad.add_argument("--module", default=None,
                        choices=sorted(checks.MODULES), help="restrict to one module")
    p_grad.add_argument("--seeds", type=int, default=checks.DEFAULT_SEEDS)

    p_params = sub.add_parser("params", help="per-block parameter counts")
    p_params.add_argument("--config", required=True)
    return parser


def _cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    result = harness.train(cfg, resume=args.resume)
    print(f"finished {cfg.total_g_iters} generator iterations; "
          f"final checkpoint: {result.checkpoint_path}")
    return EXIT_OK


def _cmd_sample(args) -> int:
    paths = harness.sample(args.ckpt, args.n, args.seed, args.out)
    for path in paths:
        print(path)
    return EXIT_OK


def _cmd_eval(args) -> int:
    from . import metrics

    if args.real_features or args.fake_features:
        if not (args.real_features and args.fake_features):
            raise ValueError("--real-features and --fake-features must be given together")
        real = metrics.FeatureSet.load(args.real_features)
        fake = metrics.FeatureSet.load(args.fake_features)
        report = metrics.compare_feature_sets(real, fake, k=args.k, step=args.step)
    else:
        if not (args.ckpt and args.data):
            raise ValueError("eval needs --ckpt and --data (or precomputed feature files)")
        report = harness.evaluate(args.ckpt, args.data, args.embedder, args.n,
                                  k=args.k, seed=args.seed, step=args.step)
    line = report.to_json_line()
    print(line)
    if args.out:
        with open(args.out, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    results = checks.run_checks(args.module, seeds=args.seeds)
    for result in results:
        print(result.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def _cmd_params(args) -> int:
    cfg = RunConfig.load(args.config)
    spec = cfg.network_spec()
    gen, disc = networks.build_networks(spec)
    for label, net in (("generator", gen), ("discriminator", disc)):
        print(f"[{label}] block_kind={spec.block_kind}")
        for name, count in networks.count_parameters(net).items():
            print(f"  {name:<24} {count:>12,}")
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "sample": _cmd_sample,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "params": _cmd_params,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except harness.NaNAbortError as err:
        print(f"aborted: {err}", file=sys.stderr)
        return EXIT_NAN
    except (ValueError, FileNotFoundError, data_io.CheckpointVersionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"unexpected error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
