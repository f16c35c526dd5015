import argparse
import sys
from typing import Optional, Sequence, Tuple

from tbn.packed_format import MEMSIZE_PRESETS
from tbn.tbn_error import UsageError


class _Parser(argparse.ArgumentParser):
    """usage errors raise UsageError (exit status 1) instead of exiting with 2"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def int_list(text: str, n: int, name: str) -> Tuple[int, ...]:
    """parses n comma-separated integers >= 1, e.g. '3,32,32'"""
    parts = text.split(",")
    try:
        values = tuple(int(p) for p in parts)
    except ValueError:
        raise UsageError(
            "{} must be {} comma-separated integers, got '{}'".format(name, n, text)
        ) from None
    if len(values) != n or min(values) < 1:
        raise UsageError("{} must be {} integers >= 1, got '{}'".format(name, n, text))
    return values


def _add_quantize(sub) -> None:
    p = sub.add_parser("quantize", help="quantize real filters into a TBN1 model")
    p.add_argument("--input", required=True, metavar="TBNF", help="layer weights as TBNF records")
    p.add_argument(
        "--layer-meta",
        dest="layer_meta",
        required=True,
        metavar="META",
        help="one line per layer: in_c out_c fh fw stride pad [has_bias]",
    )
    p.add_argument("--output", required=True, metavar="TBN1")
    p.add_argument("--report", default=None, metavar="PATH", help="write per-filter records")


def _add_infer(sub) -> None:
    p = sub.add_parser("infer", help="run a TBN1 model on TBNF inputs")
    p.add_argument("--model", required=True, metavar="TBN1")
    p.add_argument("--input", required=True, metavar="TBNF")
    p.add_argument(
        "--oracle",
        action="store_true",
        help="also run multiply-accumulate convolutions and check the deviation",
    )


def _add_train_demo(sub) -> None:
    p = sub.add_parser("train-demo", help="train the toy network and export it")
    p.add_argument("--epochs", type=int, default=None, help="Defaults to 20.")
    p.add_argument("--seed", type=int, default=None, help="Defaults to 0.")
    p.add_argument("--out", required=True, metavar="TBN1")
    p.add_argument("--log", default=None, metavar="PATH", help="also write the training log here")
    p.add_argument("--mnist-dir", dest="mnist_dir", default=None, metavar="DIR")
    p.add_argument("--mnist-limit", dest="mnist_limit", type=int, default=None)
    p.add_argument(
        "--no-clip",
        dest="clip",
        action="store_false",
        default=None,
        help="do not clip shadow weights",
    )
    p.add_argument(
        "--keep-first-last-float", dest="keep_first_last_float", action="store_true", default=None
    )
    p.add_argument(
        "--float-baseline",
        dest="float_baseline",
        action="store_true",
        default=None,
        help="train real-valued filters through the reference convolution",
    )
    p.add_argument("--n-samples", dest="n_samples", type=int, default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", dest="learning_rate", type=float, default=None)
    p.add_argument(
        "--config",
        default=None,
        metavar="CONFIG.yml",
        help="take params from a config; flags given as well override them",
    )
    p.add_argument("--experiment", default=None, help="experiment of --config to use")


def _add_memsize(sub) -> None:
    p = sub.add_parser("memsize", help="two-bit against double-precision model size")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--params", type=int, default=None)
    g.add_argument("--preset", choices=sorted(MEMSIZE_PRESETS), default=None)
    p.add_argument("--alpha-overhead", dest="alpha_overhead", type=int, default=0)
    p.add_argument("--bits", type=int, default=2, help="bits per weight. Defaults to 2.")


def _add_bench(sub) -> None:
    p = sub.add_parser("bench", help="time multiplication-free against reference convolution")
    p.add_argument("--shape", required=True, help="input c,h,w")
    p.add_argument("--filter", required=True, help="filter fh,fw")
    p.add_argument("--filters", type=int, required=True, help="number of filters K")
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--padding", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)


def _add_sweep(sub) -> None:
    p = sub.add_parser("sweep", help="run all training runs of a YAML config")
    p.add_argument("config", metavar="CONFIG.yml")
    p.add_argument(
        "-e",
        "--experiments",
        nargs="+",
        default=None,
        help="Allows to specify which experiments should be run.",
    )
    p.add_argument("-o", "--overwrite", action="store_true", help="Overwrite existing results.")
    p.add_argument("--debug", action="store_true", default=False, help="Enable debug mode.")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tbn", description="two-bit networks")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for add in (_add_quantize, _add_infer, _add_train_demo, _add_memsize, _add_bench, _add_sweep):
        add(sub)
    return p


class Arguments:
    def __init__(self, argv: Optional[Sequence[str]] = None):
        self.args = build_parser().parse_args(argv)

    def get(self) -> dict:
        return vars(self.args)
