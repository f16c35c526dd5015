"""Command line entry point.

Exit status: 0 success, 1 usage error, 2 data or format error, 3 a command's own
verification failed.
"""
import sys
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from tbn import cli_parser, job
from tbn.conv_engine import ConvSpec, OpCounter, correlate, correlate_two_bit, max_relative_error
from tbn.inference import run_model
from tbn.packed_format import (
    MEMSIZE_PRESETS,
    LayerMeta,
    TbnLayer,
    TbnModel,
    load_model_file,
    model_size_bytes,
    save_model_file,
)
from tbn.quantizer import TwoBitFilter, quantize_filters
from tbn.sweep import Sweep
from tbn.tbn_config import tbn_conf_keys as KEY
from tbn.tbn_config.tbn_config import Config
from tbn.tbn_data import tbn_logging
from tbn.tbn_data.tbn_pd_logger import PandasLogger
from tbn.tbn_error import (
    ExperimentSurrender,
    LengthMismatch,
    ShapeMismatch,
    TbnError,
    UsageError,
    VerificationFailure,
)
from tbn.tbn_train.demo import TrainDemoExperiment, demo_params
from tbn.tensor import as_array, read_tbnf_file
from tbn.util import atomic_write

ORACLE_TOLERANCE = 1e-4


### quantize ###


def read_layer_meta(path: str) -> List[Tuple[LayerMeta, bool]]:
    """one layer per line: in_c out_c fh fw stride pad [has_bias]; '#' starts a comment"""
    layers = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                fields = [int(v) for v in line.split()]
            except ValueError:
                raise ShapeMismatch("{}:{}: non-integer field".format(path, lineno)) from None
            if len(fields) not in (6, 7) or (len(fields) == 7 and fields[6] not in (0, 1)):
                raise ShapeMismatch(
                    "{}:{}: expected in_c out_c fh fw stride pad [has_bias]".format(path, lineno)
                )
            in_c, out_c, fh, fw, stride, pad = fields[:6]
            if min(in_c, out_c, fh, fw, stride) < 1 or pad < 0:
                raise ShapeMismatch("{}:{}: invalid layer {}".format(path, lineno, fields))
            has_bias = len(fields) == 7 and fields[6] == 1
            layers.append((LayerMeta(in_c, out_c, fh, fw, stride, pad), has_bias))
    return layers


def format_report_line(layer: int, k: int, report) -> str:
    return "layer={} filter={} alpha={:.9g} J={:.9g} b1={} b2={} clamped={}".format(
        layer,
        k,
        report.alpha_star,
        report.error_J,
        report.b1_count,
        report.b2_count,
        int(report.clamped),
    )


def cmd_quantize(args: Dict) -> int:
    metas = read_layer_meta(args["layer_meta"])
    records = read_tbnf_file(args["input"])
    needed = sum(1 + int(has_bias) for _, has_bias in metas)
    if len(records) != needed:
        raise LengthMismatch(
            "{} holds {} TBNF records, the layer meta needs {}".format(
                args["input"], len(records), needed
            )
        )

    layers, report_lines, clamped = [], [], 0
    it = iter(records)
    for l, (meta, has_bias) in enumerate(metas):
        w = as_array(next(it))
        k = meta.out_channels
        if w.size != k * meta.filter_size:
            raise LengthMismatch(
                "layer {} needs {} weights, got {}".format(l, k * meta.filter_size, w.size)
            )
        codes, alphas, reports = quantize_filters(w.reshape((k,) + meta.filter_shape))
        filters = [
            TwoBitFilter(meta.filter_shape, c.reshape(-1), a) for c, a in zip(codes, alphas)
        ]
        bias = None
        if has_bias:
            bias = as_array(next(it)).reshape(-1)
            if bias.size != k:
                raise LengthMismatch("layer {} needs {} biases, got {}".format(l, k, bias.size))
        layers.append(TbnLayer.from_filters(meta, filters, bias))
        report_lines += [format_report_line(l, i, r) for i, r in enumerate(reports)]
        clamped += sum(r.clamped for r in reports)

    size = save_model_file(TbnModel(tuple(layers)), args["output"])
    if args["report"] is not None:
        with atomic_write(args["report"]) as f:
            f.write("".join(line + "\n" for line in report_lines).encode())
    print("layers={} filters={} bytes={}".format(len(layers), len(report_lines), size))

    if clamped:
        raise VerificationFailure(
            "{} all-zero filter(s) got the degenerate alpha clamp".format(clamped)
        )
    return 0


### infer ###


def _input_batches(path: str) -> List[np.ndarray]:
    batches = []
    for t in read_tbnf_file(path):
        x = as_array(t)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4:
            raise ShapeMismatch(
                "inputs must be (c, h, w) or (b, c, h, w), got {}".format(x.shape)
            )
        batches.append(x)
    return batches


def cmd_infer(args: Dict) -> int:
    model = load_model_file(args["model"])
    deviation = 0.0
    item = 0
    for x in _input_batches(args["input"]):
        out = run_model(model, x)
        for scores in out.reshape(out.shape[0], -1):
            print(
                "item={} argmax={} scores={}".format(
                    item, int(np.argmax(scores)), ",".join("{:.9g}".format(v) for v in scores)
                )
            )
            item += 1
        if args["oracle"]:
            reference = run_model(model, x, reference=True)
            deviation = max(deviation, max_relative_error(out, reference))

    if args["oracle"]:
        print("max_rel_dev={:.3e}".format(deviation))
        if deviation > ORACLE_TOLERANCE:
            raise VerificationFailure(
                "two-bit output deviates {:.3e} from the reference".format(deviation)
            )
    return 0


### train-demo ###

DEMO_EPOCHS = 20

_DEMO_FLAGS = (
    "seed",
    "clip",
    "keep_first_last_float",
    "float_baseline",
    "n_samples",
    "classes",
    "sigma",
    "batch_size",
    "learning_rate",
    "mnist_dir",
    "mnist_limit",
)


def demo_config(args: Dict) -> dict:
    """run configuration from --config/--experiment or the defaults, with the flags given on
    the command line on top
    """
    if args["config"] is not None:
        selection = [args["experiment"]] if args["experiment"] else None
        runs = Config(args["config"], selection).exp_configs
        config = dict(runs[0])
        config[KEY.PARAMS] = dict(config.get(KEY.PARAMS) or {})
    else:
        config = {KEY.NAME: "train_demo", KEY.EPOCHS: DEMO_EPOCHS, KEY.PARAMS: {}}
    config[KEY.PARAMS].update({k: args[k] for k in _DEMO_FLAGS if args.get(k) is not None})
    if args["mnist_dir"] is not None:
        config[KEY.PARAMS]["dataset"] = "mnist"
    if args["epochs"] is not None:
        config[KEY.EPOCHS] = args["epochs"]
    if config[KEY.EPOCHS] < 0:
        raise UsageError("--epochs must be >= 0, got {}".format(config[KEY.EPOCHS]))
    config[KEY.PARAMS]["model_path"] = args["out"]
    config[KEY.i_REP_IDX] = 0
    config[KEY.i_REP_LOG_PATH] = None
    return config


def cmd_train_demo(args: Dict) -> int:
    config = demo_config(args)
    demo_params(config)
    records = tbn_logging.RecordLogger(path=args["log"])
    logger = tbn_logging.LoggerArray([records])
    exp = TrainDemoExperiment()

    surrender = None
    succeeded = False
    logger.initialize(config, 0, None)
    try:
        exp.initialize(config, 0, logger)
        try:
            exp.run(config, 0, logger)
        except ExperimentSurrender as s:
            surrender = s
        exp.finalize(surrender, False)
        succeeded = surrender is None
    finally:
        if not succeeded:
            records.discard()
        logger.finalize()

    if surrender is not None:
        raise VerificationFailure("training diverged: {}".format(surrender.payload))
    print("final_train_acc={:.4f} model_bytes={}".format(exp.final_accuracy(), exp.model_size))
    return 0


### memsize ###


def cmd_memsize(args: Dict) -> int:
    params = MEMSIZE_PRESETS[args["preset"]] if args["preset"] else args["params"]
    if params < 0:
        raise UsageError("--params must be >= 0, got {}".format(params))
    if args["bits"] < 1:
        raise UsageError("--bits must be >= 1, got {}".format(args["bits"]))
    if args["alpha_overhead"] < 0:
        raise UsageError("--alpha-overhead must be >= 0, got {}".format(args["alpha_overhead"]))
    size = model_size_bytes(params, args["bits"], args["alpha_overhead"])
    print("params={}".format(size.param_count))
    print("two_bit_bytes={}".format(size.two_bit_bytes))
    print("double_bytes={}".format(size.double_bytes))
    print("ratio={:.6f}".format(size.ratio))
    return 0


### bench ###


def _time_per_output(fn, iters: int, outputs: int) -> float:
    start = time.perf_counter()
    for _ in range(iters):
        fn()
    return (time.perf_counter() - start) * 1e9 / (iters * outputs)


def cmd_bench(args: Dict) -> int:
    c, h, w = cli_parser.int_list(args["shape"], 3, "--shape")
    fh, fw = cli_parser.int_list(args["filter"], 2, "--filter")
    k, iters = args["filters"], args["iters"]
    if k < 1 or iters < 1:
        raise UsageError("--filters and --iters must be >= 1")
    try:
        spec = ConvSpec(args["stride"], args["padding"])
        oh, ow = spec.output_shape(h, w, fh, fw)
    except ShapeMismatch as e:
        raise UsageError(str(e)) from None

    rng = np.random.default_rng(args["seed"])
    x = rng.standard_normal((1, c, h, w))
    codes, alphas, _ = quantize_filters(rng.uniform(-3, 3, (k, c, fh, fw)))
    approx = alphas.astype(np.float64).reshape(-1, 1, 1, 1) * codes
    outputs = k * oh * ow

    counter = OpCounter()
    mfree = correlate_two_bit(x, codes, alphas, spec, counter)
    deviation = max_relative_error(mfree, correlate(x, approx, spec))
    mfree_ns = _time_per_output(lambda: correlate_two_bit(x, codes, alphas, spec), iters, outputs)
    reference_ns = _time_per_output(lambda: correlate(x, approx, spec), iters, outputs)

    print("output_elements={}".format(outputs))
    print("mfree_ns_per_output={:.1f}".format(mfree_ns))
    print("reference_ns_per_output={:.1f}".format(reference_ns))
    print("mfree_additions={}".format(counter.additions))
    print("mfree_multiplies={}".format(counter.multiplications))
    print("max_rel_dev={:.3e}".format(deviation))

    if counter.multiplications != outputs:
        raise VerificationFailure(
            "{} multiplies for {} outputs".format(counter.multiplications, outputs)
        )
    if deviation > ORACLE_TOLERANCE:
        raise VerificationFailure("deviation {:.3e} exceeds {}".format(deviation, ORACLE_TOLERANCE))
    return 0


### sweep ###


def cmd_sweep(args: Dict) -> int:
    config = Config(args["config"], args["experiments"], args["debug"])
    for c in config.exp_configs:
        demo_params(c)

    sweep = Sweep(TrainDemoExperiment, config)
    sweep.add_logger(tbn_logging.PythonLogger())
    sweep.add_logger(tbn_logging.RecordLogger())
    sweep.add_logger(PandasLogger())
    outcomes = sweep.run(overwrite=args["overwrite"])

    kinds = (job.OK, job.SURRENDER, job.CRASH, job.SKIPPED)
    counts = {o: outcomes.count(o) for o in kinds}
    print(
        "runs={} ".format(len(outcomes)) + " ".join("{}={}".format(o, counts[o]) for o in kinds)
    )
    failed = counts[job.CRASH] + counts[job.SURRENDER]
    if failed:
        raise VerificationFailure("{} run(s) did not finish".format(failed))
    return 0


COMMANDS = {
    "quantize": cmd_quantize,
    "infer": cmd_infer,
    "train-demo": cmd_train_demo,
    "memsize": cmd_memsize,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    log = tbn_logging.getLogger()
    try:
        args = cli_parser.Arguments(argv).get()
        return COMMANDS[args["command"]](args)
    except TbnError as e:
        log.error("{}: {}".format(e.__class__.__name__, e))
        return e.exit_code
    except OSError as e:
        log.error(str(e))
        return 2


if __name__ == "__main__":
    sys.exit(main())
