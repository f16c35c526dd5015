"""The desk-scale training demo as an iterative experiment: one iteration is one epoch."""
import math
import os
from typing import Optional

import numpy as np

from tbn.experiment import AbstractIterativeExperiment
from tbn.packed_format import save_model_file
from tbn.tbn_config import conf_resolver
from tbn.tbn_config import tbn_conf_keys as KEY
from tbn.tbn_data import tbn_logging
from tbn.tbn_error import ConfigKeyError, ExperimentSurrender
from tbn.tbn_train import algorithm
from tbn.tbn_train.dataset import SYNTH_SIGMA, Dataset, load_mnist, make_synth_dataset
from tbn.tbn_train.network import build_toy_net
from tbn.tbn_train.train_config import DESK_BATCH_SIZE, TrainConfig

MODEL_FILE = "model.tbn"

DEMO_DEFAULTS = {
    "dataset": "synth",
    "n_samples": 512,
    "classes": 4,
    "sigma": SYNTH_SIGMA,
    "mnist_dir": None,
    "mnist_limit": None,
    "width": 8,
    "keep_first_last_float": False,
    "float_baseline": False,
    "top_k": 5,
    "model_path": None,
    "batch_size": DESK_BATCH_SIZE,
}


def demo_params(config: dict) -> dict:
    """the run's params over the demo defaults; unknown keys are rejected"""
    params = dict(config.get(KEY.PARAMS) or {})
    conf_resolver.check_param_keys(
        params, set(DEMO_DEFAULTS) | set(TrainConfig.field_names()) - {KEY.EPOCHS}
    )
    merged = dict(DEMO_DEFAULTS)
    merged.update(params)
    if merged["dataset"] not in ("synth", "mnist"):
        raise ConfigKeyError("dataset must be 'synth' or 'mnist', got {}".format(merged["dataset"]))
    if merged["dataset"] == "mnist" and not merged["mnist_dir"]:
        raise ConfigKeyError("dataset 'mnist' needs mnist_dir")
    return merged


def load_dataset(params: dict, seed: int) -> Dataset:
    if params["dataset"] == "mnist":
        return load_mnist(params["mnist_dir"], params["mnist_limit"])
    try:
        return make_synth_dataset(
            seed, int(params["n_samples"]), int(params["classes"]), float(params["sigma"])
        )
    except ValueError as e:
        raise ConfigKeyError(str(e)) from e


class TrainDemoExperiment(AbstractIterativeExperiment):
    def __init__(self):
        self.params: dict = {}
        self.train_config: Optional[TrainConfig] = None
        self.dataset: Optional[Dataset] = None
        self.state: Optional[algorithm.TrainState] = None
        self.rng: Optional[np.random.Generator] = None
        self.model_path: Optional[str] = None
        self.model_size: Optional[int] = None
        self.last_result: dict = {}

    def initialize(self, config: dict, rep: int, logger: tbn_logging.LoggerArray) -> None:
        self.params = demo_params(config)
        self.train_config = TrainConfig.from_params(
            dict(self.params, **{KEY.EPOCHS: config[KEY.EPOCHS]})
        )
        seed = self.train_config.seed
        self.dataset = load_dataset(self.params, seed)
        net = build_toy_net(
            self.dataset.input_shape,
            self.dataset.classes,
            int(self.params["width"]),
            bool(self.params["keep_first_last_float"]),
            bool(self.params["float_baseline"]),
        )
        self.state = algorithm.init_state(net, self.train_config, seed)
        self.rng = np.random.default_rng([seed, 1])

        self.model_path = self.params["model_path"]
        if self.model_path is None and config.get(KEY.i_REP_LOG_PATH) is not None:
            self.model_path = os.path.join(config[KEY.i_REP_LOG_PATH], MODEL_FILE)

        tbn_logging.getLogger().info(
            "training {} conv layers on {} samples, {} classes, {} epochs".format(
                len(net.conv_layers), len(self.dataset), self.dataset.classes, config[KEY.EPOCHS]
            )
        )

    def iterate(self, config: dict, rep: int, n: int) -> dict:
        step = algorithm.train_minibatch
        if self.params["float_baseline"]:
            step = algorithm.float_minibatch
        lr = self.state.eta
        losses = []
        for batch in self.dataset.batches(self.train_config.batch_size, self.rng):
            self.state, loss = step(self.state, batch, self.train_config)
            if not math.isfinite(loss):
                raise ExperimentSurrender(
                    {
                        "epoch": n,
                        "iteration": self.state.iteration,
                        "lr": lr,
                        "loss": loss,
                        "train_acc": float("nan"),
                    }
                )
            losses.append(loss)

        k = int(self.params["top_k"])
        metrics = algorithm.evaluate(
            self.state, self.dataset, k, float_weights=bool(self.params["float_baseline"])
        )
        self.last_result = {
            "epoch": n,
            "iteration": self.state.iteration,
            "lr": lr,
            "loss": float(np.mean(losses)),
            "train_acc": metrics["top1"],
            "top{}".format(k): metrics["top{}".format(k)],
        }
        self.state = algorithm.advance_epoch(self.state, self.train_config)
        return dict(self.last_result)

    def save_state(self, config: dict, rep: int, n: int) -> None:
        pass

    def final_accuracy(self) -> float:
        """top-1 train accuracy of the current state"""
        return algorithm.evaluate(
            self.state, self.dataset, 1, float_weights=bool(self.params["float_baseline"])
        )["top1"]

    def finalize(self, surrender: ExperimentSurrender = None, crash: bool = False):
        # diverged shadow weights are not finite and have no two-bit export
        if crash or surrender is not None or self.state is None or self.model_path is None:
            return
        model = algorithm.export_inference_model(self.state)
        self.model_size = save_model_file(model, self.model_path)
        tbn_logging.getLogger().info(
            "wrote {} ({} bytes)".format(self.model_path, self.model_size)
        )
