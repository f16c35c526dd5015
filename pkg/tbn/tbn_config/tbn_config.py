import os
from typing import Dict, List, Optional

from tbn.tbn_config import conf_io, conf_path, conf_resolver, conf_unfolder
from tbn.tbn_config import tbn_conf_keys as KEY


class Config:
    """The runs of a YAML configuration file: DEFAULT merged into every experiment, parameter
    blocks expanded and repetitions unrolled into one dict per run.

    Args:
        config_path (str, optional): YAML file. Without it the config holds no runs.
        experiment_selections (List[str], optional): experiments to keep, None keeps all.
        debug (bool, optional): one repetition of one epoch per experiment.
    """

    def __init__(
        self,
        config_path: Optional[str] = None,
        experiment_selections: Optional[List[str]] = None,
        debug: bool = False,
    ):
        self.config_path = config_path
        self.exp_selections = experiment_selections
        self.exp_configs: List[dict] = []
        if config_path is not None:
            self.load_config(config_path, experiment_selections, debug)

    @property
    def f_name(self) -> Optional[str]:
        return None if self.config_path is None else os.path.basename(self.config_path)

    def load_config(
        self,
        config_path: str,
        experiment_selections: Optional[List[str]] = None,
        debug: bool = False,
    ) -> None:
        self.config_path = config_path
        self.exp_selections = experiment_selections

        default, experiments = conf_io.get_configs(config_path, experiment_selections)
        experiments = conf_resolver.merge_default(default, experiments)
        conf_resolver.check_required(experiments)
        self.exp_configs = conf_unfolder.unfold_exps(experiments, debug)

    def to_yaml(self, dir_path: str = "", relpath: bool = True) -> None:
        """writes the resolved runs next to the results: all runs into relative_<file>.yml,
        each experiment's runs into <experiment>/relative_<file>_<experiment>.yml.

        Args:
            dir_path (str, optional): target directory, defaults to the experiments' path.
            relpath (bool, optional): write paths relative to the experiments' path.
        """
        if not self.exp_configs:
            return
        if dir_path == "":
            dir_path = self.exp_configs[0][KEY.i_BASIC_PATH]
        stem = os.path.splitext(self.f_name)[0]

        runs = [
            conf_path.make_rel_paths(c, c[KEY.i_BASIC_PATH]) if relpath else dict(c)
            for c in self.exp_configs
        ]
        by_experiment: Dict[str, List[dict]] = {}
        for c in runs:
            by_experiment.setdefault(c[KEY.NAME], []).append(c)
        for name, configs in by_experiment.items():
            fname = "relative_{}_{}.yml".format(stem, name)
            conf_io.write_yaml(os.path.join(dir_path, name, fname), configs)

        suffix = "" if self.exp_selections is None else "_" + "_".join(self.exp_selections)
        conf_io.write_yaml(os.path.join(dir_path, "relative_{}{}.yml".format(stem, suffix)), runs)
