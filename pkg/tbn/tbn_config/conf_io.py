import os
from typing import List, Optional, Tuple

import yaml

from tbn.tbn_config import tbn_conf_keys as KEY
from tbn.tbn_error import ConfigKeyError, ExperimentNotFoundError, MissingConfigError


def get_configs(
    config_path: str, experiment_selections: Optional[List[str]]
) -> Tuple[Optional[dict], List[dict]]:
    """reads and separates the experiment configs from a yaml file

    Args:
        config_path (str): path to the yaml file
        experiment_selections (List[str]): selected experiment names, None selects all

    Returns:
        Tuple[dict, List[dict]]: DEFAULT, Experiment Configurations
    """
    all_configs = read_yaml(config_path)
    return separate_configs(all_configs, experiment_selections)


def read_yaml(config_path: str) -> List[dict]:
    """reads a YAML configuration file holding one document per experiment"""
    if not os.path.exists(config_path):
        raise MissingConfigError("Could not find {}".format(config_path))

    all_configs = []
    try:
        with open(config_path, "r") as f:
            for exp_conf in yaml.safe_load_all(f):
                if exp_conf is not None:
                    all_configs.append(exp_conf)
    except yaml.YAMLError as e:
        raise ConfigKeyError("{} is not valid YAML: {}".format(config_path, e)) from e
    return all_configs


def separate_configs(
    all_configs: List[dict], experiment_selections: Optional[List[str]], suppress: bool = False
) -> Tuple[Optional[dict], List[dict]]:
    """separates the DEFAULT document from the experiment documents

    Returns:
        Tuple[dict, List[dict]]: DEFAULT, Experiment Configurations, in this order
    """
    default_config = None
    experiment_configs = []

    for c in all_configs:
        if not isinstance(c, dict) or KEY.NAME not in c:
            raise ConfigKeyError("every config document needs a '{}'".format(KEY.NAME))
        name = str(c[KEY.NAME])

        if name.lower() == KEY.DEFAULT:
            default_config = c
        elif experiment_selections is None or name in experiment_selections:
            experiment_configs.append(c)

    if not suppress and len(experiment_configs) == 0:
        raise ExperimentNotFoundError("No selected experiment found in config file.")

    return default_config, experiment_configs


def write_yaml(fpath: str, data: List[dict]) -> None:
    os.makedirs(os.path.dirname(fpath) or ".", exist_ok=True)
    with open(fpath, "w") as f:
        yaml.safe_dump_all(data, f, default_flow_style=False)
