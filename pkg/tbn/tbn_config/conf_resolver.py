from copy import deepcopy
from typing import Iterable, List, Optional

from tbn import util
from tbn.tbn_config import tbn_conf_keys as KEY
from tbn.tbn_error import ConfigKeyError

REQUIRED_KEYS = (KEY.NAME, KEY.PATH, KEY.EPOCHS)


def merge_default(default_config: Optional[dict], experiment_configs: List[dict]) -> List[dict]:
    """merges each experiment configuration into a copy of the DEFAULT parameters

    Arguments:
        default_config {dict} -- default configuration parameters
        experiment_configs {List[dict]} -- individual experiment configurations

    Returns:
        List[dict] -- merged experiment configurations
    """
    if default_config is None:
        return deepcopy(experiment_configs)

    merged = []
    for c in experiment_configs:
        merge_c = deepcopy(default_config)
        merge_c = util.deep_update(merge_c, deepcopy(c))
        merged.append(merge_c)
    return merged


def check_required(experiment_configs: List[dict]) -> None:
    for c in experiment_configs:
        missing = [k for k in REQUIRED_KEYS if k not in c]
        if missing:
            raise ConfigKeyError(
                "experiment '{}' misses {}".format(c.get(KEY.NAME), ", ".join(missing))
            )
        if KEY.REPS not in c:
            c[KEY.REPS] = 1


def check_param_keys(params: dict, known: Iterable[str], where: str = "params") -> None:
    """raises ConfigKeyError for keys no consumer reads"""
    unknown = sorted(set(params) - set(known))
    if unknown:
        raise ConfigKeyError("unknown keys in {}: {}".format(where, ", ".join(unknown)))
