import itertools
import os
from collections import deque
from copy import deepcopy
from typing import Iterable, Iterator, List, Sequence, Tuple

from tbn import util
from tbn.tbn_config import conf_path
from tbn.tbn_config import tbn_conf_keys as KEY
from tbn.tbn_data import tbn_logging
from tbn.tbn_error import ConfigKeyError

# one expansion step: the parameter paths it sets and their values
Assignment = Tuple[Sequence[util.ParamPath], Sequence]


def unfold_exps(exp_configs: List[dict], debug: bool) -> List[dict]:
    """unfolds experiment configurations into their parameter runs and repetitions"""
    return unroll_exp_reps(expand_experiments(exp_configs, debug))


def expand_experiments(_experiment_configs: List[dict], debug: bool) -> List[dict]:
    """Expands grid / list / ablative blocks into concrete parameter instantiations.
    Blocks are expanded one at a time, so several blocks multiply.

    Arguments:
        _experiment_configs {List[dict]} -- experiment configs, DEFAULT already merged
        debug {bool} -- one repetition, one epoch and only the first expansion

    Returns:
        List[dict] -- experiment configs with set parameters
    """
    pending = deque(deepcopy(_experiment_configs))
    if debug:
        for ec in pending:
            ec[KEY.REPS] = ec[KEY.EPOCHS] = ec[KEY.REPS_PARALL] = ec[KEY.REPS_P_JOB] = 1

    done = []
    while pending:
        config = pending.popleft()
        config.setdefault(KEY.i_BASIC_PATH, config.get(KEY.PATH))
        config.setdefault(KEY.i_EXP_NAME, config.get(KEY.NAME))
        config.setdefault(KEY.i_NEST_DIR, "")
        config[KEY.i_DEBUG_FLAG] = debug

        key = _next_expansion_key(config)
        if key is None:
            done.append(config)
            continue

        runs = [_instantiate(config, key, a) for a in _assignments(config, key)]
        pending.extend(runs[:1] if debug else runs)

    return conf_path.normalize_expanded_paths(done)


def _next_expansion_key(config: dict):
    for key in config:
        if key.startswith((KEY.GRID, KEY.LIST, KEY.ABLATIVE)):
            return key
    return None


def _expansion_values(config: dict, key: str) -> dict:
    if not isinstance(config[key], dict):
        raise ConfigKeyError(
            "'{}' of experiment '{}' must be a mapping".format(key, config[KEY.NAME])
        )
    lists = util.param_lists(config[key])
    if not lists:
        raise ConfigKeyError(
            "'{}' of experiment '{}' lists no values".format(key, config[KEY.NAME])
        )
    return lists


def _assignments(config: dict, key: str) -> Iterator[Assignment]:
    """grid: cartesian product; list: zip, shortest list wins; ablative: one parameter at a time"""
    lists = _expansion_values(config, key)
    paths = list(lists)

    if key.startswith(KEY.ABLATIVE):
        for path in paths:
            for value in lists[path]:
                yield (path,), (value,)
        return

    if key.startswith(KEY.LIST) and len({len(v) for v in lists.values()}) != 1:
        tbn_logging.getLogger().warning(
            'experiment "{}" list params [{}] are not of equal length.'.format(
                config[KEY.NAME], key
            )
        )
    combine = zip if key.startswith(KEY.LIST) else itertools.product
    for values in combine(*lists.values()):
        yield paths, values


def _instantiate(config: dict, key: str, assignment: Assignment) -> dict:
    paths, values = assignment
    run = deepcopy(config)
    del run[key]
    params = run.setdefault(KEY.PARAMS, {})
    for path, value in zip(paths, values):
        util.set_param(params, path, value)
    return extend_config_name(run, paths, values)


def extend_config_name(
    config: dict, paths: Iterable[util.ParamPath], values: Iterable
) -> dict:
    """appends a shorthand of the parameters and their values to the run name;
    runs of an expanded experiment are nested in a directory named after it.
    """
    name = config[KEY.i_EXP_NAME]
    # '__' separates the experiment name from the first parameter only
    sep = "_" if "__" in name else "__"
    config[KEY.i_EXP_NAME] = name + sep + util.run_suffix(list(paths), list(values))
    config[KEY.i_NEST_DIR] = config.get(KEY.NAME)
    return config


def unroll_exp_reps(exp_configs: List[dict]) -> List[dict]:
    """one configuration per repetition; repetition r trains with seed params.seed + r"""
    unrolled_exps = []

    for config in exp_configs:
        if KEY.i_REP_IDX in config:
            unrolled_exps.append(config)
            continue

        for r in range(config[KEY.REPS]):
            c = deepcopy(config)
            c[KEY.i_REP_IDX] = r
            c[KEY.i_REP_LOG_PATH] = os.path.join(c.get(KEY.LOG_PATH), "rep_{:02d}".format(r))
            params = c.setdefault(KEY.PARAMS, {})
            params[KEY.SEED] = int(params.get(KEY.SEED, 0)) + r
            unrolled_exps.append(c)
    return unrolled_exps
