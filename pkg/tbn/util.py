import contextlib
import os
import re
import tempfile
from collections.abc import Mapping
from typing import BinaryIO, Dict, Iterator, Sequence, Tuple

ParamPath = Tuple[str, ...]

_NAME_DROP = re.compile(r"[' \"\)\]]")
_NAME_SPLIT = re.compile(r"[,\(\[]")


def deep_update(base_dict: dict, update_dict: dict) -> dict:
    """merges update_dict into base_dict in place; nested mappings are merged key by key,
    every other value replaces the base value.
    """
    for key, value in update_dict.items():
        if isinstance(value, Mapping):
            value = deep_update(base_dict.get(key, {}), value)
        base_dict[key] = value
    return base_dict


def param_lists(d: Mapping, prefix: ParamPath = ()) -> Dict[ParamPath, list]:
    """the value lists of a (nested) expansion block, keyed by their path of keys.
    Scalars are skipped.
    """
    lists = {}
    for key, value in d.items():
        path = prefix + (key,)
        if isinstance(value, Mapping):
            lists.update(param_lists(value, path))
        elif isinstance(value, (list, tuple)):
            lists[path] = list(value)
    return lists


def set_param(params: dict, path: ParamPath, value) -> None:
    for key in path[:-1]:
        params = params.setdefault(key, {})
    params[path[-1]] = value


def _abbreviate(path: ParamPath) -> str:
    # 'optimizer.learning_rate' -> 'opt.lr'
    leaf = "".join(word[:1] for word in path[-1].split("_"))
    return ".".join([p[:3] for p in path[:-1]] + [leaf])


def run_suffix(paths: Sequence[ParamPath], values: Sequence) -> str:
    """shorthand of a parameter assignment for run names, e.g. 'lr0.1_c1'"""
    name = "_".join(_abbreviate(p) + str(v) for p, v in zip(paths, values))
    return _NAME_SPLIT.sub("_", _NAME_DROP.sub("", name))


@contextlib.contextmanager
def atomic_write(path: str) -> Iterator[BinaryIO]:
    """open a temporary file next to path for binary writing.
    The file is renamed onto path only if the with-block exits without an exception,
    so readers never observe a partially written file.

    Args:
        path (str): final destination

    Yields:
        BinaryIO: writable stream of the temporary file
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as f:
            yield f
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
