import abc
import logging
import os
import sys
from typing import Dict, Iterable, Iterator, List, Optional, TextIO

from tbn import util


class AbstractLogger(abc.ABC):
    """Receives the result dictionary of every epoch of a run.

    Args:
        ignore_keys (Iterable, optional): result keys to drop.
        allow_keys (Iterable, optional): the only result keys to keep. Exclusive with ignore_keys.
    """

    def __init__(
        self,
        ignore_keys: Optional[Iterable] = None,
        allow_keys: Optional[Iterable] = None,
    ):
        if ignore_keys is not None and allow_keys is not None:
            raise ValueError("give either ignore_keys or allow_keys, not both")
        self.ignore_keys = None if ignore_keys is None else set(ignore_keys)
        self.allow_keys = None if allow_keys is None else set(allow_keys)

    def filter(self, data: Dict) -> Dict:
        if self.ignore_keys is not None:
            return {k: v for k, v in data.items() if k not in self.ignore_keys}
        if self.allow_keys is not None:
            return {k: v for k, v in data.items() if k in self.allow_keys}
        return data

    @abc.abstractmethod
    def initialize(self, config: dict, rep: int, rep_log_path: Optional[str]) -> None:
        """Resets the logger for a new run.

        Args:
            config (dict): run configuration
            rep (int): repetition index
            rep_log_path (str, optional): run directory, None when the run writes no files
        """
        raise NotImplementedError

    @abc.abstractmethod
    def process(self, data: dict) -> None:
        """handles one epoch's results"""
        raise NotImplementedError

    @abc.abstractmethod
    def finalize(self) -> None:
        raise NotImplementedError

    @abc.abstractmethod
    def load(self):
        """what the logger recorded for the current run"""
        raise NotImplementedError


class LoggerArray(AbstractLogger):
    """Fans every call out to its loggers; load() merges their results by class name."""

    def __init__(self, loggers: Optional[Iterable[AbstractLogger]] = None):
        super().__init__()
        self._loggers: List[AbstractLogger] = list(loggers or [])

    def add(self, logger: AbstractLogger) -> None:
        self._loggers.append(logger)

    def initialize(self, config: dict, rep: int, rep_log_path: Optional[str]) -> None:
        for logger in self._loggers:
            logger.initialize(config, rep, rep_log_path)

    def process(self, data: dict) -> None:
        for logger in self._loggers:
            logger.process(data)

    def finalize(self) -> None:
        for logger in self._loggers:
            logger.finalize()

    def load(self) -> dict:
        merged = {}
        for logger in self._loggers:
            name = logger.__class__.__name__
            try:
                d = logger.load()
            except Exception:
                getLogger().exception("could not load {}".format(name))
                d = "Error when loading {}".format(name)
            if d is None:
                continue
            merged.update(d if isinstance(d, dict) else {name: d})
        return merged

    def __iter__(self) -> Iterator[AbstractLogger]:
        return iter(self._loggers)

    def is_empty(self) -> bool:
        return not self._loggers


class PythonLogger(AbstractLogger):
    """copies the 'tbn' diagnostics of a run into out.log (INFO+) and err.log (ERROR+)"""

    FILES = (("out.log", logging.INFO), ("err.log", logging.ERROR))

    def __init__(self):
        super().__init__()
        self.logger = getLogger()
        self.handlers: List[logging.Handler] = []

    def initialize(self, config: dict, rep: int, rep_log_path: Optional[str]) -> None:
        self.finalize()
        if rep_log_path is None:
            return
        for name, level in self.FILES:
            h = logging.FileHandler(os.path.join(rep_log_path, name), delay=True)
            h.setLevel(level)
            h.setFormatter(_formatter)
            self.logger.addHandler(h)
            self.handlers.append(h)

    def process(self, data: dict) -> None:
        pass

    def finalize(self) -> None:
        for h in self.handlers:
            self.logger.removeHandler(h)
            h.close()
        self.handlers = []

    def load(self):
        return None


RECORD_FIELDS = ("epoch", "iteration", "lr", "loss", "train_acc")


def format_record(data: dict) -> str:
    """epoch=<int> iteration=<int> lr=<%.6g> loss=<%.6f> train_acc=<%.4f>"""
    return "epoch={:d} iteration={:d} lr={:.6g} loss={:.6f} train_acc={:.4f}".format(
        int(data["epoch"]),
        int(data["iteration"]),
        float(data["lr"]),
        float(data["loss"]),
        float(data["train_acc"]),
    )


class RecordLogger(AbstractLogger):
    """The training log: one line-oriented record per epoch on stdout and in a log file.

    Without an explicit path the records stream into train.log of the run directory.
    An explicit path is written in one piece on finalize(), and not at all after discard(),
    so a failed command leaves no log behind. Records carry no timestamps, so equal runs
    write equal files.
    """

    def __init__(
        self, path: Optional[str] = None, stream: Optional[TextIO] = None, echo: bool = True
    ):
        super().__init__(allow_keys=RECORD_FIELDS)
        self.path = path
        self.stream = stream
        self.echo = echo
        self._file: Optional[TextIO] = None
        self._target: Optional[str] = None
        self._discarded = False
        self.records: List[str] = []

    def initialize(self, config: dict, rep: int, rep_log_path: Optional[str]) -> None:
        self.records = []
        self._file = None
        self._discarded = False
        self._target = self.path
        if self._target is None and rep_log_path is not None:
            self._target = os.path.join(rep_log_path, "train.log")

    def process(self, data: dict) -> None:
        if not all(k in data for k in RECORD_FIELDS):
            return
        line = format_record(self.filter(data))
        self.records.append(line)
        if self.echo:
            print(line, file=self.stream or sys.stdout, flush=True)
        if self._target is not None and self.path is None:
            if self._file is None:
                self._file = open(self._target, "w")
            self._file.write(line + "\n")
            self._file.flush()

    def discard(self) -> None:
        """drops the pending explicit log file; records already streamed stay"""
        self._discarded = True

    def finalize(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None
        if self.path is not None and not self._discarded:
            with util.atomic_write(self.path) as f:
                f.write("".join(line + "\n" for line in self.records).encode())
            self._discarded = True

    def load(self):
        if self._target is None or not os.path.exists(self._target):
            return list(self.records)
        with open(self._target) as f:
            return [line.rstrip("\n") for line in f]


### logging module functionality ####


class _TbnFormatter(logging.Formatter):
    """'[tbn] [LEVEL] message'; errors also carry a timestamp"""

    _plain = logging.Formatter("[%(name)s] [%(levelname)s] %(message)s")
    _stamped = logging.Formatter("[%(asctime)s]:[%(name)s] [%(levelname)s] %(message)s")

    def format(self, record: logging.LogRecord) -> str:
        fmt = self._stamped if record.levelno >= logging.ERROR else self._plain
        return fmt.format(record)


_formatter = _TbnFormatter()


def _stream_handler(stream: TextIO, level: int, below_warning: bool) -> logging.Handler:
    h = logging.StreamHandler(stream)
    h.setLevel(level)
    h.setFormatter(_formatter)
    if below_warning:
        h.addFilter(lambda record: record.levelno < logging.WARNING)
    return h


def getLogger() -> logging.Logger:
    """the package logger 'tbn', configured on first use:
    records below WARNING go to stdout, the rest to stderr.
    """
    logger = logging.getLogger("tbn")
    if not getattr(logger, "_tbn_configured", False):
        logger.setLevel(logging.INFO)
        logger.addHandler(_stream_handler(sys.stdout, logging.INFO, True))
        logger.addHandler(_stream_handler(sys.stderr, logging.WARNING, False))
        logger.propagate = False
        logger._tbn_configured = True
    return logger
