import abc

from tbn.tbn_data import tbn_logging
from tbn.tbn_config import tbn_conf_keys as KEY
from tbn.tbn_error import ExperimentSurrender


class AbstractExperiment(abc.ABC):
    @abc.abstractmethod
    def initialize(self, config: dict, rep: int, logger: tbn_logging.LoggerArray) -> None:
        """Called once at the start of each repetition.

        Arguments:
            config {dict} -- run configuration
            rep {int} -- repetition counter
            logger {tbn_logging.LoggerArray} -- initialized loggers
        """
        raise NotImplementedError

    @abc.abstractmethod
    def run(self, config: dict, rep: int, logger: tbn_logging.LoggerArray) -> None:
        """The main procedure, called after initialize()."""
        raise NotImplementedError

    @abc.abstractmethod
    def finalize(self, surrender: ExperimentSurrender = None, crash: bool = False):
        """Called after the experiment has run, also when it raised.

        Args:
            surrender (ExperimentSurrender, optional): the surrender the run ended with.
                Defaults to None.
            crash (bool, optional): the run raised any other exception. Defaults to False.
        """
        raise NotImplementedError


class AbstractIterativeExperiment(AbstractExperiment):
    @abc.abstractmethod
    def iterate(self, config: dict, rep: int, n: int) -> dict:
        """one iteration; returns the result map handed to the loggers"""
        raise NotImplementedError

    @abc.abstractmethod
    def save_state(self, config: dict, rep: int, n: int) -> None:
        """Intended to save an intermediate state after each iteration."""
        raise NotImplementedError

    def run(self, config: dict, rep: int, logger: tbn_logging.LoggerArray) -> None:
        for n in range(config[KEY.EPOCHS]):
            surrender = False
            try:
                res = self.iterate(config, rep, n)
            except ExperimentSurrender as e:
                res = e.payload
                surrender = True

            res["rep"] = rep
            logger.process(res)

            self.save_state(config, rep, n)

            if surrender:
                raise ExperimentSurrender(res)
