from typing import List, Optional, Type

from tbn import experiment, job, scheduler
from tbn.tbn_config import tbn_config
from tbn.tbn_data import tbn_logging


class Sweep:
    """Runs every configured run of a YAML config through one experiment class."""

    def __init__(
        self,
        exp_cls: Type[experiment.AbstractExperiment],
        config: tbn_config.Config,
    ):
        self.exp_cls = exp_cls
        self.config = config
        self.logArray = tbn_logging.LoggerArray()
        self.joblist: Optional[List[job.Job]] = None

    def add_logger(self, logger: tbn_logging.AbstractLogger) -> None:
        self.logArray.add(logger)

    def _get_jobs(self, root_dir: str = "") -> List[job.Job]:
        if self.joblist is None:
            factory = job.JobFactory(self.exp_cls, self.logArray, root_dir)
            self.joblist = factory.create_jobs(self.config.exp_configs)
        return self.joblist

    def run(
        self,
        root_dir: str = "",
        sch: Optional[scheduler.AbstractScheduler] = None,
        overwrite: bool = False,
    ) -> List[str]:
        """runs all jobs and returns the outcome of every run

        Args:
            root_dir (str, optional): prefix of all run directories. Defaults to "".
            sch (AbstractScheduler, optional): defaults to a LocalScheduler.
            overwrite (bool, optional): rerun runs that already hold results. Defaults to False.
        """
        if self.logArray.is_empty():
            tbn_logging.getLogger().warning("No Logger has been added. Are you sure?")

        self.config.to_yaml(relpath=True)
        s = sch if sch is not None else scheduler.LocalScheduler()
        s.assign(self._get_jobs(root_dir))
        return s.run(overwrite=overwrite)
