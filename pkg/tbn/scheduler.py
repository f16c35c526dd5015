import abc
from typing import List, Optional

from joblib import Parallel, delayed

from tbn import job


class AbstractScheduler(abc.ABC):
    def __init__(self):
        self.joblist: Optional[List[job.Job]] = None

    def assign(self, joblist: List[job.Job]) -> None:
        """assigns the scheduler a list of jobs to execute"""
        self.joblist = joblist

    @abc.abstractmethod
    def run(self, overwrite: bool = False) -> List[str]:
        """executes all assigned jobs and returns one outcome per task

        Args:
            overwrite (bool, optional): passed on to the jobs. Defaults to False.
        """
        raise NotImplementedError


class LocalScheduler(AbstractScheduler):
    def run(self, overwrite: bool = False) -> List[str]:
        outcomes: List[str] = []
        for j in self.joblist:
            if j.n_parallel > 1:
                outcomes += Parallel(n_jobs=j.n_parallel)(
                    delayed(self.execute_task)(j, c, overwrite) for c in j.tasks
                )
            else:
                outcomes += [self.execute_task(j, c, overwrite) for c in j.tasks]
        return outcomes

    @staticmethod
    def execute_task(j: job.Job, c: dict, overwrite: bool = False) -> str:
        return j.run_task(c, overwrite)
