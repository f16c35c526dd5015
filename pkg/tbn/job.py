import os
from typing import Dict, List, Optional, Type

from tbn import experiment
from tbn.tbn_config import tbn_conf_keys as KEYS
from tbn.tbn_data import tbn_logging
from tbn.tbn_error import ExperimentSurrender

OK = "ok"
SURRENDER = "surrender"
CRASH = "crash"
SKIPPED = "skipped"


class Job:
    """A computation job holding 1..n tasks.
    A task is a run configuration with a unique repetition index.
    """

    def __init__(
        self,
        tasks: List[Dict],
        exp_cls: Type[experiment.AbstractExperiment],
        logger: tbn_logging.AbstractLogger,
        root_dir: str = "",
    ):
        self.tasks = tasks
        self.exp_cls = exp_cls
        self.logger = logger
        self.n_parallel = tasks[0].get(KEYS.REPS_PARALL, 1)
        self._root_dir = root_dir

        self.__create_experiment_directory(tasks, root_dir)

    @staticmethod
    def __create_experiment_directory(tasks: List[Dict], root_dir: str = "") -> None:
        for conf in tasks:
            os.makedirs(os.path.join(root_dir, conf[KEYS.i_REP_LOG_PATH]), exist_ok=True)

    def run_task(self, c: Dict, overwrite: bool) -> str:
        """Execute a single task of the job.

        Args:
            c (dict): task configuration
            overwrite (bool): run even if the run directory holds results

        Returns:
            str: one of "ok", "surrender", "crash", "skipped"
        """
        rep_path = os.path.join(self._root_dir, c[KEYS.i_REP_LOG_PATH])
        r = c[KEYS.i_REP_IDX]
        log = tbn_logging.getLogger()

        if not overwrite and self._check_task_exists(rep_path):
            log.warning("Skipping run, as {} is not empty. Use -o to overwrite.".format(rep_path))
            return SKIPPED

        log.info("running {}".format(rep_path))
        exp = self.exp_cls()
        surrender: Optional[ExperimentSurrender] = None
        crash = False

        self.logger.initialize(c, r, rep_path)
        try:
            exp.initialize(c, r, self.logger)
            exp.run(c, r, self.logger)
        except ExperimentSurrender as s:
            log.warning("SURRENDER: {}".format(rep_path))
            surrender = s
        except Exception:
            crash = True
            log.exception("EXCEPTION: {}".format(rep_path))

        try:
            exp.finalize(surrender, crash)
        except Exception:
            crash = True
            log.exception("EXCEPTION in finalize: {}".format(rep_path))
        self.logger.finalize()

        if crash:
            return CRASH
        return SURRENDER if surrender is not None else OK

    def load_task(self, c: Dict) -> Dict:
        rep_path = os.path.join(self._root_dir, c[KEYS.i_REP_LOG_PATH])
        self.logger.initialize(c, c[KEYS.i_REP_IDX], rep_path)
        return self.logger.load()

    @staticmethod
    def _check_task_exists(rep_path: str) -> bool:
        return os.path.isdir(rep_path) and len(os.listdir(rep_path)) != 0


class JobFactory:
    """Maps run configurations onto jobs of reps_per_job repetitions each."""

    def __init__(
        self,
        exp_cls: Type[experiment.AbstractExperiment],
        logger: tbn_logging.AbstractLogger,
        root_dir: str = "",
    ):
        self.exp_cls = exp_cls
        self.logger = logger
        self.root_dir = root_dir

    @staticmethod
    def _group_exp_tasks(task_confs: List[Dict]) -> Dict[str, List[Dict]]:
        grouped_exps: Dict[str, List[Dict]] = {}
        for t in task_confs:
            grouped_exps.setdefault(t[KEYS.PATH], []).append(t)
        return grouped_exps

    def _divide_tasks(self, task_confs: List[Dict]) -> List[List[Dict]]:
        tasks = []
        for exp_group in self._group_exp_tasks(task_confs).values():
            rep_portion = exp_group[0].get(KEYS.REPS_P_JOB, 1)
            for start_rep in range(0, len(exp_group), rep_portion):
                tasks.append(exp_group[start_rep : start_rep + rep_portion])
        return tasks

    def create_jobs(self, exp_configs: List[Dict]) -> List[Job]:
        return [
            Job(task, self.exp_cls, self.logger, self.root_dir)
            for task in self._divide_tasks(exp_configs)
        ]
