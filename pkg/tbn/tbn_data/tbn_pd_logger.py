import os
from typing import Dict, Iterable, Optional

import pandas as pd

from tbn.tbn_data import tbn_logging


class PandasLogger(tbn_logging.AbstractLogger):
    """Writes the per-epoch results of each run to rep_<r>.csv in the run directory.
    The table is rewritten after every epoch.
    """

    def __init__(
        self,
        ignore_keys: Optional[Iterable] = None,
        allow_keys: Optional[Iterable] = None,
    ):
        super().__init__(ignore_keys=ignore_keys, allow_keys=allow_keys)
        self.csv_name: Optional[str] = None
        self.df = pd.DataFrame()

    def initialize(self, config: Dict, rep: int, rep_log_path: Optional[str]):
        self.csv_name = None
        if rep_log_path is not None:
            self.csv_name = os.path.join(rep_log_path, "rep_{}.csv".format(rep))
        self.df = pd.DataFrame()

    def process(self, log_data: dict) -> None:
        data = self.filter(log_data)
        row = pd.DataFrame([data])
        self.df = row if self.df.empty else pd.concat([self.df, row], ignore_index=True)

        if self.csv_name is None:
            return
        try:
            self.df.to_csv(self.csv_name, index_label="index")
        except OSError:
            tbn_logging.getLogger().warning("Could not save {}".format(self.csv_name))

    def finalize(self) -> None:
        pass

    def load(self):
        if self.csv_name is None:
            return {self.__class__.__name__: self.df}
        try:
            df = pd.read_csv(self.csv_name, index_col="index")
        except FileNotFoundError:
            warn = "{} does not exist".format(self.csv_name)
            tbn_logging.getLogger().warning(warn)
            return warn
        return {self.__class__.__name__: df}
