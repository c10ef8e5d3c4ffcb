"""
.. See the NOTICE file distributed with this work for additional information
   regarding copyright ownership.
   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at
       http://www.apache.org/licenses/LICENSE-2.0
   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd

from common.exceptions import InvalidInputError


@dataclass
class ResultTable:
    """
    Rectangular table of real values with free-form metadata
    (seed, timestamp, config hash). Metadata never goes into the CSV.
    """

    columns: Tuple[str, ...]
    rows: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.columns = tuple(self.columns)
        rows = np.asarray(self.rows, dtype=float)
        if rows.size == 0:
            rows = rows.reshape(0, len(self.columns))
        if rows.ndim != 2 or rows.shape[1] != len(self.columns):
            raise InvalidInputError(
                "rows", "table is not rectangular", n_columns=len(self.columns)
            )
        if len(set(self.columns)) != len(self.columns):
            raise InvalidInputError("columns", "duplicate column names")
        self.rows = rows

    @classmethod
    def from_records(
        cls,
        columns: Sequence[str],
        records: Iterable[Sequence[float]],
        metadata: Dict[str, Any] = None,
    ) -> "ResultTable":
        rows: List[Sequence[float]] = [tuple(record) for record in records]
        return cls(tuple(columns), np.array(rows, dtype=float), dict(metadata or {}))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, metadata: Dict[str, Any] = None) -> "ResultTable":
        return cls(tuple(frame.columns), frame.to_numpy(dtype=float), dict(metadata or {}))

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def is_empty(self) -> bool:
        return len(self) == 0

    def column(self, name: str) -> np.ndarray:
        try:
            return self.rows[:, self.columns.index(name)]
        except ValueError:
            raise InvalidInputError("column", "no such column", name=name) from None

    def where(self, name: str, value: float) -> "ResultTable":
        mask = self.column(name) == value
        return ResultTable(self.columns, self.rows[mask], dict(self.metadata))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=list(self.columns))
