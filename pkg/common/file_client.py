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
import json
import logging
import os
import threading
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping

import pandas as pd
from dotenv.parser import parse_stream

from common.exceptions import ConfigError
from common.file_model.result_table import ResultTable
from common.file_model.utils import FLOAT_FORMAT, to_plain

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfigEntry:
    key: str
    value: str
    line: int


class FileClient:
    """
    Client for everything an experiment reads from or writes to disk.
    Writes are serialised through one lock.
    """

    def __init__(self, config: Mapping[str, Any]):
        self.out_dir = config.get("out_dir") or "."
        self._lock = threading.Lock()

    def read_config_entries(self, path: str) -> List[ConfigEntry]:
        """
        Parse a `key = value` document, one entry per binding
        """
        if not os.path.isfile(path):
            raise ConfigError("config file not found", path=path)
        entries = []
        with open(path, encoding="utf-8") as stream:
            for binding in parse_stream(stream):
                line = binding.original.line
                if binding.error:
                    raise ConfigError("could not parse statement", path=path, line=line)
                if binding.key is None:
                    # blank line or comment
                    continue
                if binding.value is None:
                    raise ConfigError(
                        "expected `key = value`", path=path, line=line, key=binding.key
                    )
                entries.append(ConfigEntry(binding.key, binding.value.strip(), line))
        return entries

    def output_path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def write_table(self, table: ResultTable, name: str) -> str:
        path = self.output_path(name)
        with self._lock:
            os.makedirs(self.out_dir, exist_ok=True)
            table.to_frame().to_csv(
                path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8"
            )
        logger.debug("Wrote %d rows to %s", len(table), path)
        return path

    def read_table(self, path: str) -> ResultTable:
        frame = pd.read_csv(path, float_precision="round_trip", encoding="utf-8")
        return ResultTable.from_frame(frame)

    def write_metadata(self, metadata: Dict[str, Any], name: str) -> str:
        path = self.output_path(name)
        with self._lock:
            os.makedirs(self.out_dir, exist_ok=True)
            with open(path, "w", encoding="utf-8") as handle:
                json.dump(to_plain(metadata), handle, indent=2, sort_keys=True)
        return path

    def figure_path(self, name: str) -> str:
        with self._lock:
            os.makedirs(self.out_dir, exist_ok=True)
        return self.output_path(name)
