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

import time
from typing import Any, Dict, Optional


class ExecutionTimeExtension:
    def __init__(self):
        self.start_timestamp: Optional[int] = None

    def run_started(self, context: Dict[str, Any]) -> None:
        self.start_timestamp = time.perf_counter_ns()

    def elapsed_secs(self) -> Optional[float]:
        if self.start_timestamp is None:
            return None
        return (time.perf_counter_ns() - self.start_timestamp) / 1000000000

    def format(self, context: Dict[str, Any]) -> Dict[str, Any]:
        elapsed = self.elapsed_secs()
        if elapsed is None:
            return {}
        return {"execution_time_in_seconds": round(elapsed, 2)}
