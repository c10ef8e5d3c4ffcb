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

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional


@dataclass(frozen=True)
class RunEvent:
    run_id: str
    kind: str
    stage: str = ""
    duration_secs: Optional[float] = None
    details: Dict[str, Any] = field(default_factory=dict)
    error: Optional[BaseException] = None


class RunListener:
    """Interface for anything that wants to observe experiment runs"""

    def started(self, event: RunEvent) -> None:
        pass

    def succeeded(self, event: RunEvent) -> None:
        pass

    def failed(self, event: RunEvent) -> None:
        pass


_LISTENERS: List[RunListener] = []


def register(listener: RunListener) -> None:
    if listener not in _LISTENERS:
        _LISTENERS.append(listener)


def unregister(listener: RunListener) -> None:
    if listener in _LISTENERS:
        _LISTENERS.remove(listener)


def publish(method: str, event: RunEvent) -> None:
    for listener in list(_LISTENERS):
        getattr(listener, method)(event)


class ExperimentLogger(RunListener):
    """Logger for experiment runs"""

    def __init__(self, log: logging.Logger):
        self.log = log

    def started(self, event):
        self.log.debug(
            "[Run id: %s] Experiment %s started (%s)",
            event.run_id,
            event.kind,
            event.stage,
        )
        if event.details:
            self.log.debug(
                "[Run id: %s] Running with %s",
                event.run_id,
                event.details,
            )

    def succeeded(self, event):
        self.log.info(
            "[Run id: %s] Experiment %s %s succeeded in %s seconds",
            event.run_id,
            event.kind,
            event.stage,
            event.duration_secs,
        )

    def failed(self, event):
        self.log.error(
            "[Run id: %s] Experiment %s %s failed in %s seconds: %s",
            event.run_id,
            event.kind,
            event.stage,
            event.duration_secs,
            event.error,
        )
