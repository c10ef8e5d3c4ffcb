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

Experiment configuration and orchestration.

A config document is a flat list of `key = value` lines. Top-level keys are
kind, seed, n_paths, workers and out_dir; `grid.*` sets the time grid and
the kind's own section (`market.*`, `bias.*` or `aggregate.*`) sets the
fields of its model config.
"""
import dataclasses
import enum
import logging
import typing
import uuid
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from datetime import datetime, timezone
from typing import Any, Dict, Iterator, List, Optional

from common.exceptions import BeliefSimError, ConfigError, InvalidInputError
from common.extensions import ExecutionTimeExtension
from common.file_client import ConfigEntry, FileClient
from common.file_model.result_table import ResultTable
from common.file_model.utils import config_hash
from common.logger import RunEvent, publish
from beliefsim.render import render_svg
from beliefsim.resolver.experiment_model import EXPERIMENT_TYPES
from beliefsim.sde_core import TimeGrid

logger = logging.getLogger(__name__)

TOP_LEVEL_TYPES = {"kind": str, "seed": int, "n_paths": int, "workers": int, "out_dir": str}
GRID_SECTION = "grid"
# set from the top level, never from a model section
SHARED_FIELDS = ("grid", "seed", "n_paths")


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    model: Any
    seed: int = 0
    workers: int = 1
    out_dir: str = "."
    source: Optional[str] = None

    @property
    def grid(self) -> TimeGrid:
        return self.model.grid

    @property
    def n_paths(self) -> int:
        return self.model.n_paths


@dataclasses.dataclass
class RunReport:
    run_id: str
    tables: Dict[str, ResultTable]
    files: List[str]
    metadata: Dict[str, Any]


def _coerce(entry: ConfigEntry, annotation: Any, path: Optional[str]) -> Any:
    raw = entry.value
    origin = typing.get_origin(annotation)
    try:
        if origin is typing.Union:
            annotation = next(arg for arg in typing.get_args(annotation) if arg is not type(None))
            origin = typing.get_origin(annotation)
        if origin is tuple:
            return tuple(float(part) for part in raw.split(",") if part.strip())
        if isinstance(annotation, type) and issubclass(annotation, enum.Enum):
            return annotation(raw)
        if annotation is bool:
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if annotation is int:
            try:
                return int(raw)
            except ValueError:
                value = float(raw)
                if not value.is_integer():
                    raise
                return int(value)
        if annotation is float:
            return float(raw)
        return raw
    except (ValueError, StopIteration):
        raise ConfigError(
            "cannot read value", path=path, key=entry.key, line=entry.line, value=raw
        ) from None


def _section_types(config_type: type) -> Dict[str, Any]:
    hints = typing.get_type_hints(config_type)
    return {
        model_field.name: hints[model_field.name]
        for model_field in dataclasses.fields(config_type)
        if model_field.name not in SHARED_FIELDS
    }


def build_config(
    entries: List[ConfigEntry],
    kind: Optional[str] = None,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    workers: Optional[int] = None,
    path: Optional[str] = None,
) -> ExperimentConfig:
    """
    Typed ExperimentConfig from parsed entries. Arguments that are not None
    override the document; a kind given both ways must agree.
    """
    seen: Dict[str, ConfigEntry] = {}
    for entry in entries:
        if entry.key in seen:
            raise ConfigError("duplicate key", path=path, key=entry.key, line=entry.line)
        seen[entry.key] = entry

    file_kind = seen["kind"].value if "kind" in seen else None
    if kind is not None and file_kind is not None and kind != file_kind:
        raise ConfigError("kind differs from the command line", path=path, key="kind", line=seen["kind"].line)
    kind = kind or file_kind
    if kind is None:
        raise ConfigError("missing required key", path=path, key="kind")
    registration = EXPERIMENT_TYPES.registration(kind)
    section_types = _section_types(registration.config_type)
    grid_types = typing.get_type_hints(TimeGrid)
    other_sections = set(EXPERIMENT_TYPES.sections.values()) - {registration.section}

    top: Dict[str, Any] = {}
    grid: Dict[str, Any] = {}
    model: Dict[str, Any] = {}
    for key, entry in seen.items():
        section, _, name = key.partition(".")
        if not name:
            if key not in TOP_LEVEL_TYPES:
                raise ConfigError("unknown key", path=path, key=key, line=entry.line)
            top[key] = _coerce(entry, TOP_LEVEL_TYPES[key], path)
        elif section == GRID_SECTION and name in grid_types:
            grid[name] = _coerce(entry, grid_types[name], path)
        elif section == registration.section and name in section_types:
            model[name] = _coerce(entry, section_types[name], path)
        elif section in other_sections:
            raise ConfigError(f"key belongs to another experiment than {kind}", path=path, key=key, line=entry.line)
        else:
            raise ConfigError("unknown key", path=path, key=key, line=entry.line)

    seed = top.get("seed", 0) if seed is None else seed
    if seed < 0:
        raise ConfigError("seed must be nonnegative", path=path, key="seed")
    if "n_paths" in top:
        model["n_paths"] = top["n_paths"]
    try:
        model_config = registration.config_type(grid=TimeGrid(**grid), seed=seed, **model)
    except InvalidInputError as error:
        raise ConfigError(error.message, path=path, section=registration.section) from error
    return ExperimentConfig(
        kind,
        model_config,
        seed=seed,
        workers=max(int(top.get("workers", 1) if workers is None else workers), 1),
        out_dir=top.get("out_dir", ".") if out_dir is None else out_dir,
        source=path,
    )


def load_config(
    path: Optional[str],
    kind: Optional[str] = None,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    workers: Optional[int] = None,
    file_client: Optional[FileClient] = None,
) -> ExperimentConfig:
    """
    Read a config document; a None path means all defaults
    """
    entries: List[ConfigEntry] = []
    if path is not None:
        file_client = file_client or FileClient({})
        entries = file_client.read_config_entries(path)
    return build_config(entries, kind, seed, out_dir, workers, path)


@contextmanager
def level_mapper(workers: int) -> Iterator[Any]:
    """`map`, or a process pool's map when more than one worker is asked for"""
    if workers <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=workers) as executor:
        yield executor.map


def run_experiment(config: ExperimentConfig, file_client: Optional[FileClient] = None) -> RunReport:
    """
    Run the configured experiment, then write <kind>_<table>.csv, <kind>.svg
    and the <kind>.meta.json sidecar under the output directory
    """
    file_client = file_client or FileClient({"out_dir": config.out_dir})
    run_id = uuid.uuid4().hex[:12]
    runner = EXPERIMENT_TYPES.resolve(config.kind)
    extension = ExecutionTimeExtension()
    context: Dict[str, Any] = {"file_client": file_client, "run_id": run_id}
    extension.run_started(context)
    publish(
        "started",
        RunEvent(run_id, config.kind, "simulate", details={"seed": config.seed, "workers": config.workers}),
    )
    try:
        with level_mapper(config.workers) as mapper:
            context["mapper"] = mapper
            output = runner(config.model, context)
    except BeliefSimError as error:
        error.extensions["experiment"] = config.kind
        publish("failed", RunEvent(run_id, config.kind, "simulate", extension.elapsed_secs(), error=error))
        raise

    files = []
    for name, table in output.tables.items():
        files.append(file_client.write_table(table, f"{config.kind}_{name}.csv"))
    files.append(render_svg(output.figure, output.layout, file_client.figure_path(f"{config.kind}.svg")))
    metadata = {
        "run_id": run_id,
        "kind": config.kind,
        "seed": config.seed,
        "workers": config.workers,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "config_hash": config_hash(config.model),
        "config": config.model,
        "details": output.details,
        "files": files,
        **extension.format(context),
    }
    files.append(file_client.write_metadata(metadata, f"{config.kind}.meta.json"))
    logger.debug("Run %s wrote %s", run_id, files)
    for table in output.tables.values():
        table.metadata.update({"seed": config.seed, "config_hash": metadata["config_hash"]})
    publish(
        "succeeded",
        RunEvent(run_id, config.kind, "write", extension.elapsed_secs(), details=output.details),
    )
    return RunReport(run_id, output.tables, files, metadata)
