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
from typing import Any, Callable, Dict, List

from common.file_model.result_table import ResultTable
from beliefsim import belief_market, bias_model, expert_aggregation
from beliefsim.render import FigureLayout, path_panels
from beliefsim.resolver.exceptions import ExperimentNotFoundError

Runner = Callable[[Any, Dict[str, Any]], "ExperimentOutput"]


@dataclass
class ExperimentOutput:
    tables: Dict[str, ResultTable]
    figure: ResultTable
    layout: FigureLayout
    details: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Registration:
    runner: Runner
    section: str
    config_type: type


class ExperimentType:
    """
    Registry of experiment runners keyed by kind. Each kind owns one
    config section whose keys map onto `config_type`.
    """

    def __init__(self, name: str):
        self.name = name
        self._registrations: Dict[str, Registration] = {}

    def kind(self, name: str, section: str, config_type: type) -> Callable[[Runner], Runner]:
        def register(runner: Runner) -> Runner:
            self._registrations[name] = Registration(runner, section, config_type)
            return runner

        return register

    @property
    def kinds(self) -> List[str]:
        return sorted(self._registrations)

    @property
    def sections(self) -> Dict[str, str]:
        return {name: registration.section for name, registration in self._registrations.items()}

    def registration(self, name: str) -> Registration:
        try:
            return self._registrations[name]
        except KeyError:
            raise ExperimentNotFoundError(name) from None

    def resolve(self, name: str) -> Runner:
        return self.registration(name).runner


EXPERIMENT_TYPES = ExperimentType("Experiment")
AGGREGATE_COLORS = ("tab:blue", "tab:green", "tab:red")


def _level_labels(levels) -> tuple:
    return tuple(f"n={level:g}" for level in levels)


@EXPERIMENT_TYPES.kind("market_convergence", "market", belief_market.MarketConfig)
def resolve_market_convergence(config: belief_market.MarketConfig, context: Dict[str, Any]) -> ExperimentOutput:
    """
    Barycentric market against the true price per information level
    """
    result = belief_market.convergence_experiment(config, context["mapper"])
    constant, slope = belief_market.stability_fit(result.summary)
    layout = FigureLayout(
        _level_labels(config.info_levels),
        ("true price S", "market price S~"),
        title=f"Belief market ({config.variant.value})",
    )
    return ExperimentOutput(
        {"paths": result.paths, "summary": result.summary},
        path_panels(result.bundles, ("true_path", "synthetic_path")),
        layout,
        {"stability_constant": constant, "w2_slope": slope},
    )


@EXPERIMENT_TYPES.kind("bias_shrink", "bias", bias_model.BiasConfig)
def resolve_bias_shrink(config: bias_model.BiasConfig, context: Dict[str, Any]) -> ExperimentOutput:
    """
    Ambiguity-weighted bias per information level, with the fitted error rate
    """
    result = bias_model.rate_experiment(config, mapper=context["mapper"])
    layout = FigureLayout(
        _level_labels(config.info_levels),
        ("true price S", "synthetic price S~"),
        title="Ambiguity-driven bias",
    )
    return ExperimentOutput(
        {"paths": result.paths, "summary": result.summary},
        path_panels(result.bundles, ("true_path", "synthetic_path")),
        layout,
        {
            "rate_slope": result.slope,
            "eta_target": result.eta_target,
            "stability_constant": result.stability_constant,
        },
    )


@EXPERIMENT_TYPES.kind("aggregate", "aggregate", expert_aggregation.AggregationConfig)
def resolve_aggregate(config: expert_aggregation.AggregationConfig, context: Dict[str, Any]) -> ExperimentOutput:
    """
    KL-budgeted tilt per budget with the true, filtered and synthetic prices
    """
    result = expert_aggregation.aggregation_experiment(config, mapper=context["mapper"])
    layout = FigureLayout(
        tuple(f"K={budget:g}" for budget in config.budgets),
        ("true price S", "filtered price S^", "synthetic price S~"),
        title=f"KL-budgeted aggregation (beta={config.beta:g})",
        common_y=True,
        colors=AGGREGATE_COLORS,
    )
    return ExperimentOutput(
        {"paths": result.paths, "summary": result.solutions},
        path_panels(result.bundles, ("true_path", "filtered_path", "synthetic_path")),
        layout,
        {"mean_corr_a_ahat": result.mean_corr},
    )
