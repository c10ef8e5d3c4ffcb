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
import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from common.exceptions import BeliefSimError
from common.logger import ExperimentLogger, register, unregister
from beliefsim.harness import load_config, run_experiment
from beliefsim.resolver.experiment_model import EXPERIMENT_TYPES

load_dotenv("beliefsim.conf")

logger = logging.getLogger("beliefsim")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beliefsim",
        description="Run a seeded belief-market, bias-shrinkage or expert-aggregation experiment.",
    )
    parser.add_argument("kind", choices=EXPERIMENT_TYPES.kinds)
    parser.add_argument("--config", default=None, help="key = value experiment document")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument(
        "--workers",
        type=int,
        default=None,
        help="processes for information levels / budgets (default: BELIEFSIM_WORKERS or the config)",
    )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    debug_mode = os.getenv("DEBUG_MODE", False) == "True"
    logging.basicConfig(level=logging.DEBUG if debug_mode else logging.INFO)
    listener = ExperimentLogger(logger)
    register(listener)

    workers = args.workers
    if workers is None and os.getenv("BELIEFSIM_WORKERS"):
        workers = int(os.environ["BELIEFSIM_WORKERS"])
    try:
        config = load_config(args.config, args.kind, args.seed, args.out, workers)
        report = run_experiment(config)
    except BeliefSimError as error:
        logger.error("%s %s", error.message, error.extensions)
        return error.exit_code
    finally:
        unregister(listener)
    for path in report.files:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
