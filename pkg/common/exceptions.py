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
from typing import Any, Dict, Optional


class BeliefSimError(Exception):
    """
    Base error. Carries an `extensions` dict with an upper-case code and the
    keys that identify what failed, and the process exit code the CLI uses.
    """

    code = "BELIEFSIM_ERROR"
    exit_code = 1

    def __init__(self, message: str, key_dict: Optional[Dict[str, Any]] = None):
        self.extensions: Dict[str, Any] = {"code": self.code}
        key_dict = key_dict or {}
        if key_dict:
            ids_string = ", ".join([f"{key}={val}" for key, val in key_dict.items()])
            message = f"{message} ({ids_string})"
        self.extensions.update(key_dict)
        self.message = message
        super().__init__(message)


class InvalidInputError(BeliefSimError):
    """
    Raised when an argument violates an operation's precondition
    """

    code = "INVALID_INPUT"
    exit_code = 2

    def __init__(self, field: str, reason: str, **keys: Any):
        super().__init__(f"Invalid {field}: {reason}", {"field": field, **keys})


class NumericalFailureError(BeliefSimError):
    """
    Raised when an iteration fails to converge or a state becomes non-finite
    """

    code = "NUMERICAL_FAILURE"
    exit_code = 3

    def __init__(self, operation: str, reason: str, **keys: Any):
        super().__init__(f"{operation} failed: {reason}", {"operation": operation, **keys})


class SaturationError(NumericalFailureError):
    """
    Raised when a value leaves the representable double range
    """

    code = "SATURATED"


class ConfigError(BeliefSimError):
    """
    Raised for unreadable, incomplete or unknown configuration entries
    """

    code = "CONFIG_ERROR"
    exit_code = 2

    def __init__(self, reason: str, **keys: Any):
        super().__init__(f"Configuration error: {reason}", keys)
