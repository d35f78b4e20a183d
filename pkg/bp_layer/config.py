"""Training configuration and learnable model parameters."""

from copy import deepcopy
from dataclasses import dataclass, field
from json import JSONDecodeError, dump, load
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import jsonpickle
import numpy as np

from bp_layer import log
from bp_layer.errors import ERROR_BAD_FILE, InputError
from bp_layer.grid_model import (
    JUMP_FIELDS,
    CompatMatrix,
    FullMatrix,
    JumpParams,
    PairwiseSpec,
    Temperature,
    TruncatedJump,
)

DEFAULT_LEARNING_RATE: float = 0.05
DEFAULT_STEPS: int = 200
DEFAULT_HUBER_DELTA: float = 1.0
DEFAULT_REFINE_TAU: int = 3
DEFAULT_SEED: int = 0
DEFAULT_LEVELS: int = 3
DEFAULT_MAX_DISP: int = 15
DEFAULT_BETA: float = 1.0
DEFAULT_CENSUS_WINDOW: int = 5
DEFAULT_ALGO: str = "bp"

DEFAULT_TEMPERATURE: float = 1.0
DEFAULT_PENALTIES: Dict[str, float] = {
    "p1_pos": 0.2,
    "p1_neg": 0.2,
    "p2_pos": 0.4,
    "p2_neg": 0.4,
    "p3": 0.6,
}

ALGOS = ("bp", "sgm", "wta")

_DEFAULTS: Dict[str, Any] = {
    "learning_rate": DEFAULT_LEARNING_RATE,
    "steps": DEFAULT_STEPS,
    "huber_delta": DEFAULT_HUBER_DELTA,
    "refine_tau": DEFAULT_REFINE_TAU,
    "seed": DEFAULT_SEED,
    "levels": DEFAULT_LEVELS,
    "max_disp": DEFAULT_MAX_DISP,
    "beta": DEFAULT_BETA,
    "census_window": DEFAULT_CENSUS_WINDOW,
    "algo": DEFAULT_ALGO,
}


class TrainConfig:
    """Loads training configuration.

    Attributes:
        learning_rate: Gradient-descent step size; 0 freezes the parameters.
        steps: Number of training steps.
        huber_delta: Huber threshold in label units.
        refine_tau: Half width of the sub-pixel refinement window.
        seed: Seed for every random choice of a run.
        levels: Number of pyramid levels.
        max_disp: Largest disparity searched at full resolution.
        beta: Sharpness of the image-derived edge weights.
        census_window: Census window size.
        algo: Inference algorithm, one of ``ALGOS``.
    """

    learning_rate: float
    steps: int
    huber_delta: float
    refine_tau: int
    seed: int
    levels: int
    max_disp: int
    beta: float
    census_window: int
    algo: str

    def __init__(
        self,
        file_path: Optional[Union[str, Path]] = None,
        write_back: bool = False,
        **overrides: Any,
    ) -> None:
        """Initialize the training configuration.

        Args:
            file_path: JSON file to load; a missing file means all defaults.
            write_back: Save the completed settings back to ``file_path``
                when they differ from what was loaded.
            overrides: Values taking precedence over the file.

        Raises:
            InputError: Unreadable file or invalid values.
        """
        data: Dict[str, Any] = {}
        if file_path is not None:
            try:
                with open(file_path, encoding="utf-8") as config_file:
                    data = load(config_file)
            except FileNotFoundError:
                data = {}
            except JSONDecodeError as error:
                raise InputError(ERROR_BAD_FILE.format(path=file_path, reason=error)) from None
        loaded_data = deepcopy(data)

        unknown = set(data) - set(_DEFAULTS)
        if unknown:
            log.warning(f"Ignoring unknown configuration keys: {sorted(unknown)}")
        for key, value in _DEFAULTS.items():
            data[key] = data.get(key, value)
        data.update({k: v for k, v in overrides.items() if v is not None})
        log.debug(f"Configuration is: {data}")

        if write_back and file_path is not None and loaded_data != data:
            log.info("Saving the completed configuration...")
            with open(file_path, "w", encoding="utf-8") as config_file:
                dump(data, config_file, indent=2)

        self.learning_rate = float(data["learning_rate"])
        self.steps = int(data["steps"])
        self.huber_delta = float(data["huber_delta"])
        self.refine_tau = int(data["refine_tau"])
        self.seed = int(data["seed"])
        self.levels = int(data["levels"])
        self.max_disp = int(data["max_disp"])
        self.beta = float(data["beta"])
        self.census_window = int(data["census_window"])
        self.algo = str(data["algo"])
        self._validate()

    def _validate(self) -> None:
        if self.learning_rate < 0:
            raise InputError(f"learning_rate must be non-negative, got {self.learning_rate}")
        for name in ("steps", "refine_tau", "levels", "max_disp"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.huber_delta <= 0:
            raise InputError(f"huber_delta must be positive, got {self.huber_delta}")
        if self.beta < 0:
            raise InputError(f"beta must be non-negative, got {self.beta}")
        if self.algo not in ALGOS:
            raise InputError(f"algo must be one of {ALGOS}, got {self.algo!r}")

    def as_dict(self) -> Dict[str, Any]:
        return {key: getattr(self, key) for key in _DEFAULTS}


def spec_to_dict(spec: PairwiseSpec) -> Dict[str, Any]:
    if isinstance(spec, TruncatedJump):
        return {"jump": {name: float(getattr(spec.params, name)) for name in JUMP_FIELDS}}
    return {
        "matrix": {
            "horizontal": spec.matrix.horizontal.tolist(),
            "vertical": spec.matrix.vertical.tolist(),
        }
    }


def spec_from_dict(data: Dict[str, Any]) -> PairwiseSpec:
    """Build a pairwise model from ``{"jump": {...}}`` or ``{"matrix": {...}}``."""
    if "jump" in data:
        unknown = set(data["jump"]) - set(JUMP_FIELDS)
        if unknown:
            raise InputError(f"Unknown jump penalties: {sorted(unknown)}")
        return TruncatedJump(JumpParams(**{k: float(v) for k, v in data["jump"].items()}))
    if "matrix" in data:
        matrix = data["matrix"]
        return FullMatrix(
            CompatMatrix(np.asarray(matrix["horizontal"]), np.asarray(matrix["vertical"]))
        )
    raise InputError(f"Pairwise entry needs a 'jump' or 'matrix' key, got {sorted(data)}")


@dataclass
class ModelParams:
    """Learnable state: the temperature and one pairwise model per level.

    Levels run coarse to fine.
    """

    temperature: float = DEFAULT_TEMPERATURE
    levels: List[PairwiseSpec] = field(default_factory=list)

    def __post_init__(self) -> None:
        Temperature(self.temperature)

    @classmethod
    def default_jump(
        cls, levels: int, penalties: Optional[Dict[str, float]] = None
    ) -> "ModelParams":
        values = penalties or DEFAULT_PENALTIES
        return cls(
            DEFAULT_TEMPERATURE,
            [TruncatedJump(JumpParams(**values)) for _ in range(levels)],
        )

    @classmethod
    def default_matrix(
        cls, labels: List[int], penalties: Optional[Dict[str, float]] = None
    ) -> "ModelParams":
        """Matrices ``M[s, t] = p3 - theta(t - s)`` matching the default jump model.

        ``labels`` holds the label count of every level, coarse to fine.
        While ``p3`` is the largest penalty the shift is a constant per edge
        and the beliefs equal those of the jump model.
        """
        jump = JumpParams(**(penalties or DEFAULT_PENALTIES))
        levels = []
        for size in labels:
            s = np.arange(size)
            delta = s[None, :] - s[:, None]
            matrix = jump.p3 - np.vectorize(jump.theta)(delta).astype(np.float64)
            matrix = np.maximum(matrix, 0.0)
            levels.append(FullMatrix(CompatMatrix(matrix, matrix.copy())))
        return cls(DEFAULT_TEMPERATURE, levels)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "temperature": float(self.temperature),
            "levels": [spec_to_dict(spec) for spec in self.levels],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelParams":
        try:
            return cls(
                float(data.get("temperature", DEFAULT_TEMPERATURE)),
                [spec_from_dict(level) for level in data["levels"]],
            )
        except (KeyError, TypeError) as error:
            raise InputError(f"Malformed parameter data: {error!r}") from None

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ModelParams":
        try:
            with open(path, encoding="utf-8") as params_file:
                data = load(params_file)
        except FileNotFoundError:
            raise InputError(ERROR_BAD_FILE.format(path=path, reason="no such file")) from None
        except JSONDecodeError as error:
            raise InputError(ERROR_BAD_FILE.format(path=path, reason=error)) from None
        log.debug(f"Loaded parameters from {path}")
        return cls.from_dict(data)

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as params_file:
            params_file.write(jsonpickle.encode(self.to_dict(), unpicklable=False, indent=2))
        log.debug(f"Saved parameters to {path}")
