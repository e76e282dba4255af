# app/models/config.py
"""Configuration models for graph construction, solvers and the pipeline.

Every model forbids unknown keys and every field has a default, so an empty
TOML file is a valid configuration. `load_pipeline_config` is the single entry
point used by the CLI and the HTTP layer; it turns any validation problem into
`ConfigError`.

TOML layout
-----------
``[graph]`` GraphParams, ``[pgd]`` inner solver for the graph weights,
``[joint]`` JointConfig, ``[nodewise]`` NodewiseConfig (with an optional
``[nodewise.parallel]``), ``[online]`` OnlineParams and ``[pipeline]`` for the
remaining pipeline options.
"""
from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from app.errors import ConfigError

InitKind = Literal["random", "identity", "uniform"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PgdConfig(_Strict):
    """Projected-gradient settings (iteration cap, stopping rule, step rule)."""

    max_iters: int = Field(default=500, ge=1, description="Iteration cap")
    tol: float = Field(default=1e-8, gt=0, description="Relative objective decrease threshold")
    step_rule: Literal["fixed", "backtracking"] = Field(default="backtracking")
    step: float = Field(default=1.0, gt=0, description="Fixed step, or the initial trial step for backtracking")
    beta: float = Field(default=0.5, gt=0, lt=1, description="Backtracking shrink factor")
    armijo: float = Field(default=1e-4, gt=0, lt=1, description="Sufficient-decrease constant")


class GraphParams(_Strict):
    """Offline graph construction parameters.

    ``alphas[0]`` weighs the spatio-temporal graph; ``alphas[l]`` for ``l >= 1``
    weighs the appearance graph of feature id ``l``.
    """

    window: int = Field(default=10, ge=1, description="Spatio-temporal window T in frames")
    gamma: float = Field(default=3.0, ge=0, description="Time scaling in units per frame")
    v_max: float = Field(default=10.0, gt=0, description="Gating speed in units per frame")
    delta: float = Field(default=1e-2, ge=0, description="Ridge added to the reconstruction QP")
    app_neighbors: Optional[int] = Field(
        default=30, ge=0, description="Cap on appearance neighbours; 0 or null disables the cap"
    )
    alphas: list[float] = Field(default_factory=lambda: [1.0, 0.5], min_length=1)
    tracklet_window: int = Field(default=100, ge=1, description="Window used instead of T when nodes are tracklets")

    @field_validator("alphas")
    @classmethod
    def _nonnegative(cls, v: list[float]) -> list[float]:
        if any(a < 0 for a in v):
            raise ValueError("alphas must be >= 0")
        return v


class JointConfig(_Strict):
    t_joint: int = Field(default=200, ge=1, description="Outer MM iteration cap")
    inner: PgdConfig = Field(default_factory=PgdConfig)
    outer_tol: float = Field(default=1e-7, gt=0)
    seed: int = 0
    init: InitKind = "random"


class ParallelConfig(_Strict):
    workers: int = Field(default=1, ge=1)
    batcher: Literal["greedy_mis"] = "greedy_mis"


class NodewiseConfig(_Strict):
    t_con: int = Field(default=50, ge=1, description="Sweep count cap")
    inner: PgdConfig = Field(default_factory=PgdConfig)
    mm_iters: int = Field(default=50, ge=1, description="MM iterations per node for non-quadratic losses")
    sweep_order: Literal["sequential", "random"] = "sequential"
    tol: float = Field(default=1e-8, gt=0, description="Early stop when a sweep improves g by less than this, relative")
    seed: int = 0
    init: InitKind = "random"
    parallel: Optional[ParallelConfig] = None


class CueParams(_Strict):
    """Heat-kernel connection settings for one cue."""

    window: int = Field(..., ge=1, description="Connection window T_c in frames")
    sigma: float = Field(..., gt=0, description="Heat parameter")


class OnlineParams(_Strict):
    spatiotemporal: CueParams = Field(default_factory=lambda: CueParams(window=10, sigma=20.0))
    appearance: CueParams = Field(default_factory=lambda: CueParams(window=200, sigma=0.05))
    appearance_overrides: dict[int, CueParams] = Field(
        default_factory=dict, description="Per feature-id replacements for `appearance`"
    )
    observation_window: int = Field(default=50, ge=1, description="T_o: trailing window of mutable nodes")
    gamma: float = Field(default=3.0, ge=0)
    v_max: float = Field(default=10.0, gt=0)
    alphas: list[float] = Field(default_factory=lambda: [1.0, 0.5], min_length=1)
    border_sigma: float = Field(default=20.0, gt=0)
    image_bounds: Optional[tuple[float, float, float, float]] = Field(
        default=None, description="x_min, y_min, x_max, y_max; without bounds only start-frame nodes get a source edge"
    )
    start_frame: Optional[int] = Field(
        default=None, ge=0, description="Detections at or before this frame get source weight 1; default is the first frame seen"
    )
    normalization_floor: float = Field(default=1e-6, gt=0)
    aggregate_tracklets: bool = False
    tracklet_distance: float = Field(default=15.0, gt=0)

    def cue_for(self, feature_id: int) -> CueParams:
        return self.appearance_overrides.get(feature_id, self.appearance)


class MatchRule(_Strict):
    """Ground-truth/track matching rule: ``iou:0.5`` or ``dist:30``."""

    kind: Literal["iou", "dist"]
    threshold: float = Field(..., gt=0)

    @classmethod
    def parse(cls, text: Union[str, "MatchRule"]) -> "MatchRule":
        if isinstance(text, MatchRule):
            return text
        kind, sep, value = str(text).partition(":")
        if not sep:
            raise ValueError(f"match rule must look like 'iou:0.5' or 'dist:30', got {text!r}")
        try:
            threshold = float(value)
        except ValueError as exc:
            raise ValueError(f"match threshold is not a number: {value!r}") from exc
        return cls(kind=kind.strip().lower(), threshold=threshold)

    def __str__(self) -> str:
        return f"{self.kind}:{self.threshold:g}"


class PipelineOptions(_Strict):
    solver: Literal["joint", "nodewise"] = "nodewise"
    init: Optional[InitKind] = Field(
        default=None, description="Overrides the starting labels; by default joint uses [joint].init, node-wise starts from identity"
    )
    refine_rounds: int = Field(default=10, ge=0, description="Split/merge rounds after the solve; 0 skips refinement")
    refine_link_floor: float = Field(
        default=0.05, ge=0, description="Links lighter than this may be cut when regrouping labels; 0 disables regrouping"
    )
    build_tracklets: bool = False
    tracklet_distance: float = Field(default=15.0, gt=0, description="Low-level tracker linking distance")
    strip_overlap: bool = False
    max_overlap: float = Field(default=0.05, gt=0, le=1)
    min_length: int = Field(default=10, ge=1)
    min_conf: float = Field(default=0.8, gt=0, le=1)
    match: str = "iou:0.5"
    detection_format: Literal["mot_csv", "apidis_csv"] = "mot_csv"

    @field_validator("match")
    @classmethod
    def _valid_match(cls, v: str) -> str:
        MatchRule.parse(v)
        return v

    @property
    def match_rule(self) -> MatchRule:
        return MatchRule.parse(self.match)


class PipelineConfig(_Strict):
    graph: GraphParams = Field(default_factory=GraphParams)
    pgd: PgdConfig = Field(default_factory=PgdConfig)
    joint: JointConfig = Field(default_factory=JointConfig)
    nodewise: NodewiseConfig = Field(default_factory=NodewiseConfig)
    online: OnlineParams = Field(default_factory=OnlineParams)
    pipeline: PipelineOptions = Field(default_factory=PipelineOptions)

    def with_updates(self, **sections: dict[str, Any]) -> "PipelineConfig":
        """Return a copy with the given tables partially overridden and re-validated."""
        data = self.model_dump()
        for name, values in sections.items():
            data[name] = {**data[name], **values}
        return validate_pipeline_config(data)


def validate_pipeline_config(data: dict[str, Any]) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_pipeline_config(path: Optional[Union[str, Path]] = None) -> PipelineConfig:
    """Read a TOML configuration file; ``None`` yields the defaults."""
    if path is None:
        return PipelineConfig()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    return validate_pipeline_config(data)
