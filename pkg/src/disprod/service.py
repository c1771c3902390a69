"""HTTP service over the planners and the experiment harness."""

from typing import Any, Dict, List, Literal, Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field

from disprod import __version__
from disprod.baselines import PLANNERS, ShootingConfig, ShootingSaved
from disprod.envs import CATALOG, env_parameters, make_env
from disprod.errors import ArgumentError, DomainError, PropagationError
from disprod.harness import ExperimentSpec, run_distribution_study, run_experiment
from disprod.optimizer import PlannerConfig, SavedActions, plan_one_step

app = FastAPI(title="disprod", version=__version__)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PlanRequest(_Strict):
    env: str
    env_params: Dict[str, Any] = Field(default_factory=dict)
    state: List[float]
    planner: Literal["disprod", "cem", "mppi"] = "disprod"
    settings: Dict[str, Any] = Field(default_factory=dict)
    seed: int = 0
    saved_mean: Optional[List[List[float]]] = None
    saved_var: Optional[List[List[float]]] = None


class PlanResponse(BaseModel):
    action: List[float]
    saved_mean: Optional[List[List[float]]] = None
    saved_var: Optional[List[List[float]]] = None
    diagnostics: Dict[str, Any]


class MetricsOut(BaseModel):
    experiment_id: str
    axis: str
    value: Any
    planner: str
    mean_return: Optional[float]
    std_return: Optional[float]
    sr: Optional[float]
    sl: Optional[float]
    mean_steps: Optional[float]
    wall_ms: Optional[float]
    partial: bool


class ExperimentResponse(BaseModel):
    rows: List[MetricsOut]
    partial: bool


class StudyRequest(_Strict):
    env: Literal["simple_env", "pendulum"] = "simple_env"
    alphas: List[float] = Field(default_factory=lambda: [0.1, 0.2, 0.25])
    depth: int = Field(20, ge=1)
    samples: int = Field(10_000, ge=100)
    policy: Literal["random", "deterministic", "planner"] = "random"
    seed: int = 0


class StudyResponse(BaseModel):
    rows: List[Dict[str, Any]]


def _bad_request(exc):
    return HTTPException(status_code=422, detail=str(exc))


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.get("/envs")
def list_envs():
    return {name: {k: v for k, v in env_parameters(name).items() if not callable(v)} for name in CATALOG}


@app.post("/plan", response_model=PlanResponse)
def plan(req: PlanRequest):
    try:
        model = make_env(req.env, req.env_params)
        rng = np.random.default_rng(req.seed)
        state = np.asarray(req.state, dtype=float)
        if req.planner == "disprod":
            cfg = PlannerConfig(**req.settings)
            saved = SavedActions(np.asarray(req.saved_mean), np.asarray(req.saved_var)) if req.saved_mean else None
            action, new_saved, diag = plan_one_step(model, state, cfg, saved, rng)
            return PlanResponse(
                action=action.tolist(),
                saved_mean=None if new_saved.is_empty else new_saved.mean.tolist(),
                saved_var=None if new_saved.is_empty else new_saved.var.tolist(),
                diagnostics=diag.to_dict(),
            )
        cfg = ShootingConfig(**req.settings)
        saved = ShootingSaved(np.asarray(req.saved_mean)) if req.saved_mean else None
        action, new_saved, diag = PLANNERS[req.planner](model, state, cfg, saved, rng)
        return PlanResponse(
            action=action.tolist(),
            saved_mean=None if new_saved is None else new_saved.mean.tolist(),
            diagnostics=diag.to_dict(),
        )
    except (ArgumentError, DomainError, PropagationError, TypeError) as exc:
        raise _bad_request(exc) from exc


@app.post("/experiments", response_model=ExperimentResponse)
def experiments(spec: ExperimentSpec):
    result = run_experiment(spec)
    rows = [MetricsOut(**{k: getattr(r, k) for k in MetricsOut.model_fields}) for r in result.rows]
    return ExperimentResponse(rows=rows, partial=result.partial)


@app.post("/study", response_model=StudyResponse)
def study(req: StudyRequest):
    try:
        results = run_distribution_study(req.env, req.alphas, req.depth, req.policy, req.samples, req.seed)
    except ArgumentError as exc:
        raise _bad_request(exc) from exc
    return StudyResponse(rows=[row for res in results for row in res.rows()])
