"""Episode batches, sweeps and their aggregate metrics."""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from disprod.baselines import run_shooting_episode
from disprod.envs import make_env
from disprod.errors import ArgumentError
from disprod.optimizer import run_episode

log = logging.getLogger(__name__)

RESULT_COLUMNS = (
    "experiment_id",
    "axis",
    "value",
    "planner",
    "mean_return",
    "std_return",
    "sr",
    "sl",
    "mean_steps",
    "wall_ms",
)
EPISODE_COLUMNS = ("experiment_id", "axis", "value", "planner", "repetition", "run", "seed", "status", "total_reward", "steps", "success", "first_success_step", "sl", "wall_ms", "error")


def derive_seed(base, repetition, run):
    """Independent per-episode seed; depends only on (base, repetition, run)."""
    return int(np.random.SeedSequence([int(base) & 0xFFFFFFFF, repetition, run]).generate_state(1)[0])


def compute_sl(trajectory, start, goal, success, goal_radius=0.0):
    """Path length over the shortest distance to the goal region, for a successful episode, else ``None``.

    The shortest distance is ``|goal - start| - goal_radius``, so any path
    that ends in the region scores at least 1.  Raises :class:`ArgumentError`
    for an empty trajectory or a start already inside the region.
    """
    pts = np.asarray(trajectory, dtype=float)
    if pts.size == 0:
        raise ArgumentError("trajectory must be nonempty")
    pts = pts.reshape(len(pts), -1)[:, :2]
    straight = float(np.hypot(*(np.asarray(goal, dtype=float)[:2] - np.asarray(start, dtype=float)[:2]))) - goal_radius
    if straight <= 0.0:
        raise ArgumentError("start lies in the goal region; path-length ratio undefined")
    if not success:
        return None
    path = float(np.hypot(*np.diff(pts, axis=0).T).sum()) if len(pts) > 1 else 0.0
    return path / straight


@dataclass
class EpisodeRecord:
    experiment_id: str
    axis: str
    value: object
    planner: str
    repetition: int
    run: int
    seed: int
    status: str = "ok"
    total_reward: float = float("nan")
    steps: int = 0
    success: Optional[bool] = None
    first_success_step: Optional[int] = None
    sl: Optional[float] = None
    wall_ms: float = 0.0
    error: str = ""


@dataclass
class MetricsRow:
    experiment_id: str
    axis: str
    value: object
    planner: str
    mean_return: Optional[float]
    std_return: Optional[float]
    sr: Optional[float]
    sl: Optional[float]
    mean_steps: Optional[float]
    wall_ms: Optional[float]
    partial: bool = False

    def csv_row(self):
        return [_fmt(getattr(self, c)) for c in RESULT_COLUMNS]


@dataclass
class ExperimentResult:
    rows: List[MetricsRow]
    episodes: List[EpisodeRecord] = field(default_factory=list)

    @property
    def partial(self):
        return any(r.partial for r in self.rows)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(v)
    return str(v)


def _apply_axis(spec, value):
    env_params = dict(spec.env.params)
    overrides = {}
    axis = spec.sweep.axis
    if axis in ("alpha", "beta", "n_redundant", "map"):
        env_params[axis] = int(value) if axis == "n_redundant" else (value if axis == "map" else float(value))
    elif axis == "depth":
        overrides["depth"] = int(value)
    elif axis == "restarts":
        overrides["restarts" if spec.planner.kind == "disprod" else "population"] = int(value)
    return env_params, overrides


def run_episode_for(model, spec, config, seed):
    rng = np.random.default_rng(seed)
    if spec.planner.kind == "disprod":
        return run_episode(model, config, spec.episode_cap, rng, spec.stop_on_success)
    return run_shooting_episode(model, spec.planner.kind, config, spec.episode_cap, rng, spec.stop_on_success)


def _episode_sl(model, result):
    world = model.params.get("map") if model.name == "dubins" else None
    if world is None:
        return None
    return compute_sl(result.trajectory, world.start, world.goal, result.success, world.goal_radius)


def _success_defined(model):
    return model.success is not None or model.terminal is not None


def aggregate(spec, axis_value, records, model, partial=False):
    done = [r for r in records if r.status == "ok"]
    axis = spec.sweep.axis
    value = "" if axis_value is None else axis_value
    if not done:
        return MetricsRow(spec.id, axis, value, spec.planner.kind, None, None, None, None, None, None, partial=True)
    by_rep = {}
    for r in done:
        by_rep.setdefault(r.repetition, []).append(r.total_reward)
    rep_means = np.array([np.mean(v) for _, v in sorted(by_rep.items())])
    sr = 100.0 * float(np.mean([bool(r.success) for r in done])) if _success_defined(model) else None
    sls = [r.sl for r in done if r.sl is not None]
    return MetricsRow(
        experiment_id=spec.id,
        axis=axis,
        value=value,
        planner=spec.planner.kind,
        mean_return=float(rep_means.mean()),
        std_return=float(rep_means.std()),
        sr=sr,
        sl=float(np.mean(sls)) if sls else None,
        mean_steps=float(np.mean([r.steps for r in done])),
        wall_ms=float(np.mean([r.wall_ms for r in done])) if spec.record_wall_time else None,
        partial=partial,
    )


def run_experiment(spec, progress=None):
    """Run ``repetitions x runs_per_repetition`` episodes for every axis value.

    Seeds depend only on (seed, repetition, run), so every axis value and
    planner faces the same initial states and noise streams.  An episode
    that raises aborts its axis value; the remaining values still run and
    the aborted one is reported as partial.
    """
    rows, episodes = [], []
    for value in spec.axis_values():
        env_params, overrides = _apply_axis(spec, value)
        records = []
        partial = False
        try:
            model = make_env(spec.env.name, env_params)
            config = spec.planner.build(spec.seed, **overrides)
        except (ArgumentError, ValueError) as exc:
            log.error("axis value %s rejected: %s", value, exc)
            rec = EpisodeRecord(spec.id, spec.sweep.axis, value, spec.planner.kind, -1, -1, spec.seed, status="error", error=str(exc))
            episodes.append(rec)
            rows.append(MetricsRow(spec.id, spec.sweep.axis, value, spec.planner.kind, None, None, None, None, None, None, partial=True))
            continue
        for rep in range(spec.repetitions):
            for run in range(spec.runs_per_repetition):
                seed = derive_seed(spec.seed, rep, run)
                rec = EpisodeRecord(spec.id, spec.sweep.axis, "" if value is None else value, spec.planner.kind, rep, run, seed)
                try:
                    res = run_episode_for(model, spec, config, seed)
                except Exception as exc:  # noqa: BLE001 - any crash marks the axis value partial
                    log.error("episode (value=%s, rep=%d, run=%d) failed: %s", value, rep, run, exc)
                    rec.status, rec.error = "error", f"{type(exc).__name__}: {exc}"
                    records.append(rec)
                    partial = True
                    break
                rec.total_reward = res.total_reward
                rec.steps = res.steps
                rec.success = res.success if _success_defined(model) else None
                rec.first_success_step = res.first_success_step
                rec.sl = _episode_sl(model, res)
                rec.wall_ms = res.mean_plan_ms
                records.append(rec)
                if progress:
                    progress(rec)
            if partial:
                break
        episodes.extend(records)
        rows.append(aggregate(spec, value, records, model, partial))
    return ExperimentResult(rows, episodes)


def write_results(rows, path):
    """Write metric rows under the fixed header; an empty list gives a header-only file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow(row.csv_row())
    return path


def write_episodes(records, path, record_wall_time=True):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EPISODE_COLUMNS)
        for rec in records:
            d = asdict(rec)
            if not record_wall_time:
                d["wall_ms"] = None
            writer.writerow([_fmt(d[c]) for c in EPISODE_COLUMNS])
    return path


def read_results(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
