"""Iterative hyperparameter search over the resampling lattice.

A single sequential chain perturbs one ring parameter per iteration by a
fixed quantum, evaluates a black-box objective that reports average
precision per range, and accepts or rejects the proposal. The best vector
seen over all evaluations is tracked regardless of acceptance. The chain
checkpoints after every iteration and can resume; per-iteration random
generators are derived from (seed, iteration), so a resumed chain is
bit-identical to an uninterrupted one.
"""

from __future__ import annotations

import json
import math
import os
import shutil
import subprocess
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    ConfigError,
    EvaluationFailed,
    InvalidApVector,
    ObjectiveFailure,
)
from .geometry import RangeSpec
from .metrics import ApVector
from .resampling import Method, ResampleParams, SensorSpec, resample_pipeline

DEFAULT_SIGMA = 0.5
DEFAULT_STEP = 0.05
DGR_STEP = 0.025
RS_BOUNDS = (0.05, 1.0)
DGR_BOUNDS = (0.2, 2.0)

CHECKPOINT_NAME = "chain.json"


def default_step(method: Method) -> float:
    return DGR_STEP if Method(method) is Method.DGR else DEFAULT_STEP


def default_bounds(method: Method, sensor: SensorSpec = None) -> Tuple[float, float]:
    if Method(method) is Method.DGR:
        if sensor is None:
            return DGR_BOUNDS
        step = DGR_STEP
        lo = round(math.ceil(sensor.delta_elev / step - 1e-9) * step, 6)
        return (lo, DGR_BOUNDS[1])
    return RS_BOUNDS


def _lattice_value(steps: int, step: float) -> float:
    # canonical decimal representation keeps chain states byte-stable
    return round(steps * step, 6)


@dataclass(frozen=True)
class Proposal:
    params: ResampleParams
    ring: int
    delta: float  # signed applied step, 0.0 when degenerate
    degenerate: bool


def propose(
    theta: ResampleParams,
    rng: np.random.Generator,
    sigma: float = DEFAULT_SIGMA,
    step: float = None,
    bounds: Tuple[float, float] = None,
) -> Proposal:
    """Perturb exactly one ring parameter by one quantum.

    The ring offset is |round(j)| for j ~ N(0, sigma^2), clamped to the last
    ring, which perturbs near rings far more often than far ones. The step
    sign is a fair coin. A step that would leave [bounds] redraws the sign
    once; if the redraw also leaves the box the proposal is returned
    unchanged and flagged degenerate. Draw order from ``rng``: normal, then
    one or two uniforms.
    """
    if step is None:
        step = default_step(theta.method)
    if bounds is None:
        bounds = default_bounds(theta.method)
    n = len(theta.values)
    j = rng.normal(0.0, sigma)
    ring = min(int(abs(round(j))), n - 1)
    steps = int(round(theta.values[ring] / step))

    def stepped(sign: int) -> Optional[float]:
        value = _lattice_value(steps + sign, step)
        return value if bounds[0] <= value <= bounds[1] else None

    sign = -1 if rng.random() < 0.5 else 1
    value = stepped(sign)
    if value is None:
        sign = -1 if rng.random() < 0.5 else 1
        value = stepped(sign)
    if value is None:
        return Proposal(theta, ring, 0.0, True)
    values = list(theta.values)
    values[ring] = value
    params = ResampleParams(theta.method, tuple(values), theta.rng_seed)
    return Proposal(params, ring, sign * step, False)


def accept(
    p_new: ApVector,
    p_current: ApVector,
    rng: np.random.Generator,
    rule: str = "metropolis",
) -> bool:
    """Accept/reject on the overall AP.

    Metropolis: always accept improvements, otherwise accept with
    probability p_new/p_current (both in [0, 1]). Greedy: accept only
    improvements or ties. A zero current AP always accepts.
    """
    if rule not in ("metropolis", "greedy"):
        raise ConfigError(f"unknown acceptance rule {rule!r}")
    if p_new.overall >= p_current.overall:
        return True
    if rule == "greedy":
        return False
    if p_current.overall <= 0.0:
        return True
    return bool(rng.random() < p_new.overall / p_current.overall)


@dataclass
class HistoryEntry:
    t: int
    values: tuple
    ring: int
    delta: float
    degenerate: bool
    ap: ApVector
    accepted: bool
    failed: bool = False
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "values": list(self.values),
            "ring": self.ring,
            "delta": self.delta,
            "degenerate": self.degenerate,
            "ap": self.ap.to_dict(),
            "accepted": self.accepted,
            "failed": self.failed,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HistoryEntry":
        return cls(
            t=d["t"],
            values=tuple(d["values"]),
            ring=d["ring"],
            delta=d["delta"],
            degenerate=d["degenerate"],
            ap=ApVector.from_dict(d["ap"]),
            accepted=d["accepted"],
            failed=d.get("failed", False),
            error=d.get("error"),
        )


@dataclass
class ChainState:
    """Complete, serializable state of one optimization chain."""

    t: int
    theta_current: ResampleParams
    theta_best: ResampleParams
    p_current: ApVector
    p_best: ApVector
    rng_seed: int
    n_iter: int
    sigma: float
    step: float
    bounds: Tuple[float, float]
    acceptance: str
    accept_count: int = 0
    history: List[HistoryEntry] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "t": self.t,
            "theta_current": _params_to_dict(self.theta_current),
            "theta_best": _params_to_dict(self.theta_best),
            "p_current": self.p_current.to_dict(),
            "p_best": self.p_best.to_dict(),
            "seed": self.rng_seed,
            "n_iter": self.n_iter,
            "sigma": self.sigma,
            "step": self.step,
            "bounds": list(self.bounds),
            "acceptance": self.acceptance,
            "accept_count": self.accept_count,
            "history": [h.to_dict() for h in self.history],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChainState":
        return cls(
            t=d["t"],
            theta_current=_params_from_dict(d["theta_current"]),
            theta_best=_params_from_dict(d["theta_best"]),
            p_current=ApVector.from_dict(d["p_current"]),
            p_best=ApVector.from_dict(d["p_best"]),
            rng_seed=d["seed"],
            n_iter=d["n_iter"],
            sigma=d["sigma"],
            step=d["step"],
            bounds=tuple(d["bounds"]),
            acceptance=d["acceptance"],
            accept_count=d["accept_count"],
            history=[HistoryEntry.from_dict(h) for h in d["history"]],
        )


def _params_to_dict(p: ResampleParams) -> dict:
    return {"method": p.method.value, "values": list(p.values), "seed": p.rng_seed}


def _params_from_dict(d: dict) -> ResampleParams:
    return ResampleParams(Method(d["method"]), tuple(d["values"]), d["seed"])


def save_checkpoint(state: ChainState, workspace: Path) -> Path:
    """Atomically rewrite the chain checkpoint (write temp, then rename)."""
    workspace = Path(workspace)
    workspace.mkdir(parents=True, exist_ok=True)
    target = workspace / CHECKPOINT_NAME
    tmp = workspace / (CHECKPOINT_NAME + ".tmp")
    tmp.write_text(json.dumps(state.to_dict(), indent=2, sort_keys=True) + "\n")
    os.replace(tmp, target)
    return target


def load_checkpoint(workspace: Path) -> ChainState:
    path = Path(workspace) / CHECKPOINT_NAME
    return ChainState.from_dict(json.loads(path.read_text()))


class Objective:
    """Black-box evaluator contract: parameters in, AP vector out.

    Evaluations may be stochastic and expensive (e.g. fine-tune a detector
    on resampled data behind a process boundary); no purity is assumed.
    """

    def evaluate(self, theta: ResampleParams, iteration: int) -> ApVector:
        raise NotImplementedError


class SurrogateObjective(Objective):
    """Analytic stand-in: overall AP = max(0, 1 - sum((v - target)^2))."""

    def __init__(self, target: Sequence[float], n_rings: int = 5):
        self.target = tuple(float(v) for v in target)
        self.n_rings = n_rings

    def evaluate(self, theta: ResampleParams, iteration: int) -> ApVector:
        score = max(
            0.0, 1.0 - sum((v - t) ** 2 for v, t in zip(theta.values, self.target))
        )
        return ApVector(min(score, 1.0), (0.0,) * self.n_rings)


class ConstantObjective(Objective):
    def __init__(self, ap: ApVector):
        self.ap = ap

    def evaluate(self, theta: ResampleParams, iteration: int) -> ApVector:
        return self.ap


class ExternalObjective(Objective):
    """Run an external evaluator process per iteration.

    Protocol: the chain writes ``<workspace>/iter_<t>/theta.json`` with
    {"method", "values", "seed"} plus the resampled train/val frames, then
    invokes ``command + [iter_dir]``. The evaluator must write
    ``<workspace>/iter_<t>/ap.json`` as {"overall": float, "ranges": [5
    floats]} and exit 0 within the timeout. Timeouts, non-zero exits and
    malformed AP documents raise EvaluationFailed, which the chain records
    as a rejected zero-AP proposal and survives.
    """

    def __init__(
        self,
        command: Sequence[str],
        workspace: Path,
        dataset=None,
        train_ids: Sequence[str] = (),
        val_ids: Sequence[str] = (),
        range_spec: RangeSpec = None,
        sensor: SensorSpec = None,
        timeout_sec: float = 3600.0,
    ):
        self.command = list(command)
        self.workspace = Path(workspace)
        self.dataset = dataset
        self.train_ids = list(train_ids)
        self.val_ids = list(val_ids)
        self.range_spec = range_spec or RangeSpec()
        self.sensor = sensor
        self.timeout_sec = timeout_sec

    def _materialize(self, theta: ResampleParams, iter_dir: Path) -> None:
        from .io import read_cloud, write_cloud  # lazy: optional heavy path

        for split, ids in (("train", self.train_ids), ("val", self.val_ids)):
            if not ids:
                continue
            points_dir = iter_dir / split / "points"
            labels_dir = iter_dir / split / "labels"
            points_dir.mkdir(parents=True, exist_ok=True)
            labels_dir.mkdir(parents=True, exist_ok=True)
            for frame_id in ids:
                cloud = read_cloud(self.dataset.points_path(frame_id))
                out, _ = resample_pipeline(cloud, self.range_spec, theta, self.sensor)
                write_cloud(out, points_dir / f"{frame_id}.bin")
                label_src = self.dataset.labels_path(frame_id)
                if label_src.exists():
                    shutil.copyfile(label_src, labels_dir / f"{frame_id}.json")
            manifest = iter_dir / split / "manifest.txt"
            manifest.write_text("".join(f"{fid}\n" for fid in ids))

    def evaluate(self, theta: ResampleParams, iteration: int) -> ApVector:
        iter_dir = self.workspace / f"iter_{iteration}"
        iter_dir.mkdir(parents=True, exist_ok=True)
        (iter_dir / "theta.json").write_text(
            json.dumps(_params_to_dict(theta), sort_keys=True) + "\n"
        )
        if self.dataset is not None:
            self._materialize(theta, iter_dir)
        try:
            proc = subprocess.run(
                self.command + [str(iter_dir)],
                timeout=self.timeout_sec,
                capture_output=True,
            )
        except subprocess.TimeoutExpired as exc:
            raise EvaluationFailed(f"evaluator timed out after {self.timeout_sec}s") from exc
        if proc.returncode != 0:
            raise EvaluationFailed(
                f"evaluator exited {proc.returncode}: {proc.stderr.decode(errors='replace')[-500:]}"
            )
        ap_path = iter_dir / "ap.json"
        try:
            return ApVector.from_dict(json.loads(ap_path.read_text()))
        except FileNotFoundError as exc:
            raise EvaluationFailed("evaluator wrote no ap.json") from exc
        except (json.JSONDecodeError, InvalidApVector) as exc:
            raise EvaluationFailed(f"malformed ap.json: {exc}") from exc


def run_chain(
    objective: Objective,
    init: ResampleParams,
    n_iter: int,
    rng_seed: int,
    workspace: Path = None,
    sigma: float = DEFAULT_SIGMA,
    step: float = None,
    bounds: Tuple[float, float] = None,
    acceptance: str = "metropolis",
    stop_after: int = None,
    resume: bool = False,
) -> ChainState:
    """Run (or resume) the sequential search chain.

    Each iteration derives its generator from (rng_seed, t), proposes,
    evaluates, applies the acceptance rule, updates the best-seen vector on
    strict improvement, appends to the history, and checkpoints to
    ``workspace`` when one is given. ``stop_after`` halts cleanly after that
    iteration's checkpoint; a later ``resume=True`` run continues and
    reproduces the uninterrupted chain exactly. A failed evaluation is
    recorded as a rejected zero-AP proposal; an unexpected objective error
    aborts with ObjectiveFailure after checkpointing.
    """
    if n_iter < 1:
        raise ConfigError("n_iter must be >= 1")
    if step is None:
        step = default_step(init.method)
    if bounds is None:
        bounds = default_bounds(init.method)

    if resume:
        if workspace is None:
            raise ConfigError("resume needs a workspace")
        state = load_checkpoint(workspace)
        if (state.rng_seed, state.n_iter) != (rng_seed, n_iter):
            raise ConfigError(
                "checkpoint was produced by a different run "
                f"(seed {state.rng_seed}, n_iter {state.n_iter})"
            )
    else:
        n_rings = len(init.values)
        state = ChainState(
            t=0,
            theta_current=init,
            theta_best=init,
            p_current=ApVector.zeros(n_rings),
            p_best=ApVector.zeros(n_rings),
            rng_seed=rng_seed,
            n_iter=n_iter,
            sigma=sigma,
            step=step,
            bounds=tuple(bounds),
            acceptance=acceptance,
        )
        if workspace is not None:
            save_checkpoint(state, workspace)

    for t in range(state.t + 1, n_iter + 1):
        rng = np.random.default_rng([state.rng_seed, t])
        prop = propose(state.theta_current, rng, state.sigma, state.step, state.bounds)
        failed = False
        error = None
        try:
            ap = objective.evaluate(prop.params, t)
        except EvaluationFailed as exc:
            ap = ApVector.zeros(len(init.values))
            failed = True
            error = str(exc)
        except InvalidApVector:
            if workspace is not None:
                save_checkpoint(state, workspace)
            raise
        except Exception as exc:
            if workspace is not None:
                save_checkpoint(state, workspace)
            raise ObjectiveFailure(t, f"iteration {t}: {exc}") from exc

        accepted = False if failed else accept(ap, state.p_current, rng, state.acceptance)
        if accepted:
            state.theta_current = prop.params
            state.p_current = ap
            state.accept_count += 1
        if not failed and ap.overall > state.p_best.overall:
            state.theta_best = prop.params
            state.p_best = ap
        state.history.append(
            HistoryEntry(
                t=t,
                values=prop.params.values,
                ring=prop.ring,
                delta=prop.delta,
                degenerate=prop.degenerate,
                ap=ap,
                accepted=accepted,
                failed=failed,
                error=error,
            )
        )
        state.t = t
        if workspace is not None:
            save_checkpoint(state, workspace)
        if stop_after is not None and t >= stop_after:
            break
    return state
