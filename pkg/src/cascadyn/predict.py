"""Cascade-level prediction from per-user behavioral dynamics.

The basic model aggregates one term per observed user: the user's observed
reply count, divided by the fraction of their followers' responses expected
to have arrived by the observation horizon (deathrate), times the fraction
expected by the prediction horizon (fdrate). Both rates are floored at
1/|V| so no division can blow up.

The sampling estimator maintains the same final-size aggregate online while
recalculating each subcascade only when its deathrate could have grown by
more than a factor (1 + epsilon) since its last refresh, which caps the
relative error at epsilon and the per-subcascade recalculations at
ceil(log_{1+eps} |V|).
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .features import Cascade, CascadeEvent, DELAY_SHIFT
from .fitting import FeatureMatrix, NewerModel, mean_params, median_params, regress_out_of_sample
from .survival import WeibullParams, weibull_survival, weibull_survival_bulk, weibull_survival_inverse

__all__ = [
    "PartialCascade",
    "ProcessCurve",
    "SubcascadeState",
    "BasicPredictor",
    "SamplingPredictor",
    "ModelDynamics",
    "predict_size_basic",
    "predict_final_size",
    "predict_outbreak_time",
    "predict_process",
    "write_predictions_jsonl",
    "read_predictions_jsonl",
    "DEFAULT_SEARCH_WINDOW",
]

DEFAULT_SEARCH_WINDOW = 30 * 86400.0  # binary search horizon beyond t_limit


@dataclass
class PartialCascade:
    """The observed prefix of a cascade up to t_limit, plus the network size."""

    cascade_id: str
    events: list[CascadeEvent]
    t_limit: float
    network_size: int

    def __post_init__(self):
        if self.network_size < 1:
            raise DataError("network size must be >= 1")
        if not self.events:
            raise DataError(f"partial cascade {self.cascade_id!r} has no events")
        Cascade(cascade_id=self.cascade_id, events=self.events)  # reuse tree validation
        if self.t_limit < self.events[-1].t:
            raise DataError(
                f"partial cascade {self.cascade_id!r}: t_limit precedes the last event"
            )

    @property
    def size(self) -> int:
        return len(self.events)

    @classmethod
    def from_cascade(cls, cascade: Cascade, t_limit: float, network_size: int) -> "PartialCascade":
        events = [e for e in cascade.events if e.t <= t_limit]
        return cls(cascade.cascade_id, events, t_limit, network_size)

    @classmethod
    def first_events(cls, cascade: Cascade, count: int, network_size: int) -> "PartialCascade":
        if count < 1 or count > cascade.size:
            raise DataError(f"cannot observe {count} events of a size-{cascade.size} cascade")
        t_limit = cascade.events[count - 1].t
        # include every event tied with the cut timestamp
        events = [e for e in cascade.events if e.t <= t_limit]
        return cls(cascade.cascade_id, events, t_limit, network_size)


@dataclass
class ProcessCurve:
    """Predicted cumulative size at a sorted sequence of times."""

    times: list[float]
    sizes: list[float]

    def __post_init__(self):
        if len(self.times) != len(self.sizes):
            raise DataError("curve times and sizes must have the same length")
        if any(b < a for a, b in zip(self.times, self.times[1:])):
            raise DataError("curve times must be sorted")
        if any(b < a for a, b in zip(self.sizes, self.sizes[1:])):
            raise DataError("curve sizes must be nondecreasing")


def _resolve_dynamics(dynamics, user: str) -> WeibullParams:
    if isinstance(dynamics, Mapping):
        params = dynamics.get(user)
        if params is None:
            raise DataError(f"no behavioral dynamics for observed user {user!r}")
        return params
    try:
        return dynamics(user)
    except KeyError:
        raise DataError(f"no behavioral dynamics for observed user {user!r}") from None


class ModelDynamics:
    """Dynamics lookup for prediction: fitted per-user parameters first, then
    the model's out-of-sample policy, then a global fallback.

    Out-of-sample policy by model kind:
      newer        scale and shape both regressed from covariates
      cox          scale regressed, shape set to the shared fitted shape
      exponential  scale regressed, shape 1
      rayleigh     scale regressed, shape 2
      weibull      averaged fitted scale and shape
    """

    def __init__(self, model: NewerModel, features: FeatureMatrix | None = None,
                 fallback: WeibullParams | None = None):
        self.model = model
        self.features = features
        if fallback is None and model.user_params:
            fallback = median_params(model)
        self.fallback = fallback
        self._mean = mean_params(model) if model.user_params else None
        self._cache: dict[str, WeibullParams] = {}

    def __call__(self, user: str) -> WeibullParams:
        params = self.model.user_params.get(user)
        if params is not None:
            return params
        cached = self._cache.get(user)
        if cached is not None:
            return cached
        params = self._out_of_sample(user)
        if params is None:
            params = self.fallback
        if params is None:
            raise DataError(f"no behavioral dynamics for observed user {user!r}")
        self._cache[user] = params
        return params

    def _out_of_sample(self, user: str) -> WeibullParams | None:
        kind = self.model.kind
        if kind == "weibull":
            return self._mean
        if self.features is None or user not in self.features or not self.model.feature_names:
            return None
        regressed = regress_out_of_sample(self.model, self.features.row(user))
        if kind == "newer":
            return regressed
        if kind == "cox":
            shape = self._mean.shape if self._mean is not None else 1.0
        elif kind == "exponential":
            shape = 1.0
        elif kind == "rayleigh":
            shape = 2.0
        else:
            return regressed
        return WeibullParams(regressed.scale, shape)


class BasicPredictor:
    """Prepared basic-model evaluator for one partial cascade.

    Per-user arrays are built once so repeated horizon queries (process
    curves, outbreak search) stay cheap.
    """

    def __init__(self, pc: PartialCascade, dynamics, *, time_shift: float = DELAY_SHIFT):
        self.pc = pc
        self.time_shift = time_shift
        replynum: dict[str, int] = {e.user: 0 for e in pc.events}
        for e in pc.events:
            if e.parent is not None:
                replynum[e.parent] += 1
        users = [e.user for e in pc.events]
        self.users = users
        self.t_join = np.array([e.t for e in pc.events])
        self.replynum = np.array([float(replynum[u]) for u in users])
        params = [_resolve_dynamics(dynamics, u) for u in users]
        self.scales = np.array([p.scale for p in params])
        self.shapes = np.array([p.shape for p in params])
        self.floor = 1.0 / pc.network_size
        elapsed = pc.t_limit - self.t_join + time_shift
        survival = weibull_survival_bulk(self.scales, self.shapes, elapsed)
        self.deathrate = np.maximum(1.0 - survival, self.floor)

    @property
    def observed_size(self) -> int:
        return self.pc.size

    def size_at(self, t_e: float) -> float:
        """Predicted cumulative size at horizon t_e >= t_limit."""
        if t_e < self.pc.t_limit:
            raise DataError(f"prediction horizon {t_e} precedes t_limit {self.pc.t_limit}")
        elapsed = t_e - self.t_join + self.time_shift
        survival = weibull_survival_bulk(self.scales, self.shapes, elapsed)
        fdrate = np.maximum(1.0 - survival, self.floor)
        # dividing the rates first makes the ratio exactly 1 at t_e == t_limit,
        # so the boundary prediction reproduces the observed size bit-exactly
        return 1.0 + float(np.sum(self.replynum * (fdrate / self.deathrate)))

    def final_size(self) -> float:
        """Predicted final size: horizon at infinity, so fdrate is 1."""
        return 1.0 + float(np.sum(self.replynum / self.deathrate))

    def outbreak_time(self, threshold_size: int, t_max: float | None = None) -> float | None:
        """Earliest integer-second time the predicted size reaches the
        threshold; None when it never does within [t_limit, t_max]."""
        if threshold_size < 1:
            raise DataError(f"outbreak threshold must be >= 1, got {threshold_size}")
        t_limit = self.pc.t_limit
        if self.observed_size >= threshold_size:
            return t_limit
        if self.final_size() < threshold_size:
            return None
        if t_max is None:
            t_max = t_limit + DEFAULT_SEARCH_WINDOW
        span = int(math.ceil(t_max - t_limit))
        if span < 1 or self.size_at(t_limit + span) < threshold_size:
            return None
        lo, hi = 0, span  # size(t_limit + hi) >= threshold
        while lo < hi:
            mid = (lo + hi) // 2
            if self.size_at(t_limit + mid) >= threshold_size:
                hi = mid
            else:
                lo = mid + 1
        return t_limit + float(lo)

    def process_curve(self, grid: Sequence[float]) -> ProcessCurve:
        grid = [float(t) for t in grid]
        if any(b < a for a, b in zip(grid, grid[1:])):
            raise DataError("prediction grid must be sorted")
        sizes: list[float] = []
        for t in grid:
            value = self.size_at(t)
            if sizes and value < sizes[-1]:
                value = sizes[-1]  # guard float wobble; the estimator is monotone
            sizes.append(value)
        return ProcessCurve(times=grid, sizes=sizes)


def predict_size_basic(pc: PartialCascade, dynamics, t_e: float) -> float:
    return BasicPredictor(pc, dynamics).size_at(t_e)


def predict_final_size(pc: PartialCascade, dynamics) -> float:
    return BasicPredictor(pc, dynamics).final_size()


def predict_outbreak_time(pc: PartialCascade, dynamics, threshold_size: int,
                          t_max: float | None = None) -> float | None:
    return BasicPredictor(pc, dynamics).outbreak_time(threshold_size, t_max)


def predict_process(pc: PartialCascade, dynamics, grid: Sequence[float]) -> ProcessCurve:
    return BasicPredictor(pc, dynamics).process_curve(grid)


# ---------------------------------------------------------------------------
# Sampling model
# ---------------------------------------------------------------------------

@dataclass
class SubcascadeState:
    """Book-keeping for one observed user's subcascade in the sampling model."""

    owner: str
    t_join: float
    params: WeibullParams
    replynum: int = 0
    deathrate: float = 1.0
    term: float = 0.0
    next_recalc: float = math.inf
    epoch: int = 0
    timer_recalcs: int = 0


class SamplingPredictor:
    """Streaming final-size estimator with lazy epsilon-bounded recalculation.

    Subcascades with no replies contribute zero and are never scheduled. A
    reply refreshes its parent immediately; otherwise a subcascade is only
    recalculated once the clock passes the time at which its deathrate could
    exceed (1 + epsilon) times the value used for its current term, found by
    inverting the owner's survival function. A min-heap over those times
    drives the lazy work.
    """

    def __init__(self, network_size: int, epsilon: float, dynamics, *,
                 time_shift: float = DELAY_SHIFT):
        if epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        if network_size < 1:
            raise DataError("network size must be >= 1")
        self.network_size = network_size
        self.epsilon = epsilon
        self.dynamics = dynamics
        self.time_shift = time_shift
        self.floor = 1.0 / network_size
        self.states: dict[str, SubcascadeState] = {}
        self._heap: list[tuple[float, int, str, int]] = []
        self._seq = 0
        self._sum = 0.0
        self._root: str | None = None
        self._last_t = -math.inf
        self.reply_updates = 0
        self.timer_recalcs = 0

    def _deathrate(self, state: SubcascadeState, now: float) -> float:
        elapsed = now - state.t_join + self.time_shift
        return max(1.0 - weibull_survival(state.params, max(elapsed, 0.0)), self.floor)

    def _refresh(self, state: SubcascadeState, now: float) -> None:
        dr = self._deathrate(state, now)
        new_term = state.replynum / dr
        self._sum += new_term - state.term
        state.term = new_term
        state.deathrate = dr
        state.epoch += 1
        target = 1.0 - (1.0 + self.epsilon) * dr
        if target > 0.0:
            elapsed_at_target = weibull_survival_inverse(state.params, target)
            next_t = state.t_join + elapsed_at_target - self.time_shift
            if next_t <= now:
                next_t = float(np.nextafter(now, math.inf))
            state.next_recalc = next_t
            self._seq += 1
            heapq.heappush(self._heap, (next_t, self._seq, state.owner, state.epoch))
        else:
            state.next_recalc = math.inf

    def _process_due(self, now: float) -> None:
        while self._heap and self._heap[0][0] <= now:
            _, _, owner, epoch = heapq.heappop(self._heap)
            state = self.states[owner]
            if state.epoch != epoch:
                continue  # superseded by a later refresh
            self.timer_recalcs += 1
            state.timer_recalcs += 1
            self._refresh(state, now)

    def feed_event(self, user: str, parent: str | None, t: float) -> None:
        if t < self._last_t:
            raise DataError(f"event at {t} arrives out of order (last was {self._last_t})")
        if user in self.states:
            raise DataError(f"user {user!r} already joined the cascade")
        self._process_due(t)
        self._last_t = t
        params = _resolve_dynamics(self.dynamics, user)
        self.states[user] = SubcascadeState(owner=user, t_join=t, params=params)
        if parent is None:
            if self._root is not None:
                raise DataError("cascade already has a root")
            self._root = user
            self._sum += 1.0  # the root itself
            return
        if self._root is None:
            raise DataError("first event must be the root")
        parent_state = self.states.get(parent)
        if parent_state is None:
            raise DataError(f"event for {user!r} references unknown parent {parent!r}")
        parent_state.replynum += 1
        self.reply_updates += 1
        self._refresh(parent_state, t)

    def query_size(self, now: float | None = None) -> float:
        """Current estimate of the final cascade size at wall-clock ``now``
        (defaults to the last event time)."""
        if self._root is None:
            raise DataError("no events fed yet")
        if now is None:
            now = self._last_t
        if now < self._last_t:
            raise DataError(f"cannot query the past: {now} < {self._last_t}")
        self._process_due(now)
        return self._sum

    def recalc_count(self, user: str) -> int:
        state = self.states.get(user)
        return state.timer_recalcs if state is not None else 0

    @property
    def total_updates(self) -> int:
        """Term recomputations of both kinds (reply-driven and timer-driven)."""
        return self.reply_updates + self.timer_recalcs


# ---------------------------------------------------------------------------
# Prediction records on disk
# ---------------------------------------------------------------------------

def write_predictions_jsonl(path, records: Iterable[dict]) -> None:
    """One record per cascade:
    {"cascade", "t_limit", "final", "outbreak_t", "curve"}."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({
                "cascade": rec["cascade"],
                "t_limit": rec["t_limit"],
                "final": rec["final"],
                "outbreak_t": rec.get("outbreak_t"),
                "curve": rec.get("curve", []),
            }) + "\n")


def read_predictions_jsonl(path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: bad prediction record: {exc}") from exc
    return out
