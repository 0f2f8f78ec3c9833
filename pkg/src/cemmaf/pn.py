"""Pertinent negatives: minimal concept additions that flip the classification.

The search optimizes the latent code z of a decoder manifold with plain
subgradient descent (the attribute L1 term rules out proximal steps), under a
weight schedule on the class-change term: rounds of ``iters`` steps each,
with c multiplied by 10 after a round that finds no valid iterate and halved
after one that does.  Among all valid iterates -- decoded image classified
away from t0 with at least the kappa margin -- the one closest to the
original latent code wins.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import NonFiniteError, forward_backward, forward_eval
from .bundle import ModelBundle
from .csearch import NotFound, update_c
from .graphops import PNGraph, build_pn_graph

__all__ = [
    "PNHyperParams",
    "AttributeDelta",
    "PNResult",
    "NotFound",
    "update_c",
    "pn_objective",
    "solve_pn",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PNHyperParams:
    """Objective weights and search schedule; defaults are the reference values."""

    kappa: float = 5.0   # required score gap over t0, logit units
    gamma: float = 100.0  # attribute-deletion (monotonicity) weight
    beta: float = 100.0   # attribute L1 sparsity weight
    eta: float = 1.0      # image-space proximity weight
    nu: float = 1.0       # latent-space proximity weight
    c0: float = 1.0       # initial class-change weight
    rounds: int = 9
    iters: int = 1000
    step: float = 0.01    # base step; decays as 1/sqrt(t) within a round

    def __post_init__(self):
        if self.kappa < 0 or min(self.gamma, self.beta, self.eta, self.nu, self.c0) < 0:
            raise ValueError("kappa, gamma, beta, eta, nu, c0 must be nonnegative")
        if self.rounds < 1 or self.iters < 1:
            raise ValueError("rounds and iters must be >= 1")
        if not self.step > 0:
            raise ValueError("step must be positive")


@dataclass(frozen=True)
class AttributeDelta:
    name: str
    before: float
    after: float

    @property
    def delta(self) -> float:
        return self.after - self.before


@dataclass(frozen=True)
class PNResult:
    """A valid pertinent negative plus the full search record."""

    z: np.ndarray
    image: np.ndarray
    predicted_class: int
    margin: float
    objective_terms: tuple[float, float, float, float, float]
    objective_total: float
    added_attributes: tuple[AttributeDelta, ...]
    violated_attributes: tuple[AttributeDelta, ...]
    iterate_index: int
    round_index: int
    c_at_success: float
    c_schedule: tuple[float, ...]
    objective_trace: np.ndarray
    z_original: np.ndarray
    t0: int
    diverged_rounds: tuple[int, ...]


def pn_objective(
    bundle: ModelBundle,
    x0: np.ndarray,
    z_x0: np.ndarray,
    t0: int,
    z: np.ndarray,
    hp: PNHyperParams,
    c: float,
) -> tuple[float, tuple[float, float, float, float, float]]:
    """Objective value at z, term by term, via the public bundle operations.

    Independent of the solver's composed-graph path; used as its oracle.
    Terms: attribute-deletion hinge, attribute L1, class-change hinge (times
    -c), image proximity, latent proximity.
    """
    z = np.asarray(z, dtype=np.float64)
    z_x0 = np.asarray(z_x0, dtype=np.float64)
    if z.shape != (bundle.latent_dim,) or z_x0.shape != (bundle.latent_dim,):
        raise ValueError(f"latent codes must have shape ({bundle.latent_dim},)")
    image = bundle.decode(z)
    g_x0 = bundle.eval_attributes(x0)
    g_z = bundle.eval_attributes(image)
    scores = bundle.classify(image)
    if not 0 <= t0 < bundle.n_classes:
        raise ValueError(f"t0 out of range: {t0}")
    others = np.delete(scores, t0)
    t1 = hp.gamma * float(np.sum(np.maximum(g_x0 - g_z, 0.0)))
    t2 = hp.beta * float(np.sum(np.abs(g_z)))
    t3 = -c * min(float(others.max() - scores[t0]), hp.kappa)
    t4 = hp.eta * float(np.sum((bundle.image_vec(x0) - image.reshape(-1)) ** 2))
    t5 = hp.nu * float(np.sum((z_x0 - z) ** 2))
    terms = (t1, t2, t3, t4, t5)
    return float(sum(terms)), terms


@dataclass
class _Best:
    dist: float
    z: np.ndarray
    index: int
    round_index: int
    c: float


class _Tracker:
    """Validity bookkeeping shared across rounds."""

    def __init__(self, z_x0: np.ndarray, t0: int, kappa: float):
        self.z_x0 = z_x0
        self.t0 = t0
        self.kappa = kappa
        self.trace: list[float] = []
        self.best: _Best | None = None
        self.index = -1
        self.found_in_round = False

    def consider(self, z: np.ndarray, total: float, logits: np.ndarray, round_index: int, c: float) -> None:
        self.index += 1
        self.trace.append(total)
        others = np.delete(logits, self.t0)
        margin = float(others.max() - logits[self.t0])
        if int(np.argmax(logits)) == self.t0 or margin < self.kappa:
            return
        self.found_in_round = True
        dist = float(np.sqrt(np.sum((self.z_x0 - z) ** 2)))
        if self.best is None or dist < self.best.dist:
            self.best = _Best(dist, z.copy(), self.index, round_index, c)


def _run_round(
    pg: PNGraph, z0: np.ndarray, step: float, iters: int,
    tracker: _Tracker, round_index: int, c: float,
) -> np.ndarray:
    """``iters`` subgradient steps from z0, then one closing evaluation."""
    z = z0.copy()
    for t in range(1, iters + 1):
        values, grads = forward_backward(pg.graph, {pg.z_in: z}, pg.total)
        tracker.consider(z, float(values[pg.total][0]), values[pg.logits], round_index, c)
        z = z - (step / math.sqrt(t)) * grads[pg.z_in]
    values = forward_eval(pg.graph, {pg.z_in: z})
    tracker.consider(z, float(values[pg.total][0]), values[pg.logits], round_index, c)
    return z


def solve_pn(
    bundle: ModelBundle,
    x0: np.ndarray,
    hp: PNHyperParams = PNHyperParams(),
    z_x0: np.ndarray | None = None,
) -> PNResult | NotFound:
    """Search for a pertinent negative of ``x0``.

    Starts at the original latent code (encoder output or decoder inversion
    when ``z_x0`` is not given) and warm-starts each round from the best
    valid iterate found so far.  A round whose objective turns non-finite is
    retried once at half the step, then abandoned.  Deterministic.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    t0 = bundle.predict(x0)
    if z_x0 is None:
        z_x0 = bundle.infer_latent(x0)
    z_x0 = np.asarray(z_x0, dtype=np.float64)

    tracker = _Tracker(z_x0, t0, hp.kappa)
    z = z_x0.copy()
    c = hp.c0
    c_schedule: list[float] = []
    diverged: list[int] = []
    for rnd in range(hp.rounds):
        c_schedule.append(c)
        pg = build_pn_graph(bundle, x0, z_x0, t0, hp.gamma, hp.beta, hp.eta, hp.nu, hp.kappa, c)
        tracker.found_in_round = False
        z_start = z
        for attempt in (0, 1):
            try:
                z = _run_round(pg, z_start, hp.step * (0.5 ** attempt), hp.iters, tracker, rnd, c)
                break
            except NonFiniteError:
                if rnd not in diverged:
                    diverged.append(rnd)
                log.debug("round %d diverged (attempt %d)", rnd, attempt)
                z = z_start  # abandoned round keeps its starting point
        log.debug("round %d: c=%g found=%s", rnd, c, tracker.found_in_round)
        c = update_c(c, tracker.found_in_round)
        if tracker.best is not None:
            z = tracker.best.z.copy()

    if tracker.best is None:
        return NotFound(
            reason="no iterate reached a different class at the required margin",
            c_schedule=tuple(c_schedule),
            diverged_rounds=tuple(diverged),
        )

    best = tracker.best
    pg = build_pn_graph(bundle, x0, z_x0, t0, hp.gamma, hp.beta, hp.eta, hp.nu, hp.kappa, best.c)
    values = forward_eval(pg.graph, {pg.z_in: best.z})
    terms = tuple(float(values[t][0]) for t in pg.terms)
    image = bundle.decode(best.z)
    scores = bundle.classify(image)
    predicted = int(np.argmax(scores))
    margin = float(np.delete(scores, t0).max() - scores[t0])
    if predicted == t0 or margin < hp.kappa:  # contract check on the public path
        raise AssertionError("internal error: selected iterate fails the validity test")

    g_x0 = bundle.eval_attributes(x0)
    g_pn = bundle.eval_attributes(image)
    added = []
    violated = []
    for attr, before, after in zip(bundle.attributes, g_x0, g_pn):
        delta = AttributeDelta(attr.name, float(before), float(after))
        if delta.delta > attr.threshold:
            added.append(delta)
        elif delta.delta < -attr.threshold:
            violated.append(delta)
    return PNResult(
        z=best.z,
        image=image,
        predicted_class=predicted,
        margin=margin,
        objective_terms=terms,  # type: ignore[arg-type]
        objective_total=float(values[pg.total][0]),
        added_attributes=tuple(added),
        violated_attributes=tuple(violated),
        iterate_index=best.index,
        round_index=best.round_index,
        c_at_success=best.c,
        c_schedule=tuple(c_schedule),
        objective_trace=np.array(tracker.trace),
        z_original=z_x0,
        t0=t0,
        diverged_rounds=tuple(diverged),
    )
