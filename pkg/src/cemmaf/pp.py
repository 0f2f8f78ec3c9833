"""Pertinent positives: a minimal superpixel subset that keeps the prediction.

The binary mask is relaxed to [0,1] per superpixel and optimized with plain
ISTA: a gradient step on the smooth terms (attribute-addition hinge plus the
class-keep hinge), then soft thresholding against the L1 weight, then
projection back into the mask box.  The same c schedule as the latent solver
runs over the rounds.  The best relaxed mask -- smallest L1 among iterates
whose masked image keeps class t0 with margin kappa -- is then binarized by
ranking its entries and greedily adding superpixels until the masked image
predicts t0 again.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import forward_backward, forward_eval
from .bundle import ModelBundle
from .csearch import NotFound, update_c
from .graphops import PPGraph, build_pp_graph
from .segmentation import SuperpixelPartition, apply_mask

__all__ = [
    "PPHyperParams",
    "PPResult",
    "NotFound",
    "soft_threshold",
    "shrink",
    "pp_objective",
    "solve_pp",
    "pp_score_trace",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PPHyperParams:
    """Objective weights and ISTA schedule; defaults are the reference values."""

    kappa: float = 5.0
    gamma: float = 100.0
    beta: float = 0.1     # mask L1 weight (the strong attribute value is far too sparse here)
    c0: float = 1.0
    rounds: int = 9
    iters: int = 100
    step: float = 0.01
    background: float = 0.0

    def __post_init__(self):
        if self.kappa < 0 or min(self.gamma, self.beta, self.c0) < 0:
            raise ValueError("kappa, gamma, beta, c0 must be nonnegative")
        if self.rounds < 1 or self.iters < 1:
            raise ValueError("rounds and iters must be >= 1")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not 0.0 <= self.background <= 1.0:
            raise ValueError("background must lie in [0, 1]")


@dataclass(frozen=True)
class PPResult:
    """A binarized mask that keeps the original class, plus the search record."""

    mask: np.ndarray                 # (n_sp,) of 0.0/1.0
    selected: tuple[int, ...]        # superpixel ids in addition order
    image: np.ndarray                # apply_mask(x0, partition, mask, background)
    predicted_class: int             # == t0
    margin: float                    # f_t0 - max_other at the masked image
    relaxed_mask: np.ndarray         # best ISTA iterate (or final, when flagged)
    score_trace: np.ndarray          # [f]_t0 after each addition, len == len(selected)
    c_at_success: float | None       # c of the round that produced relaxed_mask
    ista_margin_reached: bool        # False when no iterate hit the kappa margin
    objective_terms: tuple[float, float, float]
    objective_total: float
    t0: int
    c_schedule: tuple[float, ...]


def shrink(v: np.ndarray, lam: float) -> np.ndarray:
    """Soft-thresholding proper: sign(v) * max(|v| - lam, 0)."""
    if lam < 0:
        raise ValueError(f"threshold must be nonnegative, got {lam}")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def soft_threshold(v: np.ndarray, lam: float) -> np.ndarray:
    """Shrink by ``lam`` entrywise, then project into the [0,1] mask box."""
    return np.clip(shrink(v, lam), 0.0, 1.0)


def pp_objective(
    bundle: ModelBundle,
    x0: np.ndarray,
    partition: SuperpixelPartition,
    mask: np.ndarray,
    t0: int,
    hp: PPHyperParams,
    c: float,
) -> tuple[float, tuple[float, float, float]]:
    """Objective at a relaxed mask, term by term, via the public operations.

    Terms: attribute-addition hinge, mask L1, class-keep hinge (times -c).
    Independent of the solver's composed-graph path; used as its oracle.
    """
    mask = np.asarray(mask, dtype=np.float64)
    image = apply_mask(x0, partition, mask, hp.background)
    g_x0 = bundle.eval_attributes(x0)
    g_m = bundle.eval_attributes(image)
    scores = bundle.classify(image)
    if not 0 <= t0 < bundle.n_classes:
        raise ValueError(f"t0 out of range: {t0}")
    others = np.delete(scores, t0)
    t1 = hp.gamma * float(np.sum(np.maximum(g_m - g_x0, 0.0)))
    t2 = hp.beta * float(np.sum(np.abs(mask)))
    t3 = -c * min(float(scores[t0] - others.max()), hp.kappa)
    terms = (t1, t2, t3)
    return float(sum(terms)), terms


@dataclass
class _BestMask:
    l1: float
    mask: np.ndarray
    c: float


def _margin(logits: np.ndarray, t0: int) -> float:
    return float(logits[t0] - np.delete(logits, t0).max())


def solve_pp(
    bundle: ModelBundle,
    x0: np.ndarray,
    partition: SuperpixelPartition,
    hp: PPHyperParams = PPHyperParams(),
    mask_trace: list | None = None,
) -> PPResult | NotFound:
    """Search for a pertinent positive of ``x0`` over ``partition``.

    The relaxed mask starts at all ones (the full image, which trivially
    keeps the prediction) and persists across rounds, snapping back to the
    best valid iterate after each c update.  Ranking ties break toward the
    lower superpixel id.  If no ISTA iterate reaches the kappa margin, the
    final iterate's values still rank the greedy completion and the result is
    flagged.  ``mask_trace``, when given, collects every ISTA iterate (test
    hook for the projection invariant).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    t0 = bundle.predict(x0)
    n_sp = partition.n_superpixels

    m = np.ones(n_sp)
    best: _BestMask | None = None
    c = hp.c0
    c_schedule: list[float] = []
    found_in_round = False

    def consider(mask: np.ndarray, logits: np.ndarray, c_now: float) -> None:
        nonlocal best, found_in_round
        if mask_trace is not None:
            mask_trace.append(mask.copy())
        if _margin(logits, t0) < hp.kappa:
            return
        found_in_round = True
        l1 = float(np.abs(mask).sum())
        if best is None or l1 < best.l1:
            best = _BestMask(l1, mask.copy(), c_now)

    for rnd in range(hp.rounds):
        c_schedule.append(c)
        pg = build_pp_graph(bundle, x0, partition, t0, hp.gamma, hp.kappa, c, hp.background)
        found_in_round = False
        for _ in range(hp.iters):
            values, grads = forward_backward(pg.graph, {pg.mask_in: m}, pg.smooth)
            consider(m, values[pg.logits], c)
            m = soft_threshold(m - hp.step * grads[pg.mask_in], hp.step * hp.beta)
        values = forward_eval(pg.graph, {pg.mask_in: m})
        consider(m, values[pg.logits], c)
        log.debug("round %d: c=%g found=%s", rnd, c, found_in_round)
        c = update_c(c, found_in_round)
        if best is not None:
            m = best.mask.copy()

    if best is not None:
        relaxed = best.mask
        c_success: float | None = best.c
        reached = True
    else:
        relaxed = m
        c_success = None
        reached = False

    # rank relaxed values descending, ties toward the lower id
    ranking = np.argsort(-relaxed, kind="stable")
    selected: list[int] = []
    trace: list[float] = []
    mask_bin = np.zeros(n_sp)
    scores = bundle.classify(apply_mask(x0, partition, mask_bin, hp.background))
    if int(np.argmax(scores)) != t0:
        hit = False
        for sp in ranking:
            mask_bin[sp] = 1.0
            selected.append(int(sp))
            scores = bundle.classify(apply_mask(x0, partition, mask_bin, hp.background))
            trace.append(float(scores[t0]))
            if int(np.argmax(scores)) == t0:
                hit = True
                break
        if not hit:
            return NotFound(
                reason="even the full superpixel ranking never recovered the original class",
                c_schedule=tuple(c_schedule),
            )

    image = apply_mask(x0, partition, mask_bin, hp.background)
    scores = bundle.classify(image)
    if int(np.argmax(scores)) != t0:  # contract check on the public path
        raise AssertionError("internal error: returned mask fails the class-keep test")

    eval_c = c_success if c_success is not None else c_schedule[-1]
    pg = build_pp_graph(bundle, x0, partition, t0, hp.gamma, hp.kappa, eval_c, hp.background)
    values = forward_eval(pg.graph, {pg.mask_in: mask_bin})
    t1 = float(values[pg.term1][0])
    t3 = float(values[pg.term3][0])
    t2 = hp.beta * float(np.abs(mask_bin).sum())
    return PPResult(
        mask=mask_bin,
        selected=tuple(selected),
        image=image,
        predicted_class=t0,
        margin=_margin(scores, t0),
        relaxed_mask=relaxed.copy(),
        score_trace=np.array(trace),
        c_at_success=c_success,
        ista_margin_reached=reached,
        objective_terms=(t1, t2, t3),
        objective_total=t1 + t2 + t3,
        t0=t0,
        c_schedule=tuple(c_schedule),
    )


def pp_score_trace(
    bundle: ModelBundle,
    x0: np.ndarray,
    partition: SuperpixelPartition,
    ordered_ids,
    t0: int,
    background: float = 0.0,
) -> np.ndarray:
    """t0 score after each addition of ``ordered_ids`` to an empty mask."""
    ids = [int(i) for i in ordered_ids]
    if len(set(ids)) != len(ids):
        raise ValueError("ordered superpixel ids must be distinct")
    mask = np.zeros(partition.n_superpixels)
    out = []
    for sp in ids:
        if not 0 <= sp < partition.n_superpixels:
            raise ValueError(f"superpixel id {sp} out of range")
        mask[sp] = 1.0
        scores = bundle.classify(apply_mask(x0, partition, mask, background))
        out.append(float(scores[t0]))
    return np.array(out)
