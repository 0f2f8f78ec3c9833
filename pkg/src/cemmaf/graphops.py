"""Builders that lift bundle components and objective terms into autodiff graphs.

Everything here targets the fixed op set: absolute values become paired
ramps, a max over class scores becomes a pairwise ramp chain (ties and the
subgradient resolve toward the lowest class index), and ``min(h, kappa)``
becomes ``h - max(h - kappa, 0)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import GraphBuilder, Graph
from .bundle import GraphFn, ModelBundle
from .segmentation import SuperpixelPartition


def splice_fn(b: GraphBuilder, fn: GraphFn, arg: int) -> int:
    return b.splice(fn.graph, {fn.input_id: arg})[fn.output_id]


def subtract(b: GraphBuilder, x: int, y: int) -> int:
    return b.add(x, b.scale(y, -1.0))


def absval(b: GraphBuilder, v: int) -> int:
    return b.add(b.max_with_zero(v), b.max_with_zero(b.scale(v, -1.0)))


def pick_entry(b: GraphBuilder, vec: int, index: int) -> int:
    """Extract vec[index] as a scalar node via a one-hot row."""
    n = b.shape_of(vec)[0]
    row = np.zeros((1, n))
    row[0, index] = 1.0
    return b.matmul(b.constant(row), vec)


def max_over_others(b: GraphBuilder, vec: int, skip: int) -> int:
    """max of vec entries excluding ``skip``; subgradient picks the lowest
    attaining index (ramp chain in ascending index order)."""
    n = b.shape_of(vec)[0]
    others = [i for i in range(n) if i != skip]
    if not others:
        raise ValueError("need at least two entries to take a max over others")
    cur = pick_entry(b, vec, others[0])
    for i in others[1:]:
        nxt = pick_entry(b, vec, i)
        cur = b.add(cur, b.max_with_zero(subtract(b, nxt, cur)))
    return cur


def min_with_const(b: GraphBuilder, h: int, cap: float) -> int:
    """min(h, cap) = h - max(h - cap, 0); d/dh = 1 at h == cap."""
    over = b.max_with_zero(b.add(h, b.constant(np.array([-float(cap)]))))
    return b.add(h, b.scale(over, -1.0))


def sq_dist(b: GraphBuilder, node: int, ref: np.ndarray) -> int:
    """sum((ref - node)^2) against a constant reference."""
    return b.sum(b.square(b.add(b.constant(ref), b.scale(node, -1.0))))


def attribute_vector(b: GraphBuilder, bundle: ModelBundle, image_node: int) -> int:
    """Stack the k oriented attribute outputs into one (k,) node."""
    return b.concat([splice_fn(b, a.fn, image_node) for a in bundle.attributes])


def hinge_node(b: GraphBuilder, logits: int, t0: int, kappa: float, attack: bool) -> int:
    """min(margin, kappa); margin is max_other - f_t0 when ``attack`` (the
    class-change direction) else f_t0 - max_other (the class-keep direction)."""
    f_t0 = pick_entry(b, logits, t0)
    f_other = max_over_others(b, logits, t0)
    margin = subtract(b, f_other, f_t0) if attack else subtract(b, f_t0, f_other)
    return min_with_const(b, margin, kappa)


def masking_matrix(
    x0: np.ndarray, partition: SuperpixelPartition, background: float
) -> np.ndarray:
    """(n_pixels, n_superpixels) linear map: image_vec = A @ mask + background.

    Row p holds ``x0[p] - background`` in column label(p), so the masked image
    is linear in the relaxed mask vector.
    """
    flat = np.asarray(x0, dtype=np.float64).reshape(-1)
    channels = flat.size // partition.labels.size
    labels = np.repeat(partition.labels.reshape(-1), channels)
    a = np.zeros((flat.size, partition.n_superpixels))
    a[np.arange(flat.size), labels] = flat - float(background)
    return a


@dataclass(frozen=True)
class PNGraph:
    """Composed graph for the latent-space class-change objective."""

    graph: Graph
    z_in: int
    total: int
    terms: tuple[int, int, int, int, int]
    logits: int
    image: int


def build_pn_graph(
    bundle: ModelBundle,
    x0: np.ndarray,
    z_x0: np.ndarray,
    t0: int,
    gamma: float,
    beta: float,
    eta: float,
    nu: float,
    kappa: float,
    c: float,
) -> PNGraph:
    """All five objective terms as one differentiable graph over z.

    terms = (attribute-deletion hinge, attribute L1, class-change hinge,
    image-space proximity, latent-space proximity); total is their sum.
    """
    x0_vec = bundle.image_vec(x0)
    g_x0 = bundle.eval_attributes(x0)
    b = GraphBuilder()
    z_in = b.input((bundle.latent_dim,))
    image = splice_fn(b, bundle.decoder, z_in)
    logits = splice_fn(b, bundle.classifier, image)
    g_vec = attribute_vector(b, bundle, image)

    deletion = b.max_with_zero(subtract(b, b.constant(g_x0), g_vec))
    t1 = b.scale(b.sum(deletion), gamma)
    t2 = b.scale(b.sum(absval(b, g_vec)), beta)
    t3 = b.scale(hinge_node(b, logits, t0, kappa, attack=True), -c)
    t4 = b.scale(sq_dist(b, image, x0_vec), eta)
    t5 = b.scale(sq_dist(b, z_in, np.asarray(z_x0, dtype=np.float64)), nu)
    total = b.add(b.add(b.add(b.add(t1, t2), t3), t4), t5)
    return PNGraph(b.build(), z_in, total, (t1, t2, t3, t4, t5), logits, image)


@dataclass(frozen=True)
class PPGraph:
    """Composed graph for the smooth part of the superpixel-mask objective."""

    graph: Graph
    mask_in: int
    smooth: int      # term1 + term3 (the L1 term is handled by the prox)
    term1: int
    term3: int
    logits: int
    image: int


def build_pp_graph(
    bundle: ModelBundle,
    x0: np.ndarray,
    partition: SuperpixelPartition,
    t0: int,
    gamma: float,
    kappa: float,
    c: float,
    background: float,
) -> PPGraph:
    """Attribute-addition hinge + class-keep hinge over the relaxed mask."""
    g_x0 = bundle.eval_attributes(x0)
    a = masking_matrix(x0, partition, background)
    b = GraphBuilder()
    mask_in = b.input((partition.n_superpixels,))
    base = np.full(bundle.n_pixels, float(background))
    image = b.add(b.matmul(b.constant(a), mask_in), b.constant(base))
    logits = splice_fn(b, bundle.classifier, image)
    g_vec = attribute_vector(b, bundle, image)

    addition = b.max_with_zero(subtract(b, g_vec, b.constant(g_x0)))
    t1 = b.scale(b.sum(addition), gamma)
    t3 = b.scale(hinge_node(b, logits, t0, kappa, attack=False), -c)
    smooth = b.add(t1, t3)
    return PPGraph(b.build(), mask_in, smooth, t1, t3, logits, image)
