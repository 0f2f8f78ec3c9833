"""Shared toys, oracle helpers, and session-scoped fixture artifacts."""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest

from cemmaf import netpbm
from cemmaf.autodiff import GraphBuilder, forward_eval
from cemmaf.bundle import AttributeDef, ModelBundle, load_bundle
from cemmaf.fixtures import FixtureSpec, generate_fixture_set
from cemmaf.pn import PNHyperParams, solve_pn
from cemmaf.pp import PPHyperParams, solve_pp
from cemmaf.segmentation import apply_mask, grid_segment

FIXTURE_SEED = 7

# fast schedule for tests that only need determinism or plumbing, not quality
REDUCED_CONFIG = "rounds=3\niters_pn=150\niters_pp=40\nn_superpixels=16\nseed=7\n"


def toy_1d_bundle(neg_attr: bool = True, const_classifier: bool = False) -> ModelBundle:
    """One-pixel image, identity decoder/encoder, f = [x, 1-x] (or constant)."""
    if const_classifier:
        w, b = [[0.0], [0.0]], [1.0, 0.0]
    else:
        w, b = [[1.0], [-1.0]], [0.0, 1.0]
    return ModelBundle(
        image_shape=(1, 1, 1),
        latent_dim=1,
        class_names=["lo", "hi"],
        classifier=("dense 1 2", (np.array(w), np.array(b))),
        decoder=("dense 1 1", (np.array([[1.0]]), np.array([0.0]))),
        attributes=[
            AttributeDef("darkness" if neg_attr else "level", -1 if neg_attr else 1,
                         0.0, "dense 1 1", (np.array([[1.0]]), np.array([0.0])))
        ],
        encoder=("dense 1 1", (np.array([[1.0]]), np.array([0.0]))),
    )


def linear_bundle(w, b, height: int, width: int) -> ModelBundle:
    """Grayscale image, linear classifier, mean-brightness attribute."""
    n = height * width
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return ModelBundle(
        image_shape=(height, width, 1),
        latent_dim=1,
        class_names=[f"c{i}" for i in range(len(b))],
        classifier=(f"dense {n} {len(b)}", (w, b)),
        decoder=(f"dense 1 {n}", (np.zeros((n, 1)), np.zeros(n))),
        attributes=[
            AttributeDef("brightness", 1, 0.0, f"dense {n} 1",
                         (np.full((1, n), 1.0 / n), np.zeros(1)))
        ],
    )


def random_two_layer_graph(seed: int):
    """Random dense-relu-dense-sigmoid scalar graph with the input as the
    differentiated node; resampled until every ramp argument sits at least
    1e-3 away from its kink, so central differences are trustworthy."""
    rng = np.random.default_rng(seed)
    for _ in range(50):
        n_in, n_hid, n_out = rng.integers(2, 6), rng.integers(2, 7), rng.integers(1, 4)
        b = GraphBuilder()
        x = b.input((n_in,))
        w1 = b.constant(rng.normal(size=(n_hid, n_in)))
        b1 = b.constant(rng.normal(size=n_hid))
        pre = b.add(b.matmul(w1, x), b1)
        h = b.relu(pre)
        w2 = b.constant(rng.normal(size=(n_out, n_hid)))
        b2 = b.constant(rng.normal(size=n_out))
        out = b.sigmoid(b.add(b.matmul(w2, h), b2))
        loss = b.sum(b.square(out))
        graph = b.build()
        xv = rng.normal(size=n_in)
        pre_vals = forward_eval(graph, {x: xv})[pre]
        if np.abs(pre_vals).min() >= 1e-3:
            return graph, x, loss, xv
    raise RuntimeError(f"could not find a kink-free sample for seed {seed}")


def brute_force_min_mask(bundle: ModelBundle, x0, partition, t0: int, background=0.0):
    """Exhaustive minimal cardinality of a binary mask keeping class t0."""
    n = partition.n_superpixels
    best = None
    for bits in range(2 ** n):
        mask = np.array([(bits >> j) & 1 for j in range(n)], dtype=np.float64)
        scores = bundle.classify(apply_mask(x0, partition, mask, background))
        if int(np.argmax(scores)) == t0:
            card = int(mask.sum())
            if best is None or card < best:
                best = card
    return best


def pn_grid_oracle(bundle: ModelBundle, x0, kappa: float, lo=0.0, hi=1.0, step=1e-3):
    """Grid minimizer of latent distance over valid 1-D latents."""
    z_x0 = bundle.infer_latent(x0)
    t0 = bundle.predict(x0)
    best = None
    for z in np.arange(lo, hi + step / 2, step):
        scores = bundle.classify(bundle.decode(np.array([z])))
        margin = float(np.delete(scores, t0).max() - scores[t0])
        if int(np.argmax(scores)) != t0 and margin >= kappa:
            d = abs(z - z_x0[0])
            if best is None or d < best[0]:
                best = (d, z)
    return best


@pytest.fixture(scope="session")
def fixture_set(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixture_set")
    manifest = generate_fixture_set(FixtureSpec(), FIXTURE_SEED, out)
    bundle = load_bundle(out / "bundle")
    images = [
        SimpleNamespace(
            id=e["id"],
            path=out / e["file"],
            image=netpbm.read_image(out / e["file"]),
            label=e["label"],
            predicted=e["predicted_class"],
            attributes=e["attributes"],
        )
        for e in manifest["images"]
    ]
    return SimpleNamespace(dir=out, manifest=manifest, bundle=bundle, images=images)


@pytest.fixture(scope="session")
def pn_default_results(fixture_set):
    """PN solutions for all fixture images at the full default schedule (slow)."""
    hp = PNHyperParams()
    return [(fx, solve_pn(fixture_set.bundle, fx.image, hp)) for fx in fixture_set.images]


@pytest.fixture(scope="session")
def pp_default_results(fixture_set):
    """PP solutions on the 16-cell grid at the full default schedule."""
    hp = PPHyperParams()
    partition = grid_segment(8, 8, 16)
    results = [(fx, solve_pp(fixture_set.bundle, fx.image, partition, hp)) for fx in fixture_set.images]
    return partition, results
