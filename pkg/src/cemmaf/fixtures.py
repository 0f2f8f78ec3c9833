"""Desk-scale fixture bundles: synthetic blob images plus trained components.

``train_fixture`` produces a complete bundle from scratch: a dense classifier
fitted by plain gradient descent on class-conditional Gaussian-blob images, a
small autoencoder whose decoder serves as the data manifold, and analytic
attribute functions (mean brightness, horizontal and vertical mass balance).
Everything is driven by one seeded generator, so a (spec, seed) pair maps to
byte-identical bundle directories.

Classifier targets are ``target_scale * one_hot`` so the logits have enough
dynamic range for margin thresholds of a few units.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import netpbm
from .autodiff import GraphBuilder, forward_backward
from .bundle import AttributeDef, ModelBundle


class FixtureError(Exception):
    """Unsatisfiable or malformed fixture spec."""


_INT_KEYS = (
    "height", "width", "channels", "classes", "latent_dim",
    "samples_per_class", "images", "classifier_hidden", "ae_hidden",
    "classifier_steps", "ae_steps",
)
_FLOAT_KEYS = ("classifier_lr", "ae_lr", "target_scale", "noise")


@dataclass(frozen=True)
class FixtureSpec:
    height: int = 8
    width: int = 8
    channels: int = 1
    classes: int = 3
    latent_dim: int = 4
    samples_per_class: int = 32
    images: int = 10
    classifier_hidden: int = 24
    ae_hidden: int = 48
    classifier_steps: int = 1500
    ae_steps: int = 4000
    classifier_lr: float = 0.05
    ae_lr: float = 0.3
    target_scale: float = 10.0
    noise: float = 0.02

    def __post_init__(self):
        if self.classes < 2:
            raise FixtureError(f"need at least 2 classes, got {self.classes}")
        if min(self.height, self.width) < 4 or self.channels < 1:
            raise FixtureError("image must be at least 4x4 with a positive channel count")
        if self.latent_dim < 1 or self.samples_per_class < 2 or self.images < 0:
            raise FixtureError("latent_dim >= 1, samples_per_class >= 2, images >= 0 required")
        if min(self.classifier_hidden, self.ae_hidden, self.classifier_steps, self.ae_steps) < 1:
            raise FixtureError("hidden sizes and step counts must be positive")
        if min(self.classifier_lr, self.ae_lr, self.target_scale) <= 0 or self.noise < 0:
            raise FixtureError("learning rates and target_scale must be positive, noise nonnegative")

    @property
    def n_pixels(self) -> int:
        return self.height * self.width * self.channels


def parse_fixture_spec(text: str) -> FixtureSpec:
    """key=value lines; '#' comments; unknown keys are errors."""
    values: dict = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FixtureError(f"fixture spec line {ln}: want key=value, got {line!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        try:
            if key in _INT_KEYS:
                values[key] = int(val)
            elif key in _FLOAT_KEYS:
                values[key] = float(val)
            else:
                raise FixtureError(f"fixture spec line {ln}: unknown key {key!r}")
        except ValueError:
            raise FixtureError(f"fixture spec line {ln}: bad value for {key!r}: {val!r}") from None
    return FixtureSpec(**values)


def synth_images(spec: FixtureSpec, rng: np.random.Generator, per_class: int) -> tuple[np.ndarray, np.ndarray]:
    """Class-conditional blob images; returns (images (S,H,W,C), labels (S,))."""
    h, w, k = spec.height, spec.width, spec.classes
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    angles = 2.0 * np.pi * np.arange(k) / k
    centers_y = (h - 1) / 2.0 + 0.30 * (h - 1) * np.sin(angles)
    centers_x = (w - 1) / 2.0 + 0.30 * (w - 1) * np.cos(angles)
    images = []
    labels = []
    for cls in range(k):
        for _ in range(per_class):
            cy = centers_y[cls] + rng.normal(0.0, 0.35)
            cx = centers_x[cls] + rng.normal(0.0, 0.35)
            sigma = 0.16 * min(h, w) * (1.0 + rng.normal(0.0, 0.12))
            sigma = max(sigma, 0.5)
            amp = 0.85 + rng.normal(0.0, 0.06)
            img = amp * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2.0 * sigma**2))
            img = img + rng.normal(0.0, spec.noise, size=(h, w))
            img = np.clip(img, 0.0, 1.0)
            images.append(np.repeat(img[:, :, None], spec.channels, axis=2))
            labels.append(cls)
    return np.array(images), np.array(labels, dtype=np.int64)


def _init(rng: np.random.Generator, fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
    w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
    return w, np.zeros((1, fan_out))


def _batch_mlp(b: GraphBuilder, x_const: int, n_rows: int, dims: list[int], acts: list[str]):
    """Batch MLP over a constant design matrix; weights are input nodes.

    Returns (weight input ids, output node).  ``acts[i]`` applies after layer
    i and is one of relu/sigmoid/linear.
    """
    ones = b.constant(np.ones((n_rows, 1)))
    params = []
    node = x_const
    for i in range(len(dims) - 1):
        w = b.input((dims[i], dims[i + 1]))
        bias = b.input((1, dims[i + 1]))
        params.extend([w, bias])
        node = b.add(b.matmul(node, w), b.matmul(ones, bias))
        if acts[i] == "relu":
            node = b.relu(node)
        elif acts[i] == "sigmoid":
            node = b.sigmoid(node)
    return params, node


def _gradient_descent(graph, loss, param_ids, params: dict, steps: int, lr: float) -> dict:
    for _ in range(steps):
        _, grads = forward_backward(graph, params, loss)
        for pid in param_ids:
            params[pid] = params[pid] - lr * grads[pid]
    return params


def _serving_tensors(params: dict, param_ids) -> list[np.ndarray]:
    """Training weights (in,out) to serving layout: W (out,in), b (out,)."""
    out = []
    for i in range(0, len(param_ids), 2):
        w = params[param_ids[i]]
        bias = params[param_ids[i + 1]]
        out.extend([w.T.copy(), bias.reshape(-1).copy()])
    return out


def _train_classifier(spec: FixtureSpec, x: np.ndarray, y: np.ndarray, rng: np.random.Generator):
    s, n = x.shape
    k, hdim = spec.classes, spec.classifier_hidden
    targets = spec.target_scale * np.eye(k)[y]
    b = GraphBuilder()
    xc = b.constant(x)
    param_ids, logits = _batch_mlp(b, xc, s, [n, hdim, k], ["relu", "linear"])
    loss = b.sum(b.square(b.add(logits, b.constant(-targets))))
    graph = b.build()
    params = {}
    w1, b1 = _init(rng, n, hdim)
    w2, b2 = _init(rng, hdim, k)
    for pid, val in zip(param_ids, [w1, b1, w2, b2]):
        params[pid] = val
    params = _gradient_descent(graph, loss, param_ids, params, spec.classifier_steps,
                               spec.classifier_lr / s)
    final = np.maximum(x @ params[param_ids[0]] + params[param_ids[1]], 0.0)
    final = final @ params[param_ids[2]] + params[param_ids[3]]
    accuracy = float(np.mean(np.argmax(final, axis=1) == y))
    arch = f"dense {n} {hdim} relu dense {hdim} {k}"
    return (arch, tuple(_serving_tensors(params, param_ids))), accuracy


def _train_autoencoder(spec: FixtureSpec, x: np.ndarray, rng: np.random.Generator):
    s, n = x.shape
    dz, hdim = spec.latent_dim, spec.ae_hidden
    b = GraphBuilder()
    xc = b.constant(x)
    param_ids, recon = _batch_mlp(
        b, xc, s, [n, hdim, dz, hdim, n], ["relu", "linear", "relu", "sigmoid"]
    )
    loss = b.sum(b.square(b.add(recon, b.constant(-x))))
    graph = b.build()
    params = {}
    inits = [*_init(rng, n, hdim), *_init(rng, hdim, dz), *_init(rng, dz, hdim), *_init(rng, hdim, n)]
    for pid, val in zip(param_ids, inits):
        params[pid] = val
    params = _gradient_descent(graph, loss, param_ids, params, spec.ae_steps, spec.ae_lr / s)

    h1 = np.maximum(x @ params[param_ids[0]] + params[param_ids[1]], 0.0)
    z = h1 @ params[param_ids[2]] + params[param_ids[3]]
    h2 = np.maximum(z @ params[param_ids[4]] + params[param_ids[5]], 0.0)
    with np.errstate(over="ignore"):
        recon_np = 1.0 / (1.0 + np.exp(-(h2 @ params[param_ids[6]] + params[param_ids[7]])))
    mae = float(np.mean(np.abs(recon_np - x)))

    enc_arch = f"dense {n} {hdim} relu dense {hdim} {dz}"
    dec_arch = f"dense {dz} {hdim} relu dense {hdim} {n} sigmoid"
    enc = (enc_arch, tuple(_serving_tensors(params, param_ids[:4])))
    dec = (dec_arch, tuple(_serving_tensors(params, param_ids[4:])))
    return enc, dec, mae


def _analytic_attributes(spec: FixtureSpec) -> list[AttributeDef]:
    h, w, c = spec.height, spec.width, spec.channels
    n = spec.n_pixels

    def rowvec(weights_hw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        full = np.repeat(weights_hw[:, :, None], c, axis=2).reshape(1, n) / c
        return full, np.zeros(1)

    mean_w = np.full((h, w), 1.0 / (h * w))
    lr_w = np.zeros((h, w))
    lr_w[:, : w // 2] = 1.0
    lr_w[:, (w + 1) // 2 :] = -1.0
    lr_w /= h * (w // 2)
    tb_w = np.zeros((h, w))
    tb_w[: h // 2, :] = 1.0
    tb_w[(h + 1) // 2 :, :] = -1.0
    tb_w /= w * (h // 2)

    arch = f"dense {n} 1"
    return [
        AttributeDef("brightness", 1, 0.0, arch, rowvec(mean_w)),
        AttributeDef("left_mass", 1, 0.0, arch, rowvec(lr_w)),
        AttributeDef("top_mass", 1, 0.0, arch, rowvec(tb_w)),
    ]


def train_fixture(spec: FixtureSpec, seed: int, out_dir) -> tuple[ModelBundle, dict]:
    """Train and write a bundle; returns (loaded-quality bundle, quality info).

    Deterministic: one generator seeded with ``seed`` drives data, weight
    initialization, and nothing else.
    """
    rng = np.random.default_rng(seed)
    images, labels = synth_images(spec, rng, spec.samples_per_class)
    x = images.reshape(len(images), -1)
    classifier, accuracy = _train_classifier(spec, x, labels, rng)
    encoder, decoder, mae = _train_autoencoder(spec, x, rng)
    bundle = ModelBundle(
        image_shape=(spec.height, spec.width, spec.channels),
        latent_dim=spec.latent_dim,
        class_names=[f"blob{i}" for i in range(spec.classes)],
        classifier=classifier,
        decoder=decoder,
        attributes=_analytic_attributes(spec),
        encoder=encoder,
    )
    bundle.save(out_dir)
    info = {"train_accuracy": accuracy, "reconstruction_mae": mae}
    return bundle, info


def generate_fixture_set(spec: FixtureSpec, seed: int, out_dir) -> dict:
    """Bundle + evaluation images + a JSON-ready manifest describing them.

    Evaluation images are drawn after training from the same generator and
    stored as 8-bit PGM/PPM; recorded predictions and attribute values are
    computed on the reloaded (quantized) pixels, since that is what the
    solvers will consume.
    """
    from .bundle import load_bundle
    from .report import canonical_dumps

    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    images, labels = synth_images(spec, rng, spec.samples_per_class)
    x = images.reshape(len(images), -1)
    classifier, accuracy = _train_classifier(spec, x, labels, rng)
    encoder, decoder, mae = _train_autoencoder(spec, x, rng)
    bundle = ModelBundle(
        image_shape=(spec.height, spec.width, spec.channels),
        latent_dim=spec.latent_dim,
        class_names=[f"blob{i}" for i in range(spec.classes)],
        classifier=classifier,
        decoder=decoder,
        attributes=_analytic_attributes(spec),
        encoder=encoder,
    )
    bundle.save(out_dir / "bundle")
    bundle = load_bundle(out_dir / "bundle")  # quantized weights, like consumers see

    per_class = max(1, -(-spec.images // spec.classes))  # ceil
    eval_images, eval_labels = synth_images(spec, rng, per_class)
    # synth_images orders by class; interleave so truncation keeps variety
    order = np.argsort(np.arange(len(eval_labels)) % per_class, kind="stable")
    eval_images, eval_labels = eval_images[order][: spec.images], eval_labels[order][: spec.images]

    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (img, lbl) in enumerate(zip(eval_images, eval_labels)):
        name = f"img_{i:03d}"
        rel = f"images/{name}.pgm" if spec.channels == 1 else f"images/{name}.ppm"
        netpbm.write_image(out_dir / rel, img)
        reloaded = netpbm.read_image(out_dir / rel)
        attrs = bundle.eval_attributes(reloaded)
        entries.append(
            {
                "id": name,
                "file": rel,
                "label": int(lbl),
                "predicted_class": bundle.predict(reloaded),
                "attributes": {n: float(v) for n, v in zip(bundle.attribute_names, attrs)},
            }
        )
    manifest = {
        "bundle": "bundle",
        "seed": int(seed),
        "spec": asdict(spec),
        "train_accuracy": accuracy,
        "reconstruction_mae": mae,
        "images": entries,
    }
    (out_dir / "fixtures.json").write_text(canonical_dumps(manifest), encoding="ascii")
    return manifest
