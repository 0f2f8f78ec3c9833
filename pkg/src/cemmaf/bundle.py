"""Model bundles: classifier, decoder, attribute functions, and their disk format.

A bundle directory holds a ``manifest`` text file plus one binary weight file
per component.  Weight files carry magic ``CMAF``, a little-endian u32
version, a u32 tensor count, then per tensor ``{ndim u32, dims u32*ndim,
float32 LE row-major data}``.  Weights are stored as float32 and widened to
float64 on load so the finite-difference oracle stays stable.

All components are dense multi-layer perceptrons described by a tiny arch
string, e.g. ``"dense 64 24 relu dense 24 3"``.  The decoder graph always
ends in a hard [0,1] clamp so decoded images stay inside the image box, and
attribute graphs end in an optional sign flip so that *higher value = more of
the concept* regardless of the stored direction.

Bundles are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Graph, GraphBuilder, backward_grad, forward_eval

WEIGHT_MAGIC = b"CMAF"
WEIGHT_VERSION = 1
MANIFEST_NAME = "manifest"
_MANIFEST_MAGIC = "cemmaf-bundle"
_MANIFEST_VERSION = 1

# latent inversion when no encoder ships with the bundle
INVERSION_STEPS = 500
INVERSION_STEP_SIZE = 0.05


class BundleError(Exception):
    """Missing or inconsistent bundle contents."""


class BundleFormatError(BundleError):
    """Corrupt manifest or weight file."""


def write_weights(path, tensors) -> None:
    """Serialize tensors to the CMAF weight format (float32, row-major)."""
    blob = bytearray()
    blob += WEIGHT_MAGIC
    blob += struct.pack("<II", WEIGHT_VERSION, len(tensors))
    for t in tensors:
        arr = np.ascontiguousarray(np.asarray(t, dtype=np.float64), dtype="<f4")
        if arr.ndim < 1 or any(d < 1 for d in arr.shape):
            raise BundleFormatError(f"weight tensors need positive dims, got shape {arr.shape}")
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    Path(path).write_bytes(bytes(blob))


def read_weights(path) -> list[np.ndarray]:
    """Read a CMAF weight file; tensors come back widened to float64."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise BundleError(f"missing component weight file: {path}") from None
    if data[:4] != WEIGHT_MAGIC:
        raise BundleFormatError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise BundleFormatError(f"{path}: truncated header")
    version, count = struct.unpack_from("<II", data, 4)
    if version != WEIGHT_VERSION:
        raise BundleFormatError(f"{path}: unsupported version {version}")
    off = 12
    tensors = []
    for _ in range(count):
        if off + 4 > len(data):
            raise BundleFormatError(f"{path}: truncated tensor header")
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        if ndim < 1 or off + 4 * ndim > len(data):
            raise BundleFormatError(f"{path}: bad tensor rank {ndim}")
        dims = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        n = int(np.prod(dims))
        if any(d < 1 for d in dims) or off + 4 * n > len(data):
            raise BundleFormatError(f"{path}: truncated tensor data")
        flat = np.frombuffer(data, dtype="<f4", count=n, offset=off)
        off += 4 * n
        tensors.append(flat.astype(np.float64).reshape(dims))
    if off != len(data):
        raise BundleFormatError(f"{path}: trailing bytes after last tensor")
    return tensors


# ---------------------------------------------------------------------------
# MLP arch strings
# ---------------------------------------------------------------------------


def parse_arch(arch: str) -> list[tuple]:
    """``"dense 4 8 relu dense 8 1 sigmoid"`` -> [("dense",4,8), ("relu",), ...]."""
    toks = arch.split()
    layers: list[tuple] = []
    i = 0
    while i < len(toks):
        t = toks[i]
        if t == "dense":
            try:
                din, dout = int(toks[i + 1]), int(toks[i + 2])
            except (IndexError, ValueError):
                raise BundleFormatError(f"arch {arch!r}: dense needs two integer dims") from None
            if din < 1 or dout < 1:
                raise BundleFormatError(f"arch {arch!r}: dense dims must be positive")
            layers.append(("dense", din, dout))
            i += 3
        elif t in ("relu", "sigmoid"):
            layers.append((t,))
            i += 1
        else:
            raise BundleFormatError(f"arch {arch!r}: unknown token {t!r}")
    if not layers or layers[0][0] != "dense":
        raise BundleFormatError(f"arch {arch!r}: must start with a dense layer")
    width = layers[0][1]
    for layer in layers:
        if layer[0] == "dense":
            if layer[1] != width:
                raise BundleFormatError(f"arch {arch!r}: dense input {layer[1]} != running width {width}")
            width = layer[2]
    return layers


def arch_tensor_count(arch: str) -> int:
    return 2 * sum(1 for layer in parse_arch(arch) if layer[0] == "dense")


def arch_dims(arch: str) -> tuple[int, int]:
    layers = parse_arch(arch)
    din = layers[0][1]
    dout = din
    for layer in layers:
        if layer[0] == "dense":
            dout = layer[2]
    return din, dout


@dataclass(frozen=True)
class GraphFn:
    """A graph with one designated input and output node."""

    graph: Graph
    input_id: int
    output_id: int

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward_eval(self.graph, {self.input_id: x})[self.output_id]


def _build_mlp(builder: GraphBuilder, arch: str, tensors) -> tuple[int, int]:
    """Append an MLP to ``builder``; returns (input node, output node)."""
    layers = parse_arch(arch)
    need = arch_tensor_count(arch)
    if len(tensors) != need:
        raise BundleFormatError(f"arch {arch!r} needs {need} tensors, got {len(tensors)}")
    x = builder.input((layers[0][1],))
    node = x
    ti = 0
    for layer in layers:
        if layer[0] == "dense":
            _, din, dout = layer
            w, b = np.asarray(tensors[ti]), np.asarray(tensors[ti + 1])
            ti += 2
            if w.shape != (dout, din) or b.shape != (dout,):
                raise BundleFormatError(
                    f"dense {din}->{dout}: want W {(dout, din)} and b {(dout,)}, "
                    f"got {w.shape} and {b.shape}"
                )
            node = builder.add(builder.matmul(builder.constant(w), node), builder.constant(b))
        elif layer[0] == "relu":
            node = builder.relu(node)
        else:
            node = builder.sigmoid(node)
    return x, node


def _clip01(builder: GraphBuilder, node: int) -> int:
    """min(max(x, 0), 1) from the fixed op set; subgradient 0 outside (0, 1]."""
    lo = builder.max_with_zero(node)
    ones = np.ones(builder.shape_of(node))
    over = builder.max_with_zero(builder.add(lo, builder.constant(-ones)))
    return builder.add(lo, builder.scale(over, -1.0))


def build_mlp_fn(arch: str, tensors, clamp_unit: bool = False, flip_sign: bool = False) -> GraphFn:
    b = GraphBuilder()
    x, out = _build_mlp(b, arch, tensors)
    if clamp_unit:
        out = _clip01(b, out)
    if flip_sign:
        out = b.scale(out, -1.0)
    return GraphFn(b.build(), x, out)


# ---------------------------------------------------------------------------
# Bundle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttributeDef:
    """One monotonic attribute function: higher oriented value = more concept."""

    name: str
    direction: int       # +1 or -1, applied to the raw graph output
    threshold: float     # reporting threshold for "meaningfully added"
    arch: str
    tensors: tuple


@dataclass(frozen=True)
class Attribute:
    name: str
    direction: int
    threshold: float
    fn: GraphFn  # orientation already applied


class ModelBundle:
    """Classifier + decoder + attribute functions (+ optional encoder).

    Components are given as ``(arch, tensors)`` pairs; attribute functions as
    :class:`AttributeDef`.  Shapes are cross-checked at construction.
    """

    def __init__(
        self,
        image_shape: tuple[int, int, int],
        latent_dim: int,
        class_names,
        classifier: tuple[str, tuple],
        decoder: tuple[str, tuple],
        attributes,
        encoder: tuple[str, tuple] | None = None,
    ):
        h, w, c = (int(v) for v in image_shape)
        if h < 1 or w < 1 or c < 1:
            raise BundleError(f"bad image shape {(h, w, c)}")
        self.image_shape = (h, w, c)
        self.n_pixels = h * w * c
        self.latent_dim = int(latent_dim)
        if self.latent_dim < 1:
            raise BundleError("latent_dim must be positive")
        self.class_names = tuple(str(n) for n in class_names)
        if len(self.class_names) < 2:
            raise BundleError("need at least two classes")
        for name in self.class_names:
            if not name or any(ch.isspace() for ch in name):
                raise BundleError(f"class name {name!r} must be a non-empty single token")

        self._defs = {"classifier": classifier, "decoder": decoder, "encoder": encoder}
        self._attr_defs = tuple(attributes)

        din, dout = arch_dims(classifier[0])
        if din != self.n_pixels or dout != len(self.class_names):
            raise BundleError(
                f"classifier maps {din}->{dout}, expected {self.n_pixels}->{len(self.class_names)}"
            )
        self.classifier = build_mlp_fn(*classifier)

        din, dout = arch_dims(decoder[0])
        if din != self.latent_dim or dout != self.n_pixels:
            raise BundleError(f"decoder maps {din}->{dout}, expected {self.latent_dim}->{self.n_pixels}")
        self.decoder = build_mlp_fn(*decoder, clamp_unit=True)

        if encoder is not None:
            din, dout = arch_dims(encoder[0])
            if din != self.n_pixels or dout != self.latent_dim:
                raise BundleError(
                    f"encoder maps {din}->{dout}, expected {self.n_pixels}->{self.latent_dim}"
                )
            self.encoder = build_mlp_fn(*encoder)
        else:
            self.encoder = None

        attrs = []
        seen = set()
        for ad in self._attr_defs:
            if ad.name in seen:
                raise BundleError(f"duplicate attribute name {ad.name!r}")
            if not ad.name or any(ch.isspace() for ch in ad.name):
                raise BundleError(f"attribute name {ad.name!r} must be a non-empty single token")
            seen.add(ad.name)
            if ad.direction not in (1, -1):
                raise BundleError(f"attribute {ad.name!r}: direction must be +1 or -1")
            din, dout = arch_dims(ad.arch)
            if din != self.n_pixels or dout != 1:
                raise BundleError(f"attribute {ad.name!r} maps {din}->{dout}, expected {self.n_pixels}->1")
            fn = build_mlp_fn(ad.arch, ad.tensors, flip_sign=(ad.direction < 0))
            attrs.append(Attribute(ad.name, ad.direction, float(ad.threshold), fn))
        if not attrs:
            raise BundleError("need at least one attribute function")
        self.attributes = tuple(attrs)

    # -- core operations ----------------------------------------------------

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def attribute_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def image_vec(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != self.image_shape:
            raise BundleError(f"image shape {image.shape} != bundle shape {self.image_shape}")
        return image.reshape(-1)

    def classify(self, image: np.ndarray) -> np.ndarray:
        """Raw logit vector of length n_classes."""
        return self.classifier(self.image_vec(image))

    def predict(self, image: np.ndarray) -> int:
        """argmax class; ties break toward the lowest class index."""
        return int(np.argmax(self.classify(image)))

    def decode(self, z: np.ndarray) -> np.ndarray:
        """Decoded (H, W, C) image; the graph clamps outputs into [0, 1]."""
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.latent_dim,):
            raise BundleError(f"latent shape {z.shape} != ({self.latent_dim},)")
        return self.decoder(z).reshape(self.image_shape)

    def eval_attributes(self, image: np.ndarray) -> np.ndarray:
        """Oriented attribute values g_i(image), length k."""
        vec = self.image_vec(image)
        return np.concatenate([a.fn(vec) for a in self.attributes])

    def infer_latent(self, image: np.ndarray) -> np.ndarray:
        """Latent code for an image: encoder if present, else decoder inversion.

        Inversion runs a fixed 500 plain gradient steps (step 0.05) on
        ``||image - decode(z)||^2`` from z = 0; deterministic.
        """
        vec = self.image_vec(image)
        if self.encoder is not None:
            return self.encoder(vec)
        b = GraphBuilder()
        z_in = b.input((self.latent_dim,))
        sub = b.splice(self.decoder.graph, {self.decoder.input_id: z_in})
        img = sub[self.decoder.output_id]
        diff = b.add(b.constant(vec), b.scale(img, -1.0))
        loss = b.sum(b.square(diff))
        g = b.build()
        z = np.zeros(self.latent_dim)
        for _ in range(INVERSION_STEPS):
            grad = backward_grad(g, {z_in: z}, loss)[z_in]
            z = z - INVERSION_STEP_SIZE * grad
        return z

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        save_bundle(self, path)


def _component_files() -> dict[str, str]:
    return {
        "classifier": "classifier.cmaf",
        "decoder": "decoder.cmaf",
        "encoder": "encoder.cmaf",
        "attributes": "attributes.cmaf",
    }


def save_bundle(bundle: ModelBundle, path) -> None:
    """Write manifest plus one weight file per component."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = _component_files()
    lines = [f"{_MANIFEST_MAGIC} {_MANIFEST_VERSION}"]
    h, w, c = bundle.image_shape
    lines.append(f"image_shape {h} {w} {c}")
    lines.append(f"latent_dim {bundle.latent_dim}")
    lines.append("classes " + " ".join(bundle.class_names))
    for comp in ("classifier", "decoder"):
        arch, tensors = bundle._defs[comp]
        lines.append(f"{comp} {files[comp]} {arch}")
        write_weights(path / files[comp], tensors)
    if bundle._defs["encoder"] is not None:
        arch, tensors = bundle._defs["encoder"]
        lines.append(f"encoder {files['encoder']} {arch}")
        write_weights(path / files["encoder"], tensors)
    lines.append(f"attributes {files['attributes']}")
    attr_tensors = []
    for ad in bundle._attr_defs:
        sign = "+" if ad.direction > 0 else "-"
        lines.append(f"attribute {ad.name} {sign} {ad.threshold!r} {ad.arch}")
        attr_tensors.extend(ad.tensors)
    write_weights(path / files["attributes"], attr_tensors)
    (path / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_bundle(path) -> ModelBundle:
    """Load and shape-check a bundle directory."""
    path = Path(path)
    manifest = path / MANIFEST_NAME
    if not manifest.is_file():
        raise BundleError(f"missing component: manifest ({manifest})")
    fields: dict[str, list[str]] = {}
    attr_lines: list[list[str]] = []
    for ln, raw in enumerate(manifest.read_text(encoding="ascii").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = line.split()
        if ln == 1 or not fields:
            if toks[0] != _MANIFEST_MAGIC or len(toks) != 2 or toks[1] != str(_MANIFEST_VERSION):
                raise BundleFormatError(f"{manifest}: bad magic line {line!r}")
            fields["_magic"] = toks
            continue
        if toks[0] == "attribute":
            attr_lines.append(toks[1:])
        elif toks[0] in ("image_shape", "latent_dim", "classes", "classifier", "decoder", "encoder", "attributes"):
            if toks[0] in fields:
                raise BundleFormatError(f"{manifest}: duplicate field {toks[0]!r}")
            fields[toks[0]] = toks[1:]
        else:
            raise BundleFormatError(f"{manifest}: unknown field {toks[0]!r}")

    for req in ("image_shape", "latent_dim", "classes", "classifier", "decoder", "attributes"):
        if req not in fields:
            raise BundleFormatError(f"{manifest}: missing field {req!r}")
    try:
        image_shape = tuple(int(v) for v in fields["image_shape"])
        latent_dim = int(fields["latent_dim"][0])
    except (ValueError, IndexError):
        raise BundleFormatError(f"{manifest}: bad image_shape/latent_dim") from None
    if len(image_shape) != 3:
        raise BundleFormatError(f"{manifest}: image_shape needs three dims")

    def comp(name: str):
        toks = fields[name]
        if len(toks) < 2:
            raise BundleFormatError(f"{manifest}: field {name!r} needs a file and an arch")
        file, arch = toks[0], " ".join(toks[1:])
        wpath = path / file
        if not wpath.is_file():
            raise BundleError(f"missing component: {name} ({wpath})")
        return arch, tuple(read_weights(wpath))

    classifier = comp("classifier")
    decoder = comp("decoder")
    encoder = comp("encoder") if "encoder" in fields else None

    if len(fields["attributes"]) != 1:
        raise BundleFormatError(f"{manifest}: attributes field wants exactly one filename")
    apath = path / fields["attributes"][0]
    if not apath.is_file():
        raise BundleError(f"missing component: attributes ({apath})")
    attr_tensors = read_weights(apath)
    if not attr_lines:
        raise BundleFormatError(f"{manifest}: no attribute lines")
    attr_defs = []
    cursor = 0
    for toks in attr_lines:
        if len(toks) < 4 or toks[1] not in ("+", "-"):
            raise BundleFormatError(f"{manifest}: bad attribute line {' '.join(toks)!r}")
        name, sign, thr = toks[0], toks[1], toks[2]
        arch = " ".join(toks[3:])
        need = arch_tensor_count(arch)
        if cursor + need > len(attr_tensors):
            raise BundleFormatError(f"{manifest}: attribute file has too few tensors")
        try:
            threshold = float(thr)
        except ValueError:
            raise BundleFormatError(f"{manifest}: bad attribute threshold {thr!r}") from None
        attr_defs.append(
            AttributeDef(name, 1 if sign == "+" else -1, threshold, arch,
                         tuple(attr_tensors[cursor : cursor + need]))
        )
        cursor += need
    if cursor != len(attr_tensors):
        raise BundleFormatError(f"{manifest}: attribute file has unused tensors")

    return ModelBundle(
        image_shape=image_shape,
        latent_dim=latent_dim,
        class_names=fields["classes"],
        classifier=classifier,
        decoder=decoder,
        attributes=attr_defs,
        encoder=encoder,
    )
