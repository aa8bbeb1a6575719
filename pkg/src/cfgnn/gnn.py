"""Edge-centric message-passing GNN mapping a channel to a precoder.

The cell-free network is a complete bipartite graph between APs and UEs.
Each AP-UE edge carries a feature vector; edge features live in an array
of shape ``(..., K, M, d)`` so a whole batch of graphs is processed at once.
Per layer::

    z' = act(W_edge z + W_ap mean_ap(z) + W_ue mean_ue(z))

where ``mean_ap`` averages over the K edges at the edge's AP and ``mean_ue``
over the M edges at its UE.  The last layer has no activation and outputs
``[Re, Im]`` of the precoding weight, which is then power-normalized.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, InvalidArgumentError, NumericalFailureError
from .precoders import normalize_power

NUM_LAYERS = 8
CHECKPOINT_FORMAT = "cfgnn-checkpoint"
CHECKPOINT_VERSION = 1
WEIGHT_NAMES = ("edge", "ap", "ue")


@dataclass
class LayerWeights:
    """The three ``(d_out, d_in)`` matrices of one message-passing layer."""

    edge: np.ndarray
    ap: np.ndarray
    ue: np.ndarray

    def arrays(self):
        return (self.edge, self.ap, self.ue)

    def copy(self):
        return LayerWeights(*(a.copy() for a in self.arrays()))

    @property
    def shape(self):
        return self.edge.shape


@dataclass
class GnnParams:
    layers: list
    hidden_width: int
    leaky_slope: float = 0.01
    input_scale: float = 1.0
    seed: int | None = None
    # include an edge's own feature in the mean at its two endpoint nodes
    self_inclusive: bool = True

    def __post_init__(self):
        self.validate()

    @property
    def num_layers(self):
        return len(self.layers)

    def validate(self):
        dims = layer_dims(self.hidden_width, self.num_layers)
        for i, (layer, (d_in, d_out)) in enumerate(zip(self.layers, dims), start=1):
            for name, w in zip(WEIGHT_NAMES, layer.arrays()):
                if w.shape != (d_out, d_in):
                    raise InvalidArgumentError(
                        f"layer {i} {name}: expected shape {(d_out, d_in)}, got {w.shape}")
                if not np.all(np.isfinite(w)):
                    raise InvalidArgumentError(f"layer {i} {name}: non-finite weights")
        if not self.input_scale > 0:
            raise InvalidArgumentError(f"input_scale must be > 0, got {self.input_scale}")

    def copy(self):
        return GnnParams([l.copy() for l in self.layers], self.hidden_width,
                         self.leaky_slope, self.input_scale, self.seed, self.self_inclusive)

    def same_architecture(self, other):
        return (self.num_layers == other.num_layers
                and self.hidden_width == other.hidden_width
                and self.leaky_slope == other.leaky_slope
                and self.self_inclusive == other.self_inclusive)


@dataclass
class EdgeGraph:
    """Complete bipartite AP/UE graph with per-edge features ``(..., K, M, d)``."""

    features: np.ndarray
    input_scale: float = 1.0

    @property
    def num_ues(self):
        return self.features.shape[-3]

    @property
    def num_aps(self):
        return self.features.shape[-2]

    @property
    def num_edges(self):
        return self.num_ues * self.num_aps


def layer_dims(hidden_width, num_layers=NUM_LAYERS):
    """``(d_in, d_out)`` per layer: 2 -> d -> ... -> d -> 2."""
    if hidden_width < 1 or num_layers < 1:
        raise InvalidArgumentError("hidden_width and num_layers must be >= 1")
    ins = [2] + [hidden_width] * (num_layers - 1)
    outs = [hidden_width] * (num_layers - 1) + [2]
    return list(zip(ins, outs))


def init_params(hidden_width, rng, leaky_slope=0.01, num_layers=NUM_LAYERS,
                input_scale=1.0, seed=None, self_inclusive=True):
    """Uniform fan-based init: entries in ``[-s, s]``, ``s = sqrt(6 / (d_in + d_out))``."""
    layers = []
    for d_in, d_out in layer_dims(hidden_width, num_layers):
        s = np.sqrt(6.0 / (d_in + d_out))
        layers.append(LayerWeights(*(rng.uniform(-s, s, size=(d_out, d_in)) for _ in WEIGHT_NAMES)))
    return GnnParams(layers, hidden_width, leaky_slope, input_scale, seed, self_inclusive)


def build_edge_graph(g, input_scale=1.0):
    """Edge ``(m, k)`` gets feature ``[Re g_mk, Im g_mk] / input_scale``."""
    if not input_scale > 0:
        raise InvalidArgumentError(f"input_scale must be > 0, got {input_scale}")
    g = np.asarray(g)
    feats = np.stack([g.real, g.imag], axis=-1) / input_scale
    return EdgeGraph(feats, input_scale)


def node_messages(z, self_inclusive=True):
    """Mean-aggregated messages seen by every edge from its AP and its UE.

    Returns ``(ap_msg, ue_msg)``.  In inclusive mode these are the node means
    with a broadcastable singleton axis, ``(..., 1, M, d)`` and
    ``(..., K, 1, d)``.  In exclusive mode each edge's own feature is left
    out and both arrays have the full ``(..., K, M, d)`` shape; a node with a
    single edge then sends a zero message.
    """
    k, m = z.shape[-3], z.shape[-2]
    ap_sum = z.sum(axis=-3, keepdims=True)
    ue_sum = z.sum(axis=-2, keepdims=True)
    if self_inclusive:
        return ap_sum / k, ue_sum / m
    ap_msg = (ap_sum - z) / (k - 1) if k > 1 else np.zeros_like(z)
    ue_msg = (ue_sum - z) / (m - 1) if m > 1 else np.zeros_like(z)
    return ap_msg, ue_msg


def aggregate_node_messages(graph, node, self_inclusive=True):
    """Mean feature over the edges incident to ``node``.

    ``node`` is ``("ap", m)`` or ``("ue", k)``.  Only meaningful for a
    single, unbatched graph.
    """
    kind, idx = node
    z = graph.features
    if kind == "ap":
        if not 0 <= idx < graph.num_aps:
            raise InvalidArgumentError(f"no AP {idx}")
        return z[..., :, idx, :].mean(axis=-2)
    if kind == "ue":
        if not 0 <= idx < graph.num_ues:
            raise InvalidArgumentError(f"no UE {idx}")
        return z[..., idx, :, :].mean(axis=-2)
    raise InvalidArgumentError(f"unknown node kind {kind!r}")


def _leaky(x, slope):
    return np.where(x > 0, x, slope * x)


def _pre_activation(z, layer, self_inclusive):
    if z.shape[-1] != layer.edge.shape[1]:
        raise InvalidArgumentError(
            f"feature width {z.shape[-1]} does not match layer input width {layer.edge.shape[1]}")
    ap_msg, ue_msg = node_messages(z, self_inclusive)
    pre = z @ layer.edge.T + ap_msg @ layer.ap.T + ue_msg @ layer.ue.T
    return pre, ap_msg, ue_msg


def layer_forward(graph, layer, apply_activation=True, leaky_slope=0.01, self_inclusive=True):
    """One synchronous message-passing update; messages come from the input features."""
    pre, _, _ = _pre_activation(graph.features, layer, self_inclusive)
    out = _leaky(pre, leaky_slope) if apply_activation else pre
    return EdgeGraph(out, graph.input_scale)


def readout_to_precoder(out):
    """Edge outputs ``(..., K, M, 2)`` to the complex ``(..., M, K)`` precoder."""
    return np.swapaxes(out[..., 0] + 1j * out[..., 1], -1, -2)


def _check_finite(x, layer, stage):
    if not np.all(np.isfinite(x)):
        raise NumericalFailureError(f"non-finite values in layer {layer} ({stage})", layer=layer)


def forward_cached(g, params, total_power):
    """Run the network and keep what the backward pass needs.

    Returns ``(W, cache)``; ``W`` has shape ``(..., M, K)``.
    """
    z = build_edge_graph(g, params.input_scale).features
    cache = {"layers": []}
    last = params.num_layers
    for i, layer in enumerate(params.layers, start=1):
        pre, ap_msg, ue_msg = _pre_activation(z, layer, params.self_inclusive)
        _check_finite(pre, i, "forward")
        cache["layers"].append((z, ap_msg, ue_msg, pre))
        z = _leaky(pre, params.leaky_slope) if i < last else pre
    raw = readout_to_precoder(z)
    w = normalize_power(raw, total_power)
    cache["raw"] = raw
    return w, cache


def forward(g, params, total_power):
    """Precoder ``W`` (``(..., M, K)``) with ``trace(W W^H) = total_power``."""
    return forward_cached(g, params, total_power)[0]


def layer_backward(dpre, z, ap_msg, ue_msg, layer, self_inclusive=True):
    """Gradients of one layer given the gradient w.r.t. its pre-activation.

    Returns ``(LayerWeights of weight gradients, gradient w.r.t. input z)``.
    Weight gradients are summed over all edges and batch entries.
    """
    k, m = z.shape[-3], z.shape[-2]
    d_out, d_in = layer.edge.shape

    def outer(a, b):
        return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])

    g_edge = outer(dpre, z)
    dz = dpre @ layer.edge
    if self_inclusive:
        dpre_ap = dpre.sum(axis=-3, keepdims=True)
        dpre_ue = dpre.sum(axis=-2, keepdims=True)
        g_ap = outer(dpre_ap, ap_msg)
        g_ue = outer(dpre_ue, ue_msg)
        dz = dz + (dpre_ap @ layer.ap) / k + (dpre_ue @ layer.ue) / m
    else:
        g_ap = outer(dpre, ap_msg)
        g_ue = outer(dpre, ue_msg)
        if k > 1:
            d_ap = dpre @ layer.ap
            dz = dz + (d_ap.sum(axis=-3, keepdims=True) - d_ap) / (k - 1)
        if m > 1:
            d_ue = dpre @ layer.ue
            dz = dz + (d_ue.sum(axis=-2, keepdims=True) - d_ue) / (m - 1)
    assert g_edge.shape == (d_out, d_in)
    return LayerWeights(g_edge, g_ap, g_ue), dz


def backward(cache, grad_raw_out, params):
    """Backpropagate from the readout layer output to every weight.

    ``grad_raw_out`` is the gradient w.r.t. the last layer's output
    ``(..., K, M, 2)``.  Returns one LayerWeights of gradients per layer.
    """
    grads = [None] * params.num_layers
    dz = grad_raw_out
    for i in range(params.num_layers, 0, -1):
        z, ap_msg, ue_msg, pre = cache["layers"][i - 1]
        if i < params.num_layers:
            dpre = np.where(pre > 0, dz, params.leaky_slope * dz)
        else:
            dpre = dz
        grads[i - 1], dz = layer_backward(dpre, z, ap_msg, ue_msg, params.layers[i - 1],
                                          params.self_inclusive)
        for name, gw in zip(WEIGHT_NAMES, grads[i - 1].arrays()):
            _check_finite(gw, i, f"backward {name}")
    return grads


def _matrix_doc(w):
    return {"shape": list(w.shape), "data": [float(x) for x in w.ravel(order="C")]}


def checkpoint_document(params, extra=None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "num_layers": params.num_layers,
        "hidden_width": params.hidden_width,
        "leaky_slope": params.leaky_slope,
        "input_scale": params.input_scale,
        "self_inclusive": params.self_inclusive,
        "seed": params.seed,
        "layers": [{name: _matrix_doc(w) for name, w in zip(WEIGHT_NAMES, l.arrays())}
                   for l in params.layers],
    }
    if extra:
        doc["metadata"] = extra
    return doc


def save_checkpoint(params, path, extra=None):
    """Write params as JSON; floats use shortest round-trip repr so reload is exact."""
    with open(path, "w") as f:
        json.dump(checkpoint_document(params, extra), f, indent=1)
        f.write("\n")


def params_from_document(doc):
    try:
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"not a {CHECKPOINT_FORMAT} document")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {doc.get('version')}")
        layers = []
        for entry in doc["layers"]:
            mats = []
            for name in WEIGHT_NAMES:
                shape = tuple(entry[name]["shape"])
                mats.append(np.array(entry[name]["data"], dtype=np.float64).reshape(shape))
            layers.append(LayerWeights(*mats))
        if len(layers) != doc["num_layers"]:
            raise CheckpointError(
                f"num_layers={doc['num_layers']} but {len(layers)} layers stored")
        return GnnParams(layers, int(doc["hidden_width"]), float(doc["leaky_slope"]),
                         float(doc["input_scale"]), doc.get("seed"),
                         bool(doc.get("self_inclusive", True)))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc


def read_checkpoint(path):
    """Load ``(params, metadata)``; metadata is ``{}`` when none was stored."""
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CheckpointError(f"{path}: checkpoint must be a JSON object")
    return params_from_document(doc), doc.get("metadata", {})


def load_checkpoint(path):
    return read_checkpoint(path)[0]
