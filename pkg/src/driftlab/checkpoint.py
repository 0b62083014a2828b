"""Bit-exact JSON checkpoints.

Every float64 is stored as 16 hex characters of its little-endian IEEE-754
encoding, so save/load round-trips are exact while the envelope stays
readable.  A SHA-256 digest over the canonical JSON of all other fields
guards against tampering and silent truncation.
"""
import hashlib
import json

import numpy as np

from .errors import CheckpointError, IntegrityError, TruncatedCheckpointError, VersionError
from .ewc import AnchorParams, FisherDiagonal
from .network import LayerSpec, Network

FORMAT = "driftlab-checkpoint"
FORMAT_VERSION = 1


def encode_block(name, array):
    a = np.ascontiguousarray(array, dtype="<f8")
    raw = a.tobytes().hex()
    return {"name": name, "shape": list(a.shape),
            "data": [raw[i:i + 16] for i in range(0, len(raw), 16)]}


def decode_block(block):
    shape = tuple(int(s) for s in block["shape"])
    data = block["data"]
    if len(data) != int(np.prod(shape)) or any(len(h) != 16 for h in data):
        raise TruncatedCheckpointError(f"block {block.get('name')!r} has the wrong number of values")
    return np.frombuffer(bytes.fromhex("".join(data)), dtype="<f8").reshape(shape).astype(np.float64)


def _layer_names(prefix, n_layers):
    return [f"{prefix}{kind}{i + 1}" for i in range(n_layers) for kind in ("W", "b")]


def _encode_layers(layers):
    return [{"in": s.in_dim, "out": s.out_dim, "activation": s.activation} for s in layers]


def _decode_layers(items):
    return [LayerSpec(int(d["in"]), int(d["out"]), d["activation"]) for d in items]


def _digest(doc):
    body = {k: v for k, v in doc.items() if k != "digest"}
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def checkpoint_document(model, fisher=None, anchor=None):
    from .dira_ss import YModel

    if isinstance(model, YModel):
        layers = model.trunk_layers + model.main_layers
        params = model.trunk_params + model.main_params
        doc = {"kind": "ymodel", "split_k": model.k,
               "aux_architecture": _encode_layers(model.aux_layers),
               "aux_head": [encode_block(n, p) for n, p in
                            zip(_layer_names("aux_", len(model.aux_layers)), model.aux_params)]}
        covered = _layer_names("", model.k) + _layer_names("aux_", len(model.aux_layers))
    elif isinstance(model, Network):
        layers, params = model.layers, model.params
        doc = {"kind": "network", "split_k": None}
        covered = _layer_names("", len(layers))
    else:
        raise CheckpointError(f"cannot checkpoint object of type {type(model).__name__}")
    doc.update({
        "format": FORMAT, "format_version": FORMAT_VERSION,
        "architecture": _encode_layers(layers), "seed": int(model.rng_seed),
        "params": [encode_block(n, p) for n, p in zip(_layer_names("", len(layers)), params)],
        "fisher": None, "anchor": None,
    })
    if fisher is not None:
        doc["fisher"] = {"n_samples": fisher.n_samples, "source_fingerprint": fisher.source_fingerprint,
                         "label_mode": fisher.label_mode,
                         "blocks": [encode_block(n, v) for n, v in zip(covered, fisher.values)]}
    if anchor is not None:
        doc["anchor"] = {"blocks": [encode_block(n, v) for n, v in zip(covered, anchor.values)]}
    doc["digest"] = _digest(doc)
    return doc


def dumps_checkpoint(model, fisher=None, anchor=None):
    return json.dumps(checkpoint_document(model, fisher, anchor), indent=1, sort_keys=True) + "\n"


def save_checkpoint(model, path, fisher=None, anchor=None):
    text = dumps_checkpoint(model, fisher, anchor)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def parse_checkpoint(doc):
    from .dira_ss import YModel

    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise TruncatedCheckpointError("not a driftlab checkpoint")
    if doc.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")
    if doc.get("digest") != _digest(doc):
        raise IntegrityError("checkpoint digest does not match its contents")
    try:
        layers = _decode_layers(doc["architecture"])
        params = [decode_block(b) for b in doc["params"]]
        if doc["kind"] == "ymodel":
            k = int(doc["split_k"])
            aux_layers = _decode_layers(doc["aux_architecture"])
            aux_params = [decode_block(b) for b in doc["aux_head"]]
            model = YModel(layers[:k], params[:2 * k], layers[k:], params[2 * k:],
                           aux_layers, aux_params, k, int(doc["seed"]))
        else:
            model = Network(layers, params, int(doc["seed"]))
        fisher = anchor = None
        if doc.get("fisher"):
            f = doc["fisher"]
            fisher = FisherDiagonal([decode_block(b) for b in f["blocks"]], int(f["n_samples"]),
                                    f["source_fingerprint"], f["label_mode"])
        if doc.get("anchor"):
            anchor = AnchorParams([decode_block(b) for b in doc["anchor"]["blocks"]])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise TruncatedCheckpointError(f"malformed checkpoint: {exc}") from exc
    return model, fisher, anchor


def load_checkpoint(path):
    """Return ``(model, fisher or None, anchor or None)``."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TruncatedCheckpointError(f"{path}: unreadable checkpoint ({exc.msg} at char {exc.pos})") from exc
    return parse_checkpoint(doc)
