"""Flat binary array files with a JSON manifest.

``<stem>.bin`` holds the arrays back to back as little-endian float64;
``<stem>.json`` lists each array's name, shape and byte offset together with
free-form metadata. Round trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ParseError

FORMAT = "ciea-flat-v1"


def _paths(stem):
    stem = Path(stem)
    return stem.with_suffix(".bin"), stem.with_suffix(".json")


def save_arrays(stem, arrays, meta=None):
    bin_path, json_path = _paths(stem)
    entries, offset = [], 0
    with bin_path.open("wb") as fh:
        for name, arr in arrays.items():
            buf = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(buf.tobytes())
            entries.append({"name": name, "shape": list(buf.shape), "offset": offset})
            offset += buf.nbytes
    manifest = {"format": FORMAT, "arrays": entries, "meta": meta or {}}
    json_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return bin_path, json_path


def load_arrays(stem):
    bin_path, json_path = _paths(stem)
    manifest = json.loads(json_path.read_text(encoding="utf-8"))
    if manifest.get("format") != FORMAT:
        raise ParseError(json_path, 1, f"unknown format {manifest.get('format')!r}")
    raw = bin_path.read_bytes()
    arrays = {}
    for e in manifest["arrays"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + 8 * count
        if end > len(raw):
            raise ParseError(bin_path, 1, f"array {e['name']!r} runs past the end of the file")
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f8", count=count,
                                          offset=e["offset"]).reshape(e["shape"]).astype(np.float64)
    return arrays, manifest["meta"]


def save_model(model, stem, vocab=None, extra=None):
    meta = {"model_config": model.config.to_dict(), "frozen_digest": model.frozen.digest()}
    if vocab is not None:
        meta["vocab"] = vocab.to_json()
    if extra:
        meta.update(extra)
    return save_arrays(stem, model.state_dict(), meta)


def load_model(stem):
    from .data import Vocabulary
    from .document import CIEAModel, ModelConfig

    arrays, meta = load_arrays(stem)
    model = CIEAModel(ModelConfig.from_dict(meta["model_config"]))
    model.load_state_dict(arrays)
    vocab = Vocabulary.from_json(meta["vocab"]) if "vocab" in meta else None
    return model, vocab, meta


def save_encoded(stem, ids, vectors, meta=None):
    info = {"ids": list(ids), "kind": "encoded-corpus"}
    info.update(meta or {})
    return save_arrays(stem, {"vectors": vectors}, info)


def load_encoded(stem):
    arrays, meta = load_arrays(stem)
    return meta["ids"], arrays["vectors"], meta
