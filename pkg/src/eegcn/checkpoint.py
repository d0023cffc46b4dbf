"""Self-describing ``.npz`` checkpoints.

Every parameter is stored as ``param/<name>``; a JSON header (format tag,
model config, vocabulary, relation statistics, run metadata) is stored as
UTF-8 bytes under ``__meta__`` so the file loads without pickle.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Vocabulary
from .model import ModelConfig, ModelParams
from .syntax import SdiTable

FORMAT = "eegcn-checkpoint/1"


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    config: ModelConfig
    vocab: Vocabulary
    sdi: SdiTable
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, params: ModelParams, config: ModelConfig, vocab: Vocabulary,
                    sdi: SdiTable, **meta):
    header = {
        "format": FORMAT,
        "config": config.to_dict(),
        "vocab": vocab.itos,
        "vocab_sha256": vocab.digest(),
        "sdi": sdi.to_json(),
        "params": params.names(),
        "meta": meta,
    }
    arrays = {f"param/{name}": t.data for name, t in params.tensors.items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"),
                                       dtype=np.uint8)
    with Path(path).open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> Checkpoint:
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(data["__meta__"].tobytes().decode("utf-8"))
            fmt = header.get("format")
            if fmt != FORMAT:
                raise CheckpointVersionError(f"{path}: checkpoint format {fmt!r} is not "
                                             f"supported (expected {FORMAT!r})")
            state = {name: data[f"param/{name}"] for name in header["params"]}
    except (OSError, KeyError, ValueError, zipfile.BadZipFile) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    vocab = Vocabulary(header["vocab"])
    if vocab.digest() != header["vocab_sha256"]:
        raise CheckpointError(f"{path}: vocabulary digest mismatch")
    return Checkpoint(
        params=ModelParams.from_state(state),
        config=ModelConfig.from_dict(header["config"]),
        vocab=vocab,
        sdi=SdiTable.from_json(header["sdi"]),
        meta=header.get("meta", {}),
    )
