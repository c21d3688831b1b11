"""Serialized artifact envelopes.

Every artifact written by the CLI carries the library version, the hash of
the effective run configuration and the hash of the dataset it was computed
from.  Loading an artifact against data with a different hash is an error:
fits are only meaningful next to the exact data that produced them.
"""

from __future__ import annotations

import hashlib
import json

from . import __version__
from .errors import ValidationError


def config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]


def wrap(kind: str, payload: dict, data_hash: str, cfg_hash: str) -> dict:
    return {
        "kind": kind,
        "version": __version__,
        "config_hash": cfg_hash,
        "data_hash": data_hash,
        "payload": payload,
    }


def write_artifact(path, kind, payload, data_hash, cfg_hash) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(wrap(kind, payload, data_hash, cfg_hash), fh, indent=2)
        fh.write("\n")


def read_artifact(path, kind: str, expect_data_hash: str | None = None) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("kind") != kind:
        raise ValidationError(
            f"{path}: expected artifact kind {kind!r}, found {data.get('kind')!r}"
        )
    if expect_data_hash is not None and data.get("data_hash") != expect_data_hash:
        raise ValidationError(
            f"{path}: artifact was computed from different data "
            f"(hash {data.get('data_hash')} != {expect_data_hash})"
        )
    return data["payload"]
