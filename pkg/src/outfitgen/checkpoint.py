"""Versioned parameter checkpoints tied to a model configuration hash."""

from __future__ import annotations

import io
import json
import zipfile

import numpy as np

from . import autodiff as ad
from .model import TGNNConfig, check_params

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params, config, extra=None):
    """Write a zip archive with ``meta.json`` and one ``.npy`` per array.

    Entries are written in sorted order with a fixed timestamp so the same
    parameters always produce the same bytes.
    """
    meta = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "parameters": sorted(params),
        "extra": extra or {},
    }
    stamp = (1980, 1, 1, 0, 0, 0)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("meta.json", stamp)
        zf.writestr(info, json.dumps(meta, sort_keys=True, indent=2))
        for name in sorted(params):
            buf = io.BytesIO()
            np.save(buf, np.asarray(params[name].data, dtype=np.float64), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"params/{name}.npy", stamp), buf.getvalue())


def load_checkpoint(path, expected_config=None):
    """Return ``(params, config, meta)``.

    Raises :class:`CheckpointError` on an unknown format version, a config
    hash that does not match the stored config (or ``expected_config``), or
    parameters whose shapes disagree with the config.
    """
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    with zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except KeyError:
            raise CheckpointError(f"{path}: missing meta.json") from None
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: format version {meta.get('format_version')} is not {FORMAT_VERSION}"
            )
        config = TGNNConfig.from_dict(meta["config"])
        if config.hash() != meta.get("config_hash"):
            raise CheckpointError(f"{path}: stored config does not match its hash")
        if expected_config is not None and expected_config.hash() != meta["config_hash"]:
            raise CheckpointError(
                f"{path}: config hash {meta['config_hash']} differs from expected {expected_config.hash()}"
            )
        params = {}
        for name in meta["parameters"]:
            with zf.open(f"params/{name}.npy") as fh:
                arr = np.load(io.BytesIO(fh.read()), allow_pickle=False)
            params[name] = ad.Tensor(arr, requires_grad=True, name=name)
    try:
        check_params(params, config)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return params, config, meta
