"""Single-file model containers: a JSON config echo plus named arrays."""
import json
import zipfile

import numpy as np

from .errors import ModelLoadError

_META = "__meta__"


def save_model(path, kind, config, arrays):
    meta = json.dumps({"kind": kind, "config": config}, sort_keys=True)
    payload = {name: np.asarray(a, dtype=np.float64) for name, a in arrays.items()}
    payload[_META] = np.array(meta)
    # Written entry by entry with a fixed timestamp so reruns are byte-identical.
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(payload):
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w") as fh:
                np.lib.format.write_array(fh, payload[name], allow_pickle=False)


def load_model(path, kind, expected_shapes=None):
    """Return ``(config, arrays)``; shapes are checked when ``expected_shapes`` is given."""
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data[_META]))
            arrays = {k: data[k] for k in data.files if k != _META}
    except (OSError, ValueError, KeyError) as exc:
        raise ModelLoadError(f"cannot read model file {path}: {exc}") from None
    if meta.get("kind") != kind:
        raise ModelLoadError(f"{path} holds a {meta.get('kind')!r} model, expected {kind!r}")
    if expected_shapes is not None:
        check_shapes(arrays, expected_shapes, path)
    return meta["config"], arrays


def check_shapes(arrays, expected, source="model"):
    missing = set(expected) - set(arrays)
    extra = set(arrays) - set(expected)
    if missing or extra:
        raise ModelLoadError(f"{source}: missing arrays {sorted(missing)}, unexpected {sorted(extra)}")
    for name, shape in expected.items():
        if tuple(arrays[name].shape) != tuple(shape):
            raise ModelLoadError(
                f"{source}: array {name!r} has shape {arrays[name].shape}, expected {tuple(shape)}")
