"""Atomic report writers and model (de)serialization."""

from __future__ import annotations

import csv
import io
import json
import os

from .errors import ConfigError


def write_text(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path, obj) -> None:
    write_text(path, json.dumps(obj, indent=2, allow_nan=True) + "\n")


def write_rows(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])
    write_text(path, buf.getvalue())


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def model_to_dict(model) -> dict:
    return model.to_dict()


def model_from_dict(d: dict):
    from .baselines import DecisionTreeModel, ForestModel, KnnModel
    from .explain import TreeEnsemble
    from .gbt import GbtEnsemble

    kinds = {"knn": KnnModel, "tree": DecisionTreeModel, "forest": ForestModel, "gbt": GbtEnsemble,
             "ensemble": TreeEnsemble}
    try:
        cls = kinds[d["type"]]
    except (KeyError, TypeError):
        raise ConfigError(f"model document has unknown type {d.get('type') if isinstance(d, dict) else d!r}") from None
    return cls.from_dict(d)


def load_model(path):
    return model_from_dict(read_json(path))
