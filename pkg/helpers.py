"""
Helper functions shared by the pipeline packages
"""
import json
import logging
import os
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd


def configure_logging(level: str = "INFO") -> None:
    """Install one stream handler for the whole process."""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
        force=True,
    )


def ensure_parent(path: str) -> str:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    return path


def derive_seeds(master_seed: int, count: int) -> List[int]:
    """Deterministic child seeds (folds, entities) from one master seed."""
    children = np.random.SeedSequence(master_seed).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


def write_json(path: str, payload: Dict[str, Any], provenance: Optional[Dict[str, Any]] = None) -> str:
    """
    Write a JSON artifact with sorted keys so reruns are byte-identical.
    The provenance block (config hash + seed) is embedded when given.
    """
    body = dict(payload)
    if provenance is not None:
        body["provenance"] = provenance
    ensure_parent(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(body, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")
    return path


def read_json(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_csv(path: str, frame: pd.DataFrame, provenance: Optional[Dict[str, Any]] = None) -> str:
    """CSV artifact. Provenance goes on a leading '#' comment line."""
    ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if provenance is not None:
            fh.write("# " + " ".join(f"{k}={provenance[k]}" for k in sorted(provenance)) + "\n")
        frame.to_csv(fh, index=False, lineterminator="\n", float_format="%.17g")
    return path


def read_csv(path: str, **kwargs) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", **kwargs)


def write_sidecar(path: str, provenance: Dict[str, Any], **extra: Any) -> str:
    """Provenance for line-oriented corpora lives next to the file."""
    return write_json(path + ".meta.json", dict(extra), provenance=provenance)
