"""
Label manifest: address -> human (1) / non-human (0).
CSV with header "address,label" and an optional "note" column.
"""
from typing import Dict, List

import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from errors import ManifestError
from helpers import ensure_parent

HUMAN = 1
NON_HUMAN = 0


class ManifestEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    address: str
    label: int
    note: str = ""

    @field_validator("label")
    @classmethod
    def _binary(cls, value: int) -> int:
        if value not in (HUMAN, NON_HUMAN):
            raise ValueError(f"label must be 0 or 1, got {value}")
        return value


class LabelManifest(BaseModel):
    model_config = ConfigDict(frozen=True)

    entries: List[ManifestEntry] = []

    @model_validator(mode="after")
    def _unique(self):
        seen = set()
        for entry in self.entries:
            if entry.address in seen:
                raise ValueError(f"address {entry.address!r} appears twice")
            seen.add(entry.address)
        return self

    def labels(self) -> Dict[str, int]:
        return {e.address: e.label for e in self.entries}


def load_manifest(path: str) -> LabelManifest:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ManifestError(f"Cannot read label manifest {path}: {e}") from e
    if list(frame.columns[:2]) != ["address", "label"]:
        raise ManifestError(f"Label manifest {path} must start with header 'address,label'")
    try:
        entries = [
            ManifestEntry(
                address=row["address"].strip(),
                label=int(row["label"]),
                note=row.get("note", "") or "",
            )
            for _, row in frame.iterrows()
        ]
        return LabelManifest(entries=entries)
    except (ValueError, ValidationError) as e:
        raise ManifestError(f"Invalid label manifest {path}: {e}") from e


def write_manifest(path: str, manifest: LabelManifest) -> str:
    frame = pd.DataFrame(
        [{"address": e.address, "label": e.label, "note": e.note} for e in manifest.entries],
        columns=["address", "label", "note"],
    )
    ensure_parent(path)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path
