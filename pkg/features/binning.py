"""
Per-(entity, day) time binning of connection records.

Each device's day becomes T rows (bins of 86400/T seconds) x 17 features.
Quantitative cells are the mean of the values present in the bin, categorical cells the most
frequent token (ties -> lexicographically smallest), norm_vol the number of
records in the bin. Bins without records are all-missing rows.
"""
import json
import logging
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, StrictFloat, StrictInt, StrictStr, field_validator, model_validator

from errors import ConfigError, DataError
from features.manifest import LabelManifest
from helpers import ensure_parent
from ingest.zeek import ConnRecord

logger = logging.getLogger(__name__)

CATEGORICAL_FEATURES = [
    "orig_port", "resp_port", "proto", "service",
    "conn_state", "local_orig", "local_resp", "history",
]
QUANTITATIVE_FEATURES = [
    "duration", "orig_bytes", "resp_bytes", "missed_bytes",
    "orig_ip_bytes", "resp_ip_bytes", "orig_pkts", "resp_pkts",
]
COMPUTED_FEATURES = ["norm_vol"]
FEATURES = CATEGORICAL_FEATURES + QUANTITATIVE_FEATURES + COMPUTED_FEATURES
NUMERIC_FEATURES = QUANTITATIVE_FEATURES + COMPUTED_FEATURES
PORT_FEATURES = ("orig_port", "resp_port")
FLAG_FEATURES = ("local_orig", "local_resp")
UNSET_FLAG = "unset"

SECONDS_PER_DAY = 86400

Cell = Optional[Union[StrictInt, StrictFloat, StrictStr]]


class BinningConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    timesteps: int = 1440
    timezone: str = "UTC"

    @property
    def bin_seconds(self) -> int:
        return SECONDS_PER_DAY // self.timesteps


class DaySequence(BaseModel):
    """One entity-day. rows[t][f] follows FEATURES order."""
    model_config = ConfigDict(frozen=True)

    entity: str
    date: str
    rows: List[List[Cell]]
    label: Optional[int] = None

    @field_validator("label")
    @classmethod
    def _binary(cls, value):
        if value is not None and value not in (0, 1):
            raise ValueError("label must be 0, 1 or unset")
        return value

    @model_validator(mode="after")
    def _shape(self):
        if not self.rows or SECONDS_PER_DAY % len(self.rows) != 0:
            raise ValueError(f"row count {len(self.rows)} does not divide a day")
        for row in self.rows:
            if len(row) != len(FEATURES):
                raise ValueError(f"row has {len(row)} cells, expected {len(FEATURES)}")
        return self

    @property
    def timesteps(self) -> int:
        return len(self.rows)

    def column(self, feature: str) -> List[Cell]:
        idx = FEATURES.index(feature)
        return [row[idx] for row in self.rows]


class BinningResult(BaseModel):
    sequences: List[DaySequence]
    skipped: int = 0


def attribute_entity(record: ConnRecord) -> str:
    """Local side wins: local_orig -> orig_addr, local_resp -> resp_addr, else orig_addr."""
    if record.local_orig is True:
        return record.orig_addr
    if record.local_resp is True:
        return record.resp_addr
    return record.orig_addr


def _flag_token(value: Optional[bool]) -> str:
    if value is None:
        return UNSET_FLAG
    return "T" if value else "F"


def _records_frame(records: Iterable[ConnRecord], config: BinningConfig) -> Tuple[pd.DataFrame, int]:
    rows = []
    for r in records:
        data = r.model_dump()
        data["entity"] = attribute_entity(r)
        data["local_orig"] = _flag_token(r.local_orig)
        data["local_resp"] = _flag_token(r.local_resp)
        rows.append(data)
    columns = ["ts", "entity"] + CATEGORICAL_FEATURES + QUANTITATIVE_FEATURES
    frame = pd.DataFrame(rows, columns=columns)
    if frame.empty:
        return frame.assign(date=[], bin=[]), 0
    for port in PORT_FEATURES:
        frame[port] = frame[port].astype("Int64")
    for feature in QUANTITATIVE_FEATURES:
        frame[feature] = frame[feature].astype("float64")

    local = pd.to_datetime(frame["ts"], unit="s", utc=True, errors="coerce")
    bad = local.isna()
    skipped = int(bad.sum())
    if skipped:
        logger.warning(f"[BINNING] skipped {skipped} record(s) with unparseable timestamps")
    frame = frame.loc[~bad].copy()
    local = local.loc[~bad].dt.tz_convert(config.timezone)
    # wall-clock position in the local day; DST days keep T bins
    seconds = local.dt.hour * 3600 + local.dt.minute * 60 + local.dt.second
    frame["date"] = local.dt.strftime("%Y-%m-%d")
    frame["bin"] = (seconds // config.bin_seconds).astype("int64")
    return frame, skipped


def _mode_frame(frame: pd.DataFrame, keys: List[str], feature: str) -> pd.DataFrame:
    present = frame.loc[frame[feature].notna(), keys + [feature]]
    counts = present.groupby(keys + [feature], sort=False).size().reset_index(name="_n")
    counts["_token"] = counts[feature].astype(str)
    counts = counts.sort_values(keys + ["_n", "_token"], ascending=[True] * len(keys) + [False, True], kind="mergesort")
    return counts.drop_duplicates(keys, keep="first")[keys + [feature]]


def _python_cell(value, feature: str) -> Cell:
    if value is None or value is pd.NA:
        return None
    if isinstance(value, float) and np.isnan(value):
        return None
    if feature in PORT_FEATURES or feature == "norm_vol":
        return int(value)
    if feature in QUANTITATIVE_FEATURES:
        return float(value)
    return str(value)


def bin_to_days(
    records: Iterable[ConnRecord],
    manifest: Optional[LabelManifest],
    config: BinningConfig,
) -> BinningResult:
    """One DaySequence per (entity, day) with at least one record, sorted by (entity, date)."""
    if config.timesteps <= 0 or SECONDS_PER_DAY % config.timesteps != 0:
        raise ConfigError(f"TIMESTEPS={config.timesteps} must divide {SECONDS_PER_DAY} evenly")

    frame, skipped = _records_frame(records, config)
    if frame.empty:
        return BinningResult(sequences=[], skipped=skipped)

    keys = ["entity", "date", "bin"]
    grouped = frame.groupby(keys, sort=True)
    table = grouped[QUANTITATIVE_FEATURES].mean()
    table["norm_vol"] = grouped.size()
    table = table.reset_index()
    for feature in CATEGORICAL_FEATURES:
        table = table.merge(_mode_frame(frame, keys, feature), on=keys, how="left")

    labels = manifest.labels() if manifest is not None else {}
    sequences: List[DaySequence] = []
    for (entity, date), day in table.groupby(["entity", "date"], sort=True):
        rows: List[List[Cell]] = [[None] * len(FEATURES) for _ in range(config.timesteps)]
        for record in day.itertuples(index=False):
            data = record._asdict()
            rows[int(data["bin"])] = [_python_cell(data[f], f) for f in FEATURES]
        sequences.append(DaySequence(entity=entity, date=date, rows=rows, label=labels.get(entity)))

    logger.info(f"[BINNING] built {len(sequences)} day sequence(s) from {len(frame)} record(s) at T={config.timesteps}")
    return BinningResult(sequences=sequences, skipped=skipped)


def daily_volume(records: Iterable[ConnRecord], config: BinningConfig) -> pd.DataFrame:
    """Records per (entity, day): the day-to-day disparity in connection volume."""
    frame, _ = _records_frame(records, config)
    if frame.empty:
        return pd.DataFrame(columns=["entity", "date", "records"])
    counts = frame.groupby(["entity", "date"], sort=True).size().reset_index(name="records")
    return counts[["entity", "date", "records"]]


# ----------------------
# Entity splits
# ----------------------
def assign_entity_folds(entities: Iterable[str], k: int, seed: int) -> Dict[str, int]:
    """Seeded fold per entity. Input order does not matter (entities are sorted first)."""
    unique = sorted(set(entities))
    order = np.random.default_rng(seed).permutation(len(unique))
    return {unique[idx]: position % k for position, idx in enumerate(order)}


def split_by_entity(
    sequences: Sequence[DaySequence],
    assignment: Dict[str, int],
    require_labels: bool = True,
) -> Dict[int, List[DaySequence]]:
    """Partition by entity so no device straddles two folds."""
    folds: Dict[int, List[DaySequence]] = {}
    for seq in sequences:
        if require_labels and seq.label is None:
            raise DataError(f"unlabeled sequence {seq.entity}/{seq.date} in a labeled split")
        if seq.entity not in assignment:
            raise DataError(f"no fold assigned for entity of sequence {seq.date}")
        folds.setdefault(assignment[seq.entity], []).append(seq)
    for fold in folds.values():
        fold.sort(key=lambda s: (s.entity, s.date))
    return dict(sorted(folds.items()))


# ----------------------
# Archive
# ----------------------
def write_sequences(path: str, sequences: Iterable[DaySequence]) -> str:
    ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for seq in sequences:
            fh.write(json.dumps(seq.model_dump(), separators=(",", ":"), allow_nan=False) + "\n")
    return path


def read_sequences(path: str) -> List[DaySequence]:
    sequences = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                sequences.append(DaySequence.model_validate_json(line))
            except ValueError as e:
                raise DataError(f"{path} line {line_no}: invalid day sequence: {e}") from e
    return sequences
