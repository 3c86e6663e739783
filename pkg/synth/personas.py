"""
Synthetic labeled connection-log corpora.

Profiles:
    HumanDiurnal     bursty sessions inside a working-day window, heavy-tailed
                     volumes, the odd night session                   label 1
    AutomatedBeacon  fixed-period check-ins around the clock, constant small
                     payloads, optional maintenance burst near 01:00  label 0
    PersonaDefault   tasks at uniform random intervals 24/7 with small
                     symmetric payloads                               label 0
    PersonaEnhanced  PersonaDefault plus an idle period after every
                     N ~ U[N_min, N_max] tasks                        label 0
"""
import logging
from datetime import date, datetime, timezone
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from features.manifest import HUMAN, NON_HUMAN, LabelManifest, ManifestEntry
from helpers import derive_seeds
from ingest.zeek import ConnRecord

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400
MINUTES_PER_DAY = 1440


class Profile(str, Enum):
    HUMAN_DIURNAL = "HumanDiurnal"
    AUTOMATED_BEACON = "AutomatedBeacon"
    PERSONA_DEFAULT = "PersonaDefault"
    PERSONA_ENHANCED = "PersonaEnhanced"


PROFILE_LABELS = {
    Profile.HUMAN_DIURNAL: HUMAN,
    Profile.AUTOMATED_BEACON: NON_HUMAN,
    Profile.PERSONA_DEFAULT: NON_HUMAN,
    Profile.PERSONA_ENHANCED: NON_HUMAN,
}

# (resp_port, proto, service, relative weight)
HUMAN_SERVICES = [
    (443, "tcp", "ssl", 0.55),
    (80, "tcp", "http", 0.15),
    (53, "udp", "dns", 0.2),
    (22, "tcp", "ssh", 0.05),
    (993, "tcp", "ssl", 0.05),
]
PERSONA_SERVICES = [
    (53, "udp", "dns", 0.5),
    (80, "tcp", "http", 0.5),
]
REMOTE_POOL = [f"203.0.113.{i}" for i in range(1, 41)] + [f"198.51.100.{i}" for i in range(1, 41)]


class PersonaSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    profile: Profile
    entities: int = 1
    days: int = 1
    seed: int = 0
    start_date: date = date(2024, 3, 4)
    # entity i gets "<address_prefix>.<10 + i>"
    address_prefix: str = "10.10.0"

    # HumanDiurnal
    active_start: int = 480
    active_end: int = 1080
    ramp_minutes: int = 60
    sessions_per_day: Tuple[int, int] = (6, 12)
    tasks_per_session: Tuple[int, int] = (3, 25)
    burst_mean_seconds: float = 20.0
    orig_bytes_lognormal: Tuple[float, float] = (7.0, 1.5)
    resp_bytes_lognormal: Tuple[float, float] = (9.0, 2.0)
    night_session_prob: float = 0.3

    # AutomatedBeacon
    beacon_period: int = 300
    beacon_orig_bytes: int = 64
    beacon_resp_bytes: int = 128
    maintenance_burst: bool = False
    maintenance_records: int = 20

    # PersonaDefault / PersonaEnhanced
    interarrival_range: Tuple[float, float] = (60.0, 900.0)
    payload_range: Tuple[int, int] = (40, 120)
    idle_tasks_range: Tuple[int, int] = (5, 15)
    idle_minutes: int = 60

    @model_validator(mode="after")
    def _valid(self):
        if self.entities < 1 or self.days < 1:
            raise ValueError("entities and days must be positive")
        if not 0 <= self.active_start < self.active_end <= MINUTES_PER_DAY:
            raise ValueError("active window must lie within [0, 1440)")
        if self.ramp_minutes < 0 or 2 * self.ramp_minutes > self.active_end - self.active_start:
            raise ValueError("ramp does not fit inside the active window")
        for name in ("sessions_per_day", "tasks_per_session", "idle_tasks_range", "payload_range"):
            lo, hi = getattr(self, name)
            if lo < 1 or lo > hi:
                raise ValueError(f"{name} must be a positive range with min <= max")
        lo, hi = self.interarrival_range
        if not 0 < lo <= hi:
            raise ValueError("interarrival_range must be positive with min <= max")
        if self.beacon_period <= 0 or SECONDS_PER_DAY % self.beacon_period != 0:
            raise ValueError("beacon_period must divide a day")
        if self.burst_mean_seconds <= 0 or self.idle_minutes <= 0:
            raise ValueError("burst_mean_seconds and idle_minutes must be positive")
        for name in ("orig_bytes_lognormal", "resp_bytes_lognormal"):
            if getattr(self, name)[1] <= 0:
                raise ValueError(f"{name} sigma must be positive")
        if not 0.0 <= self.night_session_prob <= 1.0:
            raise ValueError("night_session_prob must be a probability")
        return self

    @property
    def label(self) -> int:
        return PROFILE_LABELS[self.profile]

    def address(self, index: int) -> str:
        return f"{self.address_prefix}.{10 + index}"

    def day_start(self, day: int) -> float:
        midnight = datetime(self.start_date.year, self.start_date.month, self.start_date.day, tzinfo=timezone.utc)
        return midnight.timestamp() + day * SECONDS_PER_DAY


class Corpus(BaseModel):
    records: List[ConnRecord]
    manifest: LabelManifest

    def merge(self, other: "Corpus") -> "Corpus":
        return Corpus(
            records=sort_records(self.records + other.records),
            manifest=LabelManifest(entries=self.manifest.entries + other.manifest.entries),
        )


def sort_records(records: List[ConnRecord]) -> List[ConnRecord]:
    return sorted(records, key=lambda r: (r.ts, r.orig_addr, r.resp_addr, r.orig_port or 0))


# ----------------------
# Record construction
# ----------------------
def _record(
    ts: float,
    entity: str,
    remote: str,
    service: Tuple[int, str, str],
    orig_port: int,
    duration: float,
    orig_bytes: int,
    resp_bytes: int,
    conn_state: str = "SF",
) -> ConnRecord:
    resp_port, proto, name = service
    header = 40 if proto == "tcp" else 28
    orig_pkts = max(1, orig_bytes // 1200 + 1)
    resp_pkts = max(1, resp_bytes // 1200 + 1)
    if proto == "udp":
        history = "Dd"
    elif conn_state == "SF":
        history = "ShADadFf"
    else:
        history = "S"
    if conn_state == "S0":
        resp_bytes, resp_pkts = 0, 0
    return ConnRecord(
        ts=round(ts, 6),
        orig_addr=entity,
        resp_addr=remote,
        orig_port=orig_port,
        resp_port=resp_port,
        proto=proto,
        service=name,
        duration=round(duration, 6),
        orig_bytes=orig_bytes,
        resp_bytes=resp_bytes,
        conn_state=conn_state,
        local_orig=True,
        local_resp=False,
        missed_bytes=0,
        history=history,
        orig_pkts=orig_pkts,
        orig_ip_bytes=orig_bytes + header * orig_pkts,
        resp_pkts=resp_pkts,
        resp_ip_bytes=resp_bytes + header * resp_pkts if resp_pkts else 0,
    )


def _pick(rng: np.random.Generator, services) -> Tuple[int, str, str]:
    weights = np.array([s[3] for s in services])
    choice = services[int(rng.choice(len(services), p=weights / weights.sum()))]
    return choice[0], choice[1], choice[2]


def _ephemeral(rng: np.random.Generator) -> int:
    return int(rng.integers(32768, 61000))


# ----------------------
# Profiles
# ----------------------
def _active_minute(spec: PersonaSpec, rng: np.random.Generator) -> float:
    """Session start inside the active window, trapezoid density (ramp up, plateau, ramp down)."""
    while True:
        minute = rng.uniform(spec.active_start, spec.active_end)
        if spec.ramp_minutes == 0:
            return minute
        accept = min(1.0, (minute - spec.active_start) / spec.ramp_minutes, (spec.active_end - minute) / spec.ramp_minutes)
        if rng.random() < accept:
            return minute


def _night_minute(spec: PersonaSpec, rng: np.random.Generator) -> float:
    before = spec.active_start
    after = MINUTES_PER_DAY - spec.active_end
    if rng.uniform(0, before + after) < before:
        return rng.uniform(0, before)
    return rng.uniform(spec.active_end, MINUTES_PER_DAY)


def _session(spec: PersonaSpec, rng: np.random.Generator, entity: str, start: float, end: float, tasks: int) -> List[ConnRecord]:
    records = []
    ts = start
    for _ in range(tasks):
        if ts >= end:
            break
        service = _pick(rng, HUMAN_SERVICES)
        orig_bytes = int(rng.lognormal(*spec.orig_bytes_lognormal))
        resp_bytes = int(rng.lognormal(*spec.resp_bytes_lognormal))
        state = "SF" if rng.random() < 0.9 or service[1] == "udp" else str(rng.choice(["S0", "RSTO"]))
        records.append(_record(
            ts, entity, REMOTE_POOL[int(rng.integers(len(REMOTE_POOL)))], service, _ephemeral(rng),
            float(rng.lognormal(0.0, 1.5)), orig_bytes, resp_bytes, state,
        ))
        ts += rng.exponential(spec.burst_mean_seconds)
    return records


def _human_day(spec: PersonaSpec, rng: np.random.Generator, entity: str, day: int) -> List[ConnRecord]:
    base = spec.day_start(day)
    end = base + SECONDS_PER_DAY
    records: List[ConnRecord] = []
    for _ in range(int(rng.integers(spec.sessions_per_day[0], spec.sessions_per_day[1] + 1))):
        start = base + _active_minute(spec, rng) * 60.0
        tasks = int(rng.integers(spec.tasks_per_session[0], spec.tasks_per_session[1] + 1))
        records.extend(_session(spec, rng, entity, start, end, tasks))
    if rng.random() < spec.night_session_prob:
        start = base + _night_minute(spec, rng) * 60.0
        records.extend(_session(spec, rng, entity, start, end, int(rng.integers(2, 5))))
    return records


def _beacon_entity(spec: PersonaSpec, rng: np.random.Generator, entity: str) -> List[ConnRecord]:
    offset = float(rng.uniform(0, spec.beacon_period))
    remote = REMOTE_POOL[int(rng.integers(len(REMOTE_POOL)))]
    service = (443, "tcp", "ssl") if rng.random() < 0.5 else (123, "udp", "ntp")
    port = _ephemeral(rng)
    per_day = SECONDS_PER_DAY // spec.beacon_period
    records = []
    for day in range(spec.days):
        base = spec.day_start(day)
        for k in range(per_day):
            records.append(_record(
                base + offset + k * spec.beacon_period, entity, remote, service, port,
                0.05, spec.beacon_orig_bytes, spec.beacon_resp_bytes,
            ))
        if spec.maintenance_burst:
            # update check around 01:00
            burst_start = base + 3600.0 + float(rng.uniform(0, 300))
            for j in range(spec.maintenance_records):
                records.append(_record(
                    burst_start + j * 15.0, entity, remote, (443, "tcp", "ssl"), _ephemeral(rng),
                    2.0, 900, 250_000,
                ))
    return records


def _persona_entity(spec: PersonaSpec, rng: np.random.Generator, entity: str) -> List[ConnRecord]:
    """One continuous timeline across all days; the enhanced persona idles after each task run."""
    start = spec.day_start(0)
    end = spec.day_start(spec.days)
    lo, hi = spec.interarrival_range
    idle = spec.profile == Profile.PERSONA_ENHANCED
    remote = REMOTE_POOL[int(rng.integers(len(REMOTE_POOL)))]
    records = []
    ts = start + float(rng.uniform(lo, hi))
    until_idle = int(rng.integers(spec.idle_tasks_range[0], spec.idle_tasks_range[1] + 1))
    while ts < end:
        service = _pick(rng, PERSONA_SERVICES)
        payload = int(rng.integers(spec.payload_range[0], spec.payload_range[1] + 1))
        records.append(_record(ts, entity, remote, service, _ephemeral(rng), 0.01, payload, payload))
        ts += float(rng.uniform(lo, hi))
        if idle:
            until_idle -= 1
            if until_idle == 0:
                ts += spec.idle_minutes * 60.0
                until_idle = int(rng.integers(spec.idle_tasks_range[0], spec.idle_tasks_range[1] + 1))
    return records


def generate(spec: PersonaSpec) -> Corpus:
    """Records (sorted by time) and a manifest covering exactly the generated entities."""
    records: List[ConnRecord] = []
    entries = []
    for index, entity_seed in enumerate(derive_seeds(spec.seed, spec.entities)):
        rng = np.random.default_rng(entity_seed)
        entity = spec.address(index)
        if spec.profile == Profile.HUMAN_DIURNAL:
            for day in range(spec.days):
                records.extend(_human_day(spec, rng, entity, day))
        elif spec.profile == Profile.AUTOMATED_BEACON:
            records.extend(_beacon_entity(spec, rng, entity))
        else:
            records.extend(_persona_entity(spec, rng, entity))
        entries.append(ManifestEntry(address=entity, label=spec.label, note=spec.profile.value))
    logger.info(f"[SYNTH] {spec.profile.value}: {spec.entities} entities x {spec.days} days, {len(records)} records")
    return Corpus(records=sort_records(records), manifest=LabelManifest(entries=entries))


BENCHMARK_BEACON_PERIODS = [60, 120, 300, 600, 900, 1800]


def default_benchmark(seed: int = 0, days: int = 5) -> Corpus:
    """8 human entities and 24 beacon entities over 5 days: 40 + 120 labeled entity-days."""
    seeds = derive_seeds(seed, 1 + len(BENCHMARK_BEACON_PERIODS))
    corpus = generate(PersonaSpec(
        profile=Profile.HUMAN_DIURNAL, entities=8, days=days, seed=seeds[0], address_prefix="10.10.0",
    ))
    for block, period in enumerate(BENCHMARK_BEACON_PERIODS):
        corpus = corpus.merge(generate(PersonaSpec(
            profile=Profile.AUTOMATED_BEACON,
            entities=4,
            days=days,
            seed=seeds[block + 1],
            address_prefix=f"10.20.{block}",
            beacon_period=period,
            maintenance_burst=block % 2 == 1,
        )))
    return corpus


def persona_study(seed: int = 0, entities: int = 4, days: int = 5, idle_tasks_range: Optional[Tuple[int, int]] = None) -> Corpus:
    """Default and enhanced personas side by side, for score comparison."""
    seeds = derive_seeds(seed, 2)
    extra = {"idle_tasks_range": idle_tasks_range} if idle_tasks_range is not None else {}
    default = generate(PersonaSpec(
        profile=Profile.PERSONA_DEFAULT, entities=entities, days=days, seed=seeds[0], address_prefix="10.30.0",
    ))
    enhanced = generate(PersonaSpec(
        profile=Profile.PERSONA_ENHANCED, entities=entities, days=days, seed=seeds[1], address_prefix="10.40.0", **extra,
    ))
    return default.merge(enhanced)
