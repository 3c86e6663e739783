"""
Keyed address pseudonymization.
Whole-address keyed mapping (HMAC-SHA256), not prefix preserving.
Addresses are opaque strings, so IPv4 and IPv6 go through the same path.
"""
import hashlib
import hmac
import logging
import os
from typing import Dict, Iterable, List, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator

from errors import ConfigError, DataError
from features.manifest import LabelManifest, ManifestEntry
from ingest.zeek import ConnRecord

logger = logging.getLogger(__name__)

PSEUDONYM_PREFIX = "anon-"
DIGEST_CHARS = 24


class PseudonymKey(BaseModel):
    model_config = ConfigDict(frozen=True)

    key: bytes
    salt: bytes = b""

    @field_validator("key")
    @classmethod
    def _key_length(cls, value: bytes) -> bytes:
        if len(value) != 32:
            raise ValueError("pseudonym key must be exactly 32 bytes")
        return value

    @classmethod
    def from_hex(cls, key_hex: str, salt: str = "") -> "PseudonymKey":
        try:
            return cls(key=bytes.fromhex(key_hex), salt=salt.encode("utf-8"))
        except ValueError as e:
            raise ConfigError(f"PSEUDONYM_KEY must be 64 hex characters: {e}") from e

    @classmethod
    def generate(cls) -> "PseudonymKey":
        return cls(key=os.urandom(32))


def pseudonym_for(address: str, key: PseudonymKey) -> str:
    digest = hmac.new(key.key, key.salt + address.encode("utf-8"), hashlib.sha256).hexdigest()
    return PSEUDONYM_PREFIX + digest[:DIGEST_CHARS]


def pseudonymize(records: Iterable[ConnRecord], key: PseudonymKey) -> Tuple[List[ConnRecord], Dict[str, str]]:
    """
    Rewrite orig_addr/resp_addr. Returns the new records and the
    address -> pseudonym table (needed to align the label manifest).
    Every non-address field is copied unchanged.
    """
    mapping: Dict[str, str] = {}
    seen: Dict[str, str] = {}

    def lookup(address: str) -> str:
        pseudonym = mapping.get(address)
        if pseudonym is None:
            pseudonym = pseudonym_for(address, key)
            other = seen.get(pseudonym)
            if other is not None and other != address:
                # 96-bit digests; a collision means the table cannot be trusted
                raise DataError(f"pseudonym collision between {other!r} and {address!r}")
            mapping[address] = pseudonym
            seen[pseudonym] = address
        return pseudonym

    rewritten = [
        r.model_copy(update={"orig_addr": lookup(r.orig_addr), "resp_addr": lookup(r.resp_addr)})
        for r in records
    ]
    logger.info(f"[ZEEK] pseudonymized {len(mapping)} distinct addresses over {len(rewritten)} records")
    return rewritten, mapping


def align_manifest(manifest: LabelManifest, mapping: Dict[str, str]) -> LabelManifest:
    """Move manifest labels onto pseudonyms. Entries whose address never appears in the logs are dropped."""
    entries = []
    for entry in manifest.entries:
        pseudonym = mapping.get(entry.address)
        if pseudonym is None:
            logger.warning("[ZEEK] manifest address not seen in logs, dropped from aligned manifest")
            continue
        entries.append(ManifestEntry(address=pseudonym, label=entry.label, note=entry.note))
    return LabelManifest(entries=entries)


def mapping_frame(mapping: Dict[str, str]) -> pd.DataFrame:
    rows = sorted(mapping.items())
    return pd.DataFrame(rows, columns=["address", "pseudonym"])
