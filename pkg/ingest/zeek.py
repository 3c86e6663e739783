"""
Zeek connection-log ingest.
Parses conn.log in Zeek's TSV convention ('#' directives, tab separated,
'-' unset, '(empty)' empty string) and in JSON-lines form with Zeek key
names. Both parsers produce identical ConnRecord sequences for the same content.
"""
import json
import logging
import math
from datetime import datetime, timezone
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from errors import DataError, ZeekHeaderError

logger = logging.getLogger(__name__)

UNSET = "-"
EMPTY = "(empty)"

# Zeek key -> ConnRecord field, in canonical dump order.
# uid, tunnel_parents and every other Zeek column are parsed but dropped.
ZEEK_FIELDS: Dict[str, str] = {
    "ts": "ts",
    "id.orig_h": "orig_addr",
    "id.orig_p": "orig_port",
    "id.resp_h": "resp_addr",
    "id.resp_p": "resp_port",
    "proto": "proto",
    "service": "service",
    "duration": "duration",
    "orig_bytes": "orig_bytes",
    "resp_bytes": "resp_bytes",
    "conn_state": "conn_state",
    "local_orig": "local_orig",
    "local_resp": "local_resp",
    "missed_bytes": "missed_bytes",
    "history": "history",
    "orig_pkts": "orig_pkts",
    "orig_ip_bytes": "orig_ip_bytes",
    "resp_pkts": "resp_pkts",
    "resp_ip_bytes": "resp_ip_bytes",
}
REQUIRED_FIELDS = ("ts", "orig_addr", "resp_addr")
COUNT_FIELDS = (
    "orig_bytes", "resp_bytes", "missed_bytes",
    "orig_pkts", "orig_ip_bytes", "resp_pkts", "resp_ip_bytes",
)


class ConnRecord(BaseModel):
    """One conn.log entry. Immutable; None means unset."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    ts: float = Field(gt=0)
    orig_addr: str
    resp_addr: str
    orig_port: Optional[int] = Field(default=None, ge=0, le=65535)
    resp_port: Optional[int] = Field(default=None, ge=0, le=65535)
    proto: Optional[str] = None
    service: Optional[str] = None
    duration: Optional[float] = Field(default=None, ge=0)
    orig_bytes: Optional[int] = Field(default=None, ge=0)
    resp_bytes: Optional[int] = Field(default=None, ge=0)
    conn_state: Optional[str] = None
    local_orig: Optional[bool] = None
    local_resp: Optional[bool] = None
    missed_bytes: Optional[int] = Field(default=None, ge=0)
    history: Optional[str] = None
    orig_pkts: Optional[int] = Field(default=None, ge=0)
    orig_ip_bytes: Optional[int] = Field(default=None, ge=0)
    resp_pkts: Optional[int] = Field(default=None, ge=0)
    resp_ip_bytes: Optional[int] = Field(default=None, ge=0)

    @field_validator("ts", "duration")
    @classmethod
    def _finite(cls, value):
        if value is not None and not math.isfinite(value):
            raise ValueError("must be finite")
        return value


class ParseIssue(BaseModel):
    line_no: int
    reason: str


class ParseResult(BaseModel):
    """Records in input order plus the per-line problems that were skipped."""
    records: List[ConnRecord]
    fields: List[str]
    issues: List[ParseIssue] = []

    @property
    def skipped(self) -> int:
        return len(self.issues)


# ----------------------
# Cell conversion
# ----------------------
def _to_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    if value in ("T", "true", "True"):
        return True
    if value in ("F", "false", "False"):
        return False
    raise ValueError(f"not a Zeek bool: {value!r}")


def _to_int(value: Any) -> int:
    if isinstance(value, bool):
        raise ValueError(f"not a count: {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str) and value.strip().lstrip("-").isdigit():
        return int(value)
    raise ValueError(f"not a count: {value!r}")


def _to_time(value: Any) -> float:
    if isinstance(value, bool):
        raise ValueError(f"not a timestamp: {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    try:
        return float(value)
    except ValueError:
        # Zeek's JSON writer can emit ISO8601 timestamps; naive ones are UTC
        moment = datetime.fromisoformat(str(value).replace("Z", "+00:00"))
        if moment.tzinfo is None:
            moment = moment.replace(tzinfo=timezone.utc)
        return moment.timestamp()


def _to_interval(value: Any) -> float:
    if isinstance(value, bool):
        raise ValueError(f"not an interval: {value!r}")
    return float(value)


_CONVERTERS: Dict[str, Callable[[Any], Any]] = {
    "ts": _to_time,
    "duration": _to_interval,
    "orig_port": _to_int,
    "resp_port": _to_int,
    "local_orig": _to_bool,
    "local_resp": _to_bool,
    **{name: _to_int for name in COUNT_FIELDS},
}


def _build_record(values: Dict[str, Any]) -> ConnRecord:
    """values: ConnRecord field name -> raw cell (None for unset)."""
    for name in REQUIRED_FIELDS:
        if values.get(name) is None:
            raise ValueError(f"required field '{name}' is unset")
    converted = {}
    for name, raw in values.items():
        if raw is None:
            continue
        convert = _CONVERTERS.get(name, str)
        converted[name] = convert(raw)
    return ConnRecord(**converted)


def _reason(exc: Exception) -> str:
    errors = getattr(exc, "errors", None)
    if callable(errors):
        return "; ".join(f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in errors())
    return str(exc)


# ----------------------
# TSV
# ----------------------
def _decode_separator(raw: str) -> str:
    if raw.startswith("\\x"):
        return bytes.fromhex(raw[2:]).decode("latin-1")
    return raw


def parse_tsv(lines: Iterable[str]) -> ParseResult:
    """
    Parse a Zeek TSV conn.log.
    A malformed directive header is fatal (ZeekHeaderError with the line
    number); bad data lines are collected as issues and skipped.
    """
    separator = "\t"
    unset = UNSET
    empty = EMPTY
    fields: Optional[List[str]] = None
    records: List[ConnRecord] = []
    issues: List[ParseIssue] = []

    for line_no, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("#separator"):
                parts = line.split(" ", 1)
                if len(parts) != 2 or not parts[1].strip():
                    raise ZeekHeaderError("'#separator' directive has no value", line_no)
                try:
                    separator = _decode_separator(parts[1].strip())
                except ValueError as e:
                    raise ZeekHeaderError(f"unreadable separator {parts[1]!r}", line_no) from e
                continue
            directive, _, rest = line.partition(separator)
            if directive == "#fields":
                names = rest.split(separator) if rest else []
                if not names or any(not n for n in names):
                    raise ZeekHeaderError("'#fields' directive lists no field names", line_no)
                if len(set(names)) != len(names):
                    raise ZeekHeaderError("'#fields' directive repeats a field name", line_no)
                fields = names
            elif directive == "#unset_field":
                unset = rest
            elif directive == "#empty_field":
                empty = rest
            elif directive == "#types":
                if fields is not None and len(rest.split(separator)) != len(fields):
                    raise ZeekHeaderError("'#types' does not match '#fields' in length", line_no)
            # #path, #open, #close, #set_separator and site directives need no handling
            continue

        if fields is None:
            raise ZeekHeaderError("data line before any '#fields' directive", line_no)

        cells = line.split(separator)
        if len(cells) != len(fields):
            issues.append(ParseIssue(line_no=line_no, reason=f"expected {len(fields)} columns, found {len(cells)}"))
            continue

        values: Dict[str, Any] = {}
        for zeek_name, cell in zip(fields, cells):
            name = ZEEK_FIELDS.get(zeek_name)
            if name is None:
                continue
            if cell == unset:
                values[name] = None
            elif cell == empty:
                values[name] = ""
            else:
                values[name] = cell
        try:
            records.append(_build_record(values))
        except (ValueError, TypeError) as e:
            issues.append(ParseIssue(line_no=line_no, reason=_reason(e)))

    if fields is None:
        raise ZeekHeaderError("no '#fields' directive found")
    if issues:
        logger.warning(f"[ZEEK] skipped {len(issues)} malformed TSV line(s)")
    return ParseResult(records=records, fields=fields, issues=issues)


# ----------------------
# JSON lines
# ----------------------
def parse_json_lines(lines: Iterable[str]) -> ParseResult:
    """Parse Zeek JSON-lines logs. Unknown keys are ignored, absent keys are unset."""
    records: List[ConnRecord] = []
    issues: List[ParseIssue] = []
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            issues.append(ParseIssue(line_no=line_no, reason=f"invalid JSON: {e.msg}"))
            continue
        if not isinstance(obj, dict):
            issues.append(ParseIssue(line_no=line_no, reason="line is not a JSON object"))
            continue
        values = {name: obj.get(zeek_name) for zeek_name, name in ZEEK_FIELDS.items() if zeek_name in obj}
        try:
            records.append(_build_record(values))
        except (ValueError, TypeError) as e:
            issues.append(ParseIssue(line_no=line_no, reason=_reason(e)))
    if issues:
        logger.warning(f"[ZEEK] skipped {len(issues)} malformed JSON line(s)")
    return ParseResult(records=records, fields=list(ZEEK_FIELDS), issues=issues)


def decode_lines(raw: bytes) -> Tuple[List[str], List[ParseIssue]]:
    """Decode a log line by line. An undecodable line is blanked and reported as an issue."""
    lines: List[str] = []
    issues: List[ParseIssue] = []
    for line_no, chunk in enumerate(raw.splitlines(), start=1):
        try:
            lines.append(chunk.decode("utf-8"))
        except UnicodeDecodeError as e:
            lines.append("")
            issues.append(ParseIssue(line_no=line_no, reason=f"not UTF-8: byte 0x{chunk[e.start]:02x} at column {e.start + 1}"))
    return lines, issues


def parse_file(path: str, fmt: str = "auto") -> ParseResult:
    """Open a log and dispatch on format; 'auto' sniffs the first non-empty line."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise DataError(f"Cannot read Zeek log {path}: {e.strerror or e}") from e
    lines, undecodable = decode_lines(raw)
    if undecodable:
        logger.warning(f"[ZEEK] {len(undecodable)} line(s) in {path} are not UTF-8")
    if fmt == "auto":
        first = next((l for l in lines if l.strip()), "")
        fmt = "tsv" if first.startswith("#") else "jsonl"
    logger.info(f"[ZEEK] parsing {path} as {fmt}")
    result = parse_tsv(lines) if fmt == "tsv" else parse_json_lines(lines)
    if not undecodable:
        return result
    issues = sorted(undecodable + result.issues, key=lambda issue: issue.line_no)
    return result.model_copy(update={"issues": issues})


# ----------------------
# Writers
# ----------------------
def record_to_zeek(record: ConnRecord) -> Dict[str, Any]:
    """Canonical JSON object: Zeek key names in schema order, unset fields omitted."""
    data = record.model_dump()
    return {zeek: data[name] for zeek, name in ZEEK_FIELDS.items() if data[name] is not None}


def dump_json_lines(records: Iterable[ConnRecord]) -> List[str]:
    return [json.dumps(record_to_zeek(r), separators=(",", ":")) for r in records]


def _tsv_cell(value: Any) -> str:
    if value is None:
        return UNSET
    if isinstance(value, bool):
        return "T" if value else "F"
    if isinstance(value, float):
        return repr(value)
    if value == "":
        return EMPTY
    return str(value)


def dump_tsv(records: Iterable[ConnRecord], extra_directives: Optional[List[Tuple[str, str]]] = None) -> List[str]:
    """Zeek TSV with the directive header; floats keep full precision."""
    names = list(ZEEK_FIELDS)
    lines = [
        "#separator \\x09",
        "#set_separator\t,",
        f"#empty_field\t{EMPTY}",
        f"#unset_field\t{UNSET}",
        "#path\tconn",
    ]
    for key, value in extra_directives or []:
        lines.append(f"#{key}\t{value}")
    lines.append("#fields\t" + "\t".join(names))
    lines.append("#types\t" + "\t".join(_ZEEK_TYPES[n] for n in names))
    for record in records:
        data = record.model_dump()
        lines.append("\t".join(_tsv_cell(data[ZEEK_FIELDS[n]]) for n in names))
    return lines


_ZEEK_TYPES = {
    "ts": "time", "id.orig_h": "addr", "id.orig_p": "port", "id.resp_h": "addr", "id.resp_p": "port",
    "proto": "enum", "service": "string", "duration": "interval", "orig_bytes": "count",
    "resp_bytes": "count", "conn_state": "string", "local_orig": "bool", "local_resp": "bool",
    "missed_bytes": "count", "history": "string", "orig_pkts": "count", "orig_ip_bytes": "count",
    "resp_pkts": "count", "resp_ip_bytes": "count",
}


def write_lines(path: str, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")
