import json

import numpy as np
import pytest

from phase.model import PhaseModelConfig

# 2024-03-04 00:00:00 UTC
DAY0 = 1709510400.0

TSV_FIELDS = [
    "ts", "uid", "id.orig_h", "id.orig_p", "id.resp_h", "id.resp_p", "proto", "service",
    "duration", "orig_bytes", "resp_bytes", "conn_state", "local_orig", "local_resp",
    "missed_bytes", "history", "orig_pkts", "orig_ip_bytes", "resp_pkts", "resp_ip_bytes",
    "tunnel_parents",
]
TSV_TYPES = [
    "time", "string", "addr", "port", "addr", "port", "enum", "string", "interval", "count",
    "count", "string", "bool", "bool", "count", "string", "count", "count", "count", "count",
    "set[string]",
]

# Ten hand-written conn.log rows (TSV cells). Three local hosts over two days.
CONN_ROWS = [
    ["1709510460.500000", "C1", "10.0.0.5", "50000", "93.184.216.34", "443", "tcp", "ssl", "1.5", "500", "4000", "SF", "T", "F", "0", "ShADadFf", "10", "1000", "12", "5000", "-"],
    ["1709510470.000000", "C2", "10.0.0.5", "50001", "93.184.216.34", "443", "tcp", "ssl", "0.5", "300", "2000", "SF", "T", "F", "0", "ShADadFf", "6", "600", "8", "2400", "-"],
    ["1709510530.000000", "C3", "10.0.0.5", "50002", "8.8.8.8", "53", "udp", "dns", "0.01", "40", "80", "SF", "T", "F", "0", "Dd", "1", "68", "1", "108", "-"],
    ["1709514000.000000", "C4", "10.0.0.6", "40000", "1.1.1.1", "80", "tcp", "http", "2.0", "100", "200", "SF", "T", "F", "0", "ShADadFf", "4", "300", "4", "400", "-"],
    ["1709514001.000000", "C5", "10.0.0.6", "40001", "1.1.1.1", "80", "tcp", "-", "-", "-", "-", "S0", "T", "F", "0", "S", "1", "60", "0", "0", "-"],
    ["1709596800.000000", "C6", "10.0.0.5", "50003", "93.184.216.34", "443", "tcp", "ssl", "1.0", "200", "300", "SF", "T", "F", "0", "ShADadFf", "3", "300", "3", "400", "-"],
    ["1709520000.000000", "C7", "203.0.113.9", "6000", "10.0.0.7", "22", "tcp", "ssh", "3.0", "1000", "2000", "SF", "F", "T", "0", "ShADadFf", "20", "2000", "20", "3000", "-"],
    ["1709520060.000000", "C8", "10.0.0.7", "123", "129.6.15.28", "123", "udp", "-", "0.02", "48", "48", "SF", "T", "F", "0", "Dd", "1", "76", "1", "76", "-"],
    ["1709530000.000000", "C9", "10.0.0.5", "50004", "93.184.216.34", "443", "tcp", "ssl", "0.3", "100", "100", "SF", "T", "F", "0", "(empty)", "2", "150", "2", "150", "-"],
    ["1709540000.000000", "C10", "10.0.0.6", "40002", "1.1.1.1", "443", "tcp", "ssl", "0.7", "120", "130", "RSTO", "T", "F", "0", "ShR", "2", "200", "1", "100", "-"],
]

_JSON_CONVERT = {
    "ts": float, "duration": float,
    "id.orig_p": int, "id.resp_p": int,
    "orig_bytes": int, "resp_bytes": int, "missed_bytes": int,
    "orig_pkts": int, "orig_ip_bytes": int, "resp_pkts": int, "resp_ip_bytes": int,
    "local_orig": lambda v: v == "T", "local_resp": lambda v: v == "T",
}


def tsv_lines(rows=CONN_ROWS):
    header = [
        "#separator \\x09",
        "#set_separator\t,",
        "#empty_field\t(empty)",
        "#unset_field\t-",
        "#path\tconn",
        "#open\t2024-03-04-00-00-00",
        "#fields\t" + "\t".join(TSV_FIELDS),
        "#types\t" + "\t".join(TSV_TYPES),
    ]
    return header + ["\t".join(row) for row in rows] + ["#close\t2024-03-06-00-00-00"]


def json_lines(rows=CONN_ROWS):
    """Zeek's JSON writer: unset fields are omitted, empty strings stay empty."""
    lines = []
    for row in rows:
        obj = {}
        for name, cell in zip(TSV_FIELDS, row):
            if cell == "-":
                continue
            if cell == "(empty)":
                obj[name] = ""
                continue
            obj[name] = _JSON_CONVERT.get(name, str)(cell)
        lines.append(json.dumps(obj))
    return lines


@pytest.fixture
def conn_tsv_lines():
    return [line + "\n" for line in tsv_lines()]


@pytest.fixture
def conn_json_lines():
    return [line + "\n" for line in json_lines()]


@pytest.fixture
def conn_tsv_file(tmp_path):
    path = tmp_path / "conn.log"
    path.write_text("\n".join(tsv_lines()) + "\n", encoding="utf-8")
    return str(path)


@pytest.fixture
def conn_json_file(tmp_path):
    path = tmp_path / "conn.json"
    path.write_text("\n".join(json_lines()) + "\n", encoding="utf-8")
    return str(path)


@pytest.fixture
def manifest_file(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("address,label,note\n10.0.0.5,1,desk\n10.0.0.6,0,printer\n10.0.0.7,1,\n", encoding="utf-8")
    return str(path)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_config():
    return PhaseModelConfig(
        timesteps=8, features=4, conv_filters=4, conv_kernel=3,
        lstm_hidden=4, attn_heads=2, dropout_rate=0.2, seed=3,
    )


@pytest.fixture
def small_model_config():
    """Full 17-feature input at a coarse resolution."""
    return PhaseModelConfig(
        timesteps=24, features=17, conv_filters=8, conv_kernel=3,
        lstm_hidden=6, attn_heads=2, dropout_rate=0.2, seed=5,
    )
