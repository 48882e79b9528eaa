"""Packet CSV ingestion and one-hot feature encoding.

Row layout of an encoded matrix (one column per packet)::

    src IPs | dst IPs | src important ports | dst important ports |
    src <1024, src >=1024 | dst <1024, dst >=1024 |
    src port missing | dst port missing | protocols | length / length_scale
"""

import csv
import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .io import atomic_write_bytes, atomic_write_text

DEFAULT_PORTS = (20, 21, 22, 23, 25, 53, 79, 80, 111, 161, 443, 514, 515)
DEFAULT_PROTOCOLS = ("ICMP", "sadmind", "Portmap", "TELNET", "TCP", "FTP", "HTTP")
CSV_COLUMNS = ("time", "src_ip", "dst_ip", "src_port", "dst_port", "protocol", "length")
REQUIRED_COLUMNS = ("time", "src_ip", "dst_ip", "protocol", "length")

# Wireshark "Export Packet Dissections > As CSV" with port columns added
WIRESHARK_COLUMNS = {
    "time": "Time",
    "src_ip": "Source",
    "dst_ip": "Destination",
    "src_port": "Source Port",
    "dst_port": "Destination Port",
    "protocol": "Protocol",
    "length": "Length",
}

FMAT_MAGIC = b"FMAT"
FMAT_VERSION = 1


class PacketFormatError(ValueError):
    """Malformed packet or label CSV input."""

    def __init__(self, message, row_errors=()):
        super().__init__(message)
        self.row_errors = list(row_errors)


@dataclass(frozen=True)
class RowError:
    line: int
    column: str
    message: str

    def __str__(self):
        return f"line {self.line}: {self.column}: {self.message}"


@dataclass(frozen=True)
class PacketRecord:
    timestamp: float
    src_ip: str
    dst_ip: str
    src_port: int | None
    dst_port: int | None
    protocol: str
    length: int

    def __post_init__(self):
        for name in ("src_port", "dst_port"):
            p = getattr(self, name)
            if p is not None and not 0 <= p <= 65535:
                raise ValueError(f"{name} {p} outside [0, 65535]")
        if self.length < 0:
            raise ValueError(f"negative length {self.length}")
        if not math.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")


def _parse_port(raw):
    raw = raw.strip()
    if raw == "":
        return None
    port = int(float(raw)) if "." in raw else int(raw)
    if not 0 <= port <= 65535:
        raise ValueError(f"port {port} outside [0, 65535]")
    return port


def parse_packet_csv(stream, columns=None, errors=None):
    """Read packet metadata rows from a CSV text stream.

    ``columns`` maps canonical names (``CSV_COLUMNS``) to the header names
    used in the file; header matching is case-insensitive. Port columns may
    be absent entirely. Malformed rows are collected: when ``errors`` is a
    list they are appended to it and parsing continues, otherwise a
    ``PacketFormatError`` listing every bad row is raised at the end.
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.StringIO(stream.decode("utf-8"))
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise PacketFormatError("empty CSV: missing header row") from None
    lookup = {h.strip().lower(): i for i, h in enumerate(header)}
    mapping = dict(columns or {})
    index = {}
    for name in CSV_COLUMNS:
        key = mapping.get(name, name).strip().lower()
        if key in lookup:
            index[name] = lookup[key]
        elif name in REQUIRED_COLUMNS:
            raise PacketFormatError(f"missing required column '{mapping.get(name, name)}'")

    records = []
    bad = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue

        def get(name):
            i = index.get(name)
            return row[i] if i is not None and i < len(row) else ""

        col = "time"
        try:
            ts = float(get("time"))
            col = "src_port"
            sport = _parse_port(get("src_port"))
            col = "dst_port"
            dport = _parse_port(get("dst_port"))
            col = "length"
            length = int(get("length"))
            col = "src_ip"
            src = get("src_ip").strip()
            dst = get("dst_ip").strip()
            if not src or not dst:
                raise ValueError("empty address")
            col = "record"
            records.append(PacketRecord(ts, src, dst, sport, dport, get("protocol").strip(), length))
        except ValueError as exc:
            bad.append(RowError(lineno, col, str(exc)))

    if bad:
        if errors is None:
            shown = "; ".join(str(b) for b in bad[:5])
            more = f" (+{len(bad) - 5} more)" if len(bad) > 5 else ""
            raise PacketFormatError(f"{len(bad)} malformed row(s): {shown}{more}", bad)
        errors.extend(bad)
    return records


def write_packet_csv(records, stream):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([
            repr(float(r.timestamp)), r.src_ip, r.dst_ip,
            "" if r.src_port is None else r.src_port,
            "" if r.dst_port is None else r.dst_port,
            r.protocol, r.length,
        ])


def parse_label_csv(stream, n=None):
    """Read an ``index,label`` CSV into a boolean array.

    Indices not listed default to normal (False).
    """
    reader = csv.reader(stream)
    header = [h.strip().lower() for h in next(reader, [])]
    if "index" not in header or "label" not in header:
        raise PacketFormatError("label CSV needs 'index' and 'label' columns")
    ii, li = header.index("index"), header.index("label")
    pairs = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            idx = int(row[ii])
            lab = int(row[li])
            if lab not in (0, 1) or idx < 0:
                raise ValueError
        except (ValueError, IndexError):
            raise PacketFormatError(f"line {lineno}: bad label row {row!r}") from None
        pairs.append((idx, lab))
    size = n if n is not None else (max((p[0] for p in pairs), default=-1) + 1)
    labels = np.zeros(size, dtype=bool)
    for idx, lab in pairs:
        if idx >= size:
            raise PacketFormatError(f"label index {idx} beyond {size} packets")
        labels[idx] = bool(lab)
    return labels


def write_label_csv(labels, stream):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["index", "label"])
    for i, lab in enumerate(labels):
        w.writerow([i, int(bool(lab))])


@dataclass(frozen=True)
class EncoderSpec:
    src_ips: tuple
    dst_ips: tuple
    important_ports: tuple = DEFAULT_PORTS
    protocols: tuple = DEFAULT_PROTOCOLS
    length_scale: float = 1.0

    def __post_init__(self):
        for name in ("src_ips", "dst_ips", "important_ports", "protocols"):
            items = getattr(self, name)
            if len(items) == 0:
                raise ValueError(f"{name} must be nonempty")
            keys = [p.lower() for p in items] if name == "protocols" else list(items)
            if len(set(keys)) != len(keys):
                raise ValueError(f"{name} contains duplicates")
        if not self.length_scale > 0:
            raise ValueError("length_scale must be positive")

    @property
    def total_dim(self):
        return (len(self.src_ips) + len(self.dst_ips) + 2 * len(self.important_ports)
                + 4 + 2 + len(self.protocols) + 1)

    def row_names(self):
        names = [f"src_ip={ip}" for ip in self.src_ips]
        names += [f"dst_ip={ip}" for ip in self.dst_ips]
        names += [f"src_port={p}" for p in self.important_ports]
        names += [f"dst_port={p}" for p in self.important_ports]
        names += ["src_port<1024", "src_port>=1024", "dst_port<1024", "dst_port>=1024",
                  "src_port_missing", "dst_port_missing"]
        names += [f"protocol={p}" for p in self.protocols]
        names.append("length")
        return names

    def to_dict(self):
        return {
            "src_ips": list(self.src_ips),
            "dst_ips": list(self.dst_ips),
            "important_ports": [int(p) for p in self.important_ports],
            "protocols": list(self.protocols),
            "length_scale": float(self.length_scale),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["src_ips"]), tuple(d["dst_ips"]),
                   tuple(int(p) for p in d["important_ports"]), tuple(d["protocols"]),
                   float(d["length_scale"]))

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class FeatureMatrix:
    matrix: np.ndarray  # total_dim x n_packets
    packet_index: np.ndarray
    labels: np.ndarray | None = None
    row_names: list = field(default_factory=list)
    fingerprint: str = ""

    @property
    def n_packets(self):
        return self.matrix.shape[1]


def build_encoder(records, important_ports=DEFAULT_PORTS, protocols=DEFAULT_PROTOCOLS):
    if not records:
        raise ValueError("cannot build an encoder from zero records")
    src = tuple(sorted({r.src_ip for r in records}))
    dst = tuple(sorted({r.dst_ip for r in records}))
    scale = float(max(1, max(r.length for r in records)))
    return EncoderSpec(src, dst, tuple(int(p) for p in important_ports), tuple(protocols), scale)


def encode(records, spec, labels=None, packet_index=None):
    n = len(records)
    src_pos = {ip: i for i, ip in enumerate(spec.src_ips)}
    dst_pos = {ip: i for i, ip in enumerate(spec.dst_ips)}
    port_pos = {p: i for i, p in enumerate(spec.important_ports)}
    proto_pos = {p.lower(): i for i, p in enumerate(spec.protocols)}
    n_src, n_dst, n_port = len(spec.src_ips), len(spec.dst_ips), len(spec.important_ports)
    o_sport = n_src + n_dst
    o_dport = o_sport + n_port
    o_range = o_dport + n_port
    o_miss = o_range + 4
    o_proto = o_miss + 2
    o_len = o_proto + len(spec.protocols)

    y = np.zeros((spec.total_dim, n))
    for j, r in enumerate(records):
        if r.src_ip in src_pos:
            y[src_pos[r.src_ip], j] = 1.0
        if r.dst_ip in dst_pos:
            y[n_src + dst_pos[r.dst_ip], j] = 1.0
        for side, port in ((0, r.src_port), (1, r.dst_port)):
            if port is None:
                y[o_miss + side, j] = 1.0
                continue
            if port in port_pos:
                y[(o_sport if side == 0 else o_dport) + port_pos[port], j] = 1.0
            y[o_range + 2 * side + (0 if port < 1024 else 1), j] = 1.0
        pi = proto_pos.get(r.protocol.lower())
        if pi is not None:
            y[o_proto + pi, j] = 1.0
        y[o_len, j] = r.length / spec.length_scale

    if labels is not None:
        labels = np.asarray(labels, dtype=bool)
        if labels.shape != (n,):
            raise ValueError(f"expected {n} labels, got {labels.shape}")
    idx = np.arange(n) if packet_index is None else np.asarray(packet_index)
    return FeatureMatrix(y, idx, labels, spec.row_names(), spec.fingerprint())


def slice_columns(fm, start, stop):
    n = fm.n_packets
    if not 0 <= start <= stop <= n:
        raise ValueError(f"column range [{start}, {stop}) outside [0, {n})")
    labels = None if fm.labels is None else fm.labels[start:stop].copy()
    return FeatureMatrix(fm.matrix[:, start:stop].copy(), fm.packet_index[start:stop].copy(),
                         labels, list(fm.row_names), fm.fingerprint)


def save_feature_matrix(fm, path):
    """Write ``path`` (binary) and ``path + '.json'`` (sidecar header).

    Binary layout, little-endian: 4-byte magic ``FMAT``, uint8 version,
    3 zero bytes, uint32 rows, uint32 cols, then rows*cols float64 values
    in column-major order (each packet contiguous).
    """
    m, n = fm.matrix.shape
    head = FMAT_MAGIC + struct.pack("<B3xII", FMAT_VERSION, m, n)
    body = np.asfortranarray(fm.matrix, dtype="<f8").tobytes(order="F")
    atomic_write_bytes(path, head + body)
    side = {
        "format": "netrpca-fmat",
        "version": FMAT_VERSION,
        "rows": m,
        "cols": n,
        "row_names": list(fm.row_names),
        "encoder_fingerprint": fm.fingerprint,
        "packet_index": [int(i) for i in fm.packet_index],
        "labels": None if fm.labels is None else [int(b) for b in fm.labels],
    }
    atomic_write_text(str(path) + ".json", json.dumps(side, indent=1) + "\n")


def load_feature_matrix(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != FMAT_MAGIC or len(raw) < 16:
        raise PacketFormatError(f"{path}: not a feature matrix file")
    version, m, n = struct.unpack("<B3xII", raw[4:16])
    if version != FMAT_VERSION:
        raise PacketFormatError(f"{path}: unsupported version {version}")
    if len(raw) != 16 + 8 * m * n:
        raise PacketFormatError(f"{path}: truncated matrix body")
    matrix = np.frombuffer(raw, dtype="<f8", offset=16).reshape((m, n), order="F").astype(np.float64)
    with open(str(path) + ".json") as fh:
        side = json.load(fh)
    if side["rows"] != m or side["cols"] != n:
        raise PacketFormatError(f"{path}: sidecar dimensions disagree with binary header")
    labels = side.get("labels")
    return FeatureMatrix(matrix, np.asarray(side["packet_index"], dtype=np.int64),
                         None if labels is None else np.asarray(labels, dtype=bool),
                         side["row_names"], side["encoder_fingerprint"])


class PacketEncoder(TransformerMixin, BaseEstimator):
    """One-hot packet encoder in scikit-learn form.

    ``fit`` learns the IP vocabularies and length scale from a list of
    ``PacketRecord``; ``transform`` returns an ``(n_packets, n_features)``
    array, i.e. the transpose of the encoded feature matrix.
    """

    def __init__(self, important_ports=DEFAULT_PORTS, protocols=DEFAULT_PROTOCOLS):
        self.important_ports = important_ports
        self.protocols = protocols

    def fit(self, X, y=None):
        self.spec_ = build_encoder(list(X), self.important_ports, self.protocols)
        self.n_features_out_ = self.spec_.total_dim
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        return encode(list(X), self.spec_).matrix.T

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "spec_")
        return np.asarray(self.spec_.row_names(), dtype=object)
