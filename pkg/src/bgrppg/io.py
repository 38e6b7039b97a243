"""File formats: STM1 maps, label CSVs, PPM frames, landmark CSVs and configs."""

import csv
import json
import struct
from collections import OrderedDict
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigError, FormatError
from .stmap import SEMANTICS, StMap

STM1_MAGIC = b"STM1"
STM1_VERSION = 1
_HEADER = struct.Struct("<4sHHIIIf")

LABEL_COLUMNS = ("clip_id", "frame_index", "bvp", "hr_bpm")


def encode_stm1(m):
    c, l, t = m.data.shape
    head = _HEADER.pack(STM1_MAGIC, STM1_VERSION, SEMANTICS.index(m.semantics), c, l, t, m.fs)
    return head + np.ascontiguousarray(m.data, dtype="<f4").tobytes()


def decode_stm1(buf):
    if len(buf) < _HEADER.size:
        raise FormatError(f"STM1 header truncated at byte {len(buf)}: "
                          f"expected {_HEADER.size} bytes, got {len(buf)}")
    magic, version, code, c, l, t, fs = _HEADER.unpack_from(buf)
    if magic != STM1_MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte 0, expected {STM1_MAGIC!r}")
    if version != STM1_VERSION:
        raise FormatError(f"unsupported STM1 version {version} at byte 4")
    if code >= len(SEMANTICS):
        raise FormatError(f"unknown semantics code {code} at byte 6")
    want = 4 * c * l * t
    got = len(buf) - _HEADER.size
    if got != want:
        raise FormatError(f"payload at byte {_HEADER.size}: expected {want} bytes, got {got}")
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(c, l, t)
    return StMap(data.astype(np.float64), SEMANTICS[code], float(fs))


def write_stm1(path, m):
    Path(path).write_bytes(encode_stm1(m))


def read_stm1(path):
    return decode_stm1(Path(path).read_bytes())


def write_labels(path, rows):
    """``rows``: iterable of (clip_id, frame_index, bvp, hr_bpm)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_COLUMNS)
        for cid, k, bvp, hr in rows:
            w.writerow([cid, int(k), f"{float(bvp):.12g}", f"{float(hr):.12g}"])


def label_rows(clip_id, bvp, hr_bpm):
    return [(clip_id, k, v, hr_bpm) for k, v in enumerate(np.asarray(bvp))]


def read_labels(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise FormatError(f"{path}: empty file")
        missing = [c for c in LABEL_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise FormatError(f"{path}: missing column(s) {', '.join(missing)}")
        out = []
        for i, r in enumerate(reader, start=2):
            try:
                out.append((r["clip_id"], int(r["frame_index"]), float(r["bvp"]), float(r["hr_bpm"])))
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{path}: line {i}: {exc}") from None
    return out


def group_labels(rows):
    """clip_id -> (bvp array ordered by frame index, hr_bpm); first-seen clip order."""
    groups = OrderedDict()
    for cid, k, bvp, hr in rows:
        groups.setdefault(cid, []).append((k, bvp, hr))
    out = OrderedDict()
    for cid, items in groups.items():
        items.sort(key=lambda x: x[0])
        out[cid] = (np.array([b for _, b, _ in items]), items[0][2])
    return out


def read_ppm(path):
    """Binary PPM (P6, maxval 255) -> (H, W, 3) uint8."""
    buf = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.find(b"\n", pos) + 1 or len(buf)
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: PPM header truncated at byte {pos}")
        tokens.append(buf[start:pos])
    if tokens[0] != b"P6":
        raise FormatError(f"{path}: bad magic {tokens[0]!r} at byte 0, expected b'P6'")
    w, h, maxval = (int(x) for x in tokens[1:])
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}")
    pos += 1
    want = 3 * w * h
    if len(buf) - pos < want:
        raise FormatError(f"{path}: pixel data at byte {pos}: expected {want} bytes, "
                          f"got {len(buf) - pos}")
    return np.frombuffer(buf, np.uint8, want, pos).reshape(h, w, 3).copy()


def write_ppm(path, img):
    img = np.asarray(img, dtype=np.uint8)
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + img.tobytes())


def read_landmarks(path, n_points=68):
    """CSV with one row per frame: x0, y0, x1, y1, ... -> (T, n_points, 2)."""
    rows = []
    with open(path, newline="") as fh:
        for i, r in enumerate(csv.reader(fh), start=1):
            if not r or r[0].startswith("#"):
                continue
            try:
                vals = [float(v) for v in r]
            except ValueError:
                if not rows:  # header line
                    continue
                raise FormatError(f"{path}: line {i}: non-numeric value") from None
            if len(vals) != 2 * n_points:
                raise FormatError(f"{path}: line {i}: expected {2 * n_points} values, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise FormatError(f"{path}: no landmark rows")
    return np.array(rows).reshape(len(rows), n_points, 2)


# Experiment configuration

_NUM = {"type": "number"}
_INT = {"type": "integer"}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "s_norm": {"type": "integer", "minimum": 1},
        "n_starts": {"type": "integer", "minimum": 1},
        "band": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "seed": _INT,
        "output_dir": {"type": "string"},
        "data_dir": {"type": "string"},
        "split_ratio": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "scenarios": {"type": "array", "items": {"type": "object"}},
        "benchmark": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["clean", "interference"]},
                "n": {"type": "integer", "minimum": 2},
                "ratio": _NUM,
                "noise_std": _NUM,
            },
            "required": ["kind"],
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha": _NUM, "beta": _NUM, "gamma": _NUM, "tau": _NUM,
                "lr": _NUM, "lr_after": _NUM, "lr_switch_epoch": _INT,
                "epochs": {"type": "integer", "minimum": 1},
                "weight_decay": _NUM, "adam_eps": _NUM,
                "betas": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                "model": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "in_channels": _INT, "rows": _INT, "frames": _INT, "window": _INT,
                        "heads": _INT, "head_kernel": _INT, "decoder_channels": _INT,
                        "stage_channels": {"type": "array", "items": _INT},
                        "head_channels": {"type": "array", "items": _INT},
                    },
                },
            },
        },
    },
}


def validate_config(doc):
    """Validate an experiment config dict; raises ``ConfigError`` listing every problem."""
    v = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(v.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))
    return doc


def load_config(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return validate_config(doc)
