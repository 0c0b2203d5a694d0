"""Versioned binary container for trained surrogates.

Layout: 8-byte magic, uint32 version, uint64 header length (little endian),
UTF-8 JSON header, then the arrays listed in the header as row-major
little-endian float64 in header order."""

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..errors import CorruptFile, FingerprintMismatch, SchemaVersionMismatch
from .models import Encoding, ModelConfig, build_model

MAGIC = b"OPFBNN\x00\x01"
VERSION = 1


def save_checkpoint(s, path, extra=None):
    arrays = [("param." + k, v) for k, v in s.model.state_dict().items()]
    arrays += [("enc." + k, v) for k, v in s.encoding.arrays().items()]
    header = {
        "config": asdict(s.cfg),
        "case_fingerprint": s.fingerprint,
        "seed": s.cfg.seed,
        "arrays": [[k, list(np.shape(v))] for k, v in arrays],
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(head)))
        fh.write(head)
        for _, v in arrays:
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return Path(path)


def read_header(path):
    blob = Path(path).read_bytes()
    if len(blob) < 20 or blob[:8] != MAGIC:
        raise CorruptFile(f"{path}: not an opfbench checkpoint")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != VERSION:
        raise SchemaVersionMismatch(f"{path}: checkpoint version {version}, reader supports {VERSION}")
    if 20 + hlen > len(blob):
        raise CorruptFile(f"{path}: truncated header")
    try:
        header = json.loads(blob[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: bad header ({exc})") from None
    return header, blob, 20 + hlen


def load_checkpoint(path, net):
    header, blob, off = read_header(path)
    if header["case_fingerprint"] != net.fingerprint:
        raise FingerprintMismatch(net.fingerprint, header["case_fingerprint"], what=f"checkpoint {path}")
    need = sum(8 * int(np.prod(shape)) for _, shape in header["arrays"])
    if len(blob) - off != need:
        raise CorruptFile(f"{path}: expected {need} bytes of parameters, found {len(blob) - off}")
    params, enc = {}, {}
    for name, shape in header["arrays"]:
        cnt = int(np.prod(shape))
        a = np.frombuffer(blob, dtype="<f8", count=cnt, offset=off).reshape(shape).astype(np.float64)
        off += 8 * cnt
        grp, key = name.split(".", 1)
        (params if grp == "param" else enc)[key] = a
    s = build_model(ModelConfig(**header["config"]), net)
    s.model.load_state_dict(params)
    s.encoding = Encoding(**enc)
    s.model.eval()
    return s
