"""Writer for the FNDRBANK binary format the training toolkit consumes.

Layout (little-endian): magic "FNDRBANK", version u32, length-prefixed UTF-8
representation name, n u64, dim u32, u16 labels, length-prefixed sample ids,
float32 feature matrix row-major, then the first 8 bytes of SHA-256 over all
preceding bytes. This mirrors the format documented by the trainer; the two
packages share only this wire format.
"""

import hashlib
import io
import struct

import numpy as np

BANK_MAGIC = b"FNDRBANK"
BANK_VERSION = 1


def write_bank(path, representation_name: str, features: np.ndarray,
               labels: np.ndarray, sample_ids: list[str]) -> None:
    features = np.ascontiguousarray(features, dtype="<f4")
    labels = np.asarray(labels)
    n, dim = features.shape
    if labels.shape != (n,) or len(sample_ids) != n:
        raise ValueError(f"misaligned bank arrays: {n} rows, {labels.shape[0]} labels, "
                         f"{len(sample_ids)} ids")
    if n and (labels.min() < 0 or labels.max() > 0xFFFF):
        raise ValueError("labels must fit in u16")
    buf = io.BytesIO()
    buf.write(BANK_MAGIC)
    buf.write(struct.pack("<I", BANK_VERSION))
    name = representation_name.encode("utf-8")
    buf.write(struct.pack("<I", len(name)))
    buf.write(name)
    buf.write(struct.pack("<Q", n))
    buf.write(struct.pack("<I", dim))
    buf.write(labels.astype("<u2").tobytes())
    for sid in sample_ids:
        sb = sid.encode("utf-8")
        buf.write(struct.pack("<I", len(sb)))
        buf.write(sb)
    buf.write(features.tobytes())
    payload = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(hashlib.sha256(payload).digest()[:8])
