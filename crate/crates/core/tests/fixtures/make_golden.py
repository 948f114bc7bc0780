"""Writes the golden AXT corpus with an independent (stdlib-only) encoder.

Run from this directory: python3 make_golden.py
"""
import hashlib
import json
import math
import struct
from pathlib import Path

OUT = Path(__file__).parent / "golden"


def axt(dtype, dims, values, name=""):
    code, fmt = {"f32": (0, "<f"), "f64": (1, "<d")}[dtype]
    assert math.prod(dims) == len(values)
    out = b"AXT1" + struct.pack("<II", code, len(dims))
    out += b"".join(struct.pack("<Q", d) for d in dims)
    out += b"".join(struct.pack(fmt, v) for v in values)
    raw = name.encode()
    return out + struct.pack("<B", len(raw)) + raw


def pattern(i, j, k):
    # exact in f32
    return ((i * 7 + j * 3 + k) % 17 - 8) / 4.0


def main():
    OUT.mkdir(exist_ok=True)
    files = {}
    files["scalar_f64.axt"] = axt("f64", [1], [3.0])
    files["matrix_f32.axt"] = axt("f32", [2, 3], [1.0, -2.5, 0.125, 1e-3, 65504.0, -0.0], "probe")
    files["special_f64.axt"] = axt(
        "f64", [6], [float("nan"), float("inf"), float("-inf"), -0.0, 5e-324, 1.7976931348623157e308]
    )
    files["cube_f64.axt"] = axt("f64", [2, 3, 4], [float(v) for v in range(24)], "cube")
    n, t, d = 2, 261, 8
    acts = [pattern(i, j, k) for i in range(n) for j in range(t) for k in range(d)]
    files["layer_11.axt"] = axt("f32", [n, t, d], acts, "layer_11")
    files["probe_weights.axt"] = axt("f64", [3, d], [pattern(0, o, k) for o in range(3) for k in range(d)])
    files["probe_bias.axt"] = axt("f64", [3], [0.5, -1.0, 2.0])
    for name, data in files.items():
        (OUT / name).write_bytes(data)

    meta = {"layout": {"n_cls": 1, "n_reg": 4, "n_patch": 256}, "layer_index": 11}
    (OUT / "layer_11.meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    manifest = {
        "backbone": "synthetic-fixture",
        "layers": [11],
        "image_list_hash": hashlib.sha256(b"img_000.png\nimg_001.png\n").hexdigest(),
        "layout": meta["layout"],
        "dtype": "f32",
        "files": [{"layer": 11, "path": "layer_11.axt"}],
        "skipped": [],
    }
    (OUT / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    lines = [f"{hashlib.sha256(files[k]).hexdigest()}  {k}" for k in sorted(files)]
    (OUT / "SHA256SUMS").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
