"""File formats for episode data: PFM images, P5 PGM masks, ASCII PLY clouds."""

from __future__ import annotations

import numpy as np


def write_pfm(path, data: np.ndarray) -> None:
    """Write a 1- or 3-channel float32 PFM (little-endian, rows bottom-to-top)."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError("PFM data must be HxW or HxWx3")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")  # negative scale marks little-endian
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ValueError(f"not a PFM file: {path}")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        channels = 3 if header == b"PF" else 1
        count = w * h * channels
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(count * 4), dtype=dtype, count=count)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.ascontiguousarray(data.reshape(shape)[::-1]).astype(np.float32)


def write_pgm_mask(path, mask: np.ndarray) -> None:
    """Write a boolean mask as binary P5 PGM (255 inside the mask)."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write((mask.astype(np.uint8) * 255).tobytes())


def read_pgm_mask(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError(f"not a binary PGM file: {path}")
        line = f.readline()
        while line.startswith(b"#"):
            line = f.readline()
        w, h = (int(v) for v in line.split())
        int(f.readline())  # maxval
        data = np.frombuffer(f.read(w * h), dtype=np.uint8)
    return data.reshape(h, w) > 127


def write_ply(path, points: np.ndarray, normals: np.ndarray) -> None:
    """ASCII PLY with x y z nx ny nz properties (millimetres)."""
    points = np.asarray(points, dtype=float)
    normals = np.asarray(normals, dtype=float)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
        "property float nx",
        "property float ny",
        "property float nz",
        "end_header",
    ]
    for p, n in zip(points, normals):
        lines.append("%.6f %.6f %.6f %.6f %.6f %.6f" % (p[0], p[1], p[2], n[0], n[1], n[2]))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_ply(path):
    with open(path) as f:
        line = f.readline().strip()
        if line != "ply":
            raise ValueError(f"not a PLY file: {path}")
        count = 0
        while True:
            line = f.readline().strip()
            if line.startswith("element vertex"):
                count = int(line.split()[-1])
            if line == "end_header":
                break
        rows = [f.readline().split() for _ in range(count)]
    data = np.asarray(rows, dtype=float).reshape(count, 6)
    return data[:, :3], data[:, 3:6]
