"""Plain file formats: binary PGM images and CSV vectors/matrices."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_pgm(path, image, vmax: float = 1.0) -> None:
    """Write a 2-D array as 8-bit binary PGM (P5), mapping ``[0, vmax]`` to ``[0, 255]``."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM images must be two-dimensional")
    data = np.rint(np.clip(img / vmax, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit P5 PGM file into floats in ``[0, 1]``."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM file: {path}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError("only 8-bit PGM files are supported")
    pixels = np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    return pixels.reshape(h, w).astype(float) / maxval


def write_vector_csv(path, vec) -> None:
    np.savetxt(path, np.asarray(vec, dtype=float).reshape(-1, 1), fmt="%.17g")


def read_vector_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=1).reshape(-1)


def read_matrix_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def csv_to_dat(csv_path, dat_path=None) -> Path:
    """Whitespace-separated copy of a CSV with a ``#`` header, for gnuplot."""
    csv_path = Path(csv_path)
    dat_path = Path(dat_path) if dat_path else csv_path.with_suffix(".dat")
    lines = csv_path.read_text().splitlines()
    out = ["# " + lines[0].replace(",", " ")]
    out += [" ".join(c if c else "-" for c in line.split(",")) for line in lines[1:]]
    dat_path.write_text("\n".join(out) + "\n")
    return dat_path
