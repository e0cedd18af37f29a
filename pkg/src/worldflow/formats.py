"""Dataset file formats.

`.nwchunk` is one scene chunk: magic "NUIW\\0\\1", little-endian uint64
header length, canonical-JSON header, bit-packed occupancy (x-fastest voxel
order, little bit order), then float32-LE surface points and optional
colors.

`.nwlat` is one scene latent grid: magic "NWLA\\0\\1", same header scheme,
then the R*C*V*c float32-LE latent blob.

Every file gets a JSON sidecar manifest (same path + ".json") carrying
provenance: config hash, seed, producer version, and the payload SHA-256.
Writers are deterministic, so re-running a stage with identical inputs
produces byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .errors import PersistenceError
from .geometry import ColoredPointCloud, OccupancyGrid, SceneChunkSample

CHUNK_MAGIC = b"NUIW\x00\x01"
LATENT_MAGIC = b"NWLA\x00\x01"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_container(path, magic: bytes, header: dict, payload: bytes) -> None:
    hb = canonical_json(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<Q", len(hb)))
        f.write(hb)
        f.write(payload)


def _read_container(path, magic: bytes) -> tuple[dict, bytes]:
    with open(path, "rb") as f:
        got = f.read(len(magic))
        if got != magic:
            raise PersistenceError(f"bad magic in {path}: {got!r}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        return header, f.read()


def write_sidecar(path, config_hash: str, seed: int, extra: dict | None = None) -> None:
    payload_sha = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    manifest = {
        "config_hash": config_hash,
        "seed": int(seed),
        "producer_version": __version__,
        "payload_sha256": payload_sha,
    }
    if extra:
        manifest.update(extra)
    Path(str(path) + ".json").write_text(canonical_json(manifest) + "\n")


def read_sidecar(path) -> dict:
    side = Path(str(path) + ".json")
    if not side.exists():
        raise PersistenceError(f"missing sidecar manifest for {path}")
    return json.loads(side.read_text())


def save_chunk(path, chunk: SceneChunkSample) -> None:
    occ = chunk.occupancy
    X, Y, Z = occ.dims
    # x-fastest: index = x + X*(y + Y*z)
    bits = occ.data.transpose(2, 1, 0).reshape(-1)
    packed = np.packbits(bits, bitorder="little").tobytes()
    pts = np.ascontiguousarray(chunk.surface.points, dtype="<f4").tobytes()
    header = {
        "dims": [int(X), int(Y), int(Z)],
        "voxel_edge": float(occ.voxel_edge),
        "grid_coords": [int(chunk.grid_coords[0]), int(chunk.grid_coords[1])],
        "n_points": int(len(chunk.surface)),
        "has_colors": bool(chunk.surface.has_colors),
        "occ_bytes": len(packed),
    }
    payload = packed + pts
    if chunk.surface.has_colors:
        payload += np.ascontiguousarray(chunk.surface.colors, dtype="<f4").tobytes()
    _write_container(path, CHUNK_MAGIC, header, payload)


def load_chunk(path) -> SceneChunkSample:
    header, payload = _read_container(path, CHUNK_MAGIC)
    X, Y, Z = header["dims"]
    nbits = X * Y * Z
    occ_bytes = header["occ_bytes"]
    bits = np.unpackbits(np.frombuffer(payload[:occ_bytes], dtype=np.uint8),
                         count=nbits, bitorder="little")
    data = bits.reshape(Z, Y, X).transpose(2, 1, 0).astype(bool)
    n = header["n_points"]
    off = occ_bytes
    pts = np.frombuffer(payload[off:off + 12 * n], dtype="<f4").reshape(n, 3)
    off += 12 * n
    colors = None
    if header["has_colors"]:
        colors = np.frombuffer(payload[off:off + 12 * n], dtype="<f4").reshape(n, 3)
    return SceneChunkSample(
        tuple(header["grid_coords"]),
        OccupancyGrid(data, header["voxel_edge"]),
        ColoredPointCloud(pts.copy(), colors.copy() if colors is not None else None),
    )


def save_latent_grid(path, latents: np.ndarray, meta: dict | None = None) -> None:
    """latents: (R, C, V, c) float32."""
    lat = np.ascontiguousarray(latents, dtype="<f4")
    if lat.ndim != 4:
        raise PersistenceError(f"latent grid must be 4D, got {lat.ndim}D")
    header = {"shape": list(lat.shape)}
    if meta:
        header["meta"] = meta
    _write_container(path, LATENT_MAGIC, header, lat.tobytes())


def load_latent_grid(path) -> tuple[np.ndarray, dict]:
    header, payload = _read_container(path, LATENT_MAGIC)
    shape = header["shape"]
    lat = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return lat, header.get("meta", {})
