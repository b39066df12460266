"""
BHF1 field files and trajectory directories.

BHF1 layout (little-endian):
    bytes 0-3   magic b'BHF1'
    u32 x 4     n, N, components, representation (0 physical, 1 spectral)
    f64         L
    f64 ...     components * N^n values per component, x-fastest

Spectral fields are stored in a real Hermitian packing: real parts on the
canonical half of the lattice (linear index <= that of the mirror point),
imaginary parts of the mirror point on the other half. A spectral Field is
the transform of real data, so nothing is lost.
"""
from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from core.exceptions import FieldError, FieldFormatError
from core.utils.fields import Field, Grid, Representation, mirror

logger = logging.getLogger(__name__)

MAGIC = b'BHF1'
HEADER = struct.Struct('<4sIIIId')
PathLike = Union[str, Path]


def sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix('.json')


def _lattice_order(grid: Grid):
    lin = np.arange(grid.size).reshape(grid.shape)
    mlin = mirror(lin, grid.n)
    return lin <= mlin, lin < mlin


def _pack(values: np.ndarray, grid: Grid) -> np.ndarray:
    canonical, _ = _lattice_order(grid)
    return np.where(canonical, values.real, mirror(values, grid.n).imag)


def _unpack(packed: np.ndarray, grid: Grid) -> np.ndarray:
    canonical, paired = _lattice_order(grid)
    half = packed + 1j * np.where(paired, mirror(packed, grid.n), 0.0)
    return np.where(canonical, half, np.conj(mirror(half, grid.n)))


def encode_field(f: Field) -> bytes:
    grid = f.grid
    tag = f.representation.value
    values = f.values
    if f.representation is Representation.SPECTRAL:
        if not np.allclose(values, np.conj(mirror(values, grid.n)), rtol=0, atol=1e-12 * max(np.abs(values).max(), 1.0)):
            raise FieldError("spectral field is not the transform of real data; cannot pack")
        values = _pack(values, grid)
    header = HEADER.pack(MAGIC, grid.n, grid.N, f.components, tag, grid.L)
    payload = b''.join(np.asarray(c, dtype='<f8').ravel(order='F').tobytes() for c in values)
    return header + payload


def decode_field(data: bytes) -> Field:
    if len(data) < HEADER.size:
        raise FieldFormatError(f"truncated header: expected {HEADER.size} bytes, got {len(data)}",
                               expected=HEADER.size, actual=len(data))
    magic, n, N, components, tag, L = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FieldFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if n not in (2, 3) or N < 1 or not L > 0:
        raise FieldFormatError(f"invalid header: n={n}, N={N}, L={L}")
    if components not in (1, n):
        raise FieldFormatError(f"header declares {components} components for n={n}")
    if tag not in (0, 1):
        raise FieldFormatError(f"unknown representation tag {tag}")
    grid = Grid(n, N, L)
    expected = HEADER.size + components * grid.size * 8
    if len(data) != expected:
        kind = 'truncated payload' if len(data) < expected else 'trailing bytes after payload'
        raise FieldFormatError(f"{kind}: expected {expected} bytes, got {len(data)}",
                               expected=expected, actual=len(data))
    flat = np.frombuffer(data, dtype='<f8', offset=HEADER.size).astype(float)
    values = flat.reshape((components,) + grid.shape[::-1]).transpose((0,) + tuple(range(n, 0, -1)))
    representation = Representation(tag)
    if representation is Representation.SPECTRAL:
        values = _unpack(values, grid)
    return Field(grid, values, representation)


def write_field(f: Field, path: PathLike, meta: Optional[Dict[str, Any]] = None) -> Path:
    """
    Writes `f` as BHF1. When `meta` is given (or the field carries metadata),
    a JSON sidecar with the same stem is written next to it.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_field(f))
    extra = {**f.meta, **(meta or {})}
    if extra:
        sidecar = {'grid': f.grid.describe(), 'meta': extra}
        sidecar_path(path).write_text(json.dumps(sidecar, sort_keys=True, indent=2, default=_json_default))
    logger.debug("wrote %s (%d components, %s)", path, f.components, f.representation.name.lower())
    return path


def read_field(path: PathLike) -> Field:
    path = Path(path)
    f = decode_field(path.read_bytes())
    side = sidecar_path(path)
    if side.exists():
        try:
            meta = json.loads(side.read_text()).get('meta', {})
        except json.JSONDecodeError as exc:
            logger.warning("ignoring unreadable sidecar %s: %s", side, exc)
        else:
            f = f.with_values(f.values, **meta)
    return f


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


# ----------------------------------------------------------------------------
# Trajectory directories
# ----------------------------------------------------------------------------

def save_trajectory(traj, directory: PathLike) -> Path:
    """
    Writes manifest.json, one BHF1 file per stored time and history.csv
    (iteration, x_norm_diff).
    """
    import pandas as pd

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, f in enumerate(traj.fields):
        name = f'u_{i:03d}.bhf'
        (directory / name).write_bytes(encode_field(f))
        names.append(name)
    manifest = traj.to_manifest()
    manifest['files'] = names
    (directory / 'manifest.json').write_text(json.dumps(manifest, sort_keys=True, indent=2, default=_json_default))
    history = pd.DataFrame({'iteration': np.arange(1, len(traj.history) + 1, dtype=int),
                            'x_norm_diff': np.asarray(traj.history, dtype=float)})
    history.to_csv(directory / 'history.csv', index=False, float_format='%.17g')
    logger.info("saved trajectory with %d fields to %s", len(names), directory)
    return directory


def load_trajectory(directory: PathLike):
    from core.services.mild_solver import Trajectory

    directory = Path(directory)
    manifest_file = directory / 'manifest.json'
    if not manifest_file.exists():
        raise FieldFormatError(f"no manifest.json in {directory}")
    manifest = json.loads(manifest_file.read_text())
    fields = [read_field(directory / name) for name in manifest['files']]
    return Trajectory.from_manifest(manifest, fields)
