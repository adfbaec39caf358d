"""Binary field/trajectory formats and CSV diagnostics.

All binary formats are little-endian with a 4-byte ASCII magic:

LGF1 (vector field):  magic "LGF1", version u32, n u32, box_len f64,
    time f64, nu f64, then 3 * n^3 f64 samples, component-major with the
    x index fastest within each component.
LGS1 (scalar field):  magic "LGS1", same header, n^3 f64 samples.
LGT1 (trajectories):  magic "LGT1", version u32, particle count u32,
    save count u32, box_len f64, T f64, then the save times (S f64) and
    the positions (S * P * 3 f64, time-major, xyz fastest).
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .fields import Grid3, RealVectorField
from .flow import ParticleEnsemble

FORMAT_VERSION = 1


def _expect(f, magic: bytes):
    got = f.read(4)
    if got != magic:
        raise ValueError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", f.read(4))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")


def write_field(path, field: RealVectorField, time: float = 0.0,
                nu: float = 0.0) -> None:
    """Write a real vector field as LGF1."""
    n = field.grid.n
    with open(path, "wb") as f:
        f.write(b"LGF1")
        f.write(struct.pack("<II", FORMAT_VERSION, n))
        f.write(struct.pack("<ddd", field.grid.box_len, time, nu))
        # axis order in memory is (x, y, z); x fastest means Fortran order
        for c in range(3):
            f.write(np.asfortranarray(field.samples[c]).astype("<f8").tobytes("F"))


def read_field(path):
    """Read an LGF1 file; returns (RealVectorField, time, nu)."""
    with open(path, "rb") as f:
        _expect(f, b"LGF1")
        (n,) = struct.unpack("<I", f.read(4))
        box_len, time, nu = struct.unpack("<ddd", f.read(24))
        raw = np.frombuffer(f.read(3 * n ** 3 * 8), dtype="<f8")
        if raw.size != 3 * n ** 3:
            raise ValueError("truncated LGF1 payload")
    grid = Grid3(n, box_len)
    samples = np.stack([raw[c * n ** 3:(c + 1) * n ** 3].reshape((n, n, n), order="F")
                        for c in range(3)])
    return RealVectorField(grid, samples), time, nu


def write_scalar(path, grid: Grid3, values: np.ndarray, time: float = 0.0,
                 nu: float = 0.0) -> None:
    """Write a scalar grid field as LGS1."""
    n = grid.n
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (n, n, n):
        raise ValueError(f"scalar shape {values.shape} != ({n},{n},{n})")
    with open(path, "wb") as f:
        f.write(b"LGS1")
        f.write(struct.pack("<II", FORMAT_VERSION, n))
        f.write(struct.pack("<ddd", grid.box_len, time, nu))
        f.write(np.asfortranarray(values).astype("<f8").tobytes("F"))


def read_scalar(path):
    """Read an LGS1 file; returns (Grid3, values, time, nu)."""
    with open(path, "rb") as f:
        _expect(f, b"LGS1")
        (n,) = struct.unpack("<I", f.read(4))
        box_len, time, nu = struct.unpack("<ddd", f.read(24))
        raw = np.frombuffer(f.read(n ** 3 * 8), dtype="<f8")
        if raw.size != n ** 3:
            raise ValueError("truncated LGS1 payload")
    return Grid3(n, box_len), raw.reshape((n, n, n), order="F"), time, nu


def write_trajectories(path, ensemble: ParticleEnsemble) -> None:
    """Write a particle ensemble as LGT1."""
    S, P = ensemble.times.size, ensemble.count
    with open(path, "wb") as f:
        f.write(b"LGT1")
        f.write(struct.pack("<III", FORMAT_VERSION, P, S))
        f.write(struct.pack("<dd", ensemble.box_len, float(ensemble.times[-1])))
        f.write(ensemble.times.astype("<f8").tobytes())
        f.write(np.ascontiguousarray(ensemble.trajectories).astype("<f8").tobytes())


def read_trajectories(path) -> ParticleEnsemble:
    """Read an LGT1 file back into a ParticleEnsemble."""
    with open(path, "rb") as f:
        _expect(f, b"LGT1")
        P, S = struct.unpack("<II", f.read(8))
        box_len, _T = struct.unpack("<dd", f.read(16))
        times = np.frombuffer(f.read(S * 8), dtype="<f8").copy()
        raw = np.frombuffer(f.read(S * P * 3 * 8), dtype="<f8")
        if raw.size != S * P * 3:
            raise ValueError("truncated LGT1 payload")
    traj = raw.reshape(S, P, 3).copy()
    return ParticleEnsemble(traj[0].copy(), times, traj, box_len)


def write_diagnostics_csv(path, diags) -> None:
    """One row per record, header from the record field names; '%.17g'
    formatting makes the file byte-stable across identical runs."""
    from .solver import DiagnosticsRecord
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(DiagnosticsRecord.FIELDS)
        for d in diags:
            w.writerow([f"{v:.17g}" for v in d.as_row()])


def read_diagnostics_csv(path):
    """Returns (header tuple, rows as float arrays)."""
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = tuple(next(r))
        rows = [np.array([float(v) for v in row]) for row in r]
    return header, rows


def write_report_csv(path, rows, header) -> None:
    """Generic report CSV: rows of (str | float) cells."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
