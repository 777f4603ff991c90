#!/usr/bin/env python3
"""
File outputs: moment, density, grid and ladder CSVs, JSON reports and the
lattice directory (per-date CSVs, transition tensors, manifest).
All writers are deterministic for identical inputs.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from src.errors import ConfigError
from src.hermite import TruncatedDensity
from src.model_core import HermiteMoments, SvjParams
from src.quantizer_poly import QuantGrid
from src.rmq_engine import EulerConfig, RmqLattice, lattice_from_parts

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
MANIFEST = "manifest.json"


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialise {type(value).__name__}")


def dump_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=_to_builtin) + "\n"


def write_json(data: Any, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json(data), encoding="utf-8")
    return path


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_frame(path: Path) -> pd.DataFrame:
    """Inverse of write_frame; floats come back bit-exact."""
    return pd.read_csv(path, float_precision="round_trip")


def params_hash(params: SvjParams) -> str:
    payload = json.dumps(params.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def write_moments_csv(moments: HermiteMoments, path: Path) -> Path:
    return write_frame(moments.to_frame(), path)


def write_density_csv(density: TruncatedDensity, path: Path, span: float = 6.0, points: int = 1001) -> Path:
    w = density.weight
    x = np.linspace(w.mu_w - span * w.sigma_w, w.mu_w + span * w.sigma_w, points)
    return write_frame(pd.DataFrame({"x": x, "g": density.pdf(x)}), path)


def write_grid(grid: QuantGrid, out_dir: Path, stem: str = "grid") -> List[Path]:
    out_dir = Path(out_dir)
    return [write_frame(grid.to_frame(), out_dir / f"{stem}.csv"), write_json(grid.report(), out_dir / f"{stem}.json")]


def write_ladder_csv(rows: Sequence[Mapping[str, float]], path: Path) -> Path:
    frame = pd.DataFrame(list(rows), columns=["strike", "benchmark", "quantization", "relative_error_pct"])
    return write_frame(frame, path)


def ladder_rows(strikes: Sequence[float], benchmark: Sequence[float], quantization: Sequence[float]) -> List[Dict[str, float]]:
    rows = []
    for K, b, q in zip(strikes, benchmark, quantization):
        rel = 100.0 * abs(q - b) / abs(b) if b else float("nan")
        rows.append({"strike": float(K), "benchmark": float(b), "quantization": float(q), "relative_error_pct": rel})
    return rows


def write_lattice(lattice: RmqLattice, out_dir: Path, run: Optional[Mapping[str, Any]] = None) -> Path:
    """One grid CSV per date and coordinate, one joint-weight CSV per date,
    one .npy transition tensor per step, and a manifest tying them together."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files: Dict[str, List[str]] = {"v_grids": [], "s_grids": [], "joint_weights": [], "transitions": []}
    for k in range(lattice.L + 1):
        for key, grid in (("v_grids", lattice.v_grids[k]), ("s_grids", lattice.s_grids[k])):
            name = f"{key[0]}_grid_{k:03d}.csv"
            write_frame(grid.to_frame(), out_dir / name)
            files[key].append(name)
        name = f"joint_{k:03d}.csv"
        write_frame(pd.DataFrame(lattice.joint_weights[k]), out_dir / name)
        files["joint_weights"].append(name)
    for k, tensor in enumerate(lattice.transitions):
        name = f"transition_{k:03d}.npy"
        np.save(out_dir / name, tensor, allow_pickle=False)
        files["transitions"].append(name)

    cfg = lattice.config
    manifest = {
        "params": lattice.params.to_dict(),
        "params_hash": params_hash(lattice.params),
        "T": cfg.T,
        "L": cfg.L,
        "Delta": cfg.Delta,
        "N_V": cfg.N_V,
        "N_S": cfg.N_S,
        "drift": cfg.drift,
        "tol": cfg.tol,
        "max_iter": cfg.max_iter,
        "row_defects": lattice.row_defects,
        "files": files,
        "run": dict(run or {}),
    }
    write_json(manifest, out_dir / MANIFEST)
    logger.info("lattice written to %s (%d dates)", out_dir, lattice.L + 1)
    return out_dir / MANIFEST


def _read_grid(path: Path, units: str, date: float) -> QuantGrid:
    frame = read_frame(path)
    return QuantGrid(
        points=frame["x_i"].to_numpy(dtype=float),
        weights=frame["weight_i"].to_numpy(dtype=float),
        units=units,
        meta={"date": date},
    )


def lattice_from_manifest(directory: Path) -> RmqLattice:
    """Rebuild a persisted lattice; the params hash must match."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST
    if not manifest_path.is_file():
        raise ConfigError(f"no lattice manifest in {directory}", {"path": str(directory)})
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    params = SvjParams.from_mapping(manifest["params"])
    if params_hash(params) != manifest["params_hash"]:
        raise ConfigError("lattice manifest params hash mismatch", {"path": str(manifest_path)})
    cfg = EulerConfig(
        L=int(manifest["L"]),
        T=float(manifest["T"]),
        N_V=int(manifest["N_V"]),
        N_S=int(manifest["N_S"]),
        drift=manifest["drift"],
        tol=float(manifest["tol"]),
        max_iter=int(manifest["max_iter"]),
    )
    files = manifest["files"]
    dates = cfg.dates()
    v_grids = [_read_grid(directory / f, "variance", dates[k]) for k, f in enumerate(files["v_grids"])]
    s_grids = [_read_grid(directory / f, "price", dates[k]) for k, f in enumerate(files["s_grids"])]
    joints = [read_frame(directory / f).to_numpy(dtype=float) for f in files["joint_weights"]]
    transitions = [np.load(directory / f, allow_pickle=False) for f in files["transitions"]]
    return lattice_from_parts(params, cfg, v_grids, s_grids, joints, transitions, manifest.get("row_defects"))
