# arscale/storage/files.py
# On-disk formats: dataset container (.npy + .json sidecar), long-format CSV,
# model JSON, fitted blocks (.npy). Every writer is atomic (temp file + rename).

import io
import json
import math
import logging
import os
import tempfile
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from arscale.core.models import CSV_COLUMNS, ARModel, Dataset, DatasetMetadata, NoiseSpec, ResultRecord, ResultTable

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def atomic_write_bytes(path: PathLike, payload: bytes) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, target)
    except Exception:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return target


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: PathLike, payload: Union[BaseModel, dict]) -> Path:
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _npy_bytes(array: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    np.save(buffer, np.ascontiguousarray(array, dtype=np.float64), allow_pickle=False)
    return buffer.getvalue()


def _stem(path: PathLike) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".npy", ".json") else path


# ==================== DATASETS ====================

def save_dataset(ds: Dataset, stem: PathLike) -> Path:
    """Write ``<stem>.npy`` (N x T x d) and the ``<stem>.json`` metadata sidecar."""
    stem = _stem(stem)
    metadata = DatasetMetadata(
        N=ds.N, T=ds.T, d=ds.d, seed=ds.seed,
        noise_family=ds.noise.family if ds.noise else None,
        sigma=ds.noise.sigma if ds.noise else None,
    )
    atomic_write_bytes(stem.with_suffix(".npy"), _npy_bytes(ds.data))
    write_json(stem.with_suffix(".json"), metadata)
    logger.info(f"✅ Dataset saved: {stem}.npy (N={ds.N}, T={ds.T}, d={ds.d})")
    return stem


def load_dataset(stem: PathLike) -> Dataset:
    stem = _stem(stem)
    data = np.load(stem.with_suffix(".npy"), allow_pickle=False)
    sidecar = stem.with_suffix(".json")
    noise: Optional[NoiseSpec] = None
    seed: Optional[int] = None
    if sidecar.exists():
        metadata = DatasetMetadata.model_validate_json(sidecar.read_text())
        if (metadata.N, metadata.T, metadata.d) != data.shape:
            raise ValueError(f"sidecar shape {(metadata.N, metadata.T, metadata.d)} does not match data {data.shape}")
        seed = metadata.seed
        if metadata.noise_family is not None:
            noise = NoiseSpec(family=metadata.noise_family, sigma=metadata.sigma if metadata.sigma is not None else 1.0)
    else:
        logger.warning(f"⚠️ No metadata sidecar next to {stem}.npy - loading data only")
    return Dataset(data=data, seed=seed, noise=noise)


def export_dataset_csv(ds: Dataset, path: PathLike) -> Path:
    """Long format, one row per (n, t, i) with 1-based t."""
    n, t, i = np.meshgrid(np.arange(ds.N), np.arange(1, ds.T + 1), np.arange(ds.d), indexing="ij")
    frame = pd.DataFrame({"n": n.ravel(), "t": t.ravel(), "i": i.ravel(), "value": ds.data.ravel()})
    return atomic_write_text(path, frame.to_csv(index=False))


def import_dataset_csv(path: PathLike) -> Dataset:
    frame = pd.read_csv(path, float_precision="round_trip")
    N, T, d = int(frame["n"].max()) + 1, int(frame["t"].max()), int(frame["i"].max()) + 1
    data = np.zeros((N, T, d))
    data[frame["n"].to_numpy(), frame["t"].to_numpy() - 1, frame["i"].to_numpy()] = frame["value"].to_numpy()
    return Dataset(data=data)


# ==================== MODELS & BLOCKS ====================

class ModelFile(BaseModel):
    p: int
    d: int
    sigma: float = 1.0
    blocks: List[List[List[float]]]


def save_model(m: ARModel, path: PathLike) -> Path:
    payload = ModelFile(p=m.p, d=m.d, sigma=m.sigma, blocks=m.stacked.tolist())
    return write_json(path, payload)


def load_model(path: PathLike) -> ARModel:
    payload = ModelFile.model_validate_json(Path(path).read_text())
    model = ARModel.create(payload.blocks, sigma=payload.sigma)
    if (model.p, model.d) != (payload.p, payload.d):
        raise ValueError(f"model file declares p={payload.p}, d={payload.d} but blocks give p={model.p}, d={model.d}")
    return model


def save_blocks(blocks: np.ndarray, path: PathLike) -> Path:
    return atomic_write_bytes(Path(path).with_suffix(".npy"), _npy_bytes(blocks))


def load_blocks(path: PathLike) -> np.ndarray:
    blocks = np.load(Path(path).with_suffix(".npy"), allow_pickle=False)
    if blocks.ndim != 3 or blocks.shape[1] != blocks.shape[2]:
        raise ValueError(f"blocks file must hold a (p, d, d) array, got {blocks.shape}")
    return blocks


# ==================== RESULT TABLES ====================

def results_to_frame(table: ResultTable) -> pd.DataFrame:
    """Raw records first, then seed-averaged ones, columns in schema order."""
    return pd.DataFrame([record.row() for record in table.records()], columns=list(CSV_COLUMNS))


def export_csv(table: ResultTable, path: PathLike) -> Path:
    if not len(table):
        raise ValueError("cannot export an empty result table")
    target = atomic_write_text(path, results_to_frame(table).to_csv(index=False))
    logger.info(f"✅ {len(table)} records written to {target}")
    return target


def _clean(value):
    return None if isinstance(value, float) and math.isnan(value) else value


def read_csv(path: PathLike) -> ResultTable:
    frame = pd.read_csv(path, float_precision="round_trip", keep_default_na=False, na_values=[""])
    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path} is missing columns: {', '.join(missing)}")

    raw, averaged = [], []
    for row in frame[list(CSV_COLUMNS)].to_dict(orient="records"):
        for column in ("seed", "lambda", "step_size"):
            row[column] = _clean(row[column])
        if row["seed"] is not None:
            row["seed"] = int(row["seed"])
        record = ResultRecord.model_validate(row)
        (averaged if record.seed is None else raw).append(record)
    return ResultTable(raw=raw, averaged=averaged)
