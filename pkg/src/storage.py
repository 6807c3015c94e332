"""Data storage utilities: JSONL datasets, checkpoints, JSON/CSV reports."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from src.encoders import ModelConfig
from src.numerics import ParamStore
from src.synthbench import GroundingSample

CHECKPOINT_MAGIC = "DEBIAS-TLL-CHECKPOINT"
CHECKPOINT_VERSION = 1
HEADER_KEYS = frozenset({"config", "seed", "epochs", "names", "shapes"})


class CheckpointFormatError(ValueError):
    """Unreadable checkpoint, unsupported version or incompatible dimensions."""


@dataclass
class Checkpoint:
    params: ParamStore
    config: dict = field(default_factory=dict)
    seed: int = 0
    epochs: int = 0
    format_version: int = CHECKPOINT_VERSION

    @property
    def model_cfg(self) -> ModelConfig:
        return ModelConfig(**self.config["model"])


def save_samples_jsonl(samples: list[GroundingSample], filepath: Path) -> None:
    """Save samples as line-delimited JSON, one object per sample."""
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, "w", encoding="utf-8") as f:
        for sample in samples:
            f.write(json.dumps(sample.to_record(), sort_keys=True, ensure_ascii=False) + "\n")
    print(f"Saved {len(samples)} samples to {filepath}")


def load_samples_jsonl(filepath: Path) -> list[GroundingSample]:
    """Load samples from a JSONL file."""
    samples = []
    with open(filepath, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                samples.append(GroundingSample.from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{filepath}:{line_no}: malformed sample ({e})") from e
    return samples


def save_checkpoint(ckpt: Checkpoint, filepath: Path) -> None:
    """Magic/version line, JSON header line, then little-endian float64 payload."""
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "config": ckpt.config,
        "seed": ckpt.seed,
        "epochs": ckpt.epochs,
        "names": ckpt.params.names(),
        "shapes": [list(shape) for shape in ckpt.params.shapes().values()],
    }
    with open(filepath, "wb") as f:
        f.write(f"{CHECKPOINT_MAGIC} {ckpt.format_version}\n".encode("ascii"))
        f.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        f.write(ckpt.params.flat().astype("<f8").tobytes())
    print(f"Saved checkpoint to {filepath}")


def load_checkpoint(filepath: Path) -> Checkpoint:
    with open(filepath, "rb") as f:
        first = f.readline().decode("ascii", errors="replace").split()
        if len(first) != 2 or first[0] != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"{filepath} is not a checkpoint")
        version = int(first[1]) if first[1].isdigit() else -1
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(
                f"{filepath}: checkpoint format version {first[1]}, expected {CHECKPOINT_VERSION}"
            )
        try:
            header = json.loads(f.readline().decode("utf-8"))
        except json.JSONDecodeError as e:
            raise CheckpointFormatError(f"{filepath}: corrupt header ({e})") from e
        missing = HEADER_KEYS - set(header) if isinstance(header, dict) else HEADER_KEYS
        if missing:
            raise CheckpointFormatError(f"{filepath}: header lacks {sorted(missing)}")
        if len(header["names"]) != len(header["shapes"]):
            raise CheckpointFormatError(
                f"{filepath}: {len(header['names'])} parameter names but {len(header['shapes'])} shapes"
            )
        payload = np.frombuffer(f.read(), dtype="<f8").astype(np.float64)

    params = ParamStore()
    offset = 0
    try:
        for name, shape in zip(header["names"], header["shapes"]):
            count = int(np.prod(shape)) if shape else 1
            if offset + count > payload.size:
                raise CheckpointFormatError(f"{filepath}: payload too short for {name}")
            params.add(name, payload[offset:offset + count].reshape(shape))
            offset += count
    except CheckpointFormatError:
        raise
    except (TypeError, ValueError) as e:
        raise CheckpointFormatError(f"{filepath}: bad parameter table ({e})") from e
    if offset != payload.size:
        raise CheckpointFormatError(f"{filepath}: {payload.size - offset} trailing values")

    return Checkpoint(params=params, config=header["config"], seed=header["seed"],
                      epochs=header["epochs"], format_version=version)


def save_json(data: dict, filepath: Path) -> None:
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, ensure_ascii=False, sort_keys=True)
    print(f"Saved: {filepath}")


def save_frame_csv(df: pd.DataFrame, filepath: Path) -> None:
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(filepath, index=False)
    print(f"Saved: {filepath}")


def append_jsonl(record: dict, filepath: Path) -> None:
    with open(filepath, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def get_output_path(out_dir: str | Path, name: str, data_type: str, ext: str) -> Path:
    """Deterministic output path <out_dir>/<name>_<data_type>.<ext>."""
    path = Path(out_dir) / f"{name}_{data_type}.{ext}"
    path.parent.mkdir(parents=True, exist_ok=True)
    return path
