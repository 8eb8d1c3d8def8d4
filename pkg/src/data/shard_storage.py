import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, Union

import crc32c
import numpy as np

from .models import (
    D_META, META_FEATURE_NAMES, FeatureStats, FusorModel, MetaShard, Split, validate_roster,
)
from ..utils.errors import ChecksumMismatch, FormatError, TruncatedFile
from ..utils.logger import logger

SHARD_MAGIC = b"TFSHARD1"
FORMAT_VERSION = 1
_LENGTH = struct.Struct("<I")
_HEADER_SIZE = len(SHARD_MAGIC) + _LENGTH.size
_FLOAT32 = np.dtype("<f4")

PathLike = Union[str, Path]


def atomic_write(path: Path, payload: bytes) -> None:
    # пишем во временный файл рядом и переименовываем: частичных артефактов не остаётся
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _checksum(payload: bytes) -> str:
    return f"{crc32c.crc32c(payload):08x}"


def _format_floats(values) -> str:
    return "[" + ", ".join(format(float(v), ".17g") for v in np.asarray(values).reshape(-1)) + "]"


class ShardStorage:
    """Хранилище артефактов: шарды TFSHARD1 и JSON-файлы fusor'а."""

    def __init__(self, data_dir: Path = None):
        # относительные пути считаются от data_dir, если он задан
        self.data_dir = Path(data_dir) if data_dir else None

    def resolve(self, path: PathLike) -> Path:
        path = Path(path)
        if self.data_dir is None or path.is_absolute():
            return path
        return self.data_dir / path

    # --- шарды ---

    def encode_shard(self, shard: MetaShard) -> bytes:
        schema = shard.shard_schema
        payload = b"".join(
            np.ascontiguousarray(block, dtype=_FLOAT32).tobytes()
            for block in (shard.features, shard.predictions, shard.truths)
        )
        manifest = {
            "format_version": FORMAT_VERSION,
            "task_id": shard.task_id,
            "split": shard.split.value,
            "n_samples": shard.n_samples,
            "k": schema.k,
            "d_meta": D_META,
            "t_out": schema.t_out,
            "d": schema.d,
            "roster": list(shard.roster),
            "feature_order": list(META_FEATURE_NAMES),
            "checksum": _checksum(payload),
        }
        manifest_bytes = json.dumps(manifest, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
        return SHARD_MAGIC + _LENGTH.pack(len(manifest_bytes)) + manifest_bytes + payload

    def decode_shard(self, data: bytes, source: str = "<bytes>") -> MetaShard:
        if len(data) < len(SHARD_MAGIC) or data[:len(SHARD_MAGIC)] != SHARD_MAGIC:
            raise FormatError("Not a TFSHARD1 file (bad magic)", path=source)
        if len(data) < _HEADER_SIZE:
            raise TruncatedFile("Shard header is truncated", path=source)
        (manifest_length,) = _LENGTH.unpack_from(data, len(SHARD_MAGIC))
        manifest_end = _HEADER_SIZE + manifest_length
        if len(data) < manifest_end:
            raise TruncatedFile("Shard manifest is truncated", path=source)
        try:
            manifest = json.loads(data[_HEADER_SIZE:manifest_end].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError("Shard manifest is not valid UTF-8 JSON", path=source, error=str(e))
        self._check_manifest(manifest, source)

        n, k, t_out, d = (int(manifest[key]) for key in ("n_samples", "k", "t_out", "d"))
        sizes = [n * D_META, n * k * t_out * d, n * t_out * d]
        expected = sum(sizes) * _FLOAT32.itemsize
        payload = data[manifest_end:]
        if len(payload) < expected:
            raise TruncatedFile(
                "Shard payload is shorter than the manifest declares",
                path=source, expected=expected, actual=len(payload),
            )
        if len(payload) > expected:
            raise FormatError("Shard payload has trailing bytes", path=source)
        if _checksum(payload) != manifest["checksum"]:
            raise ChecksumMismatch("Shard payload checksum mismatch", path=source)

        flat = np.frombuffer(payload, dtype=_FLOAT32)
        features = flat[:sizes[0]].reshape(n, D_META)
        predictions = flat[sizes[0]:sizes[0] + sizes[1]].reshape(n, k, t_out, d)
        truths = flat[sizes[0] + sizes[1]:].reshape(n, t_out, d)
        return MetaShard.from_arrays(
            manifest["task_id"], manifest["roster"], features, predictions, truths,
            split=Split(manifest["split"]),
        )

    def _check_manifest(self, manifest: Dict, source: str) -> None:
        required = ("format_version", "task_id", "split", "n_samples", "k", "d_meta",
                    "t_out", "d", "roster", "feature_order", "checksum")
        missing = [key for key in required if key not in manifest]
        if missing:
            raise FormatError("Shard manifest is missing fields", path=source, missing=missing)
        if manifest["format_version"] != FORMAT_VERSION:
            raise FormatError("Unsupported shard format version", path=source,
                              version=manifest["format_version"])
        if manifest["d_meta"] != D_META or list(manifest["feature_order"]) != list(META_FEATURE_NAMES):
            raise FormatError("Shard feature layout differs from the canonical order", path=source)
        if len(manifest["roster"]) != manifest["k"]:
            raise FormatError("Shard roster length differs from k", path=source)
        if manifest["split"] not in {s.value for s in Split}:
            raise FormatError("Unknown shard split", path=source, split=manifest["split"])

    def write_shard(self, shard: MetaShard, path: PathLike) -> Path:
        path = self.resolve(path)
        atomic_write(path, self.encode_shard(shard))
        logger.info("Shard written", path=str(path), task_id=shard.task_id,
                    split=shard.split.value, n_samples=shard.n_samples)
        return path

    def read_shard(self, path: PathLike) -> MetaShard:
        path = self.resolve(path)
        with open(path, "rb") as f:
            data = f.read()
        shard = self.decode_shard(data, source=str(path))
        logger.info("Shard loaded", path=str(path), task_id=shard.task_id, n_samples=shard.n_samples)
        return shard

    # --- модель fusor'а ---

    def encode_model(self, model: FusorModel) -> str:
        k = model.k
        theta_rows = ",\n    ".join(_format_floats(row) for row in np.asarray(model.theta).reshape(D_META, k))
        fields = [
            f'"format_version": {FORMAT_VERSION}',
            f'"roster": {json.dumps(list(model.roster), ensure_ascii=False)}',
            f'"huber_delta": {format(float(model.huber_delta), ".17g")}',
            f'"feature_order": {json.dumps(list(META_FEATURE_NAMES))}',
            f'"feature_means": {_format_floats(model.feature_stats.means)}',
            f'"feature_stds": {_format_floats(model.feature_stats.stds)}',
            f'"theta": [\n    {theta_rows}\n  ]',
            f'"bias": {_format_floats(model.bias)}',
        ]
        return "{\n  " + ",\n  ".join(fields) + "\n}\n"

    def decode_model(self, text: str, source: str = "<text>") -> FusorModel:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise FormatError("Fusor model is not valid JSON", path=source, error=str(e))
        if data.get("format_version") != FORMAT_VERSION:
            raise FormatError("Unsupported fusor model version", path=source)
        if list(data.get("feature_order", [])) != list(META_FEATURE_NAMES):
            raise FormatError("Fusor feature order differs from the canonical order", path=source)
        roster = validate_roster(data["roster"])
        theta = np.asarray(data["theta"], dtype=np.float64)
        bias = np.asarray(data["bias"], dtype=np.float64)
        if theta.shape != (D_META, len(roster)) or bias.shape != (len(roster),):
            raise FormatError("Fusor parameter shapes do not match the roster", path=source)
        return FusorModel(
            theta=theta,
            bias=bias,
            feature_stats=FeatureStats(
                means=np.asarray(data["feature_means"], dtype=np.float64),
                stds=np.asarray(data["feature_stds"], dtype=np.float64),
            ),
            roster=tuple(roster),
            huber_delta=float(data["huber_delta"]),
        )

    def save_model(self, model: FusorModel, path: PathLike) -> Path:
        path = self.resolve(path)
        atomic_write(path, self.encode_model(model).encode("utf-8"))
        logger.info("Fusor model saved", path=str(path), k=model.k)
        return path

    def load_model(self, path: PathLike) -> FusorModel:
        path = self.resolve(path)
        with open(path, "r", encoding="utf-8") as f:
            model = self.decode_model(f.read(), source=str(path))
        logger.info("Fusor model loaded", path=str(path), k=model.k)
        return model


storage = ShardStorage()


def write_shard(shard: MetaShard, path: PathLike) -> Path:
    return storage.write_shard(shard, path)


def read_shard(path: PathLike) -> MetaShard:
    return storage.read_shard(path)
