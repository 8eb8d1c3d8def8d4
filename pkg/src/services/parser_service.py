"""Чтение и запись файлов обмена: длинный CSV окон/горизонтов и сырые float32-прогнозы моделей."""
import io
import json
import re
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..data.models import SeriesTable, validate_roster
from ..data.shard_storage import atomic_write
from ..utils.errors import FormatError, MissingModelFile, ParseError, ShapeMismatch
from ..utils.logger import logger

PathLike = Union[str, Path]

_FLOAT32 = np.dtype("<f4")
_PANDAS_LINE = re.compile(r"line (\d+)")


def _exact_float(text: str) -> float:
    # %.17g через float() читается бит в бит
    try:
        return float(text)
    except ValueError:
        return np.nan


class InterchangeParser:
    """Длинный формат: колонки sample_id, t, var_0..var_{d-1}; по строке на шаг каждого сэмпла."""

    # --- длинный CSV ---

    def read_series_csv(self, path: PathLike) -> SeriesTable:
        path = Path(path)
        if not path.exists():
            raise FormatError("Input file does not exist", path=str(path))
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
        return self.parse_series_csv(text, source=str(path))

    def parse_series_csv(self, text: str, source: str = "<text>") -> SeriesTable:
        try:
            frame = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False,
                                skip_blank_lines=False)
        except pd.errors.EmptyDataError:
            raise ParseError("File is empty", line=1, path=source)
        except pd.errors.ParserError as e:
            match = _PANDAS_LINE.search(str(e))
            raise ParseError("Row has an unexpected number of fields",
                             line=int(match.group(1)) if match else None, path=source)

        columns = list(frame.columns)
        d = len(columns) - 2
        expected = ["sample_id", "t"] + [f"var_{i}" for i in range(max(d, 0))]
        if d < 1 or columns != expected:
            raise ParseError("Header must be sample_id,t,var_0..var_{d-1}", line=1,
                             path=source, header=columns)
        if frame.empty:
            raise ParseError("File has a header but no rows", line=2, path=source)

        # строка данных i лежит на строке файла i + 2 (строка 1 занята заголовком)
        numeric = frame[columns[1:]].apply(lambda column: column.map(_exact_float)).astype(np.float64)
        bad = ~np.isfinite(numeric.to_numpy(dtype=np.float64)).all(axis=1)
        bad |= (frame["sample_id"].isna() | (frame["sample_id"] == "")).to_numpy()
        if bad.any():
            raise ParseError("Row has a missing or non-numeric value", line=int(np.argmax(bad)) + 2,
                             path=source)

        steps = numeric["t"].to_numpy()
        ids = frame["sample_id"].astype(str)
        block = (ids != ids.shift()).cumsum().to_numpy()
        position = pd.Series(block).groupby(block).cumcount().to_numpy()
        broken = steps != position
        if broken.any():
            raise ParseError("Time index must run 0, 1, 2, … within each sample",
                             line=int(np.argmax(broken)) + 2, path=source)

        starts = np.flatnonzero(position == 0)
        start_ids = ids.to_numpy()[starts]
        seen = pd.Series(start_ids).duplicated().to_numpy()
        if seen.any():
            raise ParseError("Sample rows must be contiguous", line=int(starts[np.argmax(seen)]) + 2,
                             path=source, sample_id=str(start_ids[np.argmax(seen)]))
        lengths = np.diff(np.append(starts, len(frame)))
        uneven = lengths != lengths[0]
        if uneven.any():
            raise ParseError("All samples must have the same number of steps",
                             line=int(starts[np.argmax(uneven)]) + 2, path=source)

        values = numeric[columns[2:]].to_numpy(dtype=np.float64).reshape(len(starts), int(lengths[0]), d)
        logger.debug("Series table parsed", path=source, n_samples=len(starts), steps=int(lengths[0]), d=d)
        return SeriesTable(sample_ids=[str(s) for s in start_ids], values=values)

    def format_series_csv(self, sample_ids: Sequence[str], values: np.ndarray) -> str:
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 2:
            values = values[:, :, None]
        if values.ndim != 3 or values.shape[0] != len(sample_ids):
            raise ShapeMismatch("Series values must be n x T x d", shape=values.shape,
                                n_ids=len(sample_ids))
        n, steps, d = values.shape
        frame = pd.DataFrame(values.reshape(n * steps, d), columns=[f"var_{i}" for i in range(d)])
        frame.insert(0, "t", np.tile(np.arange(steps), n))
        frame.insert(0, "sample_id", np.repeat(np.asarray(sample_ids, dtype=object), steps))
        buffer = io.StringIO()
        frame.to_csv(buffer, index=False, float_format="%.17g", lineterminator="\n")
        return buffer.getvalue()

    def write_series_csv(self, path: PathLike, sample_ids: Sequence[str], values: np.ndarray) -> Path:
        path = Path(path)
        atomic_write(path, self.format_series_csv(sample_ids, values).encode("utf-8"))
        logger.info("Series CSV written", path=str(path), n_samples=len(sample_ids))
        return path

    # --- прогнозы моделей ---

    def discover_roster(self, directory: PathLike) -> List[str]:
        """Ростер по файлам .f32 и .json в каталоге, в лексикографическом порядке.

        Модель без пары файлов попадает в ростер, и read_predictions назовёт недостающий файл.
        """
        directory = Path(directory)
        if not directory.is_dir():
            raise MissingModelFile("Predictions directory does not exist", path=str(directory))
        roster = sorted({p.stem for pattern in ("*.f32", "*.json") for p in directory.glob(pattern)})
        if not roster:
            raise MissingModelFile("No prediction files found", path=str(directory))
        return validate_roster(roster)

    def read_predictions(self, directory: PathLike, model: str) -> np.ndarray:
        directory = Path(directory)
        payload_path = directory / f"{model}.f32"
        sidecar_path = directory / f"{model}.json"
        for path in (payload_path, sidecar_path):
            if not path.exists():
                raise MissingModelFile(f"Missing prediction file for model '{model}'",
                                       model=model, path=str(path))
        try:
            with open(sidecar_path, "r", encoding="utf-8") as f:
                shape = tuple(int(v) for v in json.load(f)["shape"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise FormatError(f"Bad shape sidecar for model '{model}'", model=model, error=str(e))
        if len(shape) != 3 or min(shape) < 1:
            raise FormatError(f"Sidecar shape for model '{model}' must be [n, t_out, d]",
                              model=model, shape=list(shape))

        raw = payload_path.read_bytes()
        data = np.frombuffer(raw[:len(raw) - len(raw) % _FLOAT32.itemsize], dtype=_FLOAT32)
        if len(raw) % _FLOAT32.itemsize or data.shape[0] != int(np.prod(shape)):
            raise ShapeMismatch(f"Prediction payload of model '{model}' does not match its shape",
                                model=model, shape=list(shape), values=int(data.shape[0]))
        return data.reshape(shape).astype(np.float64)

    def read_prediction_stack(self, directory: PathLike,
                              roster: Optional[Sequence[str]] = None) -> Tuple[List[str], np.ndarray]:
        """Прогнозы всех моделей: (ростер, n × k × T_out × d)."""
        roster = validate_roster(list(roster)) if roster else self.discover_roster(directory)
        arrays = [self.read_predictions(directory, model) for model in roster]
        for model, array in zip(roster, arrays):
            if array.shape != arrays[0].shape:
                raise ShapeMismatch(f"Predictions of model '{model}' disagree with '{roster[0]}'",
                                    model=model, shape=list(array.shape),
                                    expected=list(arrays[0].shape))
        return roster, np.stack(arrays, axis=1)

    def write_predictions(self, directory: PathLike, model: str, values: np.ndarray) -> Path:
        directory = Path(directory)
        values = np.asarray(values, dtype=_FLOAT32)
        if values.ndim != 3:
            raise ShapeMismatch("Predictions must be n x t_out x d", model=model, shape=values.shape)
        atomic_write(directory / f"{model}.f32", np.ascontiguousarray(values).tobytes())
        atomic_write(directory / f"{model}.json",
                     json.dumps({"shape": list(values.shape)}).encode("utf-8"))
        return directory / f"{model}.f32"


parser = InterchangeParser()
