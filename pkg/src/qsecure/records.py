"""Quantization of tabular health records into bitstrings.

A schema lists fields in payload order. Numeric fields are binned by
thresholds into 1-3 bits, categorical fields are one-hot, binary fields take
one bit. Bundled schemas: ``surveillance``, ``tcga``, ``diabetes``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

TRUE_WORDS = {"1", "true", "yes", "y", "positive", "t"}
FALSE_WORDS = {"0", "false", "no", "n", "negative", "f"}


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class FieldSpec:
    name: str
    type: str
    thresholds: tuple[float, ...] = ()
    categories: tuple[str, ...] = ()
    range: tuple[float, float] = (0.0, 1.0)
    p: float = 0.5

    @property
    def width(self) -> int:
        if self.type == "numeric":
            return max(1, math.ceil(math.log2(len(self.thresholds) + 1)))
        if self.type == "categorical":
            return len(self.categories)
        return 1

    def encode(self, value) -> str:
        if self.type == "numeric":
            try:
                x = float(value)
            except (TypeError, ValueError):
                raise SchemaError(f"{self.name}: not numeric: {value!r}") from None
            level = sum(x >= t for t in self.thresholds)
            return format(level, f"0{self.width}b")
        if self.type == "categorical":
            if value not in self.categories:
                raise SchemaError(f"{self.name}: unknown category {value!r}")
            return "".join("1" if c == value else "0" for c in self.categories)
        s = str(value).strip().lower()
        if s in TRUE_WORDS:
            return "1"
        if s in FALSE_WORDS:
            return "0"
        raise SchemaError(f"{self.name}: not a boolean: {value!r}")


@dataclass(frozen=True)
class RecordSchema:
    name: str
    fields: tuple[FieldSpec, ...]

    @property
    def n_bits(self) -> int:
        return sum(f.width for f in self.fields)

    def quantize(self, record: dict) -> str:
        missing = [f.name for f in self.fields if f.name not in record]
        if missing:
            raise SchemaError(f"record lacks fields {missing}")
        return "".join(f.encode(record[f.name]) for f in self.fields)

    def sample(self, n: int, rng: np.random.Generator) -> list[dict]:
        """Synthetic records with plausible value ranges."""
        rows = []
        for _ in range(n):
            row = {}
            for f in self.fields:
                if f.type == "numeric":
                    row[f.name] = round(float(rng.uniform(*f.range)), 1)
                elif f.type == "categorical":
                    row[f.name] = f.categories[int(rng.integers(len(f.categories)))]
                else:
                    row[f.name] = "yes" if rng.random() < f.p else "no"
            rows.append(row)
        return rows

    @classmethod
    def from_dict(cls, data: dict) -> RecordSchema:
        fields = []
        for raw in data["fields"]:
            kind = raw.get("type", "binary")
            if kind not in ("numeric", "categorical", "binary"):
                raise SchemaError(f"{raw.get('name')}: unknown field type {kind!r}")
            spec = FieldSpec(
                name=raw["name"],
                type=kind,
                thresholds=tuple(raw.get("thresholds", ())),
                categories=tuple(raw.get("categories", ())),
                range=tuple(raw.get("range", (0.0, 1.0))),
                p=float(raw.get("p", 0.5)),
            )
            if kind == "numeric" and not 1 <= len(spec.thresholds) <= 7:
                raise SchemaError(f"{spec.name}: numeric fields need 1..7 thresholds")
            if kind == "categorical" and not spec.categories:
                raise SchemaError(f"{spec.name}: categorical field without categories")
            fields.append(spec)
        return cls(name=data["name"], fields=tuple(fields))


BUNDLED = ("surveillance", "tcga", "diabetes")


def load_schema(name_or_path: str | Path) -> RecordSchema:
    """Load a bundled schema by name, or a schema JSON file by path."""
    if str(name_or_path) in BUNDLED:
        text = resources.files("qsecure").joinpath("schemas", f"{name_or_path}.json").read_text()
    else:
        text = Path(name_or_path).read_text()
    return RecordSchema.from_dict(json.loads(text))


def split_blocks(bits: str, block: int) -> list[str]:
    """Cut a payload into qubit-register-sized blocks (last one may be short)."""
    if block < 1:
        raise SchemaError("block size must be >= 1")
    return [bits[i : i + block] for i in range(0, len(bits), block)]
