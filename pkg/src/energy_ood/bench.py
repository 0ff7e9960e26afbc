"""Synthetic benchmark generation and dataset file I/O.

In-distribution data is a Gaussian mixture with one class per mean;
outliers come from a ring well outside the class means (default), a
uniform box, or a shifted Gaussian. Training and test outlier splits
draw from disjoint PRNG streams so the auxiliary outliers never leak
into evaluation.

The PRNG is Philox4x64 (counter-based); split streams are obtained by
jumping the base generator, and the manifest records the generator
name and numpy version so golden files can be regenerated elsewhere.

File formats:
  csv    header ``split,label,v0,...,v{d-1}``; split is "in" or "out",
         label is a class index for in rows and empty for out rows.
         Values use shortest round-trip decimal formatting.
  raw64  little-endian float64, row-major, in rows then out rows, with
         a JSON sidecar ``<path>.json`` describing rows/cols/splits.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, TableParseError
from .metrics import ScoreSet
from .mlp import MlpModel, forward_batch
from .scores import msp_scores, neg_energy_scores

PRNG_NAME = "numpy-philox4x64-jumped"
FORMATS = ("csv", "raw64")
OOD_KINDS = ("ring", "uniform_box", "shifted_gaussian")


@dataclass(frozen=True)
class LabeledDataset:
    """Input rows plus class labels; outlier splits carry labels=None."""

    inputs: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise InputError("dataset inputs must be a non-empty 2-D array")
        if not np.all(np.isfinite(x)):
            raise InputError("dataset inputs contain non-finite values")
        object.__setattr__(self, "inputs", x)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (x.shape[0],):
                raise InputError("labels length must match inputs")
            if np.any(y < 0):
                raise InputError("labels must be non-negative")
            object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.inputs.shape[0]


def default_class_means(k_classes: int, dim: int, radius: float) -> np.ndarray:
    """Axis-aligned means: class c at radius * e_{c mod dim} * (1 + c // dim)."""
    means = np.zeros((k_classes, dim))
    for c in range(k_classes):
        means[c, c % dim] = radius * (1 + c // dim)
    return means


@dataclass(frozen=True)
class BenchmarkSpec:
    """Generator parameters; defaults give the standard seeded benchmark."""

    k_classes: int = 2
    dim: int = 2
    mean_radius: float = 4.0
    class_means: np.ndarray | None = None
    in_std: float = 1.0
    ood_kind: str = "ring"
    ring_radius: tuple = (10.0, 12.0)
    box_halfwidth: float = 15.0
    shift_distance: float = 10.0
    n_train_in: int = 2000
    n_train_out: int = 2000
    n_test_in: int = 1000
    n_test_out: int = 1000
    seed: int = 7

    def __post_init__(self):
        if self.k_classes < 2:
            raise InputError("k_classes must be >= 2")
        if self.dim < 1:
            raise InputError("dim must be >= 1")
        if self.in_std <= 0:
            raise InputError("in_std must be positive")
        if self.ood_kind not in OOD_KINDS:
            raise InputError(f"unknown ood_kind {self.ood_kind!r}")
        lo, hi = self.ring_radius
        if not 0 < lo <= hi:
            raise InputError("ring_radius must satisfy 0 < lo <= hi")
        for name in ("n_train_in", "n_train_out", "n_test_in", "n_test_out"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")
        if self.class_means is None:
            means = default_class_means(self.k_classes, self.dim, self.mean_radius)
        else:
            means = np.asarray(self.class_means, dtype=np.float64)
            if means.shape != (self.k_classes, self.dim):
                raise InputError(
                    f"class_means must be ({self.k_classes}, {self.dim}), got {means.shape}"
                )
        object.__setattr__(self, "class_means", means)
        object.__setattr__(self, "ring_radius", (float(lo), float(hi)))

    def to_json_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["class_means"] = self.class_means.tolist()
        doc["ring_radius"] = list(self.ring_radius)
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "BenchmarkSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InputError(f"unknown benchmark spec keys: {sorted(unknown)}")
        doc = dict(doc)
        if "ring_radius" in doc:
            doc["ring_radius"] = tuple(doc["ring_radius"])
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "BenchmarkSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))

    def manifest(self) -> dict:
        return {"spec": self.to_json_dict(), "prng_name": PRNG_NAME, "version": np.__version__}


@dataclass(frozen=True)
class BenchmarkData:
    train_in: LabeledDataset
    train_out: LabeledDataset
    test_in: LabeledDataset
    test_out: LabeledDataset


def _draw_in(rng, spec: BenchmarkSpec, n: int) -> LabeledDataset:
    labels = rng.integers(0, spec.k_classes, size=n)
    x = spec.class_means[labels] + spec.in_std * rng.standard_normal((n, spec.dim))
    return LabeledDataset(inputs=x, labels=labels)


def _draw_out(rng, spec: BenchmarkSpec, n: int) -> LabeledDataset:
    if spec.ood_kind == "ring":
        dirs = rng.standard_normal((n, spec.dim))
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        radii = rng.uniform(spec.ring_radius[0], spec.ring_radius[1], size=(n, 1))
        x = dirs / norms * radii
    elif spec.ood_kind == "uniform_box":
        x = rng.uniform(-spec.box_halfwidth, spec.box_halfwidth, size=(n, spec.dim))
    else:  # shifted_gaussian
        center = np.zeros(spec.dim)
        center[0] = -spec.shift_distance
        x = center + spec.in_std * rng.standard_normal((n, spec.dim))
    return LabeledDataset(inputs=x)


def generate(spec: BenchmarkSpec) -> BenchmarkData:
    """Deterministic draw of all four splits from disjoint PRNG streams."""
    base = np.random.Philox(key=spec.seed)
    streams = [np.random.Generator(base.jumped(i)) for i in range(4)]
    return BenchmarkData(
        train_in=_draw_in(streams[0], spec, spec.n_train_in),
        train_out=_draw_out(streams[1], spec, spec.n_train_out),
        test_in=_draw_in(streams[2], spec, spec.n_test_in),
        test_out=_draw_out(streams[3], spec, spec.n_test_out),
    )


def write_table(path, in_data: LabeledDataset, out_data: LabeledDataset, fmt: str = "csv") -> None:
    """Write one in/out split pair in the given format."""
    if fmt not in FORMATS:
        raise InputError(f"unknown table format {fmt!r}")
    if in_data.inputs.shape[1] != out_data.inputs.shape[1]:
        raise InputError("in and out splits must share a dimension")
    if in_data.labels is None:
        raise InputError("the in split must be labeled")
    if fmt == "csv":
        _write_csv(path, in_data, out_data)
    else:
        _write_raw64(path, in_data, out_data)


def _write_csv(path, in_data, out_data) -> None:
    dim = in_data.inputs.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "label"] + [f"v{i}" for i in range(dim)])
        for row, label in zip(in_data.inputs, in_data.labels):
            writer.writerow(["in", int(label)] + [repr(float(v)) for v in row])
        for row in out_data.inputs:
            writer.writerow(["out", ""] + [repr(float(v)) for v in row])


def _write_raw64(path, in_data, out_data) -> None:
    stacked = np.vstack([in_data.inputs, out_data.inputs]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(stacked.tobytes(order="C"))
    descriptor = {
        "rows": int(stacked.shape[0]),
        "cols": int(stacked.shape[1]),
        "splits": {
            "in": {
                "start": 0,
                "count": len(in_data),
                "labels": in_data.labels.tolist(),
            },
            "out": {"start": len(in_data), "count": len(out_data), "labels": None},
        },
    }
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(descriptor, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_table(path, fmt: str = "csv"):
    """Inverse of write_table: returns (in_split, out_split)."""
    if fmt not in FORMATS:
        raise InputError(f"unknown table format {fmt!r}")
    if fmt == "csv":
        return _load_csv(path)
    return _load_raw64(path)


def _load_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TableParseError("empty file", path=path) from None
        if len(header) < 3 or header[0] != "split" or header[1] != "label":
            raise TableParseError(
                "header must be split,label,v0,...", path=path, line=1
            )
        dim = len(header) - 2
        expected = [f"v{i}" for i in range(dim)]
        if header[2:] != expected:
            raise TableParseError(
                f"value columns must be v0..v{dim - 1}", path=path, line=1
            )
        in_rows, in_labels, out_rows = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 2:
                raise TableParseError(
                    f"expected {dim + 2} cells, found {len(row)}", path=path, line=lineno
                )
            split = row[0]
            try:
                values = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise TableParseError(f"non-numeric cell: {exc}", path=path, line=lineno) from None
            if split == "in":
                try:
                    in_labels.append(int(row[1]))
                except ValueError:
                    raise TableParseError(
                        f"in row needs an integer label, got {row[1]!r}", path=path, line=lineno
                    ) from None
                in_rows.append(values)
            elif split == "out":
                if row[1] != "":
                    raise TableParseError(
                        "out rows must have an empty label", path=path, line=lineno
                    )
                out_rows.append(values)
            else:
                raise TableParseError(
                    f"split must be 'in' or 'out', got {split!r}", path=path, line=lineno
                )
    if not in_rows or not out_rows:
        raise TableParseError("table needs at least one in row and one out row", path=path)
    return (
        LabeledDataset(inputs=np.array(in_rows), labels=np.array(in_labels)),
        LabeledDataset(inputs=np.array(out_rows)),
    )


def _load_raw64(path):
    sidecar = str(path) + ".json"
    try:
        with open(sidecar, "r", encoding="utf-8") as fh:
            descriptor = json.load(fh)
    except FileNotFoundError:
        raise TableParseError("missing raw64 descriptor sidecar", path=sidecar) from None
    except json.JSONDecodeError as exc:
        raise TableParseError(f"invalid descriptor JSON: {exc}", path=sidecar) from None
    try:
        rows, cols = int(descriptor["rows"]), int(descriptor["cols"])
        splits = descriptor["splits"]
        in_start, in_count = int(splits["in"]["start"]), int(splits["in"]["count"])
        out_start, out_count = int(splits["out"]["start"]), int(splits["out"]["count"])
        in_labels = splits["in"]["labels"]
    except (KeyError, TypeError, ValueError) as exc:
        raise TableParseError(f"malformed descriptor: {exc}", path=sidecar) from None
    with open(path, "rb") as fh:
        payload = fh.read()
    expected_bytes = rows * cols * 8
    if len(payload) != expected_bytes:
        raise TableParseError(
            f"expected {expected_bytes} bytes for {rows}x{cols} float64, found {len(payload)}",
            path=path,
        )
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(rows, cols)
    if in_labels is None or len(in_labels) != in_count:
        raise TableParseError("descriptor in-labels must match the in row count", path=sidecar)
    return (
        LabeledDataset(inputs=data[in_start : in_start + in_count], labels=np.array(in_labels)),
        LabeledDataset(inputs=data[out_start : out_start + out_count]),
    )


def assemble_scores(model, test_in, test_out, score_kind: str = "neg_energy", temp: float = 1.0) -> ScoreSet:
    """Score both test splits; higher = more in-distribution.

    ``model`` is either an MlpModel or a callable mapping input rows to
    logit rows.
    """
    if isinstance(model, MlpModel):
        logits_fn = lambda rows: forward_batch(model, rows)
    elif callable(model):
        logits_fn = model
    else:
        raise InputError("model must be an MlpModel or a callable returning logits")
    logits_in = np.asarray(logits_fn(test_in.inputs), dtype=np.float64)
    logits_out = np.asarray(logits_fn(test_out.inputs), dtype=np.float64)
    if score_kind == "neg_energy":
        in_scores = neg_energy_scores(logits_in, temp)
        out_scores = neg_energy_scores(logits_out, temp)
    elif score_kind == "msp":
        in_scores = msp_scores(logits_in)
        out_scores = msp_scores(logits_out)
    else:
        raise InputError(f"assemble_scores supports neg_energy or msp, got {score_kind!r}")
    return ScoreSet(in_scores=in_scores, out_scores=out_scores)
