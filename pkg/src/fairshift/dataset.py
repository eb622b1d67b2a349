"""CSV ingestion, one-hot/min-max encoding, and biased train/test splits."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

COLUMN_KINDS = ("categorical", "numeric")
BIAS_COLUMN = "bias"

_PREDICATE_OPS = (">=", "<=", "==", "!=", ">", "<", "=", "in")


@dataclass(frozen=True)
class Schema:
    """Column kinds plus the protected/label column designation for a CSV table.

    ``columns`` is an ordered list of (name, kind) pairs matching the file
    header; kind is "categorical" or "numeric".
    """

    columns: tuple[tuple[str, str], ...]
    protected_column: str
    label_column: str
    favorable_label_value: str
    majority_group_value: str

    def __post_init__(self):
        names = [name for name, _ in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("schema has duplicate column names")
        for name, kind in self.columns:
            if kind not in COLUMN_KINDS:
                raise ValueError(f"column {name!r}: unknown kind {kind!r}")
        for col in (self.protected_column, self.label_column):
            if col not in names:
                raise ValueError(f"schema names unknown column {col!r}")
        if self.kind_of(self.protected_column) != "categorical":
            raise ValueError("protected column must be categorical")
        if self.kind_of(self.label_column) != "categorical":
            raise ValueError("label column must be categorical")

    def column_names(self) -> list[str]:
        return [name for name, _ in self.columns]

    def kind_of(self, column: str) -> str:
        for name, kind in self.columns:
            if name == column:
                return kind
        raise KeyError(column)

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        return cls(
            columns=tuple((str(n), str(k)) for n, k in d["columns"]),
            protected_column=d["protected_column"],
            label_column=d["label_column"],
            favorable_label_value=str(d["favorable_label_value"]),
            majority_group_value=str(d["majority_group_value"]),
        )

    def to_dict(self) -> dict:
        return {
            "columns": [list(c) for c in self.columns],
            "protected_column": self.protected_column,
            "label_column": self.label_column,
            "favorable_label_value": self.favorable_label_value,
            "majority_group_value": self.majority_group_value,
        }


@dataclass
class RawTable:
    """Text rows exactly as read from disk."""

    header: list[str]
    rows: list[list[str]]

    def __post_init__(self):
        arity = len(self.header)
        for i, row in enumerate(self.rows):
            if len(row) != arity:
                raise ValueError(
                    f"row {i} has {len(row)} fields, header has {arity}"
                )


@dataclass
class EncodedDataset:
    """Numeric sample container: one-hot categoricals, min-max scaled numerics.

    ``features`` is N x d with every entry in [0, 1]; the last column is a
    constant-1 intercept named "bias". ``protected`` is 1 for the majority
    group, ``labels`` is 1 for the favorable outcome. ``numeric_mask`` marks
    columns that came from numeric source columns (binned by the selection
    estimator); ``col_min``/``col_max`` hold the raw min-max statistics so
    predicates can be evaluated in raw units.
    """

    features: np.ndarray
    protected: np.ndarray
    labels: np.ndarray
    feature_names: list[str]
    numeric_mask: np.ndarray = None
    col_min: np.ndarray = None
    col_max: np.ndarray = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.protected = np.asarray(self.protected, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        d = self.features.shape[1] if self.features.ndim == 2 else 0
        if self.numeric_mask is None:
            self.numeric_mask = np.zeros(d, dtype=bool)
        else:
            self.numeric_mask = np.asarray(self.numeric_mask, dtype=bool)
        if self.col_min is None:
            self.col_min = np.zeros(d)
        else:
            self.col_min = np.asarray(self.col_min, dtype=np.float64)
        if self.col_max is None:
            self.col_max = np.ones(d)
        else:
            self.col_max = np.asarray(self.col_max, dtype=np.float64)
        self.validate()

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def validate(self):
        X = self.features
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 2:
            raise ValueError("features must be N x d with N >= 1 and d >= 2")
        n, d = X.shape
        if not np.isfinite(X).all():
            raise ValueError("features contain non-finite entries")
        if X.min() < 0.0 or X.max() > 1.0:
            raise ValueError("features must lie in [0, 1]")
        if not (X[:, -1] == 1.0).all():
            raise ValueError("last feature column must be the constant-1 bias")
        if len(self.feature_names) != d:
            raise ValueError("feature_names length does not match d")
        if self.feature_names[-1] != BIAS_COLUMN:
            raise ValueError(f"last feature must be named {BIAS_COLUMN!r}")
        for vec, what in ((self.protected, "protected"), (self.labels, "labels")):
            if vec.shape != (n,):
                raise ValueError(f"{what} must be a length-N vector")
            if not np.isin(vec, (0, 1)).all():
                raise ValueError(f"{what} entries must be 0 or 1")
        for vec in (self.numeric_mask, self.col_min, self.col_max):
            if vec.shape != (d,):
                raise ValueError("encoding metadata length does not match d")

    def take(self, indices) -> "EncodedDataset":
        """Row subset, sharing the encoding metadata."""
        idx = np.asarray(indices, dtype=np.intp)
        return EncodedDataset(
            features=self.features[idx],
            protected=self.protected[idx],
            labels=self.labels[idx],
            feature_names=list(self.feature_names),
            numeric_mask=self.numeric_mask.copy(),
            col_min=self.col_min.copy(),
            col_max=self.col_max.copy(),
        )


@dataclass(frozen=True)
class BiasSpec:
    """Selection protocol: keep head rows with group-dependent probability.

    Rows among the first ``head_count`` that satisfy ``high_group_predicate``
    are kept with probability ``high_rate``, the others with ``low_rate``;
    rows after ``head_count`` become the test set.
    """

    selection_column: str
    high_group_predicate: str
    high_rate: float
    low_rate: float
    head_count: int
    seed: int

    def __post_init__(self):
        if not (0.0 <= self.low_rate <= self.high_rate <= 1.0):
            raise ValueError("need 0 <= low_rate <= high_rate <= 1")
        if self.head_count < 1:
            raise ValueError("head_count must be positive")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")


@dataclass(frozen=True)
class DiscreteDistributionSpec:
    """Finite distribution over (x, a, y) with a known selection probability.

    ``support`` lists (x_key, a, y, prob) points; ``selection_prob`` maps
    (x_key, a) to the probability that a drawn point is selected into the
    biased sample. Used for oracle tests of the reweighing identity.
    """

    support: tuple[tuple[str, int, int, float], ...]
    selection_prob: dict = field(default_factory=dict)

    def __post_init__(self):
        probs = np.array([p for _, _, _, p in self.support], dtype=np.float64)
        if len(self.support) == 0:
            raise ValueError("support must be nonempty")
        if (probs < 0).any():
            raise ValueError("support probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("support probabilities must sum to 1")
        for x_key, a, _, _ in self.support:
            sel = self.selection_prob.get((x_key, a))
            if sel is None:
                raise ValueError(f"missing selection_prob for ({x_key!r}, {a})")
            if not (0.0 < sel <= 1.0):
                raise ValueError(f"selection_prob for ({x_key!r}, {a}) not in (0, 1]")

    def x_keys(self) -> list[str]:
        return sorted({x for x, _, _, _ in self.support})


def load_csv(path, schema: Schema) -> RawTable:
    """Read a comma-separated UTF-8 file whose header matches the schema.

    The dialect is deliberately minimal: fields may not contain quotes or
    embedded commas.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    lines = [ln for ln in lines if ln.strip() != ""]
    if not lines:
        raise ValueError(f"{path}: empty file")
    parsed = []
    for i, line in enumerate(lines):
        if '"' in line:
            raise ValueError(
                f"{path}: line {i} contains a quote character; "
                "quoted CSV fields are not supported"
            )
        parsed.append([f.strip() for f in line.split(",")])
    header = parsed[0]
    expected = schema.column_names()
    if header != expected:
        raise ValueError(
            f"{path}: header {header} does not match schema columns {expected}"
        )
    arity = len(header)
    for i, row in enumerate(parsed[1:]):
        if len(row) != arity:
            raise ValueError(
                f"{path}: data row {i} has {len(row)} fields, expected {arity}"
            )
    return RawTable(header=header, rows=parsed[1:])


def _binary_values(column: str, values: list[str], expected: str) -> list[str]:
    distinct = sorted(set(values))
    if len(distinct) != 2:
        raise ValueError(
            f"column {column!r} must have exactly 2 distinct values, "
            f"found {len(distinct)}: {distinct[:6]}"
        )
    if expected not in distinct:
        raise ValueError(
            f"value {expected!r} not observed in column {column!r} "
            f"(observed: {distinct})"
        )
    return distinct


def encode(raw: RawTable, schema: Schema) -> EncodedDataset:
    """One-hot categoricals, min-max scale numerics, append the bias column.

    The protected and label columns are mapped to separate 0/1 vectors and
    excluded from the feature matrix. Min-max statistics come from this
    table, so encode the full table before splitting.
    """
    n = len(raw.rows)
    if n < 1:
        raise ValueError("cannot encode an empty table")
    col_idx = {name: j for j, name in enumerate(raw.header)}
    cells = list(zip(*raw.rows))  # column-major text

    prot_vals = list(cells[col_idx[schema.protected_column]])
    _binary_values(schema.protected_column, prot_vals, schema.majority_group_value)
    protected = np.array(
        [1 if v == schema.majority_group_value else 0 for v in prot_vals]
    )
    label_vals = list(cells[col_idx[schema.label_column]])
    _binary_values(schema.label_column, label_vals, schema.favorable_label_value)
    labels = np.array(
        [1 if v == schema.favorable_label_value else 0 for v in label_vals]
    )

    columns, names, mask, mins, maxs = [], [], [], [], []
    for name, kind in schema.columns:
        if name in (schema.protected_column, schema.label_column):
            continue
        values = cells[col_idx[name]]
        if kind == "categorical":
            for cat in sorted(set(values)):
                columns.append(
                    np.fromiter((1.0 if v == cat else 0.0 for v in values), float, n)
                )
                names.append(f"{name}={cat}")
                mask.append(False)
                mins.append(0.0)
                maxs.append(1.0)
        else:
            try:
                col = np.array([float(v) for v in values])
            except ValueError:
                bad = next(
                    i for i, v in enumerate(values)
                    if not _is_float(v)
                )
                raise ValueError(
                    f"column {name!r}: non-numeric value {values[bad]!r} at row {bad}"
                ) from None
            mn, mx = col.min(), col.max()
            if mx == mn:
                warnings.warn(
                    f"numeric column {name!r} is constant; encoding as 0",
                    stacklevel=2,
                )
                scaled = np.zeros(n)
            else:
                scaled = (col - mn) / (mx - mn)
            columns.append(scaled)
            names.append(name)
            mask.append(True)
            mins.append(float(mn))
            maxs.append(float(mx))

    columns.append(np.ones(n))
    names.append(BIAS_COLUMN)
    mask.append(False)
    mins.append(0.0)
    maxs.append(1.0)

    return EncodedDataset(
        features=np.column_stack(columns),
        protected=protected,
        labels=labels,
        feature_names=names,
        numeric_mask=np.array(mask),
        col_min=np.array(mins),
        col_max=np.array(maxs),
    )


def _is_float(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def parse_predicate(text: str, default_column: str = None):
    """Parse a "column op value" predicate into (column, op, value).

    The column may be omitted, in which case ``default_column`` is used.
    Supported ops: >= <= > < = == != in; the `in` value is a {v1,v2,...} set.
    """
    tokens = text.strip().split(None, 2)
    if tokens and tokens[0] in _PREDICATE_OPS:
        if default_column is None:
            raise ValueError(f"predicate {text!r} omits the column name")
        tokens = [default_column] + tokens
    if len(tokens) != 3:
        raise ValueError(
            f"cannot parse predicate {text!r}; expected 'column op value'"
        )
    column, op, value = tokens
    if op not in _PREDICATE_OPS:
        raise ValueError(f"unknown operator {op!r} in predicate {text!r}")
    if op == "in":
        value = value.strip()
        if not (value.startswith("{") and value.endswith("}")):
            raise ValueError(f"'in' predicate needs a {{v1,v2}} set, got {value!r}")
        value = tuple(v.strip() for v in value[1:-1].split(",") if v.strip())
        if not value:
            raise ValueError(f"empty value set in predicate {text!r}")
    return column, op, value


def evaluate_predicate(data: EncodedDataset, column: str, op: str, value) -> np.ndarray:
    """Boolean mask of rows satisfying the predicate, in raw units.

    Numeric columns are un-scaled with the stored min-max statistics before
    comparison; categorical predicates address the one-hot indicator columns.
    """
    names = data.feature_names
    if column in names and data.numeric_mask[names.index(column)]:
        j = names.index(column)
        raw = data.col_min[j] + data.features[:, j] * (data.col_max[j] - data.col_min[j])
        thr = float(value) if not isinstance(value, tuple) else None
        if op in (">=",):
            return raw >= thr
        if op == "<=":
            return raw <= thr
        if op == ">":
            return raw > thr
        if op == "<":
            return raw < thr
        if op in ("=", "=="):
            return raw == thr
        if op == "!=":
            return raw != thr
        raise ValueError(f"operator {op!r} not supported for numeric column {column!r}")

    # categorical path: membership through one-hot indicators
    if op in ("=", "=="):
        values = (value,)
    elif op == "in":
        values = value if isinstance(value, tuple) else (value,)
    elif op == "!=":
        values = (value,)
    else:
        raise ValueError(
            f"operator {op!r} needs a numeric column; {column!r} is not numeric"
        )
    mask = np.zeros(data.n_samples, dtype=bool)
    for v in values:
        name = f"{column}={v}"
        if name not in names:
            raise ValueError(
                f"predicate references unknown category {name!r}; "
                f"no such encoded column"
            )
        mask |= data.features[:, names.index(name)] == 1.0
    return ~mask if op == "!=" else mask


def biased_split(data: EncodedDataset, spec: BiasSpec):
    """Seeded selection-biased split: (biased train, untouched tail test)."""
    n = data.n_samples
    if spec.head_count > n:
        raise ValueError(f"head_count {spec.head_count} exceeds N={n}")
    column, op, value = parse_predicate(spec.high_group_predicate, spec.selection_column)
    in_high = evaluate_predicate(data, column, op, value)[: spec.head_count]
    rates = np.where(in_high, spec.high_rate, spec.low_rate)
    rng = np.random.default_rng(spec.seed)
    keep = rng.random(spec.head_count) < rates
    train_idx = np.flatnonzero(keep)
    test_idx = np.arange(spec.head_count, n)
    if train_idx.size == 0:
        raise ValueError("biased selection kept no training rows")
    if test_idx.size == 0:
        raise ValueError("no rows left for the test set (head_count == N)")
    return data.take(train_idx), data.take(test_idx)


def sample_discrete(
    spec: DiscreteDistributionSpec, n: int, biased: bool, seed: int
) -> EncodedDataset:
    """Draw n i.i.d. points from the discrete distribution.

    With ``biased=True`` points are drawn from the selected population via
    rejection with the per-point selection probability, i.e. from the
    conditional distribution given selection.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    probs = np.array([p for _, _, _, p in spec.support])
    sel = np.array(
        [spec.selection_prob[(x, a)] for x, a, _, _ in spec.support]
    )
    rng = np.random.default_rng(seed)
    if biased:
        chosen = []
        need = n
        while need > 0:
            batch = max(1024, 2 * need)
            idx = rng.choice(len(probs), size=batch, p=probs)
            accept = rng.random(batch) < sel[idx]
            kept = idx[accept]
            chosen.append(kept[:need])
            need -= min(need, kept.size)
        idx = np.concatenate(chosen)
    else:
        idx = rng.choice(len(probs), size=n, p=probs)

    keys = spec.x_keys()
    key_pos = {k: j for j, k in enumerate(keys)}
    point_key = np.array([key_pos[x] for x, _, _, _ in spec.support])
    features = np.zeros((n, len(keys) + 1))
    features[np.arange(n), point_key[idx]] = 1.0
    features[:, -1] = 1.0
    return EncodedDataset(
        features=features,
        protected=np.array([spec.support[i][1] for i in idx]),
        labels=np.array([spec.support[i][2] for i in idx]),
        feature_names=[f"x={k}" for k in keys] + [BIAS_COLUMN],
    )


def concat_datasets(a: EncodedDataset, b: EncodedDataset) -> EncodedDataset:
    """Stack two datasets that share an encoding."""
    if a.feature_names != b.feature_names:
        raise ValueError("datasets have different feature columns")
    if not (
        np.array_equal(a.numeric_mask, b.numeric_mask)
        and np.array_equal(a.col_min, b.col_min)
        and np.array_equal(a.col_max, b.col_max)
    ):
        raise ValueError("datasets have different encoding metadata")
    return EncodedDataset(
        features=np.vstack([a.features, b.features]),
        protected=np.concatenate([a.protected, b.protected]),
        labels=np.concatenate([a.labels, b.labels]),
        feature_names=list(a.feature_names),
        numeric_mask=a.numeric_mask.copy(),
        col_min=a.col_min.copy(),
        col_max=a.col_max.copy(),
    )


def save_encoded(data: EncodedDataset, path):
    """Write the CSV cache (features, then protected and label columns).

    Encoding metadata goes to a JSON sidecar next to the CSV so that density
    estimation and predicates keep working after a reload.
    """
    path = Path(path)
    lines = [",".join(data.feature_names + ["protected", "label"])]
    for i in range(data.n_samples):
        row = [repr(float(v)) for v in data.features[i]]
        row.append(str(int(data.protected[i])))
        row.append(str(int(data.labels[i])))
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {
        "numeric_mask": data.numeric_mask.astype(int).tolist(),
        "col_min": data.col_min.tolist(),
        "col_max": data.col_max.tolist(),
    }
    Path(str(path) + ".meta.json").write_text(
        json.dumps(meta, sort_keys=True), encoding="utf-8"
    )


def load_encoded(path) -> EncodedDataset:
    """Read back a CSV cache written by :func:`save_encoded`."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    if header[-2:] != ["protected", "label"]:
        raise ValueError(f"{path}: not an encoded-dataset cache")
    feature_names = header[:-2]
    body = np.array(
        [[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=np.float64
    )
    meta_path = Path(str(path) + ".meta.json")
    meta = {}
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    else:
        warnings.warn(f"{meta_path} missing; assuming all-categorical features")
    d = len(feature_names)
    return EncodedDataset(
        features=body[:, :-2],
        protected=body[:, -2].astype(np.int64),
        labels=body[:, -1].astype(np.int64),
        feature_names=feature_names,
        numeric_mask=np.array(meta.get("numeric_mask", [0] * d), dtype=bool),
        col_min=np.array(meta.get("col_min", [0.0] * d)),
        col_max=np.array(meta.get("col_max", [1.0] * d)),
    )
