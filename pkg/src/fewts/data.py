"""Dataset ingestion and episodic task sampling.

UCR-format files are one series per row: class label first, then the
observations, separated by commas, tabs or whitespace (auto-detected).
Series are z-normalized at ingestion and only lengths 4..512 are accepted.

A few-shot task is K train samples and K' test samples per class; train
samples come from a dataset's original-train pool and test samples from its
original-test pool, so episodic results stay comparable with conventional
train/test evaluation. Classes with fewer than K samples contribute
everything they have.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, SamplingError

log = logging.getLogger(__name__)

MIN_LENGTH = 4
MAX_LENGTH = 512
STD_FLOOR = 1e-12


@dataclass(frozen=True)
class TimeSeries:
    """One labeled series. ``label`` is the dense id, ``label_name`` the
    original class token from the source file."""

    values: np.ndarray
    label: int
    label_name: str


@dataclass
class Dataset:
    """One provenance split (original train or original test) of a dataset."""

    name: str
    values: np.ndarray  # [n, T]
    labels: np.ndarray  # [n] dense ids
    split: str  # "train" | "test"
    label_names: tuple[str, ...]  # dense id -> original label token

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.values.ndim != 2:
            raise ConfigError("dataset values must be [n, T]")
        if self.values.shape[0] != self.labels.shape[0]:
            raise ConfigError("values and labels disagree on sample count")
        t = self.values.shape[1]
        if not (MIN_LENGTH <= t <= MAX_LENGTH):
            raise ConfigError(
                f"dataset {self.name!r}: series length {t} outside [{MIN_LENGTH}, {MAX_LENGTH}]"
            )
        if self.split not in ("train", "test"):
            raise ConfigError(f"split must be 'train' or 'test', got {self.split!r}")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def series(self, i: int) -> TimeSeries:
        label = int(self.labels[i])
        return TimeSeries(self.values[i], label, self.label_names[label])

    def class_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


@dataclass
class DatasetBundle:
    """Both provenance splits of one dataset under a shared label mapping."""

    name: str
    train: Dataset
    test: Dataset

    def __post_init__(self):
        if self.train.label_names != self.test.label_names:
            raise ConfigError(f"dataset {self.name!r}: splits use different label maps")
        if self.train.length != self.test.length:
            raise ConfigError(f"dataset {self.name!r}: splits have different series lengths")
        if self.n_classes < 2:
            raise ConfigError(f"dataset {self.name!r}: needs at least 2 classes")

    @property
    def n_classes(self) -> int:
        return len(self.train.label_names)

    @property
    def length(self) -> int:
        return self.train.length

    def pool(self, split: str) -> Dataset:
        if split == "train":
            return self.train
        if split == "test":
            return self.test
        raise ConfigError(f"unknown split {split!r}")


def znormalize(x: np.ndarray) -> np.ndarray:
    """(x - mean) / population std; constant series (std below 1e-12) map to
    all zeros rather than exploding."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean()
    std = np.sqrt(((x - mean) ** 2).mean())
    if std < STD_FLOOR:
        return np.zeros_like(x)
    return (x - mean) / std


def _detect_delimiter(line: str) -> str | None:
    if "\t" in line:
        return "\t"
    if "," in line:
        return ","
    return None  # any whitespace


def _label_sort_key(labels: set[str]):
    try:
        as_num = {s: float(s) for s in labels}
    except ValueError:
        return sorted(labels)
    return sorted(labels, key=lambda s: as_num[s])


def parse_ucr_file(path, split: str | None = None, name: str | None = None) -> Dataset:
    """Parse one UCR-format file into a Dataset of raw (unnormalized) rows.

    Errors carry the 1-based line number: ragged rows, non-numeric fields and
    missing values (NaN/inf) are reported distinctly. The label is the first
    field of each row; labels are remapped to dense ids 0..N-1 with the
    original tokens retained.
    """
    path = Path(path)
    stem = path.name
    for suffix in (".tsv", ".txt", ".csv"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
    upper = stem.upper()
    if split is None:
        split = "test" if upper.endswith("_TEST") else "train"
    if name is None:
        name = stem
        for tag in ("_TRAIN", "_TEST"):
            if upper.endswith(tag):
                name = stem[: -len(tag)]
                break

    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read file ({exc})", path=str(path)) from exc

    rows: list[list[float]] = []
    raw_labels: list[str] = []
    delim: str | None = None
    width: int | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if delim is None and not rows:
            delim = _detect_delimiter(line)
        fields = [f for f in (line.split(delim) if delim else line.split()) if f != ""]
        if len(fields) < 2:
            raise ParseError("row has a label but no observations", str(path), lineno)
        label, obs = fields[0].strip(), fields[1:]
        if width is None:
            width = len(obs)
        elif len(obs) != width:
            raise ParseError(
                f"ragged row: {len(obs)} observations, expected {width}", str(path), lineno
            )
        try:
            values = [float(v) for v in obs]
        except ValueError:
            bad = next(v for v in obs if not _is_float(v))
            raise ParseError(f"non-numeric field {bad!r}", str(path), lineno) from None
        if not all(np.isfinite(values)):
            raise ParseError("missing or non-finite value (NaN/inf)", str(path), lineno)
        raw_labels.append(label)
        rows.append(values)

    if not rows:
        raise ParseError("file contains no data rows", path=str(path))
    if not (MIN_LENGTH <= width <= MAX_LENGTH):
        raise ParseError(
            f"series length {width} outside supported range [{MIN_LENGTH}, {MAX_LENGTH}]",
            path=str(path),
        )
    names = tuple(_label_sort_key(set(raw_labels)))
    if len(names) < 2:
        raise ParseError("file contains a single class", path=str(path))
    dense = {s: i for i, s in enumerate(names)}
    labels = np.array([dense[s] for s in raw_labels], dtype=np.int64)
    return Dataset(name, np.array(rows), labels, split, names)


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _find_split_file(root: Path, name: str, tag: str) -> Path:
    candidates = []
    for directory in (root / name, root):
        for ext in (".tsv", ".txt", ".csv", ""):
            candidates.append(directory / f"{name}_{tag}{ext}")
    for c in candidates:
        if c.is_file():
            return c
    raise ParseError(
        f"no {tag} file for dataset {name!r} under {root} "
        f"(tried {', '.join(str(c) for c in candidates)})"
    )


def load_dataset(root, name: str, normalize: bool = True) -> DatasetBundle:
    """Load both splits of a dataset from a UCR archive directory, rebuild a
    shared label map over their union and (by default) z-normalize rows."""
    root = Path(root)
    train = parse_ucr_file(_find_split_file(root, name, "TRAIN"), split="train", name=name)
    test = parse_ucr_file(_find_split_file(root, name, "TEST"), split="test", name=name)
    union = set(train.label_names) | set(test.label_names)
    names = tuple(_label_sort_key(union))
    dense = {s: i for i, s in enumerate(names)}

    def remap(ds: Dataset) -> Dataset:
        labels = np.array([dense[ds.label_names[l]] for l in ds.labels], dtype=np.int64)
        values = ds.values
        if normalize:
            values = np.vstack([znormalize(row) for row in values])
        return Dataset(name, values, labels, ds.split, names)

    return DatasetBundle(name, remap(train), remap(test))


# ---------------------------------------------------------------------------
# Few-shot tasks
# ---------------------------------------------------------------------------


@dataclass
class LabeledSet:
    """A list of series plus dense task-level labels 0..N-1."""

    values: list[np.ndarray]
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.values) != self.labels.shape[0]:
            raise ConfigError("values and labels disagree on sample count")

    @property
    def n(self) -> int:
        return len(self.values)

    def class_counts(self) -> np.ndarray:
        if self.n == 0:
            return np.zeros(0, dtype=np.int64)
        return np.bincount(self.labels)


@dataclass
class FewShotTask:
    """K-shot N-way episode. ``class_ids`` maps task labels back to the
    dataset's dense class ids; ``train_refs``/``test_refs`` are (split, row)
    pointers into the source pools, sufficient for exact replay."""

    dataset: str
    k: int
    k_prime: int
    class_ids: tuple[int, ...]
    train: LabeledSet
    test: LabeledSet
    train_refs: list[tuple[str, int]]
    test_refs: list[tuple[str, int]]
    source_policy: str = "split"
    seed: int | None = None

    @property
    def n_way(self) -> int:
        return len(self.class_ids)


def task_seed(run_seed: int, dataset: str, index: int) -> int:
    """Stable per-task seed: every method sees the same tasks for a given
    run seed, regardless of evaluation order or platform."""
    digest = hashlib.sha256(f"{run_seed}:{dataset}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _draw_for_class(pool: Dataset, label: int, count: int, rng: np.random.Generator,
                    exclude: set[int] | None = None) -> list[int]:
    idx = pool.class_indices(label)
    if exclude:
        idx = np.array([i for i in idx if i not in exclude], dtype=np.int64)
    if idx.size == 0:
        return []
    if idx.size <= count:
        return [int(i) for i in idx]  # small-class rule: take everything
    chosen = rng.choice(idx, size=count, replace=False)
    return sorted(int(i) for i in chosen)


def sample_task(
    bundle: DatasetBundle,
    k: int,
    k_prime: int,
    rng: np.random.Generator,
    source_policy: str = "split",
    classes=None,
    seed: int | None = None,
) -> FewShotTask:
    """Draw one episode. ``source_policy`` "split" takes D^tr from the
    original-train pool and D^te from the original-test pool; "train-only"
    carves both, disjointly, out of the train pool."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k_prime < 0:
        raise ConfigError(f"k_prime must be >= 0, got {k_prime}")
    if source_policy not in ("split", "train-only"):
        raise ConfigError(f"unknown source policy {source_policy!r}")
    if classes is None:
        classes = range(bundle.n_classes)
    class_ids = tuple(sorted(int(c) for c in classes))
    if len(class_ids) < 2:
        raise ConfigError("a task needs at least 2 classes")
    if any(not (0 <= c < bundle.n_classes) for c in class_ids):
        raise ConfigError(f"class ids out of range for dataset {bundle.name!r}")

    train_rows: list[tuple[str, int]] = []
    test_rows: list[tuple[str, int]] = []
    train_labels: list[int] = []
    test_labels: list[int] = []
    for task_label, c in enumerate(class_ids):
        name = bundle.train.label_names[c]
        if source_policy == "split":
            tr = _draw_for_class(bundle.train, c, k, rng)
            if not tr:
                raise SamplingError(
                    f"dataset {bundle.name!r}: class {name!r} has no original-train samples"
                )
            te = _draw_for_class(bundle.test, c, k_prime, rng) if k_prime else []
            if k_prime and not te:
                raise SamplingError(
                    f"dataset {bundle.name!r}: class {name!r} has no original-test samples"
                )
            train_rows += [("train", i) for i in tr]
            test_rows += [("test", i) for i in te]
        else:
            tr = _draw_for_class(bundle.train, c, k, rng)
            if not tr:
                raise SamplingError(
                    f"dataset {bundle.name!r}: class {name!r} has no original-train samples"
                )
            te = _draw_for_class(bundle.train, c, k_prime, rng, exclude=set(tr)) if k_prime else []
            if k_prime and not te:
                raise SamplingError(
                    f"dataset {bundle.name!r}: class {name!r} has no train samples left "
                    "for the test half"
                )
            train_rows += [("train", i) for i in tr]
            test_rows += [("train", i) for i in te]
        train_labels += [task_label] * len(tr)
        test_labels += [task_label] * len(te)

    def gather(rows):
        return [bundle.pool(split).values[i] for split, i in rows]

    return FewShotTask(
        dataset=bundle.name,
        k=k,
        k_prime=k_prime,
        class_ids=class_ids,
        train=LabeledSet(gather(train_rows), np.array(train_labels)),
        test=LabeledSet(gather(test_rows), np.array(test_labels)),
        train_refs=train_rows,
        test_refs=test_rows,
        source_policy=source_policy,
        seed=seed,
    )


def sample_task_seeded(bundle: DatasetBundle, k: int, k_prime: int, seed: int,
                       source_policy: str = "split", classes=None) -> FewShotTask:
    rng = np.random.default_rng(seed)
    return sample_task(bundle, k, k_prime, rng, source_policy, classes, seed=seed)


# ---------------------------------------------------------------------------
# Meta-set split manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetaSetSplit:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


def split_meta_sets(manifest_path) -> MetaSetSplit:
    """Read a split manifest: JSON with "train", "validation" and "test"
    dataset-name lists. The three sets must be disjoint; an empty validation
    list is allowed but warned about."""
    path = Path(manifest_path)
    if not path.is_file():
        raise ConfigError(f"split manifest not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    missing = [k for k in ("train", "validation", "test") if k not in raw]
    if missing:
        raise ConfigError(f"{path}: manifest lacks sections {missing}")
    sets = {}
    for key in ("train", "validation", "test"):
        names = raw[key]
        if not isinstance(names, list) or any(not isinstance(n, str) for n in names):
            raise ConfigError(f"{path}: section {key!r} must be a list of dataset names")
        if len(set(names)) != len(names):
            raise ConfigError(f"{path}: section {key!r} lists a dataset twice")
        sets[key] = tuple(names)
    for a, b in (("train", "validation"), ("train", "test"), ("validation", "test")):
        overlap = set(sets[a]) & set(sets[b])
        if overlap:
            raise ConfigError(
                f"{path}: datasets {sorted(overlap)} appear in both {a!r} and {b!r}"
            )
    if not sets["test"]:
        raise ConfigError(f"{path}: test meta-set is empty")
    if not sets["validation"]:
        log.warning("%s: validation meta-set is empty; model selection will be skipped", path)
    return MetaSetSplit(sets["train"], sets["validation"], sets["test"])


# ---------------------------------------------------------------------------
# Within-dataset class splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassPartition:
    train: tuple[int, ...]
    validation: tuple[int, ...]
    test: tuple[int, ...]

    def section(self, name: str) -> tuple[int, ...]:
        if name not in ("train", "validation", "test"):
            raise ConfigError(f"unknown partition section {name!r}")
        return getattr(self, name)


def split_classes(
    n_classes: int,
    rng: np.random.Generator,
    fractions: tuple[float, float, float] = (0.5, 0.25, 0.25),
) -> ClassPartition:
    """Shuffle class ids and cut them into train/validation/test sections
    (default one half and two quarters; remainders go to test)."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {fractions}")
    if n_classes < 3:
        raise ConfigError("class split needs at least 3 classes")
    order = rng.permutation(n_classes)
    n_tr = int(np.floor(n_classes * fractions[0]))
    n_va = int(np.floor(n_classes * fractions[1]))
    if n_tr < 2 or n_va < 1 or (n_classes - n_tr - n_va) < 1:
        raise ConfigError(f"fractions {fractions} leave an empty section for {n_classes} classes")
    return ClassPartition(
        tuple(sorted(int(c) for c in order[:n_tr])),
        tuple(sorted(int(c) for c in order[n_tr : n_tr + n_va])),
        tuple(sorted(int(c) for c in order[n_tr + n_va :])),
    )


class ClassSplitSampler:
    """Task streams over a fixed class partition of one dataset.

    All three streams share the same partition, drawn once from the seed, so
    train/validation/test tasks can never leak classes into each other.
    """

    def __init__(
        self,
        bundle: DatasetBundle,
        rng: np.random.Generator,
        fractions: tuple[float, float, float] = (0.5, 0.25, 0.25),
    ):
        self.bundle = bundle
        self.partition = split_classes(bundle.n_classes, rng, fractions)

    def tasks(self, section: str, k: int, k_prime: int, n_way: int,
              rng: np.random.Generator, source_policy: str = "split"):
        """Infinite stream of n_way-way tasks over one partition section."""
        pool = self.partition.section(section)
        if n_way > len(pool):
            raise ConfigError(
                f"section {section!r} has {len(pool)} classes, cannot draw {n_way}-way tasks"
            )
        while True:
            chosen = rng.choice(len(pool), size=n_way, replace=False)
            classes = [pool[i] for i in chosen]
            yield sample_task(self.bundle, k, k_prime, rng, source_policy, classes)


def class_split_sampler(bundle: DatasetBundle, rng: np.random.Generator,
                        fractions=(0.5, 0.25, 0.25)) -> ClassSplitSampler:
    return ClassSplitSampler(bundle, rng, fractions)


# ---------------------------------------------------------------------------
# Task logs: one JSON record per task, enough to replay it exactly.
# ---------------------------------------------------------------------------


def task_record(task: FewShotTask) -> dict:
    return {
        "dataset": task.dataset,
        "seed": task.seed,
        "k": task.k,
        "k_prime": task.k_prime,
        "policy": task.source_policy,
        "classes": list(task.class_ids),
        "train": [[split, i] for split, i in task.train_refs],
        "test": [[split, i] for split, i in task.test_refs],
    }


def format_task_log(tasks) -> str:
    return "".join(json.dumps(task_record(t), sort_keys=True) + "\n" for t in tasks)


def write_task_log(tasks, path) -> None:
    Path(path).write_text(format_task_log(tasks))


def read_task_log(path) -> list[dict]:
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad task record ({exc})", str(path), lineno) from exc
    return records


def replay_task(bundle: DatasetBundle, record: dict) -> FewShotTask:
    """Rebuild a task from its log record by direct indexing."""
    if record["dataset"] != bundle.name:
        raise ConfigError(
            f"record is for dataset {record['dataset']!r}, bundle is {bundle.name!r}"
        )
    class_ids = tuple(int(c) for c in record["classes"])
    by_class = {c: i for i, c in enumerate(class_ids)}
    train_refs = [(split, int(i)) for split, i in record["train"]]
    test_refs = [(split, int(i)) for split, i in record["test"]]

    def gather(refs):
        values, labels = [], []
        for split, i in refs:
            pool = bundle.pool(split)
            values.append(pool.values[i])
            labels.append(by_class[int(pool.labels[i])])
        return LabeledSet(values, np.array(labels, dtype=np.int64))

    return FewShotTask(
        dataset=bundle.name,
        k=int(record["k"]),
        k_prime=int(record["k_prime"]),
        class_ids=class_ids,
        train=gather(train_refs),
        test=gather(test_refs),
        train_refs=train_refs,
        test_refs=test_refs,
        source_policy=record["policy"],
        seed=record["seed"],
    )
