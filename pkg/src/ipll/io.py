"""Text formats: task streams, checkpoints and per-run CSV dumps.

Stream file::

    # C=10 d=16 T=5 q=0.3 W=90 seed=7 flip_mode=uniform separation=10.0 stddev=0.5
    id<TAB>task<TAB>true_label<TAB>c1;c2;...<TAB>f1,f2,...,fd

Training records carry their placement task and candidate set. Test
records carry the home task of their class and ``-`` in place of the
candidates. Floats are written with 17 significant digits so a read-back is
bit-exact.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from ipll.datagen import Sample, TaskStream, class_counts_per_task
from ipll.errors import IPLLError
from ipll.mathcore import FLOAT
from ipll.model import PARAM_NAMES, Model
from ipll.prototypes import PrototypeBank

HEADER_KEYS = ("C", "d", "T", "q", "W", "seed", "flip_mode", "separation", "stddev")
NO_CANDIDATES = "-"


def _fmt(x: float) -> str:
    return "%.17g" % x


def _fmt_vec(v) -> str:
    return ",".join(_fmt(float(x)) for x in v)


def write_stream(path: str | Path, stream: TaskStream) -> None:
    header = {
        "C": stream.num_classes,
        "d": stream.feature_dim,
        "T": stream.num_tasks,
        "q": repr(float(stream.q)),
        "W": stream.w,
        "seed": stream.seed,
        "flip_mode": stream.flip_mode,
        "separation": repr(float(stream.meta.get("separation", float("nan")))),
        "stddev": repr(float(stream.meta.get("stddev", 1.0))),
    }
    lines = ["# " + " ".join(f"{k}={header[k]}" for k in HEADER_KEYS)]
    for t, samples in enumerate(stream.tasks):
        for s in samples:
            cands = ";".join(str(c) for c in sorted(s.candidates))
            lines.append(f"{s.id}\t{t}\t{s.true_label}\t{cands}\t{_fmt_vec(s.features)}")
    for i, x, y in zip(stream.test_ids, stream.test_x, stream.test_y):
        lines.append(f"{i}\t{stream.home_task(int(y))}\t{y}\t{NO_CANDIDATES}\t{_fmt_vec(x)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_stream(path: str | Path) -> TaskStream:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise IPLLError(f"{path}: missing header line")
    header = dict(item.split("=", 1) for item in text[0][1:].split())
    missing = [k for k in ("C", "d", "T", "q", "W", "seed") if k not in header]
    if missing:
        raise IPLLError(f"{path}: header lacks {missing}")
    C, d, T = int(header["C"]), int(header["d"]), int(header["T"])
    tasks: list[list[Sample]] = [[] for _ in range(T)]
    test_ids, test_x, test_y = [], [], []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise IPLLError(f"{path}:{lineno}: expected 5 tab-separated fields")
        sid, task, label, cands, feats = parts
        x = np.array([float(v) for v in feats.split(",")], dtype=FLOAT)
        if x.shape[0] != d:
            raise IPLLError(f"{path}:{lineno}: expected {d} features, got {x.shape[0]}")
        if cands == NO_CANDIDATES:
            test_ids.append(int(sid))
            test_x.append(x)
            test_y.append(int(label))
        else:
            cset = frozenset(int(c) for c in cands.split(";"))
            tasks[int(task)].append(Sample(int(sid), x, int(label), cset, int(task)))
    return TaskStream(
        tasks=tasks,
        new_counts=class_counts_per_task(C, T),
        test_x=np.array(test_x, dtype=FLOAT).reshape(len(test_x), d),
        test_y=np.array(test_y, dtype=int),
        test_ids=np.array(test_ids, dtype=int),
        num_classes=C,
        feature_dim=d,
        q=float(header["q"]),
        w=int(header["W"]),
        seed=int(header["seed"]),
        flip_mode=header.get("flip_mode", "uniform"),
        meta={
            "separation": float(header.get("separation", "nan")),
            "stddev": float(header.get("stddev", "1.0")),
        },
    )


def write_checkpoint(path: str | Path, model: Model, bank: PrototypeBank | None = None) -> None:
    """Every parameter, momentum buffer and prototype as ``name shape`` + values lines."""
    lines = [f"model activation={model.activation}"]

    def add(name, arr):
        arr = np.asarray(arr, dtype=FLOAT)
        lines.append(f"array {name} {' '.join(str(n) for n in arr.shape)}".rstrip())
        lines.append(_fmt_vec(arr.ravel()))

    for name in PARAM_NAMES:
        add(name, model.params[name])
    for name in PARAM_NAMES:
        add(f"velocity.{name}", model.velocity[name])
    if bank is not None:
        lines.append(f"bank dim={bank.dim} gamma={bank.gamma!r}")
        for c in bank.classes:
            add(f"prototype.{c}", bank.means[c])
    Path(path).write_text("\n".join(lines) + "\n")


def read_checkpoint(path: str | Path) -> tuple[Model, PrototypeBank | None]:
    lines = Path(path).read_text().splitlines()
    activation = lines[0].split("=", 1)[1]
    arrays: dict[str, np.ndarray] = {}
    bank = None
    i = 1
    while i < len(lines):
        head = lines[i].split()
        if head[0] == "bank":
            opts = dict(kv.split("=", 1) for kv in head[1:])
            bank = PrototypeBank(int(opts["dim"]), float(opts["gamma"]))
            i += 1
            continue
        name, shape = head[1], tuple(int(n) for n in head[2:])
        body = lines[i + 1]
        values = np.array([float(v) for v in body.split(",")] if body else [], dtype=FLOAT)
        arrays[name] = values.reshape(shape)
        i += 2
    W1, W2 = arrays["W1"], arrays["W2"]
    model = Model(W1.shape[1], W1.shape[0], W2.shape[0], activation)
    for name in PARAM_NAMES:
        model.params[name] = arrays[name]
        model.velocity[name] = arrays[f"velocity.{name}"]
    if bank is not None:
        for name, arr in arrays.items():
            if name.startswith("prototype."):
                bank.means[int(name.split(".", 1)[1])] = arr
    return model, bank


METRIC_COLUMNS = ("task", "acc_all", "acc_new", "acc_old", "sep_acc", "loss_ce", "loss_kd", "loss_cr")


def _cell(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def write_metrics(path: str | Path, report) -> None:
    rows = [[getattr(m, c) for c in METRIC_COLUMNS] for m in report.tasks]
    _write_rows(Path(path), METRIC_COLUMNS, rows)


def read_metrics(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_memory(path: str | Path, report) -> None:
    rows = []
    for t, entries in enumerate(report.memory):
        for e in entries:
            rows.append([t, e.predicted, e.sample.id, e.kind, e.proto_distance, e.knn_score])
    _write_rows(Path(path), ("task", "class", "sample_id", "kind", "proto_distance", "knn_score"), rows)


def write_separation(path: str | Path, report) -> None:
    rows = []
    for t, records in enumerate(report.separation):
        for r in records:
            rows.append([t, r.id, r.e, r.w, "old" if r.old else "new", int(r.truly_old), r.n_candidates, r.n_reduced])
    header = ("task", "id", "e", "w", "membership", "truly_old", "n_candidates", "n_reduced")
    _write_rows(Path(path), header, rows)


def write_losses(path: str | Path, report) -> None:
    rows = []
    for t, curve in enumerate(report.loss_curves):
        for epoch, lv in enumerate(curve):
            rows.append([t, epoch, lv.ce, lv.kd, lv.cr])
    _write_rows(Path(path), ("task", "epoch", "loss_ce", "loss_kd", "loss_cr"), rows)
