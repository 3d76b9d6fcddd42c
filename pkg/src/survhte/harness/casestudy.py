"""Two-stage analysis of a user-supplied CSV without ground truth.

Stage one estimates every subject's ISTE (posterior draws for Bayesian
learners, subsample replicates otherwise). Stage two regresses the ISTE on
covariates draw by draw, fits the stepwise regression tree to the point
estimates and summarizes its leaves, and bins subjects into ISTE-percentile
subgroups for covariate scatter panels.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..iste import IsteResult, estimate_iste, iste_subsample
from ..learners import LearnerSpec
from ..propensity import fit_stacked, overlap_histogram, predict_ps, write_overlap_csv
from ..subgroup import CartTree, RegressionSummary, fit_the_fit, node_effects, second_stage_linear
from ..survcore import Dataset
from .plots import histogram_svg, scatter_svg

N_SUBGROUPS = 300


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnMapping:
    covariates: tuple
    treatment: str
    time: str
    event: str

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if not self.covariates:
            raise ValueError("at least one covariate column is required")


@dataclass
class CaseStudyOptions:
    seed: int = 0
    summary: str = "mean"
    level: float = 0.95
    subsample_reps: int = 1000
    subsample_fraction: float = 0.2
    interval: str = "percentile"
    min_improve: float = 0.01
    improve_mode: str = "relative"
    n_subgroups: int = N_SUBGROUPS


@dataclass
class CaseStudyResult:
    data: Dataset
    iste: IsteResult
    regression: RegressionSummary
    tree: CartTree
    effects: list
    subgroups: list
    ps_hat: np.ndarray
    files: dict = field(default_factory=dict)


def read_dataset(path, mapping: ColumnMapping) -> Dataset:
    """Load and validate a CSV; errors name the column and the offending row."""
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        roles = [("covariate", c) for c in mapping.covariates] + [
            ("treatment", mapping.treatment), ("time", mapping.time), ("event", mapping.event)]
        for role, col in roles:
            if col not in header:
                raise DataError(f"{path}: {role} column '{col}' not found "
                                f"(available: {', '.join(header)})")
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")

    def number(row_no, col, raw):
        try:
            v = float(raw)
        except (TypeError, ValueError):
            raise DataError(f"{path}: row {row_no}, column '{col}': cannot parse {raw!r} "
                            "as a number") from None
        if not math.isfinite(v):
            raise DataError(f"{path}: row {row_no}, column '{col}': non-finite value {raw!r}")
        return v

    n, p = len(rows), len(mapping.covariates)
    X = np.empty((n, p))
    z = np.empty(n, dtype=np.int64)
    y = np.empty(n)
    delta = np.empty(n, dtype=np.int64)
    for i, row in enumerate(rows):
        row_no = i + 2                     # header is line 1
        for j, col in enumerate(mapping.covariates):
            X[i, j] = number(row_no, col, row[col])
        for col, target, label in ((mapping.treatment, z, "treatment"),
                                   (mapping.event, delta, "event")):
            v = number(row_no, col, row[col])
            if v not in (0.0, 1.0):
                raise DataError(f"{path}: row {row_no}, {label} column '{col}' must be 0 or 1, "
                                f"got {row[col]!r}")
            target[i] = int(v)
        t = number(row_no, mapping.time, row[mapping.time])
        if t <= 0:
            raise DataError(f"{path}: row {row_no}, time column '{mapping.time}' must be "
                            f"positive, got {row[mapping.time]!r}")
        y[i] = t
    return Dataset(X, z, y, delta, mapping.covariates)


def percentile_subgroups(iste_point, X, names, groups: int = N_SUBGROUPS) -> list:
    """Rows ``(covariate, group, mean_iste, mean_covariate)``, ``groups`` per
    covariate, grouping subjects by rank of their ISTE."""
    iste_point = np.asarray(iste_point, dtype=float)
    n = len(iste_point)
    if n < groups:
        raise DataError(f"need at least {groups} subjects for {groups} subgroups, got {n}")
    order = np.argsort(iste_point, kind="stable")
    parts = np.array_split(order, groups)
    rows = []
    for j, name in enumerate(names):
        for g, idx in enumerate(parts):
            rows.append((name, g + 1, float(iste_point[idx].mean()), float(X[idx, j].mean())))
    return rows


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def run_case_study(csv_path, mapping: ColumnMapping, spec: LearnerSpec, out_dir,
                   options: CaseStudyOptions | None = None) -> CaseStudyResult:
    """Full analysis pipeline; every output lands in ``out_dir``."""
    opts = options or CaseStudyOptions()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = read_dataset(csv_path, mapping)
    names = list(data.covariate_names)

    if spec.method.bayesian:
        result = estimate_iste(data, spec, summary=opts.summary, level=opts.level)
    else:
        result = iste_subsample(data, spec, reps=opts.subsample_reps,
                                fraction=opts.subsample_fraction, seed=opts.seed,
                                interval=opts.interval, level=opts.level)
    regression = second_stage_linear(result.draws, data.X, names, level=opts.level)
    tree = fit_the_fit(result.point, data.X, names, min_improve=opts.min_improve,
                       mode=opts.improve_mode)
    effects = node_effects(tree, result.draws, opts.level)
    subgroups = percentile_subgroups(result.point, data.X, names, opts.n_subgroups)

    ps_model = fit_stacked(data.X, data.z, seed=opts.seed)
    ps_hat = predict_ps(ps_model, data.X)

    files = {}

    def path(name):
        files[name] = out / name
        return out / name

    result.to_csv(path("iste.csv"))
    regression.to_csv(path("regression.csv"))
    path("tree.txt").write_text(tree.to_text(effects) + "\n", encoding="utf-8")
    tree.to_json(path("tree.json"), effects)
    _write_rows(path("subgroups.csv"), ["covariate", "group", "mean_iste", "mean_covariate"],
                subgroups)
    write_overlap_csv(path("overlap.csv"), overlap_histogram(ps_hat, data.z))
    path("overlap.svg").write_text(
        histogram_svg({"treated": ps_hat[data.z == 1], "control": ps_hat[data.z == 0]},
                      "Estimated propensity by arm", xlabel="estimated e(x)"),
        encoding="utf-8")
    for j, name in enumerate(names):
        pts = [r for r in subgroups if r[0] == name]
        path(f"subgroups_{name}.svg").write_text(
            scatter_svg([r[3] for r in pts], [r[2] for r in pts],
                        f"ISTE percentile subgroups vs {name}", xlabel=name,
                        ylabel="mean ISTE"), encoding="utf-8")
    meta = {
        "data": str(csv_path), "n": data.n, "mapping": {
            "covariates": list(mapping.covariates), "treatment": mapping.treatment,
            "time": mapping.time, "event": mapping.event},
        "method": spec.method.value, "params": {k: (list(v) if isinstance(v, tuple) else v)
                                                for k, v in spec.params.items()},
        "seed": spec.seed, "options": vars(opts),
        "intervals": result.interval, "capped_rate": result.capped_rate,
        "propensity": "estimated by the stacked ensemble (no true propensity for real data)",
        "propensity_weights": dict(zip(ps_model.names, ps_model.weights.tolist())),
        "tree_r2": tree.r2,
    }
    path("manifest.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    if result.capped_rate > 0.5:
        warnings.warn("more than half of the subjects have a capped median; extend follow-up "
                      "or interpret ISTEs as truncated", RuntimeWarning, stacklevel=2)
    return CaseStudyResult(data, result, regression, tree, effects, subgroups, ps_hat, files)
