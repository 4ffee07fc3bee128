"""File formats: CSV tables, JSON scenario files, and run manifests.

Everything here is written for bit-exact reproducibility: floats are
serialized with repr() (shortest round-trip form, exact on re-read),
rows are emitted in a defined sort order, newlines are always "\n", and
manifests record content digests of every input so a run can be checked
and replayed.
"""

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from . import __version__
from .engine import RunResult, SummaryRow
from .estimation import EstimationResult, VisitHistory
from .scenarios import (
    GroupSpec,
    SampledCohort,
    ScenarioSpec,
    builtin_scenarios,
    default_sds,
)

HISTORY_COLUMNS = ("patient_id", "period", "visited", "enrolled", "fbg_mgdl")
COHORT_COLUMNS = ("patient_id", "group", "p", "mu", "alpha", "theta_base",
                  "lam", "s_base", "beta", "gamma", "rho", "initial_log_fbg")
FEATURE_COLUMNS = ("p", "mu", "alpha", "theta_base", "lam", "s_base", "beta")
RESULTS_COLUMNS = ("policy", "capacity_pct", "replication", "period",
                   "in_control", "enrolled", "visits", "screening_visits")
SUMMARY_COLUMNS = ("policy", "capacity_pct", "ppc_mean", "ppc_ci_halfwidth",
                   "final_fbg_p25", "final_fbg_p50", "final_fbg_p75",
                   "final_fbg_p90")
ESTIMATE_COLUMNS = ("patient_id", "nll", "p", "mu", "alpha", "theta_base",
                    "lam", "s_base", "beta", "gamma", "rho")

MANIFEST_NAME = "manifest.json"


def _fmt(value) -> str:
    """Lossless scalar-to-text: repr for floats, str otherwise."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_table(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _read_csv(path: str, expected_header: Sequence[str]) -> List[List[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file (missing header row)")
        if [h.strip() for h in header] != list(expected_header):
            raise ValueError(
                f"{path}: expected header {','.join(expected_header)},"
                f" got {','.join(header)}"
            )
        return [row for row in reader if row]


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# visit-history ingestion
# ---------------------------------------------------------------------------

def ingest_histories(path: str) -> List[VisitHistory]:
    """Parse a per-period visit log into one history per patient.

    Columns: patient_id, period, visited, enrolled, fbg_mgdl (blank when
    no reading was taken). Periods may be sparse; gaps become unobserved
    periods with no visit and enrollment carried forward. FBG is recorded
    in mg/dL and log-transformed here, so readings below 1 mg/dL are
    rejected rather than mapped to negative log values.
    """
    rows = _read_csv(path, HISTORY_COLUMNS)
    per_patient: Dict[str, Dict[int, Tuple[int, int, Optional[float]]]] = {}
    order: List[str] = []
    for i, row in enumerate(rows):
        rownum = i + 2  # 1-based, after the header
        if len(row) != 5:
            raise ValueError(f"{path} row {rownum}: expected 5 fields, got {len(row)}")
        pid, period_s, visited_s, enrolled_s, fbg_s = (f.strip() for f in row)
        if not pid:
            raise ValueError(f"{path} row {rownum}: empty patient_id")
        try:
            period = int(period_s)
        except ValueError:
            raise ValueError(f"{path} row {rownum}: bad period {period_s!r}")
        if period < 0:
            raise ValueError(f"{path} row {rownum}: negative period {period}")
        if visited_s not in ("0", "1") or enrolled_s not in ("0", "1"):
            raise ValueError(
                f"{path} row {rownum}: visited/enrolled must be 0 or 1"
            )
        fbg: Optional[float] = None
        if fbg_s:
            try:
                fbg = float(fbg_s)
            except ValueError:
                raise ValueError(f"{path} row {rownum}: bad fbg_mgdl {fbg_s!r}")
            if not math.isfinite(fbg) or fbg < 0:
                raise ValueError(f"{path} row {rownum}: negative FBG {fbg_s}")
            if fbg < 1.0:
                raise ValueError(
                    f"{path} row {rownum}: FBG {fbg_s} mg/dL below 1"
                    " (log transform would go negative)"
                )
        if pid not in per_patient:
            per_patient[pid] = {}
            order.append(pid)
        if period in per_patient[pid]:
            raise ValueError(
                f"{path} row {rownum}: duplicate period {period}"
                f" for patient {pid!r}"
            )
        per_patient[pid][period] = (int(visited_s), int(enrolled_s), fbg)

    histories: List[VisitHistory] = []
    for pid in order:
        periods = per_patient[pid]
        horizon = max(periods) + 1
        visited, enrolled, observations = [], [], {}
        z_carry = 0
        for t in range(horizon):
            if t in periods:
                y, z, fbg = periods[t]
                visited.append(y)
                enrolled.append(z)
                z_carry = z
                if fbg is not None:
                    observations[t] = math.log(fbg)
            else:
                visited.append(0)
                enrolled.append(z_carry)
        try:
            histories.append(VisitHistory(
                visited=tuple(visited), enrolled=tuple(enrolled),
                observations=observations, patient_id=pid,
            ))
        except ValueError as exc:
            raise ValueError(f"{path}: patient {pid!r}: {exc}")
    return histories


# ---------------------------------------------------------------------------
# cohort parameter tables
# ---------------------------------------------------------------------------

def write_cohort_csv(path: str, sampled: SampledCohort) -> None:
    rows = []
    for i, (pp, st, name) in enumerate(zip(sampled.cohort.params,
                                           sampled.cohort.initial_states,
                                           sampled.group_names)):
        rows.append((f"p{i:04d}", name, pp.p, pp.mu, pp.alpha, pp.theta_base,
                     pp.lam, pp.s_base, pp.beta, pp.gamma, pp.rho, st.b))
    write_table(path, COHORT_COLUMNS, rows)


def read_feature_table(path: str) -> Tuple[List[str], List[Tuple[float, ...]]]:
    """Read the 7 clustering features from any CSV that has them.

    Accepts both cohort tables and estimate tables; extra columns are
    ignored, and patient ids are taken from a patient_id column when
    present (row numbers otherwise).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file (missing header row)")
        missing = [c for c in FEATURE_COLUMNS if c not in header]
        if missing:
            raise ValueError(f"{path}: missing columns {', '.join(missing)}")
        idx = {c: header.index(c) for c in FEATURE_COLUMNS}
        id_idx = header.index("patient_id") if "patient_id" in header else None
        ids, rows = [], []
        for i, row in enumerate(reader):
            if not row:
                continue
            rownum = i + 2
            try:
                rows.append(tuple(float(row[idx[c]]) for c in FEATURE_COLUMNS))
            except (ValueError, IndexError):
                raise ValueError(f"{path} row {rownum}: malformed feature row")
            ids.append(row[id_idx] if id_idx is not None else f"row{rownum}")
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return ids, rows


# ---------------------------------------------------------------------------
# results and summary tables
# ---------------------------------------------------------------------------

def _capacity_pct(fraction: float) -> float:
    return round(fraction * 100.0, 10)


def write_results_csv(path: str, results: Sequence[RunResult]) -> None:
    """One row per (policy, capacity, replication, period), sorted."""
    rows = []
    for r in results:
        pct = _capacity_pct(r.capacity_fraction)
        for t in range(len(r.in_control)):
            rows.append((r.policy_kind, pct, r.replication, t + 1,
                         r.in_control[t], r.enrolled[t], r.visits_total[t],
                         r.screening_visits[t]))
    rows.sort(key=lambda row: (row[0], row[1], row[2], row[3]))
    write_table(path, RESULTS_COLUMNS, rows)


def read_results_csv(path: str) -> List[dict]:
    rows = _read_csv(path, RESULTS_COLUMNS)
    out = []
    for row in rows:
        out.append({
            "policy": row[0], "capacity_pct": float(row[1]),
            "replication": int(row[2]), "period": int(row[3]),
            "in_control": int(row[4]), "enrolled": int(row[5]),
            "visits": int(row[6]), "screening_visits": int(row[7]),
        })
    return out


def write_summary_csv(path: str, rows: Sequence[SummaryRow]) -> None:
    table = []
    for s in rows:
        p25, p50, p75, p90 = s.final_fbg_percentiles
        table.append((s.policy_kind, _capacity_pct(s.capacity_fraction),
                      s.ppc_mean, s.ppc_ci_halfwidth, p25, p50, p75, p90))
    table.sort(key=lambda row: (row[0], row[1]))
    write_table(path, SUMMARY_COLUMNS, table)


def read_summary_csv(path: str) -> List[dict]:
    rows = _read_csv(path, SUMMARY_COLUMNS)
    out = []
    for row in rows:
        out.append({
            "policy": row[0], "capacity_pct": float(row[1]),
            "ppc_mean": float(row[2]), "ppc_ci_halfwidth": float(row[3]),
            "final_fbg_p25": float(row[4]), "final_fbg_p50": float(row[5]),
            "final_fbg_p75": float(row[6]), "final_fbg_p90": float(row[7]),
        })
    return out


def write_estimates_csv(path: str, estimates: Sequence[Tuple[str, EstimationResult]]) -> None:
    rows = []
    for pid, est in estimates:
        pp = est.params
        rows.append((pid, est.nll, pp.p, pp.mu, pp.alpha, pp.theta_base,
                     pp.lam, pp.s_base, pp.beta, pp.gamma, pp.rho))
    write_table(path, ESTIMATE_COLUMNS, rows)


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

def _group_to_dict(group: GroupSpec, weight: float) -> dict:
    return {
        "name": group.name,
        "weight": weight,
        "centroid": dict(zip(FEATURE_COLUMNS, group.centroid)),
        "sd": dict(zip(FEATURE_COLUMNS, group.sd)),
    }


def scenario_to_dict(spec: ScenarioSpec) -> dict:
    return {
        "name": spec.name,
        "population": spec.population,
        "gamma": spec.gamma,
        "rho": spec.rho,
        "initial_fbg_mean_mgdl": spec.initial_fbg_mean_mgdl,
        "initial_fbg_sd_mgdl": spec.initial_fbg_sd_mgdl,
        "groups": [_group_to_dict(g, w) for g, w in spec.groups],
    }


def _parse_feature_map(entry: dict, key: str, where: str) -> Tuple[float, ...]:
    mapping = entry.get(key)
    if not isinstance(mapping, dict):
        raise ValueError(f"{where}: {key} must be a mapping of the 7 parameters")
    missing = [c for c in FEATURE_COLUMNS if c not in mapping]
    if missing:
        raise ValueError(f"{where}: {key} missing {', '.join(missing)}")
    return tuple(float(mapping[c]) for c in FEATURE_COLUMNS)


def scenario_from_dict(data: dict, where: str = "scenario") -> ScenarioSpec:
    """Build a ScenarioSpec from the documented JSON schema.

    Schema: {"name": str, "population": int, "gamma": float, "rho": float,
    "initial_fbg_mean_mgdl": float, "initial_fbg_sd_mgdl": float,
    "groups": [{"name": str, "weight": float,
                "centroid": {p, mu, alpha, theta_base, lam, s_base, beta},
                "sd": {... same keys ...}  (optional)}, ...]}.
    Omitted group sd falls back to the shared 10%-of-mean rule. Top-level
    keys other than name/groups are optional and take ScenarioSpec's
    defaults.
    """
    if not isinstance(data, dict):
        raise ValueError(f"{where}: expected a JSON object")
    groups_raw = data.get("groups")
    if not isinstance(groups_raw, list) or not groups_raw:
        raise ValueError(f"{where}: groups must be a nonempty list")
    centroids = []
    for i, entry in enumerate(groups_raw):
        centroids.append(_parse_feature_map(entry, "centroid", f"{where} group {i}"))
    default_sd = default_sds(centroids)
    groups = []
    for i, entry in enumerate(groups_raw):
        gwhere = f"{where} group {i}"
        name = entry.get("name")
        if not name:
            raise ValueError(f"{gwhere}: missing name")
        if "weight" not in entry:
            raise ValueError(f"{gwhere}: missing weight")
        sd = (_parse_feature_map(entry, "sd", gwhere) if "sd" in entry
              else default_sd)
        groups.append((GroupSpec(str(name), centroids[i], sd),
                       float(entry["weight"])))
    kwargs = {}
    for key in ("population", "gamma", "rho", "initial_fbg_mean_mgdl",
                "initial_fbg_sd_mgdl"):
        if key in data:
            kwargs[key] = data[key]
    return ScenarioSpec(str(data.get("name", "custom")), tuple(groups), **kwargs)


def load_scenario(name_or_path: str) -> Tuple[ScenarioSpec, Optional[str]]:
    """Resolve a --scenario argument: builtin name first, then file path.

    Returns (spec, path) where path is None for builtins, so callers know
    whether there is an input file to digest into the manifest.
    """
    builtins = {s.name: s for s in builtin_scenarios()}
    if name_or_path in builtins:
        return builtins[name_or_path], None
    if not os.path.exists(name_or_path):
        raise ValueError(
            f"unknown scenario {name_or_path!r}: not a builtin"
            f" ({', '.join(sorted(builtins))}) and not a readable file"
        )
    with open(name_or_path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{name_or_path}: invalid JSON ({exc})")
    return scenario_from_dict(data, where=name_or_path), name_or_path


# ---------------------------------------------------------------------------
# run manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunManifest:
    """What produced an output directory, in enough detail to redo it."""

    tool_version: str
    command: str
    config: dict
    base_seed: int
    input_digests: Dict[str, str]
    outputs: Tuple[str, ...]
    duration_seconds: float


def write_manifest(directory: str, manifest: RunManifest) -> str:
    path = os.path.join(directory, MANIFEST_NAME)
    payload = {
        "tool_version": manifest.tool_version,
        "command": manifest.command,
        "config": manifest.config,
        "base_seed": manifest.base_seed,
        "input_digests": manifest.input_digests,
        "outputs": list(manifest.outputs),
        "duration_seconds": manifest.duration_seconds,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_manifest(directory: str) -> dict:
    path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(path):
        raise ValueError(f"{directory}: no {MANIFEST_NAME} found")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def make_manifest(command: str, config: dict, base_seed: int,
                  input_paths: Sequence[str], outputs: Sequence[str],
                  duration_seconds: float) -> RunManifest:
    return RunManifest(
        tool_version=__version__,
        command=command,
        config=config,
        base_seed=base_seed,
        input_digests={p: sha256_file(p) for p in input_paths},
        outputs=tuple(outputs),
        duration_seconds=round(duration_seconds, 3),
    )
