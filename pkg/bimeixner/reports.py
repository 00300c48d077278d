"""Flattening of check reports into the run report and its JSON/CSV forms."""

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .qh_verify import MomentCheckReport, RegressionReport
from .randomization import AssumptionReport
from .transition_kernel import ChiSquareReport

CSV_FIELDS = ("name", "theory", "estimate", "std_error", "z", "pass")


def _number(value):
    """JSON-safe float: non-finite values become strings so they survive a round trip."""
    if value is None:
        return None
    value = float(value)
    if math.isfinite(value):
        return value
    if math.isnan(value):
        return "nan"
    return "inf" if value > 0 else "-inf"


def _row(name, theory, estimate, std_error, z, passed, **extra):
    row = {
        "name": name,
        "theory": _number(theory),
        "estimate": _number(estimate),
        "std_error": _number(std_error),
        "z": _number(z),
        "pass": bool(passed),
    }
    row.update({key: _number(value) for key, value in extra.items()})
    return row


def check_rows(report):
    """Rows of the ``checks`` table for any report object."""
    if isinstance(report, (list, tuple)):
        return [row for item in report for row in check_rows(item)]
    if isinstance(report, MomentCheckReport):
        return [_row(report.name, report.theory, report.estimate, report.std_error,
                     report.z_score, report.passed, threshold=report.threshold)]
    if isinstance(report, RegressionReport):
        rows = []
        errors = report.std_errors
        for j, feature in enumerate(report.feature_names):
            dropped = feature in report.dropped
            rows.append(_row(
                f"{report.name}[{feature}]", report.theory_coefficients[j],
                None if dropped else report.coefficients[j],
                None if dropped else errors[j],
                None if dropped else report.z_scores[j],
                dropped or abs(report.z_scores[j]) <= report.threshold,
                threshold=report.threshold,
            ))
        return rows
    if isinstance(report, ChiSquareReport):
        spread = math.sqrt(2.0 * report.dof)
        return [_row(f"chi2[{report.n} paths, {report.cells} cells]", report.dof,
                     report.statistic, spread, (report.statistic - report.dof) / spread,
                     report.passed, p_value=report.p_value, level=report.level)]
    if isinstance(report, AssumptionReport):
        log_threshold = math.log(report.threshold)
        return [
            _row(f"boundary[{status.condition}, x={status.support_point:g}, "
                 f"theta->{status.endpoint:g}]",
                 log_threshold, status.final_log_value, 0.0, None, status.passed)
            for status in report.endpoints
        ]
    raise TypeError(f"cannot flatten report of type {type(report).__name__}")


def _plain(value):
    if isinstance(value, dict):
        return {str(key): _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return [_plain(item) for item in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return _number(value)
    return value


@dataclass
class RunReport:
    command: str
    config: dict
    seed: int = None
    version: str = ""
    checks: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    wall_clock_seconds: float = None
    generated_at: str = None

    def add(self, report):
        self.checks.extend(check_rows(report))
        return self

    @property
    def passed(self):
        return all(row["pass"] for row in self.checks)

    def to_dict(self):
        payload = {
            "command": self.command,
            "config": _plain(self.config),
            "checks": self.checks,
            "pass": self.passed,
            "seed": self.seed,
            "version": self.version,
        }
        if self.results:
            payload["results"] = _plain(self.results)
        if self.wall_clock_seconds is not None:
            payload["wall_clock_seconds"] = self.wall_clock_seconds
            payload["generated_at"] = self.generated_at
        return payload

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self):
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=CSV_FIELDS, extrasaction="ignore",
                                lineterminator="\n")
        writer.writeheader()
        for row in self.checks:
            writer.writerow(row)
        return buffer.getvalue()

    def serialize(self, fmt="json"):
        if fmt == "csv":
            return self.to_csv()
        return self.to_json()

    @classmethod
    def from_dict(cls, payload):
        checks = [dict(row) for row in payload.get("checks", [])]
        return cls(
            command=payload.get("command", ""),
            config=payload.get("config", {}),
            seed=payload.get("seed"),
            version=payload.get("version", ""),
            checks=checks,
            results=payload.get("results", {}),
            wall_clock_seconds=payload.get("wall_clock_seconds"),
            generated_at=payload.get("generated_at"),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))
