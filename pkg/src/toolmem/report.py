"""Report files: aligned text for people, JSON lines for programs."""

from __future__ import annotations

import json
import os
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, Sequence

from .harness import AblationRow, DescriptionSection, EvalReport, ScoreSection, SelectionSection
from .metrics import fmt
from .predictor import PredictionRecord


def _table(header: Sequence[str], rows: Iterable[Sequence[str]]) -> list[str]:
    rows = [list(map(str, r)) for r in rows]
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    line = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    return [line(header), line(["-" * w for w in widths])] + [line(r) for r in rows]


def _num(value: float | None) -> float | None:
    return None if value is None else round(value, 12)


def score_lines(sections: Sequence[ScoreSection]) -> list[str]:
    return _table(
        ["tool", "mode", "k", "n", "excluded", "mae", "rmse", "pearson"],
        [[s.tool_id, s.mode, "-" if s.k_infer is None else s.k_infer, s.n, s.excluded,
          fmt(s.mae), fmt(s.rmse), fmt(s.pearson)] for s in sections],
    )


def selection_lines(sections: Sequence[SelectionSection]) -> list[str]:
    return _table(
        ["tool_a", "tool_b", "mode", "n", "|D|", "pred_ties", "f1_lt", "f1_gt", "acc"],
        [[s.tool_a, s.tool_b, s.mode, s.n, s.d_size, s.ties, fmt(s.f1_lt), fmt(s.f1_gt), fmt(s.acc)]
         for s in sections],
    )


def ablation_lines(rows: Sequence[AblationRow]) -> list[str]:
    return _table(
        ["tool", "k", "n", "excluded", "mae", "rmse", "pearson"],
        [[r.tool_id, r.k, r.n, r.excluded, fmt(r.mae), fmt(r.rmse), fmt(r.pearson)] for r in rows],
    )


def description_lines(sections: Sequence[DescriptionSection]) -> list[str]:
    return _table(
        ["tool", "mode", "n", "excluded", "truncated", "alignment"],
        [[s.tool_id, s.mode, s.n, s.excluded, s.truncated, fmt(s.mean_alignment)] for s in sections],
    )


def render_text(report: EvalReport) -> str:
    out = [f"dataset: {report.dataset}", ""]
    if report.scores:
        out += ["score prediction", *score_lines(report.scores), ""]
    if report.selections:
        out += ["tool selection (unequal pairs)", *selection_lines(report.selections), ""]
    if report.ablations:
        out += ["top-k ablation", *ablation_lines(report.ablations), ""]
    if report.descriptions:
        out += ["description prediction", *description_lines(report.descriptions), ""]
    return "\n".join(out)


def render_records(report: EvalReport) -> str:
    recs = []
    for s in report.scores:
        recs.append({"kind": "score", "tool_id": s.tool_id, "mode": s.mode, "k_infer": s.k_infer,
                     "n": s.n, "excluded": s.excluded, "mae": _num(s.mae), "rmse": _num(s.rmse),
                     "pearson": _num(s.pearson)})
    for s in report.selections:
        recs.append({"kind": "selection", "tool_a": s.tool_a, "tool_b": s.tool_b, "mode": s.mode,
                     "n": s.n, "excluded": s.excluded, "d_size": s.d_size, "ties": s.ties,
                     "f1_lt": _num(s.f1_lt), "f1_gt": _num(s.f1_gt), "acc": _num(s.acc)})
    for r in report.ablations:
        recs.append({"kind": "ablation", "tool_id": r.tool_id, "k": r.k, "n": r.n, "excluded": r.excluded,
                     "mae": _num(r.mae), "rmse": _num(r.rmse), "pearson": _num(r.pearson)})
    for s in report.descriptions:
        recs.append({"kind": "description", "tool_id": s.tool_id, "mode": s.mode, "n": s.n,
                     "excluded": s.excluded, "truncated": s.truncated,
                     "mean_alignment": _num(s.mean_alignment)})
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in recs)


def prediction_records(preds: Sequence[PredictionRecord], errors: Sequence[dict]) -> str:
    rows = []
    for p in preds:
        d = asdict(p)
        d.pop("prompt")
        rows.append(d)
    rows.extend(errors)
    rows.sort(key=lambda r: (r["task_id"], r["tool_id"], "error" in r))
    return "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in rows)


def write_text(path: str | os.PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def write_report(report_dir: str | os.PathLike, report: EvalReport, stem: str = "report",
                 figures: bool = True) -> list[Path]:
    """Write ``<stem>.txt``, ``<stem>.jsonl`` and, optionally, PNG figures."""
    report_dir = Path(report_dir)
    written = [
        write_text(report_dir / f"{stem}.txt", render_text(report)),
        write_text(report_dir / f"{stem}.jsonl", render_records(report)),
    ]
    if figures:
        from .plots import render_figures

        written += render_figures(report, report_dir / "figures", stem)
    return written
