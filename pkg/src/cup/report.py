"""Summary table and SVG chart built from a run directory.

Everything here reads the output directory and writes ``summary.md`` and
``summary.svg``; nothing else in the directory changes.
"""

from __future__ import annotations

import json
from pathlib import Path
from xml.sax.saxutils import escape

from .errors import CupError
from .judging import TABLE_CAPTION, accessibility, ecology, fmt, method_label, overall, QualScore, QuantScores
from .plan_model import Region
from .planning import baseline_rng, random_baseline_plan

SERIES = (("accessibility", "Access.", "#1f77b4"), ("ecology", "Ecology", "#2ca02c"), ("experience", "Experi.", "#d62728"))


class EmptyRunDirectory(CupError):
    module = "cli"


def _reports(out: Path) -> list[dict]:
    reports = []
    k = 1
    while (out / f"report_{k}.json").exists():
        reports.append(json.loads((out / f"report_{k}.json").read_text()))
        k += 1
    return reports


def baseline_row(out: Path) -> dict:
    stored = json.loads((out / "config.json").read_text())["config"]
    region = Region.from_dict(json.loads((out / "region.json").read_text()))
    plan = random_baseline_plan(region, baseline_rng(stored["seed"]))
    quant = QuantScores(
        accessibility(plan, region, stored.get("radius", 500.0)),
        ecology(plan, region, stored.get("ecology_by", "size")),
    )
    row = {"accessibility": quant.accessibility, "ecology": quant.ecology, "experience": None, "overall": None}
    day = out / "report_baseline.json"
    if day.exists():
        qual = QualScore.from_dict(json.loads(day.read_text())["qual"])
        row["experience"] = qual.experience
        row["overall"] = overall(quant, qual, stored.get("overall_mode", "three_way"))
    return row


def summary_rows(out: Path) -> list[tuple[str, dict]]:
    reports = _reports(out)
    if not reports:
        raise EmptyRunDirectory(f"{out} holds no iteration reports")
    rows = [("Random", baseline_row(out))]
    for r in reports:
        rows.append(
            (
                method_label(r["iteration"]),
                {
                    "accessibility": r["quant"]["accessibility"],
                    "ecology": r["quant"]["ecology"],
                    "experience": r["qual"]["experience"],
                    "overall": r["overall"],
                },
            )
        )
    return rows


def render_table(rows: list[tuple[str, dict]]) -> str:
    lines = [
        TABLE_CAPTION,
        "",
        "| Method | Access. | Ecology | Experi. | Overall |",
        "|---|---:|---:|---:|---:|",
    ]
    for label, v in rows:
        lines.append(
            f"| {label} | {fmt(v['accessibility'])} | {fmt(v['ecology'])} | {fmt(v['experience'])} | {fmt(v['overall'])} |"
        )
    return "\n".join(lines) + "\n"


def render_svg(reports: list[dict], width: int = 640, height: int = 360) -> str:
    left, right, top, bottom = 56, 120, 24, 40
    plot_w, plot_h = width - left - right, height - top - bottom
    n = len(reports)

    def x_of(i: int) -> float:
        return left + (plot_w / 2 if n == 1 else plot_w * i / (n - 1))

    def y_of(v: float) -> float:
        return top + plot_h * (1 - v / 100)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    for v in range(0, 101, 20):
        y = y_of(v)
        parts.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + plot_w}" y2="{y:.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{left - 8}" y="{y + 4:.1f}" font-size="11" text-anchor="end">{v}</text>')
    for i, r in enumerate(reports):
        parts.append(
            f'<text x="{x_of(i):.1f}" y="{height - bottom + 18}" font-size="11" text-anchor="middle">'
            f'iter {r["iteration"]}</text>'
        )
    parts.append(
        f'<text x="14" y="{top + plot_h / 2:.1f}" font-size="11" transform="rotate(-90 14 {top + plot_h / 2:.1f})" '
        f'text-anchor="middle">%</text>'
    )
    for j, (key, label, color) in enumerate(SERIES):
        values = [r["quant"][key] if key in r["quant"] else r["qual"][key] for r in reports]
        pts = [(x_of(i), y_of(v)) for i, v in enumerate(values)]
        if len(pts) > 1:
            path = " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
            parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        for (x, y), v in zip(pts, values):
            parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3.5" fill="{color}"><title>{label} {v:.2f}</title></circle>')
        ly = top + 14 + 18 * j
        lx = left + plot_w + 16
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 24}" y="{ly}" font-size="11">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_summary(out_dir: str | Path) -> Path:
    out = Path(out_dir)
    rows = summary_rows(out)
    (out / "summary.md").write_text(render_table(rows) + "\n![metrics by iteration](summary.svg)\n", encoding="utf-8")
    (out / "summary.svg").write_text(render_svg(_reports(out)), encoding="utf-8")
    return out / "summary.md"
