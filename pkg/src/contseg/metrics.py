"""Dice evaluation and report emission (CSV, text table, SVG plot).

A report carries per-class Dice scores for one model at one learning step
plus the class-group means the tables are organized around.  Reports from
several steps combine into a trajectory table whose columns are
(group, step) pairs, one column per step at or after the group's
introduction, and into group-mean-vs-step line charts.
"""

from __future__ import annotations

import csv
import io
import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine
from .errors import ConsistencyError, FormatError
from .phantoms import Sample


def dice(pred: np.ndarray, gt: np.ndarray) -> float:
    """Sorensen-Dice overlap 2|A.B| / (|A| + |B|); 1.0 when both empty."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    a = int(np.count_nonzero(pred))
    b = int(np.count_nonzero(gt))
    if a + b == 0:
        return 1.0
    inter = int(np.count_nonzero(np.logical_and(pred, gt)))
    return 2.0 * inter / (a + b)


def group_mean(per_class: dict[int, float], group: list[int]) -> float:
    missing = [c for c in group if c not in per_class]
    if missing:
        raise KeyError(f"classes {missing} missing from the report")
    return float(np.mean([per_class[c] for c in group]))


@dataclass
class DiceReport:
    method: str
    step: int
    mode: str
    n_samples: int
    per_class: dict[int, float]
    class_names: dict[int, str]
    group_members: dict[str, list[int]]
    groups: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, members in self.group_members.items():
            if name not in self.groups:
                self.groups[name] = group_mean(self.per_class, members)

    def group_of(self, cid: int) -> str:
        for name, members in self.group_members.items():
            if cid in members:
                return name
        return "ungrouped"

    def rows(self) -> list[dict]:
        """CSV rows: one per class, then one mean row per group."""
        out = [{"method": self.method, "step": self.step,
                "group": self.group_of(cid),
                "class": self.class_names.get(cid, str(cid)),
                "dsc": self.per_class[cid]}
               for cid in sorted(self.per_class)]
        out += [{"method": self.method, "step": self.step, "group": name,
                 "class": "mean", "dsc": self.groups[name]}
                for name in self.group_members]
        return out


def evaluate_model(model, eval_set: list[Sample],
                   groups: dict[str, list[int]],
                   mode: str = "multilabel", threshold: float = 0.5,
                   method: str = "ours",
                   step: int | None = None) -> DiceReport:
    """Per-class Dice averaged over a fully annotated evaluation set.

    Only classes the model has accumulated so far are scored; groups whose
    classes are not all registered yet are dropped from the report.
    """
    cids = model.registry.ids()
    for sample in eval_set:
        missing = [c for c in cids if c not in sample.mask.planes]
        if missing:
            raise ConsistencyError(
                f"evaluation sample {sample.sample_id} lacks planes for "
                f"classes {missing}")
    sums = {c: 0.0 for c in cids}
    for sample in eval_set:
        if mode == "exclusive":
            labels = engine.predict(model, sample.volume, mode="exclusive",
                                    threshold=threshold)
            planes = {c: (labels == c).astype(np.uint8) for c in cids}
        else:
            planes = engine.predict(model, sample.volume, mode="multilabel",
                                    threshold=threshold)
        for c in cids:
            sums[c] += dice(planes[c], sample.mask.planes[c])
    per_class = {c: sums[c] / len(eval_set) for c in cids}
    present = {name: members for name, members in groups.items()
               if all(c in per_class for c in members)}
    return DiceReport(
        method=method,
        step=model.stage_index if step is None else step,
        mode=mode, n_samples=len(eval_set), per_class=per_class,
        class_names={c.id: c.name for c in model.registry.classes},
        group_members=present)


def forgetting_deltas(reports: list[DiceReport],
                      group_steps: dict[str, int]) -> dict[tuple[str, int], float]:
    """(group, step) -> group mean at `step` minus at its introduction step."""
    by_step: dict[tuple[str, int], float] = {}
    for r in reports:
        for g, v in r.groups.items():
            by_step[(g, r.step)] = v
    out = {}
    for (g, step), v in by_step.items():
        intro = group_steps.get(g)
        if intro is not None and step > intro and (g, intro) in by_step:
            out[(g, step)] = v - by_step[(g, intro)]
    return out


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("method", "step", "group", "class", "dsc")


def write_report_csv(reports: list[DiceReport], path,
                     header_comment: str | None = None) -> None:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for report in reports:
        for row in report.rows():
            row = dict(row)
            row["dsc"] = f"{row['dsc']:.6f}"
            writer.writerow(row)
    Path(path).write_text(buf.getvalue())


def load_report_csv(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines()
             if not ln.startswith("#")]
    rows = list(csv.DictReader(io.StringIO("\n".join(lines) + "\n")))
    for row in rows:
        if set(row) != set(CSV_COLUMNS):
            raise FormatError(f"unexpected CSV columns {sorted(row)}")
        row["step"] = int(row["step"])
        row["dsc"] = float(row["dsc"])
    return rows


def render_table(reports: list[DiceReport],
                 group_steps: dict[str, int] | None = None) -> str:
    """Text table with one (group, step) column per step at or after the
    group's introduction, one row per method."""
    steps = sorted({r.step for r in reports})
    groups: list[str] = []
    for r in reports:
        for g in r.group_members:
            if g not in groups:
                groups.append(g)
    if group_steps is None:
        group_steps = {g: min(r.step for r in reports if g in r.groups)
                       for g in groups}
    columns = [(g, s) for g in groups for s in steps if s >= group_steps.get(g, s)]
    methods: list[str] = []
    for r in reports:
        if r.method not in methods:
            methods.append(r.method)
    cells = {(r.method, g, r.step): v
             for r in reports for g, v in r.groups.items()}

    width = 12
    header1 = "method".ljust(10) + "".join(
        f"{g}".center(width) for g, _ in columns)
    header2 = " " * 10 + "".join(
        f"step {s}".center(width) for _, s in columns)
    lines = [header1, header2, "-" * (10 + width * len(columns))]
    for m in methods:
        row = m.ljust(10)
        for g, s in columns:
            v = cells.get((m, g, s))
            row += (f"{v:.3f}".center(width) if v is not None
                    else "-".center(width))
        lines.append(row)
    deltas = forgetting_deltas(reports, group_steps)
    if deltas:
        lines.append("")
        lines.append("forgetting (group mean minus value at introduction):")
        for (g, s), d in sorted(deltas.items()):
            lines.append(f"  {g} @ step {s}: {d:+.3f}")
    return "\n".join(lines) + "\n"


def render_plot_svg(reports: list[DiceReport]) -> str:
    """Group-mean-vs-step line chart as a standalone SVG.

    The data series are embedded verbatim in a <desc> element so the chart
    is machine-readable by parse_plot_svg.
    """
    series: dict[str, list[tuple[int, float]]] = {}
    for r in sorted(reports, key=lambda r: r.step):
        for g, v in r.groups.items():
            series.setdefault(f"{r.method}:{g}", []).append((r.step, v))
    w, h, pad = 480, 320, 40
    steps = sorted({s for pts in series.values() for s, _ in pts}) or [1]
    smin, smax = min(steps), max(steps)

    def sx(s):
        return pad + (w - 2 * pad) * ((s - smin) / max(1, smax - smin))

    def sy(v):
        return h - pad - (h - 2 * pad) * v

    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
               "#8c564b", "#17becf", "#7f7f7f"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
        f"<desc>{json.dumps({k: v for k, v in sorted(series.items())}, sort_keys=True)}</desc>",
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>',
    ]
    for tick in (0.0, 0.5, 1.0):
        parts.append(f'<text x="4" y="{sy(tick):.1f}" font-size="10">{tick:.1f}</text>')
    for s in steps:
        parts.append(f'<text x="{sx(s):.1f}" y="{h - pad + 14}" '
                     f'font-size="10">step {s}</text>')
    for i, (name, pts) in enumerate(sorted(series.items())):
        color = palette[i % len(palette)]
        coords = " ".join(f"{sx(s):.1f},{sy(v):.1f}" for s, v in pts)
        parts.append(f'<polyline points="{coords}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{w - pad + 2}" y="{pad + 12 * i + 10}" '
                     f'font-size="9" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def parse_plot_svg(source: str | Path) -> dict[str, list[tuple[int, float]]]:
    """Recovers the data series embedded by render_plot_svg."""
    text = Path(source).read_text() if isinstance(source, Path) else source
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise FormatError(f"not parseable SVG: {exc}") from exc
    desc = root.find("{http://www.w3.org/2000/svg}desc")
    if desc is None or not desc.text:
        raise FormatError("SVG carries no embedded data series")
    raw = json.loads(desc.text)
    return {k: [(int(s), float(v)) for s, v in pts] for k, pts in raw.items()}


def emit_report(reports: list[DiceReport] | DiceReport, out_dir,
                formats: set[str] = frozenset({"csv", "table", "plot"}),
                group_steps: dict[str, int] | None = None,
                header_comment: str | None = None) -> dict[str, Path]:
    """Writes report.csv / report.txt / report.svg under out_dir."""
    if isinstance(reports, DiceReport):
        reports = [reports]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    if "csv" in formats:
        path = out_dir / "report.csv"
        write_report_csv(reports, path, header_comment=header_comment)
        written["csv"] = path
    if "table" in formats:
        path = out_dir / "report.txt"
        path.write_text(render_table(reports, group_steps))
        written["table"] = path
    if "plot" in formats:
        path = out_dir / "report.svg"
        path.write_text(render_plot_svg(reports))
        written["plot"] = path
    return written
