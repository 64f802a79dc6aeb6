from __future__ import annotations

import logging
import re
from pathlib import Path
from xml.sax.saxutils import escape

from .evaluation import AblationReport

LOGGER = logging.getLogger(__name__)

SERIES = (("precision", "#1f77b4"), ("recall", "#ff7f0e"))
_UNSAFE = re.compile(r"[^A-Za-z0-9._-]+")


def _svg_grouped_bars(title: str, subtitle: str, groups: list[tuple[str, dict[str, float]]], width: int = 800, height: int = 420) -> str:
    left, right, top, bottom = 70, 30, 80, 70
    plot_w = width - left - right
    plot_h = height - top - bottom
    origin_x, origin_y = left, top + plot_h
    group_w = plot_w / max(1, len(groups))
    bar_w = group_w * 0.7 / len(SERIES)

    svg = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<style>.title{font: bold 18px sans-serif;} .label{font: 12px sans-serif;}</style>',
        '<rect width="100%" height="100%" fill="#ffffff"/>',
        f'<text class="title" x="{width / 2:.1f}" y="30" text-anchor="middle">{escape(title)}</text>',
        f'<text class="label" x="{width / 2:.1f}" y="52" text-anchor="middle">{escape(subtitle)}</text>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = origin_y - tick * plot_h
        svg.append(f'<line x1="{origin_x}" y1="{y:.2f}" x2="{origin_x + plot_w}" y2="{y:.2f}" stroke="#dddddd" stroke-width="1"/>')
        svg.append(f'<text class="label" x="{origin_x - 8}" y="{y + 4:.2f}" text-anchor="end">{tick:.2f}</text>')
    svg.append(f'<line x1="{origin_x}" y1="{origin_y}" x2="{origin_x}" y2="{top}" stroke="#333333" stroke-width="2"/>')
    svg.append(f'<line x1="{origin_x}" y1="{origin_y}" x2="{origin_x + plot_w}" y2="{origin_y}" stroke="#333333" stroke-width="2"/>')

    for g, (label, values) in enumerate(groups):
        gx = origin_x + g * group_w + group_w * 0.15
        svg.append(f'<g class="group" id="group-{g}">')
        for s, (series, color) in enumerate(SERIES):
            value = min(1.0, max(0.0, values.get(series, 0.0)))
            bar_h = value * plot_h
            x = gx + s * bar_w
            y = origin_y - bar_h
            svg.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{bar_w:.2f}" height="{bar_h:.2f}" fill="{color}"/>')
            svg.append(f'<text class="label" x="{x + bar_w / 2:.2f}" y="{y - 5:.2f}" text-anchor="middle">{value:.2f}</text>')
        svg.append(
            f'<text class="label" x="{gx + bar_w * len(SERIES) / 2:.2f}" y="{origin_y + 20}" text-anchor="middle">-{escape(label)}</text>'
        )
        svg.append("</g>")

    lx = origin_x + plot_w - 160
    for s, (series, color) in enumerate(SERIES):
        x = lx + s * 80
        svg.append(f'<rect x="{x}" y="{height - 30}" width="12" height="12" fill="{color}"/>')
        svg.append(f'<text class="label" x="{x + 16}" y="{height - 20}">{series}</text>')
    svg.append("</svg>")
    return "\n".join(svg) + "\n"


def emit_plots(reports: list[AblationReport], out_dir: Path) -> list[Path]:
    """One grouped precision/recall chart per primary model; one group per ablated family."""
    written: list[Path] = []
    for rep in reports:
        if not rep.rows:
            continue
        groups = [
            (row.family, {"precision": row.test_metrics.precision, "recall": row.test_metrics.recall})
            for row in rep.rows
        ]
        p, r, _ = rep.full_test.as_tuple()
        svg = _svg_grouped_bars(
            title=f"Ablation: EDCR on {rep.primary}",
            subtitle=f"test precision/recall after removing each family (full pool: P={p:.2f}, R={r:.2f})",
            groups=groups,
        )
        path = out_dir / f"{_UNSAFE.sub('_', rep.primary)}.svg"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(svg, encoding="utf-8")
        written.append(path)
    LOGGER.info("Wrote %s ablation charts to %s", len(written), out_dir)
    return written
