"""Deterministic report artifacts: JSON, CSV tables, and standalone SVG bar charts."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


def write_json(path: Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def write_confusion_csv(path: Path, confusion: np.ndarray, class_names: list[str]) -> None:
    header = ["true\\pred"] + class_names
    rows = [[name] + [int(v) for v in row] for name, row in zip(class_names, confusion)]
    write_csv(path, header, rows)


def write_history_csv(path: Path, history) -> None:
    """One row per epoch, four columns: losses then accuracies."""
    rows = [[h.train_loss, h.val_loss, h.train_acc, h.val_acc] for h in history]
    write_csv(path, ["train_loss", "val_loss", "train_acc", "val_acc"], rows)


def bar_chart_svg(
    path: Path,
    title: str,
    group_labels: list[str],
    series: dict[str, list[float]],
    y_label: str = "accuracy (%)",
) -> None:
    """Grouped bar chart as a self-contained SVG (no plotting dependency,
    byte-stable output)."""
    width, height = 640, 360
    margin_l, margin_b, margin_t = 60, 50, 40
    plot_w = width - margin_l - 20
    plot_h = height - margin_t - margin_b
    y_max = 100.0
    palette = ["#4878a8", "#e1812c", "#3a923a", "#c03d3e", "#9372b2"]

    n_groups = len(group_labels)
    n_series = max(len(series), 1)
    group_w = plot_w / max(n_groups, 1)
    bar_w = group_w * 0.8 / n_series

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="15" y="{margin_t + plot_h / 2:.1f}" font-size="11" '
        f'transform="rotate(-90 15 {margin_t + plot_h / 2:.1f})" text-anchor="middle">{y_label}</text>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = margin_t + plot_h * (1 - frac)
        parts.append(
            f'<line x1="{margin_l}" y1="{y:.1f}" x2="{margin_l + plot_w}" y2="{y:.1f}" '
            f'stroke="#dddddd"/>'
        )
        parts.append(
            f'<text x="{margin_l - 6}" y="{y + 4:.1f}" text-anchor="end" font-size="10">'
            f"{frac * y_max:.0f}</text>"
        )
    for si, (name, values) in enumerate(series.items()):
        color = palette[si % len(palette)]
        for gi, value in enumerate(values):
            h = plot_h * min(max(value, 0.0), y_max) / y_max
            x = margin_l + gi * group_w + group_w * 0.1 + si * bar_w
            y = margin_t + plot_h - h
            parts.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" height="{h:.1f}" '
                f'fill="{color}"><title>{name}: {value:.2f}</title></rect>'
            )
        lx = margin_l + plot_w - 150
        ly = margin_t + 14 * si
        parts.append(f'<rect x="{lx}" y="{ly}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{lx + 14}" y="{ly + 9}" font-size="10">{name}</text>')
    for gi, label in enumerate(group_labels):
        x = margin_l + gi * group_w + group_w / 2
        parts.append(
            f'<text x="{x:.1f}" y="{height - margin_b + 16}" text-anchor="middle" '
            f'font-size="10">{label}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
