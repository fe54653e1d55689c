"""Confusion matrix renderings of an EvalReport: CSV table, PPM and SVG heat-maps."""

import csv
import json
import logging
import os

import numpy as np
import svgwrite

from .classify import EvalReport
from .utils import atomic_write, hex_to_rgb, interpolate_color

log = logging.getLogger(__name__)

LOW_COLOR = "#222222"
HIGH_COLOR = "#4DD2FF"
TEXT_COLOR = "#FFFFFF"
CELL = 16


def _ratios(confusion: np.ndarray) -> np.ndarray:
    """Row-normalized confusion, zero rows stay zero."""
    confusion = np.asarray(confusion, dtype=float)
    totals = confusion.sum(axis=1, keepdims=True)
    return np.divide(confusion, totals, out=np.zeros_like(confusion), where=totals > 0)


def cell_colors(confusion: np.ndarray, low: str = LOW_COLOR, high: str = HIGH_COLOR):
    return [[interpolate_color(low, high, r) for r in row] for row in _ratios(confusion)]


def write_confusion_csv(path: str, report: EvalReport):
    """Rows are true classes, columns predicted; first row and column hold the labels."""
    with atomic_write(path, "w") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow([""] + list(report.classes))
        for label, row in zip(report.classes, report.confusion):
            writer.writerow([label] + [int(v) for v in row])


def read_confusion_csv(path: str):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    classes = rows[0][1:]
    confusion = np.array([[int(v) for v in row[1:]] for row in rows[1:]], dtype=int)
    return classes, confusion


def write_confusion_ppm(path: str, report: EvalReport, cell: int = CELL):
    """Binary P6 image of (classes * cell) pixels per side."""
    n = len(report.classes)
    colors = cell_colors(report.confusion)
    rgb = np.array([[hex_to_rgb(c) for c in row] for row in colors], dtype=np.uint8).reshape(n, n, 3)
    pixels = np.repeat(np.repeat(rgb, cell, axis=0), cell, axis=1)
    size = n * cell
    with atomic_write(path) as f:
        f.write(f"P6\n{size} {size}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def write_confusion_svg(path: str, report: EvalReport, cell: int = CELL):
    n = len(report.classes)
    margin = cell * 6
    size = margin + n * cell
    d = svgwrite.Drawing(path, (f"{size}px", f"{size}px"))
    d.viewbox(0, 0, size, size)
    d.add(d.rect((0, 0), (size, size), fill=LOW_COLOR))
    style = f"font-size:{cell * 0.5}px; font-family:Arial;"
    for i, label in enumerate(report.classes):
        y = margin + i * cell + cell / 2
        d.add(d.text(label, insert=(2, y), fill=TEXT_COLOR, alignment_baseline="middle", style=style))
        x = margin + i * cell + cell / 2
        d.add(
            d.text(
                label,
                insert=(x, margin - 2),
                fill=TEXT_COLOR,
                transform=f"rotate(-90 {x} {margin - 2})",
                alignment_baseline="middle",
                style=style,
            )
        )
    colors = cell_colors(report.confusion)
    for i, true_label in enumerate(report.classes):
        for j, predicted in enumerate(report.classes):
            rect = d.rect((margin + j * cell, margin + i * cell), (cell, cell), fill=colors[i][j])
            rect.set_desc(title=f"{true_label} -> {predicted}: {int(report.confusion[i][j])}")
            d.add(rect)
    d.save()


def write_report_json(path: str, report: EvalReport):
    with atomic_write(path, "w") as f:
        json.dump(report.to_dict(), f, indent=2)


def write_all(out_dir: str, report: EvalReport):
    """confusion.csv, confusion.ppm, confusion.svg and report.json under out_dir."""
    paths = {
        "csv": os.path.join(out_dir, "confusion.csv"),
        "ppm": os.path.join(out_dir, "confusion.ppm"),
        "svg": os.path.join(out_dir, "confusion.svg"),
        "json": os.path.join(out_dir, "report.json"),
    }
    os.makedirs(out_dir, exist_ok=True)
    write_confusion_csv(paths["csv"], report)
    write_confusion_ppm(paths["ppm"], report)
    write_confusion_svg(paths["svg"], report)
    write_report_json(paths["json"], report)
    log.info(f"Wrote evaluation report to {out_dir}")
    return paths
