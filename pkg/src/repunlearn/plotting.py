"""Static SVG figures: 2-D representation scatters and sweep heatmaps."""

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _fmt(v):
    return f"{v:.2f}"


def representation_svg(z, labels, forget_classes=(), title="", size=480, margin=40):
    """Scatter of 2-D points coloured by class; forget classes drawn as crosses."""
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    if z.ndim != 2 or z.shape[1] != 2:
        raise ValueError(f"need 2-d representations, got shape {z.shape}")
    if len(z) == 0:
        raise ValueError("nothing to plot")
    lo, hi = z.min(axis=0), z.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    inner = size - 2 * margin
    px = margin + (z[:, 0] - lo[0]) / span[0] * inner
    py = size - margin - (z[:, 1] - lo[1]) / span[1] * inner
    forget = set(int(c) for c in forget_classes)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size + 120}" height="{size}" '
           f'viewBox="0 0 {size + 120} {size}">',
           f'<rect width="{size + 120}" height="{size}" fill="white"/>',
           f'<text x="{size // 2}" y="20" text-anchor="middle" font-size="14">'
           f'{escape(title)}</text>']
    classes = sorted(int(c) for c in np.unique(labels))
    for c in classes:
        col = PALETTE[c % len(PALETTE)]
        for x, y in zip(px[labels == c], py[labels == c]):
            if c in forget:
                out.append(f'<path d="M{_fmt(x - 3)},{_fmt(y - 3)}L{_fmt(x + 3)},{_fmt(y + 3)}'
                           f'M{_fmt(x - 3)},{_fmt(y + 3)}L{_fmt(x + 3)},{_fmt(y - 3)}" '
                           f'stroke="{col}" stroke-width="1.2"/>')
            else:
                out.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="2" fill="{col}" '
                           f'fill-opacity="0.6"/>')
    for i, c in enumerate(classes):
        y = margin + 18 * i
        col = PALETTE[c % len(PALETTE)]
        tag = " (forget)" if c in forget else ""
        out.append(f'<circle cx="{size + 10}" cy="{y}" r="4" fill="{col}"/>')
        out.append(f'<text x="{size + 20}" y="{y + 4}" font-size="11">class {c}{tag}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap_svg(values, row_labels, col_labels, title="", cell=60):
    """Grey-scale heatmap of a 2-D array with numeric annotations."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2 or v.shape != (len(row_labels), len(col_labels)) or v.size == 0:
        raise ValueError("values must be a non-empty rows x cols array matching the labels")
    lo, hi = np.nanmin(v), np.nanmax(v)
    span = hi - lo if hi > lo else 1.0
    left, top = 80, 40
    w = left + cell * v.shape[1] + 20
    h = top + cell * v.shape[0] + 40
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
           f'<rect width="{w}" height="{h}" fill="white"/>',
           f'<text x="{w // 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>']
    for i, r in enumerate(row_labels):
        out.append(f'<text x="{left - 6}" y="{top + cell * i + cell // 2 + 4}" '
                   f'text-anchor="end" font-size="11">{escape(str(r))}</text>')
        for j in range(v.shape[1]):
            g = 255 - int(round(200 * (v[i, j] - lo) / span)) if np.isfinite(v[i, j]) else 255
            out.append(f'<rect x="{left + cell * j}" y="{top + cell * i}" width="{cell}" '
                       f'height="{cell}" fill="rgb({g},{g},{g})" stroke="black"/>')
            out.append(f'<text x="{left + cell * j + cell // 2}" y="{top + cell * i + cell // 2 + 4}" '
                       f'text-anchor="middle" font-size="10" fill="{"white" if g < 128 else "black"}">'
                       f'{v[i, j]:.3g}</text>')
    for j, c in enumerate(col_labels):
        out.append(f'<text x="{left + cell * j + cell // 2}" y="{top + cell * v.shape[0] + 16}" '
                   f'text-anchor="middle" font-size="11">{escape(str(c))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
