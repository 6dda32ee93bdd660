"""Minimal SVG curve writer; keeps the CLI free of plotting dependencies."""

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def write_svg_curves(path, series, title="", width=640, height=360, margin=45):
    """Render named value sequences as polylines with a shared y scale.

    series: mapping of name -> list of floats (x is the index).
    """
    values = [v for seq in series.values() for v in seq]
    if not values:
        raise ValueError("no data to plot")
    y_min, y_max = min(values), max(values)
    if y_max == y_min:
        y_max = y_min + 1.0
    x_max = max(len(seq) - 1 for seq in series.values()) or 1
    inner_w = width - 2 * margin
    inner_h = height - 2 * margin

    def sx(i):
        return margin + inner_w * i / x_max

    def sy(v):
        return height - margin - inner_h * (v - y_min) / (y_max - y_min)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>',
        f'<text x="{margin - 5}" y="{height - margin}" text-anchor="end" '
        f'font-size="10">{y_min:.3f}</text>',
        f'<text x="{margin - 5}" y="{margin + 4}" text-anchor="end" '
        f'font-size="10">{y_max:.3f}</text>',
    ]
    for k, (name, seq) in enumerate(series.items()):
        color = COLORS[k % len(COLORS)]
        pts = " ".join(f"{sx(i):.2f},{sy(v):.2f}" for i, v in enumerate(seq))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 14 * k + 10}" font-size="10" '
            f'fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
