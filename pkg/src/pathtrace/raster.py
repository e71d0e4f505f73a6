"""SVG to PNG conversion.

cairosvg is used when importable. Otherwise a small Pillow renderer handles
the element subset that ``render_svg`` emits (rect, polyline, polygon,
circle inside optional groups), drawing at 4x and downsampling.
"""

from __future__ import annotations

import io
import xml.etree.ElementTree as ET
from pathlib import Path

from PIL import Image, ImageColor, ImageDraw

from .errors import RasterBackendUnavailable, RasterError

SUPERSAMPLE = 4
_NS = "{http://www.w3.org/2000/svg}"


def _cairosvg():
    try:
        import cairosvg
    except (ImportError, OSError):
        return None
    return cairosvg


def available_backends():
    out = ["pillow"]
    if _cairosvg() is not None:
        out.insert(0, "cairosvg")
    return out


def _color(value):
    if value in (None, "none"):
        return None
    try:
        return ImageColor.getrgb(value)
    except ValueError as exc:
        raise RasterError(f"unsupported color {value!r}") from exc


def _points(text, k):
    vals = []
    for pair in text.split():
        x, y = pair.split(",")
        vals.append((float(x) * k, float(y) * k))
    return vals


def _render_pillow(root):
    try:
        w = int(float(root.get("width")))
        h = int(float(root.get("height")))
    except (TypeError, ValueError) as exc:
        raise RasterError("svg root lacks numeric width/height") from exc
    k = SUPERSAMPLE
    img = Image.new("RGB", (w * k, h * k), "white")
    draw = ImageDraw.Draw(img)
    for el in root.iter():
        tag = el.tag.replace(_NS, "")
        fill = _color(el.get("fill"))
        stroke = _color(el.get("stroke"))
        sw = float(el.get("stroke-width", "1")) * k
        try:
            if tag == "rect":
                x, y = float(el.get("x", 0)) * k, float(el.get("y", 0)) * k
                box = [x, y, x + float(el.get("width")) * k, y + float(el.get("height")) * k]
                draw.rectangle(box, fill=fill, outline=stroke, width=round(sw) if stroke else 0)
            elif tag == "polyline":
                pts = _points(el.get("points"), k)
                if stroke:
                    draw.line(pts, fill=stroke, width=max(1, round(sw)), joint="curve")
                    if el.get("stroke-linecap") == "round":
                        rad = sw / 2
                        for px, py in (pts[0], pts[-1]):
                            draw.ellipse([px - rad, py - rad, px + rad, py + rad], fill=stroke)
            elif tag == "polygon":
                pts = _points(el.get("points"), k)
                draw.polygon(pts, fill=fill, outline=stroke, width=max(1, round(sw)) if stroke else 0)
            elif tag == "circle":
                cx, cy, r = (float(el.get(a)) * k for a in ("cx", "cy", "r"))
                draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=fill, outline=stroke,
                             width=max(1, round(sw)) if stroke else 0)
        except (TypeError, ValueError) as exc:
            raise RasterError(f"malformed <{tag}> element: {exc}") from exc
    return img.resize((w, h), Image.Resampling.LANCZOS)


def rasterize(svg_text, out_path, backend="auto"):
    """Write a PNG rendering of ``svg_text`` to ``out_path``; returns the path."""
    try:
        root = ET.fromstring(svg_text.encode("utf-8") if isinstance(svg_text, str) else svg_text)
    except ET.ParseError as exc:
        raise RasterError(f"invalid SVG: {exc}") from exc
    if root.tag.replace(_NS, "") != "svg":
        raise RasterError("document root is not <svg>")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if backend in ("auto", "cairosvg"):
        cairosvg = _cairosvg()
        if cairosvg is not None:
            cairosvg.svg2png(bytestring=svg_text.encode("utf-8"), write_to=str(out_path))
            return out_path
        if backend == "cairosvg":
            raise RasterBackendUnavailable("cairosvg is not installed")
    elif backend != "pillow":
        raise RasterBackendUnavailable(f"unknown raster backend {backend!r}")
    img = _render_pillow(root)
    img.save(out_path, format="PNG", optimize=False)
    return out_path


def png_bytes(svg_text, backend="auto"):
    """PNG rendering as bytes (used for inline image payloads)."""
    root = ET.fromstring(svg_text)
    if backend in ("auto", "cairosvg") and _cairosvg() is not None:
        return _cairosvg().svg2png(bytestring=svg_text.encode("utf-8"))
    buf = io.BytesIO()
    _render_pillow(root).save(buf, format="PNG")
    return buf.getvalue()
