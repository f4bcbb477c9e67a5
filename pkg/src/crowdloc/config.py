"""Flat key=value configuration files.

One `key = value` per line; `#` starts a comment. Values are parsed as
bool, int, float, a bracketed list of those, or a bare string. Keys are
dotted but the namespace stays flat; there is no nesting or interpolation.
"""

from __future__ import annotations

__all__ = ["parse_config", "load_config", "format_config", "save_config"]


def _parse_scalar(text):
    low = text.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _parse_value(text):
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [_parse_scalar(tok.strip()) for tok in inner.split(",")]
    return _parse_scalar(text)


def parse_config(text):
    """Parse config text into an ordered flat dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key] = _parse_value(value)
    return out


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _format_scalar(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg):
    lines = []
    for key, value in cfg.items():
        if isinstance(value, (list, tuple)):
            body = ", ".join(_format_scalar(v) for v in value)
            lines.append(f"{key} = [{body}]")
        else:
            lines.append(f"{key} = {_format_scalar(value)}")
    return "\n".join(lines) + "\n"


def save_config(path, cfg):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_config(cfg))
