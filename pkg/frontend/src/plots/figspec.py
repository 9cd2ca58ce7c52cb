"""Figure specifications: what to draw, from which inputs, to which files."""

from __future__ import annotations

from dataclasses import dataclass, field

KINDS = ("phase_diagram", "crossing", "collapse")


def normalize_kind(kind: str) -> str:
    """Map user-facing spellings (hyphens, case) onto canonical kind names."""
    canon = kind.strip().lower().replace("-", "_")
    if canon not in KINDS:
        raise ValueError(
            f"unknown figure kind {kind!r}; expected one of {', '.join(KINDS)}"
        )
    return canon


@dataclass(frozen=True)
class FigureSpec:
    """A single figure to render.

    ``kind`` selects the renderer, ``inputs`` are the data files or
    directories it consumes, and ``output`` is the stem (no extension) the
    figure is written to: both ``<output>.svg`` and ``<output>.png`` are
    produced.
    """

    kind: str
    inputs: tuple[str, ...]
    output: str
    xlabel: str = ""
    ylabel: str = ""
    title: str = ""
    options: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", normalize_kind(self.kind))
        if not self.inputs:
            raise ValueError("FigureSpec needs at least one input path")
        if not self.output:
            raise ValueError("FigureSpec needs a non-empty output stem")

    @property
    def svg_path(self) -> str:
        return self.output + ".svg"

    @property
    def png_path(self) -> str:
        return self.output + ".png"
