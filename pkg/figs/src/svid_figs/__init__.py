"""Figure regeneration for setvalued-id experiment logs."""

from .render import KINDS, FigureSpec, RenderResult, SchemaError, render

__version__ = "0.1.0"
