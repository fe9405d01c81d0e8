"""Figure rendering for switched-lqr-lab CSV outputs."""

from .figures import FigureSpec, render

__version__ = "0.1.0"
