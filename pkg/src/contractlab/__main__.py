"""Allow running contractlab as a module: python -m contractlab."""

from .cli import app

app()
