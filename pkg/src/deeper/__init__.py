"""Evidence-based generation engine for biomedical research questions."""

__version__ = "0.1.0"
