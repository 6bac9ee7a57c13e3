"""Conversational robot instruction understanding: sequence labeling,
grounding, clarification dialogue and task planning."""

__version__ = "0.1.0"
