"""Target-guided conversation engine grounded on a commonsense knowledge graph."""

__version__ = "0.1.0"
