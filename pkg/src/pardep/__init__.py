"""Graph-based and transition-based dependency parsers that learn from
partially annotated treebanks."""

__version__ = "0.1.0"
