"""Multi-branch navigation agents on procedurally generated graph worlds."""

__version__ = "0.1.0"
