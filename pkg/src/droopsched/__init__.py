"""Distribution-grid droop scheduling: power flow, stability gate, online scheduler."""

__version__ = "0.1.0"
