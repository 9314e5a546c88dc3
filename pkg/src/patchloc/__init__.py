"""Locate the commits that patch a CVE inside a git repository."""

__version__ = "0.1.0"
